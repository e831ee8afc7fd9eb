use rand::Rng;

use super::params::{GradMap, ParamSet};
use crate::error::{arg_err, Error, Result};
use crate::rng::rng_for;

/// Largest `|analytic − central difference| / max(1, |central difference|)`
/// over `samples` coordinates drawn from the trainable entries of `params`.
///
/// `f` returns the scalar value and its analytic gradient map.
pub fn gradcheck<F>(mut f: F, params: &ParamSet, eps: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, GradMap)>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(arg_err!("gradcheck step must be positive, got {eps}"));
    }
    let coords: Vec<(String, usize)> = params
        .iter()
        .filter(|(_, e)| e.trainable)
        .flat_map(|(n, e)| (0..e.tensor.len()).map(move |i| (n.to_string(), i)))
        .collect();
    if coords.is_empty() {
        return Err(arg_err!("no trainable coordinates to check"));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric("gradcheck: non-finite function value".into()));
    }
    let mut rng = rng_for(seed, "gradcheck", 0);
    let picks: Vec<usize> = if samples >= coords.len() {
        (0..coords.len()).collect()
    } else {
        (0..samples).map(|_| rng.random_range(0..coords.len())).collect()
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for k in picks {
        let (name, i) = &coords[k];
        let orig = params.get(name)?.data()[*i];
        let mut eval_at = |x: f64| -> Result<f64> {
            probe.get_mut(name)?.data_mut()[*i] = x;
            let (v, _) = f(&probe)?;
            Ok(v)
        };
        let plus = eval_at(orig + eps)?;
        let minus = eval_at(orig - eps)?;
        probe.get_mut(name)?.data_mut()[*i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let an = analytic.get(name).map_or(0.0, |g| g.data()[*i]);
        if !fd.is_finite() || !an.is_finite() {
            return Err(Error::Numeric(format!("gradcheck: non-finite derivative at {name}[{i}]")));
        }
        worst = worst.max((an - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
