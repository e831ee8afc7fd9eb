use std::collections::BTreeMap;

use super::arch::DecoderArch;
use super::init::{kaiming_uniform, xavier_uniform};
use crate::diffcore::{Bindings, ParamSet, Tape, Tensor, Var};
use crate::error::{arg_err, dim_err, Result};
use crate::rng::rng_for;
use crate::Point;

/// Points per tape when evaluating without gradients.
const EVAL_CHUNK: usize = 4096;

/// SDF decoder: an MLP on `(z, x)` with relu hidden layers, the code and
/// point re-injected at the skip layer, and a tanh output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub arch: DecoderArch,
    pub params: ParamSet,
}

fn w_name(i: usize) -> String {
    format!("l{i}/w")
}

fn b_name(i: usize) -> String {
    format!("l{i}/b")
}

impl Decoder {
    pub fn expected_shapes(arch: &DecoderArch) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        for i in 0..arch.layers {
            let (o, inp) = layer_dims(arch, i);
            out.insert(w_name(i), vec![o, inp]);
            out.insert(b_name(i), vec![o]);
        }
        out
    }

    pub fn init(arch: &DecoderArch, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init-decoder", 0);
        let mut params = ParamSet::new();
        for i in 0..arch.layers {
            let (o, inp) = layer_dims(arch, i);
            let w = if i + 1 == arch.layers {
                xavier_uniform(o, inp, &mut rng)
            } else {
                kaiming_uniform(o, inp, &mut rng)
            };
            params.insert(w_name(i), w, true).expect("fresh names");
            params.insert(b_name(i), Tensor::zeros(&[o]), true).expect("fresh names");
        }
        Self {
            arch: arch.clone(),
            params,
        }
    }

    /// Predicted field `[n]` at `x[n × 3]` for one code `z[code_dim]`.
    pub fn forward(&self, tape: &mut Tape, b: &Bindings, z: Var, x: Var) -> Result<Var> {
        self.check_inputs(tape, &[z], x)?;
        self.run(tape, b, 0..self.arch.layers, None, z, x)
    }

    /// Field of several codes fused after `split` layers: each code runs
    /// through the first `split` layers separately, the feature rows are
    /// combined by elementwise max, and the rest of the network runs once.
    /// If the skip layer lies after the split, its code input is the
    /// elementwise max of the codes.
    pub fn forward_fused(&self, tape: &mut Tape, b: &Bindings, zs: &[Var], x: Var, split: usize) -> Result<Var> {
        if zs.is_empty() {
            return Err(arg_err!("fusion needs at least one code"));
        }
        if split == 0 || split >= self.arch.layers {
            return Err(arg_err!("split layer {split} outside 1..{}", self.arch.layers));
        }
        self.check_inputs(tape, zs, x)?;
        let mut feats = Vec::with_capacity(zs.len());
        for &z in zs {
            feats.push(self.run(tape, b, 0..split, None, z, x)?);
        }
        let fused = tape.max_of(&feats)?;
        let z_late = if self.arch.skip >= split { tape.max_of(zs)? } else { zs[0] };
        self.run(tape, b, split..self.arch.layers, Some(fused), z_late, x)
    }

    fn check_inputs(&self, tape: &Tape, zs: &[Var], x: Var) -> Result<()> {
        for &z in zs {
            if tape.value(z).shape() != [self.arch.code_dim] {
                return Err(dim_err!(
                    "code has shape {:?}, decoder expects [{}]",
                    tape.value(z).shape(),
                    self.arch.code_dim
                ));
            }
        }
        let xs = tape.value(x).shape();
        if xs.len() != 2 || xs[1] != 3 || xs[0] == 0 {
            return Err(dim_err!("query points must be a non-empty n × 3 matrix, got {xs:?}"));
        }
        Ok(())
    }

    fn run(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        layers: std::ops::Range<usize>,
        mut h: Option<Var>,
        z: Var,
        x: Var,
    ) -> Result<Var> {
        let last = self.arch.layers - 1;
        for i in layers {
            let (w, bias) = (b.var(&w_name(i))?, b.var(&b_name(i))?);
            let pre = match h {
                None => tape.shared_affine(x, z, w, bias)?,
                Some(hv) if i == self.arch.skip => {
                    let rows = tape.concat_cols(hv, x)?;
                    tape.shared_affine(rows, z, w, bias)?
                }
                Some(hv) => tape.affine(hv, w, bias)?,
            };
            h = Some(if i == last {
                let n = tape.value(pre).rows();
                let flat = tape.reshape(pre, vec![n])?;
                tape.tanh(flat)?
            } else {
                tape.relu(pre)?
            });
        }
        h.ok_or_else(|| arg_err!("empty layer range"))
    }

    /// Field values without gradients, evaluated in chunks.
    pub fn eval(&self, z: &[f64], points: &[Point]) -> Result<Vec<f64>> {
        self.eval_fused(std::slice::from_ref(&z.to_vec()), points, None)
    }

    /// As [`Decoder::eval`] for fused codes. `split = None` requires a
    /// single code and uses the plain forward.
    pub fn eval_fused(&self, zs: &[Vec<f64>], points: &[Point], split: Option<usize>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false)?;
        let zv = zs
            .iter()
            .map(|z| tape.constant(Tensor::vector(z.clone())))
            .collect::<Result<Vec<_>>>()?;
        if split.is_none() && zv.len() != 1 {
            return Err(arg_err!("{} codes given without a split layer", zv.len()));
        }
        let base = tape.len();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let x = tape.constant(Tensor::from_points(chunk))?;
            let y = match split {
                None => self.forward(&mut tape, &b, zv[0], x)?,
                Some(l) => self.forward_fused(&mut tape, &b, &zv, x, l)?,
            };
            out.extend_from_slice(tape.value(y).data());
            tape.truncate(base);
        }
        Ok(out)
    }
}

/// (out, in) of layer `i`.
fn layer_dims(arch: &DecoderArch, i: usize) -> (usize, usize) {
    let out = if i + 1 == arch.layers { 1 } else { arch.width };
    let inp = if i == 0 {
        arch.code_dim + 3
    } else if i == arch.skip {
        arch.code_dim + arch.width + 3
    } else {
        arch.width
    };
    (out, inp)
}
