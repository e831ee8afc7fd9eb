use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::energy::{build_energy, EnergyInputs, EnergyWeights};
use super::extract::extract_mesh;
use super::observation::Observation;
use crate::diffcore::{AdamConfig, AdamState, GradMap, ParamSet, Tape, Tensor};
use crate::error::{arg_err, Error, Result};
use crate::nets::{Decoder, Discriminator, Encoder};
use crate::rng::rng_for;
use crate::shapes::{uniform_points, TriangleMesh};
use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub iterations: usize,
    pub weights: EnergyWeights,
    pub delta: f64,
    pub lr: f64,
    /// Uniform points in the discriminator sample; the observed surface
    /// points are added to them.
    pub dis_uniform: usize,
    pub resample_every: usize,
    /// Standard deviation of the random initial code.
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            weights: EnergyWeights::default(),
            delta: 0.1,
            lr: 5e-3,
            dis_uniform: 4096,
            resample_every: 50,
            init_sigma: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub codes: usize,
    pub split: usize,
    pub jitter: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            codes: 4,
            split: 4,
            jitter: 0.01,
        }
    }
}

/// Energies at one iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub iteration: usize,
    pub total: f64,
    pub data: f64,
    pub reg: f64,
    pub dis: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    /// Codes at the lowest-energy iterate.
    pub codes: Vec<Vec<f64>>,
    pub best_iteration: usize,
    /// One record per iterate, from the initial codes to the final step.
    pub trace: Vec<EnergyRecord>,
    /// Fusion split used for the field, if more than the plain decoder.
    pub split: Option<usize>,
}

impl OptimResult {
    pub fn best(&self) -> &EnergyRecord {
        &self.trace[self.best_iteration]
    }

    pub fn code(&self) -> &[f64] {
        &self.codes[0]
    }

    pub fn mesh(&self, decoder: &Decoder, resolution: usize) -> Result<TriangleMesh> {
        extract_mesh(decoder, &self.codes, self.split, resolution)
    }

    /// Trace as CSV text.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,total,data,reg,dis\n");
        for r in &self.trace {
            s.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.iteration, r.total, r.data, r.reg, r.dis));
        }
        s
    }
}

fn code_name(k: usize) -> String {
    format!("z{k}")
}

/// Gradient descent (Adam) on the codes only; every network stays fixed.
/// The discriminator term is included only when `disc` is given and its
/// weight is positive.
pub fn optimize_codes(
    decoder: &Decoder,
    disc: Option<&Discriminator>,
    obs: &Observation,
    init: Vec<Vec<f64>>,
    split: Option<usize>,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    if init.is_empty() {
        return Err(arg_err!("no initial codes"));
    }
    if obs.is_empty() {
        return Err(arg_err!("observation has no surface points"));
    }
    if init.len() > 1 && split.is_none() {
        return Err(arg_err!("several codes need a fusion split"));
    }
    let disc = disc.filter(|_| cfg.weights.dis > 0.0);
    let mut codes = ParamSet::new();
    for (k, z) in init.into_iter().enumerate() {
        codes.insert(code_name(k), Tensor::vector(z), true)?;
    }
    let n_codes = codes.len();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));

    let mut tape = Tape::new();
    let dec_bind = decoder.params.bind(&mut tape, false)?;
    let disc_bind = match disc {
        Some(d) => Some(d.params.bind(&mut tape, false)?),
        None => None,
    };
    let obs_x = tape.constant(Tensor::from_points(&obs.points()))?;
    let targets = obs.targets();
    let base = tape.len();

    let mut dis_x = None;
    let mut dis_block = usize::MAX;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    for it in 0..=cfg.iterations {
        tape.truncate(base);
        if disc.is_some() {
            let block = it / cfg.resample_every.max(1);
            if block != dis_block || dis_x.is_none() {
                dis_block = block;
                let mut pts = uniform_points(cfg.dis_uniform, cfg.seed, &format!("dis-points-{block}"));
                pts.extend_from_slice(&obs.surface);
                dis_x = Some(pts);
            }
        }
        let dis_var = match &dis_x {
            Some(p) => Some(tape.constant(Tensor::from_points(p))?),
            None => None,
        };
        let bind = codes.bind(&mut tape, true)?;
        let zs = (0..n_codes)
            .map(|k| bind.var(&code_name(k)))
            .collect::<Result<Vec<_>>>()?;
        let inputs = EnergyInputs {
            decoder,
            dec_bind: &dec_bind,
            disc: disc.zip(disc_bind.as_ref()),
            obs_x,
            obs_targets: &targets,
            dis_x: dis_var,
            split,
            delta: cfg.delta,
            weights: cfg.weights,
        };
        let g = build_energy(&mut tape, &inputs, &zs)?;
        let record = EnergyRecord {
            iteration: it,
            total: tape.value(g.total).item()?,
            data: tape.value(g.data).item()?,
            reg: tape.value(g.reg).item()?,
            dis: match g.dis {
                Some(d) => tape.value(d).item()?,
                None => 0.0,
            },
        };
        if !record.total.is_finite() {
            return Err(Error::Numeric(format!("energy is {} at iteration {it}", record.total)));
        }
        trace.push(record);
        if best.as_ref().is_none_or(|(e, _, _)| record.total < *e) {
            best = Some((record.total, it, codes.clone()));
        }
        if it == cfg.iterations {
            break;
        }
        let grads = tape.backward(g.total)?;
        let gm: GradMap = bind.gradients(&tape, &grads);
        adam.step(&mut codes, &gm)?;
    }
    let (_, best_iteration, best_codes) = best.expect("at least one iterate");
    let codes = (0..n_codes)
        .map(|k| Ok(best_codes.get(&code_name(k))?.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptimResult {
        codes,
        best_iteration,
        trace,
        split,
    })
}

/// Random initial code `N(0, σ²)` drawn from the configured seed.
pub fn random_code(dim: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, "latent-init", 0);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Auto-decoder inference: random code, data term plus code-norm term.
pub fn optimize_baseline(decoder: &Decoder, obs: &Observation, cfg: &OptimConfig) -> Result<OptimResult> {
    let z0 = random_code(decoder.arch.code_dim, cfg.init_sigma, cfg.seed);
    optimize_codes(decoder, None, obs, vec![z0], None, cfg)
}

/// Regularized inference from the encoder's code for the observed surface.
pub fn optimize_regularized(
    decoder: &Decoder,
    disc: &Discriminator,
    encoder: &Encoder,
    obs: &Observation,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    let z0 = encoder.encode(&obs.surface)?;
    optimize_regularized_from(decoder, disc, obs, z0, cfg)
}

/// Regularized inference from a given initial code.
pub fn optimize_regularized_from(
    decoder: &Decoder,
    disc: &Discriminator,
    obs: &Observation,
    z0: Vec<f64>,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    optimize_codes(decoder, Some(disc), obs, vec![z0], None, cfg)
}

/// Jitters `z0` into `fusion.codes` codes, optimizes them jointly on the
/// fused field and extracts the fused mesh.
pub fn fuse_multicode(
    decoder: &Decoder,
    disc: Option<&Discriminator>,
    obs: &Observation,
    z0: &[f64],
    fusion: &FusionConfig,
    cfg: &OptimConfig,
    resolution: usize,
) -> Result<(OptimResult, TriangleMesh)> {
    if fusion.codes == 0 {
        return Err(arg_err!("fusion needs at least one code"));
    }
    let init = jittered_codes(z0, fusion, cfg.seed)?;
    let res = optimize_codes(decoder, disc, obs, init, Some(fusion.split), cfg)?;
    let mesh = res.mesh(decoder, resolution)?;
    Ok((res, mesh))
}

pub fn jittered_codes(z0: &[f64], fusion: &FusionConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, fusion.jitter).map_err(|e| arg_err!("jitter: {e}"))?;
    Ok((0..fusion.codes)
        .map(|k| {
            let mut rng = rng_for(seed, "fusion-jitter", k as u64);
            z0.iter().map(|v| v + normal.sample(&mut rng)).collect()
        })
        .collect())
}

/// Decoder field for the given codes at arbitrary points.
pub fn field_at(decoder: &Decoder, codes: &[Vec<f64>], split: Option<usize>, points: &[Point]) -> Result<Vec<f64>> {
    decoder.eval_fused(codes, points, split)
}
