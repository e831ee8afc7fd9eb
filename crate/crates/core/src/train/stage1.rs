use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::Stage1Config;
use super::log::LossLog;
use super::persist::{load_adam, read_json, save_adam, write_json};
use crate::diffcore::{AdamConfig, AdamState, GradMap, ParamSet, Tape, Tensor};
use crate::error::{arg_err, Error, Result};
use crate::nets::{load_net, save_net, Decoder, DecoderArch};
use crate::recon::clamped_l1_mean;
use crate::rng::{derive_seed, rng_for};
use crate::shapes::SdfSample;

pub const STAGE1_COLUMNS: [&str; 4] = ["epoch", "loss", "data", "reg"];

/// Everything needed to continue Stage 1 exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1State {
    pub epoch: usize,
    pub decoder: Decoder,
    /// One code per shape, named by zero-padded shape index.
    pub codes: ParamSet,
    pub adam_decoder: AdamState,
    pub adam_codes: AdamState,
    pub log: LossLog,
}

#[derive(Serialize, Deserialize)]
struct Stage1Meta {
    epoch: usize,
    log: LossLog,
}

pub fn code_key(i: usize) -> String {
    format!("{i:06}")
}

impl Stage1State {
    /// Fresh decoder and `N(0, σ²)` codes.
    pub fn init(arch: &DecoderArch, shapes: usize, cfg: &Stage1Config) -> Result<Self> {
        cfg.validate()?;
        let decoder = Decoder::init(arch, cfg.seed);
        let normal = Normal::new(0.0, cfg.code_sigma).map_err(|e| arg_err!("code sigma: {e}"))?;
        let mut codes = ParamSet::new();
        for i in 0..shapes {
            let mut rng = rng_for(cfg.seed, "stage1-code", i as u64);
            let z = (0..arch.code_dim).map(|_| normal.sample(&mut rng)).collect();
            codes.insert(code_key(i), Tensor::vector(z), true)?;
        }
        Ok(Self {
            epoch: 0,
            decoder,
            codes,
            adam_decoder: AdamState::new(AdamConfig::with_lr(cfg.lr_decoder)),
            adam_codes: AdamState::new(AdamConfig::with_lr(cfg.lr_codes)),
            log: LossLog::new(&STAGE1_COLUMNS),
        })
    }

    pub fn shape_count(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, i: usize) -> Result<Vec<f64>> {
        Ok(self.codes.get(&code_key(i))?.data().to_vec())
    }

    pub fn all_codes(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.shape_count()).map(|i| self.code(i)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_net(&self.decoder, &dir.join("decoder"), serde_json::json!({"stage": 1}))?;
        self.codes.save(&dir.join("codes"), serde_json::Value::Null)?;
        save_adam(&dir.join("adam_decoder"), &self.adam_decoder)?;
        save_adam(&dir.join("adam_codes"), &self.adam_codes)?;
        write_json(
            &dir.join("state.json"),
            &Stage1Meta {
                epoch: self.epoch,
                log: self.log.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Stage1Meta = read_json(&dir.join("state.json"))?;
        Ok(Self {
            epoch: meta.epoch,
            decoder: load_net(&dir.join("decoder"))?.0,
            codes: ParamSet::load(&dir.join("codes"))?.0,
            adam_decoder: load_adam(&dir.join("adam_decoder"))?,
            adam_codes: load_adam(&dir.join("adam_codes"))?,
            log: meta.log,
        })
    }
}

/// Trains a decoder and one code per shape from scratch.
pub fn stage1_train(samples: &[Vec<SdfSample>], arch: &DecoderArch, cfg: &Stage1Config) -> Result<Stage1State> {
    let mut state = Stage1State::init(arch, samples.len(), cfg)?;
    run_stage1(&mut state, samples, cfg, cfg.epochs, |_| Ok(()))?;
    Ok(state)
}

/// Runs epochs until `state.epoch == until`, calling `on_epoch` after each.
/// On a numeric failure the state is rolled back to the start of the
/// failing epoch and the error returned.
pub fn run_stage1(
    state: &mut Stage1State,
    samples: &[Vec<SdfSample>],
    cfg: &Stage1Config,
    until: usize,
    mut on_epoch: impl FnMut(&Stage1State) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() || samples.iter().any(|s| s.is_empty()) {
        return Err(arg_err!("stage 1 needs at least one shape, each with samples"));
    }
    if samples.len() != state.shape_count() {
        return Err(arg_err!(
            "{} sample sets for {} codes",
            samples.len(),
            state.shape_count()
        ));
    }
    while state.epoch < until {
        let snapshot = state.clone();
        if let Err(e) = stage1_epoch(state, samples, cfg) {
            *state = snapshot;
            return Err(e);
        }
        on_epoch(state)?;
    }
    Ok(())
}

fn stage1_epoch(state: &mut Stage1State, samples: &[Vec<SdfSample>], cfg: &Stage1Config) -> Result<()> {
    let epoch_seed = derive_seed(cfg.seed, "stage1-epoch", state.epoch as u64);
    let orders: Vec<Vec<usize>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut rng_for(epoch_seed, "shape", i as u64));
            idx
        })
        .collect();
    let longest = samples.iter().map(Vec::len).max().unwrap_or(0);
    let steps = longest.div_ceil(cfg.batch_per_shape);
    let (mut loss_sum, mut data_sum, mut reg_sum) = (0.0, 0.0, 0.0);
    for k in 0..steps {
        let batch: Vec<(usize, Vec<SdfSample>)> = orders
            .iter()
            .enumerate()
            .filter_map(|(i, ord)| {
                let lo = k * cfg.batch_per_shape;
                let hi = ((k + 1) * cfg.batch_per_shape).min(ord.len());
                (lo < hi).then(|| (i, ord[lo..hi].iter().map(|&j| samples[i][j]).collect()))
            })
            .collect();
        let out = stage1_step(&state.decoder, &state.codes, &batch, cfg)?;
        state.adam_decoder.step(&mut state.decoder.params, &out.dec_grads)?;
        state.adam_codes.step(&mut state.codes, &out.code_grads)?;
        for (name, e) in state.decoder.params.iter().chain(state.codes.iter()) {
            if !e.tensor.is_finite() {
                return Err(Error::Numeric(format!("parameter {name} became non-finite")));
            }
        }
        loss_sum += out.loss;
        data_sum += out.data;
        reg_sum += out.reg;
    }
    let n = steps as f64;
    state.epoch += 1;
    state
        .log
        .push(vec![state.epoch as f64, loss_sum / n, data_sum / n, reg_sum / n]);
    Ok(())
}

pub(crate) struct Stage1Step {
    pub loss: f64,
    /// Mean clamped L1 per sample, averaged over the batch.
    pub data: f64,
    /// Mean squared code norm over the batch.
    pub reg: f64,
    pub dec_grads: GradMap,
    pub code_grads: GradMap,
}

/// Loss `(1/B) Σᵢ [w_dec · meanⱼ ρ + λ_reg ‖zᵢ‖²]` and its gradients.
pub(crate) fn stage1_step(
    decoder: &Decoder,
    codes: &ParamSet,
    batch: &[(usize, Vec<SdfSample>)],
    cfg: &Stage1Config,
) -> Result<Stage1Step> {
    let mut tape = Tape::new();
    let db = decoder.params.bind(&mut tape, true)?;
    let cb = codes.bind(&mut tape, true)?;
    let mut terms = Vec::with_capacity(2 * batch.len());
    let (mut data, mut reg) = (0.0, 0.0);
    for (i, s) in batch {
        let z = cb.var(&code_key(*i))?;
        let pts: Vec<_> = s.iter().map(|p| p.x).collect();
        let targets: Vec<f64> = s.iter().map(|p| p.s).collect();
        let x = tape.constant(Tensor::from_points(&pts))?;
        let y = decoder.forward(&mut tape, &db, z, x)?;
        let d = clamped_l1_mean(&mut tape, y, &targets, cfg.delta)?;
        let r = tape.sum_squares(z)?;
        data += tape.value(d).item()?;
        reg += tape.value(r).item()?;
        terms.push(tape.scale(d, cfg.w_dec)?);
        terms.push(tape.scale(r, cfg.lambda_reg)?);
    }
    let total = tape.add_all(&terms)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
    let grads = tape.backward(loss)?;
    let b = batch.len() as f64;
    Ok(Stage1Step {
        loss: tape.value(loss).item()?,
        data: data / b,
        reg: reg / b,
        dec_grads: db.gradients(&tape, &grads),
        code_grads: cb.gradients(&tape, &grads),
    })
}
