use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::FinetuneConfig;
use super::log::LossLog;
use super::persist::{load_adam, read_json, save_adam, write_json};
use crate::diffcore::{AdamConfig, AdamState, NormMode, Tape, Tensor};
use crate::error::{arg_err, Error, Result};
use crate::nets::{load_net, save_net, Decoder, Discriminator, Encoder};
use crate::recon::{clamped_l1_mean, neg_log_d, Observation};
use crate::rng::derive_seed;
use crate::shapes::uniform_points;

pub const FINETUNE_COLUMNS: [&str; 5] = ["epoch", "loss", "data", "anchor", "gan"];

/// Encoder being adapted to sparse scans, with the codes it produced
/// before adaptation as anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneState {
    pub epoch: usize,
    pub encoder: Encoder,
    pub anchors: Vec<Vec<f64>>,
    pub adam: AdamState,
    pub log: LossLog,
}

#[derive(Serialize, Deserialize)]
struct FinetuneMeta {
    epoch: usize,
    anchors: Vec<Vec<f64>>,
    log: LossLog,
}

impl FinetuneState {
    pub fn init(encoder: &Encoder, observations: &[Observation], cfg: &FinetuneConfig) -> Result<Self> {
        cfg.validate()?;
        let anchors = observations
            .iter()
            .map(|o| encoder.encode(&o.surface))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            epoch: 0,
            encoder: encoder.clone(),
            anchors,
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr)),
            log: LossLog::new(&FINETUNE_COLUMNS),
        })
    }

    /// `‖g_φ(P_i) − z⁰_i‖` for every observation under the current encoder.
    pub fn anchor_gaps(&self, observations: &[Observation]) -> Result<Vec<f64>> {
        observations
            .iter()
            .zip(&self.anchors)
            .map(|(o, a)| {
                let z = self.encoder.encode(&o.surface)?;
                Ok(z.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_net(&self.encoder, &dir.join("encoder"), serde_json::json!({"stage": "finetune"}))?;
        save_adam(&dir.join("adam_encoder"), &self.adam)?;
        write_json(
            &dir.join("state.json"),
            &FinetuneMeta {
                epoch: self.epoch,
                anchors: self.anchors.clone(),
                log: self.log.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: FinetuneMeta = read_json(&dir.join("state.json"))?;
        Ok(Self {
            epoch: meta.epoch,
            encoder: load_net(&dir.join("encoder"))?.0,
            anchors: meta.anchors,
            adam: load_adam(&dir.join("adam_encoder"))?,
            log: meta.log,
        })
    }
}

pub fn finetune(
    encoder: &Encoder,
    decoder: &Decoder,
    discriminator: Option<&Discriminator>,
    observations: &[Observation],
    cfg: &FinetuneConfig,
) -> Result<FinetuneState> {
    let mut state = FinetuneState::init(encoder, observations, cfg)?;
    run_finetune(&mut state, decoder, discriminator, observations, cfg, cfg.epochs, |_| Ok(()))?;
    Ok(state)
}

/// Adapts the encoder only; decoder and discriminator are read. The encoder
/// normalizes with its running statistics throughout, so a single scan is
/// encoded the same way as at inference.
pub fn run_finetune(
    state: &mut FinetuneState,
    decoder: &Decoder,
    discriminator: Option<&Discriminator>,
    observations: &[Observation],
    cfg: &FinetuneConfig,
    until: usize,
    mut on_epoch: impl FnMut(&FinetuneState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if observations.is_empty() || observations.iter().any(|o| o.surface.is_empty()) {
        return Err(arg_err!("fine-tuning needs non-empty observations"));
    }
    if observations.len() != state.anchors.len() {
        return Err(arg_err!(
            "{} observations for {} anchors",
            observations.len(),
            state.anchors.len()
        ));
    }
    let disc = if cfg.use_discriminator && cfg.w_gan > 0.0 {
        discriminator
    } else {
        None
    };
    while state.epoch < until {
        let snapshot = state.clone();
        if let Err(e) = finetune_epoch(state, decoder, disc, observations, cfg) {
            *state = snapshot;
            return Err(e);
        }
        on_epoch(state)?;
    }
    Ok(())
}

fn finetune_epoch(
    state: &mut FinetuneState,
    decoder: &Decoder,
    disc: Option<&Discriminator>,
    observations: &[Observation],
    cfg: &FinetuneConfig,
) -> Result<()> {
    let epoch_seed = derive_seed(cfg.seed, "finetune-epoch", state.epoch as u64);
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.shuffle(&mut crate::rng::rng_for(epoch_seed, "order", 0));
    let (mut loss_sum, mut data_sum, mut anchor_sum, mut gan_sum) = (0.0, 0.0, 0.0, 0.0);
    let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();
    for batch in &batches {
        let b = batch.len() as f64;
        let mut tape = Tape::new();
        let eb = state.encoder.params.bind(&mut tape, true)?;
        let db = decoder.params.bind(&mut tape, false)?;
        let sb = match disc {
            Some(d) => Some(d.params.bind(&mut tape, false)?),
            None => None,
        };
        let mut terms = Vec::new();
        for &i in batch.iter() {
            let o = &observations[i];
            let cloud = tape.constant(Tensor::from_points(&o.surface))?;
            let (zr, _) = state.encoder.forward(&mut tape, &eb, &[cloud], NormMode::Eval)?;
            let z = tape.reshape(zr, vec![state.anchors[i].len()])?;
            let x = tape.constant(Tensor::from_points(&o.points()))?;
            let pred = decoder.forward(&mut tape, &db, z, x)?;
            let data = clamped_l1_mean(&mut tape, pred, &o.targets(), cfg.delta)?;
            let a = tape.constant(Tensor::vector(state.anchors[i].clone()))?;
            let diff = tape.sub(z, a)?;
            let anchor = tape.norm(diff)?;
            data_sum += tape.value(data).item()? / b;
            anchor_sum += tape.value(anchor).item()? / b;
            terms.push(tape.scale(data, cfg.w_data)?);
            terms.push(tape.scale(anchor, cfg.w_anchor)?);
            if let (Some(d), Some(sb)) = (disc, &sb) {
                let mut dx = uniform_points(cfg.dis_uniform, epoch_seed, &format!("finetune-dis-{i}"));
                dx.extend_from_slice(&o.surface);
                let xd = tape.constant(Tensor::from_points(&dx))?;
                let s = decoder.forward(&mut tape, &db, z, xd)?;
                let g = neg_log_d(&mut tape, d, sb, xd, s)?;
                gan_sum += tape.value(g).item()? / b;
                terms.push(tape.scale(g, cfg.w_gan)?);
            }
        }
        let total = tape.add_all(&terms)?;
        let loss = tape.scale(total, 1.0 / b)?;
        loss_sum += tape.value(loss).item()?;
        let grads = tape.backward(loss)?;
        let g = eb.gradients(&tape, &grads);
        state.adam.step(&mut state.encoder.params, &g)?;
        for (name, e) in state.encoder.params.iter() {
            if !e.tensor.is_finite() {
                return Err(Error::Numeric(format!("encoder parameter {name} became non-finite")));
            }
        }
    }
    let n = batches.len() as f64;
    state.epoch += 1;
    state.log.push(vec![
        state.epoch as f64,
        loss_sum / n,
        data_sum / n,
        anchor_sum / n,
        gan_sum / n,
    ]);
    Ok(())
}
