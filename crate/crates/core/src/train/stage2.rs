use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Stage2Config;
use super::log::{LossLog, TrainEvent};
use super::persist::{load_adam, read_json, save_adam, write_json};
use super::pseudo::PseudoGroundTruth;
use crate::diffcore::{AdamConfig, AdamState, Branch, NormMode, Tape, Tensor};
use crate::error::{arg_err, Error, Result};
use crate::nets::{load_net, save_net, Architecture, Decoder, Discriminator, Encoder};
use crate::recon::{clamped_l1_mean, neg_log_d};
use crate::rng::{derive_seed, rng_for};
use crate::shapes::SdfSample;
use crate::Point;

pub const STAGE2_COLUMNS: [&str; 9] = [
    "epoch", "enc_loss", "dec", "z", "gan", "dis_loss", "d_real", "d_fake", "code_gap",
];

/// Probability closer than this to 0 or 1 counts as saturated.
const SATURATION: f64 = 1e-6;

/// Training material for one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Item {
    pub samples: Vec<SdfSample>,
    pub scans: Vec<Vec<Point>>,
    pub pseudo: PseudoGroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2State {
    pub epoch: usize,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
    pub adam_encoder: AdamState,
    pub adam_discriminator: AdamState,
    pub log: LossLog,
    pub events: Vec<TrainEvent>,
}

#[derive(Serialize, Deserialize)]
struct Stage2Meta {
    epoch: usize,
    log: LossLog,
    events: Vec<TrainEvent>,
}

impl Stage2State {
    /// Fresh encoder, and a discriminator whose head starts at zero.
    pub fn init(arch: &Architecture, cfg: &Stage2Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            epoch: 0,
            encoder: Encoder::init(&arch.encoder, cfg.seed),
            discriminator: Discriminator::init(&arch.discriminator, cfg.seed, true),
            adam_encoder: AdamState::new(AdamConfig::with_lr(cfg.lr_encoder)),
            adam_discriminator: AdamState::new(AdamConfig::with_lr(cfg.lr_discriminator)),
            log: LossLog::new(&STAGE2_COLUMNS),
            events: Vec::new(),
        })
    }

    /// [`Stage2State::init`] with the encoder's output matched to the
    /// spread of the shapes' Stage 1 codes.
    pub fn for_items(arch: &Architecture, cfg: &Stage2Config, items: &[Stage2Item]) -> Result<Self> {
        let mut s = Self::init(arch, cfg)?;
        let codes: Vec<Vec<f64>> = items.iter().map(|it| it.pseudo.z.clone()).collect();
        s.encoder.calibrate_output(&codes)?;
        Ok(s)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_net(&self.encoder, &dir.join("encoder"), serde_json::json!({"stage": 2}))?;
        save_net(&self.discriminator, &dir.join("discriminator"), serde_json::json!({"stage": 2}))?;
        save_adam(&dir.join("adam_encoder"), &self.adam_encoder)?;
        save_adam(&dir.join("adam_discriminator"), &self.adam_discriminator)?;
        write_json(
            &dir.join("state.json"),
            &Stage2Meta {
                epoch: self.epoch,
                log: self.log.clone(),
                events: self.events.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Stage2Meta = read_json(&dir.join("state.json"))?;
        Ok(Self {
            epoch: meta.epoch,
            encoder: load_net(&dir.join("encoder"))?.0,
            discriminator: load_net(&dir.join("discriminator"))?.0,
            adam_encoder: load_adam(&dir.join("adam_encoder"))?,
            adam_discriminator: load_adam(&dir.join("adam_discriminator"))?,
            log: meta.log,
            events: meta.events,
        })
    }
}

pub fn stage2_train(decoder: &Decoder, items: &[Stage2Item], arch: &Architecture, cfg: &Stage2Config) -> Result<Stage2State> {
    let mut state = Stage2State::for_items(arch, cfg, items)?;
    run_stage2(&mut state, decoder, items, cfg, cfg.epochs, |_| Ok(()))?;
    Ok(state)
}

/// Median over shapes of `‖g_φ(first scan) − z′‖` with running statistics.
pub fn code_gap(encoder: &Encoder, items: &[Stage2Item]) -> Result<f64> {
    let mut gaps = items
        .iter()
        .map(|it| {
            let z = encoder.encode(&it.scans[0])?;
            Ok(z.iter().zip(&it.pseudo.z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Ok(if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    })
}

/// Alternating encoder / discriminator updates until `state.epoch == until`.
/// The decoder is only read.
pub fn run_stage2(
    state: &mut Stage2State,
    decoder: &Decoder,
    items: &[Stage2Item],
    cfg: &Stage2Config,
    until: usize,
    mut on_epoch: impl FnMut(&Stage2State) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if items.len() < 2 {
        return Err(arg_err!("stage 2 needs at least two shapes"));
    }
    if items.iter().any(|it| it.scans.is_empty() || it.samples.is_empty()) {
        return Err(arg_err!("every stage 2 shape needs samples and at least one scan"));
    }
    while state.epoch < until {
        let snapshot = state.clone();
        if let Err(e) = stage2_epoch(state, decoder, items, cfg) {
            *state = snapshot;
            return Err(e);
        }
        on_epoch(state)?;
    }
    Ok(())
}

#[derive(Default)]
struct Totals {
    enc: f64,
    dec: f64,
    z: f64,
    gan: f64,
    dis: f64,
    d_real: f64,
    d_fake: f64,
    saturated: usize,
}

fn stage2_epoch(state: &mut Stage2State, decoder: &Decoder, items: &[Stage2Item], cfg: &Stage2Config) -> Result<()> {
    let epoch_seed = derive_seed(cfg.seed, "stage2-epoch", state.epoch as u64);
    let mut rng = rng_for(epoch_seed, "order", 0);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    // a trailing singleton joins the previous batch so batch norm has ≥ 2 rows
    let mut batches: Vec<Vec<usize>> = order.chunks(cfg.batch).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    let mut tot = Totals::default();
    for batch in &batches {
        let picks: Vec<(usize, usize, Vec<usize>)> = batch
            .iter()
            .map(|&i| {
                let it = &items[i];
                let k = rng.random_range(0..it.scans.len());
                let n = cfg.gt_samples.min(it.samples.len());
                let idx = rand::seq::index::sample(&mut rng, it.samples.len(), n).into_vec();
                (i, k, idx)
            })
            .collect();
        encoder_and_discriminator_step(state, decoder, items, &picks, cfg, &mut tot)?;
    }
    let nb = batches.len() as f64;
    if cfg.adversarial && tot.saturated as f64 > 0.99 * nb {
        state.events.push(TrainEvent {
            epoch: state.epoch + 1,
            kind: "discriminator-saturated".into(),
            message: format!(
                "{} of {} batches had every discriminator output within {SATURATION} of 0 or 1",
                tot.saturated,
                batches.len()
            ),
        });
    }
    let gap = code_gap(&state.encoder, items)?;
    state.epoch += 1;
    state.log.push(vec![
        state.epoch as f64,
        tot.enc / nb,
        tot.dec / nb,
        tot.z / nb,
        tot.gan / nb,
        tot.dis / nb,
        tot.d_real / nb,
        tot.d_fake / nb,
        gap,
    ]);
    Ok(())
}

fn encoder_and_discriminator_step(
    state: &mut Stage2State,
    decoder: &Decoder,
    items: &[Stage2Item],
    picks: &[(usize, usize, Vec<usize>)],
    cfg: &Stage2Config,
    tot: &mut Totals,
) -> Result<()> {
    let b = picks.len() as f64;
    // (a) encoder
    let mut tape = Tape::new();
    let eb = state.encoder.params.bind(&mut tape, true)?;
    let db = decoder.params.bind(&mut tape, false)?;
    let sb = state.discriminator.params.bind(&mut tape, false)?;
    let clouds = picks
        .iter()
        .map(|(i, k, _)| tape.constant(Tensor::from_points(&items[*i].scans[*k])))
        .collect::<Result<Vec<_>>>()?;
    let (zs, moments) = state.encoder.forward(&mut tape, &eb, &clouds, NormMode::Train)?;
    let mut terms = Vec::new();
    let mut fakes = Vec::with_capacity(picks.len());
    let (mut dec_sum, mut z_sum, mut gan_sum) = (0.0, 0.0, 0.0);
    for (row, (i, k, idx)) in picks.iter().enumerate() {
        let it = &items[*i];
        let z = tape.row(zs, row)?;
        let gx: Vec<Point> = idx.iter().map(|&j| it.samples[j].x).collect();
        let gs: Vec<f64> = idx.iter().map(|&j| it.samples[j].s).collect();
        let xv = tape.constant(Tensor::from_points(&gx))?;
        let pred = decoder.forward(&mut tape, &db, z, xv)?;
        let l_dec = clamped_l1_mean(&mut tape, pred, &gs, cfg.delta)?;
        let zp = tape.constant(Tensor::vector(it.pseudo.z.clone()))?;
        let diff = tape.sub(z, zp)?;
        let l_z = tape.norm(diff)?;
        dec_sum += tape.value(l_dec).item()?;
        z_sum += tape.value(l_z).item()?;
        terms.push(tape.scale(l_dec, cfg.w_dec)?);
        terms.push(tape.scale(l_z, cfg.w_z)?);
        if cfg.adversarial {
            let (dx, _) = it.pseudo.sample_set(*k);
            let xd = tape.constant(Tensor::from_points(&dx))?;
            let s_fake = decoder.forward(&mut tape, &db, z, xd)?;
            let l_gan = neg_log_d(&mut tape, &state.discriminator, &sb, xd, s_fake)?;
            gan_sum += tape.value(l_gan).item()?;
            terms.push(tape.scale(l_gan, cfg.w_gan)?);
            fakes.push((dx, tape.value(s_fake).data().to_vec()));
        }
    }
    let total = tape.add_all(&terms)?;
    let loss = tape.scale(total, 1.0 / b)?;
    let loss_value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let g = eb.gradients(&tape, &grads);
    state.adam_encoder.step(&mut state.encoder.params, &g)?;
    state.encoder.absorb(moments)?;
    ensure_finite(&state.encoder.params, "encoder")?;
    tot.enc += loss_value;
    tot.dec += dec_sum / b;
    tot.z += z_sum / b;
    tot.gan += gan_sum / b;

    if !cfg.adversarial {
        return Ok(());
    }
    // (b) discriminator: real pseudo fields against the fields just predicted
    let mut tape = Tape::new();
    let sb = state.discriminator.params.bind(&mut tape, true)?;
    let mut terms = Vec::new();
    let mut real_moments = Vec::new();
    let mut fake_moments = Vec::new();
    let (mut pr_sum, mut pf_sum) = (0.0, 0.0);
    let mut all_saturated = true;
    for ((i, k, _), (dx, s_fake)) in picks.iter().zip(&fakes) {
        let (_, s_real) = items[*i].pseudo.sample_set(*k);
        let xv = tape.constant(Tensor::from_points(dx))?;
        let sr = tape.constant(Tensor::vector(s_real))?;
        let sf = tape.constant(Tensor::vector(s_fake.clone()))?;
        let d = &state.discriminator;
        let (lr, mr) = d.forward(&mut tape, &sb, xv, sr, Branch::Real, NormMode::Train)?;
        let (lf, mf) = d.forward(&mut tape, &sb, xv, sf, Branch::Fake, NormMode::Train)?;
        real_moments.push(mr);
        fake_moments.push(mf);
        let pr = sigmoid(tape.value(lr).item()?);
        let pf = sigmoid(tape.value(lf).item()?);
        pr_sum += pr;
        pf_sum += pf;
        all_saturated &= [pr, pf].iter().all(|p| *p < SATURATION || *p > 1.0 - SATURATION);
        let a = tape.log_sigmoid(lr)?;
        let neg = tape.scale(lf, -1.0)?;
        let c = tape.log_sigmoid(neg)?;
        let both = tape.add(a, c)?;
        let s = tape.sum(both)?;
        terms.push(tape.scale(s, -1.0)?);
    }
    let total = tape.add_all(&terms)?;
    let loss = tape.scale(total, 1.0 / b)?;
    tot.dis += tape.value(loss).item()?;
    tot.d_real += pr_sum / b;
    tot.d_fake += pf_sum / b;
    tot.saturated += all_saturated as usize;
    let grads = tape.backward(loss)?;
    let g = sb.gradients(&tape, &grads);
    state.adam_discriminator.step(&mut state.discriminator.params, &g)?;
    for m in &real_moments {
        state.discriminator.absorb(Branch::Real, m)?;
    }
    for m in &fake_moments {
        state.discriminator.absorb(Branch::Fake, m)?;
    }
    ensure_finite(&state.discriminator.params, "discriminator")
}

/// `−[log D(real) + log(1 − D(fake))]` for given logits.
pub fn discriminator_loss(real_logit: f64, fake_logit: f64) -> f64 {
    -(log_sigmoid(real_logit) + log_sigmoid(-fake_logit))
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    crate::diffcore::apply_activation(crate::diffcore::Activation::Sigmoid, x)
}

fn ensure_finite(p: &crate::diffcore::ParamSet, what: &str) -> Result<()> {
    for (name, e) in p.iter() {
        if !e.tensor.is_finite() {
            return Err(Error::Numeric(format!("{what} parameter {name} became non-finite")));
        }
    }
    Ok(())
}
