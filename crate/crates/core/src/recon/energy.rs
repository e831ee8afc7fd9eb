use serde::{Deserialize, Serialize};

use crate::diffcore::{Bindings, Branch, NormMode, Tape, Tensor, Var};
use crate::error::Result;
use crate::nets::{Decoder, Discriminator};

/// Relative weights of the data, code-norm and discriminator energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyWeights {
    pub data: f64,
    pub reg: f64,
    pub dis: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            data: 2.0,
            reg: 1.0,
            dis: 1.0,
        }
    }
}

/// `|clamp(a, ±δ) − clamp(b, ±δ)|`.
pub fn rho(a: f64, b: f64, delta: f64) -> f64 {
    (a.clamp(-delta, delta) - b.clamp(-delta, delta)).abs()
}

/// Summed clamped L1 between predictions and targets.
pub fn e_data(pred: &[f64], targets: &[f64], delta: f64) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| rho(*t, *p, delta)).sum()
}

/// `‖z‖²`.
pub fn e_reg(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// `−ln D`.
pub fn e_dis(probability: f64) -> f64 {
    -probability.ln()
}

fn clamped_l1_terms(tape: &mut Tape, pred: Var, targets: &[f64], delta: f64) -> Result<Var> {
    let clamped_t: Vec<f64> = targets.iter().map(|t| t.clamp(-delta, delta)).collect();
    let t = tape.constant(Tensor::vector(clamped_t))?;
    let p = tape.clamp(pred, -delta, delta)?;
    let d = tape.sub(p, t)?;
    tape.abs(d)
}

/// Summed clamped L1 on the tape; `targets` are constants.
pub fn clamped_l1_sum(tape: &mut Tape, pred: Var, targets: &[f64], delta: f64) -> Result<Var> {
    let a = clamped_l1_terms(tape, pred, targets, delta)?;
    tape.sum(a)
}

/// Mean clamped L1 on the tape; `targets` are constants.
pub fn clamped_l1_mean(tape: &mut Tape, pred: Var, targets: &[f64], delta: f64) -> Result<Var> {
    let a = clamped_l1_terms(tape, pred, targets, delta)?;
    tape.mean(a)
}

/// `−log D` of the fake branch for a predicted field at `x`, with the
/// discriminator normalizing over the sample set itself.
pub fn neg_log_d(tape: &mut Tape, disc: &Discriminator, db: &Bindings, x: Var, s: Var) -> Result<Var> {
    let (logit, _) = disc.forward(tape, db, x, s, Branch::Fake, NormMode::Batch)?;
    let ls = tape.log_sigmoid(logit)?;
    let total = tape.sum(ls)?;
    tape.scale(total, -1.0)
}

/// Tape handles of one energy evaluation.
pub struct EnergyGraph {
    pub total: Var,
    pub data: Var,
    pub reg: Var,
    pub dis: Option<Var>,
}

/// Inputs for [`build_energy`] that stay fixed within an iteration.
pub struct EnergyInputs<'a> {
    pub decoder: &'a Decoder,
    pub dec_bind: &'a Bindings,
    pub disc: Option<(&'a Discriminator, &'a Bindings)>,
    pub obs_x: Var,
    pub obs_targets: &'a [f64],
    pub dis_x: Option<Var>,
    pub split: Option<usize>,
    pub delta: f64,
    pub weights: EnergyWeights,
}

/// `w_data·E_data + w_reg·Σ‖z_k‖² + w_dis·E_dis` for one or more codes.
pub fn build_energy(tape: &mut Tape, inp: &EnergyInputs, zs: &[Var]) -> Result<EnergyGraph> {
    let field = |tape: &mut Tape, x: Var| match inp.split {
        None => inp.decoder.forward(tape, inp.dec_bind, zs[0], x),
        Some(l) => inp.decoder.forward_fused(tape, inp.dec_bind, zs, x, l),
    };
    let pred = field(tape, inp.obs_x)?;
    let data = clamped_l1_sum(tape, pred, inp.obs_targets, inp.delta)?;
    let norms = zs
        .iter()
        .map(|&z| tape.sum_squares(z))
        .collect::<Result<Vec<_>>>()?;
    let reg = tape.add_all(&norms)?;
    let mut terms = vec![tape.scale(data, inp.weights.data)?, tape.scale(reg, inp.weights.reg)?];
    let mut dis = None;
    if let (Some((d, db)), Some(xd)) = (inp.disc, inp.dis_x) {
        let s = field(tape, xd)?;
        let e = neg_log_d(tape, d, db, xd, s)?;
        terms.push(tape.scale(e, inp.weights.dis)?);
        dis = Some(e);
    }
    let total = tape.add_all(&terms)?;
    Ok(EnergyGraph {
        total,
        data,
        reg,
        dis,
    })
}
