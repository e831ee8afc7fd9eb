use std::collections::BTreeMap;

use super::arch::{EncoderArch, MAX_ENCODER_POINTS};
use super::init::{kaiming_uniform, xavier_uniform};
use crate::diffcore::{
    BatchMoments, Bindings, NormMode, ParamSet, RunningStats, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM,
};
use crate::error::{arg_err, Result};
use crate::rng::rng_for;
use crate::Point;

/// Stacked PointNet: a per-point block, max-pool, the pooled feature
/// appended to every point, a second per-point block, max-pool, then a
/// linear layer with batch norm and tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub arch: EncoderArch,
    pub params: ParamSet,
    pub bn: RunningStats,
}

/// (name, out, in, relu) for every affine layer.
fn layers(arch: &EncoderArch) -> [(&'static str, usize, usize, bool); 5] {
    let [a1, a2] = arch.block1;
    let [b1, b2] = arch.block2;
    [
        ("b1l0", a1, 3, true),
        ("b1l1", a2, a1, false),
        ("b2l0", b1, 2 * a2, true),
        ("b2l1", b2, b1, false),
        ("head", arch.code_dim, b2, false),
    ]
}

impl Encoder {
    pub fn expected_shapes(arch: &EncoderArch) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        for (name, o, i, _) in layers(arch) {
            out.insert(format!("{name}/w"), vec![o, i]);
            out.insert(format!("{name}/b"), vec![o]);
        }
        out.insert("bn/gamma".into(), vec![arch.code_dim]);
        out.insert("bn/beta".into(), vec![arch.code_dim]);
        out
    }

    pub fn init(arch: &EncoderArch, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init-encoder", 0);
        let mut params = ParamSet::new();
        for (name, o, i, relu) in layers(arch) {
            let w = if relu {
                kaiming_uniform(o, i, &mut rng)
            } else {
                xavier_uniform(o, i, &mut rng)
            };
            params.insert(format!("{name}/w"), w, true).expect("fresh names");
            params.insert(format!("{name}/b"), Tensor::zeros(&[o]), true).expect("fresh names");
        }
        params.insert("bn/gamma", Tensor::filled(&[arch.code_dim], 1.0), true).expect("fresh names");
        params.insert("bn/beta", Tensor::zeros(&[arch.code_dim]), true).expect("fresh names");
        Self {
            arch: arch.clone(),
            params,
            bn: RunningStats::new(arch.code_dim),
        }
    }

    /// Pooled feature of one cloud `x[k × 3]`, before the head.
    fn global_feature(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        let k = tape.value(x).rows();
        if k == 0 {
            return Err(arg_err!("encoder input is empty"));
        }
        if k > MAX_ENCODER_POINTS {
            return Err(arg_err!("encoder input has {k} points, limit is {MAX_ENCODER_POINTS}"));
        }
        let h = tape.affine(x, b.var("b1l0/w")?, b.var("b1l0/b")?)?;
        let h = tape.relu(h)?;
        let f = tape.affine(h, b.var("b1l1/w")?, b.var("b1l1/b")?)?;
        let g = tape.maxpool_rows(f)?;
        let h = tape.shared_affine(f, g, b.var("b2l0/w")?, b.var("b2l0/b")?)?;
        let h = tape.relu(h)?;
        let f2 = tape.affine(h, b.var("b2l1/w")?, b.var("b2l1/b")?)?;
        tape.maxpool_rows(f2)
    }

    /// Codes `[B × code_dim]` for a batch of clouds. `Train` and `Batch`
    /// normalize over the batch, need at least two clouds, and return the
    /// batch moments; `Eval` uses the running statistics. The running
    /// statistics are not touched here, see [`Encoder::absorb`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        clouds: &[Var],
        mode: NormMode,
    ) -> Result<(Var, Option<BatchMoments>)> {
        if clouds.is_empty() {
            return Err(arg_err!("encoder batch is empty"));
        }
        let feats = clouds
            .iter()
            .map(|&x| self.global_feature(tape, b, x))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.stack_rows(&feats)?;
        let pre = tape.affine(stacked, b.var("head/w")?, b.var("head/b")?)?;
        let (gamma, beta) = (b.var("bn/gamma")?, b.var("bn/beta")?);
        let (normed, moments) = match mode {
            NormMode::Train | NormMode::Batch => {
                let (y, m) = tape.batch_norm(pre, gamma, beta, BN_EPS)?;
                (y, (mode == NormMode::Train).then_some(m))
            }
            NormMode::Eval => {
                let y = tape.normalize(pre, gamma, beta, self.bn.mean.data(), self.bn.var.data(), BN_EPS)?;
                (y, None)
            }
        };
        Ok((tape.tanh(normed)?, moments))
    }

    /// Sets the output normalization so that standardized pre-activations
    /// map to codes with the per-dimension mean and spread of `targets`.
    pub fn calibrate_output(&mut self, targets: &[Vec<f64>]) -> Result<()> {
        let d = self.arch.code_dim;
        if targets.is_empty() || targets.iter().any(|t| t.len() != d) {
            return Err(arg_err!("calibration needs non-empty codes of length {d}"));
        }
        let n = targets.len() as f64;
        let mut gamma = vec![0.0; d];
        let mut beta = vec![0.0; d];
        for k in 0..d {
            let mean = targets.iter().map(|t| t[k]).sum::<f64>() / n;
            let var = targets.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>() / n;
            gamma[k] = var.sqrt().max(1e-3);
            beta[k] = mean.clamp(-0.99, 0.99).atanh();
        }
        self.params.set("bn/gamma", Tensor::vector(gamma))?;
        self.params.set("bn/beta", Tensor::vector(beta))
    }

    /// Folds training-batch moments into the running statistics.
    pub fn absorb(&mut self, moments: Option<BatchMoments>) -> Result<()> {
        match moments {
            Some(m) => self.bn.update(&m, BN_MOMENTUM),
            None => Ok(()),
        }
    }

    /// Code of one cloud using the running statistics.
    pub fn encode(&self, cloud: &[Point]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false)?;
        let x = tape.constant(Tensor::from_points(cloud))?;
        let (z, _) = self.forward(&mut tape, &b, &[x], NormMode::Eval)?;
        Ok(tape.value(z).data().to_vec())
    }
}
