use std::collections::BTreeMap;

use super::arch::DiscriminatorArch;
use super::init::{kaiming_uniform, xavier_uniform};
use crate::diffcore::{
    BatchMoments, Bindings, Branch, DualBatchNorm, NormMode, ParamSet, Tape, Tensor, Var, BN_EPS,
    BN_MOMENTUM,
};
use crate::error::{arg_err, dim_err, Result};
use crate::rng::rng_for;

/// Shape discriminator over a set of `(x, s)` samples: per-point layers
/// with batch norm kept separately for real and fake sets, a max-pool, and
/// a scalar sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub arch: DiscriminatorArch,
    pub params: ParamSet,
    pub bn: Vec<DualBatchNorm>,
}

impl Discriminator {
    pub fn expected_shapes(arch: &DiscriminatorArch) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        let mut inp = 4;
        for (i, &w) in arch.widths.iter().enumerate() {
            out.insert(format!("l{i}/w"), vec![w, inp]);
            out.insert(format!("l{i}/b"), vec![w]);
            out.insert(format!("l{i}/gamma"), vec![w]);
            out.insert(format!("l{i}/beta"), vec![w]);
            inp = w;
        }
        out.insert("head/w".into(), vec![1, inp]);
        out.insert("head/b".into(), vec![1]);
        out
    }

    /// Fresh parameters. With `zero_head` the output layer starts at zero,
    /// so every input scores exactly 0.5.
    pub fn init(arch: &DiscriminatorArch, seed: u64, zero_head: bool) -> Self {
        let mut rng = rng_for(seed, "init-discriminator", 0);
        let mut params = ParamSet::new();
        let mut inp = 4;
        for (i, &w) in arch.widths.iter().enumerate() {
            let ins = |p: &mut ParamSet, n: &str, t| p.insert(format!("l{i}/{n}"), t, true).expect("fresh names");
            ins(&mut params, "w", kaiming_uniform(w, inp, &mut rng));
            ins(&mut params, "b", Tensor::zeros(&[w]));
            ins(&mut params, "gamma", Tensor::filled(&[w], 1.0));
            ins(&mut params, "beta", Tensor::zeros(&[w]));
            inp = w;
        }
        let head = if zero_head {
            Tensor::zeros(&[1, inp])
        } else {
            xavier_uniform(1, inp, &mut rng)
        };
        params.insert("head/w", head, true).expect("fresh names");
        params.insert("head/b", Tensor::zeros(&[1]), true).expect("fresh names");
        Self {
            arch: arch.clone(),
            bn: arch.widths.iter().map(|&w| DualBatchNorm::new(w)).collect(),
            params,
        }
    }

    /// Logit `[1]` for the sample set `x[n × 3]`, `s[n]`. `Train` and
    /// `Batch` normalize over the set and need `n ≥ 2`; `Train` returns the
    /// per-layer moments for [`Discriminator::absorb`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        x: Var,
        s: Var,
        branch: Branch,
        mode: NormMode,
    ) -> Result<(Var, Vec<BatchMoments>)> {
        let n = tape.value(x).rows();
        if tape.value(x).shape() != [n, 3] || tape.value(s).shape() != [n] {
            return Err(dim_err!(
                "discriminator inputs {:?} and {:?}",
                tape.value(x).shape(),
                tape.value(s).shape()
            ));
        }
        if n == 0 {
            return Err(arg_err!("discriminator sample set is empty"));
        }
        if mode != NormMode::Eval && n < 2 {
            return Err(arg_err!("batch-normalized discriminator needs at least 2 samples, got {n}"));
        }
        let col = tape.reshape(s, vec![n, 1])?;
        let mut h = tape.concat_cols(x, col)?;
        let mut moments = Vec::new();
        for i in 0..self.arch.widths.len() {
            let pre = tape.affine(h, b.var(&format!("l{i}/w"))?, b.var(&format!("l{i}/b"))?)?;
            let (gamma, beta) = (b.var(&format!("l{i}/gamma"))?, b.var(&format!("l{i}/beta"))?);
            let normed = match mode {
                NormMode::Train | NormMode::Batch => {
                    let (y, m) = tape.batch_norm(pre, gamma, beta, BN_EPS)?;
                    if mode == NormMode::Train {
                        moments.push(m);
                    }
                    y
                }
                NormMode::Eval => {
                    let st = self.bn[i].branch(branch);
                    tape.normalize(pre, gamma, beta, st.mean.data(), st.var.data(), BN_EPS)?
                }
            };
            h = tape.relu(normed)?;
        }
        let pooled = tape.maxpool_rows(h)?;
        let logit = tape.affine(pooled, b.var("head/w")?, b.var("head/b")?)?;
        Ok((logit, moments))
    }

    /// Folds training moments into the statistics of `branch` only.
    pub fn absorb(&mut self, branch: Branch, moments: &[BatchMoments]) -> Result<()> {
        for (bn, m) in self.bn.iter_mut().zip(moments) {
            bn.branch_mut(branch).update(m, BN_MOMENTUM)?;
        }
        Ok(())
    }

    /// Probability without gradients.
    pub fn probability(&self, x: &[[f64; 3]], s: &[f64], branch: Branch, mode: NormMode) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false)?;
        let xv = tape.constant(Tensor::from_points(x))?;
        let sv = tape.constant(Tensor::vector(s.to_vec()))?;
        let (logit, _) = self.forward(&mut tape, &b, xv, sv, branch, mode)?;
        let p = tape.sigmoid(logit)?;
        tape.value(p).item()
    }
}
