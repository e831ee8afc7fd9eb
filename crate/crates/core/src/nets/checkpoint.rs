use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use super::arch::{DecoderArch, DiscriminatorArch, EncoderArch};
use super::decoder::Decoder;
use super::discriminator::Discriminator;
use super::encoder::Encoder;
use crate::diffcore::{Branch, DualBatchNorm, ParamSet, RunningStats};
use crate::error::{dim_err, Error, Result};

/// A network that can be written as a parameter file plus an architecture
/// descriptor, and rebuilt only when the stored shapes match it.
pub trait Checkpointed: Sized {
    const KIND: &'static str;
    type Arch: Serialize + DeserializeOwned;

    fn arch(&self) -> &Self::Arch;
    fn expected(arch: &Self::Arch) -> BTreeMap<String, Vec<usize>>;
    fn learnable(&self) -> &ParamSet;
    /// Non-learnable state such as running statistics.
    fn stats(&self) -> Result<ParamSet>;
    fn assemble(arch: Self::Arch, params: ParamSet, stats: &ParamSet) -> Result<Self>;
}

/// Checks `params` against the shapes an architecture calls for, naming
/// every missing, extra or mis-shaped entry.
pub fn validate_shapes(kind: &str, params: &ParamSet, expected: &BTreeMap<String, Vec<usize>>) -> Result<()> {
    let mut problems = Vec::new();
    for (name, shape) in expected {
        match params.entry(name) {
            None => problems.push(format!("missing {name}")),
            Some(e) if e.tensor.shape() != shape.as_slice() => problems.push(format!(
                "{name}: stored {:?}, architecture needs {:?}",
                e.tensor.shape(),
                shape
            )),
            Some(_) => {}
        }
    }
    for name in params.names() {
        if !expected.contains_key(name) {
            problems.push(format!("unexpected {name}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(dim_err!("{kind} checkpoint has the wrong parameter shapes for its architecture: {}", problems.join("; ")))
    }
}

pub fn save_net<N: Checkpointed>(net: &N, stem: &Path, extra: serde_json::Value) -> Result<()> {
    let mut all = ParamSet::new();
    all.merge_prefixed("net", net.learnable())?;
    all.merge_prefixed("stats", &net.stats()?)?;
    let meta = json!({
        "kind": N::KIND,
        "arch": net.arch(),
        "extra": extra,
    });
    all.save(stem, meta)
}

/// Loads a network, returning the `extra` block stored with it.
pub fn load_net<N: Checkpointed>(stem: &Path) -> Result<(N, serde_json::Value)> {
    let (all, meta) = ParamSet::load(stem)?;
    let kind = meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if kind != N::KIND {
        return Err(Error::Format(format!(
            "{} holds a {kind:?} checkpoint, expected {:?}",
            stem.display(),
            N::KIND
        )));
    }
    let arch: N::Arch = serde_json::from_value(meta.get("arch").cloned().unwrap_or_default())?;
    let params = all.extract_prefixed("net");
    validate_shapes(N::KIND, &params, &N::expected(&arch))?;
    let net = N::assemble(arch, params, &all.extract_prefixed("stats"))?;
    Ok((net, meta.get("extra").cloned().unwrap_or_default()))
}

/// Like [`load_net`] but also requires the stored architecture to equal `arch`.
pub fn load_net_as<N>(stem: &Path, arch: &N::Arch) -> Result<(N, serde_json::Value)>
where
    N: Checkpointed,
    N::Arch: PartialEq + std::fmt::Debug,
{
    let (net, extra) = load_net::<N>(stem)?;
    if net.arch() != arch {
        // report the per-tensor differences rather than the descriptors
        validate_shapes(N::KIND, net.learnable(), &N::expected(arch))?;
        return Err(dim_err!(
            "{} architecture {:?} differs from the configured {:?}",
            N::KIND,
            net.arch(),
            arch
        ));
    }
    Ok((net, extra))
}

fn stats_get(stats: &ParamSet, name: &str, len: usize) -> Result<crate::diffcore::Tensor> {
    let t = stats.get(name)?;
    if t.shape() != [len] {
        return Err(dim_err!("statistics {name} has shape {:?}, expected [{len}]", t.shape()));
    }
    Ok(t.clone())
}

fn running(stats: &ParamSet, prefix: &str, len: usize) -> Result<RunningStats> {
    Ok(RunningStats {
        mean: stats_get(stats, &format!("{prefix}/mean"), len)?,
        var: stats_get(stats, &format!("{prefix}/var"), len)?,
    })
}

fn put_running(out: &mut ParamSet, prefix: &str, r: &RunningStats) -> Result<()> {
    out.insert(format!("{prefix}/mean"), r.mean.clone(), false)?;
    out.insert(format!("{prefix}/var"), r.var.clone(), false)
}

impl Checkpointed for Decoder {
    const KIND: &'static str = "decoder";
    type Arch = DecoderArch;

    fn arch(&self) -> &DecoderArch {
        &self.arch
    }
    fn expected(arch: &DecoderArch) -> BTreeMap<String, Vec<usize>> {
        Decoder::expected_shapes(arch)
    }
    fn learnable(&self) -> &ParamSet {
        &self.params
    }
    fn stats(&self) -> Result<ParamSet> {
        Ok(ParamSet::new())
    }
    fn assemble(arch: DecoderArch, params: ParamSet, _: &ParamSet) -> Result<Self> {
        Ok(Decoder { arch, params })
    }
}

impl Checkpointed for Encoder {
    const KIND: &'static str = "encoder";
    type Arch = EncoderArch;

    fn arch(&self) -> &EncoderArch {
        &self.arch
    }
    fn expected(arch: &EncoderArch) -> BTreeMap<String, Vec<usize>> {
        Encoder::expected_shapes(arch)
    }
    fn learnable(&self) -> &ParamSet {
        &self.params
    }
    fn stats(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        put_running(&mut p, "bn", &self.bn)?;
        Ok(p)
    }
    fn assemble(arch: EncoderArch, params: ParamSet, stats: &ParamSet) -> Result<Self> {
        let bn = running(stats, "bn", arch.code_dim)?;
        Ok(Encoder { arch, params, bn })
    }
}

impl Checkpointed for Discriminator {
    const KIND: &'static str = "discriminator";
    type Arch = DiscriminatorArch;

    fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }
    fn expected(arch: &DiscriminatorArch) -> BTreeMap<String, Vec<usize>> {
        Discriminator::expected_shapes(arch)
    }
    fn learnable(&self) -> &ParamSet {
        &self.params
    }
    fn stats(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        for (i, bn) in self.bn.iter().enumerate() {
            for br in [Branch::Real, Branch::Fake] {
                put_running(&mut p, &format!("l{i}/{}", br.as_str()), bn.branch(br))?;
            }
        }
        Ok(p)
    }
    fn assemble(arch: DiscriminatorArch, params: ParamSet, stats: &ParamSet) -> Result<Self> {
        let bn = arch
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Ok(DualBatchNorm {
                    real: running(stats, &format!("l{i}/real"), w)?,
                    fake: running(stats, &format!("l{i}/fake"), w)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Discriminator { arch, params, bn })
    }
}
