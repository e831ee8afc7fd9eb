use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mend_core::metrics::{acd, evaluate_object, ObjectMetrics};
use mend_core::nets::{Decoder, Discriminator, Encoder};
use mend_core::recon::{fuse_multicode, optimize_codes, random_code, Observation, OptimConfig, OptimResult};
use mend_core::rng::derive_seed;
use mend_core::shapes::{uniform_points, Dataset, TriangleMesh};
use mend_core::train::{
    build_pseudo_gt, finetune, stage1_train, stage2_train, FinetuneState, Stage1State, Stage2Config, Stage2Item,
    Stage2State,
};

use crate::config::ExperimentConfig;
use crate::data::{ground_truth, observation, sparse_split, generate_split};
use crate::config::Split;
use crate::error::{usage, CliResult};
use crate::parallel::try_par_map;

/// Reconstruction setting. The first five are the encoder/discriminator
/// switch grid; the rest compare multi-code fusion and fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Encoder,
    EncoderDisTrain,
    DisInference,
    Full,
    Multicode,
    Frozen,
    Finetuned,
}

/// Which components were trained and which are used at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub train_encoder: bool,
    pub train_discriminator: bool,
    pub infer_encoder: bool,
    pub infer_discriminator: bool,
}

impl Variant {
    pub const GRID: [Variant; 5] = [
        Variant::Baseline,
        Variant::Encoder,
        Variant::EncoderDisTrain,
        Variant::DisInference,
        Variant::Full,
    ];
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::Encoder,
        Variant::EncoderDisTrain,
        Variant::DisInference,
        Variant::Full,
        Variant::Multicode,
        Variant::Frozen,
        Variant::Finetuned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Encoder => "encoder",
            Variant::EncoderDisTrain => "encoder_dis_train",
            Variant::DisInference => "dis_inference",
            Variant::Full => "full",
            Variant::Multicode => "multicode",
            Variant::Frozen => "sparse_frozen",
            Variant::Finetuned => "sparse_finetuned",
        }
    }

    pub fn switches(self) -> Switches {
        let s = |a, b, c, d| Switches {
            train_encoder: a,
            train_discriminator: b,
            infer_encoder: c,
            infer_discriminator: d,
        };
        match self {
            Variant::Baseline => s(false, false, false, false),
            Variant::Encoder => s(true, false, true, false),
            Variant::EncoderDisTrain => s(true, true, true, false),
            Variant::DisInference => s(true, true, false, true),
            Variant::Full | Variant::Multicode | Variant::Frozen | Variant::Finetuned => s(true, true, true, true),
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }
}

/// Datasets of one root seed.
pub struct ExperimentData {
    pub train: Dataset,
    pub eval: Dataset,
    pub train_sparse: Dataset,
    pub eval_sparse: Dataset,
}

impl ExperimentData {
    pub fn generate(cfg: &ExperimentConfig, threads: usize) -> CliResult<Self> {
        Ok(Self {
            train: generate_split(&cfg.data, cfg.seed, Split::Train, threads)?,
            eval: generate_split(&cfg.data, cfg.seed, Split::Eval, threads)?,
            train_sparse: sparse_split(&cfg.data, cfg.seed, Split::Train, threads)?,
            eval_sparse: sparse_split(&cfg.data, cfg.seed, Split::Eval, threads)?,
        })
    }
}

/// Networks of every training configuration the variants need.
pub struct Models {
    pub stage1: Stage1State,
    /// Encoder and discriminator trained adversarially.
    pub full: Stage2State,
    /// Encoder trained without a discriminator.
    pub plain: Stage2State,
    pub finetuned: FinetuneState,
}

impl Models {
    pub fn decoder(&self) -> &Decoder {
        &self.stage1.decoder
    }
}

/// Pseudo ground truth and training material for Stage 2.
pub fn stage2_items(stage1: &Stage1State, train: &Dataset, cfg: &Stage2Config) -> CliResult<Vec<Stage2Item>> {
    train
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let scans: Vec<_> = r.scans.iter().filter(|c| c.len() >= 2).map(|c| c.points.clone()).collect();
            if scans.is_empty() {
                return Err(usage(format!("training shape {i} has no usable scan")));
            }
            let u = uniform_points(cfg.dis_uniform, cfg.seed, &format!("pseudo-uniform-{i}"));
            let pseudo = build_pseudo_gt(&stage1.decoder, &stage1.code(i)?, &u, &scans)?;
            Ok(Stage2Item {
                samples: r.samples.clone(),
                scans,
                pseudo,
            })
        })
        .collect()
}

pub fn sparse_observations(ds: &Dataset, cfg: &ExperimentConfig) -> CliResult<Vec<Observation>> {
    ds.records
        .iter()
        .enumerate()
        .map(|(j, r)| observation(r, 0, derive_seed(cfg.seed, "sparse-obs", j as u64)))
        .collect()
}

pub fn eval_observations(ds: &Dataset, cfg: &ExperimentConfig) -> CliResult<Vec<Observation>> {
    ds.records
        .iter()
        .enumerate()
        .map(|(j, r)| observation(r, cfg.data.observation_points, derive_seed(cfg.seed, "eval-obs", j as u64)))
        .collect()
}

pub fn train_models(cfg: &ExperimentConfig, data: &ExperimentData, timings: &mut BTreeMap<String, f64>) -> CliResult<Models> {
    let arch = cfg.arch.architecture();
    let samples: Vec<_> = data.train.records.iter().map(|r| r.samples.clone()).collect();
    let t = Instant::now();
    let stage1 = stage1_train(&samples, &arch.decoder, &cfg.stage1)?;
    timings.insert("stage1".into(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let items = stage2_items(&stage1, &data.train, &cfg.stage2)?;
    let full = stage2_train(&stage1.decoder, &items, &arch, &cfg.stage2)?;
    timings.insert("stage2".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let plain_cfg = Stage2Config {
        adversarial: false,
        ..cfg.stage2.clone()
    };
    let plain = stage2_train(&stage1.decoder, &items, &arch, &plain_cfg)?;
    timings.insert("stage2_plain".into(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let sparse = sparse_observations(&data.train_sparse, cfg)?;
    let finetuned = finetune(&full.encoder, &stage1.decoder, Some(&full.discriminator), &sparse, &cfg.finetune)?;
    timings.insert("finetune".into(), t.elapsed().as_secs_f64());
    Ok(Models {
        stage1,
        full,
        plain,
        finetuned,
    })
}

/// Optimizer settings of object `j`.
pub fn object_optim(cfg: &ExperimentConfig, j: usize) -> OptimConfig {
    OptimConfig {
        seed: derive_seed(cfg.optim.seed, "object", j as u64),
        ..cfg.optim.clone()
    }
}

/// Where the optimization starts.
#[derive(Clone, Copy)]
pub enum Init<'a> {
    Random,
    Encoder(&'a Encoder),
}

/// Optimizes codes for one observation and extracts the mesh; `fused`
/// jitters the initial code into several codes fused in the decoder.
pub fn reconstruct_with(
    decoder: &Decoder,
    init: Init,
    disc: Option<&Discriminator>,
    fused: bool,
    obs: &Observation,
    cfg: &ExperimentConfig,
    optim: &OptimConfig,
) -> CliResult<(OptimResult, TriangleMesh)> {
    let z0 = match init {
        Init::Encoder(e) => e.encode(&obs.surface)?,
        Init::Random => random_code(decoder.arch.code_dim, optim.init_sigma, optim.seed),
    };
    if fused {
        return Ok(fuse_multicode(decoder, disc, obs, &z0, &cfg.fusion, optim, cfg.eval.resolution)?);
    }
    let res = optimize_codes(decoder, disc, obs, vec![z0], None, optim)?;
    let mesh = res.mesh(decoder, cfg.eval.resolution)?;
    Ok((res, mesh))
}

/// Runs one variant on one observation and extracts its mesh.
pub fn reconstruct(
    variant: Variant,
    models: &Models,
    obs: &Observation,
    cfg: &ExperimentConfig,
    optim: &OptimConfig,
) -> CliResult<(OptimResult, TriangleMesh)> {
    let sw = variant.switches();
    let encoder: &Encoder = match variant {
        Variant::Encoder => &models.plain.encoder,
        Variant::Finetuned => &models.finetuned.encoder,
        _ => &models.full.encoder,
    };
    let init = if sw.infer_encoder { Init::Encoder(encoder) } else { Init::Random };
    let disc = sw.infer_discriminator.then_some(&models.full.discriminator);
    reconstruct_with(models.decoder(), init, disc, variant == Variant::Multicode, obs, cfg, optim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub objects: Vec<ObjectMetrics>,
    /// Wall-clock time; kept out of stored results so they are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl VariantResult {
    /// Mean ACD over non-empty reconstructions.
    pub fn mean_acd(&self) -> f64 {
        mend_core::metrics::MetricReport::new(self.objects.clone()).summary().mean_acd
    }

    pub fn mean_recall(&self) -> f64 {
        mend_core::metrics::MetricReport::new(self.objects.clone()).summary().mean_recall
    }

    pub fn empty(&self) -> usize {
        self.objects.iter().filter(|o| o.empty).count()
    }
}

/// Reconstructs and scores every evaluation object under `variant`.
pub fn evaluate_variant(
    variant: Variant,
    models: &Models,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    threads: usize,
) -> CliResult<VariantResult> {
    let t = Instant::now();
    let sparse = matches!(variant, Variant::Frozen | Variant::Finetuned);
    let obs = if sparse {
        sparse_observations(&data.eval_sparse, cfg)?
    } else {
        eval_observations(&data.eval, cfg)?
    };
    let records = &data.eval.records;
    let objects = try_par_map(threads, &obs, |j, o| {
        let (_, mesh) = reconstruct(variant, models, o, cfg, &object_optim(cfg, j))?;
        let gt = ground_truth(records[j].seed, cfg.data.gt_points);
        Ok::<_, crate::error::CliError>(evaluate_object(
            crate::data::object_id(j),
            &gt,
            &mesh,
            cfg.eval.recall_threshold,
        )?)
    })?;
    Ok(VariantResult {
        variant,
        objects,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Symmetric mean surface distance between two meshes.
pub fn mutual_acd(a: &TriangleMesh, b: &TriangleMesh, samples: usize, seed: u64) -> CliResult<f64> {
    if a.is_empty() || b.is_empty() {
        return Ok(if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY });
    }
    let pa = a.sample_surface(samples, derive_seed(seed, "mutual", 0));
    let pb = b.sample_surface(samples, derive_seed(seed, "mutual", 1));
    Ok(0.5 * (acd(&pa, b)? + acd(&pb, a)?))
}

/// Spread of reconstructions of one sparse scan across optimizer seeds,
/// against the resolution floor of the mesh pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instability {
    pub scan_points: usize,
    pub baseline_spread: f64,
    pub baseline_floor: f64,
    pub regularized_spread: f64,
    pub regularized_floor: f64,
}

impl Instability {
    pub fn baseline_unstable(&self) -> bool {
        self.baseline_spread > 5.0 * self.baseline_floor
    }

    pub fn regularized_stable(&self) -> bool {
        self.regularized_spread <= 5.0 * self.regularized_floor
    }
}

/// Two seeds of the baseline and of the full pipeline on the sparse scan of
/// evaluation object 0. The floor of a setting is the mutual distance
/// between its first run's field extracted at resolution `r` and `r + 1`:
/// reruns of one seed are bitwise identical, so this extraction noise is the
/// smallest difference the comparison can resolve.
pub fn instability(models: &Models, data: &ExperimentData, cfg: &ExperimentConfig) -> CliResult<Instability> {
    let obs = &sparse_observations(&data.eval_sparse, cfg)?[0];
    let r = cfg.eval.resolution;
    let dec = models.decoder();
    let run = |variant: Variant, k: u64| -> CliResult<OptimResult> {
        let optim = OptimConfig {
            seed: derive_seed(cfg.optim.seed, "instability", k),
            ..cfg.optim.clone()
        };
        Ok(reconstruct(variant, models, obs, cfg, &optim)?.0)
    };
    let mut out = [0.0; 4];
    for (slot, variant) in [Variant::Baseline, Variant::Full].into_iter().enumerate() {
        let a = run(variant, 0)?;
        let b = run(variant, 1)?;
        let ma = a.mesh(dec, r)?;
        let mb = b.mesh(dec, r)?;
        let ma_fine = a.mesh(dec, r + 1)?;
        out[2 * slot] = mutual_acd(&ma, &mb, 4000, cfg.seed)?;
        out[2 * slot + 1] = mutual_acd(&ma, &ma_fine, 4000, cfg.seed)?;
    }
    Ok(Instability {
        scan_points: obs.surface.len(),
        baseline_spread: out[0],
        baseline_floor: out[1],
        regularized_spread: out[2],
        regularized_floor: out[3],
    })
}

/// Everything measured for one root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub config_hash: String,
    pub variants: Vec<VariantResult>,
    pub code_gap: (f64, f64),
    pub stage1_final_data: f64,
    pub instability: Instability,
    /// Wall-clock times; recorded in the run manifest, not the stored result.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl SeedResult {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn mean_acd(&self, v: Variant) -> f64 {
        self.variant(v).map_or(f64::NAN, VariantResult::mean_acd)
    }
}

pub fn run_seed(base: &ExperimentConfig, seed: u64, threads: usize) -> CliResult<(SeedResult, Models, ExperimentData)> {
    let cfg = base.with_seed(seed);
    let mut timings = BTreeMap::new();
    let t = Instant::now();
    let data = ExperimentData::generate(&cfg, threads)?;
    timings.insert("data".into(), t.elapsed().as_secs_f64());
    let models = train_models(&cfg, &data, &mut timings)?;
    let mut variants = Vec::new();
    for v in Variant::ALL {
        let r = evaluate_variant(v, &models, &data, &cfg, threads)?;
        timings.insert(format!("eval_{}", v.name()), r.seconds);
        variants.push(r);
    }
    let t = Instant::now();
    let inst = instability(&models, &data, &cfg)?;
    timings.insert("instability".into(), t.elapsed().as_secs_f64());
    let gap = models.full.log.column("code_gap").unwrap_or_default();
    let result = SeedResult {
        seed,
        config_hash: cfg.hash(),
        variants,
        code_gap: (
            gap.first().copied().unwrap_or(f64::NAN),
            gap.last().copied().unwrap_or(f64::NAN),
        ),
        stage1_final_data: models.stage1.log.last("data").unwrap_or(f64::NAN),
        instability: inst,
        timings,
    };
    Ok((result, models, data))
}
