use std::path::{Path, PathBuf};
use std::time::Instant;

use mend_core::metrics::{cumulative_curves, evaluate_object, MetricReport};
use mend_core::nets::{validate_shapes, Decoder, Discriminator, Encoder};
use mend_core::recon::{extract_mesh, Observation};
use mend_core::shapes::{Dataset, TriangleMesh};
use mend_core::train::{
    run_finetune, run_stage1, run_stage2, FinetuneState, Stage1State, Stage2Config, Stage2State,
};

use crate::config::{ExperimentConfig, Split};
use crate::data::{generate_split, ground_truth, object_id, sparse_split};
use crate::error::{usage, CliError, CliResult};
use crate::manifest::{Output, RunManifest};
use crate::parallel::try_par_map;
use crate::pipeline::{
    eval_observations, object_optim, reconstruct_with, run_seed, sparse_observations, stage2_items, Init, SeedResult,
};
use crate::table::{build_table, AblationTable};

pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Options shared by every command.
#[derive(Clone, Debug)]
pub struct Globals {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
    pub threads: usize,
}

impl Globals {
    fn output(&self, command: &str, resume: bool) -> CliResult<Output> {
        Output::open(
            &self.out,
            RunManifest::new(command, &self.config, self.threads),
            self.force,
            resume,
        )
    }
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.join("index.json").exists() {
        return Err(usage(format!("{} is not a dataset directory", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

fn require_dir(dir: Option<&Path>, what: &str) -> CliResult<PathBuf> {
    let d = dir.ok_or_else(|| usage(format!("{what} checkpoint directory is required")))?;
    let ck = d.join(CHECKPOINT_DIR);
    if !ck.join("state.json").exists() {
        return Err(usage(format!("{} holds no {what} checkpoint", d.display())));
    }
    Ok(ck)
}

fn check_decoder(cfg: &ExperimentConfig, d: &Decoder) -> CliResult<()> {
    let arch = cfg.arch.architecture();
    validate_shapes("decoder", &d.params, &Decoder::expected_shapes(&arch.decoder))?;
    Ok(())
}

fn check_encoder(cfg: &ExperimentConfig, e: &Encoder) -> CliResult<()> {
    let arch = cfg.arch.architecture();
    validate_shapes("encoder", &e.params, &Encoder::expected_shapes(&arch.encoder))?;
    Ok(())
}

fn check_discriminator(cfg: &ExperimentConfig, d: &Discriminator) -> CliResult<()> {
    let arch = cfg.arch.architecture();
    validate_shapes("discriminator", &d.params, &Discriminator::expected_shapes(&arch.discriminator))?;
    Ok(())
}

pub fn load_stage1(cfg: &ExperimentConfig, dir: Option<&Path>) -> CliResult<Stage1State> {
    let s = Stage1State::load(&require_dir(dir, "stage 1")?)?;
    check_decoder(cfg, &s.decoder)?;
    Ok(s)
}

pub fn load_stage2(cfg: &ExperimentConfig, dir: Option<&Path>) -> CliResult<Stage2State> {
    let s = Stage2State::load(&require_dir(dir, "stage 2")?)?;
    check_encoder(cfg, &s.encoder)?;
    check_discriminator(cfg, &s.discriminator)?;
    Ok(s)
}

pub fn load_finetune(cfg: &ExperimentConfig, dir: Option<&Path>) -> CliResult<FinetuneState> {
    let s = FinetuneState::load(&require_dir(dir, "fine-tuning")?)?;
    check_encoder(cfg, &s.encoder)?;
    Ok(s)
}

pub fn gen_data(g: &Globals) -> CliResult<RunManifest> {
    let mut out = g.output("gen-data", false)?;
    let cfg = &g.config;
    for (name, split, sparse) in [
        ("train", Split::Train, false),
        ("eval", Split::Eval, false),
        ("train_sparse", Split::Train, true),
        ("eval_sparse", Split::Eval, true),
    ] {
        let t = Instant::now();
        let ds = if sparse {
            sparse_split(&cfg.data, cfg.seed, split, g.threads)?
        } else {
            generate_split(&cfg.data, cfg.seed, split, g.threads)?
        };
        ds.save(&out.path(name))?;
        out.artifact(&format!("{name}/index.json"));
        out.artifact(&format!("{name}/data.bin"));
        out.time(name, t.elapsed().as_secs_f64());
    }
    out.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Finetune,
}

pub struct TrainArgs {
    pub stage: Stage,
    pub data: PathBuf,
    pub stage1: Option<PathBuf>,
    pub stage2: Option<PathBuf>,
    pub resume: bool,
}

/// Saves `state` atomically enough for resumption: into a sibling
/// directory first, then renamed over the checkpoint.
fn save_checkpoint(root: &Path, save: impl FnOnce(&Path) -> mend_core::error::Result<()>) -> CliResult<()> {
    let tmp = root.join(format!("{CHECKPOINT_DIR}.tmp"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    save(&tmp)?;
    let dst = root.join(CHECKPOINT_DIR);
    if dst.exists() {
        std::fs::remove_dir_all(&dst)?;
    }
    std::fs::rename(&tmp, &dst)?;
    Ok(())
}

fn has_checkpoint(root: &Path) -> bool {
    root.join(CHECKPOINT_DIR).join("state.json").exists()
}

pub fn train(g: &Globals, a: &TrainArgs) -> CliResult<RunManifest> {
    let label = match a.stage {
        Stage::One => "train-1",
        Stage::Two => "train-2",
        Stage::Finetune => "train-finetune",
    };
    // prerequisites first, so a usage error leaves no output behind
    let cfg = &g.config;
    let every = cfg.checkpoint_every.max(1);
    let run = match a.stage {
        Stage::One => train_stage1(g, a, label, every),
        Stage::Two => {
            let s1 = load_stage1(cfg, a.stage1.as_deref())?;
            train_stage2(g, a, label, every, &s1)
        }
        Stage::Finetune => {
            let s1 = load_stage1(cfg, a.stage1.as_deref())?;
            let s2 = load_stage2(cfg, a.stage2.as_deref())?;
            train_finetune(g, a, label, every, &s1, &s2)
        }
    };
    run
}

fn resume_or_init<S>(out: &Output, resume: bool, load: impl FnOnce(&Path) -> mend_core::error::Result<S>, init: impl FnOnce() -> CliResult<S>) -> CliResult<S> {
    if resume && has_checkpoint(&out.root) {
        Ok(load(&out.root.join(CHECKPOINT_DIR))?)
    } else {
        init()
    }
}

fn finish_training<S>(
    mut out: Output,
    result: CliResult<()>,
    state: &S,
    save: impl Fn(&S, &Path) -> mend_core::error::Result<()>,
    csv: String,
    t: Instant,
) -> CliResult<RunManifest> {
    // the training loop rolls back to the last good epoch before reporting
    // an error, so this is the last good state either way
    save_checkpoint(&out.root, |p| save(state, p))?;
    out.write("loss.csv", csv)?;
    out.artifact_tree(CHECKPOINT_DIR)?;
    out.time("train", t.elapsed().as_secs_f64());
    match result {
        Ok(()) => out.finish(),
        Err(e) => {
            out.finish()?;
            Err(e)
        }
    }
}

fn train_stage1(g: &Globals, a: &TrainArgs, label: &str, every: usize) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let ds = load_dataset(&a.data)?;
    let mut out = g.output(label, a.resume)?;
    out.manifest.inputs.push(a.data.display().to_string());
    let arch = cfg.arch.architecture();
    let mut state = resume_or_init(&out, a.resume, Stage1State::load, || {
        Ok(Stage1State::init(&arch.decoder, ds.records.len(), &cfg.stage1)?)
    })?;
    check_decoder(cfg, &state.decoder)?;
    let samples: Vec<_> = ds.records.iter().map(|r| r.samples.clone()).collect();
    let t = Instant::now();
    let root = out.root.clone();
    let result = run_stage1(&mut state, &samples, &cfg.stage1, cfg.stage1.epochs, |s| {
        if s.epoch % every == 0 {
            save_checkpoint(&root, |p| s.save(p)).map_err(|e| mend_core::error::Error::Format(e.to_string()))?;
        }
        Ok(())
    })
    .map_err(CliError::from);
    let csv = state.log.to_csv();
    finish_training(out, result, &state, Stage1State::save, csv, t)
}

fn train_stage2(g: &Globals, a: &TrainArgs, label: &str, every: usize, s1: &Stage1State) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let ds = load_dataset(&a.data)?;
    if ds.records.len() != s1.shape_count() {
        return Err(usage(format!(
            "dataset has {} shapes but the stage 1 checkpoint has {} codes",
            ds.records.len(),
            s1.shape_count()
        )));
    }
    let mut out = g.output(label, a.resume)?;
    out.manifest.inputs.push(a.data.display().to_string());
    let arch = cfg.arch.architecture();
    let s2cfg: Stage2Config = cfg.stage2.clone();
    let items = stage2_items(s1, &ds, &s2cfg)?;
    let mut state = resume_or_init(&out, a.resume, Stage2State::load, || {
        Ok(Stage2State::for_items(&arch, &s2cfg, &items)?)
    })?;
    let t = Instant::now();
    let root = out.root.clone();
    let result = run_stage2(&mut state, &s1.decoder, &items, &s2cfg, s2cfg.epochs, |s| {
        if s.epoch % every == 0 {
            save_checkpoint(&root, |p| s.save(p)).map_err(|e| mend_core::error::Error::Format(e.to_string()))?;
        }
        Ok(())
    })
    .map_err(CliError::from);
    out.write("events.json", serde_json::to_vec_pretty(&state.events)?)?;
    for e in &state.events {
        eprintln!("warning: epoch {}: {}", e.epoch, e.message);
    }
    let csv = state.log.to_csv();
    finish_training(out, result, &state, Stage2State::save, csv, t)
}

fn train_finetune(
    g: &Globals,
    a: &TrainArgs,
    label: &str,
    every: usize,
    s1: &Stage1State,
    s2: &Stage2State,
) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let ds = load_dataset(&a.data)?;
    let obs = sparse_observations(&ds, cfg)?;
    let mut out = g.output(label, a.resume)?;
    out.manifest.inputs.push(a.data.display().to_string());
    let mut state = resume_or_init(&out, a.resume, FinetuneState::load, || {
        Ok(FinetuneState::init(&s2.encoder, &obs, &cfg.finetune)?)
    })?;
    let t = Instant::now();
    let root = out.root.clone();
    let result = run_finetune(
        &mut state,
        &s1.decoder,
        Some(&s2.discriminator),
        &obs,
        &cfg.finetune,
        cfg.finetune.epochs,
        |s| {
            if s.epoch % every == 0 {
                save_checkpoint(&root, |p| s.save(p)).map_err(|e| mend_core::error::Error::Format(e.to_string()))?;
            }
            Ok(())
        },
    )
    .map_err(CliError::from);
    let csv = state.log.to_csv();
    finish_training(out, result, &state, FinetuneState::save, csv, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Regularized,
    Multicode,
}

pub struct ReconstructArgs {
    pub mode: Mode,
    pub stage1: PathBuf,
    pub stage2: Option<PathBuf>,
    pub finetune: Option<PathBuf>,
    pub observations: PathBuf,
    /// Regularized modes without the discriminator term.
    pub no_discriminator: bool,
    /// Use the observation's scans as they are instead of subsampling.
    pub full_scans: bool,
}

pub fn reconstruct_cmd(g: &Globals, a: &ReconstructArgs) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let s1 = load_stage1(cfg, Some(&a.stage1))?;
    let ds = load_dataset(&a.observations)?;
    // baseline never touches encoder or discriminator checkpoints
    let (s2, ft) = if a.mode == Mode::Baseline {
        (None, None)
    } else {
        let s2 = load_stage2(cfg, a.stage2.as_deref())?;
        let ft = match &a.finetune {
            Some(d) => Some(load_finetune(cfg, Some(d))?),
            None => None,
        };
        (Some(s2), ft)
    };
    let init = match (&s2, &ft) {
        (_, Some(f)) => Init::Encoder(&f.encoder),
        (Some(s), None) => Init::Encoder(&s.encoder),
        (None, None) => Init::Random,
    };
    let disc = s2.as_ref().filter(|_| !a.no_discriminator).map(|s| &s.discriminator);
    let obs: Vec<Observation> = if a.full_scans {
        sparse_observations(&ds, cfg)?
    } else {
        eval_observations(&ds, cfg)?
    };
    let mut out = g.output("reconstruct", false)?;
    out.manifest.inputs.push(a.observations.display().to_string());
    let t = Instant::now();
    let fused = a.mode == Mode::Multicode;
    let results = try_par_map(g.threads, &obs, |j, o| {
        reconstruct_with(&s1.decoder, init, disc, fused, o, cfg, &object_optim(cfg, j))
    })?;
    for (j, (res, mesh)) in results.iter().enumerate() {
        let id = object_id(j);
        out.write(&format!("meshes/{id}.obj"), mesh.to_obj())?;
        out.write(&format!("traces/{id}.csv"), res.trace_csv())?;
        out.write(&format!("codes/{id}.json"), serde_json::to_vec(&res.codes)?)?;
    }
    out.manifest.seeds.insert("objects".into(), obs.len() as u64);
    out.time("reconstruct", t.elapsed().as_secs_f64());
    out.finish()
}

pub struct EvaluateArgs {
    pub meshes: PathBuf,
    pub data: PathBuf,
    pub threshold: Option<f64>,
}

pub fn evaluate_cmd(g: &Globals, a: &EvaluateArgs) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let ds = load_dataset(&a.data)?;
    let mut present: Vec<String> = std::fs::read_dir(&a.meshes)
        .map_err(|e| usage(format!("{}: {e}", a.meshes.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "obj"))
                .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .flatten()
        })
        .collect();
    present.sort();
    let expected: Vec<String> = (0..ds.records.len()).map(object_id).collect();
    if present != expected {
        return Err(usage(format!(
            "mesh ids {:?} do not match the {} dataset objects",
            present,
            expected.len()
        )));
    }
    let t = a.threshold.unwrap_or(cfg.eval.recall_threshold);
    let mut out = g.output("evaluate", false)?;
    out.manifest.inputs.push(a.meshes.display().to_string());
    out.manifest.inputs.push(a.data.display().to_string());
    let objects = try_par_map(g.threads, &ds.records, |j, r| {
        let mesh = TriangleMesh::read_obj(&a.meshes.join(format!("{}.obj", object_id(j))))?;
        let gt = ground_truth(r.seed, cfg.data.gt_points);
        Ok::<_, CliError>(evaluate_object(object_id(j), &gt, &mesh, t)?)
    })?;
    let curves = cumulative_curves(&objects);
    let mut report = MetricReport::new(objects);
    report.scale = cfg.eval.scale;
    out.write("metrics.csv", report.to_csv())?;
    out.write("summary.json", report.to_json()?)?;
    let (acd_csv, recall_csv) = curves.to_csv();
    out.write("curve_acd.csv", acd_csv)?;
    out.write("curve_recall.csv", recall_csv)?;
    out.finish()
}

pub const RESULT_FILE: &str = "result.json";

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Runs (or, with `from_cache`, reloads) every ablation seed and writes the
/// comparison table.
pub fn ablate(g: &Globals, from_cache: bool, resume: bool) -> CliResult<(AblationTable, Vec<SeedResult>)> {
    let cfg = &g.config;
    let mut out = g.output("ablate", from_cache || resume)?;
    let mut results = Vec::new();
    for &seed in &cfg.ablation.seeds {
        let rel = format!("{}/{RESULT_FILE}", seed_dir(seed));
        let path = out.path(&rel);
        let expected_hash = cfg.with_seed(seed).hash();
        let cached: Option<SeedResult> = if (from_cache || resume) && path.exists() {
            let r: SeedResult = serde_json::from_slice(&std::fs::read(&path)?)?;
            (r.config_hash == expected_hash).then_some(r)
        } else {
            None
        };
        let r = match cached {
            Some(r) => r,
            None if from_cache => {
                return Err(usage(format!("no cached result for seed {seed} under {}", out.root.display())))
            }
            None => {
                let (r, _, _) = run_seed(cfg, seed, g.threads)?;
                out.write(&rel, serde_json::to_vec_pretty(&r)?)?;
                for (k, v) in &r.timings {
                    out.time(&format!("{}/{k}", seed_dir(seed)), *v);
                }
                r
            }
        };
        out.artifact(&rel);
        results.push(r);
    }
    let table = build_table(&results);
    out.write("table.md", table.to_markdown())?;
    out.write("table.csv", table.to_csv())?;
    out.write("table.json", serde_json::to_vec_pretty(&table)?)?;
    out.finish()?;
    Ok((table, results))
}

pub struct ExportArgs {
    pub stage1: PathBuf,
    pub shape: usize,
    pub resolution: Option<usize>,
}

/// Mesh of a training shape's Stage 1 code.
pub fn export_mesh(g: &Globals, a: &ExportArgs) -> CliResult<RunManifest> {
    let cfg = &g.config;
    let s1 = load_stage1(cfg, Some(&a.stage1))?;
    if a.shape >= s1.shape_count() {
        return Err(usage(format!("shape {} out of range 0..{}", a.shape, s1.shape_count())));
    }
    let mut out = g.output("export-mesh", false)?;
    let mesh = extract_mesh(
        &s1.decoder,
        &[s1.code(a.shape)?],
        None,
        a.resolution.unwrap_or(cfg.eval.resolution),
    )?;
    out.write(&format!("shape-{}.obj", object_id(a.shape)), mesh.to_obj())?;
    out.finish()
}
