use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};

use mend_cli::manifest::RunManifest;
use mend_core::shapes::{make_vehicle, oracle_mesh, Dataset};

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests").join(name);
    if p.exists() {
        fs::remove_dir_all(&p).unwrap();
    }
    fs::create_dir_all(&p).unwrap();
    p
}

fn tiny_config() -> Value {
    json!({
        "seed": 7,
        "arch": "tiny",
        "data": {
            "train_shapes": 4, "eval_shapes": 3, "scans_per_shape": 2, "samples_per_shape": 128,
            "rays_per_axis": 16, "max_scan_points": 64, "observation_points": 32, "gt_points": 128,
            "sparse_rays": 12, "sparse_points": 24
        },
        "stage1": { "epochs": 4, "batch_per_shape": 64 },
        "stage2": { "epochs": 4, "batch": 2, "dis_uniform": 24, "gt_samples": 48 },
        "finetune": { "epochs": 2, "dis_uniform": 24 },
        "optim": { "iterations": 6, "dis_uniform": 24, "resample_every": 3 },
        "eval": { "resolution": 12 },
        "ablation": { "seeds": [0, 1] },
        "checkpoint_every": 1
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn mend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mend")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[track_caller]
fn exit_code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Every file under `dir` except the manifest, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                if rel != "manifest.json" {
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}

fn assert_manifest_lists_everything(dir: &Path) {
    let m = RunManifest::load(dir).unwrap();
    let files: Vec<String> = tree(dir).into_keys().collect();
    let mut listed = m.artifacts.clone();
    listed.sort();
    assert_eq!(listed, files, "manifest of {}", dir.display());
}

/// Data and trained stages shared by the tests that only read them.
struct Fixture {
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = scratch("fixture");
        let config = write_config(&root, "config.json", &tiny_config());
        let c = s(&config);
        ok(mend(&["gen-data", "--config", c, "--out", s(&root.join("data"))]));
        let data = root.join("data");
        ok(mend(&[
            "train", "--stage", "1", "--config", c, "--data", s(&data.join("train")),
            "--out", s(&root.join("s1")),
        ]));
        ok(mend(&[
            "train", "--stage", "2", "--config", c, "--data", s(&data.join("train")),
            "--stage1", s(&root.join("s1")), "--out", s(&root.join("s2")),
        ]));
        ok(mend(&[
            "train", "--stage", "finetune", "--config", c, "--data", s(&data.join("train_sparse")),
            "--stage1", s(&root.join("s1")), "--stage2", s(&root.join("s2")), "--out", s(&root.join("ft")),
        ]));
        Fixture { root, config }
    })
}

fn reconstruct(f: &Fixture, config: &Path, out: &Path, mode: &str, extra: &[&str]) {
    let (s1, s2, obs) = (f.stage("s1"), f.stage("s2"), f.data().join("eval"));
    let mut args = vec![
        "reconstruct", "--mode", mode, "--config", s(config), "--stage1", s(&s1),
        "--observations", s(&obs), "--out", s(out),
    ];
    if mode != "baseline" {
        args.extend(["--stage2", s(&s2)]);
    }
    args.extend(extra);
    ok(mend(&args));
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let f = fixture();
    let again = scratch("gen-again");
    ok(mend(&["gen-data", "--config", s(&f.config), "--out", s(&again)]));
    assert_eq!(tree(&f.data()), tree(&again));
    assert_manifest_lists_everything(&again);
}

#[test]
fn gen_data_lists_every_shape_and_round_trips() {
    let dir = scratch("gen-fifty");
    let mut cfg = tiny_config();
    cfg["data"]["train_shapes"] = json!(50);
    cfg["data"]["eval_shapes"] = json!(1);
    cfg["data"]["samples_per_shape"] = json!(16);
    cfg["data"]["scans_per_shape"] = json!(1);
    cfg["data"]["rays_per_axis"] = json!(8);
    let config = write_config(&dir, "config.json", &cfg);
    let out = dir.join("out");
    ok(mend(&["gen-data", "--config", s(&config), "--out", s(&out), "--threads", "4"]));
    let index: Value = serde_json::from_slice(&fs::read(out.join("train/index.json")).unwrap()).unwrap();
    assert_eq!(index["records"].as_array().unwrap().len(), 50);
    let ds = Dataset::load(&out.join("train")).unwrap();
    let copy = dir.join("copy");
    ds.save(&copy).unwrap();
    assert_eq!(Dataset::load(&copy).unwrap(), ds);
    assert_eq!(fs::read(copy.join("data.bin")).unwrap(), fs::read(out.join("train/data.bin")).unwrap());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let f = fixture();
    let out = scratch("gen-threads");
    ok(mend(&["gen-data", "--config", s(&f.config), "--out", s(&out), "--threads", "3"]));
    assert_eq!(tree(&f.data()), tree(&out));
}

#[test]
fn output_root_follows_environment() {
    let f = fixture();
    let root = scratch("env-root");
    let o = Command::new(env!("CARGO_BIN_EXE_mend"))
        .args(["export-mesh", "--config", s(&f.config), "--stage1", s(&f.stage("s1")), "--shape", "1"])
        .env("MEND_OUT", &root)
        .output()
        .unwrap();
    ok(o);
    assert!(root.join("export-mesh/shape-000001.obj").exists());
}

#[test]
fn outputs_are_never_silently_overwritten() {
    let f = fixture();
    let out = scratch("collide");
    ok(mend(&["gen-data", "--config", s(&f.config), "--out", s(&out)]));
    let first = tree(&out);
    let o = mend(&["gen-data", "--config", s(&f.config), "--out", s(&out), "--seed", "9"]);
    assert_eq!(exit_code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert_eq!(tree(&out), first);
    ok(mend(&["gen-data", "--config", s(&f.config), "--out", s(&out), "--seed", "9", "--force"]));
    assert_ne!(tree(&out), first);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let f = fixture();
    let dir = scratch("exit-codes");
    // unknown flag
    assert_eq!(exit_code(&mend(&["gen-data", "--bogus"])), 2);
    // malformed configuration
    fs::write(dir.join("bad.json"), "{ not json").unwrap();
    assert_eq!(exit_code(&mend(&["gen-data", "--config", s(&dir.join("bad.json")), "--out", s(&dir.join("a"))])), 2);
    // missing configuration file
    assert_eq!(exit_code(&mend(&["gen-data", "--config", s(&dir.join("none.json")), "--out", s(&dir.join("b"))])), 3);
    // missing prerequisite checkpoint
    let o = mend(&[
        "train", "--stage", "2", "--config", s(&f.config), "--data", s(&f.data().join("train")),
        "--out", s(&dir.join("c")),
    ]);
    assert_eq!(exit_code(&o), 2);
    assert!(!dir.join("c").exists());
    // diverging training aborts as a numeric failure
    let mut cfg = tiny_config();
    cfg["stage1"]["lr_decoder"] = json!(1e300);
    cfg["stage1"]["lr_codes"] = json!(1e300);
    let config = write_config(&dir, "diverge.json", &cfg);
    let o = mend(&[
        "train", "--stage", "1", "--config", s(&config), "--data", s(&f.data().join("train")),
        "--out", s(&dir.join("d")),
    ]);
    assert_eq!(exit_code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("d/checkpoint/state.json").exists());
}

#[test]
fn wrong_architecture_checkpoint_is_rejected() {
    let f = fixture();
    let dir = scratch("wrong-arch");
    let mut cfg = tiny_config();
    cfg["arch"] = json!("desk");
    let config = write_config(&dir, "desk.json", &cfg);
    let o = mend(&[
        "train", "--stage", "2", "--config", s(&config), "--data", s(&f.data().join("train")),
        "--stage1", s(&f.stage("s1")), "--out", s(&dir.join("s2")),
    ]);
    assert_eq!(exit_code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn loss_logs_have_one_row_per_epoch() {
    let f = fixture();
    for (stage, epochs, cols) in [
        ("s1", 4, mend_core::train::STAGE1_COLUMNS.as_slice()),
        ("s2", 4, mend_core::train::STAGE2_COLUMNS.as_slice()),
        ("ft", 2, mend_core::train::FINETUNE_COLUMNS.as_slice()),
    ] {
        let csv = fs::read_to_string(f.stage(stage).join("loss.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], cols.join(","), "{stage}");
        assert_eq!(lines.len(), epochs + 1, "{stage}");
        for (i, l) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = l.split(',').collect();
            assert_eq!(fields.len(), cols.len());
            assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
        }
        assert_manifest_lists_everything(&f.stage(stage));
    }
}

fn resume_matches_uninterrupted(stage: &str, data: &str, extra: &[&str], epochs_key: &str) {
    let f = fixture();
    let dir = scratch(&format!("resume-{stage}"));
    let mut short = tiny_config();
    short[epochs_key]["epochs"] = json!(2);
    let short = write_config(&dir, "short.json", &short);
    let out = dir.join("run");
    let base = |config: &Path| -> Vec<String> {
        let mut a: Vec<String> = ["train", "--stage", stage, "--config", s(config), "--data"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        a.push(s(&f.data().join(data)).to_string());
        a.extend(extra.iter().map(|x| x.to_string()));
        a.extend(["--out".to_string(), s(&out).to_string()]);
        a
    };
    let run = |args: Vec<String>| ok(Command::new(env!("CARGO_BIN_EXE_mend")).args(&args).output().unwrap());
    run(base(&short));
    let mut args = base(&f.config);
    args.push("--resume".into());
    run(args);
    let full = match stage {
        "1" => f.stage("s1"),
        "2" => f.stage("s2"),
        _ => f.stage("ft"),
    };
    assert_eq!(tree(&out), tree(&full));
}

#[test]
fn stage1_resume_continues_identically() {
    resume_matches_uninterrupted("1", "train", &[], "stage1");
}

#[test]
fn stage2_resume_continues_identically() {
    let f = fixture();
    let s1 = s(&f.stage("s1")).to_string();
    resume_matches_uninterrupted("2", "train", &["--stage1", &s1], "stage2");
}

#[test]
fn finetune_resume_continues_identically() {
    let f = fixture();
    let s1 = s(&f.stage("s1")).to_string();
    let s2 = s(&f.stage("s2")).to_string();
    resume_matches_uninterrupted("finetune", "train_sparse", &["--stage1", &s1, "--stage2", &s2], "finetune");
}

#[test]
fn baseline_ignores_encoder_and_discriminator_checkpoints() {
    let f = fixture();
    let dir = scratch("baseline");
    reconstruct(f, &f.config, &dir.join("plain"), "baseline", &[]);
    let junk = dir.join("junk");
    fs::create_dir_all(&junk).unwrap();
    reconstruct(
        f,
        &f.config,
        &dir.join("with"),
        "baseline",
        &["--stage2", s(&junk), "--finetune", s(&junk)],
    );
    assert_eq!(tree(&dir.join("plain")), tree(&dir.join("with")));
}

#[test]
fn reconstruct_writes_one_mesh_per_observation() {
    let f = fixture();
    let dir = scratch("k-meshes");
    let out = dir.join("r");
    reconstruct(f, &f.config, &out, "regularized", &[]);
    let m = RunManifest::load(&out).unwrap();
    let meshes: Vec<&String> = m.artifacts.iter().filter(|a| a.starts_with("meshes/")).collect();
    assert_eq!(meshes.len(), 3);
    let traces = m.artifacts.iter().filter(|a| a.starts_with("traces/")).count();
    assert_eq!(traces, 3);
    assert_manifest_lists_everything(&out);
    let trace = fs::read_to_string(out.join("traces/000000.csv")).unwrap();
    // header, the initial energy and one row per iteration
    assert_eq!(trace.lines().count(), 1 + 1 + 6);
}

#[test]
fn single_unjittered_multicode_matches_regularized() {
    let f = fixture();
    let dir = scratch("multicode-one");
    let mut cfg = tiny_config();
    cfg["fusion"] = json!({ "codes": 1, "split": 4, "jitter": 0.0 });
    let config = write_config(&dir, "one.json", &cfg);
    reconstruct(f, &config, &dir.join("multi"), "multicode", &[]);
    reconstruct(f, &config, &dir.join("reg"), "regularized", &[]);
    assert_eq!(tree(&dir.join("multi")), tree(&dir.join("reg")));
}

#[test]
fn finetuned_encoder_changes_the_initialization() {
    let f = fixture();
    let dir = scratch("finetuned");
    reconstruct(f, &f.config, &dir.join("frozen"), "regularized", &[]);
    reconstruct(f, &f.config, &dir.join("tuned"), "regularized", &["--finetune", s(&f.stage("ft"))]);
    assert_ne!(
        fs::read(dir.join("frozen/codes/000000.json")).unwrap(),
        fs::read(dir.join("tuned/codes/000000.json")).unwrap()
    );
}

fn oracle_meshes(f: &Fixture, dir: &Path) -> PathBuf {
    let meshes = dir.join("oracle");
    fs::create_dir_all(&meshes).unwrap();
    let ds = Dataset::load(&f.data().join("eval")).unwrap();
    for (j, r) in ds.records.iter().enumerate() {
        oracle_mesh(&make_vehicle(r.seed)).write_obj(&meshes.join(format!("{j:06}.obj"))).unwrap();
    }
    meshes
}

#[test]
fn oracle_meshes_score_full_recall_and_reproducibly() {
    let f = fixture();
    let dir = scratch("evaluate");
    let meshes = oracle_meshes(f, &dir);
    let eval = |out: &Path| {
        ok(mend(&[
            "evaluate", "--config", s(&f.config), "--meshes", s(&meshes), "--data", s(&f.data().join("eval")),
            "--out", s(out),
        ]));
    };
    eval(&dir.join("a"));
    eval(&dir.join("b"));
    assert_eq!(tree(&dir.join("a")), tree(&dir.join("b")));
    assert_manifest_lists_everything(&dir.join("a"));

    let summary: Value = serde_json::from_slice(&fs::read(dir.join("a/summary.json")).unwrap()).unwrap();
    let s_ = &summary["summary"];
    assert_eq!(s_["mean_recall"].as_f64().unwrap(), 1.0);
    let csv = fs::read_to_string(dir.join("a/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (ia, ir) = (col("acd"), col("recall"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            vec![v[ia].parse().unwrap(), v[ir].parse().unwrap()]
        })
        .collect();
    assert_eq!(rows.len(), 3);
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    assert!((s_["mean_acd"].as_f64().unwrap() - mean(0)).abs() <= 1e-12 * mean(0).max(1.0));
    assert_eq!(mean(1), 1.0);
    assert!(mean(0) < 0.01);
    assert!(dir.join("a/curve_acd.csv").exists() && dir.join("a/curve_recall.csv").exists());
}

#[test]
fn evaluation_rejects_misaligned_mesh_ids() {
    let f = fixture();
    let dir = scratch("evaluate-mismatch");
    let meshes = oracle_meshes(f, &dir);
    fs::remove_file(meshes.join("000001.obj")).unwrap();
    let o = mend(&[
        "evaluate", "--config", s(&f.config), "--meshes", s(&meshes), "--data", s(&f.data().join("eval")),
        "--out", s(&dir.join("out")),
    ]);
    assert_eq!(exit_code(&o), 2);
    assert!(!dir.join("out").exists());
}

#[test]
fn ablation_table_reemits_from_cache() {
    let f = fixture();
    let dir = scratch("ablate");
    let out = dir.join("out");
    let o = ok(mend(&["ablate", "--config", s(&f.config), "--out", s(&out)]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("| baseline"));
    let table = fs::read(out.join("table.json")).unwrap();
    let md = fs::read(out.join("table.md")).unwrap();
    let t: Value = serde_json::from_slice(&table).unwrap();
    let rows: Vec<&str> = t["rows"].as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap()).collect();
    for v in ["baseline", "encoder", "encoder_dis_train", "dis_inference", "full"] {
        assert!(rows.contains(&v), "{v} missing from {rows:?}");
    }
    let computed = RunManifest::load(&out).unwrap();
    assert!(computed.timings.keys().any(|k| k.starts_with("seed-0/")));
    let before: Vec<Vec<u8>> = [0, 1].iter().map(|s| fs::read(out.join(format!("seed-{s}/result.json"))).unwrap()).collect();
    ok(mend(&["ablate", "--config", s(&f.config), "--out", s(&out), "--from-cache"]));
    assert_eq!(fs::read(out.join("table.json")).unwrap(), table);
    assert_eq!(fs::read(out.join("table.md")).unwrap(), md);
    for (i, b) in before.iter().enumerate() {
        assert_eq!(&fs::read(out.join(format!("seed-{i}/result.json"))).unwrap(), b);
    }
    // per-seed timings appear only when a seed is actually recomputed
    let cached = RunManifest::load(&out).unwrap();
    assert!(!cached.timings.keys().any(|k| k.starts_with("seed-")));
    let mut cfg = tiny_config();
    cfg["optim"]["iterations"] = json!(7);
    let other = write_config(&dir, "other.json", &cfg);
    let o = mend(&["ablate", "--config", s(&other), "--out", s(&out), "--from-cache"]);
    assert_eq!(exit_code(&o), 2);
}

#[test]
fn commands_are_reproducible_from_their_manifest() {
    let f = fixture();
    let dir = scratch("from-manifest");
    let first = dir.join("first");
    reconstruct(f, &f.config, &first, "multicode", &[]);
    let m = RunManifest::load(&first).unwrap();
    assert_eq!(mend_cli::config::config_hash(&m.config), m.config_hash);
    let config = write_config(&dir, "replay.json", &m.config);
    let second = dir.join("second");
    reconstruct(f, &config, &second, "multicode", &[]);
    assert_eq!(tree(&first), tree(&second));
    assert_eq!(RunManifest::load(&second).unwrap().config_hash, m.config_hash);
}
