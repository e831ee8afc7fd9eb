use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation: what produced its outputs and what
/// they are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(command: &str, config: &crate::config::ExperimentConfig, threads: usize) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("root".into(), config.seed);
        seeds.insert("stage1".into(), config.stage1.seed);
        seeds.insert("stage2".into(), config.stage2.seed);
        seeds.insert("finetune".into(), config.finetune.seed);
        seeds.insert("recon".into(), config.optim.seed);
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seeds,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            threads,
        }
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output directory of one command. Refuses to reuse a non-empty directory
/// unless forced, and lists every file written through it.
pub struct Output {
    pub root: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Output {
    pub fn create(root: &Path, manifest: RunManifest, force: bool) -> CliResult<Self> {
        Self::open(root, manifest, force, false)
    }

    /// Like [`Output::create`] but allows continuing in a directory that a
    /// previous run of the same command left behind.
    pub fn open(root: &Path, manifest: RunManifest, force: bool, resume: bool) -> CliResult<Self> {
        let occupied = root.exists() && fs::read_dir(root)?.next().is_some();
        if occupied && !force && !resume {
            return Err(usage(format!(
                "{} already exists and is not empty; pass --force to overwrite",
                root.display()
            )));
        }
        if occupied && force && !resume {
            fs::remove_dir_all(root)?;
        }
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            started: Instant::now(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Registers `rel` as an artifact and returns its absolute path.
    pub fn artifact(&mut self, rel: &str) -> PathBuf {
        if !self.manifest.artifacts.iter().any(|a| a == rel) {
            self.manifest.artifacts.push(rel.to_string());
        }
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            let _ = fs::create_dir_all(parent);
        }
        p
    }

    /// Registers every file under the directory `rel`.
    pub fn artifact_tree(&mut self, rel: &str) -> CliResult<()> {
        let mut stack = vec![rel.to_string()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(self.root.join(&dir))? {
                let entry = entry?;
                let name = format!("{dir}/{}", entry.file_name().to_string_lossy());
                if entry.file_type()?.is_dir() {
                    stack.push(name);
                } else {
                    self.artifact(&name);
                }
            }
        }
        Ok(())
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.artifact(rel);
        fs::write(p, contents)?;
        Ok(())
    }

    pub fn time(&mut self, label: &str, secs: f64) {
        self.manifest.timings.insert(label.to_string(), secs);
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        self.manifest.artifacts.sort();
        fs::write(
            self.root.join(MANIFEST_FILE),
            serde_json::to_vec_pretty(&self.manifest)?,
        )?;
        Ok(self.manifest)
    }
}
