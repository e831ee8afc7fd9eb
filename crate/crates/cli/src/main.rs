use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mend_cli::commands::{
    ablate, evaluate_cmd, export_mesh, gen_data, reconstruct_cmd, train, EvaluateArgs, ExportArgs, Globals, Mode,
    ReconstructArgs, Stage, TrainArgs,
};
use mend_cli::config::ExperimentConfig;
use mend_cli::error::CliResult;

#[derive(Parser)]
#[command(name = "mend", version, about = "Shape completion from partial scans with learned implicit priors")]
struct Cli {
    /// JSON experiment configuration; missing fields take desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $MEND_OUT/<command> or runs/<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-object work; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Finetune,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Regularized,
    Multicode,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training, evaluation and sparse re-scan datasets.
    GenData,
    /// Run one training stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Dataset directory (dense for stages 1 and 2, sparse for finetune).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        stage2: Option<PathBuf>,
        /// Continue from the last periodic checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruct a mesh for every record of an observation dataset.
    Reconstruct {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: Option<PathBuf>,
        #[arg(long)]
        finetune: Option<PathBuf>,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        no_discriminator: bool,
        /// Use whole scans (e.g. sparse datasets) instead of subsampling.
        #[arg(long)]
        full_scans: bool,
    },
    /// Score meshes against the oracle surfaces of a dataset.
    Evaluate {
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the encoder/discriminator ablation over the configured seeds.
    Ablate {
        /// Re-emit the table from stored per-seed results only.
        #[arg(long)]
        from_cache: bool,
        /// Reuse stored per-seed results whose configuration matches.
        #[arg(long)]
        resume: bool,
    },
    /// Extract the mesh of a training shape's stage 1 code.
    ExportMesh {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        shape: usize,
        #[arg(long)]
        resolution: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::ExportMesh { .. } => "export-mesh",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let config = config.resolved();
    let out = cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("MEND_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(cli.command.name())
    });
    let g = Globals {
        config,
        out,
        force: cli.force,
        threads: cli.threads.max(1),
    };
    match cli.command {
        Command::GenData => {
            gen_data(&g)?;
        }
        Command::Train {
            stage,
            data,
            stage1,
            stage2,
            resume,
        } => {
            let stage = match stage {
                StageArg::One => Stage::One,
                StageArg::Two => Stage::Two,
                StageArg::Finetune => Stage::Finetune,
            };
            train(
                &g,
                &TrainArgs {
                    stage,
                    data,
                    stage1,
                    stage2,
                    resume,
                },
            )?;
        }
        Command::Reconstruct {
            mode,
            stage1,
            stage2,
            finetune,
            observations,
            no_discriminator,
            full_scans,
        } => {
            let mode = match mode {
                ModeArg::Baseline => Mode::Baseline,
                ModeArg::Regularized => Mode::Regularized,
                ModeArg::Multicode => Mode::Multicode,
            };
            reconstruct_cmd(
                &g,
                &ReconstructArgs {
                    mode,
                    stage1,
                    stage2,
                    finetune,
                    observations,
                    no_discriminator,
                    full_scans,
                },
            )?;
        }
        Command::Evaluate {
            meshes,
            data,
            threshold,
        } => {
            evaluate_cmd(
                &g,
                &EvaluateArgs {
                    meshes,
                    data,
                    threshold,
                },
            )?;
        }
        Command::Ablate { from_cache, resume } => {
            let (table, _) = ablate(&g, from_cache, resume)?;
            print!("{}", table.to_markdown());
        }
        Command::ExportMesh {
            stage1,
            shape,
            resolution,
        } => {
            export_mesh(
                &g,
                &ExportArgs {
                    stage1,
                    shape,
                    resolution,
                },
            )?;
        }
    }
    println!("wrote {}", g.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
