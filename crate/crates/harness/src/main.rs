use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simprune::Arm;
use simprune_harness::compare::compare;
use simprune_harness::experiment::{self, run_csv_path, MnistData};
use simprune_harness::records::read_records;
use simprune_harness::{Checkpoint, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "simprune", version, about = "Iterative pruning experiments on MNIST")]
struct Cli {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense network for every seed and write its checkpoint.
    Pretrain,
    /// Run one pruning arm for every seed (pretraining on demand).
    Prune {
        #[arg(long)]
        arm: Arm,
    },
    /// Compare baseline and simulation-guided CSVs.
    Compare {
        /// Baseline CSVs; defaults to the configured seeds' runs in the output directory.
        #[arg(long, num_args = 1..)]
        baseline: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        simguided: Vec<PathBuf>,
        /// Where to write summary.csv and plot-*.csv (default: output directory).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Test accuracy and alive ratio of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Flags mirroring the config-file keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    data_dir: Option<String>,
    #[arg(long, global = true)]
    train_images: Option<String>,
    #[arg(long, global = true)]
    train_labels: Option<String>,
    #[arg(long, global = true)]
    test_images: Option<String>,
    #[arg(long, global = true)]
    test_labels: Option<String>,
    /// Layer widths, e.g. 784,300,100,10.
    #[arg(long, global = true)]
    arch: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    pretrain_epochs: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    l2: Option<String>,
    /// Per-step prune ratio r.
    #[arg(long, global = true)]
    ratio: Option<String>,
    /// Pruning steps n.
    #[arg(long, global = true)]
    steps: Option<String>,
    /// Simulation steps s per pruning step.
    #[arg(long, global = true)]
    sim_steps: Option<String>,
    #[arg(long, global = true)]
    retrain_steps: Option<String>,
    /// multiplicative or additive.
    #[arg(long, global = true)]
    schedule: Option<String>,
    /// global or per-layer.
    #[arg(long, global = true)]
    scope: Option<String>,
    #[arg(long, global = true)]
    reset_optimizer: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Pruning steps between evaluations, or `auto`.
    #[arg(long, global = true)]
    eval_every: Option<String>,
    /// Output directory (also settable through SIMPRUNE_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 20] {
        [
            ("data_dir", &self.data_dir),
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
            ("arch", &self.arch),
            ("batch_size", &self.batch_size),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("lr", &self.lr),
            ("l2", &self.l2),
            ("ratio", &self.ratio),
            ("steps", &self.steps),
            ("sim_steps", &self.sim_steps),
            ("retrain_steps", &self.retrain_steps),
            ("schedule", &self.schedule),
            ("scope", &self.scope),
            ("reset_optimizer", &self.reset_optimizer),
            ("seeds", &self.seeds),
            ("eval_every", &self.eval_every),
            ("out_dir", &self.out_dir),
        ]
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env();
    for (key, value) in cli.overrides.pairs() {
        if let Some(value) = value {
            cfg.set(key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Pretrain => {
            let data = MnistData::load(&cfg)?;
            for &seed in &cfg.seeds {
                let ckpt = experiment::pretrain(&cfg, seed, &data.train)?;
                let path = experiment::pretrain_path(&cfg.out_dir, seed);
                ckpt.write(&path)?;
                let acc = experiment::evaluate(&ckpt.model, &data.test)?;
                println!("seed {seed}: test accuracy {acc:.4} -> {}", path.display());
            }
        }
        Command::Prune { arm } => {
            let data = MnistData::load(&cfg)?;
            for &seed in &cfg.seeds {
                let start = experiment::pretrained(&cfg, seed, &data)?;
                let summary = experiment::run(&cfg, *arm, seed, &data, &start)?;
                let last = summary.records.last();
                println!(
                    "{arm} seed {seed}: alive {:.6} accuracy {:.4} rescued {} -> {}",
                    last.map_or(1.0, |r| r.alive_ratio),
                    last.and_then(|r| r.test_accuracy).unwrap_or(f64::NAN),
                    summary.total_rescued,
                    summary.csv.display()
                );
            }
        }
        Command::Compare {
            baseline,
            simguided,
            report_dir,
        } => {
            let resolve = |given: &Vec<PathBuf>, arm: Arm| -> Vec<PathBuf> {
                if given.is_empty() {
                    cfg.seeds.iter().map(|&s| run_csv_path(&cfg.out_dir, arm, s)).collect()
                } else {
                    given.clone()
                }
            };
            let load = |paths: Vec<PathBuf>| -> Result<Vec<_>, HarnessError> {
                paths.iter().map(|p| read_records(p)).collect()
            };
            let b = load(resolve(baseline, Arm::Baseline))?;
            let s = load(resolve(simguided, Arm::SimGuided))?;
            let cmp = compare(&b, &s)?;
            print!("{}", cmp.report());
            cmp.write(report_dir.as_ref().unwrap_or(&cfg.out_dir))?;
        }
        Command::Eval { checkpoint } => {
            let ckpt = Checkpoint::read(checkpoint, Some(&cfg.arch))?;
            let data = MnistData::load(&cfg)?;
            let acc = experiment::evaluate(&ckpt.model, &data.test)?;
            println!(
                "test accuracy {acc:.4}, alive ratio {:.6} ({} of {} weights)",
                ckpt.mask.alive_ratio(),
                ckpt.mask.alive_count(),
                ckpt.mask.total()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
