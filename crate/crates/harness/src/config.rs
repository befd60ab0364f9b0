//! Experiment configuration.
//!
//! Sources in increasing precedence: built-in defaults, a flat `key = value`
//! file, the `SIMPRUNE_OUT_DIR` environment variable (output directory only),
//! command-line flags. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use simprune::{Architecture, PruneRunConfig, PruneScope, ScheduleMode};

use crate::error::HarnessError;
use crate::checksum;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "SIMPRUNE_OUT_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Directory holding the four standard MNIST files (optionally `.gz`).
    pub data_dir: PathBuf,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub arch: Architecture,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub ratio: f64,
    pub steps: usize,
    pub sim_steps: usize,
    pub retrain_steps: usize,
    pub schedule: ScheduleMode,
    pub scope: PruneScope,
    pub reset_optimizer: bool,
    pub seeds: Vec<u64>,
    /// `None` selects the default stride, see [`ExperimentConfig::eval_stride`].
    pub eval_every: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/mnist"),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            arch: Architecture::lenet_300_100(),
            batch_size: 50,
            pretrain_epochs: 10,
            lr: 0.005,
            l2: 0.0001,
            ratio: 0.05,
            steps: 132,
            sim_steps: 1200,
            retrain_steps: 1200,
            schedule: ScheduleMode::Multiplicative,
            scope: PruneScope::Global,
            reset_optimizer: false,
            seeds: vec![0, 1, 2],
            eval_every: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_err(key: &str, value: &str, what: &str) -> HarnessError {
    HarnessError::Usage(format!("{key} = {value:?}: expected {what}"))
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<N, HarnessError> {
    value.parse().map_err(|_| parse_err(key, value, what))
}

fn parse_list<N: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<N>, HarnessError> {
    value
        .split(',')
        .map(|v| parse_num(key, v.trim(), "a comma-separated list of integers"))
        .collect()
}

pub fn parse_schedule(value: &str) -> Result<ScheduleMode, HarnessError> {
    match value {
        "multiplicative" => Ok(ScheduleMode::Multiplicative),
        "additive" => Ok(ScheduleMode::Additive),
        _ => Err(parse_err("schedule", value, "multiplicative or additive")),
    }
}

pub fn parse_scope(value: &str) -> Result<PruneScope, HarnessError> {
    match value {
        "global" => Ok(PruneScope::Global),
        "per-layer" => Ok(PruneScope::PerLayer),
        _ => Err(parse_err("scope", value, "global or per-layer")),
    }
}

pub fn schedule_name(mode: ScheduleMode) -> &'static str {
    match mode {
        ScheduleMode::Multiplicative => "multiplicative",
        ScheduleMode::Additive => "additive",
    }
}

pub fn scope_name(scope: PruneScope) -> &'static str {
    match scope {
        PruneScope::Global => "global",
        PruneScope::PerLayer => "per-layer",
    }
}

impl ExperimentConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let value = value.trim();
        match key {
            "data_dir" => self.data_dir = value.into(),
            "train_images" => self.train_images = Some(value.into()),
            "train_labels" => self.train_labels = Some(value.into()),
            "test_images" => self.test_images = Some(value.into()),
            "test_labels" => self.test_labels = Some(value.into()),
            "arch" => {
                let widths = parse_list(key, value)?;
                self.arch = Architecture::new(widths)
                    .map_err(|e| HarnessError::Usage(e.to_string()))?;
            }
            "batch_size" => self.batch_size = parse_num(key, value, "a positive integer")?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, value, "an integer")?,
            "lr" => self.lr = parse_num(key, value, "a number")?,
            "l2" => self.l2 = parse_num(key, value, "a number")?,
            "ratio" => self.ratio = parse_num(key, value, "a number in (0, 1)")?,
            "steps" => self.steps = parse_num(key, value, "an integer")?,
            "sim_steps" => self.sim_steps = parse_num(key, value, "a positive integer")?,
            "retrain_steps" => self.retrain_steps = parse_num(key, value, "an integer")?,
            "schedule" => self.schedule = parse_schedule(value)?,
            "scope" => self.scope = parse_scope(value)?,
            "reset_optimizer" => {
                self.reset_optimizer = parse_num(key, value, "true or false")?
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "eval_every" => {
                self.eval_every = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v, "a positive integer or auto")?),
                }
            }
            "out_dir" => self.out_dir = value.into(),
            _ => return Err(HarnessError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Usage(format!("config line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.out_dir = dir.into();
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: &str| Err(HarnessError::Usage(m.to_string()));
        if self.batch_size == 0 {
            return usage("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return usage("lr must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return usage("l2 must be non-negative");
        }
        if self.seeds.is_empty() {
            return usage("at least one seed is required");
        }
        if self.eval_every == Some(0) {
            return usage("eval_every must be positive");
        }
        self.prune_config()
            .validate()
            .map_err(|e| HarnessError::Usage(e.to_string()))
    }

    pub fn prune_config(&self) -> PruneRunConfig {
        PruneRunConfig {
            steps: self.steps,
            ratio: self.ratio,
            sim_steps: self.sim_steps,
            retrain_steps: self.retrain_steps,
            schedule: self.schedule,
            scope: self.scope,
            reset_optimizer_each_step: self.reset_optimizer,
        }
    }

    /// Pruning steps between test-set evaluations: 1 for `n ≤ 30`, otherwise
    /// the smallest stride that keeps the count at or below 150.
    pub fn eval_stride(&self) -> usize {
        self.eval_every.unwrap_or(if self.steps <= 30 {
            1
        } else {
            self.steps.div_ceil(149).max(1)
        })
    }

    /// Steps at which a record is written: every `stride` steps counting back
    /// from the final step, giving `floor(n / stride) + 1` records.
    pub fn eval_steps(&self) -> Vec<usize> {
        let stride = self.eval_stride();
        let mut steps: Vec<usize> = (0..=self.steps / stride).map(|j| self.steps - j * stride).collect();
        steps.reverse();
        steps
    }

    fn resolve(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        if let Some(p) = explicit {
            return p.clone();
        }
        let plain = self.data_dir.join(name);
        let gz = self.data_dir.join(format!("{name}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    }

    /// `(train images, train labels, test images, test labels)`.
    pub fn data_paths(&self) -> [PathBuf; 4] {
        [
            self.resolve(&self.train_images, TRAIN_IMAGES),
            self.resolve(&self.train_labels, TRAIN_LABELS),
            self.resolve(&self.test_images, TEST_IMAGES),
            self.resolve(&self.test_labels, TEST_LABELS),
        ]
    }

    /// Canonical text of the fields that determine pretraining for `seed`.
    pub fn pretrain_key(&self, seed: u64) -> String {
        format!(
            "arch={}\nbatch_size={}\npretrain_epochs={}\nlr={}\nl2={}\nseed={seed}\n",
            self.arch, self.batch_size, self.pretrain_epochs, self.lr, self.l2
        )
    }

    /// Canonical text of everything that determines a pruning run's records.
    pub fn run_key(&self, seed: u64) -> String {
        let mut key = self.pretrain_key(seed);
        let _ = write!(
            key,
            "ratio={}\nsteps={}\nsim_steps={}\nretrain_steps={}\nschedule={}\nscope={}\nreset_optimizer={}\neval_every={}\n",
            self.ratio,
            self.steps,
            self.sim_steps,
            self.retrain_steps,
            schedule_name(self.schedule),
            scope_name(self.scope),
            self.reset_optimizer,
            self.eval_stride()
        );
        key
    }

    pub fn pretrain_hash(&self, seed: u64) -> u64 {
        checksum(self.pretrain_key(seed).as_bytes())
    }

    pub fn run_hash(&self, seed: u64) -> u64 {
        checksum(self.run_key(seed).as_bytes())
    }
}
