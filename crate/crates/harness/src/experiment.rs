//! Pretraining, pruning runs and evaluation on MNIST.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use simprune::algo::{run_arm, ObserverError, PruneEvent, PruneObserver};
use simprune::data::{batches, CursorState};
use simprune::net::{accuracy, backward};
use simprune::{
    Adam, AdamConfig, Arm, BatchCursor, CrossEntropyL2, MnistDataset, Network, Split, TrainState,
    ZeroPositionSet,
};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::records::{read_records, ExperimentRecord, RecordWriter};

pub struct MnistData {
    pub train: MnistDataset,
    pub test: MnistDataset,
}

impl MnistData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let [train_images, train_labels, test_images, test_labels] = cfg.data_paths();
        let train = MnistDataset::load(&train_images, &train_labels, Split::Train)?;
        let test = MnistDataset::load(&test_images, &test_labels, Split::Test)?;
        if train.features() != cfg.arch.inputs() {
            return Err(HarnessError::Usage(format!(
                "images have {} pixels but the architecture expects {} inputs",
                train.features(),
                cfg.arch.inputs()
            )));
        }
        Ok(Self { train, test })
    }
}

pub fn pretrain_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("pretrain-seed{seed}.ckpt"))
}

pub fn run_csv_path(out_dir: &Path, arm: Arm, seed: u64) -> PathBuf {
    out_dir.join(format!("{arm}-seed{seed}.csv"))
}

pub fn run_checkpoint_path(out_dir: &Path, arm: Arm, seed: u64) -> PathBuf {
    out_dir.join(format!("{arm}-seed{seed}.ckpt"))
}

pub fn run_meta_path(out_dir: &Path, arm: Arm, seed: u64) -> PathBuf {
    out_dir.join(format!("{arm}-seed{seed}.meta"))
}

/// Dense training from a fresh Glorot initialisation: `pretrain_epochs`
/// epochs of Adam over shuffled batches. Weights and data order both derive
/// from `seed`.
pub fn pretrain(cfg: &ExperimentConfig, seed: u64, train: &MnistDataset) -> Result<Checkpoint, HarnessError> {
    let mut model = Network::init(&cfg.arch, seed);
    let mut optimizer = Adam::new(&model, AdamConfig::with_lr(cfg.lr as f32));
    let l2 = cfg.l2 as f32;
    for epoch in 0..cfg.pretrain_epochs as u64 {
        for batch in batches(train, cfg.batch_size, seed, epoch)? {
            let (_, grads) = backward(&model, &batch, l2)
                .map_err(|e| HarnessError::Numerical(format!("pretraining epoch {epoch}: {e}")))?;
            optimizer
                .step(&mut model, &grads, None)
                .map_err(|e| HarnessError::Numerical(format!("pretraining epoch {epoch}: {e}")))?;
        }
    }
    let mask = ZeroPositionSet::for_network(&model);
    Ok(Checkpoint {
        config_hash: cfg.pretrain_hash(seed),
        model,
        mask,
        optimizer,
        cursor: CursorState {
            seed,
            epoch: cfg.pretrain_epochs as u64,
            offset: 0,
        },
        batch_size: cfg.batch_size,
    })
}

/// The pretrained checkpoint for `seed`, reused from `out_dir` when one with a
/// matching configuration hash exists, otherwise trained and written there.
pub fn pretrained(cfg: &ExperimentConfig, seed: u64, data: &MnistData) -> Result<Checkpoint, HarnessError> {
    let path = pretrain_path(&cfg.out_dir, seed);
    if path.exists() {
        let ckpt = Checkpoint::read(&path, Some(&cfg.arch))?;
        if ckpt.config_hash == cfg.pretrain_hash(seed) {
            return Ok(ckpt);
        }
    }
    let ckpt = pretrain(cfg, seed, &data.train)?;
    ckpt.write(&path)?;
    Ok(ckpt)
}

pub fn evaluate(model: &Network, test: &MnistDataset) -> Result<f64, HarnessError> {
    Ok(accuracy(model, test)?)
}

struct CsvObserver<'a> {
    writer: RecordWriter,
    test: &'a MnistDataset,
    seed: u64,
    eval_steps: BTreeSet<usize>,
    records: Vec<ExperimentRecord>,
    last: Option<PruneEvent>,
}

impl PruneObserver<f32> for CsvObserver<'_> {
    fn on_step(&mut self, event: &PruneEvent, model: &Network, _: &ZeroPositionSet) -> Result<(), ObserverError> {
        self.last = Some(event.clone());
        if !self.eval_steps.contains(&event.step) {
            return Ok(());
        }
        let acc = evaluate(model, self.test)?;
        let record = ExperimentRecord {
            arm: event.arm.to_string(),
            seed: self.seed,
            step: event.step,
            alive_ratio: event.alive_ratio,
            test_accuracy: Some(acc),
            train_loss: event.train_loss,
            rescued_count: event.rescued_count,
            optimizer_steps: event.optimizer_steps,
            wall_time: event.wall_time.as_secs_f64(),
            status: "ok".into(),
        };
        self.writer.append(&record)?;
        self.records.push(record);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub arm: Arm,
    pub seed: u64,
    pub csv: PathBuf,
    pub checkpoint: PathBuf,
    pub records: Vec<ExperimentRecord>,
    pub optimizer_steps: u64,
    pub total_rescued: usize,
}

/// Runs one arm from a pretrained checkpoint, writing the CSV incrementally,
/// then the final checkpoint and a metadata file. On failure the CSV keeps
/// every record written so far plus one error row.
pub fn run(
    cfg: &ExperimentConfig,
    arm: Arm,
    seed: u64,
    data: &MnistData,
    start: &Checkpoint,
) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let csv = run_csv_path(&cfg.out_dir, arm, seed);
    let mut observer = CsvObserver {
        writer: RecordWriter::create(&csv)?,
        test: &data.test,
        seed,
        eval_steps: cfg.eval_steps().into_iter().collect(),
        records: Vec::new(),
        last: None,
    };
    let mut state = TrainState {
        model: start.model.clone(),
        optimizer: start.optimizer.clone(),
        cursor: BatchCursor::new(&data.train, cfg.batch_size, start.cursor)?,
    };
    let objective = CrossEntropyL2 { l2: cfg.l2 as f32 };
    let started = Instant::now();
    let result = run_arm(arm, &mut state, &data.train, &objective, &cfg.prune_config(), &mut observer);

    let outcome = match result {
        Ok(outcome) => outcome,
        Err(err) => {
            let err = HarnessError::from(err);
            let last = observer.last.as_ref();
            let row = ExperimentRecord {
                arm: arm.to_string(),
                seed,
                step: last.map_or(0, |e| e.step + 1),
                alive_ratio: last.map_or(1.0, |e| e.alive_ratio),
                test_accuracy: None,
                train_loss: None,
                rescued_count: 0,
                optimizer_steps: last.map_or(0, |e| e.optimizer_steps),
                wall_time: started.elapsed().as_secs_f64(),
                status: format!("error: {err}"),
            };
            observer.writer.append(&row)?;
            return Err(err);
        }
    };

    let checkpoint = run_checkpoint_path(&cfg.out_dir, arm, seed);
    Checkpoint {
        config_hash: cfg.run_hash(seed),
        model: state.model,
        mask: outcome.mask,
        optimizer: state.optimizer,
        cursor: state.cursor.state(),
        batch_size: cfg.batch_size,
    }
    .write(&checkpoint)?;

    let prune_cfg = cfg.prune_config();
    let mut meta = String::new();
    let _ = writeln!(meta, "arm = {arm}");
    let _ = writeln!(meta, "seed = {seed}");
    let _ = writeln!(meta, "config_hash = {:016x}", cfg.run_hash(seed));
    let _ = writeln!(meta, "updates_per_step = {}", prune_cfg.updates_per_step(arm));
    let _ = writeln!(meta, "budget_parity = {}", prune_cfg.has_budget_parity());
    let _ = writeln!(meta, "optimizer_steps = {}", outcome.optimizer_steps);
    let _ = writeln!(meta, "total_rescued = {}", outcome.rescue.total_rescued());
    let meta_path = run_meta_path(&cfg.out_dir, arm, seed);
    fs::write(&meta_path, meta).map_err(HarnessError::io(&meta_path))?;

    Ok(RunSummary {
        arm,
        seed,
        csv,
        checkpoint,
        records: observer.records,
        optimizer_steps: outcome.optimizer_steps,
        total_rescued: outcome.rescue.total_rescued(),
    })
}

/// Records of a completed run in `out_dir` whose metadata carries this
/// configuration's hash; otherwise the run is executed (and written) first.
pub fn cached_run(
    cfg: &ExperimentConfig,
    arm: Arm,
    seed: u64,
    data: &MnistData,
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let meta = fs::read_to_string(run_meta_path(&cfg.out_dir, arm, seed)).unwrap_or_default();
    let hash_line = format!("config_hash = {:016x}", cfg.run_hash(seed));
    let csv = run_csv_path(&cfg.out_dir, arm, seed);
    if meta.lines().any(|l| l == hash_line) && run_checkpoint_path(&cfg.out_dir, arm, seed).exists() {
        if let Ok(records) = read_records(&csv) {
            let complete = records.iter().all(ExperimentRecord::is_ok)
                && records.last().is_some_and(|r| r.step == cfg.steps);
            if complete {
                return Ok(records);
            }
        }
    }
    let start = pretrained(cfg, seed, data)?;
    Ok(run(cfg, arm, seed, data, &start)?.records)
}
