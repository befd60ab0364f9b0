//! The two pruning drivers.
//!
//! Both walk the same density schedule, draw batches from the same cursor and
//! update with the same masked Adam; they differ only in what happens between
//! two permanent prunes.
//!
//! Simulation-guided, per pruning step `p` with target density `d_p`:
//!
//! ```text
//! repeat s times, one fresh batch each:
//!     sel ← lowest-|w| alive positions of M down to d_p
//!     T   ← M with Z ∪ sel zeroed          (M untouched)
//!     g   ← ∇loss(T, batch)
//!     Adam(M, g), positions in Z frozen    (the update lands on M, not T)
//! sel ← lowest-|w| alive positions of M down to d_p
//! commit sel into Z, zero it in M
//! ```
//!
//! Baseline: select on M, commit, then `retrain_steps` masked Adam updates with
//! gradients taken on the pruned M.

use std::error::Error as StdError;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::{BatchCursor, Dataset};
use crate::net::{DenseNetwork, Gradients, NetError, Objective};
use crate::optim::{AdamState, OptimError};
use crate::prune::{
    self, make_temporary, select_prune_set, target_alive_count, PruneError, PruneScope,
    PruneSelection, ZeroPositionSet,
};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("pruning step {step}: {source}")]
    Prune {
        step: usize,
        #[source]
        source: PruneError,
    },
    #[error("pruning step {step}: {source}")]
    Numerical {
        step: usize,
        #[source]
        source: NetError,
    },
    #[error("pruning step {step}: {source}")]
    Optim {
        step: usize,
        #[source]
        source: OptimError,
    },
    #[error("observer failed at pruning step {step}: {source}")]
    Observer {
        step: usize,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

pub type Result<T, E = AlgoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScheduleMode {
    /// Remove a fraction `r` of the weights still alive: `(1 - r)^k`.
    #[default]
    Multiplicative,
    /// Remove a fraction `r` of the original weights: `max(0, 1 - k r)`.
    Additive,
}

/// Fraction of weights alive after pruning step `step`.
pub fn target_density(step: usize, ratio: f64, mode: ScheduleMode) -> f64 {
    match mode {
        ScheduleMode::Multiplicative => (1.0 - ratio).powi(i32::try_from(step).unwrap_or(i32::MAX)),
        ScheduleMode::Additive => (1.0 - step as f64 * ratio).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Baseline,
    SimGuided,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SimGuided => "simguided",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "simguided" => Ok(Arm::SimGuided),
            other => Err(format!("unknown arm {other:?} (expected baseline or simguided)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRunConfig {
    /// Number of pruning steps `n`.
    pub steps: usize,
    /// Per-step prune ratio `r`.
    pub ratio: f64,
    /// Simulation steps `s` per pruning step.
    pub sim_steps: usize,
    /// Fine-tuning batches per baseline pruning step.
    pub retrain_steps: usize,
    pub schedule: ScheduleMode,
    pub scope: PruneScope,
    /// Zero the Adam moments at the start of every pruning step.
    pub reset_optimizer_each_step: bool,
}

impl Default for PruneRunConfig {
    fn default() -> Self {
        Self {
            steps: 132,
            ratio: 0.05,
            sim_steps: 1200,
            retrain_steps: 1200,
            schedule: ScheduleMode::Multiplicative,
            scope: PruneScope::Global,
            reset_optimizer_each_step: false,
        }
    }
}

impl PruneRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(AlgoError::Config(format!(
                "prune ratio {} must lie in (0, 1)",
                self.ratio
            )));
        }
        if self.sim_steps == 0 {
            return Err(AlgoError::Config("simulation steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Optimizer updates per pruning step for `arm`.
    pub fn updates_per_step(&self, arm: Arm) -> usize {
        match arm {
            Arm::Baseline => self.retrain_steps,
            Arm::SimGuided => self.sim_steps,
        }
    }

    pub fn has_budget_parity(&self) -> bool {
        self.sim_steps == self.retrain_steps
    }
}

/// Per pruning step rescue bookkeeping of the simulation-guided arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRescue {
    pub step: usize,
    /// Distinct positions that appeared in any temporary selection.
    pub candidates: usize,
    /// Candidates that escaped the committed selection.
    pub rescued: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RescueStats {
    pub per_step: Vec<StepRescue>,
}

impl RescueStats {
    pub fn total_rescued(&self) -> usize {
        self.per_step.iter().map(|s| s.rescued).sum()
    }
}

/// Snapshot handed to observers after every pruning step (and once before the
/// first, with `step == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub arm: Arm,
    pub step: usize,
    pub alive_ratio: f64,
    /// Mean training loss over the step's optimizer updates, if any ran.
    pub train_loss: Option<f64>,
    pub rescued_count: usize,
    pub optimizer_steps: u64,
    pub wall_time: Duration,
}

pub type ObserverError = Box<dyn StdError + Send + Sync>;

pub trait PruneObserver<T: Scalar> {
    fn on_step(
        &mut self,
        event: &PruneEvent,
        model: &DenseNetwork<T>,
        mask: &ZeroPositionSet,
    ) -> Result<(), ObserverError>;
}

/// Observer that ignores every event.
pub struct Silent;

impl<T: Scalar> PruneObserver<T> for Silent {
    fn on_step(&mut self, _: &PruneEvent, _: &DenseNetwork<T>, _: &ZeroPositionSet) -> Result<(), ObserverError> {
        Ok(())
    }
}

/// Collects every event; useful in tests.
#[derive(Debug, Default)]
pub struct EventLog(pub Vec<PruneEvent>);

impl<T: Scalar> PruneObserver<T> for EventLog {
    fn on_step(&mut self, event: &PruneEvent, _: &DenseNetwork<T>, _: &ZeroPositionSet) -> Result<(), ObserverError> {
        self.0.push(event.clone());
        Ok(())
    }
}

/// Everything a run mutates: the model M, the optimizer and the data cursor.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: DenseNetwork<T>,
    pub optimizer: AdamState<T>,
    pub cursor: BatchCursor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOutcome {
    pub mask: ZeroPositionSet,
    pub rescue: RescueStats,
    /// Optimizer updates performed by this run.
    pub optimizer_steps: u64,
}

/// Result of one instrumented simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationStep<T> {
    pub selection: PruneSelection<T>,
    pub loss: T,
    /// Gradient evaluated on the temporarily reduced network.
    pub gradients: Gradients<T>,
}

/// Selection for one schedule point; empty when rounding leaves nothing to
/// remove.
fn select_for_target<T: Scalar>(
    model: &DenseNetwork<T>,
    mask: &ZeroPositionSet,
    target: f64,
    scope: PruneScope,
) -> std::result::Result<PruneSelection<T>, PruneError> {
    if target_alive_count(mask.total(), target) >= mask.alive_count() {
        return Ok(PruneSelection::empty());
    }
    select_prune_set(model, mask, target, scope)
}

/// One simulation step: select candidates on `model`, zero them in a copy,
/// take the gradient there and apply it to `model` with `mask` frozen.
#[allow(clippy::too_many_arguments)]
pub fn simulate_once<T: Scalar, O: Objective<T>>(
    model: &mut DenseNetwork<T>,
    mask: &ZeroPositionSet,
    optimizer: &mut AdamState<T>,
    objective: &O,
    batch: &crate::data::Batch<T>,
    target: f64,
    scope: PruneScope,
    step: usize,
) -> Result<SimulationStep<T>> {
    let prune_err = |source| AlgoError::Prune { step, source };
    let selection = select_for_target(model, mask, target, scope).map_err(prune_err)?;
    let reduced = make_temporary(model, mask, &selection).map_err(prune_err)?;
    let (loss, gradients) = objective
        .loss_and_gradients(&reduced, batch)
        .map_err(|source| AlgoError::Numerical { step, source })?;
    optimizer
        .step(model, &gradients, Some(mask))
        .map_err(|source| AlgoError::Optim { step, source })?;
    Ok(SimulationStep {
        selection,
        loss,
        gradients,
    })
}

fn masked_update<T: Scalar, O: Objective<T>>(
    state: &mut TrainState<T>,
    mask: &ZeroPositionSet,
    objective: &O,
    train: &Dataset<T>,
    step: usize,
) -> Result<T> {
    let batch = state.cursor.next_batch(train);
    let (loss, grads) = objective
        .loss_and_gradients(&state.model, &batch)
        .map_err(|source| AlgoError::Numerical { step, source })?;
    state
        .optimizer
        .step(&mut state.model, &grads, Some(mask))
        .map_err(|source| AlgoError::Optim { step, source })?;
    Ok(loss)
}

fn check_state<T: Scalar>(state: &TrainState<T>, train: &Dataset<T>) -> Result<()> {
    if !state.optimizer.is_congruent(&state.model) {
        return Err(AlgoError::Config("optimizer state does not match the model".into()));
    }
    if train.features() != state.model.architecture().inputs() {
        return Err(AlgoError::Config(format!(
            "dataset has {} features, model expects {}",
            train.features(),
            state.model.architecture().inputs()
        )));
    }
    Ok(())
}

fn mean(sum: f64, count: usize) -> Option<f64> {
    (count > 0).then(|| sum / count as f64)
}

struct Emitter<'o, T: Scalar> {
    arm: Arm,
    started: Instant,
    observer: &'o mut dyn PruneObserver<T>,
}

impl<T: Scalar> Emitter<'_, T> {
    fn emit(
        &mut self,
        step: usize,
        model: &DenseNetwork<T>,
        mask: &ZeroPositionSet,
        train_loss: Option<f64>,
        rescued_count: usize,
        optimizer_steps: u64,
    ) -> Result<()> {
        let event = PruneEvent {
            arm: self.arm,
            step,
            alive_ratio: mask.alive_ratio(),
            train_loss,
            rescued_count,
            optimizer_steps,
            wall_time: self.started.elapsed(),
        };
        self.observer
            .on_step(&event, model, mask)
            .map_err(|source| AlgoError::Observer { step, source })
    }
}

/// Simulation-guided iterative pruning of `state.model`, which ends up as the
/// reduced network. No fine-tuning follows a commit.
pub fn simulation_guided_prune<T: Scalar, O: Objective<T>>(
    state: &mut TrainState<T>,
    train: &Dataset<T>,
    objective: &O,
    cfg: &PruneRunConfig,
    observer: &mut dyn PruneObserver<T>,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    check_state(state, train)?;
    let mut mask = ZeroPositionSet::for_network(&state.model);
    let mut rescue = RescueStats::default();
    let mut updates = 0u64;
    let mut emitter = Emitter {
        arm: Arm::SimGuided,
        started: Instant::now(),
        observer,
    };
    emitter.emit(0, &state.model, &mask, None, 0, 0)?;

    // Per-layer flags of positions seen in any temporary selection this step.
    let mut seen: Vec<Vec<bool>> = mask.shapes().iter().map(|&(o, i)| vec![false; o * i]).collect();
    for step in 1..=cfg.steps {
        if cfg.reset_optimizer_each_step {
            state.optimizer.reset();
        }
        let target = target_density(step, cfg.ratio, cfg.schedule);
        seen.iter_mut().for_each(|s| s.fill(false));
        let mut candidates = 0usize;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.sim_steps {
            let batch = state.cursor.next_batch(train);
            let sim = simulate_once(
                &mut state.model,
                &mask,
                &mut state.optimizer,
                objective,
                &batch,
                target,
                cfg.scope,
                step,
            )?;
            updates += 1;
            loss_sum += sim.loss.as_f64();
            for pos in &sim.selection.positions {
                let cols = mask.shapes()[pos.layer].1;
                let flag = &mut seen[pos.layer][pos.row * cols + pos.col];
                if !*flag {
                    *flag = true;
                    candidates += 1;
                }
            }
        }

        // Re-rank on the post-simulation weights; this is where rescue happens.
        let prune_err = |source| AlgoError::Prune { step, source };
        let selection =
            select_for_target(&state.model, &mask, target, cfg.scope).map_err(prune_err)?;
        let kept_candidates = selection
            .positions
            .iter()
            .filter(|p| seen[p.layer][p.row * mask.shapes()[p.layer].1 + p.col])
            .count();
        let rescued = candidates - kept_candidates;
        prune::commit(&mut mask, &selection, &mut state.model).map_err(prune_err)?;
        rescue.per_step.push(StepRescue {
            step,
            candidates,
            rescued,
        });
        debug_assert!(state.model.all_finite());
        emitter.emit(
            step,
            &state.model,
            &mask,
            mean(loss_sum, cfg.sim_steps),
            rescued,
            updates,
        )?;
    }
    Ok(PruneOutcome {
        mask,
        rescue,
        optimizer_steps: updates,
    })
}

/// Iterative magnitude pruning with masked fine-tuning after every commit.
pub fn baseline_iterative_prune<T: Scalar, O: Objective<T>>(
    state: &mut TrainState<T>,
    train: &Dataset<T>,
    objective: &O,
    cfg: &PruneRunConfig,
    observer: &mut dyn PruneObserver<T>,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    check_state(state, train)?;
    let mut mask = ZeroPositionSet::for_network(&state.model);
    let mut rescue = RescueStats::default();
    let mut updates = 0u64;
    let mut emitter = Emitter {
        arm: Arm::Baseline,
        started: Instant::now(),
        observer,
    };
    emitter.emit(0, &state.model, &mask, None, 0, 0)?;

    for step in 1..=cfg.steps {
        if cfg.reset_optimizer_each_step {
            state.optimizer.reset();
        }
        let target = target_density(step, cfg.ratio, cfg.schedule);
        let prune_err = |source| AlgoError::Prune { step, source };
        let selection =
            select_for_target(&state.model, &mask, target, cfg.scope).map_err(prune_err)?;
        prune::commit(&mut mask, &selection, &mut state.model).map_err(prune_err)?;

        let mut loss_sum = 0.0;
        for _ in 0..cfg.retrain_steps {
            loss_sum += masked_update(state, &mask, objective, train, step)?.as_f64();
            updates += 1;
        }
        rescue.per_step.push(StepRescue {
            step,
            candidates: selection.len(),
            rescued: 0,
        });
        debug_assert!(state.model.all_finite());
        emitter.emit(
            step,
            &state.model,
            &mask,
            mean(loss_sum, cfg.retrain_steps),
            0,
            updates,
        )?;
    }
    Ok(PruneOutcome {
        mask,
        rescue,
        optimizer_steps: updates,
    })
}

/// Runs the driver for `arm`.
pub fn run_arm<T: Scalar, O: Objective<T>>(
    arm: Arm,
    state: &mut TrainState<T>,
    train: &Dataset<T>,
    objective: &O,
    cfg: &PruneRunConfig,
    observer: &mut dyn PruneObserver<T>,
) -> Result<PruneOutcome> {
    match arm {
        Arm::Baseline => baseline_iterative_prune(state, train, objective, cfg, observer),
        Arm::SimGuided => simulation_guided_prune(state, train, objective, cfg, observer),
    }
}
