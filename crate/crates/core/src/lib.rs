//! Iterative magnitude pruning for dense multilayer perceptrons.
//!
//! The crate holds two pruning drivers that share one network, optimizer and
//! mask implementation:
//!
//! * [`algo::baseline_iterative_prune`]: prune the smallest weights, then
//!   fine-tune the survivors (classic prune-and-retrain).
//! * [`algo::simulation_guided_prune`]: before each permanent prune, run a
//!   number of simulation steps in which the candidate weights are zeroed in a
//!   temporary copy of the network, gradients are taken on that copy, and the
//!   update is applied to the stored, unpruned network. Candidates that grow
//!   during simulation escape the permanent prune.
//!
//! All numerics are generic over a [`Scalar`] (`f32` for experiments, `f64`
//! for gradient checks). The concrete aliases below are what most callers use.

pub mod algo;
pub mod data;
pub mod net;
pub mod optim;
pub mod prune;
mod scalar;

pub use scalar::Scalar;

pub use algo::{
    baseline_iterative_prune, run_arm, simulation_guided_prune, target_density, Arm, PruneEvent,
    PruneObserver, PruneOutcome, PruneRunConfig, RescueStats, ScheduleMode, TrainState,
};
pub use data::{Batch, BatchCursor, CursorState, Dataset, Split};
pub use net::{Architecture, CrossEntropyL2, DenseLayer, DenseNetwork, Gradients, Objective};
pub use optim::{AdamConfig, AdamState};
pub use prune::{Position, PruneScope, PruneSelection, ZeroPositionSet};

/// Single-precision network, the type used by the experiment harness.
pub type Network = DenseNetwork<f32>;
/// Double-precision network, used where strict numerical oracles apply.
pub type Network64 = DenseNetwork<f64>;
pub type Grads = Gradients<f32>;
pub type Grads64 = Gradients<f64>;
pub type Adam = AdamState<f32>;
pub type Adam64 = AdamState<f64>;
pub type MnistDataset = Dataset<f32>;
pub type MnistBatch = Batch<f32>;
pub type Selection = PruneSelection<f32>;
