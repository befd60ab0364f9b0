//! Magnitude importance, percentile selection and the permanent zero mask.
//!
//! Ranking is by `|w|` over weights only (biases are never pruned). Among equal
//! scores the position that comes first in `(layer, row, col)` order is pruned
//! first, and target counts use round-half-up, so a selection is a pure function
//! of the network bits, the mask and the target.

use std::cmp::Ordering;

use ndarray::Array2;
use thiserror::Error;

use crate::net::{Architecture, DenseNetwork};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("target alive ratio {target} must be below the current alive ratio {current}")]
    TargetNotBelowCurrent { target: f64, current: f64 },
    #[error("target alive ratio {0} must be a finite, non-negative fraction")]
    InvalidTarget(f64),
    #[error("position {0:?} is already permanently pruned")]
    Overlap(Position),
    #[error("position {0:?} is out of range")]
    OutOfRange(Position),
    #[error("mask shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = PruneError> = std::result::Result<T, E>;

/// A weight position. Derived ordering is the lexicographic tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub fn new(layer: usize, row: usize, col: usize) -> Self {
        Self { layer, row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PruneScope {
    /// One threshold across all layers.
    #[default]
    Global,
    /// Quota split across layers in proportion to each layer's alive count.
    PerLayer,
}

/// Permanently pruned weight positions, one row-major mask per weight matrix.
/// Positions are only ever added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroPositionSet {
    shapes: Vec<(usize, usize)>,
    masks: Vec<Vec<bool>>,
    pruned: usize,
}

impl ZeroPositionSet {
    pub fn new(arch: &Architecture) -> Self {
        let shapes: Vec<_> = arch.weight_shapes().collect();
        let masks = shapes.iter().map(|&(o, i)| vec![false; o * i]).collect();
        Self {
            shapes,
            masks,
            pruned: 0,
        }
    }

    pub fn for_network<T: Scalar>(net: &DenseNetwork<T>) -> Self {
        Self::new(&net.architecture())
    }

    /// Rebuilds a set from explicit masks (e.g. a decoded checkpoint).
    pub fn from_masks(shapes: Vec<(usize, usize)>, masks: Vec<Vec<bool>>) -> Result<Self> {
        if shapes.len() != masks.len()
            || shapes.iter().zip(&masks).any(|(&(o, i), m)| o * i != m.len())
        {
            return Err(PruneError::ShapeMismatch(
                "mask lengths do not match layer shapes".into(),
            ));
        }
        let pruned = masks.iter().flatten().filter(|&&b| b).count();
        Ok(Self {
            shapes,
            masks,
            pruned,
        })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    /// Row-major mask of one layer; `true` means pruned.
    pub fn layer_mask(&self, layer: usize) -> &[bool] {
        &self.masks[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned
    }

    pub fn alive_count(&self) -> usize {
        self.total() - self.pruned
    }

    pub fn layer_alive_count(&self, layer: usize) -> usize {
        self.masks[layer].iter().filter(|&&b| !b).count()
    }

    /// `(total - pruned) / total`.
    pub fn alive_ratio(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.alive_count() as f64 / total as f64
    }

    pub fn contains(&self, pos: Position) -> bool {
        self.index_of(pos).is_some_and(|i| self.masks[pos.layer][i])
    }

    fn index_of(&self, pos: Position) -> Option<usize> {
        let &(rows, cols) = self.shapes.get(pos.layer)?;
        (pos.row < rows && pos.col < cols).then_some(pos.row * cols + pos.col)
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.masks.iter().enumerate().flat_map(move |(layer, mask)| {
            let cols = self.shapes[layer].1;
            mask.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(i, _)| Position::new(layer, i / cols, i % cols))
        })
    }

    pub fn is_compatible<T: Scalar>(&self, net: &DenseNetwork<T>) -> bool {
        self.shapes.len() == net.num_layers()
            && self
                .shapes
                .iter()
                .enumerate()
                .all(|(k, &s)| net.weights(k).dim() == s)
    }

    fn check_compatible<T: Scalar>(&self, net: &DenseNetwork<T>) -> Result<()> {
        if self.is_compatible(net) {
            Ok(())
        } else {
            Err(PruneError::ShapeMismatch(format!(
                "mask for {:?} applied to network {}",
                self.shapes,
                net.architecture()
            )))
        }
    }

    /// Fails on the first selected position that is out of range or already pruned.
    fn check_disjoint(&self, positions: &[Position]) -> Result<()> {
        for &pos in positions {
            match self.index_of(pos) {
                None => return Err(PruneError::OutOfRange(pos)),
                Some(i) if self.masks[pos.layer][i] => return Err(PruneError::Overlap(pos)),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Positions chosen at one pruning step, in `(layer, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSelection<T> {
    pub positions: Vec<Position>,
    /// Largest selected score: a single entry for global scope, one entry per
    /// layer for per-layer scope (`None` where a layer's quota was zero).
    pub thresholds: Vec<Option<T>>,
}

impl<T> PruneSelection<T> {
    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            thresholds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Per-weight importance, `|w|`.
pub fn importance<T: Scalar>(net: &DenseNetwork<T>) -> Vec<Array2<T>> {
    (0..net.num_layers())
        .map(|k| net.weights(k).mapv(T::abs))
        .collect()
}

/// `floor(x + 0.5)` for non-negative `x`.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Number of weights that must stay alive to reach `target_alive`.
pub fn target_alive_count(total: usize, target_alive: f64) -> usize {
    round_half_up(target_alive * total as f64).min(total)
}

#[derive(Clone, Copy)]
struct Candidate<T> {
    score: T,
    layer: u32,
    index: u32,
}

fn candidate_order<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .unwrap_or(Ordering::Equal)
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

fn alive_candidates<T: Scalar>(
    net: &DenseNetwork<T>,
    z: &ZeroPositionSet,
    layer: usize,
    out: &mut Vec<Candidate<T>>,
) {
    let weights = net.weights(layer);
    let weights = weights.as_slice().expect("weights are row-major contiguous");
    for (i, (&w, &pruned)) in weights.iter().zip(z.layer_mask(layer)).enumerate() {
        if !pruned {
            out.push(Candidate {
                score: w.abs(),
                layer: layer as u32,
                index: i as u32,
            });
        }
    }
}

/// Keeps the `k` smallest candidates and returns the largest kept score.
fn smallest<T: Scalar>(candidates: &mut Vec<Candidate<T>>, k: usize) -> Option<T> {
    if k == 0 {
        candidates.clear();
        return None;
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, candidate_order);
        candidates.truncate(k);
    }
    candidates
        .iter()
        .map(|c| c.score)
        .fold(None, |m: Option<T>, s| Some(m.map_or(s, |m| m.max(s))))
}

/// Largest-remainder apportionment of `k` across layers by alive count.
fn apportion(k: usize, alive: &[usize]) -> Vec<usize> {
    let total: usize = alive.iter().sum();
    if total == 0 {
        return vec![0; alive.len()];
    }
    let mut quotas: Vec<usize> = Vec::with_capacity(alive.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(alive.len());
    for (layer, &a) in alive.iter().enumerate() {
        let share = k as u128 * a as u128;
        quotas.push((share / total as u128) as usize);
        remainders.push((share % total as u128, layer));
    }
    let mut left = k - quotas.iter().sum::<usize>();
    // Largest remainder first, lower layer index on ties.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, layer) in &remainders {
        if left == 0 {
            break;
        }
        if quotas[layer] < alive[layer] {
            quotas[layer] += 1;
            left -= 1;
        }
    }
    quotas
}

fn to_positions<T: Scalar>(z: &ZeroPositionSet, candidates: &[Candidate<T>]) -> Vec<Position> {
    let mut positions: Vec<Position> = candidates
        .iter()
        .map(|c| {
            let cols = z.shapes[c.layer as usize].1;
            let i = c.index as usize;
            Position::new(c.layer as usize, i / cols, i % cols)
        })
        .collect();
    positions.sort_unstable();
    positions
}

/// Selects the alive weights to remove so that `target_alive` of all weights
/// remain: `k = alive - round(target_alive * total)` positions with the
/// smallest `|w|`.
pub fn select_prune_set<T: Scalar>(
    net: &DenseNetwork<T>,
    z: &ZeroPositionSet,
    target_alive: f64,
    scope: PruneScope,
) -> Result<PruneSelection<T>> {
    z.check_compatible(net)?;
    if !target_alive.is_finite() || target_alive < 0.0 {
        return Err(PruneError::InvalidTarget(target_alive));
    }
    let current = z.alive_ratio();
    if target_alive >= current {
        return Err(PruneError::TargetNotBelowCurrent {
            target: target_alive,
            current,
        });
    }
    let alive = z.alive_count();
    let k = alive.saturating_sub(target_alive_count(z.total(), target_alive));

    match scope {
        PruneScope::Global => {
            let mut candidates = Vec::with_capacity(alive);
            for layer in 0..z.num_layers() {
                alive_candidates(net, z, layer, &mut candidates);
            }
            let threshold = smallest(&mut candidates, k);
            Ok(PruneSelection {
                positions: to_positions(z, &candidates),
                thresholds: threshold.into_iter().map(Some).collect(),
            })
        }
        PruneScope::PerLayer => {
            let layer_alive: Vec<usize> = (0..z.num_layers()).map(|l| z.layer_alive_count(l)).collect();
            let quotas = apportion(k, &layer_alive);
            let mut chosen = Vec::with_capacity(k);
            let mut thresholds = Vec::with_capacity(quotas.len());
            let mut candidates = Vec::new();
            for (layer, &quota) in quotas.iter().enumerate() {
                candidates.clear();
                alive_candidates(net, z, layer, &mut candidates);
                thresholds.push(smallest(&mut candidates, quota));
                chosen.extend_from_slice(&candidates);
            }
            Ok(PruneSelection {
                positions: to_positions(z, &chosen),
                thresholds,
            })
        }
    }
}

/// Copy of `net` with every position in `z ∪ sel` set to zero. `net` itself is
/// left untouched.
pub fn make_temporary<T: Scalar>(
    net: &DenseNetwork<T>,
    z: &ZeroPositionSet,
    sel: &PruneSelection<T>,
) -> Result<DenseNetwork<T>> {
    z.check_compatible(net)?;
    z.check_disjoint(&sel.positions)?;
    let mut reduced = net.clone();
    apply_mask(&mut reduced, z)?;
    for pos in &sel.positions {
        reduced.weights_mut(pos.layer)[[pos.row, pos.col]] = T::zero();
    }
    Ok(reduced)
}

/// Adds `sel` to `z` and zeroes those weights in `net`. Nothing changes if any
/// selected position is invalid.
pub fn commit<T: Scalar>(
    z: &mut ZeroPositionSet,
    sel: &PruneSelection<T>,
    net: &mut DenseNetwork<T>,
) -> Result<()> {
    z.check_compatible(net)?;
    z.check_disjoint(&sel.positions)?;
    for &pos in &sel.positions {
        let i = z.index_of(pos).expect("checked above");
        // A duplicate entry inside `sel` must not be counted twice.
        if !z.masks[pos.layer][i] {
            z.masks[pos.layer][i] = true;
            z.pruned += 1;
        }
        net.weights_mut(pos.layer)[[pos.row, pos.col]] = T::zero();
    }
    Ok(())
}

/// Zeroes every weight of `net` at a position in `z`.
pub fn apply_mask<T: Scalar>(net: &mut DenseNetwork<T>, z: &ZeroPositionSet) -> Result<()> {
    z.check_compatible(net)?;
    for layer in 0..z.num_layers() {
        let mut weights = net.weights_mut(layer);
        let weights = weights.as_slice_mut().expect("weights are row-major contiguous");
        for (w, &pruned) in weights.iter_mut().zip(z.layer_mask(layer)) {
            if pruned {
                *w = T::zero();
            }
        }
    }
    Ok(())
}

/// True when every weight at a position in `z` is exactly zero.
pub fn mask_holds<T: Scalar>(net: &DenseNetwork<T>, z: &ZeroPositionSet) -> bool {
    z.is_compatible(net)
        && (0..z.num_layers()).all(|layer| {
            net.weights(layer)
                .iter()
                .zip(z.layer_mask(layer))
                .all(|(w, &pruned)| !pruned || w.is_zero())
        })
}

/// Fraction of weight positions not in `z`.
pub fn alive_ratio(z: &ZeroPositionSet) -> f64 {
    z.alive_ratio()
}
