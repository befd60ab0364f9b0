//! Independent oracles for the numeric core, shared by the core integration
//! tests and the harness acceptance suite. Every check returns `Ok(summary)` or
//! `Err(first violation)`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simprune::algo::{simulate_once, ObserverError};
use simprune::data::CursorState;
use simprune::net::{backward, loss};
use simprune::prune::{make_temporary, mask_holds, select_prune_set, target_alive_count};
use simprune::{
    baseline_iterative_prune, run_arm, simulation_guided_prune, target_density, AdamConfig, AdamState, Arm,
    Batch, BatchCursor, CrossEntropyL2, Dataset, DenseLayer, DenseNetwork, Gradients, Objective, Position,
    PruneEvent, PruneObserver, PruneRunConfig, PruneScope, ScheduleMode, Split, TrainState, ZeroPositionSet,
};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

/// Random network with weights in `[-1, 1]`; roughly `zero_fraction` of the
/// weights are exactly zero.
pub fn random_net(rng: &mut ChaCha8Rng, widths: &[usize], zero_fraction: f64) -> DenseNetwork<f64> {
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer {
            weights: Array2::from_shape_fn((w[1], w[0]), |_| {
                if rng.gen_bool(zero_fraction) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            }),
            bias: Array1::from_shape_fn(w[1], |_| rng.gen_range(-0.5..0.5)),
        })
        .collect();
    DenseNetwork::from_layers(layers).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, features: usize, classes: usize) -> Batch<f64> {
    Batch {
        x: Array2::from_shape_fn((rows, features), |_| rng.gen_range(0.0..1.0)),
        y: (0..rows).map(|_| rng.gen_range(0..classes) as u8).collect(),
    }
}

fn loss_at(net: &DenseNetwork<f64>, batch: &Batch<f64>, l2: f64) -> f64 {
    let logits = net.forward(batch.x.view()).unwrap();
    loss(logits.view(), &batch.y, net, l2).unwrap()
}

enum Param {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

fn param(net: &DenseNetwork<f64>, p: &Param) -> f64 {
    match *p {
        Param::Weight(l, r, c) => net.weights(l)[[r, c]],
        Param::Bias(l, i) => net.layers()[l].bias[i],
    }
}

fn set_param(net: &mut DenseNetwork<f64>, p: &Param, value: f64) {
    match *p {
        Param::Weight(l, r, c) => net.weights_mut(l)[[r, c]] = value,
        Param::Bias(l, i) => net.bias_mut(l)[i] = value,
    }
}

/// Analytic gradients against central finite differences: 100 probes over
/// toy double-precision nets of at most 200 parameters, a quarter of them on
/// weights that are exactly zero.
pub fn gradient_check() -> Check {
    const PROBES: usize = 100;
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let archs: [&[usize]; 4] = [&[6, 5, 4, 3], &[4, 8, 3], &[3, 7, 6, 2], &[10, 6, 5]];
    let l2 = 1e-3;
    let mut worst = 0.0f64;
    let mut zero_probes = 0;
    let mut probe = 0;
    while probe < PROBES {
        let widths = archs[probe % archs.len()];
        let mut net = random_net(&mut rng, widths, 0.2);
        let params: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        ensure!(params <= 200, "toy net {widths:?} has {params} parameters");
        let batch = random_batch(&mut rng, 8, widths[0], *widths.last().unwrap());
        let (_, grads) = backward(&net, &batch, l2).map_err(|e| e.to_string())?;

        let layer = rng.gen_range(0..net.num_layers());
        let (rows, cols) = net.weights(layer).dim();
        let want_zero = probe % 4 == 0;
        let p = if want_zero {
            let zeros: Vec<(usize, usize)> = net
                .weights(layer)
                .indexed_iter()
                .filter(|(_, &w)| w == 0.0)
                .map(|(ix, _)| ix)
                .collect();
            match zeros.get(rng.gen_range(0..zeros.len().max(1))) {
                Some(&(r, c)) => Param::Weight(layer, r, c),
                None => continue,
            }
        } else if rng.gen_bool(0.8) {
            Param::Weight(layer, rng.gen_range(0..rows), rng.gen_range(0..cols))
        } else {
            Param::Bias(layer, rng.gen_range(0..rows))
        };
        let analytic = match p {
            Param::Weight(l, r, c) => grads.weights[l][[r, c]],
            Param::Bias(l, i) => grads.biases[l][i],
        };
        let centre = param(&net, &p);
        if centre == 0.0 {
            zero_probes += 1;
        }
        set_param(&mut net, &p, centre + H);
        let up = loss_at(&net, &batch, l2);
        set_param(&mut net, &p, centre - H);
        let down = loss_at(&net, &batch, l2);
        set_param(&mut net, &p, centre);
        let numeric = (up - down) / (2.0 * H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        ensure!(
            rel < TOL,
            "probe {probe} on {widths:?}: analytic {analytic:e} numeric {numeric:e} relative error {rel:e}"
        );
        worst = worst.max(rel);
        probe += 1;
    }
    ensure!(zero_probes >= PROBES / 5, "only {zero_probes} probes hit zero weights");
    Ok(format!(
        "{PROBES} probes ({zero_probes} at zero weights), worst relative error {worst:.2e}"
    ))
}

/// Adam as a plain scalar recurrence.
#[derive(Clone, Copy, Default)]
struct ScalarAdam {
    m: f64,
    v: f64,
}

impl ScalarAdam {
    fn step(&mut self, w: f64, g: f64, t: i32, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(t));
        let v_hat = self.v / (1.0 - b2.powi(t));
        w - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// The optimizer against a scalar recurrence over 100 random steps, with a
/// frozen position that must not move, plus the single-step worked example.
pub fn adam_oracle() -> Check {
    const STEPS: usize = 100;
    const TOL: f64 = 1e-6;
    let lr = 0.005;

    let mut one = DenseNetwork::from_layers(vec![DenseLayer {
        weights: array![[1.0]],
        bias: array![0.0],
    }])
    .unwrap();
    let mut opt = AdamState::new(&one, AdamConfig::with_lr(lr));
    let grads = Gradients {
        weights: vec![array![[0.5]]],
        biases: vec![array![0.0]],
    };
    opt.step(&mut one, &grads, None).map_err(|e| e.to_string())?;
    let w = one.weights(0)[[0, 0]];
    ensure!(
        format!("{w:.6}") == "0.995000",
        "worked example gives {w:.9}, expected 0.995000"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = random_net(&mut rng, &[4, 3], 0.0);
    let frozen_pos = Position::new(0, 1, 2);
    let mut mask = vec![false; 12];
    mask[frozen_pos.row * 4 + frozen_pos.col] = true;
    let frozen = ZeroPositionSet::from_masks(vec![(3, 4)], vec![mask]).map_err(|e| e.to_string())?;
    net.weights_mut(0)[[1, 2]] = 0.0;

    let mut opt = AdamState::new(&net, AdamConfig::with_lr(lr));
    let mut w_ref: Vec<f64> = net.weights(0).iter().copied().collect();
    let mut b_ref: Vec<f64> = net.layers()[0].bias.to_vec();
    let mut w_state = vec![ScalarAdam::default(); w_ref.len()];
    let mut b_state = vec![ScalarAdam::default(); b_ref.len()];
    let mut worst = 0.0f64;
    for t in 1..=STEPS {
        let scale = 10f64.powf(rng.gen_range(-3.0..1.0));
        let gw = Array2::from_shape_fn((3, 4), |_| scale * rng.gen_range(-1.0..1.0));
        let gb = Array1::from_shape_fn(3, |_| scale * rng.gen_range(-1.0..1.0));
        for (i, w) in w_ref.iter_mut().enumerate() {
            if i != frozen_pos.row * 4 + frozen_pos.col {
                *w = w_state[i].step(*w, gw.as_slice().unwrap()[i], t as i32, lr);
            }
        }
        for (i, b) in b_ref.iter_mut().enumerate() {
            *b = b_state[i].step(*b, gb[i], t as i32, lr);
        }
        let grads = Gradients {
            weights: vec![gw],
            biases: vec![gb],
        };
        opt.step(&mut net, &grads, Some(&frozen)).map_err(|e| e.to_string())?;
        let weights = net.weights(0);
        let got = weights.iter().chain(net.layers()[0].bias.iter()).copied();
        for (i, (g, want)) in got.zip(w_ref.iter().chain(b_ref.iter())).enumerate() {
            let rel = (g - want).abs() / want.abs().max(1e-12);
            ensure!(rel < TOL, "step {t}, parameter {i}: {g} vs reference {want}");
            worst = worst.max(rel);
        }
        ensure!(
            net.weights(0)[[1, 2]].to_bits() == 0.0f64.to_bits(),
            "frozen weight moved at step {t}"
        );
    }
    Ok(format!(
        "worked example {w:.6}; {STEPS} random steps, worst relative error {worst:.2e}"
    ))
}

/// Random network whose weights come partly from a coarse grid so that ties,
/// including ties at zero, are common; positions in `z` hold zero.
fn tie_heavy(rng: &mut ChaCha8Rng) -> (DenseNetwork<f64>, ZeroPositionSet) {
    loop {
        let depth = rng.gen_range(2..=4);
        let widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=24)).collect();
        let total: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
        if total == 0 || total > 1000 {
            continue;
        }
        let mut net = random_net(rng, &widths, 0.05);
        let grid = rng.gen_bool(0.7);
        for l in 0..net.num_layers() {
            for w in net.weights_mut(l).iter_mut() {
                if grid && rng.gen_bool(0.6) {
                    *w = rng.gen_range(-3i32..=3) as f64 * 0.1;
                }
            }
        }
        let masks: Vec<Vec<bool>> = widths
            .windows(2)
            .map(|w| (0..w[0] * w[1]).map(|_| rng.gen_bool(0.3)).collect())
            .collect();
        let shapes: Vec<(usize, usize)> = widths.windows(2).map(|w| (w[1], w[0])).collect();
        let z = ZeroPositionSet::from_masks(shapes, masks).unwrap();
        for p in z.positions().collect::<Vec<_>>() {
            net.weights_mut(p.layer)[[p.row, p.col]] = 0.0;
        }
        if z.alive_count() > 0 {
            return (net, z);
        }
    }
}

/// Alive positions of `layers`, fully sorted by `(|w|, layer, row, col)`.
fn sorted_alive(net: &DenseNetwork<f64>, z: &ZeroPositionSet, layers: &[usize]) -> Vec<(f64, Position)> {
    let mut all = Vec::new();
    for &l in layers {
        for ((r, c), &w) in net.weights(l).indexed_iter() {
            let p = Position::new(l, r, c);
            if !z.contains(p) {
                all.push((w.abs(), p));
            }
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

/// Quotas by largest remainder, computed with exact integer remainders.
fn largest_remainder(k: usize, alive: &[usize]) -> Vec<usize> {
    let total: usize = alive.iter().sum();
    let mut quotas: Vec<usize> = alive.iter().map(|&a| k * a / total).collect();
    let mut order: Vec<usize> = (0..alive.len()).collect();
    order.sort_by_key(|&l| (std::cmp::Reverse(k * alive[l] % total), l));
    let mut left = k - quotas.iter().sum::<usize>();
    for l in order {
        if left == 0 {
            break;
        }
        quotas[l] += 1;
        left -= 1;
    }
    quotas
}

/// Selection against a brute-force full sort on 200 tie-heavy random
/// networks of at most 1000 weights, in both scopes.
pub fn selection_oracle() -> Check {
    const NETS: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tied = 0;
    for case in 0..NETS {
        let (net, z) = tie_heavy(&mut rng);
        let current = z.alive_ratio();
        let target = rng.gen_range(0.0..current);
        let k = z.alive_count() - target_alive_count(z.total(), target);

        let layers: Vec<usize> = (0..net.num_layers()).collect();
        let all = sorted_alive(&net, &z, &layers);
        let mut want: Vec<Position> = all[..k].iter().map(|e| e.1).collect();
        want.sort();
        if k > 0 && k < all.len() && all[k - 1].0 == all[k].0 {
            tied += 1;
        }
        let got = select_prune_set(&net, &z, target, PruneScope::Global).map_err(|e| e.to_string())?;
        ensure!(
            got.positions == want,
            "case {case} (global, k={k}): selection differs from the full sort"
        );
        let threshold = all[..k].last().map(|e| e.0);
        ensure!(
            got.thresholds == vec![threshold].into_iter().flatten().map(Some).collect::<Vec<_>>(),
            "case {case}: threshold {:?} vs {threshold:?}",
            got.thresholds
        );

        let alive: Vec<usize> = layers.iter().map(|&l| z.layer_alive_count(l)).collect();
        let quotas = largest_remainder(k, &alive);
        let mut want: Vec<Position> = Vec::new();
        for (&l, &q) in layers.iter().zip(&quotas) {
            want.extend(sorted_alive(&net, &z, &[l])[..q].iter().map(|e| e.1));
        }
        want.sort();
        let got = select_prune_set(&net, &z, target, PruneScope::PerLayer).map_err(|e| e.to_string())?;
        ensure!(
            got.positions == want,
            "case {case} (per-layer, quotas {quotas:?}): selection differs from the full sort"
        );
    }
    ensure!(tied >= NETS / 10, "only {tied} cases had a tie at the cut");
    Ok(format!("{NETS} networks, both scopes, {tied} with a tie at the cut"))
}

/// Synthetic classification data with `features` inputs in `[0, 1]`.
pub fn synthetic(rng: &mut ChaCha8Rng, rows: usize, features: usize, classes: usize) -> Dataset<f64> {
    let b = random_batch(rng, rows, features, classes);
    Dataset::new(b.x, b.y, Split::Train).unwrap()
}

fn fingerprint(net: &DenseNetwork<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for l in net.layers() {
        l.weights.iter().chain(l.bias.iter()).for_each(|v| v.to_bits().hash(&mut h));
    }
    h.finish()
}

/// Checks the mask contracts after every pruning step.
struct ContractObserver {
    cfg: PruneRunConfig,
    previous: Option<ZeroPositionSet>,
    steps_seen: usize,
    rng: ChaCha8Rng,
}

impl ContractObserver {
    fn verify(&mut self, event: &PruneEvent, model: &DenseNetwork<f64>, mask: &ZeroPositionSet) -> Check {
        if let Some(prev) = &self.previous {
            ensure!(
                prev.positions().all(|p| mask.contains(p)),
                "step {}: a position left the zero set",
                event.step
            );
        }
        ensure!(mask_holds(model, mask), "step {}: nonzero weight in the zero set", event.step);
        let expected = target_alive_count(mask.total(), target_density(event.step, self.cfg.ratio, self.cfg.schedule));
        ensure!(
            mask.alive_count() == expected.min(self.previous.as_ref().map_or(mask.total(), |p| p.alive_count())),
            "step {}: {} alive, schedule asks for {expected}",
            event.step,
            mask.alive_count()
        );
        ensure!(
            (event.alive_ratio - mask.alive_ratio()).abs() == 0.0,
            "step {}: event alive ratio {} vs mask {}",
            event.step,
            event.alive_ratio,
            mask.alive_ratio()
        );

        // make_temporary on the live model at a random lower target.
        if mask.alive_count() > 0 {
            let target = self.rng.gen_range(0.0..mask.alive_ratio());
            let sel = select_prune_set(model, mask, target, self.cfg.scope).map_err(|e| e.to_string())?;
            let (before_model, before_mask) = (fingerprint(model), mask.clone());
            let reduced = make_temporary(model, mask, &sel).map_err(|e| e.to_string())?;
            ensure!(
                fingerprint(model) == before_model && *mask == before_mask,
                "step {}: make_temporary mutated its input",
                event.step
            );
            for l in 0..model.num_layers() {
                for ((r, c), &w) in reduced.weights(l).indexed_iter() {
                    let p = Position::new(l, r, c);
                    let zeroed = mask.contains(p) || sel.positions.binary_search(&p).is_ok();
                    let want = if zeroed { 0.0 } else { model.weights(l)[[r, c]] };
                    ensure!(w.to_bits() == want.to_bits(), "step {}: T differs from M at {p:?}", event.step);
                }
            }
        }
        self.previous = Some(mask.clone());
        self.steps_seen += 1;
        Ok(String::new())
    }
}

impl PruneObserver<f64> for ContractObserver {
    fn on_step(&mut self, event: &PruneEvent, model: &DenseNetwork<f64>, mask: &ZeroPositionSet) -> Result<(), ObserverError> {
        self.verify(event, model, mask).map(|_| ()).map_err(Into::into)
    }
}

/// 50 short random runs of both arms with the mask contracts checked after
/// every pruning step.
pub fn mask_contracts() -> Check {
    const RUNS: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for run in 0..RUNS {
        let features = rng.gen_range(2..=8);
        let classes = rng.gen_range(2..=4);
        let widths = [features, rng.gen_range(2..=10), rng.gen_range(2..=6), classes];
        let model = random_net(&mut rng, &widths, 0.0);
        let data = synthetic(&mut rng, 40, features, classes);
        let cfg = PruneRunConfig {
            steps: rng.gen_range(1..=8),
            ratio: rng.gen_range(0.05..0.4),
            sim_steps: rng.gen_range(1..=4),
            retrain_steps: rng.gen_range(0..=4),
            schedule: if rng.gen_bool(0.7) { ScheduleMode::Multiplicative } else { ScheduleMode::Additive },
            scope: if rng.gen_bool(0.5) { PruneScope::Global } else { PruneScope::PerLayer },
            reset_optimizer_each_step: rng.gen_bool(0.2),
        };
        let arm = if run % 2 == 0 { Arm::SimGuided } else { Arm::Baseline };
        let mut state = TrainState {
            optimizer: AdamState::new(&model, AdamConfig::with_lr(0.01)),
            model,
            cursor: BatchCursor::new(&data, 8, CursorState { seed: run as u64, epoch: 0, offset: 0 })
                .map_err(|e| e.to_string())?,
        };
        let mut observer = ContractObserver {
            cfg: cfg.clone(),
            previous: None,
            steps_seen: 0,
            rng: ChaCha8Rng::seed_from_u64(run as u64),
        };
        let objective = CrossEntropyL2 { l2: 1e-3 };
        run_arm(arm, &mut state, &data, &objective, &cfg, &mut observer)
            .map_err(|e| format!("run {run} ({arm}, {cfg:?}): {e}"))?;
        ensure!(
            observer.steps_seen == cfg.steps + 1,
            "run {run}: observer saw {} steps",
            observer.steps_seen
        );
        checked += observer.steps_seen;
    }
    Ok(format!("{RUNS} runs, {checked} pruning steps checked"))
}

/// Least squares on the two-weight linear model `y = 10 x1 + 0 x2` over the
/// samples `(1, 0) -> 10` and `(0, 1) -> 0`, whatever the batch:
/// `L = (1/4) [(w1 - 10)^2 + w2^2]`, so `dL/dw1 = (w1 - 10) / 2` and
/// `dL/dw2 = w2 / 2`. The bias is held at zero.
pub struct TwoWeightToy;

impl Objective<f64> for TwoWeightToy {
    fn loss_and_gradients(
        &self,
        net: &DenseNetwork<f64>,
        _: &Batch<f64>,
    ) -> Result<(f64, Gradients<f64>), simprune::net::NetError> {
        let w = net.weights(0);
        let (w1, w2) = (w[[0, 0]], w[[0, 1]]);
        let value = 0.25 * ((w1 - 10.0).powi(2) + w2 * w2);
        Ok((
            value,
            Gradients {
                weights: vec![array![[(w1 - 10.0) / 2.0, w2 / 2.0]]],
                biases: vec![array![0.0]],
            },
        ))
    }
}

pub fn toy_state(lr: f64) -> (TrainState<f64>, Dataset<f64>) {
    let model = DenseNetwork::from_layers(vec![DenseLayer {
        weights: array![[0.1, 0.15]],
        bias: array![0.0],
    }])
    .unwrap();
    let data = Dataset::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 0], Split::Train).unwrap();
    let state = TrainState {
        optimizer: AdamState::new(&model, AdamConfig::with_lr(lr)),
        cursor: BatchCursor::new(&data, 2, CursorState { seed: 0, epoch: 0, offset: 0 }).unwrap(),
        model,
    };
    (state, data)
}

pub fn toy_config(sim_steps: usize) -> PruneRunConfig {
    PruneRunConfig {
        steps: 1,
        ratio: 0.5,
        sim_steps,
        retrain_steps: 0,
        ..PruneRunConfig::default()
    }
}

/// The gradient-source mechanism on the two-weight toy: one instrumented
/// simulation step, then rescue of `w1` within the bound implied by Adam's
/// step size.
pub fn mechanism() -> Check {
    let lr = 0.01;
    let eps = 1e-8;
    let (mut state, data) = toy_state(lr);
    let mask = ZeroPositionSet::for_network(&state.model);
    let batch = state.cursor.next_batch(&data);
    let (_, g_m) = TwoWeightToy.loss_and_gradients(&state.model, &batch).map_err(|e| e.to_string())?;
    let sim = simulate_once(
        &mut state.model,
        &mask,
        &mut state.optimizer,
        &TwoWeightToy,
        &batch,
        0.5,
        PruneScope::Global,
        1,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        sim.selection.positions == vec![Position::new(0, 0, 0)],
        "temporary selection {:?}, expected w1 only",
        sim.selection.positions
    );
    let (g_t1, g_t2) = (sim.gradients.weights[0][[0, 0]], sim.gradients.weights[0][[0, 1]]);
    let g_m1 = g_m.weights[0][[0, 0]];
    ensure!(g_t1 == -5.0 && g_t2 == 0.075, "g(T) = ({g_t1}, {g_t2}), expected (-5, 0.075)");
    ensure!(g_m1 == -4.95, "g(M) for w1 = {g_m1}, expected -4.95");
    // First Adam step: m_hat = g and v_hat = g^2, so the move is lr g / (|g| + eps)
    // from the stored value of M, not from the zero held in T.
    let w = state.model.weights(0);
    let want1 = 0.1 + lr * 5.0 / (5.0 + eps);
    let want2 = 0.15 - lr * 0.075 / (0.075 + eps);
    ensure!(
        (w[[0, 0]] - want1).abs() < 1e-12 && (w[[0, 1]] - want2).abs() < 1e-12,
        "after one step w = ({}, {}), expected ({want1}, {want2})",
        w[[0, 0]],
        w[[0, 1]]
    );

    // Magnitude pruning alone removes w1.
    let (mut base, data) = toy_state(lr);
    let out = baseline_iterative_prune(&mut base, &data, &TwoWeightToy, &toy_config(1), &mut simprune::algo::Silent)
        .map_err(|e| e.to_string())?;
    ensure!(out.mask.contains(Position::new(0, 0, 0)), "baseline kept w1");

    // While w1 sits in the temporary set its gradient is the constant -5, so
    // each step moves it by lr * 5 / (5 + eps) and w2 never grows: w1 passes
    // 0.15 no later than floor(0.05 / lr) + 1 steps.
    let bound = (0.05 / lr).floor() as usize + 1;
    let mut first = None;
    for s in 1..=bound {
        let (mut state, data) = toy_state(lr);
        let out = simulation_guided_prune(&mut state, &data, &TwoWeightToy, &toy_config(s), &mut simprune::algo::Silent)
            .map_err(|e| e.to_string())?;
        let rescued = !out.mask.contains(Position::new(0, 0, 0)) && out.mask.contains(Position::new(0, 0, 1));
        ensure!(
            rescued == (out.rescue.total_rescued() == 1),
            "s={s}: rescue statistic {} disagrees with the mask",
            out.rescue.total_rescued()
        );
        if rescued && first.is_none() {
            first = Some(s);
            ensure!(state.model.weights(0)[[0, 0]] > 0.1, "rescued w1 did not grow");
        }
    }
    let first = first.ok_or_else(|| format!("w1 not rescued within {bound} simulation steps"))?;
    ensure!(first > 1, "rescued after a single step");
    Ok(format!(
        "g(T)=-5 vs g(M)=-4.95 for w1; update applied to M; w1 rescued after {first} simulation steps (bound {bound})"
    ))
}
