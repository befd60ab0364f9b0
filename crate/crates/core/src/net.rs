//! Dense multilayer perceptron with ReLU hidden layers and a softmax
//! cross-entropy head.
//!
//! Weight matrices are stored `out x in`, so a layer maps a batch `X` (`B x in`)
//! to `X Wᵀ + b`. The L2 penalty is `(l2 / 2) * Σ w²` over weights only.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Batch, Dataset};
use crate::Scalar;

/// ChaCha stream for weight initialisation; epoch shuffles use streams 0, 1, ...
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid architecture {0:?}: need at least two widths, all positive")]
    InvalidArchitecture(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite {what} in layer {layer}")]
    NonFinite { layer: usize, what: &'static str },
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

/// Layer widths from input to output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NetError::InvalidArchitecture(widths));
        }
        Ok(Self(widths))
    }

    /// 784 → 300 → 100 → 10.
    pub fn lenet_300_100() -> Self {
        Self(vec![784, 300, 100, 10])
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn num_layers(&self) -> usize {
        self.0.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.0[0]
    }

    pub fn outputs(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// `(out, in)` of every weight matrix.
    pub fn weight_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.windows(2).map(|w| (w[1], w[0]))
    }

    pub fn num_weights(&self) -> usize {
        self.weight_shapes().map(|(o, i)| o * i).sum()
    }

    pub fn num_biases(&self) -> usize {
        self.0[1..].iter().sum()
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::lenet_300_100()
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> DenseNetwork<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .weight_shapes()
            .map(|(out, inp)| DenseLayer {
                weights: Array2::zeros((out, inp)),
                bias: Array1::zeros(out),
            })
            .collect();
        Self { layers }
    }

    /// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases. Samples are drawn in `f64` from ChaCha8 seeded with
    /// `seed` on a stream no epoch shuffle uses, layer by layer in row-major
    /// order, then rounded to `T`.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            let (out, inp) = layer.weights.dim();
            let limit = (6.0 / (out + inp) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = T::of(limit * (2.0 * rng.gen::<f64>() - 1.0));
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetError::InvalidArchitecture(Vec::new()));
        }
        for (k, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weights.dim();
            if out == 0 || inp == 0 || layer.bias.len() != out {
                return Err(NetError::ShapeMismatch(format!(
                    "layer {k}: weights {out}x{inp} with {} biases",
                    layer.bias.len()
                )));
            }
            if k > 0 && layers[k - 1].weights.nrows() != inp {
                return Err(NetError::ShapeMismatch(format!(
                    "layer {k} expects {inp} inputs but layer {} has {} outputs",
                    k - 1,
                    layers[k - 1].weights.nrows()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.layers[0].weights.ncols()];
        widths.extend(self.layers.iter().map(|l| l.weights.nrows()));
        Architecture(widths)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, T> {
        self.layers[layer].weights.view()
    }

    pub fn weights_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, T> {
        self.layers[layer].weights.view_mut()
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, T> {
        self.layers[layer].bias.view_mut()
    }

    /// Mutable weight and bias views of one layer at once.
    pub fn params_mut(&mut self, layer: usize) -> (ArrayViewMut2<'_, T>, ArrayViewMut1<'_, T>) {
        let DenseLayer { weights, bias } = &mut self.layers[layer];
        (weights.view_mut(), bias.view_mut())
    }

    pub fn count_nonzero_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.iter().filter(|w| !w.is_zero()).count())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Bitwise equality of every parameter.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim()
                    && a.bias.len() == b.bias.len()
                    && a.weights
                        .iter()
                        .chain(a.bias.iter())
                        .zip(b.weights.iter().chain(b.bias.iter()))
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        let expected = self.layers[0].weights.ncols();
        if x.ncols() != expected {
            return Err(NetError::ShapeMismatch(format!(
                "input has {} columns, network expects {expected}",
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Activations of every layer: entry 0 is the input, the last entry the
    /// logits. Hidden entries are post-ReLU.
    fn activations(&self, x: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
        self.check_input(&x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.weights.t());
            z += &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite {
                    layer: k,
                    what: "pre-activation",
                });
            }
            if k < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Logits for a `B x in` batch.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.activations(x)?.pop().unwrap())
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|&w| w * w).sum::<T>())
            .sum()
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Gradient container mirroring a network's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNetwork<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn is_congruent(&self, net: &DenseNetwork<T>) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].dim() == l.weights.dim() && self.biases[k].len() == l.bias.len()
            })
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.weights.len()).find(|&k| {
            self.weights[k]
                .iter()
                .chain(self.biases[k].iter())
                .any(|v| !v.is_finite())
        })
    }
}

/// Row-wise log-softmax, stabilised by the row maximum.
fn log_softmax<T: Scalar>(logits: &ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_labels<T>(logits: &ArrayView2<'_, T>, labels: &[u8]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(NetError::ShapeMismatch(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= logits.ncols()) {
        return Err(NetError::ShapeMismatch(format!(
            "label {y} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy of `logits` against `labels`.
pub fn cross_entropy<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[u8]) -> Result<T> {
    check_labels(&logits, labels)?;
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let logp = log_softmax(&logits);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -logp[[i, y as usize]])
        .sum();
    Ok(total / T::of(labels.len() as f64))
}

/// Mean cross-entropy plus `(l2 / 2) * Σ w²` over the network's weights.
pub fn loss<T: Scalar>(
    logits: ArrayView2<'_, T>,
    labels: &[u8],
    net: &DenseNetwork<T>,
    l2: T,
) -> Result<T> {
    let outputs = net.layers.last().unwrap().weights.nrows();
    if logits.ncols() != outputs {
        return Err(NetError::ShapeMismatch(format!(
            "{} logit columns but the network has {outputs} outputs",
            logits.ncols()
        )));
    }
    Ok(cross_entropy(logits, labels)? + l2 * T::of(0.5) * net.weight_sq_norm())
}

/// Loss and its exact gradient with respect to every parameter.
///
/// The weight gradient is `δᵀ a + l2 * W`, so a weight that currently holds
/// zero still receives `δᵀ a` at its position.
pub fn backward<T: Scalar>(
    net: &DenseNetwork<T>,
    batch: &Batch<T>,
    l2: T,
) -> Result<(T, Gradients<T>)> {
    let acts = net.activations(batch.x.view())?;
    let logits = acts.last().unwrap();
    let value = loss(logits.view(), &batch.y, net, l2)?;
    if !value.is_finite() {
        return Err(NetError::NonFinite {
            layer: net.layers.len() - 1,
            what: "loss",
        });
    }

    // dL/dlogits = (softmax - onehot) / B
    let inv_b = T::one() / T::of(batch.len().max(1) as f64);
    let mut delta = log_softmax(&logits.view()).mapv(|v| v.exp());
    for (i, &y) in batch.y.iter().enumerate() {
        delta[[i, y as usize]] -= T::one();
    }
    // Saturated softmax outputs underflow; near-subnormal deltas would slow
    // the products below without changing them measurably.
    delta.mapv_inplace(|v| (v * inv_b).flush());

    let n = net.layers.len();
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let layer = &net.layers[k];
        let mut gw = delta.t().dot(&acts[k]);
        if l2 != T::zero() {
            gw.scaled_add(l2, &layer.weights);
        }
        let gb = delta.sum_axis(Axis(0));
        if gw.iter().chain(gb.iter()).any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite {
                layer: k,
                what: "gradient",
            });
        }
        weights.push(gw);
        biases.push(gb);
        if k > 0 {
            let mut upstream = delta.dot(&layer.weights);
            // ReLU'(z) = 1 iff z > 0, which is iff the stored activation > 0.
            Zip::from(&mut upstream).and(&acts[k]).for_each(|d, &a| {
                *d = if a <= T::zero() { T::zero() } else { d.flush() };
            });
            delta = upstream;
        }
    }
    weights.reverse();
    biases.reverse();
    Ok((value, Gradients { weights, biases }))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: impl IntoIterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_value = T::neg_infinity();
    for (i, v) in row.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy_of_logits<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct_count(logits, labels) as f64 / labels.len() as f64
}

fn correct_count<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[u8]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y as usize)
        .count()
}

const EVAL_CHUNK: usize = 1000;

/// Classification accuracy over a whole dataset, evaluated in fixed chunks.
pub fn accuracy<T: Scalar>(net: &DenseNetwork<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let images = data.images();
    let mut correct = 0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let logits = net.forward(images.slice(ndarray::s![start..end, ..]))?;
        correct += correct_count(logits.view(), &data.labels()[start..end]);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// A differentiable training objective over a batch.
pub trait Objective<T: Scalar> {
    fn loss_and_gradients(
        &self,
        net: &DenseNetwork<T>,
        batch: &Batch<T>,
    ) -> Result<(T, Gradients<T>)>;
}

/// Softmax cross-entropy with a coupled L2 penalty on weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropyL2<T> {
    pub l2: T,
}

impl<T: Scalar> Objective<T> for CrossEntropyL2<T> {
    fn loss_and_gradients(
        &self,
        net: &DenseNetwork<T>,
        batch: &Batch<T>,
    ) -> Result<(T, Gradients<T>)> {
        backward(net, batch, self.l2)
    }
}
