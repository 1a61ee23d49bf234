//! Dense multilayer perceptrons with hand-written backpropagation.
//!
//! Weights are stored `fan_in × fan_out` so a batch `X` (rows are samples)
//! maps to `X·W + b`. Hidden layers apply the configured activation, the
//! output layer is linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NumericError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of one network. Gradients share the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Activations recorded by [`ParamSet::forward_batch`]; `outputs[0]` is the
/// input batch and `outputs[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache holds at least the input")
    }
}

impl ParamSet {
    /// Uniform `±1/sqrt(fan_in)` initialisation for every layer.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound));
                let bias = Array1::from_shape_fn(w[1], |_| rng.gen_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        ParamSet { layers, activation }
    }

    /// All-zero parameters with the given layer sizes.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        ParamSet { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.bias.len()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    /// Checks that layer dimensions chain and that every entry is finite.
    pub fn validate(&self) -> Result<(), NumericError> {
        if self.layers.is_empty() {
            return Err(NumericError::InvalidArgument("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(NumericError::shape(
                    format!("layer {i} bias"),
                    l.weight.ncols(),
                    l.bias.len(),
                ));
            }
            if i > 0 {
                let prev = self.layers[i - 1].weight.ncols();
                if l.weight.nrows() != prev {
                    return Err(NumericError::shape(format!("layer {i} fan-in"), prev, l.weight.nrows()));
                }
            }
        }
        self.check_finite("parameters")
    }

    pub fn check_finite(&self, what: &str) -> Result<(), NumericError> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.iter().any(|v| !v.is_finite()) {
                return Err(NumericError::NonFinite(format!("{what}: layer {i} weight")));
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(NumericError::NonFinite(format!("{what}: layer {i} bias")));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    pub fn ensure_same_shape(&self, other: &ParamSet, context: &str) -> Result<(), NumericError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(NumericError::shape(
                format!("{context}: parameter shapes {:?} vs {:?}", self.sizes(), other.sizes()),
                self.num_params(),
                other.num_params(),
            ))
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Iterates every scalar parameter in a fixed order (per layer: weights
    /// row-major, then bias).
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Mutable access to the `index`-th scalar in [`ParamSet::values`] order.
    pub fn value_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let wn = l.weight.len();
            if index < wn {
                let cols = l.weight.ncols();
                return &mut l.weight[[index / cols, index % cols]];
            }
            index -= wn;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NumericError> {
        if input.len() != self.input_dim() {
            return Err(NumericError::shape("forward input", self.input_dim(), input.len()));
        }
        let mut x = Array1::from(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = x.dot(&l.weight) + &l.bias;
            if i < last {
                let act = self.activation;
                y.mapv_inplace(|v| act.apply(v));
            }
            x = y;
        }
        Ok(x.to_vec())
    }

    /// Batched forward pass keeping the activations needed by backward.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache, NumericError> {
        if input.ncols() != self.input_dim() {
            return Err(NumericError::shape(
                "forward_batch input",
                self.input_dim(),
                input.ncols(),
            ));
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_owned());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = outputs[i].dot(&l.weight);
            y += &l.bias;
            if i < last {
                let act = self.activation;
                y.mapv_inplace(|v| act.apply(v));
            }
            outputs.push(y);
        }
        Ok(ForwardCache { outputs })
    }

    /// Backpropagates `d_output` (gradient of a scalar loss with respect to
    /// the batch output) and returns parameter and input gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: ArrayView2<'_, f64>,
    ) -> Result<(ParamSet, Array2<f64>), NumericError> {
        self.backprop(cache, d_output, true)
            .map(|(g, dx)| (g.expect("parameter gradients requested"), dx))
    }

    /// Like [`ParamSet::backward`] but only returns the input gradient.
    pub fn backward_input(
        &self,
        cache: &ForwardCache,
        d_output: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>, NumericError> {
        self.backprop(cache, d_output, false).map(|(_, dx)| dx)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        d_output: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<(Option<ParamSet>, Array2<f64>), NumericError> {
        let out = cache.output();
        if d_output.dim() != out.dim() {
            return Err(NumericError::shape("backward d_output", out.len(), d_output.len()));
        }
        if d_output.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite("backward: incoming output gradient".into()));
        }
        let mut grads = want_params.then(|| self.zeros_like());
        let mut delta = d_output.to_owned();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let act = self.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&cache.outputs[i + 1])
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            if let Some(g) = grads.as_mut() {
                g.layers[i].weight = cache.outputs[i].t().dot(&delta);
                g.layers[i].bias = delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].weight.t());
        }
        Ok((grads, delta))
    }
}

/// Polyak averaging: `(1 - tau)·target + tau·online`, in place on `target`.
pub fn polyak(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<(), NumericError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NumericError::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    target.ensure_same_shape(online, "polyak")?;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        ndarray::Zip::from(&mut t.weight)
            .and(&o.weight)
            .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
        ndarray::Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity2() -> ParamSet {
        ParamSet {
            layers: vec![Layer {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            }],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = identity2();
        assert_eq!(net.forward(&[0.3, -1.7]).unwrap(), vec![0.3, -1.7]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ParamSet::zeros(&[5, 8, 8, 3], Activation::Relu);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_set_two_two_one_network() {
        // hidden = relu([1,0]·W1 + b1) = relu([0.5 + 0.1, -1.0 + 0.2]) = [0.6, 0]
        // out = 0.6·2.0 + 0·(-3.0) + 0.25 = 1.45
        let net = ParamSet {
            layers: vec![
                Layer {
                    weight: array![[0.5, -1.0], [4.0, 1.5]],
                    bias: array![0.1, 0.2],
                },
                Layer {
                    weight: array![[2.0], [-3.0]],
                    bias: array![0.25],
                },
            ],
            activation: Activation::Relu,
        };
        let y = net.forward(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 1.45).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = identity2();
        let err = net.forward(&[1.0]).unwrap_err();
        assert!(matches!(
            err,
            NumericError::ShapeMismatch {
                expected: 2,
                found: 1,
                ..
            }
        ));
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ParamSet::init(&[4, 7, 3], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let cache = net.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(cache.output().row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn squared_linear_output_gradient_is_outer_product() {
        // loss = y², y = x·w + b  →  dL/dw = 2·y·x, dL/db = 2·y
        let net = ParamSet {
            layers: vec![Layer {
                weight: array![[0.5], [-0.25], [2.0]],
                bias: array![0.1],
            }],
            activation: Activation::Relu,
        };
        let x = array![[1.0, 2.0, -0.5]];
        let cache = net.forward_batch(x.view()).unwrap();
        let y = cache.output()[[0, 0]];
        let d = array![[2.0 * y]];
        let (g, dx) = net.backward(&cache, d.view()).unwrap();
        for j in 0..3 {
            assert!((g.layers[0].weight[[j, 0]] - 2.0 * y * x[[0, j]]).abs() < 1e-14);
            assert!((dx[[0, j]] - 2.0 * y * net.layers[0].weight[[j, 0]]).abs() < 1e-14);
        }
        assert!((g.layers[0].bias[0] - 2.0 * y).abs() < 1e-14);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ParamSet::init(&[3, 6, 2], Activation::Relu, &mut rng);
        let x = Array2::from_elem((4, 3), 0.7);
        let cache = net.forward_batch(x.view()).unwrap();
        let (g, _) = net.backward(&cache, Array2::zeros((4, 2)).view()).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn polyak_endpoints_and_midpoint() {
        let target = ParamSet::zeros(&[2, 2], Activation::Relu);
        let mut online = target.clone();
        online.values_mut().for_each(|v| *v = 1.0);

        let mut t = target.clone();
        polyak(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut t = target.clone();
        polyak(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, target);

        let mut t = target.clone();
        polyak(&mut t, &online, 0.005).unwrap();
        assert!(t.values().all(|&v| (v - 0.005).abs() < 1e-15));
    }

    #[test]
    fn polyak_rejects_bad_tau_and_shapes() {
        let mut a = ParamSet::zeros(&[2, 2], Activation::Relu);
        let b = ParamSet::zeros(&[2, 3], Activation::Relu);
        let c = a.clone();
        assert!(polyak(&mut a, &c, 1.5).is_err());
        assert!(polyak(&mut a, &b, 0.5).is_err());
    }

    #[test]
    fn validate_reports_broken_chain() {
        let mut net = ParamSet::zeros(&[2, 3, 1], Activation::Relu);
        net.layers[1].weight = Array2::zeros((4, 1));
        assert!(net.validate().is_err());
        let mut net = ParamSet::zeros(&[2, 3, 1], Activation::Relu);
        net.layers[0].bias[1] = f64::NAN;
        assert!(matches!(net.validate(), Err(NumericError::NonFinite(_))));
    }

    #[test]
    fn value_mut_follows_values_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = ParamSet::init(&[3, 4, 2], Activation::Relu, &mut rng);
        let flat: Vec<f64> = net.values().copied().collect();
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(*net.value_mut(i), *v);
        }
    }
}
