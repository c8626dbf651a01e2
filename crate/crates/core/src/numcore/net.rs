use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, SeededRng};

/// Negative slope used for every hidden LeakyReLU unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`, standard layout.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Fully connected network. Dropout (inverted) follows every hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseNetDoc", into = "DenseNetDoc")]
pub struct DenseNet {
    layers: Vec<Layer>,
    dropout: Vec<f64>,
}

/// Forward intermediates needed by [`DenseNet::backward`].
#[derive(Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * k);
            b.mapv_inplace(|v| v * k);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (w, b) in &self.layers {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl DenseNet {
    /// Build from explicit layers. `dropout` has one rate per hidden layer.
    pub fn from_layers(layers: Vec<Layer>, dropout: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!("layer {i} bias length mismatch")));
            }
        }
        if dropout.len() != layers.len() - 1 {
            return Err(Error::shape(format!(
                "expected {} dropout rates, got {}",
                layers.len() - 1,
                dropout.len()
            )));
        }
        if dropout.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        Ok(DenseNet { layers, dropout })
    }

    /// Randomly initialized MLP: LeakyReLU between layers, identity output.
    ///
    /// Weights are He-normal. With `zero_output` the last layer starts at
    /// zero, so the network initially outputs exactly zero.
    pub fn mlp(dims: &[usize], dropout: f64, zero_output: bool, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape("mlp needs input and output dimensions"));
        }
        let n = dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (din, dout) = (dims[i], dims[i + 1]);
            let last = i == n - 1;
            let weight = if last && zero_output {
                Array2::zeros((dout, din))
            } else {
                let std = (2.0 / din.max(1) as f64).sqrt();
                sampling::normal_matrix(rng, dout, din) * std
            };
            layers.push(Layer {
                weight,
                bias: Array1::zeros(dout),
                activation: if last { Activation::Identity } else { Activation::leaky() },
            });
        }
        DenseNet::from_layers(layers, vec![dropout; n - 1])
    }

    /// Single linear layer `y = x` (square identity weight, zero bias).
    pub fn identity(dim: usize) -> Self {
        DenseNet {
            layers: vec![Layer {
                weight: Array2::eye(dim),
                bias: Array1::zeros(dim),
                activation: Activation::Identity,
            }],
            dropout: vec![],
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) {
        for p in &mut self.dropout {
            *p = rate;
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_sumsq(&self) -> f64 {
        self.params().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }

    fn dropout_active(&self, mode: Mode) -> bool {
        mode == Mode::Train && self.dropout.iter().any(|&p| p > 0.0)
    }

    /// Batched forward pass over rows of `input`.
    ///
    /// `rng` is only consulted in train mode with a non-zero dropout rate.
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut SeededRng>,
    ) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                input.ncols()
            )));
        }
        let use_dropout = self.dropout_active(mode);
        let mut rng = rng;
        if use_dropout && rng.is_none() {
            return Err(Error::config("train-mode dropout needs an rng"));
        }
        let n = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&layer.weight.t());
            pre += &layer.bias;
            let act = layer.activation;
            let mut out = pre.mapv(|v| act.apply(v));
            let mut mask = None;
            if i + 1 < n && use_dropout && self.dropout[i] > 0.0 {
                let keep = 1.0 - self.dropout[i];
                let r = rng.as_deref_mut().expect("checked above");
                let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out *= &m;
                mask = Some(m);
            }
            tape.inputs.push(h);
            tape.pre.push(pre);
            tape.masks.push(mask);
            h = out;
        }
        Ok((h, tape))
    }

    /// Inference-mode forward pass, no tape.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                input.ncols()
            )));
        }
        let mut h = input.to_owned();
        for layer in &self.layers {
            let mut pre = h.dot(&layer.weight.t());
            pre += &layer.bias;
            let act = layer.activation;
            pre.mapv_inplace(|v| act.apply(v));
            h = pre;
        }
        Ok(h)
    }

    /// Reverse pass for `Σ_rows upstream · output`. Returns parameter
    /// gradients and the gradient with respect to the input rows.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<(NetGrads, Array2<f64>)> {
        let last = tape
            .pre
            .last()
            .ok_or_else(|| Error::shape("empty tape"))?;
        if upstream.dim() != last.dim() {
            return Err(Error::shape(format!(
                "upstream shape {:?} does not match output {:?}",
                upstream.dim(),
                last.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(m) = &tape.masks[i] {
                g *= m;
            }
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                ndarray::Zip::from(&mut g)
                    .and(&tape.pre[i])
                    .for_each(|gv, &p| *gv *= act.derivative(p));
            }
            let dw = g.t().dot(&tape.inputs[i]).as_standard_layout().into_owned();
            let db = g.sum_axis(Axis(0));
            g = g.dot(&layer.weight);
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, g))
    }

    /// Single-vector evaluation. In train mode the dropout mask is drawn
    /// from `seed`, so [`DenseNet::grad_one`] with the same seed replays it.
    pub fn eval_one(&self, input: &[f64], mode: Mode, seed: u64) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::shape(e.to_string()))?;
        let mut r = sampling::rng(seed);
        let (out, _) = self.forward(x, mode, Some(&mut r))?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Gradients of `upstream · net(input)` for a single input vector.
    pub fn grad_one(
        &self,
        input: &[f64],
        upstream: &[f64],
        mode: Mode,
        seed: u64,
    ) -> Result<(NetGrads, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::shape(e.to_string()))?;
        if upstream.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "upstream has length {}, network outputs {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let mut r = sampling::rng(seed);
        let (_, tape) = self.forward(x, mode, Some(&mut r))?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| Error::shape(e.to_string()))?;
        let (g, gin) = self.backward(&tape, up)?;
        Ok((g, gin.into_raw_vec_and_offset().0))
    }
}

/// On-disk form of a [`DenseNet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseNetDoc {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rates: Vec<f64>,
    /// Row-major `out × in` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<DenseNet> for DenseNetDoc {
    fn from(net: DenseNet) -> Self {
        let mut layer_dims = vec![net.in_dim()];
        layer_dims.extend(net.layers.iter().map(|l| l.out_dim()));
        DenseNetDoc {
            schema_version: crate::SCHEMA_VERSION,
            layer_dims,
            activations: net.layers.iter().map(|l| l.activation).collect(),
            dropout_rates: net.dropout.clone(),
            weights: net.layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<DenseNetDoc> for DenseNet {
    type Error = Error;

    fn try_from(doc: DenseNetDoc) -> Result<Self> {
        let n = doc.layer_dims.len().saturating_sub(1);
        if n == 0 || doc.activations.len() != n || doc.weights.len() != n || doc.biases.len() != n {
            return Err(Error::shape("inconsistent layer counts in network document"));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (din, dout) = (doc.layer_dims[i], doc.layer_dims[i + 1]);
            let weight = Array2::from_shape_vec((dout, din), doc.weights[i].clone())
                .map_err(|e| Error::shape(format!("layer {i} weights: {e}")))?;
            layers.push(Layer {
                weight,
                bias: Array1::from(doc.biases[i].clone()),
                activation: doc.activations[i],
            });
        }
        DenseNet::from_layers(layers, doc.dropout_rates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(w: Array2<f64>, b: Array1<f64>, act: Activation) -> DenseNet {
        DenseNet::from_layers(
            vec![Layer {
                weight: w,
                bias: b,
                activation: act,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn affine_layer_value() {
        let net = single(array![[1.0, 2.0]], array![0.5], Activation::Identity);
        assert_eq!(net.eval_one(&[1.0, 1.0], Mode::Infer, 0).unwrap(), vec![3.5]);
    }

    #[test]
    fn leaky_relu_negative_side() {
        let net = single(array![[1.0]], array![0.0], Activation::leaky());
        let y = net.eval_one(&[-1.0], Mode::Infer, 0).unwrap();
        assert!((y[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_dropout_train_equals_infer() {
        let mut r = sampling::rng(1);
        let net = DenseNet::mlp(&[3, 8, 8, 2], 0.0, false, &mut r).unwrap();
        let x = [0.3, -1.2, 0.7];
        assert_eq!(
            net.eval_one(&x, Mode::Train, 5).unwrap(),
            net.eval_one(&x, Mode::Infer, 9).unwrap()
        );
    }

    #[test]
    fn scalar_product_rule() {
        let net = single(array![[2.5]], array![0.0], Activation::Identity);
        let (g, gin) = net.grad_one(&[3.0], &[1.0], Mode::Infer, 0).unwrap();
        assert_eq!(g.layers[0].0[[0, 0]], 3.0);
        assert_eq!(gin, vec![2.5]);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut r = sampling::rng(2);
        let net = DenseNet::mlp(&[4, 6, 3], 0.0, false, &mut r).unwrap();
        let (g, gin) = net.grad_one(&[1.0, -2.0, 0.5, 0.1], &[0.0; 3], Mode::Infer, 0).unwrap();
        assert!(g.is_zero());
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut r = sampling::rng(2);
        let net = DenseNet::mlp(&[4, 6, 3], 0.0, false, &mut r).unwrap();
        assert!(matches!(net.eval_one(&[1.0], Mode::Infer, 0), Err(Error::Shape(_))));
        assert!(matches!(
            net.grad_one(&[1.0; 4], &[1.0], Mode::Infer, 0),
            Err(Error::Shape(_))
        ));
        let bad = vec![
            Layer { weight: Array2::zeros((3, 2)), bias: Array1::zeros(3), activation: Activation::Identity },
            Layer { weight: Array2::zeros((1, 4)), bias: Array1::zeros(1), activation: Activation::Identity },
        ];
        assert!(DenseNet::from_layers(bad, vec![0.0]).is_err());
    }

    #[test]
    fn dropout_rescales_survivors() {
        let net = DenseNet::from_layers(
            vec![
                Layer { weight: Array2::eye(200), bias: Array1::zeros(200), activation: Activation::Identity },
                Layer { weight: Array2::eye(200), bias: Array1::zeros(200), activation: Activation::Identity },
            ],
            vec![0.25],
        )
        .unwrap();
        let y = net.eval_one(&[1.0; 200], Mode::Train, 11).unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        assert!(y.contains(&0.0));
        // same seed replays the same mask
        assert_eq!(y, net.eval_one(&[1.0; 200], Mode::Train, 11).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mut r = sampling::rng(4);
        let net = DenseNet::mlp(&[2, 5, 1], 0.2, false, &mut r).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.contains("layer_dims"));
        let back: DenseNet = serde_json::from_str(&s).unwrap();
        assert_eq!(net, back);
    }
}
