//! Dense feedforward networks.
//!
//! Layer weights are stored row-major with one row per neuron, so row `k` of
//! a layer holds neuron `k`'s incoming weights and column `j` of the *next*
//! layer holds neuron `j`'s outgoing coefficients.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Linear output; only valid on the final layer.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One neuron's incoming weights plus its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl WeightSet {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Euclidean norm of the non-bias weights.
    pub fn weight_norm(&self) -> f64 {
        norm(&self.weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl FcLayer {
    /// Builds a layer from a row-major `n_out x n_in` weight array.
    pub fn new(
        n_in: usize,
        n_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidNetwork(format!(
                "layer dimensions must be positive (n_in={n_in}, n_out={n_out})"
            )));
        }
        if weights.len() != n_in * n_out {
            return Err(Error::Dimension {
                expected: n_in * n_out,
                got: weights.len(),
            });
        }
        if bias.len() != n_out {
            return Err(Error::Dimension {
                expected: n_out,
                got: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(Self {
            n_in,
            n_out,
            weights,
            bias,
            activation,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let n_out = rows.len();
        let n_in = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_in) {
            return Err(Error::Dimension {
                expected: n_in,
                got: bad.len(),
            });
        }
        let weights = rows.iter().flatten().copied().collect();
        Self::new(n_in, n_out, weights, bias, activation)
    }

    #[inline]
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    #[inline]
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row-major weight array.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.n_in..(k + 1) * self.n_in]
    }

    #[inline]
    pub fn weight(&self, k: usize, j: usize) -> f64 {
        self.weights[k * self.n_in + j]
    }

    /// Column `j`: the coefficients applied to input `j` by every neuron.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_out).map(|k| self.weight(k, j)).collect()
    }

    pub fn weight_set(&self, k: usize) -> WeightSet {
        WeightSet::new(self.row(k).to_vec(), self.bias[k])
    }

    pub fn param_count(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|k| self.activation.apply(dot(self.row(k), x) + self.bias[k]))
            .collect()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub(crate) fn remove_row(&mut self, k: usize) {
        self.weights.drain(k * self.n_in..(k + 1) * self.n_in);
        self.bias.remove(k);
        self.n_out -= 1;
    }

    pub(crate) fn remove_column(&mut self, j: usize) {
        let n_in = self.n_in;
        let mut col = 0;
        self.weights.retain(|_| {
            let keep = col % n_in != j;
            col += 1;
            keep
        });
        self.n_in -= 1;
    }

    /// Adds column `src` into column `dst`.
    pub(crate) fn add_column(&mut self, dst: usize, src: usize) {
        for k in 0..self.n_out {
            let v = self.weights[k * self.n_in + src];
            self.weights[k * self.n_in + dst] += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<FcLayer>,
}

/// Result of [`Network::rescale_relu_layer`].
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub network: Network,
    /// Scale factor applied to each neuron, 1.0 for neurons left untouched.
    pub scales: Vec<f64>,
    /// Neurons with an all-zero weight row. They compute a constant and are
    /// left unscaled.
    pub zero_norm: Vec<usize>,
}

impl Network {
    pub fn new(layers: Vec<FcLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least one hidden and one output layer, got {} layer(s)",
                layers.len()
            )));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} has {} outputs but layer {} expects {} inputs",
                    pair[0].n_out,
                    k + 1,
                    pair[1].n_in
                )));
            }
        }
        let last = layers.len() - 1;
        if let Some(k) = layers[..last]
            .iter()
            .position(|l| l.activation == Activation::Identity)
        {
            return Err(Error::InvalidNetwork(format!(
                "identity activation is only allowed on the output layer (found on layer {k})"
            )));
        }
        Ok(Self {
            input_dim: layers[0].n_in,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn layers(&self) -> &[FcLayer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&FcLayer> {
        self.layers.get(index).ok_or(Error::LayerOutOfRange {
            index,
            len: self.layers.len(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(FcLayer::param_count).sum()
    }

    /// Checks that `index` names a prunable (hidden) layer.
    pub fn check_hidden(&self, index: usize) -> Result<()> {
        self.layer(index)?;
        if index + 1 == self.layers.len() {
            return Err(Error::OutputLayer(index));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut act = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            act = layer.forward(&act);
        }
        act
    }

    /// Scales every weight row of a ReLU layer to unit norm.
    ///
    /// The neuron's bias is divided by the same factor and the factor is
    /// multiplied into the neuron's outgoing column, which leaves the network
    /// function unchanged because `max(0, a*x) = a*max(0, x)` for `a > 0`.
    pub fn rescale_relu_layer(&self, layer_index: usize) -> Result<Rescaled> {
        self.check_hidden(layer_index)?;
        let layer = &self.layers[layer_index];
        if layer.activation != Activation::Relu {
            return Err(Error::NotRelu {
                index: layer_index,
                found: layer.activation.tag(),
            });
        }
        let mut net = self.clone();
        let mut scales = vec![1.0; layer.n_out];
        let mut zero_norm = Vec::new();
        for (k, scale) in scales.iter_mut().enumerate() {
            let alpha = norm(layer.row(k));
            if alpha == 0.0 {
                zero_norm.push(k);
                continue;
            }
            if alpha == 1.0 {
                continue;
            }
            *scale = alpha;
            let cur = &mut net.layers[layer_index];
            let n_in = cur.n_in;
            for w in &mut cur.weights[k * n_in..(k + 1) * n_in] {
                *w /= alpha;
            }
            cur.bias[k] /= alpha;
            let next = &mut net.layers[layer_index + 1];
            let next_in = next.n_in;
            for r in 0..next.n_out {
                next.weights[r * next_in + k] *= alpha;
            }
        }
        Ok(Rescaled {
            network: net,
            scales,
            zero_norm,
        })
    }

    /// Removes neuron `j` of a hidden layer together with its outgoing column.
    pub fn delete_neuron(&self, layer_index: usize, j: usize) -> Result<Network> {
        let mut net = self.clone();
        net.delete_neuron_in_place(layer_index, j)?;
        Ok(net)
    }

    pub(crate) fn delete_neuron_in_place(&mut self, layer_index: usize, j: usize) -> Result<()> {
        self.check_hidden(layer_index)?;
        let n_out = self.layers[layer_index].n_out;
        if j >= n_out {
            return Err(Error::NeuronOutOfRange {
                index: j,
                len: n_out,
            });
        }
        if n_out == 1 {
            return Err(Error::invalid("cannot delete the last neuron of a layer"));
        }
        self.layers[layer_index].remove_row(j);
        self.layers[layer_index + 1].remove_column(j);
        Ok(())
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut FcLayer {
        &mut self.layers[index]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
