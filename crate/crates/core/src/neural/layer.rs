use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::par;

/// Multiply-accumulate count above which a layer fans out over output channels.
const PAR_MIN_WORK: usize = 1 << 16;

/// Row-major `[channels][len]` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_vec(channels: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * len, "feature map size");
        Self { channels, len, data }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn get(&self, c: usize, n: usize) -> f64 {
        self.data[c * self.len + n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu6,
    Sigmoid,
    Linear,
}

/// `min(max(v, 0), 6)`.
pub fn relu6(v: f64) -> f64 {
    v.clamp(0.0, 6.0)
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu6 => relu6(v),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Linear => v,
        }
    }

    /// Derivative at the pre-activation `v`. ReLU6 uses 0 at both kinks.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu6 => {
                if v > 0.0 && v < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Causal 1D convolution, `out[o][n] = act(b[o] + sum_{c,k} w[o][c][k] in[c][n-k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    /// Row-major `[c_out][c_in][kernel_size]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Conv1dLayer {
    pub fn zeros(c_in: usize, c_out: usize, kernel_size: usize, activation: Activation) -> Self {
        Self {
            c_in,
            c_out,
            kernel_size,
            activation,
            weights: vec![0.0; c_out * c_in * kernel_size],
            biases: vec![0.0; c_out],
        }
    }

    #[inline]
    pub fn w_index(&self, o: usize, c: usize, k: usize) -> usize {
        (o * self.c_in + c) * self.kernel_size + k
    }

    pub fn weight(&self, o: usize, c: usize, k: usize) -> f64 {
        self.weights[self.w_index(o, c, k)]
    }

    pub fn set_weight(&mut self, o: usize, c: usize, k: usize, v: f64) {
        let i = self.w_index(o, c, k);
        self.weights[i] = v;
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(shape_err("layer dimensions must be positive"));
        }
        if self.weights.len() != self.c_out * self.c_in * self.kernel_size {
            return Err(shape_err(format!(
                "expected {} weights for [{}][{}][{}], found {}",
                self.c_out * self.c_in * self.kernel_size,
                self.c_out,
                self.c_in,
                self.kernel_size,
                self.weights.len()
            )));
        }
        if self.biases.len() != self.c_out {
            return Err(shape_err(format!(
                "expected {} biases, found {}",
                self.c_out,
                self.biases.len()
            )));
        }
        Ok(())
    }

    /// Affine part of the layer, before the activation.
    pub fn pre_activation(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels != self.c_in {
            return Err(shape_err(format!(
                "layer expects {} input channels, got {}",
                self.c_in, input.channels
            )));
        }
        let n = input.len;
        let mut out = FeatureMap::zeros(self.c_out, n);
        let fill = |o: usize, row: &mut [f64]| {
            row.fill(self.biases[o]);
            for c in 0..self.c_in {
                let x = input.row(c);
                for k in 0..self.kernel_size.min(n) {
                    let w = self.weight(o, c, k);
                    if w == 0.0 {
                        continue;
                    }
                    for (r, xv) in row[k..].iter_mut().zip(&x[..n - k]) {
                        *r += w * xv;
                    }
                }
            }
        };
        if n > 0 {
            if self.c_out * self.c_in * self.kernel_size * n >= PAR_MIN_WORK {
                par::for_each_chunk_mut(&mut out.data, n, fill);
            } else {
                out.data.chunks_mut(n).enumerate().for_each(|(o, r)| fill(o, r));
            }
        }
        Ok(out)
    }

    pub fn activate(&self, pre: &FeatureMap) -> FeatureMap {
        if self.activation == Activation::Linear {
            return pre.clone();
        }
        FeatureMap {
            channels: pre.channels,
            len: pre.len,
            data: pre.data.iter().map(|&v| self.activation.apply(v)).collect(),
        }
    }
}

pub fn conv1d_forward(layer: &Conv1dLayer, input: &FeatureMap) -> Result<FeatureMap> {
    layer.validate()?;
    Ok(layer.activate(&layer.pre_activation(input)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Backpropagates `d_out` (gradient w.r.t. the activated output) through the
/// layer. Returns parameter gradients and, when requested, the gradient with
/// respect to the layer input.
pub fn conv1d_backward(
    layer: &Conv1dLayer,
    input: &FeatureMap,
    pre: &FeatureMap,
    d_out: &FeatureMap,
    want_input_grad: bool,
) -> (LayerGrads, Option<FeatureMap>) {
    let n = input.len;
    let kk = layer.kernel_size;
    let mut dz = d_out.clone();
    if layer.activation != Activation::Linear {
        for (d, &p) in dz.data.iter_mut().zip(&pre.data) {
            *d *= layer.activation.derivative(p);
        }
    }
    let mut grads = LayerGrads {
        weights: vec![0.0; layer.weights.len()],
        biases: vec![0.0; layer.c_out],
    };
    for o in 0..layer.c_out {
        let dzo = dz.row(o);
        grads.biases[o] = dzo.iter().sum();
        for c in 0..layer.c_in {
            let x = input.row(c);
            for k in 0..kk.min(n) {
                let s: f64 = dzo[k..].iter().zip(&x[..n - k]).map(|(a, b)| a * b).sum();
                grads.weights[layer.w_index(o, c, k)] = s;
            }
        }
    }
    let d_in = want_input_grad.then(|| {
        let mut d_in = FeatureMap::zeros(layer.c_in, n);
        for c in 0..layer.c_in {
            let row = d_in.row_mut(c);
            for o in 0..layer.c_out {
                let dzo = dz.row(o);
                for k in 0..kk.min(n) {
                    let w = layer.weight(o, c, k);
                    if w == 0.0 {
                        continue;
                    }
                    for (r, d) in row[..n - k].iter_mut().zip(&dzo[k..]) {
                        *r += w * d;
                    }
                }
            }
        }
        d_in
    });
    (grads, d_in)
}
