use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_features, Activation, Conv1dLayer, FeatureMap, FeatureRecipe};
use crate::error::{config_err, shape_err, Result};
use crate::rng;
use crate::signal::ComplexSignal;

pub const MODEL_FILE_VERSION: u32 = 1;

/// Bias that lifts the pass-through channels into the linear range of ReLU6.
const PASSTHROUGH_OFFSET: f64 = 3.0;

/// Hidden-layer stack of a CNN; the 2-channel linear output layer is implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub hidden_layers: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    #[serde(default = "Topology::default_activation")]
    pub activation: Activation,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_channels: 20,
            kernel_size: 5,
            activation: Activation::Relu6,
        }
    }
}

impl Topology {
    fn default_activation() -> Activation {
        Activation::Relu6
    }

    /// `(c_out, kernel_size, activation)` per layer, output layer last.
    pub fn layer_specs(&self) -> Vec<(usize, usize, Activation)> {
        let mut specs: Vec<_> = (0..self.hidden_layers)
            .map(|_| (self.hidden_channels, self.kernel_size, self.activation))
            .collect();
        specs.push((2, 1, Activation::Linear));
        specs
    }
}

/// Weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every weight and bias uniform in `±sqrt(1 / (c_in * k))`.
    Uniform,
    /// `Uniform`, then hidden channels 0 and 1 and the output layer are
    /// overwritten so the network starts as an exact I/Q pass-through.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub recipe: FeatureRecipe,
    pub layers: Vec<Conv1dLayer>,
}

impl CnnModel {
    pub fn new(recipe: FeatureRecipe, layers: Vec<Conv1dLayer>) -> Result<Self> {
        let m = Self { recipe, layers };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        let Some(last) = self.layers.last() else {
            return Err(shape_err("model has no layers"));
        };
        let mut c = self.recipe.channels();
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.c_in != c {
                return Err(shape_err(format!(
                    "layer {i} expects {} input channels but receives {c}",
                    l.c_in
                )));
            }
            c = l.c_out;
        }
        if last.c_out != 2 || last.kernel_size != 1 || last.activation != Activation::Linear {
            return Err(shape_err(
                "output layer must be a linear kernel-1 layer with 2 channels",
            ));
        }
        Ok(())
    }

    /// Builds layers from `(c_out, kernel_size, activation)` specs.
    pub fn from_specs(
        recipe: FeatureRecipe,
        specs: &[(usize, usize, Activation)],
        init: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        recipe.validate()?;
        let mut r = rng::module_rng(seed, rng::TAG_INIT);
        let mut c_in = recipe.channels();
        let mut layers = Vec::with_capacity(specs.len());
        for &(c_out, k, act) in specs {
            let mut l = Conv1dLayer::zeros(c_in, c_out, k, act);
            let bound = (1.0 / (c_in * k) as f64).sqrt();
            l.weights.iter_mut().for_each(|w| *w = r.gen_range(-bound..=bound));
            l.biases.iter_mut().for_each(|b| *b = r.gen_range(-bound..=bound));
            layers.push(l);
            c_in = c_out;
        }
        let mut model = Self::new(recipe, layers)?;
        if init == InitScheme::Passthrough {
            model.embed_passthrough()?;
        }
        Ok(model)
    }

    pub fn from_topology(recipe: FeatureRecipe, topology: &Topology, init: InitScheme, seed: u64) -> Result<Self> {
        Self::from_specs(recipe, &topology.layer_specs(), init, seed)
    }

    fn embed_passthrough(&mut self) -> Result<()> {
        if !self.recipe.include_iq {
            return Err(config_err("pass-through init needs I/Q input features"));
        }
        let n = self.layers.len();
        for (i, l) in self.layers.iter_mut().enumerate() {
            if i + 1 == n {
                l.weights.fill(0.0);
                l.set_weight(0, 0, 0, 1.0);
                l.set_weight(1, 1, 0, 1.0);
                let offset = if n > 1 { PASSTHROUGH_OFFSET } else { 0.0 };
                l.biases = vec![-offset, -offset];
                continue;
            }
            if l.c_out < 2 || l.activation == Activation::Sigmoid {
                return Err(config_err(
                    "pass-through init needs ReLU6 or linear hidden layers with at least 2 channels",
                ));
            }
            for j in 0..2 {
                for c in 0..l.c_in {
                    for k in 0..l.kernel_size {
                        l.set_weight(j, c, k, 0.0);
                    }
                }
                l.set_weight(j, j, 0, 1.0);
                l.biases[j] = if i == 0 { PASSTHROUGH_OFFSET } else { 0.0 };
            }
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(|l| l.kernel_size - 1).sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv1dLayer::param_count).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    /// Runs all layers on an already-built feature map.
    pub fn forward_features(&self, features: &FeatureMap) -> Result<FeatureMap> {
        let mut h = features.clone();
        for l in &self.layers {
            h = l.activate(&l.pre_activation(&h)?);
        }
        Ok(h)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_FILE_VERSION,
            recipe: self.recipe.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    c_in: l.c_in,
                    c_out: l.c_out,
                    kernel_size: l.kernel_size,
                    activation: l.activation,
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_model()
    }
}

/// Serialized float model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub recipe: FeatureRecipe,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<CnnModel> {
        if self.version != MODEL_FILE_VERSION {
            return Err(config_err(format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                self.version
            )));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|l| Conv1dLayer {
                c_in: l.c_in,
                c_out: l.c_out,
                kernel_size: l.kernel_size,
                activation: l.activation,
                weights: l.weights,
                biases: l.biases,
            })
            .collect();
        CnnModel::new(self.recipe, layers)
    }
}

/// Time-delay MLP (RVTDNN, or ARVTDNN when the recipe carries envelope
/// terms). A dense layer over a `taps`-deep delay line of feature vectors is
/// a causal convolution with kernel `taps`, so the MLP is lowered onto the
/// convolution engine: first layer `k = taps`, the rest `k = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub recipe: FeatureRecipe,
    pub taps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpModel {
    pub fn layer_specs(&self) -> Vec<(usize, usize, Activation)> {
        let mut specs: Vec<_> = self
            .hidden
            .iter()
            .enumerate()
            .map(|(i, &h)| (h, if i == 0 { self.taps } else { 1 }, self.activation))
            .collect();
        specs.push((2, 1, Activation::Linear));
        specs
    }

    pub fn to_cnn(&self, init: InitScheme, seed: u64) -> Result<CnnModel> {
        if self.taps == 0 {
            return Err(config_err("MLP needs at least one tap"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(config_err("MLP needs at least one non-empty hidden layer"));
        }
        CnnModel::from_specs(self.recipe.clone(), &self.layer_specs(), init, seed)
    }
}

/// Float inference over a complex signal; output channels 0/1 become I/Q.
pub fn cnn_forward(model: &CnnModel, x: &ComplexSignal) -> Result<ComplexSignal> {
    model.validate()?;
    let out = model.forward_features(&build_features(&x.samples, &model.recipe))?;
    let samples = out
        .row(0)
        .iter()
        .zip(out.row(1))
        .map(|(&i, &q)| Complex64::new(i, q))
        .collect();
    ComplexSignal::new(samples, x.sample_rate_hz)
}
