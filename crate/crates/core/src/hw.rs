//! Multiplier / adder / parameter counts of a fully parallel datapath.

use serde::{Deserialize, Serialize};

use crate::neural::{CnnModel, Topology};
use crate::quant::{QCnnModel, QuantMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerResources {
    pub shape: LayerShape,
    pub multipliers: usize,
    pub adders: usize,
    pub parameters: usize,
    /// Products realized as shifts in power-of-two mode.
    pub shifts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub mode: QuantMode,
    pub layers: Vec<LayerResources>,
    pub total_multipliers: usize,
    pub total_adders: usize,
    pub total_parameters: usize,
    pub total_shifts: usize,
    /// Multipliers removed relative to uniform mode.
    pub pot_multiplier_savings: usize,
}

fn uniform_layer(s: LayerShape) -> LayerResources {
    let taps = s.c_in * s.kernel_size;
    LayerResources {
        shape: s,
        multipliers: s.c_out * taps,
        adders: s.c_out * (taps - 1) + s.c_out,
        parameters: s.c_out * taps + s.c_out,
        shifts: 0,
    }
}

fn assemble(mode: QuantMode, layers: Vec<LayerResources>) -> ResourceEstimate {
    let uniform: usize = layers.iter().map(|l| l.shape.c_in * l.shape.c_out * l.shape.kernel_size).sum();
    let total_multipliers = layers.iter().map(|l| l.multipliers).sum();
    ResourceEstimate {
        mode,
        total_adders: layers.iter().map(|l| l.adders).sum(),
        total_parameters: layers.iter().map(|l| l.parameters).sum(),
        total_shifts: layers.iter().map(|l| l.shifts).sum(),
        pot_multiplier_savings: uniform - total_multipliers,
        total_multipliers,
        layers,
    }
}

/// Estimate from layer shapes alone. Power-of-two mode assumes every weight
/// is a nonzero power of two, i.e. one shift per tap and no multipliers.
pub fn estimate_shapes(shapes: &[LayerShape], mode: QuantMode) -> ResourceEstimate {
    let layers = shapes
        .iter()
        .map(|&s| {
            let mut l = uniform_layer(s);
            if mode == QuantMode::PowerOfTwo {
                l.shifts = l.multipliers;
                l.multipliers = 0;
            }
            l
        })
        .collect();
    assemble(mode, layers)
}

pub fn model_shapes(model: &CnnModel) -> Vec<LayerShape> {
    model
        .layers
        .iter()
        .map(|l| LayerShape {
            c_in: l.c_in,
            c_out: l.c_out,
            kernel_size: l.kernel_size,
        })
        .collect()
}

/// Layer shapes of `topology` fed by `input_channels` features.
pub fn topology_shapes(input_channels: usize, topology: &Topology) -> Vec<LayerShape> {
    let mut c_in = input_channels;
    topology
        .layer_specs()
        .into_iter()
        .map(|(c_out, k, _)| {
            let s = LayerShape {
                c_in,
                c_out,
                kernel_size: k,
            };
            c_in = c_out;
            s
        })
        .collect()
}

pub fn estimate_model(model: &CnnModel, mode: QuantMode) -> ResourceEstimate {
    estimate_shapes(&model_shapes(model), mode)
}

/// Estimate from actual quantized weights: in power-of-two mode every
/// nonzero weight is a shift and zero weights cost nothing.
pub fn estimate_quantized(qm: &QCnnModel) -> ResourceEstimate {
    let layers = qm
        .layers
        .iter()
        .map(|ql| {
            let mut l = uniform_layer(LayerShape {
                c_in: ql.c_in,
                c_out: ql.c_out,
                kernel_size: ql.kernel_size,
            });
            if qm.mode == QuantMode::PowerOfTwo {
                let pot = |w: i64| w != 0 && w.unsigned_abs().is_power_of_two();
                l.shifts = ql.weights.iter().filter(|&&w| pot(w)).count();
                l.multipliers = ql.weights.iter().filter(|&&w| w != 0 && !pot(w)).count();
            }
            l
        })
        .collect();
    assemble(qm.mode, layers)
}
