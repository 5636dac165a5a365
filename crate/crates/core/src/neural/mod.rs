//! Floating-point 1D-CNN core: feature stacking, causal convolution layers,
//! hand-derived backpropagation and Adam training.

mod features;
mod layer;
mod model;
mod train;

pub use features::{build_features, FeatureRecipe};
pub use layer::{conv1d_backward, conv1d_forward, relu6, Activation, Conv1dLayer, FeatureMap, LayerGrads};
pub use model::{cnn_forward, CnnModel, InitScheme, MlpModel, ModelFile, Topology, MODEL_FILE_VERSION};
pub use train::{
    batch_loss, fit, gradient_check, loss_and_gradient, make_segments, train_step, Adam,
    GradCheckOptions, GradCheckReport, Segment, TrainBudget, TrainConfig, TrainReport,
};
