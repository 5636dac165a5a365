//! The shipped default experiment: OFDM stimulus, calibrated PA, 2x20 K=5
//! CNN predistorter trained by indirect learning.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ila::IlaConfig;
use crate::metrics::MetricsConfig;
use crate::neural::{CnnModel, FeatureRecipe, InitScheme, Topology};
use crate::pa::PaModel;
use crate::signal::{generate_ofdm, normalize_rms, ComplexSignal, OfdmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub recipe: FeatureRecipe,
    pub topology: Topology,
    pub init: InitScheme,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            recipe: FeatureRecipe::default(),
            topology: Topology::default(),
            init: InitScheme::Passthrough,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<CnnModel> {
        CnnModel::from_topology(self.recipe.clone(), &self.topology, self.init, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ofdm: OfdmConfig,
    pub pa: PaModel,
    pub metrics: MetricsConfig,
    pub model: ModelSpec,
    pub ila: IlaConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            ofdm: OfdmConfig::default(),
            pa: PaModel::default_calibrated(),
            metrics: MetricsConfig::default(),
            model: ModelSpec::default(),
            ila: IlaConfig::default(),
        }
    }
}

impl Scenario {
    /// OFDM stimulus at the drive level.
    pub fn stimulus(&self) -> Result<ComplexSignal> {
        normalize_rms(&generate_ofdm(&self.ofdm)?, self.ila.drive_rms)
    }

    pub fn init_model(&self) -> Result<CnnModel> {
        self.model.build(self.ila.seed)
    }
}
