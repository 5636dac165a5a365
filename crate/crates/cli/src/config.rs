use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use dpd_core::benchmark::BenchmarkMatrix;
use dpd_core::ila::{IlaConfig, QuantSettings};
use dpd_core::metrics::MetricsConfig;
use dpd_core::pa::{CalibrationTarget, PaModel};
use dpd_core::scenario::ModelSpec;
use dpd_core::signal::OfdmConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Where the PA surrogate comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaSource {
    /// The calibrated model bundled with the library.
    Default,
    /// A coefficient file; relative paths resolve against the config file.
    File { path: PathBuf },
    /// Calibrate a fresh model against the configured stimulus.
    Calibrate { target: CalibrationTarget },
}

/// Full experiment description. Nested `seed` fields may be omitted; they
/// are filled from the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub signal: OfdmConfig,
    pub pa: PaSource,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub model: ModelSpec,
    pub ila: IlaConfig,
    pub quant: QuantSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkMatrix>,
}

/// Failure class: bad input (exit 2) or a failed computation (exit 1).
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Runtime(e) => write!(f, "run failed: {e:#}"),
        }
    }
}

pub trait ConfigContext<T> {
    fn config_err(self) -> Result<T, CliError>;
    fn runtime_err(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn config_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(e.into()))
    }

    fn runtime_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

/// Seeds written in nested sections, by JSON path.
const NESTED_SEEDS: [&[&str]; 4] = [
    &["signal", "seed"],
    &["ila", "seed"],
    &["benchmark", "dataset", "ofdm", "seed"],
    &["benchmark", "training", "seed"],
];

/// Rejects nested seeds that disagree with the top-level one.
fn check_nested_seeds(v: &Value, seed: u64) -> anyhow::Result<()> {
    for path in NESTED_SEEDS {
        let found = path.iter().try_fold(v, |node, key| node.get(key));
        if let Some(s) = found {
            if s.as_u64() != Some(seed) {
                bail!("{} = {s} conflicts with the top-level seed {seed}", path.join("."));
            }
        }
    }
    Ok(())
}

/// Loads an experiment config, or the `config` block of a previously
/// written manifest. `seed_override` replaces the top-level seed and every
/// seed derived from it.
pub fn load(path: &Path, seed_override: Option<u64>) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .config_err()?;
    let mut v: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))
        .config_err()?;
    if v.get("artifacts").is_some() && v.get("config").is_some() {
        v = v["config"].take();
        text = serde_json::to_string_pretty(&v).expect("JSON value serializes");
    }
    let seed = v
        .get("seed")
        .and_then(Value::as_u64)
        .context("missing or non-integer top-level `seed`")
        .config_err()?;
    check_nested_seeds(&v, seed).config_err()?;
    // Deserializing from text keeps line/column anchors in type errors.
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .config_err()?;
    cfg.seed = seed_override.unwrap_or(seed);
    cfg.signal.seed = cfg.seed;
    cfg.ila.seed = cfg.seed;
    if let Some(b) = cfg.benchmark.as_mut() {
        b.dataset.ofdm.seed = cfg.seed;
        b.training.seed = cfg.seed;
    }
    validate(&cfg).config_err()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn validate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    if cfg.schema_version != SCHEMA_VERSION {
        bail!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        );
    }
    cfg.signal.validate().context("signal")?;
    cfg.ila.validate().context("ila")?;
    cfg.quant.format.validate().context("quant.format")?;
    if !(cfg.metrics.welch_segment > 0 && (0.0..1.0).contains(&cfg.metrics.welch_overlap)) {
        bail!("metrics: welch_segment must be positive and welch_overlap in [0, 1)");
    }
    cfg.model.build(cfg.seed).context("model")?;
    if let Some(b) = &cfg.benchmark {
        b.validate().context("benchmark")?;
    }
    Ok(())
}

/// Resolves the PA. File sources are read here so a bad path is a
/// configuration error; calibration happens later, at run time.
pub fn load_pa_file(source: &PaSource, base: &Path) -> Result<Option<PaModel>, CliError> {
    match source {
        PaSource::Default => Ok(Some(PaModel::default_calibrated())),
        PaSource::File { path } => {
            let p = if path.is_absolute() { path.clone() } else { base.join(path) };
            PaModel::load(&p)
                .with_context(|| format!("cannot load PA model {}", p.display()))
                .config_err()
                .map(Some)
        }
        PaSource::Calibrate { .. } => Ok(None),
    }
}
