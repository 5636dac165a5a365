//! Indirect learning: fit a post-distorter from normalized PA output back to
//! PA input, copy it in front of the PA, repeat.

use std::fmt;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::metrics::{nmse_db, AcprReport, MetricsConfig, PsdEstimate};
use crate::neural::{cnn_forward, fit, CnnModel, TrainBudget, TrainConfig};
use crate::pa::{estimate_linear_gain, PaDevice};
use crate::quant::{q_cnn_forward, quantize_model, QCnnModel, QFormat, QStats, QuantMode};
use crate::signal::{normalize_rms, ComplexSignal};

/// Fixed-point settings for evaluating the predistorter as deployed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSettings {
    pub format: QFormat,
    pub mode: QuantMode,
}

impl Default for QuantSettings {
    fn default() -> Self {
        Self {
            format: QFormat::default(),
            mode: QuantMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlaConfig {
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    /// Stop early once the post-distorter validation NMSE reaches this.
    pub nmse_target_db: f64,
    pub drive_rms: f64,
    #[serde(default = "IlaConfig::default_seed")]
    pub seed: u64,
    pub segment_len: usize,
    pub batch_segments: usize,
    pub learning_rate: f64,
    /// Trailing fraction of the signal held out for NMSE/ACPR reporting.
    pub validation_fraction: f64,
    /// Also evaluate a quantized copy of the predistorter each iteration.
    #[serde(default)]
    pub quantized: Option<QuantSettings>,
}

impl Default for IlaConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            epochs_per_iteration: 150,
            nmse_target_db: -60.0,
            drive_rms: 0.25,
            seed: 1,
            segment_len: 256,
            batch_segments: 4,
            learning_rate: 1e-3,
            validation_fraction: 0.25,
            quantized: Some(QuantSettings::default()),
        }
    }
}

impl IlaConfig {
    fn default_seed() -> u64 {
        1
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(config_err("iterations must be at least 1"));
        }
        if !(self.nmse_target_db < 0.0) {
            return Err(config_err("nmse_target_db must be negative"));
        }
        if !(self.drive_rms > 0.0 && self.drive_rms.is_finite()) {
            return Err(config_err("drive_rms must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(config_err("validation_fraction must lie in (0, 1)"));
        }
        if self.segment_len == 0 || self.batch_segments == 0 {
            return Err(config_err("segment_len and batch_segments must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err("learning_rate must be positive"));
        }
        Ok(())
    }

    fn train_config(&self, iteration: usize) -> TrainConfig {
        TrainConfig {
            budget: TrainBudget::Epochs(self.epochs_per_iteration),
            segment_len: self.segment_len,
            batch_segments: self.batch_segments,
            learning_rate: self.learning_rate,
            seed: self.seed.wrapping_add(iteration as u64),
        }
    }

    /// Training range and held-out range of an `n`-sample signal.
    pub fn split(&self, n: usize) -> (Range<usize>, Range<usize>) {
        let cut = ((n as f64) * (1.0 - self.validation_fraction)).floor() as usize;
        (0..cut, cut..n)
    }
}

/// Predistorter as deployed: float or fixed-point.
#[derive(Debug, Clone, PartialEq)]
pub enum Dpd {
    Float(CnnModel),
    Quantized(QCnnModel),
}

/// Forward pass through the predistorter; length preserved.
pub fn apply_dpd(dpd: &Dpd, x: &ComplexSignal) -> Result<ComplexSignal> {
    Ok(apply_dpd_with_stats(dpd, x)?.0)
}

pub fn apply_dpd_with_stats(dpd: &Dpd, x: &ComplexSignal) -> Result<(ComplexSignal, Option<QStats>)> {
    match dpd {
        Dpd::Float(m) => Ok((cnn_forward(m, x)?, None)),
        Dpd::Quantized(q) => {
            let out = q_cnn_forward(q, x)?;
            Ok((out.signal, Some(out.stats)))
        }
    }
}

fn gain_pair(g: Complex64) -> [f64; 2] {
    [g.re, g.im]
}

/// Linearity of the chain `x -> [dpd] -> pa -> y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    /// NMSE between `G x` and `y` over the evaluation range.
    pub nmse_db: f64,
    /// Least-squares chain gain `[re, im]`.
    pub gain: [f64; 2],
    pub acpr: AcprReport,
    pub peak_in: f64,
    pub peak_dpd_out: f64,
    pub saturations: Option<QStats>,
    pub psd: PsdEstimate,
}

/// Runs the chain over all of `x` and measures it on `eval` only.
pub fn evaluate_chain_on(
    dpd: Option<&Dpd>,
    pa: &dyn PaDevice,
    x: &ComplexSignal,
    metrics: &MetricsConfig,
    eval: Range<usize>,
) -> Result<ChainReport> {
    x.ensure_non_empty("chain input")?;
    let (u, saturations) = match dpd {
        Some(d) => apply_dpd_with_stats(d, x)?,
        None => (x.clone(), None),
    };
    let y = transmit_checked(pa, &u)?;
    let (xe, ye) = (x.slice(eval.clone()), y.slice(eval.clone()));
    let g = estimate_linear_gain(&xe, &ye)?;
    let gx: Vec<Complex64> = xe.samples.iter().map(|s| s * g).collect();
    let (psd, acpr) = metrics.measure(&ye)?;
    Ok(ChainReport {
        nmse_db: nmse_db(&gx, &ye.samples)?,
        gain: gain_pair(g),
        acpr,
        peak_in: xe.peak(),
        peak_dpd_out: u.slice(eval).peak(),
        saturations,
        psd,
    })
}

pub fn evaluate_chain(dpd: Option<&Dpd>, pa: &dyn PaDevice, x: &ComplexSignal, metrics: &MetricsConfig) -> Result<ChainReport> {
    evaluate_chain_on(dpd, pa, x, metrics, 0..x.len())
}

fn transmit_checked(pa: &dyn PaDevice, x: &ComplexSignal) -> Result<ComplexSignal> {
    let y = pa.transmit(x)?;
    if y.len() != x.len() {
        return Err(Error::Device(format!(
            "PA returned {} samples for {} sent",
            y.len(),
            x.len()
        )));
    }
    Ok(y)
}

/// Post-distorter training pair: input is the PA output divided by the
/// gain, target is what was fed to the PA.
pub fn pod_training_pair(x_dpd: &ComplexSignal, y: &ComplexSignal, gain: Complex64) -> (ComplexSignal, ComplexSignal) {
    (y.scale(gain.inv()), x_dpd.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedRecord {
    pub acpr_after_db: f64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlaRecord {
    pub iteration: usize,
    /// Per-epoch training NMSE of the post-distorter, dB.
    pub train_nmse_db: Vec<f64>,
    pub steps: usize,
    pub stalled: Option<bool>,
    /// Post-distorter NMSE on the held-out range, dB.
    pub validation_nmse_db: f64,
    /// Held-out ACPR with the predistorter used in this iteration.
    pub acpr_before_db: f64,
    /// Held-out ACPR after copying the new post-distorter in front of the PA.
    pub acpr_after_db: f64,
    pub gain: [f64; 2],
    pub quantized: Option<QuantizedRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IlaHistory {
    pub records: Vec<IlaRecord>,
    pub stopped_early: bool,
}

/// A failed run together with the iterations that completed.
#[derive(Debug)]
pub struct IlaError {
    pub error: Error,
    pub history: IlaHistory,
}

impl fmt::Display for IlaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ILA stopped after {} completed iterations", self.history.records.len())
    }
}

impl std::error::Error for IlaError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs `cfg.iterations` ILA passes starting from `init` as both
/// post-distorter and predistorter. `x` is rescaled to `cfg.drive_rms`.
pub fn ila_train(
    cfg: &IlaConfig,
    pa: &dyn PaDevice,
    x: &ComplexSignal,
    init: &CnnModel,
    metrics: &MetricsConfig,
) -> std::result::Result<(CnnModel, IlaHistory), IlaError> {
    let mut history = IlaHistory::default();
    match run(cfg, pa, x, init, metrics, &mut history) {
        Ok(model) => Ok((model, history)),
        Err(error) => Err(IlaError { error, history }),
    }
}

fn run(
    cfg: &IlaConfig,
    pa: &dyn PaDevice,
    x: &ComplexSignal,
    init: &CnnModel,
    metrics: &MetricsConfig,
    history: &mut IlaHistory,
) -> Result<CnnModel> {
    cfg.validate()?;
    init.validate()?;
    let x = normalize_rms(x, cfg.drive_rms)?;
    let (train, val) = cfg.split(x.len());
    let mut dpd = init.clone();
    let mut x_dpd = x.clone();
    let mut y = transmit_checked(pa, &x_dpd)?;
    for it in 1..=cfg.iterations {
        let acpr_before_db = metrics.measure(&y.slice(val.clone()))?.1.acpr_worst_db;
        let gain = estimate_linear_gain(&x, &y)?;
        let (pod_in, pod_target) = pod_training_pair(&x_dpd, &y, gain);
        let mut pod = dpd.clone();
        let report = fit(
            &mut pod,
            &pod_in.slice(train.clone()),
            &pod_target.slice(train.clone()),
            &cfg.train_config(it),
        )?;
        let pod_val = cnn_forward(&pod, &pod_in.slice(val.clone()))?;
        let validation_nmse_db = nmse_db(&pod_target.slice(val.clone()).samples, &pod_val.samples)?;

        dpd = pod;
        x_dpd = cnn_forward(&dpd, &x)?;
        y = transmit_checked(pa, &x_dpd)?;
        let acpr_after_db = metrics.measure(&y.slice(val.clone()))?.1.acpr_worst_db;

        let quantized = match cfg.quantized {
            Some(q) => {
                let qm = quantize_model(&dpd, q.format, q.mode)?;
                let r = evaluate_chain_on(Some(&Dpd::Quantized(qm)), pa, &x, metrics, val.clone())?;
                Some(QuantizedRecord {
                    acpr_after_db: r.acpr.acpr_worst_db,
                    saturations: r.saturations.map_or(0, |s| s.total_saturations()),
                })
            }
            None => None,
        };
        history.records.push(IlaRecord {
            iteration: it,
            train_nmse_db: report.epoch_nmse_db,
            steps: report.steps,
            stalled: report.stalled,
            validation_nmse_db,
            acpr_before_db,
            acpr_after_db,
            gain: gain_pair(gain),
            quantized,
        });
        if validation_nmse_db <= cfg.nmse_target_db {
            history.stopped_early = it < cfg.iterations;
            break;
        }
    }
    Ok(dpd)
}
