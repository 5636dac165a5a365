//! Memory-polynomial power-amplifier surrogate.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::metrics::MetricsConfig;
use crate::rng;
use crate::signal::ComplexSignal;

/// Anything that can push a baseband waveform through an amplifier.
pub trait PaDevice: Sync {
    fn transmit(&self, x: &ComplexSignal) -> Result<ComplexSignal>;
}

/// `y(n) = sum_p sum_m a[p][m] x(n-m) |x(n-m)|^(p-1)` over odd `p`, plus
/// optional complex Gaussian measurement noise.
///
/// `coeffs[k][m]` holds the coefficient of order `p = 2k + 1` at tap `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaModel {
    pub coeffs: Vec<Vec<Complex64>>,
    pub max_order: usize,
    pub memory_depth: usize,
    pub noise_rms: f64,
    pub noise_seed: u64,
}

impl PaModel {
    pub fn new(
        coeffs: Vec<Vec<Complex64>>,
        noise_rms: f64,
        noise_seed: u64,
    ) -> Result<Self> {
        let rows = coeffs.len();
        let memory_depth = coeffs.first().map_or(0, Vec::len);
        let model = Self {
            max_order: 2 * rows.max(1) - 1,
            memory_depth,
            coeffs,
            noise_rms,
            noise_seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Noise-free linear gain.
    pub fn linear(gain: Complex64) -> Self {
        Self {
            coeffs: vec![vec![gain]],
            max_order: 1,
            memory_depth: 1,
            noise_rms: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_order == 0 || self.max_order % 2 == 0 {
            return Err(config_err(format!(
                "max_order must be odd and positive, got {}",
                self.max_order
            )));
        }
        if self.memory_depth == 0 {
            return Err(config_err("memory_depth must be at least 1"));
        }
        let rows = (self.max_order + 1) / 2;
        if self.coeffs.len() != rows || self.coeffs.iter().any(|r| r.len() != self.memory_depth) {
            return Err(config_err(format!(
                "coefficient array must be {rows} x {}",
                self.memory_depth
            )));
        }
        if self.coeffs[0][0] == Complex64::new(0.0, 0.0) {
            return Err(config_err("small-signal gain a[1][0] must be nonzero"));
        }
        if !(self.noise_rms >= 0.0 && self.noise_rms.is_finite()) {
            return Err(config_err("noise_rms must be non-negative"));
        }
        Ok(())
    }

    pub fn small_signal_gain(&self) -> Complex64 {
        self.coeffs[0][0]
    }

    pub fn without_noise(&self) -> Self {
        Self {
            noise_rms: 0.0,
            ..self.clone()
        }
    }

    /// The calibrated default PA shipped with the crate.
    pub fn default_calibrated() -> Self {
        serde_json::from_str::<PaModelFile>(include_str!("../fixtures/default_pa.json"))
            .and_then(|f| f.into_model().map_err(serde::de::Error::custom))
            .expect("bundled PA fixture is valid")
    }

    pub fn to_file(&self) -> PaModelFile {
        PaModelFile {
            max_order: self.max_order,
            memory_depth: self.memory_depth,
            coeffs: self.coeffs.iter().flatten().map(|c| [c.re, c.im]).collect(),
            noise_rms: self.noise_rms,
            noise_seed: self.noise_seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PaModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_model()
    }
}

/// On-disk PA coefficient layout: `coeffs` is row-major by order, then tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaModelFile {
    pub max_order: usize,
    pub memory_depth: usize,
    pub coeffs: Vec<[f64; 2]>,
    pub noise_rms: f64,
    pub noise_seed: u64,
}

impl PaModelFile {
    pub fn into_model(self) -> Result<PaModel> {
        if self.max_order == 0 || self.max_order % 2 == 0 {
            return Err(config_err(format!(
                "max_order must be odd and positive, got {}",
                self.max_order
            )));
        }
        let rows = (self.max_order + 1) / 2;
        if self.memory_depth == 0 || self.coeffs.len() != rows * self.memory_depth {
            return Err(config_err(format!(
                "expected {} coefficients for order {} and depth {}, found {}",
                rows * self.memory_depth,
                self.max_order,
                self.memory_depth,
                self.coeffs.len()
            )));
        }
        let coeffs = self
            .coeffs
            .chunks(self.memory_depth)
            .map(|row| row.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
            .collect();
        let model = PaModel {
            coeffs,
            max_order: self.max_order,
            memory_depth: self.memory_depth,
            noise_rms: self.noise_rms,
            noise_seed: self.noise_seed,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Basis signals `x(n) |x(n)|^(p-1)` for `p = 1, 3, ..., 2*rows - 1`.
pub(crate) fn odd_basis(x: &[Complex64], rows: usize) -> Vec<Vec<Complex64>> {
    let mut out = Vec::with_capacity(rows);
    out.push(x.to_vec());
    let env2: Vec<f64> = x.iter().map(|s| s.norm_sqr()).collect();
    for k in 1..rows {
        let prev: &Vec<Complex64> = &out[k - 1];
        let next = prev.iter().zip(&env2).map(|(b, e)| b * e).collect();
        out.push(next);
    }
    out
}

/// Applies the memory polynomial with zero initial conditions.
pub fn mem_poly_apply(model: &PaModel, x: &ComplexSignal) -> Result<ComplexSignal> {
    model.validate()?;
    let n = x.len();
    let basis = odd_basis(&x.samples, model.coeffs.len());
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for (row, b) in model.coeffs.iter().zip(&basis) {
        for (m, &a) in row.iter().enumerate() {
            if a == Complex64::new(0.0, 0.0) || m >= n {
                continue;
            }
            for (yo, bi) in y[m..].iter_mut().zip(b) {
                *yo += a * bi;
            }
        }
    }
    if model.noise_rms > 0.0 {
        let mut r = rng::module_rng(model.noise_seed, rng::TAG_PA_NOISE);
        let sigma = model.noise_rms / 2f64.sqrt();
        for v in &mut y {
            let re: f64 = r.sample(StandardNormal);
            let im: f64 = r.sample(StandardNormal);
            *v += Complex64::new(re, im) * sigma;
        }
    }
    ComplexSignal::new(y, x.sample_rate_hz)
}

impl PaDevice for PaModel {
    fn transmit(&self, x: &ComplexSignal) -> Result<ComplexSignal> {
        mem_poly_apply(self, x)
    }
}

/// Least-squares complex gain `G = sum(conj(x) y) / sum |x|^2`.
pub fn estimate_linear_gain(x: &ComplexSignal, y: &ComplexSignal) -> Result<Complex64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "gain estimate: input has {} samples, output {}",
            x.len(),
            y.len()
        )));
    }
    let energy = x.energy();
    if energy == 0.0 {
        return Err(Error::DegenerateInput("input has zero energy".into()));
    }
    let cross: Complex64 = x
        .samples
        .iter()
        .zip(&y.samples)
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(cross / energy)
}

/// Perturbation direction swept by the calibration routine. The static
/// column is an odd-polynomial fit to a soft-saturating (Rapp, smoothness 1)
/// AM/AM with a small AM/PM; the other columns add modest memory.
pub const CALIBRATION_DIRECTION: [[(f64, f64); 4]; 4] = [
    [(0.0, 0.0), (0.08, -0.04), (-0.02, 0.01), (0.005, 0.0)],
    [(-0.6, 0.09), (0.06, -0.01), (-0.018, 0.0), (0.0, 0.0)],
    [(0.29, -0.06), (-0.03, 0.0), (0.0, 0.0), (0.0, 0.0)],
    [(-0.058, 0.014), (0.006, 0.0), (0.0, 0.0), (0.0, 0.0)],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// Worst-side ACPR to aim for.
    pub target_acpr_db: f64,
    /// Acceptable window; calibration fails if it cannot land inside.
    pub window_db: (f64, f64),
    pub drive_rms: f64,
    /// Absolute noise RMS as a fraction of the drive RMS.
    pub relative_noise: f64,
    pub noise_seed: u64,
    pub tolerance_db: f64,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            target_acpr_db: -33.9,
            window_db: (-36.0, -30.0),
            drive_rms: 0.25,
            relative_noise: 1e-4,
            noise_seed: 7,
            tolerance_db: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: PaModel,
    pub scale: f64,
    pub acpr_db: f64,
    pub iterations: usize,
}

fn scaled_direction(scale: f64, noise_rms: f64, noise_seed: u64) -> PaModel {
    let coeffs: Vec<Vec<Complex64>> = CALIBRATION_DIRECTION
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(|(m, &(re, im))| {
                    let base = if k == 0 && m == 0 { 1.0 } else { 0.0 };
                    Complex64::new(base + scale * re, scale * im)
                })
                .collect()
        })
        .collect();
    PaModel {
        coeffs,
        max_order: 7,
        memory_depth: 4,
        noise_rms,
        noise_seed,
    }
}

/// Starts from the identity PA (`a[1][0] = 1`) and bisects the amplitude of
/// [`CALIBRATION_DIRECTION`] until the un-predistorted worst-side ACPR of
/// `stimulus` (rescaled to the drive RMS) hits the target.
pub fn calibrate(
    stimulus: &ComplexSignal,
    target: &CalibrationTarget,
    metrics: &MetricsConfig,
) -> Result<Calibration> {
    let x = crate::signal::normalize_rms(stimulus, target.drive_rms)?;
    let noise = target.relative_noise * target.drive_rms;
    let measure = |scale: f64| -> Result<f64> {
        let y = mem_poly_apply(&scaled_direction(scale, noise, target.noise_seed), &x)?;
        Ok(metrics.measure(&y)?.1.acpr_worst_db)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while measure(hi)? < target.target_acpr_db {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(config_err("calibration could not reach the target ACPR"));
        }
    }
    let mut iterations = 0;
    let mut scale = hi;
    let mut acpr_db = measure(hi)?;
    while iterations < 60 && (acpr_db - target.target_acpr_db).abs() > target.tolerance_db {
        iterations += 1;
        scale = 0.5 * (lo + hi);
        acpr_db = measure(scale)?;
        if acpr_db < target.target_acpr_db {
            lo = scale;
        } else {
            hi = scale;
        }
    }
    if !(target.window_db.0..=target.window_db.1).contains(&acpr_db) {
        return Err(config_err(format!(
            "calibrated ACPR {acpr_db:.2} dB is outside [{}, {}] dB",
            target.window_db.0, target.window_db.1
        )));
    }
    Ok(Calibration {
        model: scaled_direction(scale, noise, target.noise_seed),
        scale,
        acpr_db,
        iterations,
    })
}
