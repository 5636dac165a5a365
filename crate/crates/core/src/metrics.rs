//! Linearity metrics: NMSE, Welch PSD and ACPR.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::par;
use crate::signal::ComplexSignal;

/// Value reported in place of `-inf` dB.
pub const DB_FLOOR: f64 = -300.0;

fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        10.0 * ratio.log10()
    } else {
        DB_FLOOR
    }
}

/// `10 log10(sum |est - ref|^2 / sum |ref|^2)`.
pub fn nmse_db(reference: &[Complex64], estimate: &[Complex64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(shape_err(format!(
            "nmse: reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    if ref_energy <= 0.0 {
        return Err(Error::DegenerateInput("reference has zero energy".into()));
    }
    let err: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (e - r).norm_sqr())
        .sum();
    Ok(to_db(err / ref_energy))
}

/// Welch PSD estimate, FFT-shifted with ascending frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    /// Linear power density (power per Hz).
    pub psd: Vec<f64>,
    pub psd_db: Vec<f64>,
    /// Equivalent noise bandwidth of one bin.
    pub resolution_bw_hz: f64,
}

impl PsdEstimate {
    pub fn bin_width_hz(&self) -> f64 {
        if self.freqs_hz.len() < 2 {
            0.0
        } else {
            self.freqs_hz[1] - self.freqs_hz[0]
        }
    }

    /// Rectangle-rule integral of the full PSD.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width_hz()
    }

    /// Integral of the piecewise-linear PSD over `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> Result<f64> {
        let f = &self.freqs_hz;
        let (first, last) = (f[0], f[f.len() - 1]);
        if lo < first || hi > last || lo > hi {
            return Err(config_err(format!(
                "band [{lo:.6e}, {hi:.6e}] Hz outside PSD span [{first:.6e}, {last:.6e}] Hz"
            )));
        }
        let interp = |x: f64| -> f64 {
            let i = f.partition_point(|&v| v <= x).clamp(1, f.len() - 1);
            let (x0, x1) = (f[i - 1], f[i]);
            let t = (x - x0) / (x1 - x0);
            self.psd[i - 1] * (1.0 - t) + self.psd[i] * t
        };
        let mut pts = vec![(lo, interp(lo))];
        pts.extend(
            f.iter()
                .zip(&self.psd)
                .filter(|(&x, _)| x > lo && x < hi)
                .map(|(&x, &p)| (x, p)),
        );
        pts.push((hi, interp(hi)));
        Ok(pts
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum())
    }

    /// Writes `freq_hz,psd_db`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["freq_hz", "psd_db"])?;
        for (f, p) in self.freqs_hz.iter().zip(&self.psd_db) {
            w.write_record([f.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Welch averaged periodogram with a Hann window.
///
/// Scaling is `|FFT(w x)|^2 / (fs sum w^2)`, so integrating the PSD over
/// frequency recovers the mean sample power.
pub fn psd_welch(x: &ComplexSignal, segment: usize, overlap_fraction: f64) -> Result<PsdEstimate> {
    if segment < 2 {
        return Err(config_err("Welch segment must be at least 2 samples"));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(config_err(format!(
            "overlap fraction must be in [0, 1), got {overlap_fraction}"
        )));
    }
    if x.len() < segment {
        return Err(config_err(format!(
            "signal of {} samples is shorter than the Welch segment {segment}",
            x.len()
        )));
    }
    let overlap = ((segment as f64) * overlap_fraction).round() as usize;
    let step = (segment - overlap).max(1);
    let n_seg = 1 + (x.len() - segment) / step;
    let window = hann(segment);
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let win_sum: f64 = window.iter().sum();
    let fs = x.sample_rate_hz;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment);

    let periodograms = par::map_range(n_seg, |s| {
        let start = s * step;
        let mut buf: Vec<Complex64> = x.samples[start..start + segment]
            .iter()
            .zip(&window)
            .map(|(v, w)| v * w)
            .collect();
        fft.process(&mut buf);
        buf.iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>()
    });
    let mut acc = vec![0.0; segment];
    for p in &periodograms {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let norm = 1.0 / (n_seg as f64 * fs * win_energy);

    let half = segment / 2;
    let mut freqs = Vec::with_capacity(segment);
    let mut psd = Vec::with_capacity(segment);
    for j in 0..segment {
        // FFT shift: output index j holds bin (j + half) mod segment.
        let k = (j + segment - half) % segment;
        let signed = j as f64 - half as f64;
        freqs.push(signed * fs / segment as f64);
        psd.push(acc[k] * norm);
    }
    let psd_db = psd.iter().map(|&p| to_db(p)).collect();
    Ok(PsdEstimate {
        freqs_hz: freqs,
        psd,
        psd_db,
        resolution_bw_hz: fs * win_energy / (win_sum * win_sum),
    })
}

/// Channel layout for ACPR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcprConfig {
    pub main_bw_hz: f64,
    pub offset_hz: f64,
    pub meas_bw_hz: f64,
}

impl AcprConfig {
    /// Adjacent channels of the same width placed one channel away.
    pub fn adjacent(channel_bw_hz: f64) -> Self {
        Self {
            main_bw_hz: channel_bw_hz,
            offset_hz: channel_bw_hz,
            meas_bw_hz: channel_bw_hz,
        }
    }
}

impl Default for AcprConfig {
    fn default() -> Self {
        Self::adjacent(50e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcprReport {
    pub main_power_db: f64,
    pub left_adj_db: f64,
    pub right_adj_db: f64,
    pub acpr_left_db: f64,
    pub acpr_right_db: f64,
    pub acpr_worst_db: f64,
    pub main_bw_hz: f64,
    pub offset_hz: f64,
    pub meas_bw_hz: f64,
}

pub fn acpr(psd: &PsdEstimate, main_bw_hz: f64, offset_hz: f64, meas_bw_hz: f64) -> Result<AcprReport> {
    for (name, v) in [("main_bw_hz", main_bw_hz), ("offset_hz", offset_hz), ("meas_bw_hz", meas_bw_hz)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_err(format!("{name} must be positive, got {v}")));
        }
    }
    let main = psd.band_power(-main_bw_hz / 2.0, main_bw_hz / 2.0)?;
    let left = psd.band_power(-offset_hz - meas_bw_hz / 2.0, -offset_hz + meas_bw_hz / 2.0)?;
    let right = psd.band_power(offset_hz - meas_bw_hz / 2.0, offset_hz + meas_bw_hz / 2.0)?;
    if main <= 0.0 {
        return Err(Error::DegenerateInput("no power in the main channel".into()));
    }
    let acpr_left_db = to_db(left / main);
    let acpr_right_db = to_db(right / main);
    Ok(AcprReport {
        main_power_db: to_db(main),
        left_adj_db: to_db(left),
        right_adj_db: to_db(right),
        acpr_left_db,
        acpr_right_db,
        acpr_worst_db: acpr_left_db.max(acpr_right_db),
        main_bw_hz,
        offset_hz,
        meas_bw_hz,
    })
}

/// Welch and ACPR settings used throughout an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub welch_segment: usize,
    pub welch_overlap: f64,
    pub acpr: AcprConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            welch_segment: 1024,
            welch_overlap: 0.5,
            acpr: AcprConfig::default(),
        }
    }
}

impl MetricsConfig {
    pub fn psd(&self, x: &ComplexSignal) -> Result<PsdEstimate> {
        psd_welch(x, self.welch_segment, self.welch_overlap)
    }

    pub fn acpr(&self, psd: &PsdEstimate) -> Result<AcprReport> {
        acpr(psd, self.acpr.main_bw_hz, self.acpr.offset_hz, self.acpr.meas_bw_hz)
    }

    pub fn measure(&self, x: &ComplexSignal) -> Result<(PsdEstimate, AcprReport)> {
        let psd = self.psd(x)?;
        let report = self.acpr(&psd)?;
        Ok((psd, report))
    }
}
