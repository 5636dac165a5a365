//! OFDM baseband stimulus and complex-signal plumbing.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::RngCore;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng;

/// Uniformly sampled complex baseband IQ sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(config_err(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy of `samples[range]` at the same sample rate.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ComplexSignal {
        ComplexSignal {
            samples: self.samples[range].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexSignal {
        ComplexSignal {
            samples: self.samples.iter().map(|&s| f(s)).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn scale(&self, c: Complex64) -> ComplexSignal {
        self.map(|s| s * c)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub(crate) fn ensure_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::DegenerateInput(format!("{what} is empty")))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Constellation {
    Qpsk,
    Qam16,
}

impl Constellation {
    /// Maps the low bits of one 64-bit draw to a unit-average-power point.
    ///
    /// QPSK: bit 0 selects the I sign, bit 1 the Q sign (0 → +, 1 → −).
    /// 16-QAM: bits 0..2 index the I level and bits 2..4 the Q level from
    /// `[-3, -1, 1, 3] / sqrt(10)`.
    pub fn map_bits(self, bits: u64) -> Complex64 {
        match self {
            Constellation::Qpsk => {
                let i = if bits & 1 == 0 { 1.0 } else { -1.0 };
                let q = if bits & 2 == 0 { 1.0 } else { -1.0 };
                Complex64::new(i, q) / 2f64.sqrt()
            }
            Constellation::Qam16 => {
                const LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];
                let i = LEVELS[(bits & 3) as usize];
                let q = LEVELS[((bits >> 2) & 3) as usize];
                Complex64::new(i, q) / 10f64.sqrt()
            }
        }
    }
}

/// OFDM numerology.
///
/// The output sample rate is `fft_size * oversampling * subcarrier_spacing_hz`.
/// Each symbol is extended by `window_ramp` base-rate samples of cyclic
/// extension on both sides and shaped with a raised-cosine ramp; adjacent
/// symbols overlap-add in the ramp region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub occupied_subcarriers: usize,
    pub cp_length: usize,
    pub num_symbols: usize,
    pub constellation: Constellation,
    pub oversampling: usize,
    #[serde(default = "OfdmConfig::default_seed")]
    pub seed: u64,
    #[serde(default = "OfdmConfig::default_spacing")]
    pub subcarrier_spacing_hz: f64,
    #[serde(default = "OfdmConfig::default_ramp")]
    pub window_ramp: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            occupied_subcarriers: 600,
            cp_length: 72,
            num_symbols: 20,
            constellation: Constellation::Qpsk,
            oversampling: 4,
            seed: 1,
            subcarrier_spacing_hz: Self::default_spacing(),
            window_ramp: Self::default_ramp(),
        }
    }
}

impl OfdmConfig {
    fn default_seed() -> u64 {
        1
    }

    fn default_spacing() -> f64 {
        75e3
    }

    fn default_ramp() -> usize {
        16
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 {
            return Err(config_err("fft_size must be positive"));
        }
        if self.occupied_subcarriers == 0 {
            return Err(config_err("occupied_subcarriers must be positive"));
        }
        if self.occupied_subcarriers >= self.fft_size {
            return Err(config_err(format!(
                "occupied_subcarriers ({}) must be below fft_size ({})",
                self.occupied_subcarriers, self.fft_size
            )));
        }
        if self.occupied_subcarriers % 2 != 0 {
            return Err(config_err("occupied_subcarriers must be even"));
        }
        if self.num_symbols == 0 {
            return Err(config_err("num_symbols must be positive"));
        }
        if self.oversampling < 2 {
            return Err(config_err("oversampling must be at least 2"));
        }
        if !(self.subcarrier_spacing_hz > 0.0 && self.subcarrier_spacing_hz.is_finite()) {
            return Err(config_err("subcarrier_spacing_hz must be positive"));
        }
        if self.window_ramp > self.cp_length {
            return Err(config_err(format!(
                "window_ramp ({}) must not exceed cp_length ({})",
                self.window_ramp, self.cp_length
            )));
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        (self.fft_size * self.oversampling) as f64 * self.subcarrier_spacing_hz
    }

    /// Nominal occupied bandwidth, `occupied_subcarriers * spacing`.
    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.occupied_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    pub fn output_len(&self) -> usize {
        self.num_symbols * (self.fft_size + self.cp_length) * self.oversampling
    }
}

/// Generates an OFDM burst with roughly unit RMS.
///
/// Subcarriers `+1..=occ/2` and `-occ/2..=-1` carry data (DC unused). Data
/// points are drawn one 64-bit word per subcarrier from the `signal_gen`
/// stream of the config seed, positive subcarriers first.
pub fn generate_ofdm(config: &OfdmConfig) -> Result<ComplexSignal> {
    config.validate()?;
    let os = config.oversampling;
    let len = config.fft_size * os;
    let cp = config.cp_length * os;
    let ramp = config.window_ramp * os;
    let half = config.occupied_subcarriers / 2;
    let symbol_stride = (config.fft_size + config.cp_length) * os;
    let total = config.output_len();

    let window: Vec<f64> = (0..ramp)
        .map(|i| 0.5 * (1.0 - (PI * (i as f64 + 0.5) / ramp as f64).cos()))
        .collect();

    let mut rng = rng::module_rng(config.seed, rng::TAG_OFDM);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(len);
    let scale = 1.0 / (config.occupied_subcarriers as f64).sqrt();

    // Buffer starts `ramp` samples early so the first symbol's leading ramp fits.
    let mut buf = vec![Complex64::new(0.0, 0.0); total + 2 * ramp];
    let mut bins = vec![Complex64::new(0.0, 0.0); len];
    for s in 0..config.num_symbols {
        bins.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for k in 1..=half {
            bins[k] = config.constellation.map_bits(rng.next_u64());
        }
        for k in 1..=half {
            bins[len - half - 1 + k] = config.constellation.map_bits(rng.next_u64());
        }
        ifft.process(&mut bins);

        let ext_len = cp + len + 2 * ramp;
        let start = s * symbol_stride;
        for j in 0..ext_len {
            // Cyclic index of extended sample j into the IFFT output.
            let src = (j + 2 * len - cp - ramp) % len;
            let w = if j < ramp {
                window[j]
            } else if j >= ext_len - ramp {
                window[ext_len - 1 - j]
            } else {
                1.0
            };
            buf[start + j] += bins[src] * (w * scale);
        }
    }
    let samples = buf[ramp..ramp + total].to_vec();
    ComplexSignal::new(samples, config.sample_rate_hz())
}

/// Rescales `x` so that its RMS equals `target_rms`.
pub fn normalize_rms(x: &ComplexSignal, target_rms: f64) -> Result<ComplexSignal> {
    x.ensure_non_empty("signal")?;
    if !(target_rms > 0.0 && target_rms.is_finite()) {
        return Err(config_err(format!(
            "target RMS must be positive, got {target_rms}"
        )));
    }
    let rms = x.rms();
    if rms == 0.0 {
        return Err(Error::DegenerateInput("all-zero signal".into()));
    }
    let g = target_rms / rms;
    Ok(x.map(|s| s * g))
}

/// Sidecar metadata written next to a signal CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalMeta {
    pub sample_rate_hz: f64,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub ofdm: Option<OfdmConfig>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    index: usize,
    i: f64,
    q: f64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `index,i,q` CSV plus a JSON sidecar with the sample rate.
pub fn save_signal(
    signal: &ComplexSignal,
    csv_path: &Path,
    provenance: Option<Provenance>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    for (index, s) in signal.samples.iter().enumerate() {
        w.serialize(SampleRow {
            index,
            i: s.re,
            q: s.im,
        })?;
    }
    w.flush()?;
    let meta = SignalMeta {
        sample_rate_hz: signal.sample_rate_hz,
        num_samples: signal.len(),
        provenance,
    };
    fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_signal(csv_path: &Path) -> Result<(ComplexSignal, SignalMeta)> {
    let meta: SignalMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut samples = Vec::with_capacity(meta.num_samples);
    for (n, row) in r.deserialize::<SampleRow>().enumerate() {
        let row = row?;
        if row.index != n {
            return Err(config_err(format!(
                "{}: expected index {n}, found {}",
                csv_path.display(),
                row.index
            )));
        }
        samples.push(Complex64::new(row.i, row.q));
    }
    if samples.len() != meta.num_samples {
        return Err(config_err(format!(
            "{}: sidecar declares {} samples, file has {}",
            csv_path.display(),
            meta.num_samples,
            samples.len()
        )));
    }
    Ok((ComplexSignal::new(samples, meta.sample_rate_hz)?, meta))
}
