use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fixed::{check_acc_bits, dequantize, quantize_counted, requantize, QFormat, SaturationCounter, DEFAULT_ACC_BITS};
use crate::error::{config_err, shape_err, Result};
use crate::neural::{Activation, CnnModel, Conv1dLayer, FeatureRecipe};
use crate::par;
use crate::signal::ComplexSignal;

pub const QUANT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Uniform,
    PowerOfTwo,
}

/// One quantized layer; weights row-major `[c_out][c_in][k]` as raw integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub weights: Vec<i64>,
    pub biases: Vec<i64>,
    pub max_weight_error: f64,
    pub max_bias_error: f64,
}

impl QLayer {
    fn w_slice(&self, o: usize, c: usize) -> &[i64] {
        let start = (o * self.c_in + c) * self.kernel_size;
        &self.weights[start..start + self.kernel_size]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QCnnModel {
    pub version: u32,
    pub format: QFormat,
    pub mode: QuantMode,
    pub acc_bits: u32,
    pub recipe: FeatureRecipe,
    pub layers: Vec<QLayer>,
    /// Parameters clipped while quantizing.
    pub parameter_saturations: u64,
}

/// `sign(w) 2^round(log2|w|)` as a raw value of `f`. The exponent is
/// clamped to what `f` represents as a single set bit; magnitudes below half
/// an LSB become zero.
pub fn pot_round(w: f64, f: QFormat, sat: &mut SaturationCounter) -> i64 {
    let a = w.abs();
    if a.is_nan() {
        sat.record(true);
        return 0;
    }
    if a < (-(f.frac_bits as f64) - 1.0).exp2() {
        return 0;
    }
    let lo = -(f.frac_bits as i64);
    let hi = f.total_bits as i64 - f.frac_bits as i64 - 2;
    let e = a.log2().round_ties_even();
    let e = if e.is_infinite() { hi as f64 + 1.0 } else { e };
    let clamped = (e as i64).clamp(lo, hi);
    sat.record(clamped as f64 != e);
    let raw = 1i64 << (clamped - lo);
    if w < 0.0 {
        -raw
    } else {
        raw
    }
}

fn is_pot_raw(raw: i64) -> bool {
    raw == 0 || raw.unsigned_abs().is_power_of_two()
}

pub fn quantize_model(m: &CnnModel, f: QFormat, mode: QuantMode) -> Result<QCnnModel> {
    quantize_model_with(m, f, mode, DEFAULT_ACC_BITS)
}

pub fn quantize_model_with(m: &CnnModel, f: QFormat, mode: QuantMode, acc_bits: u32) -> Result<QCnnModel> {
    m.validate()?;
    f.validate()?;
    let mut sat = SaturationCounter::default();
    let mut layers = Vec::with_capacity(m.layers.len());
    for l in &m.layers {
        if l.activation == Activation::Sigmoid {
            return Err(config_err("the fixed-point engine supports ReLU6 and linear layers only"));
        }
        check_acc_bits(f, l.c_in * l.kernel_size + 1, acc_bits)?;
        let weights: Vec<i64> = l
            .weights
            .iter()
            .map(|&w| match mode {
                QuantMode::Uniform => quantize_counted(w, f, &mut sat),
                QuantMode::PowerOfTwo => pot_round(w, f, &mut sat),
            })
            .collect();
        let biases: Vec<i64> = l.biases.iter().map(|&b| quantize_counted(b, f, &mut sat)).collect();
        let max_err = |v: &[f64], r: &[i64]| {
            v.iter()
                .zip(r)
                .map(|(&a, &q)| (a - dequantize(q, f)).abs())
                .fold(0.0, f64::max)
        };
        layers.push(QLayer {
            c_in: l.c_in,
            c_out: l.c_out,
            kernel_size: l.kernel_size,
            activation: l.activation,
            max_weight_error: max_err(&l.weights, &weights),
            max_bias_error: max_err(&l.biases, &biases),
            weights,
            biases,
        });
    }
    Ok(QCnnModel {
        version: QUANT_FILE_VERSION,
        format: f,
        mode,
        acc_bits,
        recipe: m.recipe.clone(),
        layers,
        parameter_saturations: sat.count,
    })
}

impl QCnnModel {
    pub fn validate(&self) -> Result<()> {
        if self.version != QUANT_FILE_VERSION {
            return Err(config_err(format!(
                "unsupported quantized model version {} (expected {QUANT_FILE_VERSION})",
                self.version
            )));
        }
        self.format.validate()?;
        self.recipe.validate()?;
        let mut c = self.recipe.channels();
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel_size == 0 || l.c_out == 0 || l.c_in != c {
                return Err(shape_err(format!("quantized layer {i} is not channel-compatible")));
            }
            if l.weights.len() != l.c_out * l.c_in * l.kernel_size || l.biases.len() != l.c_out {
                return Err(shape_err(format!("quantized layer {i} has wrong parameter counts")));
            }
            if l.activation == Activation::Sigmoid {
                return Err(config_err("the fixed-point engine supports ReLU6 and linear layers only"));
            }
            if l.weights.iter().chain(&l.biases).any(|&r| !self.format.contains(r)) {
                return Err(config_err(format!("quantized layer {i} holds out-of-range raw values")));
            }
            if self.mode == QuantMode::PowerOfTwo && !l.weights.iter().all(|&w| is_pot_raw(w)) {
                return Err(config_err(format!("layer {i} has non power-of-two weights in PoT mode")));
            }
            check_acc_bits(self.format, l.c_in * l.kernel_size + 1, self.acc_bits)?;
            c = l.c_out;
        }
        match self.layers.last() {
            Some(l) if l.c_out == 2 && l.kernel_size == 1 && l.activation == Activation::Linear => Ok(()),
            _ => Err(shape_err("output layer must be a linear kernel-1 layer with 2 channels")),
        }
    }

    /// Float model carrying the quantized parameter values.
    pub fn dequantize(&self) -> Result<CnnModel> {
        let f = self.format;
        let layers = self
            .layers
            .iter()
            .map(|l| Conv1dLayer {
                c_in: l.c_in,
                c_out: l.c_out,
                kernel_size: l.kernel_size,
                activation: l.activation,
                weights: l.weights.iter().map(|&r| dequantize(r, f)).collect(),
                biases: l.biases.iter().map(|&r| dequantize(r, f)).collect(),
            })
            .collect();
        CnnModel::new(self.recipe.clone(), layers)
    }

    pub fn max_weight_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_weight_error).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Operation and saturation tallies of one fixed-point forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QStats {
    pub samples: u64,
    /// Saturations while quantizing the input features.
    pub input_saturations: u64,
    /// Requantization saturations per layer.
    pub layer_saturations: Vec<u64>,
    /// Multiplications executed (summed over all samples).
    pub multiplies: u64,
    /// Power-of-two products executed as shifts.
    pub shifts: u64,
}

impl QStats {
    pub fn total_saturations(&self) -> u64 {
        self.input_saturations + self.layer_saturations.iter().sum::<u64>()
    }

    pub fn multiplies_per_sample(&self) -> u64 {
        self.multiplies.checked_div(self.samples).unwrap_or(0)
    }

    pub fn shifts_per_sample(&self) -> u64 {
        self.shifts.checked_div(self.samples).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QForward {
    pub signal: ComplexSignal,
    pub raw_i: Vec<i64>,
    pub raw_q: Vec<i64>,
    pub stats: QStats,
}

fn round_sqrt(v: u64) -> u64 {
    let r = v.isqrt();
    if v - r * r > r {
        r + 1
    } else {
        r
    }
}

/// Integer feature stack: I and Q quantized, the envelope as the
/// nearest-integer square root of `I² + Q²` in raw units, higher envelope
/// powers by repeated requantized multiplication.
pub fn quantize_features(x: &[Complex64], recipe: &FeatureRecipe, f: QFormat, sat: &mut SaturationCounter) -> Vec<Vec<i64>> {
    let i: Vec<i64> = x.iter().map(|s| quantize_counted(s.re, f, sat)).collect();
    let q: Vec<i64> = x.iter().map(|s| quantize_counted(s.im, f, sat)).collect();
    let orders = recipe.sorted_orders();
    let mut rows = Vec::with_capacity(recipe.channels());
    if let Some(&max_order) = orders.last() {
        let env: Vec<i64> = i
            .iter()
            .zip(&q)
            .map(|(&a, &b)| {
                let (e, s) = f.saturate(round_sqrt((a * a + b * b) as u64) as i64);
                sat.record(s);
                e
            })
            .collect();
        let mut power = env.clone();
        for k in 1..=max_order {
            if k > 1 {
                power = power.iter().zip(&env).map(|(&p, &e)| requantize(p * e, f, sat)).collect();
            }
            for _ in orders.iter().filter(|&&o| o == k) {
                rows.push(power.clone());
            }
        }
    }
    if recipe.include_iq {
        rows.insert(0, q);
        rows.insert(0, i);
    }
    rows
}

struct OutRow {
    raw: Vec<i64>,
    saturations: u64,
    multiplies: u64,
    shifts: u64,
}

/// One output channel: bias plus a transposed FIR per input channel, summed
/// in the wide accumulator and requantized once per sample.
fn eval_channel(l: &QLayer, o: usize, input: &[Vec<i64>], f: QFormat, mode: QuantMode) -> OutRow {
    let n = input.first().map_or(0, Vec::len);
    let mut acc = vec![l.biases[o] << f.frac_bits; n];
    let (mut multiplies, mut shifts) = (0u64, 0u64);
    let k = l.kernel_size;
    let mut s = vec![0i64; k + 1];
    for (c, x) in input.iter().enumerate() {
        let w = l.w_slice(o, c);
        // Each tap is either a shift (PoT weight, exponent `j`) or a multiply.
        let taps: Vec<Option<(bool, u32)>> = w
            .iter()
            .map(|&wi| {
                (mode == QuantMode::PowerOfTwo && is_pot_raw(wi) && wi != 0)
                    .then(|| (wi < 0, wi.unsigned_abs().trailing_zeros()))
            })
            .collect();
        let skip: Vec<bool> = w.iter().map(|&wi| mode == QuantMode::PowerOfTwo && wi == 0).collect();
        let mul = |i: usize, xn: i64, multiplies: &mut u64, shifts: &mut u64| -> i64 {
            if skip[i] {
                0
            } else if let Some((neg, j)) = taps[i] {
                *shifts += 1;
                let p = xn << j;
                if neg {
                    -p
                } else {
                    p
                }
            } else {
                *multiplies += 1;
                w[i] * xn
            }
        };
        s.fill(0);
        for (a, &xn) in acc.iter_mut().zip(x) {
            *a += mul(0, xn, &mut multiplies, &mut shifts) + s[1];
            for i in 1..k {
                s[i] = mul(i, xn, &mut multiplies, &mut shifts) + s[i + 1];
            }
        }
    }
    let mut sat = SaturationCounter::default();
    let ceiling = (6i64 << f.frac_bits).min(f.max_raw());
    let raw = acc
        .into_iter()
        .map(|a| {
            let v = requantize(a, f, &mut sat);
            match l.activation {
                Activation::Relu6 => v.clamp(0, ceiling),
                _ => v,
            }
        })
        .collect();
    OutRow {
        raw,
        saturations: sat.count,
        multiplies,
        shifts,
    }
}

/// Fixed-point forward pass over pre-quantized feature rows.
pub fn q_cnn_forward_raw(qm: &QCnnModel, features: Vec<Vec<i64>>) -> Result<(Vec<Vec<i64>>, QStats)> {
    qm.validate()?;
    if features.len() != qm.recipe.channels() {
        return Err(shape_err(format!(
            "model expects {} feature rows, got {}",
            qm.recipe.channels(),
            features.len()
        )));
    }
    let n = features[0].len();
    if features.iter().any(|r| r.len() != n) {
        return Err(shape_err("feature rows differ in length"));
    }
    let mut stats = QStats {
        samples: n as u64,
        ..QStats::default()
    };
    let mut h = features;
    for l in &qm.layers {
        let rows = par::map_range(l.c_out, |o| eval_channel(l, o, &h, qm.format, qm.mode));
        let mut layer_sat = 0;
        h = rows
            .into_iter()
            .map(|r| {
                layer_sat += r.saturations;
                stats.multiplies += r.multiplies;
                stats.shifts += r.shifts;
                r.raw
            })
            .collect();
        stats.layer_saturations.push(layer_sat);
    }
    Ok((h, stats))
}

/// Fixed-point inference. The input is expected to satisfy `|I|, |Q| <= 1`;
/// anything that does not fit is saturated and counted.
pub fn q_cnn_forward(qm: &QCnnModel, x: &ComplexSignal) -> Result<QForward> {
    x.ensure_non_empty("quantized inference input")?;
    let mut sat = SaturationCounter::default();
    let features = quantize_features(&x.samples, &qm.recipe, qm.format, &mut sat);
    let (mut out, mut stats) = q_cnn_forward_raw(qm, features)?;
    stats.input_saturations = sat.count;
    let raw_q = out.pop().expect("two output rows");
    let raw_i = out.pop().expect("two output rows");
    let f = qm.format;
    let samples = raw_i
        .iter()
        .zip(&raw_q)
        .map(|(&a, &b)| Complex64::new(dequantize(a, f), dequantize(b, f)))
        .collect();
    Ok(QForward {
        signal: ComplexSignal::new(samples, x.sample_rate_hz)?,
        raw_i,
        raw_q,
        stats,
    })
}

/// Golden fixture: `index,i_raw,q_raw`.
pub fn write_golden_csv(path: &Path, raw_i: &[i64], raw_q: &[i64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "i_raw", "q_raw"])?;
    for (n, (a, b)) in raw_i.iter().zip(raw_q).enumerate() {
        w.write_record([n.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_golden_csv(path: &Path) -> Result<(Vec<i64>, Vec<i64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut i, mut q) = (Vec::new(), Vec::new());
    for rec in r.deserialize() {
        let (_, a, b): (usize, i64, i64) = rec?;
        i.push(a);
        q.push(b);
    }
    Ok((i, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{cnn_forward, InitScheme, Topology};
    use crate::quant::quantize;

    const Q: QFormat = QFormat {
        total_bits: 16,
        frac_bits: 10,
    };

    fn identity() -> CnnModel {
        let mut l = Conv1dLayer::zeros(2, 2, 1, Activation::Linear);
        l.set_weight(0, 0, 0, 1.0);
        l.set_weight(1, 1, 0, 1.0);
        CnnModel::new(FeatureRecipe::iq_only(), vec![l]).unwrap()
    }

    fn test_signal(n: usize) -> ComplexSignal {
        let s = (0..n)
            .map(|k| Complex64::from_polar(0.6 + 0.3 * (k as f64 * 0.37).sin(), k as f64 * 0.91))
            .collect();
        ComplexSignal::new(s, 1.0).unwrap()
    }

    #[test]
    fn pot_examples() {
        let mut sat = SaturationCounter::default();
        assert_eq!(pot_round(0.7, Q, &mut sat), 512);
        assert_eq!(pot_round(-3.0, Q, &mut sat), -4096);
        assert_eq!(pot_round(1e-4, Q, &mut sat), 0);
        assert_eq!(pot_round(0.0007, Q, &mut sat), 1);
        assert_eq!(sat.count, 0);
        assert_eq!(pot_round(1000.0, Q, &mut sat), 1 << 14);
        assert_eq!(sat.count, 1);
    }

    #[test]
    fn identity_round_trips_input() {
        let qm = quantize_model(&identity(), Q, QuantMode::Uniform).unwrap();
        let x = test_signal(50);
        let out = q_cnn_forward(&qm, &x).unwrap();
        for (s, (&i, &q)) in x.samples.iter().zip(out.raw_i.iter().zip(&out.raw_q)) {
            assert_eq!(i, quantize(s.re, Q));
            assert_eq!(q, quantize(s.im, Q));
        }
        assert_eq!(out.stats.total_saturations(), 0);
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut m = CnnModel::from_topology(FeatureRecipe::default(), &Topology::default(), InitScheme::Uniform, 1).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros);
        let qm = quantize_model(&m, Q, QuantMode::Uniform).unwrap();
        let out = q_cnn_forward(&qm, &test_signal(64)).unwrap();
        assert!(out.raw_i.iter().chain(&out.raw_q).all(|&r| r == 0));
        assert_eq!(out.stats.total_saturations(), 0);
    }

    #[test]
    fn exact_weights_have_zero_error() {
        let mut m = CnnModel::from_topology(FeatureRecipe::default(), &Topology::default(), InitScheme::Uniform, 3).unwrap();
        let p: Vec<f64> = m.flat_params().iter().map(|v| (v * 1024.0).round() / 1024.0).collect();
        m.set_flat_params(&p);
        let qm = quantize_model(&m, Q, QuantMode::Uniform).unwrap();
        assert_eq!(qm.max_weight_error(), 0.0);
        assert!(qm.layers.iter().all(|l| l.max_bias_error == 0.0));
        assert_eq!(qm.dequantize().unwrap(), m);
    }

    #[test]
    fn fixed_point_tracks_float() {
        let m = CnnModel::from_topology(FeatureRecipe::default(), &Topology::default(), InitScheme::Passthrough, 9).unwrap();
        let x = test_signal(400);
        let qm = quantize_model(&m, Q, QuantMode::Uniform).unwrap();
        let qo = q_cnn_forward(&qm, &x).unwrap();
        let fo = cnn_forward(&qm.dequantize().unwrap(), &x).unwrap();
        let nmse = crate::metrics::nmse_db(&fo.samples, &qo.signal.samples).unwrap();
        assert!(nmse < -40.0, "{nmse}");
    }

    #[test]
    fn envelope_features_are_rounded() {
        let x = [Complex64::new(3.0 / 1024.0, 4.0 / 1024.0), Complex64::new(0.75, 1.0)];
        let mut sat = SaturationCounter::default();
        let rows = quantize_features(&x, &FeatureRecipe { envelope_orders: vec![2, 1], include_iq: true }, Q, &mut sat);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2], vec![5, 1280]);
        assert_eq!(rows[3], vec![0, 1600]);
        assert_eq!(round_sqrt(2), 1);
        assert_eq!(round_sqrt(3), 2);
        assert_eq!(round_sqrt(6), 2);
        assert_eq!(round_sqrt(7), 3);
    }

    #[test]
    fn pot_weights_are_single_bits_and_run_as_shifts() {
        let m = CnnModel::from_topology(FeatureRecipe::default(), &Topology::default(), InitScheme::Uniform, 5).unwrap();
        let qm = quantize_model(&m, Q, QuantMode::PowerOfTwo).unwrap();
        for l in &qm.layers {
            assert!(l.weights.iter().all(|w| w.count_ones() <= 1 || (-w).count_ones() <= 1));
        }
        let out = q_cnn_forward(&qm, &test_signal(32)).unwrap();
        assert_eq!(out.stats.multiplies, 0);
        assert!(out.stats.shifts > 0);
        // A shift is exactly the product it replaces.
        let as_uniform = QCnnModel { mode: QuantMode::Uniform, ..qm.clone() };
        let ref_out = q_cnn_forward(&as_uniform, &test_signal(32)).unwrap();
        assert_eq!(out.raw_i, ref_out.raw_i);
        assert_eq!(out.raw_q, ref_out.raw_q);
    }

    #[test]
    fn sigmoid_is_rejected() {
        let topo = Topology { activation: Activation::Sigmoid, ..Topology::default() };
        let m = CnnModel::from_topology(FeatureRecipe::default(), &topo, InitScheme::Uniform, 1).unwrap();
        assert!(quantize_model(&m, Q, QuantMode::Uniform).is_err());
    }

    #[test]
    fn file_and_golden_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CnnModel::from_topology(FeatureRecipe::default(), &Topology::default(), InitScheme::Uniform, 2).unwrap();
        let qm = quantize_model(&m, Q, QuantMode::Uniform).unwrap();
        let p = dir.path().join("q.json");
        qm.save(&p).unwrap();
        assert_eq!(QCnnModel::load(&p).unwrap(), qm);
        let out = q_cnn_forward(&qm, &test_signal(20)).unwrap();
        let g = dir.path().join("g.csv");
        write_golden_csv(&g, &out.raw_i, &out.raw_q).unwrap();
        assert_eq!(read_golden_csv(&g).unwrap(), (out.raw_i, out.raw_q));
    }
}
