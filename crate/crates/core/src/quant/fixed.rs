use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

/// Signed two's-complement fixed-point format with `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
}

impl Default for QFormat {
    fn default() -> Self {
        Self {
            total_bits: 16,
            frac_bits: 10,
        }
    }
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        let f = Self { total_bits, frac_bits };
        f.validate()?;
        Ok(f)
    }

    /// Formats up to 31 bits keep every product inside an `i64`.
    pub fn validate(&self) -> Result<()> {
        if self.total_bits < 2 || self.total_bits > 31 {
            return Err(config_err(format!(
                "total_bits must be in 2..=31, got {}",
                self.total_bits
            )));
        }
        if self.frac_bits >= self.total_bits {
            return Err(config_err(format!(
                "frac_bits ({}) must be below total_bits ({})",
                self.frac_bits, self.total_bits
            )));
        }
        Ok(())
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Value of one LSB.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    pub fn contains(&self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    /// Clamps `raw` into range; returns whether it had to.
    pub fn saturate(&self, raw: i64) -> (i64, bool) {
        let c = raw.clamp(self.min_raw(), self.max_raw());
        (c, c != raw)
    }
}

/// Tally of saturation events. Saturation is defined behaviour, never silent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationCounter {
    pub count: u64,
}

impl SaturationCounter {
    pub fn record(&mut self, saturated: bool) {
        self.count += u64::from(saturated);
    }
}

/// Round-half-even of `v * 2^frac_bits`, saturated. NaN maps to 0 and
/// counts as a saturation.
pub fn quantize_counted(v: f64, f: QFormat, sat: &mut SaturationCounter) -> i64 {
    if v.is_nan() {
        sat.record(true);
        return 0;
    }
    let scaled = (v * (f.frac_bits as f64).exp2()).round_ties_even();
    if scaled > f.max_raw() as f64 {
        sat.record(true);
        f.max_raw()
    } else if scaled < f.min_raw() as f64 {
        sat.record(true);
        f.min_raw()
    } else {
        scaled as i64
    }
}

pub fn quantize(v: f64, f: QFormat) -> i64 {
    quantize_counted(v, f, &mut SaturationCounter::default())
}

pub fn dequantize(raw: i64, f: QFormat) -> f64 {
    raw as f64 * f.lsb()
}

/// Divides by `2^shift` with round-half-even (exact integer arithmetic).
pub fn shift_round_even(acc: i64, shift: u32) -> i64 {
    if shift == 0 {
        return acc;
    }
    let q = acc >> shift;
    let r = acc - (q << shift);
    let half = 1i64 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Brings a wide accumulator holding products of two `f`-format values
/// (scale `2^(2·frac_bits)`) back to `f`: one rounding, one saturation.
pub fn requantize(acc: i64, f: QFormat, sat: &mut SaturationCounter) -> i64 {
    let (v, s) = f.saturate(shift_round_even(acc, f.frac_bits));
    sat.record(s);
    v
}

/// Raw integers in a common format plus a shape descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTensor {
    pub raw: Vec<i64>,
    pub format: QFormat,
    pub shape: Vec<usize>,
}

impl QTensor {
    pub fn new(raw: Vec<i64>, format: QFormat, shape: Vec<usize>) -> Result<Self> {
        let t = Self { raw, format, shape };
        t.validate()?;
        Ok(t)
    }

    /// One-dimensional tensor.
    pub fn vector(raw: Vec<i64>, format: QFormat) -> Result<Self> {
        let n = raw.len();
        Self::new(raw, format, vec![n])
    }

    pub fn from_f64(values: &[f64], format: QFormat, sat: &mut SaturationCounter) -> Self {
        Self {
            raw: values.iter().map(|&v| quantize_counted(v, format, sat)).collect(),
            format,
            shape: vec![values.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        if self.shape.iter().product::<usize>() != self.raw.len() {
            return Err(shape_err(format!(
                "shape {:?} does not match {} raw values",
                self.shape,
                self.raw.len()
            )));
        }
        if let Some(r) = self.raw.iter().find(|&&r| !self.format.contains(r)) {
            return Err(config_err(format!(
                "raw value {r} outside Q({}, {})",
                self.format.total_bits, self.format.frac_bits
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| dequantize(r, self.format)).collect()
    }
}

/// Default accumulator width, mirroring a 48-bit DSP-block accumulator.
pub const DEFAULT_ACC_BITS: u32 = 48;

/// Smallest accumulator that holds any sum of `terms` full-precision products.
pub fn required_acc_bits(f: QFormat, terms: usize) -> u32 {
    2 * f.total_bits + terms.max(1).next_power_of_two().trailing_zeros()
}

pub fn check_acc_bits(f: QFormat, terms: usize, acc_bits: u32) -> Result<()> {
    let need = required_acc_bits(f, terms);
    if acc_bits < need || acc_bits > 64 {
        return Err(config_err(format!(
            "accumulator of {acc_bits} bits cannot hold {terms} products of Q({}, {}) (needs {need}..=64)",
            f.total_bits, f.frac_bits
        )));
    }
    Ok(())
}

/// Exact sum of full-precision products; no intermediate rounding. The
/// caller requantizes once with [`requantize`].
pub fn q_mac_sequence(weights: &QTensor, inputs: &QTensor, acc_bits: u32) -> Result<i64> {
    if weights.len() != inputs.len() {
        return Err(shape_err(format!(
            "MAC over {} weights and {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    if weights.format != inputs.format {
        return Err(config_err("MAC operands must share a format"));
    }
    check_acc_bits(weights.format, weights.len(), acc_bits)?;
    Ok(weights.raw.iter().zip(&inputs.raw).map(|(w, x)| w * x).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: QFormat = QFormat {
        total_bits: 16,
        frac_bits: 10,
    };

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.0, Q), 1024);
        let mut sat = SaturationCounter::default();
        assert_eq!(quantize_counted(100.0, Q, &mut sat), 32767);
        assert_eq!(sat.count, 1);
        assert_eq!(dequantize(32767, Q), 31.9990234375);
        assert_eq!(quantize(0.00048828125, Q), 0);
        assert_eq!(quantize(3.0 * 0.00048828125, Q), 2);
        assert_eq!(quantize(-0.00048828125, Q), 0);
        assert_eq!(quantize(-100.0, Q), -32768);
    }

    #[test]
    fn format_validation() {
        assert!(QFormat::new(16, 16).is_err());
        assert!(QFormat::new(40, 10).is_err());
        assert!(QFormat::new(16, 0).is_ok());
    }

    #[test]
    fn shift_rounding_is_half_even() {
        assert_eq!(shift_round_even(5, 1), 2);
        assert_eq!(shift_round_even(7, 1), 4);
        assert_eq!(shift_round_even(-5, 1), -2);
        assert_eq!(shift_round_even(-7, 1), -4);
        assert_eq!(shift_round_even(6, 2), 2);
        assert_eq!(shift_round_even(-6, 2), -2);
        assert_eq!(shift_round_even(9, 0), 9);
    }

    #[test]
    fn mac_examples() {
        let w = QTensor::vector(vec![1024], Q).unwrap();
        let x = QTensor::vector(vec![1024], Q).unwrap();
        let acc = q_mac_sequence(&w, &x, DEFAULT_ACC_BITS).unwrap();
        assert_eq!(acc, 1_048_576);
        assert_eq!(requantize(acc, Q, &mut SaturationCounter::default()), 1024);
        let z = QTensor::vector(vec![0], Q).unwrap();
        let any = QTensor::vector(vec![-31234], Q).unwrap();
        assert_eq!(q_mac_sequence(&z, &any, DEFAULT_ACC_BITS).unwrap(), 0);
    }

    #[test]
    fn mac_rejects_narrow_accumulator() {
        let w = QTensor::vector(vec![1; 20], Q).unwrap();
        assert!(q_mac_sequence(&w, &w, 36).is_err());
        assert!(q_mac_sequence(&w, &w, 37).is_ok());
        let short = QTensor::vector(vec![1; 19], Q).unwrap();
        assert!(q_mac_sequence(&w, &short, 48).is_err());
    }

    #[test]
    fn tensor_range_checked() {
        assert!(QTensor::vector(vec![40000], Q).is_err());
        assert!(QTensor::new(vec![1, 2, 3], Q, vec![2, 2]).is_err());
    }

    #[test]
    fn exhaustive_round_trip() {
        for r in Q.min_raw()..=Q.max_raw() {
            assert_eq!(quantize(dequantize(r, Q), Q), r);
        }
    }
}
