use super::fixed::{check_acc_bits, requantize, QTensor, SaturationCounter};
use crate::error::{config_err, shape_err, Result};

/// Transposed-form FIR on raw integers, returning the wide (unrounded)
/// accumulator per output sample.
///
/// The delay line holds partial sums rather than inputs:
/// `s_i(n) = w_i x(n) + s_{i+1}(n-1)` with `s_K = 0`, and
/// `y(n) = w_0 x(n) + s_1(n-1)`. Zero history.
pub fn transposed_fir_wide(w: &[i64], x: &[i64]) -> Vec<i64> {
    let k = w.len();
    let mut s = vec![0i64; k + 1];
    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        y.push(w[0] * xn + s[1]);
        for i in 1..k {
            s[i] = w[i] * xn + s[i + 1];
        }
    }
    y
}

/// Direct-form reference: `y(n) = sum_k w_k x(n-k)`, zero history.
pub fn direct_fir_wide(w: &[i64], x: &[i64]) -> Vec<i64> {
    (0..x.len())
        .map(|n| (0..w.len().min(n + 1)).map(|k| w[k] * x[n - k]).sum())
        .collect()
}

fn check(w: &QTensor, x: &QTensor, acc_bits: u32) -> Result<()> {
    if w.is_empty() {
        return Err(shape_err("FIR needs at least one tap"));
    }
    if w.format != x.format {
        return Err(config_err("FIR operands must share a format"));
    }
    check_acc_bits(w.format, w.len(), acc_bits)
}

fn finish(acc: Vec<i64>, x: &QTensor, sat: &mut SaturationCounter) -> QTensor {
    QTensor {
        raw: acc.into_iter().map(|a| requantize(a, x.format, sat)).collect(),
        format: x.format,
        shape: vec![x.len()],
    }
}

/// Transposed-form FIR with a single requantization per output sample.
pub fn transposed_fir(w: &QTensor, x: &QTensor, acc_bits: u32, sat: &mut SaturationCounter) -> Result<QTensor> {
    check(w, x, acc_bits)?;
    Ok(finish(transposed_fir_wide(&w.raw, &x.raw), x, sat))
}

/// Direct-form FIR under the same accumulator and rounding policy.
pub fn direct_fir(w: &QTensor, x: &QTensor, acc_bits: u32, sat: &mut SaturationCounter) -> Result<QTensor> {
    check(w, x, acc_bits)?;
    Ok(finish(direct_fir_wide(&w.raw, &x.raw), x, sat))
}
