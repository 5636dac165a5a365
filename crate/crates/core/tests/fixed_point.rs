use num_bigint::BigInt;
use num_complex::Complex64;
use proptest::prelude::*;

use dpd_core::neural::{Activation, CnnModel, Conv1dLayer, FeatureRecipe, InitScheme, Topology};
use dpd_core::quant::{
    dequantize, direct_fir, q_cnn_forward, q_mac_sequence, quantize, quantize_model, requantize, transposed_fir,
    QFormat, QTensor, QuantMode, SaturationCounter, DEFAULT_ACC_BITS,
};
use dpd_core::ComplexSignal;

const Q16_10: QFormat = QFormat {
    total_bits: 16,
    frac_bits: 10,
};

fn raw16() -> impl Strategy<Value = i64> {
    -32768i64..=32767
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transposed_equals_direct(
        w in prop::collection::vec(raw16(), 1..=16),
        x in prop::collection::vec(raw16(), 1..=64),
    ) {
        let wt = QTensor::vector(w, Q16_10).unwrap();
        let xt = QTensor::vector(x, Q16_10).unwrap();
        let (mut s1, mut s2) = (SaturationCounter::default(), SaturationCounter::default());
        let a = transposed_fir(&wt, &xt, DEFAULT_ACC_BITS, &mut s1).unwrap();
        let b = direct_fir(&wt, &xt, DEFAULT_ACC_BITS, &mut s2).unwrap();
        prop_assert_eq!(a.raw, b.raw);
        prop_assert_eq!(s1.count, s2.count);
    }
}

proptest! {
    #[test]
    fn quantize_dequantize_idempotent(total in 2u32..=24, frac_seed in 0u32..32, r in any::<i64>()) {
        let f = QFormat::new(total, frac_seed % total).unwrap();
        let raw = f.min_raw() + r.rem_euclid(f.max_raw() - f.min_raw() + 1);
        prop_assert_eq!(quantize(dequantize(raw, f), f), raw);
    }

    #[test]
    fn q_mac_matches_big_integer_oracle(
        w in prop::collection::vec(raw16(), 20),
        x in prop::collection::vec(raw16(), 20),
    ) {
        let oracle: BigInt = w.iter().zip(&x).map(|(&a, &b)| BigInt::from(a) * BigInt::from(b)).sum();
        let wt = QTensor::vector(w, Q16_10).unwrap();
        let xt = QTensor::vector(x, Q16_10).unwrap();
        let acc = q_mac_sequence(&wt, &xt, DEFAULT_ACC_BITS).unwrap();
        prop_assert_eq!(BigInt::from(acc), oracle.clone());
        // One rounding: floor((acc + 2^9) / 2^10) except exact ties go to even.
        let mut sat = SaturationCounter::default();
        let q = requantize(acc, Q16_10, &mut sat);
        let exact = acc as f64 / 1024.0;
        let expected = exact.round_ties_even().clamp(-32768.0, 32767.0) as i64;
        prop_assert_eq!(q, expected);
    }

    #[test]
    fn pot_weights_have_one_set_bit(seed in any::<u64>(), scale in 0.01f64..4.0) {
        let mut m = CnnModel::from_topology(
            FeatureRecipe::default(),
            &Topology { hidden_layers: 1, hidden_channels: 6, kernel_size: 3, activation: Activation::Relu6 },
            InitScheme::Uniform,
            seed,
        ).unwrap();
        let p: Vec<f64> = m.flat_params().iter().map(|v| v * scale).collect();
        m.set_flat_params(&p);
        let qm = quantize_model(&m, Q16_10, QuantMode::PowerOfTwo).unwrap();
        for l in &qm.layers {
            for &w in &l.weights {
                prop_assert!(w.unsigned_abs().count_ones() <= 1, "raw {w}");
            }
        }
    }

    /// Holds for single-layer models on inputs within |I|, |Q| <= 1; see
    /// the counterexamples below for what breaks it outside that regime.
    #[test]
    fn doubling_inputs_never_reduces_saturations(
        w in prop::collection::vec(-31.0f64..31.0, 4),
        b in prop::collection::vec(-31.0f64..31.0, 2),
        xs in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..64),
    ) {
        let mut layer = Conv1dLayer::zeros(2, 2, 1, Activation::Linear);
        layer.weights = w;
        layer.biases = b;
        let m = CnnModel::new(FeatureRecipe::iq_only(), vec![layer]).unwrap();
        let qm = quantize_model(&m, Q16_10, QuantMode::Uniform).unwrap();
        let x = signal(xs.iter().map(|&(i, q)| Complex64::new(i, q)).collect());
        let once = q_cnn_forward(&qm, &x).unwrap().stats.total_saturations();
        let twice = q_cnn_forward(&qm, &x.scale(Complex64::new(2.0, 0.0))).unwrap().stats.total_saturations();
        prop_assert!(twice >= once, "{once} -> {twice}");
    }
}

fn signal(samples: Vec<Complex64>) -> ComplexSignal {
    ComplexSignal::new(samples, 1.0).unwrap()
}

fn saturations(m: &CnnModel, x: &ComplexSignal) -> u64 {
    let qm = quantize_model(m, Q16_10, QuantMode::Uniform).unwrap();
    q_cnn_forward(&qm, x).unwrap().stats.total_saturations()
}

#[test]
fn clipped_inputs_can_undo_output_saturation() {
    // out = 2 I - 2 Q: 62 - 20 saturates both outputs; doubled, I clips to
    // ~32 and the outputs fall back to ~24.
    let mut layer = Conv1dLayer::zeros(2, 2, 1, Activation::Linear);
    layer.weights = vec![2.0, -2.0, 2.0, -2.0];
    let m = CnnModel::new(FeatureRecipe::iq_only(), vec![layer]).unwrap();
    let x = signal(vec![Complex64::new(31.0, 10.0)]);
    assert_eq!(saturations(&m, &x), 2);
    assert_eq!(saturations(&m, &x.scale(Complex64::new(2.0, 0.0))), 1);
}

#[test]
fn relu6_hidden_layer_can_undo_output_saturation() {
    // Hidden pre-activation 5 - I falls when I doubles, and the output 10 h
    // drops out of saturation with it.
    let mut hidden = Conv1dLayer::zeros(2, 1, 1, Activation::Relu6);
    hidden.weights = vec![-1.0, 0.0];
    hidden.biases = vec![5.0];
    let mut out = Conv1dLayer::zeros(1, 2, 1, Activation::Linear);
    out.weights = vec![10.0, 0.0];
    let m = CnnModel::new(FeatureRecipe::iq_only(), vec![hidden, out]).unwrap();
    let x = signal(vec![Complex64::new(1.0, 0.0)]);
    assert_eq!(saturations(&m, &x), 1);
    assert_eq!(saturations(&m, &x.scale(Complex64::new(2.0, 0.0))), 0);
}
