use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use dpd_core::metrics::{acpr, nmse_db, psd_welch, MetricsConfig};
use dpd_core::pa::{mem_poly_apply, PaDevice, PaModel};
use dpd_core::signal::{generate_ofdm, normalize_rms, OfdmConfig};
use dpd_core::ComplexSignal;

const FS: f64 = 307.2e6;

fn white_noise(seed: u64, n: usize, sigma: f64) -> ComplexSignal {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            Complex64::new(re, im) * (sigma / 2f64.sqrt())
        })
        .collect();
    ComplexSignal::new(s, FS).unwrap()
}

#[test]
fn ofdm_power_is_confined_to_the_occupied_band() {
    let cfg = OfdmConfig::default();
    let x = generate_ofdm(&cfg).unwrap();
    let psd = psd_welch(&x, 1024, 0.5).unwrap();
    let half = 1.1 * cfg.occupied_bandwidth_hz() / 2.0;
    let frac = psd.band_power(-half, half).unwrap() / psd.total_power();
    assert!(frac >= 0.98, "in-band fraction {frac}");
}

#[test]
fn ofdm_in_band_density_matches_flat_spectrum_oracle() {
    // Equal-power subcarriers spread the mean power evenly over the occupied
    // band, so the inner-band PSD sits at P / B.
    let cfg = OfdmConfig::default();
    let x = generate_ofdm(&cfg).unwrap();
    let psd = psd_welch(&x, 1024, 0.5).unwrap();
    let b = cfg.occupied_bandwidth_hz();
    let expected = x.rms().powi(2) / b;
    let inner: Vec<f64> = psd
        .freqs_hz
        .iter()
        .zip(&psd.psd)
        .filter(|(f, _)| f.abs() > 1e6 && f.abs() < 0.4 * b)
        .map(|(_, p)| *p)
        .collect();
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    assert!((mean / expected - 1.0).abs() < 0.05, "mean {mean:e}, expected {expected:e}");
    // Welch integration recovers the time-domain mean power.
    assert!((psd.total_power() / x.rms().powi(2) - 1.0).abs() < 0.01);
}

#[test]
fn white_noise_parseval() {
    let x = white_noise(11, 1 << 16, 0.7);
    let psd = psd_welch(&x, 1024, 0.5).unwrap();
    let mean = x.samples.iter().map(|s| s / x.len() as f64).sum::<Complex64>();
    let var = x.samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / x.len() as f64;
    let ratio = psd.total_power() / var;
    assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn flat_spectrum_acpr_is_zero_db() {
    let x = white_noise(5, 1 << 17, 1.0);
    let r = MetricsConfig::default().measure(&x).unwrap().1;
    assert!(r.acpr_left_db.abs() <= 0.2, "{r:?}");
    assert!(r.acpr_right_db.abs() <= 0.2, "{r:?}");
}

#[test]
fn brick_wall_signal_has_no_adjacent_power() {
    // A single tone at DC: all power inside the main channel.
    let x = ComplexSignal::new(vec![Complex64::new(1.0, 0.5); 8192], FS).unwrap();
    let psd = psd_welch(&x, 1024, 0.5).unwrap();
    let r = acpr(&psd, 50e6, 50e6, 50e6).unwrap();
    assert!(r.acpr_worst_db <= -100.0, "{r:?}");
}

#[test]
fn default_pa_acpr_within_calibration_window() {
    let x = normalize_rms(&generate_ofdm(&OfdmConfig::default()).unwrap(), 0.25).unwrap();
    let y = PaModel::default_calibrated().transmit(&x).unwrap();
    let r = MetricsConfig::default().measure(&y).unwrap().1;
    assert!((-36.0..=-30.0).contains(&r.acpr_worst_db), "{}", r.acpr_worst_db);
    assert!((r.acpr_left_db - r.acpr_right_db).abs() < 1.0, "{r:?}");
}

#[test]
fn small_signal_gain_of_default_pa() {
    // At low drive only the linear taps matter; against a correlated
    // (oversampled) stimulus the least-squares gain is sum_m a[1][m] rho(m),
    // with rho the normalized autocorrelation of the stimulus.
    let pa = PaModel::default_calibrated().without_noise();
    let x = normalize_rms(&generate_ofdm(&OfdmConfig::default()).unwrap(), 0.01).unwrap();
    let g = dpd_core::pa::estimate_linear_gain(&x, &pa.transmit(&x).unwrap()).unwrap();
    let s = &x.samples;
    let rho = |m: usize| (m..s.len()).map(|n| s[n].conj() * s[n - m]).sum::<Complex64>() / x.energy();
    let oracle: Complex64 = pa.coeffs[0].iter().enumerate().map(|(m, a)| a * rho(m)).sum();
    assert!((g - oracle).norm() / oracle.norm() < 0.02, "{g} vs {oracle}");

    let memoryless = PaModel::new(pa.coeffs.iter().map(|r| vec![r[0]]).collect(), 0.0, 0).unwrap();
    let g0 = dpd_core::pa::estimate_linear_gain(&x, &memoryless.transmit(&x).unwrap()).unwrap();
    assert!((g0 - pa.coeffs[0][0]).norm() / pa.coeffs[0][0].norm() < 0.02, "{g0}");
}

fn complex_vec(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

fn signal(v: Vec<Complex64>) -> ComplexSignal {
    ComplexSignal::new(v, FS).unwrap()
}

proptest! {
    #[test]
    fn nmse_scalar_perturbation_identity(v in complex_vec(1..=64), eps in 1e-6f64..10.0) {
        prop_assume!(v.iter().any(|c| c.norm() > 1e-3));
        let e: Vec<Complex64> = v.iter().map(|c| c * (1.0 + eps)).collect();
        let got = nmse_db(&v, &e).unwrap();
        prop_assert!((got - 20.0 * eps.log10()).abs() < 1e-10, "{got}");
    }

    #[test]
    fn normalize_rms_idempotent(v in complex_vec(1..=64), target in 0.01f64..4.0) {
        prop_assume!(v.iter().any(|c| c.norm() > 1e-3));
        let a = normalize_rms(&signal(v), target).unwrap();
        let b = normalize_rms(&a, target).unwrap();
        prop_assert!((a.rms() - target).abs() < 1e-12);
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn acpr_is_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let y = PaModel::default_calibrated().without_noise()
            .transmit(&white_noise(seed, 4096, 0.25)).unwrap();
        let m = MetricsConfig::default();
        let a = m.measure(&y).unwrap().1;
        let b = m.measure(&y.scale(Complex64::new(scale, 0.0))).unwrap().1;
        prop_assert!((a.acpr_worst_db - b.acpr_worst_db).abs() < 1e-9);
    }

    #[test]
    fn mem_poly_matches_triple_loop(
        x in complex_vec(1..=8),
        rows in 1usize..=3,
        m in 1usize..=3,
        c in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
    ) {
        let coeffs: Vec<Vec<Complex64>> = (0..rows)
            .map(|k| (0..m).map(|j| Complex64::new(c[k * 3 + j].0, c[k * 3 + j].1)).collect())
            .collect();
        let pa = PaModel::new(coeffs.clone(), 0.0, 0).unwrap();
        let got = mem_poly_apply(&pa, &signal(x.clone())).unwrap();
        for n in 0..x.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, row) in coeffs.iter().enumerate() {
                for (j, a) in row.iter().enumerate() {
                    if n >= j {
                        let s = x[n - j];
                        acc += a * s * s.norm().powi(2 * k as i32);
                    }
                }
            }
            prop_assert!((got.samples[n] - acc).norm() <= 1e-12);
        }
    }

    #[test]
    fn linear_pa_is_homogeneous(x in complex_vec(1..=32), c in (-2.0f64..2.0, -2.0f64..2.0)) {
        let c = Complex64::new(c.0, c.1);
        let pa = PaModel::new(vec![vec![Complex64::new(0.9, 0.1), Complex64::new(-0.1, 0.05)]], 0.0, 0).unwrap();
        let a = mem_poly_apply(&pa, &signal(x.clone())).unwrap();
        let b = mem_poly_apply(&pa, &signal(x).scale(c)).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((p * c - q).norm() <= 1e-12);
        }
    }

    #[test]
    fn mem_poly_is_time_invariant(x in complex_vec(8..=32), shift in 0usize..6) {
        let pa = PaModel::default_calibrated().without_noise();
        let mut shifted = vec![Complex64::new(0.0, 0.0); shift];
        shifted.extend(&x);
        let a = mem_poly_apply(&pa, &signal(x.clone())).unwrap();
        let b = mem_poly_apply(&pa, &signal(shifted)).unwrap();
        for n in (shift + pa.memory_depth)..x.len() {
            prop_assert!((a.samples[n - shift] - b.samples[n]).norm() <= 1e-12);
        }
    }
}

#[test]
fn ofdm_is_deterministic_per_seed() {
    let cfg = OfdmConfig::default();
    let a = generate_ofdm(&cfg).unwrap();
    assert_eq!(a, generate_ofdm(&cfg).unwrap());
    let b = generate_ofdm(&OfdmConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a, b);
}
