//! Regenerates the committed fixtures.
//!
//!   cargo run --release --example regen_fixtures -- pa    # calibrated PA
//!   cargo run --release --example regen_fixtures -- dpd   # trained Q(16,10) DPD + golden output
//!
//! Run `pa` first: the `dpd` stage trains against the bundled PA.

use std::path::PathBuf;
use std::time::Instant;

use dpd_core::ila::ila_train;
use dpd_core::metrics::MetricsConfig;
use dpd_core::pa::{calibrate, CalibrationTarget};
use dpd_core::quant::{q_cnn_forward, quantize_model, write_golden_csv, QFormat, QuantMode};
use dpd_core::scenario::Scenario;
use dpd_core::signal::{generate_ofdm, OfdmConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stage = std::env::args().nth(1).unwrap_or_default();
    match stage.as_str() {
        "pa" => {
            let x = generate_ofdm(&OfdmConfig::default())?;
            let cal = calibrate(&x, &CalibrationTarget::default(), &MetricsConfig::default())?;
            println!(
                "scale {:.6}, ACPR {:.3} dB after {} bisection steps",
                cal.scale, cal.acpr_db, cal.iterations
            );
            cal.model.save(&fixtures().join("default_pa.json"))?;
        }
        "dpd" => {
            let sc = Scenario::default();
            let x = sc.stimulus()?;
            let t = Instant::now();
            let (dpd, history) = ila_train(&sc.ila, &sc.pa, &x, &sc.init_model()?, &sc.metrics)?;
            for r in &history.records {
                println!(
                    "iteration {}: PoD val NMSE {:.2} dB, ACPR {:.2} -> {:.2} dB, quantized {:?}",
                    r.iteration, r.validation_nmse_db, r.acpr_before_db, r.acpr_after_db, r.quantized
                );
            }
            println!("trained in {:.1} s", t.elapsed().as_secs_f64());
            let qm = quantize_model(&dpd, QFormat::default(), QuantMode::Uniform)?;
            qm.save(&fixtures().join("default_dpd_q16_10.json"))?;
            let (_, val) = sc.ila.split(x.len());
            let out = q_cnn_forward(&qm, &x.slice(val))?;
            write_golden_csv(&fixtures().join("golden_q16_10.csv"), &out.raw_i, &out.raw_q)?;
        }
        _ => return Err("usage: regen_fixtures (pa | dpd)".into()),
    }
    Ok(())
}
