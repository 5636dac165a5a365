use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use dpd_core::benchmark::{run_benchmark, BenchmarkMatrix, DatasetSpec};
use dpd_core::hw::{estimate_model, estimate_quantized, ResourceEstimate};
use dpd_core::ila::{evaluate_chain_on, ila_train, ChainReport, Dpd, IlaHistory, QuantSettings};
use dpd_core::metrics::AcprReport;
use dpd_core::neural::{CnnModel, ModelFile, TrainBudget};
use dpd_core::pa::{calibrate, PaModel};
use dpd_core::quant::{quantize_model, QCnnModel, QStats, QuantMode};
use dpd_core::signal::{generate_ofdm, normalize_rms};

use crate::config::{self, CliError, ConfigContext, ExperimentConfig, PaSource};

const MANIFEST_VERSION: u32 = 1;

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Collects artifacts, writes them and remembers their hashes.
struct Artifacts<'a> {
    dir: &'a Path,
    hashes: BTreeMap<String, String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))
            .runtime_err()?;
        Ok(Self {
            dir,
            hashes: BTreeMap::new(),
        })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .with_context(|| format!("cannot write {}", path.display()))
            .runtime_err()?;
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).runtime_err()?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Lets a library writer produce the file, then hashes what it wrote.
    fn write_with(&mut self, name: &str, f: impl FnOnce(&Path) -> dpd_core::Result<()>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        f(&path).runtime_err()?;
        let bytes = fs::read(&path).runtime_err()?;
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig, pa_noise_seed: Option<u64>) -> Result<(), CliError> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seeds: Seeds {
                seed: cfg.seed,
                signal: cfg.signal.seed,
                ila: cfg.ila.seed,
                pa_noise: pa_noise_seed,
            },
            artifacts: std::mem::take(&mut self.hashes),
        };
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Serialize)]
struct Seeds {
    seed: u64,
    signal: u64,
    ila: u64,
    pa_noise: Option<u64>,
}

#[derive(Serialize)]
struct Manifest {
    manifest_version: u32,
    command: String,
    tool_version: String,
    config: ExperimentConfig,
    seeds: Seeds,
    /// SHA-256 of every artifact written by the run.
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct ChainSummary {
    nmse_db: f64,
    gain: [f64; 2],
    acpr: AcprReport,
    peak_in: f64,
    peak_dpd_out: f64,
    saturations: Option<QStats>,
}

impl From<&ChainReport> for ChainSummary {
    fn from(r: &ChainReport) -> Self {
        Self {
            nmse_db: r.nmse_db,
            gain: r.gain,
            acpr: r.acpr,
            peak_in: r.peak_in,
            peak_dpd_out: r.peak_dpd_out,
            saturations: r.saturations.clone(),
        }
    }
}

#[derive(Serialize)]
struct QuantSummary {
    settings: QuantSettings,
    max_weight_error: f64,
    parameter_saturations: u64,
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    samples: usize,
    evaluation_samples: usize,
    iterations_completed: usize,
    pa_calibrated_acpr_db: Option<f64>,
    no_dpd: ChainSummary,
    with_dpd: ChainSummary,
    with_quantized_dpd: ChainSummary,
    /// No-DPD worst-side ACPR minus float-DPD worst-side ACPR.
    acpr_improvement_db: f64,
    quantized_acpr_improvement_db: f64,
    /// Quantized-DPD ACPR minus float-DPD ACPR (positive = degradation).
    quantization_acpr_penalty_db: f64,
    quantization: QuantSummary,
}

pub fn run(config_path: &Path, seed: Option<u64>, out: &Path, quiet: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let (cfg, base) = config::load(config_path, seed)?;
    let pa_file = config::load_pa_file(&cfg.pa, &base)?;
    let mut art = Artifacts::new(out)?;

    let x = generate_ofdm(&cfg.signal)
        .and_then(|x| normalize_rms(&x, cfg.ila.drive_rms))
        .runtime_err()?;
    let (pa, calibrated) = match (pa_file, &cfg.pa) {
        (Some(pa), _) => (pa, None),
        (None, PaSource::Calibrate { target }) => {
            progress(quiet, "calibrating PA surrogate");
            let c = calibrate(&x, target, &cfg.metrics).runtime_err()?;
            (c.model, Some(c.acpr_db))
        }
        (None, _) => unreachable!("only calibration defers the PA"),
    };
    let init = cfg.model.build(cfg.seed).runtime_err()?;
    progress(
        quiet,
        format!(
            "ILA: {} samples, {} iterations x {} epochs",
            x.len(),
            cfg.ila.iterations,
            cfg.ila.epochs_per_iteration
        ),
    );
    let (dpd, history) = match ila_train(&cfg.ila, &pa, &x, &init, &cfg.metrics) {
        Ok(r) => r,
        Err(e) => {
            art.write_json("history.json", &e.history)?;
            art.finish("run", &cfg, Some(pa.noise_seed))?;
            return Err(CliError::Runtime(anyhow::Error::new(e)));
        }
    };
    log_history(quiet, &history);

    let (_, val) = cfg.ila.split(x.len());
    let eval = |d: Option<&Dpd>| evaluate_chain_on(d, &pa, &x, &cfg.metrics, val.clone()).runtime_err();
    let qm = quantize_model(&dpd, cfg.quant.format, cfg.quant.mode).runtime_err()?;
    let base_report = eval(None)?;
    let float_report = eval(Some(&Dpd::Float(dpd.clone())))?;
    let quant_report = eval(Some(&Dpd::Quantized(qm.clone())))?;

    let worst = |r: &ChainReport| r.acpr.acpr_worst_db;
    let report = RunReport {
        seed: cfg.seed,
        samples: x.len(),
        evaluation_samples: val.len(),
        iterations_completed: history.records.len(),
        pa_calibrated_acpr_db: calibrated,
        no_dpd: (&base_report).into(),
        with_dpd: (&float_report).into(),
        with_quantized_dpd: (&quant_report).into(),
        acpr_improvement_db: worst(&base_report) - worst(&float_report),
        quantized_acpr_improvement_db: worst(&base_report) - worst(&quant_report),
        quantization_acpr_penalty_db: worst(&quant_report) - worst(&float_report),
        quantization: QuantSummary {
            settings: cfg.quant,
            max_weight_error: qm.max_weight_error(),
            parameter_saturations: qm.parameter_saturations,
        },
    };
    progress(
        quiet,
        format!(
            "ACPR {:.2} dB -> {:.2} dB float ({:.2} dB quantized); improvement {:.2} dB",
            worst(&base_report),
            worst(&float_report),
            worst(&quant_report),
            report.acpr_improvement_db
        ),
    );

    art.write_json("report.json", &report)?;
    art.write_with("psd_no_dpd.csv", |p| base_report.psd.write_csv(p))?;
    art.write_with("psd_with_dpd.csv", |p| float_report.psd.write_csv(p))?;
    art.write_with("psd_with_quantized_dpd.csv", |p| quant_report.psd.write_csv(p))?;
    art.write_json("history.json", &history)?;
    art.write_with("dpd_model.json", |p| dpd.save(p))?;
    art.write_with("dpd_model_quantized.json", |p| qm.save(p))?;
    art.finish("run", &cfg, Some(pa.noise_seed))?;
    progress(quiet, format!("done in {:.1} s -> {}", started.elapsed().as_secs_f64(), out.display()));
    Ok(())
}

fn log_history(quiet: bool, h: &IlaHistory) {
    for r in &h.records {
        progress(
            quiet,
            format!(
                "  iteration {}: PoD validation NMSE {:.2} dB, ACPR {:.2} -> {:.2} dB",
                r.iteration, r.validation_nmse_db, r.acpr_before_db, r.acpr_after_db
            ),
        );
    }
}

pub fn bench(config_path: &Path, seed: Option<u64>, out: &Path, quiet: bool) -> Result<(), CliError> {
    let (cfg, base) = config::load(config_path, seed)?;
    let pa_file = config::load_pa_file(&cfg.pa, &base)?;
    let matrix = cfg.benchmark.clone().unwrap_or_else(|| {
        let mut m = BenchmarkMatrix {
            dataset: DatasetSpec {
                ofdm: cfg.signal.clone(),
                drive_rms: cfg.ila.drive_rms,
                validation_fraction: cfg.ila.validation_fraction,
            },
            ..BenchmarkMatrix::default()
        };
        m.training.seed = cfg.seed;
        m
    });
    let mut art = Artifacts::new(out)?;
    let pa: PaModel = match (pa_file, &cfg.pa) {
        (Some(pa), _) => pa,
        (None, PaSource::Calibrate { target }) => {
            let x = generate_ofdm(&matrix.dataset.ofdm).runtime_err()?;
            calibrate(&x, target, &cfg.metrics).runtime_err()?.model
        }
        (None, _) => unreachable!("only calibration defers the PA"),
    };
    let steps = match matrix.training.budget {
        TrainBudget::Steps(s) => format!("{s} steps"),
        TrainBudget::Epochs(e) => format!("{e} epochs"),
    };
    progress(quiet, format!("benchmark: {} entries, {steps} each", matrix.entries.len()));
    let report = run_benchmark(&matrix, &pa).runtime_err()?;
    for r in &report.rows {
        match (r.nmse_db, &r.error) {
            (Some(v), _) => progress(quiet, format!("  {:<18} {:<22} {:>6} params  {v:8.2} dB", r.family, r.topology, r.params)),
            (None, Some(e)) => progress(quiet, format!("  {:<18} {:<22} failed: {e}", r.family, r.topology)),
            _ => {}
        }
    }
    art.write_bytes("benchmark.csv", report.to_csv().as_bytes())?;
    art.write_json("benchmark.json", &report)?;
    art.finish("bench", &cfg, Some(pa.noise_seed))?;
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EstimateOutput {
    Float {
        uniform: ResourceEstimate,
        power_of_two: ResourceEstimate,
    },
    Quantized {
        estimate: ResourceEstimate,
    },
}

pub fn estimate(model_path: &Path, out: &Path, quiet: bool) -> Result<(), CliError> {
    let text = fs::read_to_string(model_path)
        .with_context(|| format!("cannot read {}", model_path.display()))
        .config_err()?;
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", model_path.display()))
        .config_err()?;
    let output = if v.get("format").is_some() {
        let qm = QCnnModel::load(model_path).config_err()?;
        EstimateOutput::Quantized {
            estimate: estimate_quantized(&qm),
        }
    } else {
        let m: CnnModel = serde_json::from_str::<ModelFile>(&text)
            .with_context(|| format!("invalid model file {}", model_path.display()))
            .config_err()?
            .into_model()
            .config_err()?;
        EstimateOutput::Float {
            uniform: estimate_model(&m, QuantMode::Uniform),
            power_of_two: estimate_model(&m, QuantMode::PowerOfTwo),
        }
    };
    let json = serde_json::to_string_pretty(&output).runtime_err()?;
    println!("{json}");
    let mut art = Artifacts::new(out)?;
    art.write_bytes("estimate.json", format!("{json}\n").as_bytes())?;
    progress(quiet, format!("wrote {}", out.join("estimate.json").display()));
    Ok(())
}
