//! PA behavioural-modelling comparison: memory polynomial vs. time-delay MLP
//! vs. 1D-CNN, all fitted to the same input/output record.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::metrics::nmse_db;
use crate::neural::{cnn_forward, fit, CnnModel, FeatureRecipe, InitScheme, MlpModel, Topology, TrainBudget, TrainConfig};
use crate::pa::{mem_poly_apply, odd_basis, PaDevice, PaModel};
use crate::par;
use crate::rng;
use crate::signal::{generate_ofdm, normalize_rms, ComplexSignal, OfdmConfig};

/// Condition estimate above which the regressor is treated as rank-deficient.
pub const MAX_CONDITION: f64 = 1e12;

/// Least-squares memory-polynomial fit of `y` from `x` (noise-free model).
///
/// Columns are equilibrated to unit norm, then solved by Householder QR; the
/// condition estimate is that of the equilibrated regressor.
pub fn fit_memory_polynomial(x: &ComplexSignal, y: &ComplexSignal, max_order: usize, memory_depth: usize) -> Result<PaModel> {
    if max_order == 0 || max_order % 2 == 0 || memory_depth == 0 {
        return Err(config_err("max_order must be odd and memory_depth positive"));
    }
    if x.len() != y.len() {
        return Err(shape_err(format!("fit input has {} samples, output {}", x.len(), y.len())));
    }
    let rows = (max_order + 1) / 2;
    let cols = rows * memory_depth;
    let n = x.len();
    if n <= cols {
        return Err(shape_err(format!("{n} samples cannot determine {cols} coefficients")));
    }
    if x.energy() == 0.0 {
        return Err(Error::DegenerateInput("fit input has zero energy".into()));
    }
    let basis = odd_basis(&x.samples, rows);
    let zero = Complex64::new(0.0, 0.0);
    let mut a = DMatrix::<Complex64>::zeros(n, cols);
    for (k, b) in basis.iter().enumerate() {
        for m in 0..memory_depth {
            let mut col = a.column_mut(k * memory_depth + m);
            for i in 0..n {
                col[i] = if i >= m { b[i - m] } else { zero };
            }
        }
    }
    let mut scales = Vec::with_capacity(cols);
    for j in 0..cols {
        let norm = a.column(j).norm();
        if norm == 0.0 {
            return Err(Error::IllConditioned { condition: f64::INFINITY });
        }
        a.column_mut(j).unscale_mut(norm);
        scales.push(norm);
    }
    let qr = a.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let mut b = DVector::from_column_slice(&y.samples);
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, cols).into_owned();
    let sol = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::IllConditioned { condition })?;
    let coeffs = (0..rows)
        .map(|k| (0..memory_depth).map(|m| sol[k * memory_depth + m] / scales[k * memory_depth + m]).collect())
        .collect();
    PaModel::new(coeffs, 0.0, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFamily {
    MemoryPolynomial { max_order: usize, memory_depth: usize },
    Mlp { taps: usize, hidden: Vec<usize>, recipe: FeatureRecipe },
    Cnn { topology: Topology, recipe: FeatureRecipe },
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::MemoryPolynomial { .. } => "memory_polynomial",
            ModelFamily::Mlp { .. } => "mlp",
            ModelFamily::Cnn { .. } => "cnn",
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            ModelFamily::MemoryPolynomial { max_order, memory_depth } => format!("P={max_order} M={memory_depth}"),
            ModelFamily::Mlp { taps, hidden, .. } => {
                let h: Vec<String> = hidden.iter().map(usize::to_string).collect();
                format!("taps={taps} hidden={}", h.join("x"))
            }
            ModelFamily::Cnn { topology, .. } => format!(
                "{}x{} K={}",
                topology.hidden_layers, topology.hidden_channels, topology.kernel_size
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntry {
    pub model: ModelFamily,
    pub seed: u64,
}

/// Shared dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub ofdm: OfdmConfig,
    pub drive_rms: f64,
    pub validation_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            ofdm: OfdmConfig::default(),
            drive_rms: 0.25,
            validation_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkMatrix {
    pub dataset: DatasetSpec,
    /// One budget for every neural entry, so all see the same sample count.
    pub training: TrainConfig,
    pub entries: Vec<BenchmarkEntry>,
}

impl Default for BenchmarkMatrix {
    fn default() -> Self {
        let recipe = FeatureRecipe::default();
        Self {
            dataset: DatasetSpec::default(),
            training: TrainConfig {
                budget: TrainBudget::Steps(2000),
                ..TrainConfig::default()
            },
            entries: vec![
                BenchmarkEntry {
                    model: ModelFamily::MemoryPolynomial { max_order: 7, memory_depth: 4 },
                    seed: 1,
                },
                BenchmarkEntry {
                    model: ModelFamily::Mlp {
                        taps: 5,
                        hidden: vec![40, 40],
                        recipe: recipe.clone(),
                    },
                    seed: 1,
                },
                BenchmarkEntry {
                    model: ModelFamily::Cnn {
                        topology: Topology::default(),
                        recipe,
                    },
                    seed: 1,
                },
            ],
        }
    }
}

impl BenchmarkMatrix {
    pub fn validate(&self) -> Result<()> {
        if !(self.dataset.validation_fraction > 0.0 && self.dataset.validation_fraction < 1.0) {
            return Err(config_err("validation_fraction must lie in (0, 1)"));
        }
        self.dataset.ofdm.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub family: String,
    pub topology: String,
    pub params: usize,
    /// Validation NMSE; `None` when the entry failed.
    pub nmse_db: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub matrix: BenchmarkMatrix,
    /// Sorted by validation NMSE, failed entries last.
    pub rows: Vec<BenchmarkRow>,
    pub notes: Vec<String>,
}

pub const LSTM_NOTE: &str = "LSTM models are not part of this comparison";

/// Input/output record: OFDM at the drive level through `pa`.
pub fn benchmark_dataset(spec: &DatasetSpec, pa: &dyn PaDevice) -> Result<(ComplexSignal, ComplexSignal)> {
    let x = normalize_rms(&generate_ofdm(&spec.ofdm)?, spec.drive_rms)?;
    let y = pa.transmit(&x)?;
    if y.len() != x.len() {
        return Err(Error::Device("PA changed the signal length".into()));
    }
    Ok((x, y))
}

fn run_entry(
    entry: &BenchmarkEntry,
    training: &TrainConfig,
    x: &ComplexSignal,
    y: &ComplexSignal,
    split: usize,
) -> Result<(usize, f64)> {
    let (xt, yt) = (x.slice(0..split), y.slice(0..split));
    let (xv, yv) = (x.slice(split..x.len()), y.slice(split..y.len()));
    let (params, pred) = match &entry.model {
        ModelFamily::MemoryPolynomial { max_order, memory_depth } => {
            let m = fit_memory_polynomial(&xt, &yt, *max_order, *memory_depth)?;
            (2 * m.coeffs.len() * m.memory_depth, mem_poly_apply(&m, &xv)?)
        }
        ModelFamily::Mlp { taps, hidden, recipe } => {
            let mlp = MlpModel {
                recipe: recipe.clone(),
                taps: *taps,
                hidden: hidden.clone(),
                activation: crate::neural::Activation::Relu6,
            };
            let mut m = mlp.to_cnn(InitScheme::Passthrough, entry.seed)?;
            train_nn(&mut m, training, entry.seed, &xt, &yt)?;
            (m.param_count(), cnn_forward(&m, &xv)?)
        }
        ModelFamily::Cnn { topology, recipe } => {
            let mut m = CnnModel::from_topology(recipe.clone(), topology, InitScheme::Passthrough, entry.seed)?;
            train_nn(&mut m, training, entry.seed, &xt, &yt)?;
            (m.param_count(), cnn_forward(&m, &xv)?)
        }
    };
    Ok((params, nmse_db(&yv.samples, &pred.samples)?))
}

fn train_nn(m: &mut CnnModel, training: &TrainConfig, seed: u64, x: &ComplexSignal, y: &ComplexSignal) -> Result<()> {
    let cfg = TrainConfig {
        seed: rng::derive_seed(seed, rng::TAG_BENCH),
        ..training.clone()
    };
    fit(m, x, y, &cfg).map(|_| ())
}

/// Fits every entry on the same training record and ranks them on the
/// held-out tail. Entries run in parallel; a failing entry is reported in
/// its row.
pub fn run_benchmark(matrix: &BenchmarkMatrix, pa: &dyn PaDevice) -> Result<BenchmarkReport> {
    matrix.validate()?;
    let (x, y) = benchmark_dataset(&matrix.dataset, pa)?;
    let split = ((x.len() as f64) * (1.0 - matrix.dataset.validation_fraction)).floor() as usize;
    let results = par::map_slice(&matrix.entries, |e| run_entry(e, &matrix.training, &x, &y, split));
    let mut rows: Vec<BenchmarkRow> = matrix
        .entries
        .iter()
        .zip(results)
        .map(|(e, r)| {
            let (params, nmse_db, error) = match r {
                Ok((p, v)) => (p, Some(v), None),
                Err(err) => (0, None, Some(err.to_string())),
            };
            BenchmarkRow {
                family: e.model.name().to_string(),
                topology: e.model.descriptor(),
                params,
                nmse_db,
                error,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &BenchmarkRow| r.nmse_db.unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then_with(|| a.family.cmp(&b.family))
            .then_with(|| a.topology.cmp(&b.topology))
    });
    Ok(BenchmarkReport {
        matrix: matrix.clone(),
        rows,
        notes: vec![LSTM_NOTE.to_string()],
    })
}

impl BenchmarkReport {
    /// `family,topology,params,nmse_db`; failed entries have an empty NMSE.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,topology,params,nmse_db\n");
        for r in &self.rows {
            let nmse = r.nmse_db.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.family, r.topology, r.params, nmse);
        }
        s
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv())?;
        std::fs::write(json_path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn nmse_of(&self, family: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.family == family).and_then(|r| r.nmse_db)
    }
}
