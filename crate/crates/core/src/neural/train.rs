use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{build_features, conv1d_backward, Activation, CnnModel, FeatureMap, FeatureRecipe};
use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::rng;
use crate::signal::ComplexSignal;

/// One contiguous training window: input features and the I/Q target.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub features: FeatureMap,
    pub target: FeatureMap,
}

impl Segment {
    pub fn new(input: &[Complex64], target: &[Complex64], recipe: &FeatureRecipe) -> Result<Self> {
        if input.len() != target.len() {
            return Err(shape_err(format!(
                "segment input has {} samples, target {}",
                input.len(),
                target.len()
            )));
        }
        let mut t = Vec::with_capacity(2 * target.len());
        t.extend(target.iter().map(|s| s.re));
        t.extend(target.iter().map(|s| s.im));
        Ok(Self {
            features: build_features(input, recipe),
            target: FeatureMap::from_vec(2, target.len(), t),
        })
    }

    pub fn len(&self) -> usize {
        self.target.len
    }

    pub fn is_empty(&self) -> bool {
        self.target.len == 0
    }
}

struct Trace {
    /// Input of every layer (features first).
    inputs: Vec<FeatureMap>,
    pres: Vec<FeatureMap>,
    output: FeatureMap,
}

fn trace(model: &CnnModel, features: &FeatureMap) -> Result<Trace> {
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut pres = Vec::with_capacity(model.layers.len());
    let mut h = features.clone();
    for l in &model.layers {
        let pre = l.pre_activation(&h)?;
        let post = l.activate(&pre);
        inputs.push(std::mem::replace(&mut h, post));
        pres.push(pre);
    }
    Ok(Trace { inputs, pres, output: h })
}

fn target_energy(seg: &Segment, warmup: usize) -> f64 {
    (0..2)
        .map(|c| seg.target.row(c)[warmup..].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Squared error of one segment past the warm-up, and its gradient.
fn segment_error(model: &CnnModel, seg: &Segment, warmup: usize, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let tr = trace(model, &seg.features)?;
    let n = seg.len();
    let mut d_out = FeatureMap::zeros(2, n);
    let mut err = 0.0;
    for c in 0..2 {
        let (o, t) = (tr.output.row(c), seg.target.row(c));
        let d = d_out.row_mut(c);
        for i in warmup..n {
            let e = o[i] - t[i];
            err += e * e;
            d[i] = 2.0 * e;
        }
    }
    if !want_grad {
        return Ok((err, None));
    }
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); model.layers.len()];
    let mut upstream = d_out;
    for (i, l) in model.layers.iter().enumerate().rev() {
        let (g, d_in) = conv1d_backward(l, &tr.inputs[i], &tr.pres[i], &upstream, i > 0);
        let mut flat = g.weights;
        flat.extend(g.biases);
        grads[i] = flat;
        if let Some(d) = d_in {
            upstream = d;
        }
    }
    Ok((err, Some(grads.concat())))
}

fn check_batch(model: &CnnModel, batch: &[Segment]) -> Result<(usize, f64)> {
    let rf = model.receptive_field();
    if batch.is_empty() {
        return Err(shape_err("empty batch"));
    }
    for s in batch {
        if s.len() < rf {
            return Err(shape_err(format!(
                "segment of {} samples is shorter than the receptive field {rf}",
                s.len()
            )));
        }
        if s.features.channels != model.recipe.channels() {
            return Err(shape_err("segment features do not match the model recipe"));
        }
    }
    let warmup = rf - 1;
    let energy: f64 = batch.iter().map(|s| target_energy(s, warmup)).sum();
    if energy <= 0.0 {
        return Err(Error::DegenerateInput("batch target has zero energy".into()));
    }
    Ok((warmup, energy))
}

/// Batch NMSE (linear) over samples past the receptive-field warm-up.
pub fn batch_loss(model: &CnnModel, batch: &[Segment]) -> Result<f64> {
    let (warmup, energy) = check_batch(model, batch)?;
    let errs = par::map_slice(batch, |s| segment_error(model, s, warmup, false).map(|e| e.0));
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    Ok(total / energy)
}

/// Batch NMSE and its gradient with respect to [`CnnModel::flat_params`].
pub fn loss_and_gradient(model: &CnnModel, batch: &[Segment]) -> Result<(f64, Vec<f64>)> {
    let (warmup, energy) = check_batch(model, batch)?;
    let parts = par::map_slice(batch, |s| segment_error(model, s, warmup, true));
    let mut total = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for p in parts {
        let (e, g) = p?;
        total += e;
        for (a, b) in grad.iter_mut().zip(g.expect("gradient requested")) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= energy);
    Ok((total / energy, grad))
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn for_model(model: &CnnModel, learning_rate: f64) -> Self {
        Self::new(model.param_count(), learning_rate)
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/model size mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One optimizer step. Returns the batch NMSE measured before the update.
pub fn train_step(model: &mut CnnModel, batch: &[Segment], opt: &mut Adam) -> Result<f64> {
    let (loss, grad) = loss_and_gradient(model, batch)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step: opt.step as usize,
            loss,
        });
    }
    let mut params = model.flat_params();
    opt.update(&mut params, &grad);
    model.set_flat_params(&params);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainBudget {
    Epochs(usize),
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub budget: TrainBudget,
    pub segment_len: usize,
    pub batch_segments: usize,
    pub learning_rate: f64,
    #[serde(default = "TrainConfig::default_seed")]
    pub seed: u64,
}

impl TrainConfig {
    fn default_seed() -> u64 {
        1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            budget: TrainBudget::Epochs(150),
            segment_len: 256,
            batch_segments: 4,
            learning_rate: 1e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pre-update batch NMSE per epoch, in dB.
    pub epoch_nmse_db: Vec<f64>,
    pub steps: usize,
    /// Loss of every step (linear NMSE).
    #[serde(skip)]
    pub step_losses: Vec<f64>,
    /// Set when the 10-step moving average at step 200 is not below the one
    /// at step 10; `None` for runs shorter than 200 steps.
    pub stalled: Option<bool>,
}

impl TrainReport {
    fn assess(&mut self) {
        if self.step_losses.len() >= 200 {
            let head: f64 = self.step_losses[..10].iter().sum();
            let tail: f64 = self.step_losses[190..200].iter().sum();
            self.stalled = Some(tail >= head);
        }
    }
}

/// Cuts aligned input/target signals into contiguous segments.
pub fn make_segments(
    input: &ComplexSignal,
    target: &ComplexSignal,
    recipe: &FeatureRecipe,
    segment_len: usize,
) -> Result<Vec<Segment>> {
    if input.len() != target.len() {
        return Err(shape_err(format!(
            "training input has {} samples, target {}",
            input.len(),
            target.len()
        )));
    }
    if segment_len == 0 {
        return Err(shape_err("segment length must be positive"));
    }
    (0..input.len() / segment_len)
        .map(|s| {
            let r = s * segment_len..(s + 1) * segment_len;
            Segment::new(&input.samples[r.clone()], &target.samples[r], recipe)
        })
        .collect()
}

/// Trains `model` to map `input` onto `target` with a fresh Adam state.
/// Segments are reshuffled every epoch from the `neural.shuffle` stream.
pub fn fit(model: &mut CnnModel, input: &ComplexSignal, target: &ComplexSignal, cfg: &TrainConfig) -> Result<TrainReport> {
    let segments = make_segments(input, target, &model.recipe, cfg.segment_len)?;
    if segments.is_empty() && !matches!(cfg.budget, TrainBudget::Epochs(0) | TrainBudget::Steps(0)) {
        return Err(shape_err("signal is shorter than one training segment"));
    }
    let mut opt = Adam::for_model(model, cfg.learning_rate);
    let mut shuffle = rng::module_rng(cfg.seed, rng::TAG_SHUFFLE);
    let mut report = TrainReport {
        epoch_nmse_db: Vec::new(),
        steps: 0,
        step_losses: Vec::new(),
        stalled: None,
    };
    let (max_epochs, max_steps) = match cfg.budget {
        TrainBudget::Epochs(e) => (e, usize::MAX),
        TrainBudget::Steps(s) => (usize::MAX, s),
    };
    let batch = cfg.batch_segments.max(1);
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut epoch = 0;
    while epoch < max_epochs && report.steps < max_steps {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut count = 0;
        for idx in order.chunks(batch) {
            if report.steps >= max_steps {
                break;
            }
            let b: Vec<Segment> = idx.iter().map(|&i| segments[i].clone()).collect();
            let loss = train_step(model, &b, &mut opt)?;
            report.step_losses.push(loss);
            report.steps += 1;
            sum += loss;
            count += 1;
        }
        if count > 0 {
            report.epoch_nmse_db.push(10.0 * (sum / count as f64).log10());
        }
        epoch += 1;
    }
    report.assess();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step. Much below 1e-5 the difference quotient is
    /// dominated by rounding in the loss sum.
    pub step: f64,
    /// Lower bound of the relative-error denominator, so that gradients near
    /// zero are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose ±step perturbation moved some ReLU6 pre-activation
    /// across (or off) a kink; the derivative is undefined there.
    pub excluded: usize,
    /// True when the unperturbed model has a pre-activation exactly at 0 or 6.
    pub at_kink: bool,
}

/// Per-unit ReLU6 region: 0 below, 1 inside, 2 above, 3 exactly on a kink.
fn kink_signature(model: &CnnModel, batch: &[Segment]) -> Result<Vec<u8>> {
    let mut sig = Vec::new();
    for s in batch {
        let tr = trace(model, &s.features)?;
        for (l, pre) in model.layers.iter().zip(&tr.pres) {
            if l.activation != Activation::Relu6 {
                continue;
            }
            sig.extend(pre.data.iter().map(|&v| {
                if v == 0.0 || v == 6.0 {
                    3
                } else if v < 0.0 {
                    0
                } else if v < 6.0 {
                    1
                } else {
                    2
                }
            }));
        }
    }
    Ok(sig)
}

/// Compares every analytic gradient entry with a central finite difference.
pub fn gradient_check(model: &CnnModel, batch: &[Segment], opts: GradCheckOptions) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradient(model, batch)?;
    let base_sig = kink_signature(model, batch)?;
    let at_kink = base_sig.contains(&3);
    let params = model.flat_params();
    let results = par::map_range(params.len(), |i| -> Result<Option<f64>> {
        let mut m = model.clone();
        let mut p = params.clone();
        p[i] = params[i] + opts.step;
        m.set_flat_params(&p);
        let plus = batch_loss(&m, batch)?;
        let sig_plus = kink_signature(&m, batch)?;
        p[i] = params[i] - opts.step;
        m.set_flat_params(&p);
        let minus = batch_loss(&m, batch)?;
        let sig_minus = kink_signature(&m, batch)?;
        if sig_plus != base_sig || sig_minus != base_sig {
            return Ok(None);
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        Ok(Some((a - numeric).abs() / denom))
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        at_kink,
    };
    for r in results {
        match r? {
            Some(e) => {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(e);
            }
            None => report.excluded += 1,
        }
    }
    Ok(report)
}
