//! Training: Adam, SAM, the curvature-rate penalty and the per-epoch loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{factorial, MAX_ORDER};
use crate::data::Dataset;
use crate::lambda::{fit_lambda, FitMode, LambdaError, LambdaFit, SquareAccumulator, DEFAULT_EPSILON};
use crate::metrics::{
    ece, select_boundary_points, test_error, BoundaryBand, MetricsError, DEFAULT_ECE_BINS, DEFAULT_MIN_POINTS,
};
use crate::nn::{
    head_jets, init_params, jet_backward, jet_forward, loss_and_grad, predict_proba, repeat_rows, Activation, Batch,
    Head, ModelParams, NnError,
};
use crate::rng::{seeded, seeded_at, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}")]
    Numeric { what: &'static str, epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Lambda(#[from] LambdaError),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    if params.len() != grad.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "adam sizes differ: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrrConfig {
    pub orders: Vec<usize>,
    pub scale: f64,
    pub directions_per_sample: usize,
    pub head: Head,
    pub class_filter: Option<Vec<usize>>,
}

impl Default for CrrConfig {
    fn default() -> Self {
        Self { orders: vec![2, 3], scale: 0.0, directions_per_sample: 1, head: Head::Loss, class_filter: None }
    }
}

pub const CRR_MAX_ORDER: usize = 4;

impl CrrConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(TrainError::Config(format!("crr scale {} must be finite and >= 0", self.scale)));
        }
        if self.scale > 0.0 && self.orders.is_empty() {
            return Err(TrainError::Config("crr orders empty with positive scale".into()));
        }
        if let Some(&bad) = self.orders.iter().find(|&&n| n == 0 || n > CRR_MAX_ORDER) {
            return Err(TrainError::Config(format!("crr order {bad} outside 1..={CRR_MAX_ORDER}")));
        }
        if self.directions_per_sample == 0 {
            return Err(TrainError::Config("directions_per_sample must be >= 1".into()));
        }
        if matches!(self.head, Head::Logit(_)) {
            return Err(TrainError::Config("crr head must be loss or max_logit".into()));
        }
        Ok(())
    }

    fn max_order(&self) -> usize {
        self.orders.iter().copied().max().unwrap_or(0)
    }
}

/// Rows of independent unit vectors (normalized Gaussians).
pub fn random_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Array2<f64> {
    let mut u = Array2::zeros((count, dim));
    for mut row in u.rows_mut() {
        loop {
            row.iter_mut().for_each(|v: &mut f64| *v = rng.sample(StandardNormal));
            let n = row.dot(&row).sqrt();
            if n > 1e-12 {
                row /= n;
                break;
            }
        }
    }
    u
}

/// `scale * sum_n mean (n! coeffs[n])^2` over the selected samples, each
/// paired with `directions_per_sample` fresh unit directions, and its
/// gradient with respect to the flat parameters.
pub fn crr_penalty(
    params: &ModelParams,
    batch: &Batch,
    cfg: &CrrConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>), TrainError> {
    cfg.validate()?;
    let zero = || (0.0, vec![0.0; params.flat().len()]);
    if cfg.scale == 0.0 || cfg.orders.is_empty() {
        return Ok(zero());
    }
    let rows: Vec<usize> = match &cfg.class_filter {
        Some(keep) => (0..batch.len()).filter(|&i| keep.contains(&batch.labels[i])).collect(),
        None => (0..batch.len()).collect(),
    };
    if rows.is_empty() {
        return Ok(zero());
    }
    let sel = batch.select(&rows);
    let reps = cfg.directions_per_sample;
    let points = repeat_rows(sel.inputs.view(), reps);
    let labels: Vec<usize> = sel.labels.iter().flat_map(|&y| std::iter::repeat_n(y, reps)).collect();
    let dirs = random_directions(rng, points.nrows(), points.ncols());
    let k = cfg.max_order();
    let fwd = jet_forward(params, points.view(), dirs.view(), k)?;
    let jets = head_jets(&fwd, cfg.head, Some(&labels))?;
    let r = jets.len() as f64;
    let mut penalty = 0.0;
    let mut seed = vec![vec![0.0; k + 1]; jets.len()];
    for (jet, s) in jets.iter().zip(seed.iter_mut()) {
        for &n in &cfg.orders {
            let f = factorial(n);
            let c = jet.coeffs()[n];
            penalty += (f * c) * (f * c) / r;
            s[n] = cfg.scale * 2.0 * f * f * c / r;
        }
    }
    let grad = jet_backward(params, &fwd, cfg.head, Some(&labels), &seed)?;
    Ok((cfg.scale * penalty, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamConfig {
    pub rho: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self { rho: 0.05 }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(TrainError::Config(format!("sam rho {} must be finite and > 0", self.rho)));
        }
        Ok(())
    }
}

/// SAM descent direction for a generic objective: the gradient at
/// `theta + rho g / |g|`. At a zero gradient the plain gradient is returned.
/// Also returns the objective value at `theta`.
pub fn sam_gradient<F>(theta: &[f64], rho: f64, mut objective: F) -> Result<(f64, Vec<f64>), TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    let (l, g1) = objective(theta)?;
    let norm = g1.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok((l, g1));
    }
    let perturbed: Vec<f64> = theta.iter().zip(&g1).map(|(t, g)| t + rho * g / norm).collect();
    let (_, g2) = objective(&perturbed)?;
    Ok((l, g2))
}

/// One SAM update with Adam as the inner optimizer. Returns the batch loss
/// at the unperturbed parameters.
pub fn sam_step(
    params: &mut ModelParams,
    batch: &Batch,
    cfg: &SamConfig,
    state: &mut AdamState,
    lr: f64,
) -> Result<f64, TrainError> {
    cfg.validate()?;
    let mut probe = params.clone();
    let (l, g2) = sam_gradient(params.flat(), cfg.rho, |theta| {
        probe.flat_mut().copy_from_slice(theta);
        Ok(loss_and_grad(&probe, batch)?)
    })?;
    adam_step(params.flat_mut(), &g2, state, lr)?;
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainMode {
    Baseline,
    Crr(CrrConfig),
    Sam(SamConfig),
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Crr(_) => "crr",
            TrainMode::Sam(_) => "sam",
        }
    }
}

/// How λ is measured after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Inclusive order range of the raw-mode fit.
    pub fit_orders: (usize, usize),
    /// Restrict measurement to test points in this confidence band.
    pub band: Option<BoundaryBand>,
    pub directions: usize,
    pub head: Head,
    /// Cap on measured points (the lowest indices of the selection are kept).
    pub max_points: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { fit_orders: (1, 4), band: Some(BoundaryBand::default()), directions: 4, head: Head::Loss, max_points: 200 }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let (lo, hi) = self.fit_orders;
        if lo >= hi || hi > MAX_ORDER {
            return Err(TrainError::Config(format!("fit orders ({lo}, {hi}) need lo < hi <= {MAX_ORDER}")));
        }
        if self.directions == 0 || self.max_points == 0 {
            return Err(TrainError::Config("directions and max_points must be >= 1".into()));
        }
        if let Some(b) = self.band {
            BoundaryBand::new(b.lo, b.hi)?;
        }
        Ok(())
    }
}

/// Raw-mode λ of `head` over every (row, direction) pair.
pub fn measure_lambda(
    params: &ModelParams,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    directions: ArrayView2<f64>,
    head: Head,
    fit_orders: (usize, usize),
) -> Result<LambdaFit, TrainError> {
    if inputs.nrows() == 0 || directions.nrows() == 0 {
        return Err(LambdaError::Empty.into());
    }
    if inputs.nrows() != labels.len() {
        return Err(TrainError::Config("inputs and labels differ in length".into()));
    }
    let k = fit_orders.1;
    let nd = directions.nrows();
    let mut acc = SquareAccumulator::new(k);
    const CHUNK: usize = 256;
    let pairs = inputs.nrows() * nd;
    let mut start = 0;
    while start < pairs {
        let end = (start + CHUNK).min(pairs);
        let pts = inputs.select(Axis(0), &(start..end).map(|i| i / nd).collect::<Vec<_>>());
        let dirs = directions.select(Axis(0), &(start..end).map(|i| i % nd).collect::<Vec<_>>());
        let ys: Vec<usize> = (start..end).map(|i| labels[i / nd]).collect();
        let fwd = jet_forward(params, pts.view(), dirs.view(), k)?;
        for jet in head_jets(&fwd, head, Some(&ys))? {
            acc.push_coeffs(jet.coeffs());
        }
        start = end;
    }
    Ok(fit_lambda(&acc.finish()?, FitMode::Raw, fit_orders, DEFAULT_EPSILON)?)
}

/// Points selected for measurement under `spec` given current predictions.
pub fn eval_points(probs: ArrayView2<f64>, spec: &EvalSpec) -> Result<Vec<usize>, TrainError> {
    let mut idx = match spec.band {
        Some(band) => select_boundary_points(probs, band, DEFAULT_MIN_POINTS)?,
        None => (0..probs.nrows()).collect(),
    };
    idx.truncate(spec.max_points);
    Ok(idx)
}

/// Per-epoch telemetry. `seconds` is wall time and is not serialized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub penalty: f64,
    pub test_error: f64,
    pub lambda: Option<f64>,
    pub ece: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn two_moons(seed: u64) -> Self {
        Self {
            layer_dims: vec![2, 64, 64, 2],
            activation: Activation::Tanh,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            seed,
            mode: TrainMode::Baseline,
        }
    }

    pub fn image(seed: u64) -> Self {
        Self {
            layer_dims: vec![784, 128, 10],
            activation: Activation::Tanh,
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            seed,
            mode: TrainMode::Baseline,
        }
    }

    pub fn validate(&self, train: &Dataset, test: &Dataset) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and > 0", self.lr)));
        }
        let (din, dout) = (self.layer_dims[0], *self.layer_dims.last().unwrap_or(&0));
        for (name, d) in [("train", train), ("test", test)] {
            if d.is_empty() {
                return Err(TrainError::Config(format!("{name} set is empty")));
            }
            if d.dim() != din {
                return Err(TrainError::Config(format!("{name} inputs have {} features, network {din}", d.dim())));
            }
            if d.num_classes > dout {
                return Err(TrainError::Config(format!("{name} has {} classes, network {dout}", d.num_classes)));
            }
        }
        match &self.mode {
            TrainMode::Baseline => Ok(()),
            TrainMode::Crr(c) => c.validate(),
            TrainMode::Sam(s) => s.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub params: ModelParams,
    /// λ fit of the final epoch, if it was not degenerate.
    pub final_fit: Option<LambdaFit>,
}

/// Trains from a fresh initialization and evaluates after every epoch.
pub fn train_run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    eval: &EvalSpec,
) -> Result<TrainOutcome, TrainError> {
    if cfg.layer_dims.len() < 2 {
        return Err(TrainError::Config("layer_dims needs at least input and output".into()));
    }
    cfg.validate(train, test)?;
    eval.validate()?;
    let mut params = init_params(&cfg.layer_dims, cfg.activation, cfg.seed)?;
    let mut state = AdamState::new(params.flat().len());
    let full = train.to_batch();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut final_fit = None;
    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded_at(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut dir_rng = seeded_at(cfg.seed, Stream::CrrDirections, epoch as u64);
        let (mut loss_sum, mut pen_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = full.select(chunk);
            let (l, p) = match &cfg.mode {
                TrainMode::Baseline => {
                    let (l, g) = loss_and_grad(&params, &batch)?;
                    adam_step(params.flat_mut(), &g, &mut state, cfg.lr)?;
                    (l, 0.0)
                }
                TrainMode::Crr(c) => {
                    let (l, mut g) = loss_and_grad(&params, &batch)?;
                    let (p, gp) = crr_penalty(&params, &batch, c, &mut dir_rng)?;
                    g.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
                    adam_step(params.flat_mut(), &g, &mut state, cfg.lr)?;
                    (l, p)
                }
                TrainMode::Sam(s) => (sam_step(&mut params, &batch, s, &mut state, cfg.lr)?, 0.0),
            };
            if !l.is_finite() || !p.is_finite() {
                return Err(TrainError::Numeric { what: "training objective", epoch });
            }
            loss_sum += l;
            pen_sum += p;
            steps += 1;
        }
        if params.flat().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Numeric { what: "parameter", epoch });
        }
        let probs = predict_proba(&params, test.inputs.view())?;
        let err = test_error(probs.view(), &test.labels)?;
        let cal = ece(probs.view(), &test.labels, DEFAULT_ECE_BINS)?;
        let idx = eval_points(probs.view(), eval)?;
        let dirs = random_directions(
            &mut seeded_at(cfg.seed, Stream::EvalDirections, epoch as u64),
            eval.directions,
            train.dim(),
        );
        let sel = test.select(&idx);
        final_fit = match measure_lambda(&params, sel.inputs.view(), &sel.labels, dirs.view(), eval.head, eval.fit_orders)
        {
            Ok(fit) if fit.lambda.is_finite() => Some(fit),
            Ok(_) | Err(TrainError::Lambda(_)) => None,
            Err(e) => return Err(e),
        };
        let lambda = final_fit.as_ref().map(|f| f.lambda);
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            penalty: pen_sum / steps as f64,
            test_error: err,
            lambda,
            ece: cal.ece,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { records, params, final_fit })
}

/// Initial parameters `train_run` would start from.
pub fn initial_params(cfg: &TrainConfig) -> Result<ModelParams, TrainError> {
    Ok(init_params(&cfg.layer_dims, cfg.activation, cfg.seed)?)
}

/// Direction generator for CRR sampling outside `train_run`.
pub fn crr_rng(seed: u64) -> ChaCha8Rng {
    seeded(seed, Stream::CrrDirections)
}
