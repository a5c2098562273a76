//! Classification metrics, calibration, boundary-point selection and the
//! bootstrap effect-size regression.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::ols;
use crate::nn::argmax_rows;
use crate::rng::{seeded, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no samples")]
    Empty,
    #[error("class {0} not present")]
    ClassAbsent(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Config(String),
}

fn check_shapes(probs: ArrayView2<f64>, labels: &[usize]) -> Result<(), MetricsError> {
    if probs.nrows() != labels.len() {
        return Err(MetricsError::Shape(format!("{} rows but {} labels", probs.nrows(), labels.len())));
    }
    if probs.nrows() == 0 {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.ncols()) {
        return Err(MetricsError::Shape(format!("label {bad} >= {} classes", probs.ncols())));
    }
    Ok(())
}

/// Maximum probability per row.
pub fn confidences(probs: ArrayView2<f64>) -> Vec<f64> {
    probs.rows().into_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Fraction of rows whose argmax (ties to the lowest index) differs from the label.
pub fn test_error(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64, MetricsError> {
    check_shapes(probs, labels)?;
    let wrong = argmax_rows(probs).iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStat {
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub num_bins: usize,
    pub bins: Vec<BinStat>,
}

pub const DEFAULT_ECE_BINS: usize = 15;

/// Expected calibration error over equal-width confidence bins on `[0, 1]`.
/// Empty bins contribute nothing.
pub fn ece(probs: ArrayView2<f64>, labels: &[usize], num_bins: usize) -> Result<CalibrationReport, MetricsError> {
    if num_bins < 2 {
        return Err(MetricsError::Config(format!("num_bins {num_bins} < 2")));
    }
    check_shapes(probs, labels)?;
    let conf = confidences(probs);
    let preds = argmax_rows(probs);
    let mut sum_conf = vec![0.0; num_bins];
    let mut hits = vec![0usize; num_bins];
    let mut counts = vec![0usize; num_bins];
    for i in 0..labels.len() {
        let b = ((conf[i] * num_bins as f64) as usize).min(num_bins - 1);
        sum_conf[b] += conf[i];
        hits[b] += usize::from(preds[i] == labels[i]);
        counts[b] += 1;
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let bins = (0..num_bins)
        .map(|b| {
            if counts[b] == 0 {
                return BinStat { confidence: 0.0, accuracy: 0.0, count: 0 };
            }
            let c = counts[b] as f64;
            let stat = BinStat { confidence: sum_conf[b] / c, accuracy: hits[b] as f64 / c, count: counts[b] };
            total += c / n * (stat.accuracy - stat.confidence).abs();
            stat
        })
        .collect();
    Ok(CalibrationReport { ece: total.clamp(0.0, 1.0), num_bins, bins })
}

/// Interval of maximum predicted probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBand {
    pub lo: f64,
    pub hi: f64,
}

impl BoundaryBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MetricsError> {
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(MetricsError::Config(format!("band [{lo}, {hi}] must satisfy 0 < lo < hi <= 1")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.lo && p <= self.hi
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

impl Default for BoundaryBand {
    fn default() -> Self {
        Self { lo: 0.45, hi: 0.65 }
    }
}

pub const DEFAULT_MIN_POINTS: usize = 10;

/// Indices (ascending) whose confidence lies in `band`. With fewer than
/// `min_points` hits, the `min_points` indices closest to the band midpoint
/// are returned instead (ties by index).
pub fn select_boundary_points(
    probs: ArrayView2<f64>,
    band: BoundaryBand,
    min_points: usize,
) -> Result<Vec<usize>, MetricsError> {
    if probs.nrows() == 0 {
        return Err(MetricsError::Empty);
    }
    let conf = confidences(probs);
    let inside: Vec<usize> = (0..conf.len()).filter(|&i| band.contains(conf[i])).collect();
    if inside.len() >= min_points {
        return Ok(inside);
    }
    let mid = band.mid();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| (conf[a] - mid).abs().total_cmp(&(conf[b] - mid).abs()).then(a.cmp(&b)));
    order.truncate(min_points);
    order.sort_unstable();
    Ok(order)
}

/// Accuracy over the `ceil(q N)` least confident samples (ties by index).
pub fn hard_quantile_accuracy(probs: ArrayView2<f64>, labels: &[usize], q: f64) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(MetricsError::Config(format!("quantile {q} outside (0, 1]")));
    }
    check_shapes(probs, labels)?;
    let conf = confidences(probs);
    let preds = argmax_rows(probs);
    let k = ((q * labels.len() as f64).ceil() as usize).clamp(1, labels.len());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    let correct = order[..k].iter().filter(|&&i| preds[i] == labels[i]).count();
    Ok(correct as f64 / k as f64)
}

/// `(P(pred = b | true a), P(pred = a | true b))`.
pub fn pair_confusion(preds: &[usize], labels: &[usize], pair: (usize, usize)) -> Result<(f64, f64), MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Shape(format!("{} predictions but {} labels", preds.len(), labels.len())));
    }
    let rate = |from: usize, to: usize| -> Result<f64, MetricsError> {
        let (mut n, mut hit) = (0usize, 0usize);
        for (&p, &y) in preds.iter().zip(labels) {
            if y == from {
                n += 1;
                hit += usize::from(p == to);
            }
        }
        if n == 0 {
            return Err(MetricsError::ClassAbsent(from));
        }
        Ok(hit as f64 / n as f64)
    };
    Ok((rate(pair.0, pair.1)?, rate(pair.1, pair.0)?))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::Shape(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Degenerate("zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectSize {
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub const DEFAULT_BOOTSTRAP: usize = 2000;

/// OLS slope of `errors` on `lambdas` with a 95% percentile bootstrap
/// interval over resampled pairs. Errors are taken in the caller's units
/// (percentage points in the harness).
pub fn effect_size_regression(
    lambdas: &[f64],
    errors: &[f64],
    bootstrap_b: usize,
    seed: u64,
) -> Result<EffectSize, MetricsError> {
    if lambdas.len() != errors.len() {
        return Err(MetricsError::Shape(format!("{} lambdas vs {} errors", lambdas.len(), errors.len())));
    }
    if lambdas.len() < 10 {
        return Err(MetricsError::Config(format!("need >= 10 observations, got {}", lambdas.len())));
    }
    if bootstrap_b == 0 {
        return Err(MetricsError::Config("bootstrap_b must be positive".into()));
    }
    if lambdas.iter().all(|&l| l == lambdas[0]) {
        return Err(MetricsError::Degenerate("all lambdas equal".into()));
    }
    let (slope, _, _) = ols(lambdas, errors);
    let n = lambdas.len();
    let mut rng = seeded(seed, Stream::Bootstrap);
    let mut slopes = Vec::with_capacity(bootstrap_b);
    let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
    while slopes.len() < bootstrap_b {
        for k in 0..n {
            let i = rng.random_range(0..n);
            xs[k] = lambdas[i];
            ys[k] = errors[i];
        }
        // A resample with one distinct lambda has no slope; draw again.
        if xs.iter().all(|&x| x == xs[0]) {
            continue;
        }
        slopes.push(ols(&xs, &ys).0);
    }
    slopes.sort_by(f64::total_cmp);
    Ok(EffectSize { slope, ci_lo: percentile(&slopes, 0.025), ci_hi: percentile(&slopes, 0.975) })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}
