//! Curvature-rate estimation from derivative-norm sequences.
//!
//! A [`DerivSeq`] holds `v_n = ||D^n f||` for a set of orders. The curvature
//! rate is the least-squares slope of `log v_n` against `n`:
//!
//! * [`FitMode::Raw`] fits `log v_n` directly (bandlimited signals, networks);
//! * [`FitMode::Taylor`] fits `log(v_n / n!)`, the growth of Taylor
//!   coefficients, whose slope is `-log R` for an analytic function with
//!   radius of convergence `R`.
//!
//! The two modes are not comparable, so every [`LambdaFit`] records its mode.
//! Norms are stored as natural logarithms so that factorially growing
//! sequences (e.g. `n!` up to `n = 200`) never overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{factorial, AdError, Jet};

/// Default absolute exclusion threshold on `v_n`.
pub const DEFAULT_EPSILON: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LambdaError {
    #[error("degenerate sequence: {usable} usable point(s), need at least 2")]
    Degenerate { usable: usize },
    #[error("radius requires a taylor-mode fit, got {0:?}")]
    ModeMismatch(FitMode),
    #[error("invalid derivative sequence: {0}")]
    InvalidSequence(String),
    #[error("no points or no directions to evaluate")]
    Empty,
    #[error("direction {index} is not unit norm (|u| = {norm})")]
    NonUnitDirection { index: usize, norm: f64 },
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Raw,
    Taylor,
}

impl FitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMode::Raw => "raw",
            FitMode::Taylor => "taylor",
        }
    }
}

/// Sequence of derivative norms `v_n`, indexed by strictly increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivSeq {
    orders: Vec<usize>,
    log_norms: Vec<f64>,
}

impl DerivSeq {
    pub fn new(orders: Vec<usize>, norms: Vec<f64>) -> Result<Self, LambdaError> {
        if let Some(bad) = norms.iter().find(|v| !(**v >= 0.0) || v.is_infinite()) {
            return Err(LambdaError::InvalidSequence(format!("norm {bad} is not a finite nonnegative value")));
        }
        let log_norms = norms.iter().map(|v| v.ln()).collect();
        Self::from_log_norms(orders, log_norms)
    }

    /// Builds a sequence from `log v_n`; `-inf` encodes an exact zero.
    pub fn from_log_norms(orders: Vec<usize>, log_norms: Vec<f64>) -> Result<Self, LambdaError> {
        if orders.len() != log_norms.len() {
            return Err(LambdaError::InvalidSequence(format!(
                "{} orders but {} norms",
                orders.len(),
                log_norms.len()
            )));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LambdaError::InvalidSequence("orders must be strictly increasing".into()));
        }
        if log_norms.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(LambdaError::InvalidSequence("log-norm is NaN or +inf".into()));
        }
        Ok(Self { orders, log_norms })
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn log_norms(&self) -> &[f64] {
        &self.log_norms
    }

    /// `v_n` values; may overflow to `inf` for factorial growth.
    pub fn norms(&self) -> Vec<f64> {
        self.log_norms.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// Orders whose norm is at or below `epsilon`.
    pub fn excluded(&self, epsilon: f64) -> Vec<usize> {
        let cut = epsilon.ln();
        self.orders
            .iter()
            .zip(&self.log_norms)
            .filter(|(_, &l)| l <= cut)
            .map(|(&n, _)| n)
            .collect()
    }

    /// Multiplies every norm by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let lc = c.ln();
        Self { orders: self.orders.clone(), log_norms: self.log_norms.iter().map(|l| l + lc).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub mode: FitMode,
    pub orders_used: Vec<usize>,
    pub n_excluded: usize,
}

/// `ln n!`, summed directly (exact enough for n <= a few hundred).
pub fn ln_factorial(n: usize) -> f64 {
    if n <= 20 {
        factorial(n).ln()
    } else {
        (2..=n).map(|k| (k as f64).ln()).sum()
    }
}

/// Ordinary least squares `y = slope * x + intercept`; returns
/// `(slope, intercept, r_squared)`.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * f64::EPSILON * n || ss_res <= 1e-28 * syy.max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

/// Least-squares slope of (possibly factorial-normalized) `log v_n` over the
/// orders in `order_range` (inclusive) whose norm exceeds `epsilon`.
pub fn fit_lambda(
    seq: &DerivSeq,
    mode: FitMode,
    order_range: (usize, usize),
    epsilon: f64,
) -> Result<LambdaFit, LambdaError> {
    let (lo, hi) = order_range;
    let cut = epsilon.ln();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut orders_used = Vec::new();
    let mut n_excluded = 0;
    for (&n, &l) in seq.orders.iter().zip(&seq.log_norms) {
        if n < lo || n > hi {
            continue;
        }
        if l <= cut {
            n_excluded += 1;
            continue;
        }
        let y = match mode {
            FitMode::Raw => l,
            FitMode::Taylor => l - ln_factorial(n),
        };
        xs.push(n as f64);
        ys.push(y);
        orders_used.push(n);
    }
    if xs.len() < 2 {
        return Err(LambdaError::Degenerate { usable: xs.len() });
    }
    let (lambda, intercept, r_squared) = ols(&xs, &ys);
    Ok(LambdaFit { lambda, intercept, r_squared, mode, orders_used, n_excluded })
}

/// Radius of convergence `exp(-lambda)` from a taylor-mode fit.
pub fn radius_from_fit(fit: &LambdaFit) -> Result<f64, LambdaError> {
    match fit.mode {
        FitMode::Taylor => Ok((-fit.lambda).exp()),
        FitMode::Raw => Err(LambdaError::ModeMismatch(fit.mode)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMethod {
    /// `exp` of the raw-mode slope over every order in the sequence.
    Slope,
    /// `v_{n_max} / v_{n_max - 1}`: high orders weight the spectrum toward
    /// its edge, so the top ratio approaches the cutoff from below.
    Ratio,
    /// The top ratio corrected for a flat spectral density at the edge.
    /// For frequencies spread uniformly up to `W`, `v_n^2` grows like
    /// `W^(2n+1) / (2n+1)`, so the raw ratio sits near `W sqrt((2n-1)/(2n+1))`;
    /// this method divides that factor out.
    EdgeCorrected,
}

/// Spectral-edge estimate from raw derivative norms of a bandlimited signal.
pub fn spectral_edge(seq: &DerivSeq, method: EdgeMethod) -> Result<f64, LambdaError> {
    let usable: Vec<(usize, f64)> = seq
        .orders
        .iter()
        .zip(&seq.log_norms)
        .filter(|(_, &l)| l > DEFAULT_EPSILON.ln())
        .map(|(&n, &l)| (n, l))
        .collect();
    if usable.len() < 2 {
        return Err(LambdaError::Degenerate { usable: usable.len() });
    }
    match method {
        EdgeMethod::Slope => {
            let hi = *seq.orders.last().expect("nonempty");
            let lo = seq.orders[0];
            Ok(fit_lambda(seq, FitMode::Raw, (lo, hi), DEFAULT_EPSILON)?.lambda.exp())
        }
        EdgeMethod::Ratio | EdgeMethod::EdgeCorrected => {
            let (n1, l1) = usable[usable.len() - 1];
            let (n0, l0) = usable[usable.len() - 2];
            let mut log_ratio = l1 - l0;
            if method == EdgeMethod::EdgeCorrected {
                log_ratio += 0.5 * ((2 * n1 + 1) as f64 / (2 * n0 + 1) as f64).ln();
            }
            Ok((log_ratio / (n1 - n0) as f64).exp())
        }
    }
}

/// Aggregates directional derivatives over every (point, direction) pair:
/// `v_n = sqrt(mean (n! coeffs[n])^2)` for `n = 0..=max_order`.
///
/// `evaluate(point, direction, order)` must return the jet of the scalar
/// along `point + t * direction`.
pub fn directional_deriv_seq<F>(
    mut evaluate: F,
    points: &[Vec<f64>],
    directions: &[Vec<f64>],
    max_order: usize,
) -> Result<DerivSeq, LambdaError>
where
    F: FnMut(&[f64], &[f64], usize) -> Result<Jet, AdError>,
{
    if points.is_empty() || directions.is_empty() {
        return Err(LambdaError::Empty);
    }
    check_unit(directions)?;
    let mut acc = SquareAccumulator::new(max_order);
    for p in points {
        for u in directions {
            let jet = evaluate(p, u, max_order)?;
            acc.push(&jet)?;
        }
    }
    acc.finish()
}

pub(crate) fn check_unit(directions: &[Vec<f64>]) -> Result<(), LambdaError> {
    for (index, u) in directions.iter().enumerate() {
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(LambdaError::NonUnitDirection { index, norm });
        }
    }
    Ok(())
}

/// Running sum of squared derivative values per order.
#[derive(Debug, Clone)]
pub(crate) struct SquareAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl SquareAccumulator {
    pub(crate) fn new(max_order: usize) -> Self {
        Self { sums: vec![0.0; max_order + 1], count: 0 }
    }

    pub(crate) fn push(&mut self, jet: &Jet) -> Result<(), AdError> {
        for (n, s) in self.sums.iter_mut().enumerate() {
            let d = jet.derivative(n)?;
            *s += d * d;
        }
        self.count += 1;
        Ok(())
    }

    pub(crate) fn push_coeffs(&mut self, coeffs: &[f64]) {
        for (n, s) in self.sums.iter_mut().enumerate() {
            let d = factorial(n) * coeffs[n];
            *s += d * d;
        }
        self.count += 1;
    }

    pub(crate) fn finish(self) -> Result<DerivSeq, LambdaError> {
        if self.count == 0 {
            return Err(LambdaError::Empty);
        }
        let c = self.count as f64;
        let orders = (0..self.sums.len()).collect();
        let logs = self.sums.iter().map(|s| 0.5 * (s / c).ln()).collect();
        DerivSeq::from_log_norms(orders, logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq(orders: &[usize], norms: &[f64]) -> DerivSeq {
        DerivSeq::new(orders.to_vec(), norms.to_vec()).unwrap()
    }

    #[test]
    fn raw_powers_of_two() {
        let s = seq(&[1, 2, 3, 4], &[2.0, 4.0, 8.0, 16.0]);
        let fit = fit_lambda(&s, FitMode::Raw, (1, 4), DEFAULT_EPSILON).unwrap();
        assert_relative_eq!(fit.lambda, 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.orders_used, vec![1, 2, 3, 4]);
        assert_eq!(fit.n_excluded, 0);
    }

    #[test]
    fn taylor_mode_geometric_two() {
        let orders: Vec<usize> = (0..=20).collect();
        let norms: Vec<f64> = orders.iter().map(|&n| factorial(n) * 2f64.powi(n as i32)).collect();
        let fit = fit_lambda(&seq(&orders, &norms), FitMode::Taylor, (0, 20), DEFAULT_EPSILON).unwrap();
        assert_relative_eq!(fit.lambda, 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(radius_from_fit(&fit).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lacunary_zeros_are_excluded() {
        let orders: Vec<usize> = (0..=60).collect();
        let logs: Vec<f64> =
            orders.iter().map(|&n| if n % 3 == 0 { ln_factorial(n) } else { f64::NEG_INFINITY }).collect();
        let s = DerivSeq::from_log_norms(orders, logs).unwrap();
        let fit = fit_lambda(&s, FitMode::Taylor, (0, 60), DEFAULT_EPSILON).unwrap();
        assert!(fit.lambda.abs() < 1e-12);
        assert_eq!(fit.n_excluded, 40);
        assert_eq!(fit.orders_used.len(), 21);
        assert!((radius_from_fit(&fit).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radius_examples() {
        let mk = |lambda| LambdaFit {
            lambda,
            intercept: 0.0,
            r_squared: 1.0,
            mode: FitMode::Taylor,
            orders_used: vec![0, 1],
            n_excluded: 0,
        };
        assert_eq!(radius_from_fit(&mk(0.0)).unwrap(), 1.0);
        assert_relative_eq!(radius_from_fit(&mk(2f64.ln())).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(radius_from_fit(&mk(-(3f64.ln()))).unwrap(), 3.0, epsilon = 1e-14);
        let mut raw = mk(0.0);
        raw.mode = FitMode::Raw;
        assert_eq!(radius_from_fit(&raw), Err(LambdaError::ModeMismatch(FitMode::Raw)));
    }

    #[test]
    fn degenerate_sequences() {
        let s = seq(&[1, 2, 3, 4], &[0.7, 0.0, 0.0, 0.0]);
        assert_eq!(
            fit_lambda(&s, FitMode::Raw, (1, 4), DEFAULT_EPSILON),
            Err(LambdaError::Degenerate { usable: 1 })
        );
        let s = seq(&[1, 2, 3], &[1.0, 2.0, 4.0]);
        assert!(fit_lambda(&s, FitMode::Raw, (5, 9), DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn invalid_sequences() {
        assert!(DerivSeq::new(vec![1, 1], vec![1.0, 2.0]).is_err());
        assert!(DerivSeq::new(vec![2, 1], vec![1.0, 2.0]).is_err());
        assert!(DerivSeq::new(vec![1, 2], vec![1.0, -2.0]).is_err());
        assert!(DerivSeq::new(vec![1, 2], vec![1.0]).is_err());
        assert!(DerivSeq::new(vec![1, 2], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn pure_tone_edge() {
        let omega: f64 = 37.5;
        let orders: Vec<usize> = (0..=8).collect();
        let norms: Vec<f64> = orders.iter().map(|&n| 0.3 * omega.powi(n as i32)).collect();
        let s = seq(&orders, &norms);
        assert_relative_eq!(spectral_edge(&s, EdgeMethod::Slope).unwrap(), omega, max_relative = 1e-12);
        assert_relative_eq!(spectral_edge(&s, EdgeMethod::Ratio).unwrap(), omega, max_relative = 1e-12);
    }

    #[test]
    fn edge_correction_is_exact_for_flat_density() {
        // v_n^2 = W^(2n+1) / (2n+1): integral of w^(2n) over [0, W].
        let w: f64 = 12.0;
        let orders: Vec<usize> = (0..=10).collect();
        let logs: Vec<f64> =
            orders.iter().map(|&n| 0.5 * ((2 * n + 1) as f64 * w.ln() - ((2 * n + 1) as f64).ln())).collect();
        let s = DerivSeq::from_log_norms(orders, logs).unwrap();
        assert_relative_eq!(spectral_edge(&s, EdgeMethod::EdgeCorrected).unwrap(), w, max_relative = 1e-12);
        assert!(spectral_edge(&s, EdgeMethod::Ratio).unwrap() < w);
    }

    #[test]
    fn excluded_lists_small_entries() {
        let s = seq(&[1, 2, 3], &[1.0, 0.0, 1e-40]);
        assert_eq!(s.excluded(DEFAULT_EPSILON), vec![2, 3]);
    }

    #[test]
    fn quadratic_form_has_no_third_derivative() {
        // q(x) = x . A x along u: derivatives of order >= 3 vanish.
        let a = [[2.0, 0.5], [0.5, -1.0]];
        let eval = |p: &[f64], u: &[f64], k: usize| -> Result<Jet, AdError> {
            let xs: Vec<Jet> = (0..2).map(|i| Jet::lift(p[i], u[i], k)).collect::<Result<_, _>>()?;
            let mut acc = Jet::zero(k)?;
            for i in 0..2 {
                for j in 0..2 {
                    acc = acc.add(&xs[i].mul(&xs[j])?.scale(a[i][j]))?;
                }
            }
            Ok(acc)
        };
        let s2 = 0.5f64.sqrt();
        let pts = vec![vec![0.3, -0.2], vec![1.0, 0.4]];
        let dirs = vec![vec![1.0, 0.0], vec![s2, s2]];
        let s = directional_deriv_seq(eval, &pts, &dirs, 4).unwrap();
        assert_eq!(s.excluded(DEFAULT_EPSILON), vec![3, 4]);
        let fit = fit_lambda(&s, FitMode::Raw, (1, 4), DEFAULT_EPSILON).unwrap();
        assert_eq!(fit.n_excluded, 2);
        assert_eq!(fit.orders_used, vec![1, 2]);
    }

    #[test]
    fn sine_of_projection() {
        // sin(w.x + t w.u) has |n-th derivative| = |w.u|^n |sin or cos|;
        // at w.x = pi/4 both are 1/sqrt 2, so lambda_raw = log |w.u|.
        let w = [1.7, -0.6];
        let eval = |p: &[f64], u: &[f64], k: usize| -> Result<Jet, AdError> {
            let z = Jet::lift(w[0] * p[0] + w[1] * p[1], w[0] * u[0] + w[1] * u[1], k)?;
            Ok(z.sin())
        };
        let x = std::f64::consts::FRAC_PI_4 / w[0];
        let u = vec![0.8, 0.6];
        let wu: f64 = w[0] * u[0] + w[1] * u[1];
        let s = directional_deriv_seq(eval, &[vec![x, 0.0]], &[u.clone()], 6).unwrap();
        let fit = fit_lambda(&s, FitMode::Raw, (1, 6), DEFAULT_EPSILON).unwrap();
        assert_relative_eq!(fit.lambda, wu.abs().ln(), epsilon = 1e-12);
        // Several directions: v_n^2 = mean_k |w.u_k|^{2n} / 2.
        let dirs = vec![u, vec![0.0, 1.0], vec![-0.6, 0.8]];
        let s = directional_deriv_seq(eval, &[vec![x, 0.0]], &dirs, 4).unwrap();
        for n in 0..=4usize {
            let want: f64 = dirs
                .iter()
                .map(|d| (w[0] * d[0] + w[1] * d[1]).abs().powi(2 * n as i32) * 0.5)
                .sum::<f64>()
                / 3.0;
            assert_relative_eq!(s.norms()[n], want.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let eval = |_: &[f64], _: &[f64], k: usize| Jet::zero(k);
        assert_eq!(directional_deriv_seq(eval, &[], &[vec![1.0]], 3), Err(LambdaError::Empty));
        assert!(matches!(
            directional_deriv_seq(eval, &[vec![0.0]], &[vec![2.0]], 3),
            Err(LambdaError::NonUnitDirection { index: 0, .. })
        ));
    }
}
