//! Fixtures with known curvature rate.
//!
//! Power series use closed-form coefficients (no numerical differentiation),
//! and bandlimited signals are sparse sums of tones whose derivatives are
//! computed exactly in the spectral domain.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::lambda::{ln_factorial, DerivSeq, LambdaError};
use crate::rng::seeded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("n_max {n_max} exceeds the limit {limit}")]
    OrderTooLarge { n_max: usize, limit: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Lambda(#[from] LambdaError),
}

/// Closed-form series fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeriesKind {
    /// `1 / (1 - a x)`: `a_n = a^n`, radius `1/a`.
    Geometric { a: f64 },
    /// `1 / (1 - x^3)`: `a_n = 1` iff `3 | n`, radius 1.
    InvOneMinusXCubed,
    /// `exp(-x^2 / 2)`: `|a_{2m}| = 1 / (2^m m!)`, odd coefficients zero.
    Gaussian,
    /// `sin x`: every derivative has sup-norm 1.
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSpec {
    pub kind: SeriesKind,
    pub n_max: usize,
}

pub const SERIES_MAX_ORDER: usize = 200;

/// `v_n = n! |a_n|` for `n = 0..=n_max` (series kinds), or the sup-norm
/// sequence of `sin` (all ones).
pub fn series_norms(spec: &SeriesSpec) -> Result<DerivSeq, BenchError> {
    if spec.n_max > SERIES_MAX_ORDER {
        return Err(BenchError::OrderTooLarge { n_max: spec.n_max, limit: SERIES_MAX_ORDER });
    }
    let orders: Vec<usize> = (0..=spec.n_max).collect();
    let logs = orders
        .iter()
        .map(|&n| match spec.kind {
            SeriesKind::Geometric { a } => ln_factorial(n) + n as f64 * a.abs().ln(),
            SeriesKind::InvOneMinusXCubed => {
                if n % 3 == 0 {
                    ln_factorial(n)
                } else {
                    f64::NEG_INFINITY
                }
            }
            SeriesKind::Gaussian => {
                if n % 2 == 0 {
                    let m = n / 2;
                    ln_factorial(n) - m as f64 * 2f64.ln() - ln_factorial(m)
                } else {
                    f64::NEG_INFINITY
                }
            }
            SeriesKind::Sine => 0.0,
        })
        .collect();
    Ok(DerivSeq::from_log_norms(orders, logs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub num_points: usize,
}

impl Grid {
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.num_points).map(move |i| self.x_min + i as f64 * h)
    }

    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / (self.num_points - 1) as f64
    }

    pub fn len(&self) -> f64 {
        self.x_max - self.x_min
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self { x_min: -1.0, x_max: 1.0, num_points: 8192 }
    }
}

/// Real signal `f(x) = sum_j 2 Re(A_j exp(i w_j x))` (each tone paired
/// with its conjugate at `-w_j`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandlimitedSignal {
    pub omega_cut: f64,
    pub freqs: Vec<f64>,
    #[serde(skip)]
    pub amps: Vec<Complex64>,
    pub grid: Grid,
    pub seed: u64,
}

impl BandlimitedSignal {
    /// `D^n f(x)`, evaluated from the spectrum.
    pub fn derivative_at(&self, n: u32, x: f64) -> f64 {
        let i = Complex64::i();
        self.freqs
            .iter()
            .zip(&self.amps)
            .map(|(&w, &a)| 2.0 * ((i * w).powu(n) * a * Complex64::new(0.0, w * x).exp()).re)
            .sum()
    }
}

/// Random sparse spectrum on `[0, omega_cut]`.
///
/// Frequencies are placed on the lattice `2 pi k / L` of the grid length
/// `L`, so distinct tones are exactly orthogonal under the trapezoid rule
/// on the grid; this is the finite-domain correction that lets the top
/// derivative ratio converge to the edge. One tone is pinned to the largest
/// lattice frequency not above the cutoff, so the edge is always occupied.
/// When the lattice is too coarse to put a tone above `0.95 omega_cut`
/// (cutoffs under about 20 lattice spacings), the edge tone sits at the
/// cutoff itself and is no longer orthogonal to the others.
pub fn synthesize_bandlimited(
    omega_cut: f64,
    num_components: usize,
    grid: Grid,
    seed: u64,
) -> Result<BandlimitedSignal, BenchError> {
    if num_components < 8 {
        return Err(BenchError::Config(format!("need at least 8 components, got {num_components}")));
    }
    if !(omega_cut > 0.0) || !(grid.x_max > grid.x_min) {
        return Err(BenchError::Config("cutoff and grid extent must be positive".into()));
    }
    let nyquist = 4.0 * omega_cut * grid.len() / (2.0 * std::f64::consts::PI);
    if (grid.num_points as f64) <= nyquist {
        return Err(BenchError::Config(format!(
            "grid of {} points violates the Nyquist margin (need > {nyquist:.1})",
            grid.num_points
        )));
    }
    let base = 2.0 * std::f64::consts::PI / grid.len();
    let k_max = (omega_cut / base).floor() as u64;
    let edge = if (k_max as f64) * base > 0.95 * omega_cut { k_max as f64 * base } else { omega_cut };
    let mut rng = seeded(seed, crate::rng::Stream::Spectrum);
    let mut freqs = Vec::with_capacity(num_components);
    let mut amps = Vec::with_capacity(num_components);
    for j in 0..num_components {
        let w = match (j, k_max) {
            (0, _) => edge,
            (_, 0) => rng.random_range(0.0..=omega_cut),
            _ => rng.random_range(1..=k_max) as f64 * base,
        };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        freqs.push(w);
        amps.push(Complex64::from_polar(1.0, phase));
    }
    Ok(BandlimitedSignal { omega_cut, freqs, amps, grid, seed })
}

pub const SIGNAL_MAX_ORDER: usize = 16;

/// Trapezoid-weighted grid L2 norms of `D^n f` for `n = 0..=n_max`.
///
/// Each derivative is formed by multiplying amplitudes by `(i w)^n`; values
/// are computed relative to `omega_cut^n` and rescaled in log space.
pub fn signal_deriv_norms(sig: &BandlimitedSignal, n_max: usize) -> Result<DerivSeq, BenchError> {
    if n_max > SIGNAL_MAX_ORDER {
        return Err(BenchError::OrderTooLarge { n_max, limit: SIGNAL_MAX_ORDER });
    }
    let scale = sig.omega_cut;
    let h = sig.grid.step();
    let last = sig.grid.num_points - 1;
    let mut sums = vec![0.0; n_max + 1];
    // Per-tone spectral factor (i w / omega_cut)^n, advanced one order at a time.
    let steps: Vec<Complex64> = sig.freqs.iter().map(|&w| Complex64::new(0.0, w / scale)).collect();
    let mut terms = vec![Complex64::new(0.0, 0.0); sig.freqs.len()];
    for (p, x) in sig.grid.points().enumerate() {
        let weight = if p == 0 || p == last { 0.5 * h } else { h };
        for (t, (&w, &a)) in terms.iter_mut().zip(sig.freqs.iter().zip(&sig.amps)) {
            *t = a * Complex64::new(0.0, w * x).exp();
        }
        for s in sums.iter_mut() {
            let v: f64 = terms.iter().map(|t| 2.0 * t.re).sum();
            *s += weight * v * v;
            for (t, st) in terms.iter_mut().zip(&steps) {
                *t *= st;
            }
        }
    }
    let orders: Vec<usize> = (0..=n_max).collect();
    let logs = orders.iter().map(|&n| 0.5 * sums[n].ln() + n as f64 * scale.ln()).collect();
    Ok(DerivSeq::from_log_norms(orders, logs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lambda::{fit_lambda, radius_from_fit, FitMode, DEFAULT_EPSILON};

    #[test]
    fn geometric_radius() {
        for (a, r) in [(1.0, 1.0), (2.0, 0.5)] {
            let s = series_norms(&SeriesSpec { kind: SeriesKind::Geometric { a }, n_max: 60 }).unwrap();
            let fit = fit_lambda(&s, FitMode::Taylor, (0, 60), DEFAULT_EPSILON).unwrap();
            let est = radius_from_fit(&fit).unwrap();
            assert!((est - r).abs() / r < 1e-10, "a={a} est={est}");
        }
    }

    #[test]
    fn sine_is_flat() {
        let s = series_norms(&SeriesSpec { kind: SeriesKind::Sine, n_max: 8 }).unwrap();
        let fit = fit_lambda(&s, FitMode::Raw, (1, 8), DEFAULT_EPSILON).unwrap();
        assert_eq!(fit.lambda, 0.0);
    }

    #[test]
    fn gaussian_coefficients_decay() {
        let s = series_norms(&SeriesSpec { kind: SeriesKind::Gaussian, n_max: 20 }).unwrap();
        // Independent route: |a_{2m}| = 1 / (2^m m!) directly.
        let mut prev = f64::INFINITY;
        for m in 0..=10usize {
            let want = 1.0 / (2f64.powi(m as i32) * crate::autodiff::factorial(m));
            let got = (s.log_norms()[2 * m] - ln_factorial(2 * m)).exp();
            assert!((got - want).abs() / want < 1e-12);
            assert!(got < prev);
            prev = got;
        }
        let fit = fit_lambda(&s, FitMode::Taylor, (0, 20), DEFAULT_EPSILON).unwrap();
        assert!(fit.lambda < 0.0);
        assert_eq!(fit.n_excluded, 10);
    }

    #[test]
    fn series_order_bound() {
        let spec = SeriesSpec { kind: SeriesKind::Sine, n_max: 201 };
        assert!(matches!(series_norms(&spec), Err(BenchError::OrderTooLarge { .. })));
        let spec = SeriesSpec { kind: SeriesKind::Geometric { a: 1.0 }, n_max: 200 };
        let s = series_norms(&spec).unwrap();
        assert!(s.log_norms().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn synthesis_contracts() {
        let sig = synthesize_bandlimited(450.0, 64, Grid::default(), 1).unwrap();
        let top = sig.freqs.iter().cloned().fold(0.0, f64::max);
        assert!(top >= 0.95 * 450.0 && top <= 450.0);
        let small = synthesize_bandlimited(10.0, 8, Grid { x_min: -10.0, x_max: 10.0, num_points: 512 }, 3).unwrap();
        assert!(small.freqs.iter().all(|w| w.abs() <= 10.0));
        let again = synthesize_bandlimited(450.0, 64, Grid::default(), 1).unwrap();
        assert_eq!(sig, again);
        assert_eq!(sig.amps, again.amps);
    }

    #[test]
    fn synthesis_rejects_bad_configs() {
        let coarse = Grid { x_min: -1.0, x_max: 1.0, num_points: 500 };
        assert!(matches!(synthesize_bandlimited(450.0, 64, coarse, 1), Err(BenchError::Config(_))));
        assert!(synthesize_bandlimited(450.0, 4, Grid::default(), 1).is_err());
        assert!(synthesize_bandlimited(450.0, 64, Grid::default(), 1).is_ok());
    }

    #[test]
    fn single_tone_ratio_is_exact() {
        let grid = Grid { x_min: -1.0, x_max: 1.0, num_points: 2048 };
        let w = 20.0 * std::f64::consts::PI;
        let sig = BandlimitedSignal {
            omega_cut: 70.0,
            freqs: vec![w],
            amps: vec![Complex64::from_polar(1.0, 0.4)],
            grid,
            seed: 0,
        };
        let s = signal_deriv_norms(&sig, 8).unwrap();
        for n in 1..=8 {
            let ratio = s.log_norms()[n] - s.log_norms()[0];
            assert!((ratio - n as f64 * w.ln()).abs() < 1e-9);
        }
    }
}
