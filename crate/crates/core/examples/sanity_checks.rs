//! Recover convergence radii from exact Taylor coefficients.
use curvrate::analytic_bench::{series_norms, SeriesKind, SeriesSpec};
use curvrate::lambda::{fit_lambda, radius_from_fit, FitMode, DEFAULT_EPSILON};

fn main() {
    for (name, kind, truth) in [
        ("1/(1-x)", SeriesKind::Geometric { a: 1.0 }, 1.0),
        ("1/(1-2x)", SeriesKind::Geometric { a: 2.0 }, 0.5),
        ("1/(1-x^3)", SeriesKind::InvOneMinusXCubed, 1.0),
    ] {
        let seq = series_norms(&SeriesSpec { kind, n_max: 60 }).unwrap();
        let fit = fit_lambda(&seq, FitMode::Taylor, (0, 60), DEFAULT_EPSILON).unwrap();
        let r = radius_from_fit(&fit).unwrap();
        println!("{name:10} lambda {:+.6}  radius {r:.6} (true {truth})  zeros skipped {}", fit.lambda, fit.n_excluded);
    }
    let sine = series_norms(&SeriesSpec { kind: SeriesKind::Sine, n_max: 8 }).unwrap();
    let fit = fit_lambda(&sine, FitMode::Raw, (1, 8), DEFAULT_EPSILON).unwrap();
    println!("sin(x)     raw lambda {:e}", fit.lambda);
}
