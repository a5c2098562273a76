//! Estimate the spectral edge of random band-limited signals.
use curvrate::analytic_bench::{signal_deriv_norms, synthesize_bandlimited, Grid};
use curvrate::lambda::{spectral_edge, EdgeMethod};

fn main() {
    let omega: f64 = std::env::args().nth(1).map_or(450.0, |s| s.parse().expect("cutoff"));
    println!("cutoff {omega}");
    for seed in 1..=5 {
        let sig = synthesize_bandlimited(omega, 64, Grid::default(), seed).unwrap();
        let seq = signal_deriv_norms(&sig, 16).unwrap();
        let est = |m| spectral_edge(&seq, m).unwrap();
        println!(
            "seed {seed}: slope {:8.2}  ratio {:8.2}  edge-corrected {:8.2}",
            est(EdgeMethod::Slope),
            est(EdgeMethod::Ratio),
            est(EdgeMethod::EdgeCorrected)
        );
    }
}
