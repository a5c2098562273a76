//! Taylor jets: Maclaurin coefficients and directional derivatives of a network.
use curvrate::autodiff::{factorial, jet_fn, Jet, JetFn};
use curvrate::nn::{init_params, jet_forward, head_jets, Activation, Head};
use ndarray::array;

fn main() {
    let t = Jet::lift(0.0, 1.0, 8).unwrap();
    for f in [JetFn::Exp, JetFn::Sin, JetFn::Tanh] {
        let c = jet_fn(f, &t).unwrap();
        println!("{f:?}: {:?}", c.coeffs().iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>());
    }
    let params = init_params(&[2, 16, 16, 2], Activation::Tanh, 0).unwrap();
    let x = array![[0.5, 0.25]];
    let v = array![[1.0, 0.0]];
    let fwd = jet_forward(&params, x.view(), v.view(), 6).unwrap();
    let jets = head_jets(&fwd, Head::MaxLogit, None).unwrap();
    for (n, c) in jets[0].coeffs().iter().enumerate() {
        println!("d^{n} max-logit along e1: {:+.4e}", c * factorial(n));
    }
}
