use curvrate::autodiff::Tape;
use curvrate::nn::{
    forward, head_jets, init_params, input_gradient, jet_backward, jet_forward, loss, loss_and_grad, record_on_tape,
    scalar_head_jet, softmax, Activation, Batch, Head, ModelParams,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Plain nested-loop evaluation, independent of the ndarray path.
fn reference_forward(p: &ModelParams, x: &[f64]) -> Vec<f64> {
    let dims = p.layer_dims();
    let flat = p.flat();
    let mut off = 0;
    let mut h = x.to_vec();
    for l in 0..dims.len() - 1 {
        let (din, dout) = (dims[l], dims[l + 1]);
        let mut z = vec![0.0; dout];
        for o in 0..dout {
            let mut acc = flat[off + din * dout + o];
            for i in 0..din {
                acc += flat[off + o * din + i] * h[i];
            }
            z[o] = if l + 2 < dims.len() {
                match p.activation() {
                    Activation::Tanh => acc.tanh(),
                    Activation::Softplus => (1.0 + acc.exp()).ln(),
                }
            } else {
                acc
            };
        }
        off += din * dout + dout;
        h = z;
    }
    h
}

#[test]
fn init_is_deterministic_and_bounded() {
    let a = init_params(&[2, 4, 2], Activation::Tanh, 7).unwrap();
    let b = init_params(&[2, 4, 2], Activation::Tanh, 7).unwrap();
    assert_eq!(a.flat(), b.flat());
    assert_eq!(a.flat().len(), 2 * 4 + 4 + 4 * 2 + 2);
    let c = init_params(&[2, 4, 2], Activation::Tanh, 8).unwrap();
    assert_ne!(a.flat(), c.flat());
    for l in 0..a.num_layers() {
        assert!(a.bias(l).iter().all(|&v| v == 0.0));
        let (dout, din) = a.weight(l).dim();
        let bound = (6.0 / (din + dout) as f64).sqrt();
        assert!(a.weight(l).iter().all(|w| w.abs() <= bound));
    }
    assert!(init_params(&[3], Activation::Tanh, 0).is_err());
    assert!(init_params(&[3, 0, 2], Activation::Tanh, 0).is_err());
}

#[test]
fn zero_and_identity_networks() {
    let z = ModelParams::zeros(vec![3, 5, 4], Activation::Tanh).unwrap();
    let x = random_matrix(6, 3, 1);
    let probs = softmax(forward(&z, x.view()).unwrap().view());
    assert!(probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));

    let mut id = ModelParams::zeros(vec![3, 3], Activation::Tanh).unwrap();
    for i in 0..3 {
        id.weight_mut(0)[[i, i]] = 1.0;
    }
    assert_eq!(forward(&id, x.view()).unwrap(), x);
    assert!(forward(&id, random_matrix(2, 4, 0).view()).is_err());
}

#[test]
fn forward_matches_loop_reference() {
    for act in [Activation::Tanh, Activation::Softplus] {
        let p = init_params(&[4, 7, 5, 3], act, 11).unwrap();
        let x = random_matrix(9, 4, 2);
        let out = forward(&p, x.view()).unwrap();
        for r in 0..9 {
            let want = reference_forward(&p, x.row(r).as_slice().unwrap());
            for c in 0..3 {
                assert!((out[[r, c]] - want[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let logits = random_matrix(20, 5, 3) * 8.0;
    let p = softmax(logits.view());
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn uniform_logits_give_log_classes() {
    let z = ModelParams::zeros(vec![2, 3, 5], Activation::Tanh).unwrap();
    let b = Batch::new(random_matrix(4, 2, 4), vec![0, 1, 4, 2]).unwrap();
    let (l, _) = loss_and_grad(&z, &b).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-14);
    let bad = Batch::new(random_matrix(2, 2, 4), vec![0, 5]).unwrap();
    assert!(loss_and_grad(&z, &bad).is_err());
}

#[test]
fn loss_gradient_matches_central_differences() {
    for act in [Activation::Tanh, Activation::Softplus] {
        let p = init_params(&[2, 8, 2], act, 5).unwrap();
        let mut p = p;
        for (i, v) in p.flat_mut().iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 0.7).sin();
        }
        let b = Batch::new(random_matrix(12, 2, 6), (0..12).map(|i| i % 2).collect()).unwrap();
        let (_, g) = loss_and_grad(&p, &b).unwrap();
        let h = 1e-5;
        for i in 0..p.flat().len() {
            let mut plus = p.clone();
            plus.flat_mut()[i] += h;
            let mut minus = p.clone();
            minus.flat_mut()[i] -= h;
            let fd = (loss(&plus, &b).unwrap() - loss(&minus, &b).unwrap()) / (2.0 * h);
            let err = (g[i] - fd).abs() / fd.abs().max(1e-3);
            assert!(err < 1e-5, "{act:?} param {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn duplicated_batch_has_same_loss_and_gradient() {
    let p = init_params(&[3, 6, 3], Activation::Tanh, 9).unwrap();
    let x = random_matrix(5, 3, 7);
    let y = vec![0, 2, 1, 1, 0];
    let b = Batch::new(x.clone(), y.clone()).unwrap();
    let doubled =
        Batch::new(ndarray::concatenate![ndarray::Axis(0), x, x], y.iter().chain(&y).copied().collect()).unwrap();
    let (l1, g1) = loss_and_grad(&p, &b).unwrap();
    let (l2, g2) = loss_and_grad(&p, &doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn linear_network_has_no_curvature() {
    let p = init_params(&[3, 2], Activation::Tanh, 1).unwrap();
    let u = unit(&[1.0, -2.0, 0.5]);
    let j = scalar_head_jet(&p, &[0.2, 0.4, -0.1], &u, 5, Head::Logit(1), None).unwrap();
    assert!(j.coeffs()[2..].iter().all(|&c| c == 0.0));
}

#[test]
fn first_coefficient_is_input_gradient() {
    let p = init_params(&[3, 6, 6, 4], Activation::Tanh, 2).unwrap();
    let x = [0.3, -0.8, 1.1];
    let u = unit(&[0.2, 1.0, -0.4]);
    let j = scalar_head_jet(&p, &x, &u, 4, Head::Loss, Some(2)).unwrap();
    let b = Batch::new(array![[x[0], x[1], x[2]]], vec![2]).unwrap();
    let g = input_gradient(&p, &b).unwrap();
    let dot: f64 = g.row(0).iter().zip(&u).map(|(a, b)| a * b).sum();
    assert!((j.coeffs()[1] - dot).abs() / dot.abs() < 1e-10);
}

#[test]
fn single_hidden_unit_matches_symbolic_derivatives() {
    // f(x) = v tanh(w . x + b) + c
    let (w, b, v, c) = ([0.7, -1.3], 0.25, 1.8, -0.4);
    let p = ModelParams::from_flat(vec![2, 1, 1], Activation::Tanh, vec![w[0], w[1], b, v, c]).unwrap();
    let x = [0.5, 0.2];
    let u = unit(&[0.6, 0.8]);
    let a = w[0] * x[0] + w[1] * x[1] + b;
    let s = w[0] * u[0] + w[1] * u[1];
    let y = a.tanh();
    let d1 = 1.0 - y * y;
    let derivs = [y, d1, -2.0 * y * d1, (6.0 * y * y - 2.0) * d1, (16.0 * y - 24.0 * y * y * y) * d1];
    let j = scalar_head_jet(&p, &x, &u, 4, Head::Logit(0), None).unwrap();
    for n in 0..=4 {
        let want = if n == 0 { v * y + c } else { v * s.powi(n as i32) * derivs[n] };
        let got = j.derivative(n).unwrap();
        assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "n={n}: {got} vs {want}");
    }
}

#[test]
fn jet_value_equals_real_forward() {
    let p = init_params(&[3, 8, 8, 3], Activation::Softplus, 4).unwrap();
    let x = random_matrix(6, 3, 9);
    let u = random_matrix(6, 3, 10);
    let fwd = jet_forward(&p, x.view(), u.view(), 4).unwrap();
    let logits = forward(&p, x.view()).unwrap();
    assert_eq!(fwd.logit_planes()[0], logits);
    let labels = vec![0, 1, 2, 2, 1, 0];
    let jets = head_jets(&fwd, Head::Loss, Some(&labels)).unwrap();
    for r in 0..6 {
        let single = Batch::new(x.slice(ndarray::s![r..r + 1, ..]).to_owned(), vec![labels[r]]).unwrap();
        assert_eq!(jets[r].value(), loss(&p, &single).unwrap());
    }
}

#[test]
fn hidden_permutation_leaves_outputs_unchanged() {
    let p = init_params(&[2, 5, 3], Activation::Tanh, 3).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let mut q = p.clone();
    for (new, &old) in perm.iter().enumerate() {
        for i in 0..2 {
            q.weight_mut(0)[[new, i]] = p.weight(0)[[old, i]];
        }
        q.bias_mut(0)[new] = p.bias(0)[old];
        for o in 0..3 {
            q.weight_mut(1)[[o, new]] = p.weight(1)[[o, old]];
        }
    }
    let x = [0.4, -0.9];
    let u = unit(&[1.0, 1.0]);
    let a = scalar_head_jet(&p, &x, &u, 4, Head::MaxLogit, None).unwrap();
    let b = scalar_head_jet(&q, &x, &u, 4, Head::MaxLogit, None).unwrap();
    for (s, t) in a.coeffs().iter().zip(b.coeffs()) {
        assert!((s - t).abs() < 1e-12 * (1.0 + s.abs()));
    }
}

fn tape_grad(p: &ModelParams, x: &[f64], u: &[f64], head: Head, label: Option<usize>, n: usize) -> Vec<f64> {
    let mut tape = Tape::new(4).unwrap();
    let (theta, out) = record_on_tape(p, &mut tape, x, u, head, label).unwrap();
    tape.grad_of_coefficient(out, n, &theta).unwrap()
}

#[test]
fn batched_backward_matches_tape() {
    for act in [Activation::Tanh, Activation::Softplus] {
        let p = init_params(&[2, 6, 5, 3], act, 21).unwrap();
        let x = [0.3, -0.6];
        let u = unit(&[-0.3, 0.9]);
        for head in [Head::Loss, Head::MaxLogit, Head::Logit(2)] {
            let label = Some(1);
            for n in 0..=4 {
                let want = tape_grad(&p, &x, &u, head, label, n);
                let xm = array![[x[0], x[1]]];
                let um = array![[u[0], u[1]]];
                let fwd = jet_forward(&p, xm.view(), um.view(), 4).unwrap();
                let mut seed = vec![vec![0.0; 5]];
                seed[0][n] = 1.0;
                let got = jet_backward(&p, &fwd, head, Some(&[1]), &seed).unwrap();
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-11 * (1.0 + w.abs()), "{act:?} {head:?} n={n}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn coefficient_gradient_matches_central_differences() {
    let p = init_params(&[2, 8, 2], Activation::Tanh, 33).unwrap();
    let x = [0.7, 0.1];
    let u = unit(&[0.5, -1.0]);
    let coeff = |q: &ModelParams| scalar_head_jet(q, &x, &u, 4, Head::Loss, Some(0)).unwrap().coeffs()[2];
    let g = tape_grad(&p, &x, &u, Head::Loss, Some(0), 2);
    let h = 1e-4;
    for i in 0..p.flat().len() {
        let mut plus = p.clone();
        plus.flat_mut()[i] += h;
        let mut minus = p.clone();
        minus.flat_mut()[i] -= h;
        let fd = (coeff(&plus) - coeff(&minus)) / (2.0 * h);
        let err = (g[i] - fd).abs() / fd.abs().max(1e-4);
        assert!(err < 1e-4, "param {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let p = init_params(&[3, 4, 2], Activation::Softplus, 12).unwrap();
    let mut bytes = Vec::new();
    p.write_checkpoint(&mut bytes).unwrap();
    assert_eq!(&bytes[..5], b"CRVR1");
    assert_eq!(bytes.len(), 5 + 4 + 3 * 4 + 1 + p.flat().len() * 8);
    let back = ModelParams::read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(back, p);

    let mut bad = bytes.clone();
    bad[4] = b'2';
    assert!(ModelParams::read_checkpoint(bad.as_slice()).is_err());
    let short = &bytes[..bytes.len() - 3];
    assert!(ModelParams::read_checkpoint(short).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.crvr");
    p.save(&path).unwrap();
    assert_eq!(ModelParams::load(&path).unwrap(), p);
}
