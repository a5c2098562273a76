use approx::assert_abs_diff_eq;
use curvrate::metrics::{
    confidences, ece, effect_size_regression, hard_quantile_accuracy, pair_confusion, select_boundary_points,
    test_error, BoundaryBand, MetricsError, DEFAULT_BOOTSTRAP, DEFAULT_ECE_BINS,
};
use curvrate::nn::softmax;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binary(conf: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((conf.len(), 2), |(i, j)| if j == 0 { conf[i] } else { 1.0 - conf[i] })
}

#[test]
fn error_extremes_and_direct_count() {
    let p = binary(&[0.9, 0.8, 0.7]);
    assert_eq!(test_error(p.view(), &[0, 0, 0]).unwrap(), 0.0);
    assert_eq!(test_error(p.view(), &[1, 1, 1]).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 30_000;
    let p = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let direct = (0..n)
        .filter(|&i| {
            let r = p.row(i);
            let best = (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b });
            best != y[i]
        })
        .count() as f64
        / n as f64;
    let e = test_error(p.view(), &y).unwrap();
    assert_eq!(e, direct);
    assert!((e - 2.0 / 3.0).abs() < 0.01);
}

#[test]
fn confident_everywhere_gives_one_minus_accuracy() {
    let p = binary(&[1.0; 10]);
    let y = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
    assert_abs_diff_eq!(ece(p.view(), &y, DEFAULT_ECE_BINS).unwrap().ece, 0.3, epsilon = 1e-15);
}

#[test]
fn two_bin_hand_fixture() {
    let mut conf = vec![0.6; 10];
    conf.extend([0.9; 10]);
    let p = binary(&conf);
    let mut y = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    y.extend([0; 10]);
    let r = ece(p.view(), &y, DEFAULT_ECE_BINS).unwrap();
    assert_abs_diff_eq!(r.ece, 0.1, epsilon = 1e-12);
    let used: Vec<_> = r.bins.iter().filter(|b| b.count > 0).collect();
    assert_eq!(used.len(), 2);
    assert_abs_diff_eq!(used[0].accuracy, 0.5);
    assert_abs_diff_eq!(used[1].accuracy, 1.0);
}

#[test]
fn calibrated_bins_give_zero() {
    // 0.55: 11 of 20 right; 0.75: 15 of 20; 0.95: 19 of 20.
    let mut conf = Vec::new();
    let mut y = Vec::new();
    for (c, right) in [(0.55, 11), (0.75, 15), (0.95, 19)] {
        for k in 0..20 {
            conf.push(c);
            y.push(usize::from(k >= right));
        }
    }
    let p = binary(&conf);
    assert_abs_diff_eq!(ece(p.view(), &y, 15).unwrap().ece, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(ece(p.view(), &y, 30).unwrap().ece, 0.0, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn ece_is_a_fraction(conf in prop::collection::vec(0.5f64..=1.0, 1..60), seed in any::<u64>(), bins in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = conf.iter().map(|_| rng.random_range(0..2)).collect();
        let e = ece(binary(&conf).view(), &y, bins).unwrap().ece;
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn wider_band_keeps_narrower_selection(conf in prop::collection::vec(0.5f64..=1.0, 1..80)) {
        let p = binary(&conf);
        let narrow = select_boundary_points(p.view(), BoundaryBand::new(0.45, 0.65).unwrap(), 0).unwrap();
        let wide = select_boundary_points(p.view(), BoundaryBand::new(0.40, 0.70).unwrap(), 0).unwrap();
        prop_assert!(narrow.iter().all(|i| wide.contains(i)));
    }

    #[test]
    fn temperature_keeps_error(logits in prop::collection::vec(-5.0f64..5.0, 3..45), t in 0.1f64..10.0) {
        let n = logits.len() / 3;
        let z = Array2::from_shape_vec((n, 3), logits[..3 * n].to_vec()).unwrap();
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let a = test_error(softmax(z.view()).view(), &y).unwrap();
        let b = test_error(softmax((&z * t).view()).view(), &y).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn boundary_fallback_and_membership() {
    let mut conf = vec![0.99; 30];
    conf[7] = 0.98;
    let p = binary(&conf);
    let sel = select_boundary_points(p.view(), BoundaryBand::default(), 10).unwrap();
    assert_eq!(sel.len(), 10);
    assert!(sel.contains(&7));
    let mut conf = vec![0.99; 30];
    conf[12] = 0.5;
    let sel = select_boundary_points(binary(&conf).view(), BoundaryBand::default(), 1).unwrap();
    assert_eq!(sel, vec![12]);
    let empty = Array2::<f64>::zeros((0, 2));
    assert!(matches!(select_boundary_points(empty.view(), BoundaryBand::default(), 10), Err(MetricsError::Empty)));
}

#[test]
fn hard_quantile_fixtures() {
    let mut conf = vec![0.95; 10];
    conf[3] = 0.55;
    conf[8] = 0.6;
    let mut y = vec![0; 10];
    y[3] = 1;
    y[8] = 1;
    let p = binary(&conf);
    assert_eq!(hard_quantile_accuracy(p.view(), &y, 0.2).unwrap(), 0.0);
    assert_eq!(hard_quantile_accuracy(p.view(), &y, 1.0).unwrap(), 1.0 - test_error(p.view(), &y).unwrap());
    // Equal confidences: the first ceil(qN) indices decide.
    let flat = binary(&[0.7; 10]);
    let y = [0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
    assert_eq!(hard_quantile_accuracy(flat.view(), &y, 0.2).unwrap(), 1.0);
    assert_eq!(hard_quantile_accuracy(flat.view(), &y, 0.3).unwrap(), 2.0 / 3.0);
}

#[test]
fn pair_confusion_counts() {
    let y = [4, 4, 4, 4, 9, 9, 9, 1];
    let p = [4, 9, 9, 1, 9, 4, 9, 1];
    assert_eq!(pair_confusion(&p, &y, (4, 9)).unwrap(), (0.5, 1.0 / 3.0));
    assert_eq!(pair_confusion(&[9, 9], &[4, 9], (4, 9)).unwrap(), (1.0, 0.0));
    assert!(matches!(pair_confusion(&p, &y, (4, 7)), Err(MetricsError::ClassAbsent(7))));
}

fn noisy_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    ((0..n).map(|_| rng.random::<f64>()).collect(), (0..n).map(|_| rng.random::<f64>()).collect())
}

#[test]
fn exact_linear_data_collapses_the_interval() {
    let l: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
    let e: Vec<f64> = l.iter().map(|x| 2.0 * x + 5.0).collect();
    let r = effect_size_regression(&l, &e, DEFAULT_BOOTSTRAP, 1).unwrap();
    assert_abs_diff_eq!(r.slope, 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.ci_lo, 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(r.ci_hi, 2.0, epsilon = 1e-9);
}

#[test]
fn slope_ignores_offsets_and_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (l, e) = noisy_pairs(&mut rng, 25);
    let base = effect_size_regression(&l, &e, 200, 3).unwrap().slope;
    let shifted: Vec<f64> = e.iter().map(|x| x + 17.0).collect();
    assert_abs_diff_eq!(effect_size_regression(&l, &shifted, 200, 3).unwrap().slope, base, epsilon = 1e-12);
    let (lr, er): (Vec<f64>, Vec<f64>) = l.iter().zip(&e).rev().map(|(a, b)| (*a, *b)).unzip();
    assert_abs_diff_eq!(effect_size_regression(&lr, &er, 200, 3).unwrap().slope, base, epsilon = 1e-12);
}

#[test]
fn independent_noise_straddles_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 60;
    let straddle = (0..trials)
        .filter(|&t| {
            let (l, e) = noisy_pairs(&mut rng, 30);
            let r = effect_size_regression(&l, &e, DEFAULT_BOOTSTRAP, t).unwrap();
            r.ci_lo <= 0.0 && r.ci_hi >= 0.0
        })
        .count();
    assert!(straddle as f64 >= 0.9 * trials as f64, "{straddle}/{trials}");
}

#[test]
fn degenerate_regressions_are_rejected() {
    assert!(matches!(effect_size_regression(&[1.0; 12], &[0.0; 12], 10, 0), Err(MetricsError::Degenerate(_))));
    assert!(effect_size_regression(&[1.0, 2.0], &[0.0, 1.0], 10, 0).is_err());
}

#[test]
fn confidences_are_row_maxima() {
    let p = Array2::from_shape_vec((2, 3), vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]).unwrap();
    let v: ArrayView2<f64> = p.view();
    assert_eq!(confidences(v), vec![0.5, 0.6]);
}
