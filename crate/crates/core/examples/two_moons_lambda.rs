//! Track λ while training on Two Moons with and without curvature regularisation.
use curvrate::data::{gen_two_moons_split, MoonsConfig};
use curvrate::train::{train_run, CrrConfig, EvalSpec, TrainConfig, TrainMode};

fn main() {
    let seed = 0;
    let mc = MoonsConfig { n_samples: 2000, noise_sigma: 0.2, label_noise: 0.3, seed };
    let (train, test) = gen_two_moons_split(&mc, 1000).unwrap();
    for (name, mode) in [
        ("baseline", TrainMode::Baseline),
        ("crr 0.003", TrainMode::Crr(CrrConfig { scale: 0.003, ..CrrConfig::default() })),
    ] {
        let cfg = TrainConfig { mode, ..TrainConfig::two_moons(seed) };
        let out = train_run(&cfg, &train, &test, &EvalSpec::default()).unwrap();
        println!("{name}");
        for r in out.records.iter().filter(|r| r.epoch % 5 == 0) {
            println!("  epoch {:3}  error {:.3}  ece {:.3}  lambda {:.3}", r.epoch, r.test_error, r.ece, r.lambda.unwrap_or(f64::NAN));
        }
    }
}
