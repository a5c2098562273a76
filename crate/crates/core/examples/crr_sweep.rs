//! Sweep the CRR scale through the harness and print the summary table.
use curvrate::cli::{run, Experiment, RunConfig, SweepAxis, SweepSection};
use serde_json::json;

fn main() {
    let out = std::env::temp_dir().join("curvrate-crr-sweep");
    let mut cfg = RunConfig { experiment: Experiment::Sweep, seeds: vec![0, 1, 2], output_dir: out, ..RunConfig::default() };
    cfg.moons.label_noise = 0.3;
    cfg.sweep = Some(SweepSection {
        base: Experiment::Twomoons,
        axis: SweepAxis::CrrScale,
        values: vec![json!(0.0), json!(0.002), json!(0.005), json!(0.01)],
    });
    let art = run(cfg).unwrap();
    print!("{}", std::fs::read_to_string(&art.summary).unwrap());
}
