//! Experiment harness: TOML configs with flag overrides, seeded runs, and
//! `epochs.jsonl` / `summary.csv` / `config.resolved.json` output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytic_bench::{
    series_norms, signal_deriv_norms, synthesize_bandlimited, BenchError, Grid, SeriesKind, SeriesSpec,
};
use crate::data::{gen_two_moons_split, glyph_dataset, load_idx_dataset, shape_dataset, DataError, Dataset, MoonsConfig};
use crate::lambda::{fit_lambda, radius_from_fit, spectral_edge, EdgeMethod, FitMode, LambdaError, LambdaFit};
use crate::metrics::{
    confidences, ece, hard_quantile_accuracy, pair_confusion, test_error, BoundaryBand, MetricsError, DEFAULT_ECE_BINS,
};
use crate::nn::{argmax_rows, predict_proba, Activation, Head};
use crate::rng::{seeded_at, Stream};
use crate::train::{
    measure_lambda, random_directions, train_run, CrrConfig, EpochRecord, EvalSpec, SamConfig, TrainConfig,
    TrainError, TrainMode, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run {run_id}: {source}")]
    Numeric { run_id: String, source: Box<dyn std::error::Error + Send + Sync> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Numeric { .. } => 2,
            _ => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Errors inside a run: configuration problems stay exit-1, the rest are
/// attributed to the run.
fn run_err(run_id: &str, e: TrainError) -> HarnessError {
    match e {
        TrainError::Config(m) => HarnessError::Config(format!("{run_id}: {m}")),
        other => HarnessError::Numeric { run_id: run_id.into(), source: Box::new(other) },
    }
}

fn numeric(run_id: &str, e: impl std::error::Error + Send + Sync + 'static) -> HarnessError {
    HarnessError::Numeric { run_id: run_id.into(), source: Box::new(e) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sanity,
    Bandlimited,
    Twomoons,
    Image,
    Sweep,
    SamCompare,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Sanity => "sanity",
            Experiment::Bandlimited => "bandlimited",
            Experiment::Twomoons => "twomoons",
            Experiment::Image => "image",
            Experiment::Sweep => "sweep",
            Experiment::SamCompare => "sam-compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsSection {
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub label_noise: f64,
}

impl Default for MoonsSection {
    fn default() -> Self {
        Self { n_train: 2000, n_test: 1000, noise_sigma: 0.2, label_noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    /// IDX files; when absent, synthetic glyph sets are generated.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub pair: Option<(usize, usize)>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub data_seed: u64,
    pub hard_quantile: f64,
    /// Class pairs for the per-pair λ columns of `sam-compare`.
    pub lambda_pairs: Vec<(usize, usize)>,
}

impl Default for ImageSection {
    fn default() -> Self {
        Self {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            subset: Some(5000),
            test_subset: Some(1000),
            pair: None,
            synthetic_train: 5000,
            synthetic_test: 1000,
            data_seed: 0,
            hard_quantile: 0.2,
            lambda_pairs: vec![(4, 9), (3, 8), (6, 7)],
        }
    }
}

/// Unset fields take the experiment's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
}

/// `band = "all"` measures on every evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandSetting {
    Range(f64, f64),
    Keyword(BandKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKeyword {
    All,
}

impl BandSetting {
    fn to_band(self) -> Result<Option<BoundaryBand>, HarnessError> {
        match self {
            BandSetting::Range(lo, hi) => Ok(Some(BoundaryBand::new(lo, hi).map_err(config_err)?)),
            BandSetting::Keyword(BandKeyword::All) => Ok(None),
        }
    }

    fn label(self) -> String {
        match self {
            BandSetting::Range(lo, hi) => format!("{lo}-{hi}"),
            BandSetting::Keyword(_) => "all".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub fit_orders: Option<(usize, usize)>,
    pub band: Option<BandSetting>,
    pub directions: Option<usize>,
    pub head: Option<Head>,
    pub max_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanitySection {
    pub n_max: usize,
    pub sine_orders: (usize, usize),
    pub gaussian_n_max: usize,
}

impl Default for SanitySection {
    fn default() -> Self {
        Self { n_max: 60, sine_orders: (1, 8), gaussian_n_max: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandlimitedSection {
    pub omega: f64,
    pub components: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub num_points: usize,
    pub n_max: usize,
}

impl Default for BandlimitedSection {
    fn default() -> Self {
        let g = Grid::default();
        Self { omega: 450.0, components: 64, x_min: g.x_min, x_max: g.x_max, num_points: g.num_points, n_max: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    CrrScale,
    CrrOrders,
    Band,
    Directions,
    MaxOrder,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::CrrScale => "crr_scale",
            SweepAxis::CrrOrders => "crr_orders",
            SweepAxis::Band => "band",
            SweepAxis::Directions => "directions",
            SweepAxis::MaxOrder => "max_order",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub base: Experiment,
    pub axis: SweepAxis,
    pub values: Vec<Value>,
}

/// A fully described experiment. Every run is determined by this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub moons: MoonsSection,
    pub image: ImageSection,
    pub train: TrainSection,
    pub crr: CrrConfig,
    pub sam: SamConfig,
    pub eval: EvalSection,
    pub sanity: SanitySection,
    pub bandlimited: BandlimitedSection,
    pub sweep: Option<SweepSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Twomoons,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            jobs: 1,
            moons: MoonsSection::default(),
            image: ImageSection::default(),
            train: TrainSection::default(),
            crr: CrrConfig::default(),
            sam: SamConfig::default(),
            eval: EvalSection::default(),
            sanity: SanitySection::default(),
            bandlimited: BandlimitedSection::default(),
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(config_err)
    }

    /// Reads a TOML config, or a JSON one (such as `config.resolved.json`)
    /// when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            return serde_json::from_str(&text).map_err(config_err);
        }
        Self::from_toml(&text)
    }

    /// Experiment whose training defaults apply (the sweep base for sweeps).
    fn base_experiment(&self) -> Experiment {
        match (&self.experiment, &self.sweep) {
            (Experiment::Sweep, Some(s)) => s.base,
            (e, _) => *e,
        }
    }

    /// Fills every experiment-dependent default so the result can be
    /// re-run verbatim.
    pub fn resolve(mut self) -> Result<Self, HarnessError> {
        let base = self.base_experiment();
        let image = matches!(base, Experiment::Image | Experiment::SamCompare);
        let d = if image { TrainConfig::image(0) } else { TrainConfig::two_moons(0) };
        let t = &mut self.train;
        t.epochs.get_or_insert(d.epochs);
        t.batch_size.get_or_insert(d.batch_size);
        t.lr.get_or_insert(d.lr);
        t.hidden.get_or_insert_with(|| d.layer_dims[1..d.layer_dims.len() - 1].to_vec());
        t.activation.get_or_insert(d.activation);
        let e = &mut self.eval;
        e.fit_orders.get_or_insert((1, 4));
        e.band.get_or_insert(if image { BandSetting::Keyword(BandKeyword::All) } else { BandSetting::Range(0.45, 0.65) });
        e.directions.get_or_insert(if image { 2 } else { 4 });
        e.head.get_or_insert(Head::Loss);
        e.max_points.get_or_insert(200);
        if image && self.crr.orders == CrrConfig::default().orders {
            self.crr.orders = vec![2, 3, 4];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(config_err("no seeds"));
        }
        if self.jobs == 0 {
            return Err(config_err("jobs must be >= 1"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_err("duplicate seeds"));
        }
        match (&self.experiment, &self.sweep) {
            (Experiment::Sweep, None) => return Err(config_err("sweep experiment needs a [sweep] section")),
            (Experiment::Sweep, Some(s)) => {
                if s.values.is_empty() {
                    return Err(config_err("sweep values list is empty"));
                }
                if !matches!(s.base, Experiment::Twomoons | Experiment::Image) {
                    return Err(config_err("sweep base must be twomoons or image"));
                }
                sweep_points(s)?;
            }
            _ => {}
        }
        self.eval_spec()?.validate().map_err(config_err)?;
        self.crr.validate().map_err(config_err)?;
        if matches!(self.experiment, Experiment::SamCompare) {
            self.sam.validate().map_err(config_err)?;
        }
        Ok(())
    }

    fn eval_spec(&self) -> Result<EvalSpec, HarnessError> {
        let e = &self.eval;
        let unresolved = || config_err("eval section not resolved");
        Ok(EvalSpec {
            fit_orders: e.fit_orders.ok_or_else(unresolved)?,
            band: e.band.ok_or_else(unresolved)?.to_band()?,
            directions: e.directions.ok_or_else(unresolved)?,
            head: e.head.ok_or_else(unresolved)?,
            max_points: e.max_points.ok_or_else(unresolved)?,
        })
    }

    fn train_config(&self, seed: u64, input: usize, classes: usize, mode: TrainMode) -> Result<TrainConfig, HarnessError> {
        let t = &self.train;
        let unresolved = || config_err("train section not resolved");
        let mut dims = vec![input];
        dims.extend(t.hidden.clone().ok_or_else(unresolved)?);
        dims.push(classes);
        Ok(TrainConfig {
            layer_dims: dims,
            activation: t.activation.ok_or_else(unresolved)?,
            epochs: t.epochs.ok_or_else(unresolved)?,
            batch_size: t.batch_size.ok_or_else(unresolved)?,
            lr: t.lr.ok_or_else(unresolved)?,
            seed,
            mode,
        })
    }

    fn crr_mode(&self) -> TrainMode {
        if self.crr.scale > 0.0 {
            TrainMode::Crr(self.crr.clone())
        } else {
            TrainMode::Baseline
        }
    }
}

/// One point along a sweep axis.
#[derive(Debug, Clone, PartialEq)]
enum SweepValue {
    Scale(f64),
    Orders(Vec<usize>),
    Band(BandSetting),
    Count(usize),
}

impl SweepValue {
    fn label(&self) -> String {
        match self {
            SweepValue::Scale(s) => format!("{s}"),
            SweepValue::Orders(o) => o.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("+"),
            SweepValue::Band(b) => b.label(),
            SweepValue::Count(c) => c.to_string(),
        }
    }

    fn apply(&self, axis: SweepAxis, cfg: &mut RunConfig) {
        match (axis, self) {
            (SweepAxis::CrrScale, SweepValue::Scale(s)) => cfg.crr.scale = *s,
            (SweepAxis::CrrOrders, SweepValue::Orders(o)) => cfg.crr.orders = o.clone(),
            (SweepAxis::Band, SweepValue::Band(b)) => cfg.eval.band = Some(*b),
            (SweepAxis::Directions, SweepValue::Count(c)) => cfg.eval.directions = Some(*c),
            (SweepAxis::MaxOrder, SweepValue::Count(c)) => {
                let lo = cfg.eval.fit_orders.map_or(1, |f| f.0);
                cfg.eval.fit_orders = Some((lo, *c));
            }
            _ => unreachable!("values are parsed per axis"),
        }
    }
}

fn sweep_points(s: &SweepSection) -> Result<Vec<SweepValue>, HarnessError> {
    s.values
        .iter()
        .map(|v| {
            let bad = || config_err(format!("value {v} is not valid for axis {}", s.axis.as_str()));
            Ok(match s.axis {
                SweepAxis::CrrScale => SweepValue::Scale(v.as_f64().filter(|x| *x >= 0.0).ok_or_else(bad)?),
                SweepAxis::CrrOrders => SweepValue::Orders(serde_json::from_value(v.clone()).map_err(|_| bad())?),
                SweepAxis::Band => SweepValue::Band(serde_json::from_value(v.clone()).map_err(|_| bad())?),
                SweepAxis::Directions | SweepAxis::MaxOrder => {
                    SweepValue::Count(v.as_u64().filter(|&c| c >= 1).ok_or_else(bad)? as usize)
                }
            })
        })
        .collect()
}

/// Output of one training run, ready for emission.
#[derive(Debug, Clone)]
struct RunResult {
    run_id: String,
    seed: u64,
    records: Vec<EpochRecord>,
    row: Vec<(String, String)>,
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    run_id: &'a str,
    seed: u64,
    epoch: usize,
    train_loss: f64,
    penalty: f64,
    test_error: f64,
    lambda: Option<f64>,
    ece: f64,
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn fit_columns(fit: Option<&LambdaFit>) -> Vec<(String, String)> {
    let cols = ["lambda", "intercept", "r_squared", "mode", "orders_used", "n_excluded"];
    let vals = match fit {
        Some(f) => vec![
            fmt_f(f.lambda),
            fmt_f(f.intercept),
            fmt_f(f.r_squared),
            f.mode.as_str().into(),
            f.orders_used.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
            f.n_excluded.to_string(),
        ],
        None => vec![String::new(); cols.len()],
    };
    cols.iter().map(|c| c.to_string()).zip(vals).collect()
}

/// Writes rows (each a list of column/value pairs) as CSV; columns are
/// the union in first-seen order.
fn write_csv(path: &Path, rows: &[Vec<(String, String)>]) -> Result<(), HarnessError> {
    let mut header: Vec<String> = Vec::new();
    for row in rows {
        for (k, _) in row {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = header
            .iter()
            .map(|h| row.iter().find(|(k, _)| k == h).map(|(_, v)| csv_field(v)).unwrap_or_default())
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

fn write_jsonl(path: &Path, runs: &[RunResult]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for run in runs {
        for r in &run.records {
            let rec = JsonlRecord {
                run_id: &run.run_id,
                seed: run.seed,
                epoch: r.epoch,
                train_loss: r.train_loss,
                penalty: r.penalty,
                test_error: r.test_error,
                lambda: r.lambda,
                ece: r.ece,
            };
            let line = serde_json::to_string(&rec).map_err(|e| config_err(e.to_string()))?;
            writeln!(out, "{line}").expect("write to string");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Files written by a harness invocation.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub epochs: PathBuf,
    pub summary: PathBuf,
    pub resolved: PathBuf,
}

/// Resolves `cfg`, runs the experiment, and writes the three output files.
pub fn run(cfg: RunConfig) -> Result<Artifacts, HarnessError> {
    let cfg = cfg.resolve()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let resolved = dir.join("config.resolved.json");
    fs::write(&resolved, serde_json::to_string_pretty(&cfg).map_err(config_err)? + "\n")?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(config_err)?;
    let (mut runs, extra_rows) = pool.install(|| execute(&cfg))?;
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let epochs = dir.join("epochs.jsonl");
    write_jsonl(&epochs, &runs)?;
    let mut rows: Vec<Vec<(String, String)>> = runs.into_iter().map(|r| r.row).collect();
    rows.extend(extra_rows);
    let summary = dir.join("summary.csv");
    write_csv(&summary, &rows)?;
    Ok(Artifacts { dir, epochs, summary, resolved })
}

type Executed = (Vec<RunResult>, Vec<Vec<(String, String)>>);

fn execute(cfg: &RunConfig) -> Result<Executed, HarnessError> {
    match cfg.experiment {
        Experiment::Sanity => Ok((Vec::new(), sanity_rows(cfg)?)),
        Experiment::Bandlimited => Ok((Vec::new(), bandlimited_rows(cfg)?)),
        Experiment::Twomoons => Ok((training_runs(cfg, &[(None, cfg.clone())])?, Vec::new())),
        Experiment::Image => Ok((training_runs(cfg, &[(None, cfg.clone())])?, Vec::new())),
        Experiment::SamCompare => Ok((sam_compare_runs(cfg)?, Vec::new())),
        Experiment::Sweep => {
            let s = cfg.sweep.as_ref().expect("validated");
            let variants: Vec<(Option<(SweepAxis, String)>, RunConfig)> = sweep_points(s)?
                .into_iter()
                .map(|v| {
                    let mut c = cfg.clone();
                    c.experiment = s.base;
                    v.apply(s.axis, &mut c);
                    (Some((s.axis, v.label())), c)
                })
                .collect();
            for (_, c) in &variants {
                c.validate()?;
            }
            Ok((training_runs(cfg, &variants)?, Vec::new()))
        }
    }
}

fn sanity_rows(cfg: &RunConfig) -> Result<Vec<Vec<(String, String)>>, HarnessError> {
    let s = &cfg.sanity;
    let fixtures: [(&str, SeriesKind, FitMode, (usize, usize), Option<f64>); 5] = [
        ("geometric_1", SeriesKind::Geometric { a: 1.0 }, FitMode::Taylor, (0, s.n_max), Some(1.0)),
        ("geometric_2", SeriesKind::Geometric { a: 2.0 }, FitMode::Taylor, (0, s.n_max), Some(0.5)),
        ("inv_one_minus_x_cubed", SeriesKind::InvOneMinusXCubed, FitMode::Taylor, (0, s.n_max), Some(1.0)),
        ("sine", SeriesKind::Sine, FitMode::Raw, s.sine_orders, None),
        ("gaussian", SeriesKind::Gaussian, FitMode::Taylor, (0, s.gaussian_n_max), None),
    ];
    let mut rows = Vec::new();
    for (name, kind, mode, range, truth_radius) in fixtures {
        let run_id = format!("sanity-{name}");
        let seq = series_norms(&SeriesSpec { kind, n_max: range.1 }).map_err(config_err)?;
        let fit = fit_lambda(&seq, mode, range, crate::lambda::DEFAULT_EPSILON).map_err(|e| numeric(&run_id, e))?;
        let mut row = vec![("run_id".to_string(), run_id.clone()), ("fixture".into(), name.into())];
        row.extend(fit_columns(Some(&fit)));
        // Radii for the rational series; λ itself for the rest.
        let (quantity, estimate, truth) = match truth_radius {
            Some(r) => ("radius", radius_from_fit(&fit).map_err(|e| numeric(&run_id, e))?, Some(r)),
            None if matches!(kind, SeriesKind::Sine) => ("lambda", fit.lambda, Some(0.0)),
            None => ("lambda", fit.lambda, None),
        };
        let error = truth.map(|t| if t == 0.0 { (estimate - t).abs() } else { (estimate - t).abs() / t.abs() });
        row.extend([
            ("quantity".into(), quantity.into()),
            ("estimate".into(), fmt_f(estimate)),
            ("truth".into(), fmt_opt(truth)),
            ("error".into(), fmt_opt(error)),
        ]);
        rows.push(row);
    }
    Ok(rows)
}

fn bandlimited_rows(cfg: &RunConfig) -> Result<Vec<Vec<(String, String)>>, HarnessError> {
    let b = &cfg.bandlimited;
    let grid = Grid { x_min: b.x_min, x_max: b.x_max, num_points: b.num_points };
    let rows: Vec<Result<Vec<(String, String)>, HarnessError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run_id = format!("bandlimited-s{seed:04}");
            let sig = synthesize_bandlimited(b.omega, b.components, grid, seed).map_err(config_err)?;
            let seq = signal_deriv_norms(&sig, b.n_max).map_err(|e| match e {
                BenchError::OrderTooLarge { .. } | BenchError::Config(_) => config_err(e),
                other => numeric(&run_id, other),
            })?;
            let slope = spectral_edge(&seq, EdgeMethod::Slope).map_err(|e| numeric(&run_id, e))?;
            let ratio = spectral_edge(&seq, EdgeMethod::Ratio).map_err(|e| numeric(&run_id, e))?;
            let corrected = spectral_edge(&seq, EdgeMethod::EdgeCorrected).map_err(|e| numeric(&run_id, e))?;
            let fit = fit_lambda(&seq, FitMode::Raw, (0, b.n_max), crate::lambda::DEFAULT_EPSILON)
                .map_err(|e| numeric(&run_id, e))?;
            let rel = |x: f64| (x - b.omega).abs() / b.omega;
            let mut row = vec![
                ("run_id".to_string(), run_id.clone()),
                ("seed".into(), seed.to_string()),
                ("omega".into(), fmt_f(b.omega)),
                ("max_freq".into(), fmt_f(sig.freqs.iter().copied().fold(0.0, f64::max))),
                ("slope_estimate".into(), fmt_f(slope)),
                ("slope_rel_error".into(), fmt_f(rel(slope))),
                ("ratio_estimate".into(), fmt_f(ratio)),
                ("ratio_rel_error".into(), fmt_f(rel(ratio))),
                ("corrected_estimate".into(), fmt_f(corrected)),
                ("corrected_rel_error".into(), fmt_f(rel(corrected))),
            ];
            row.extend(fit_columns(Some(&fit)));
            Ok(row)
        })
        .collect();
    let mut rows: Vec<_> = rows.into_iter().collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| a[0].1.cmp(&b[0].1));
    Ok(rows)
}

/// Train/test sets for a seed of a training experiment.
fn load_data(cfg: &RunConfig, seed: u64) -> Result<(Dataset, Dataset), HarnessError> {
    match cfg.base_experiment() {
        Experiment::Twomoons => {
            let m = &cfg.moons;
            let mc =
                MoonsConfig { n_samples: m.n_train, noise_sigma: m.noise_sigma, label_noise: m.label_noise, seed };
            gen_two_moons_split(&mc, m.n_test).map_err(config_err)
        }
        _ => image_data(&cfg.image),
    }
}

/// The image task's data does not depend on the run seed.
pub fn image_data(im: &ImageSection) -> Result<(Dataset, Dataset), HarnessError> {
    let data_err = |e: DataError| config_err(e);
    let (train, test) = match (&im.train_images, &im.train_labels, &im.test_images, &im.test_labels) {
        (Some(a), Some(b), Some(c), Some(d)) => {
            (load_idx_dataset(a, b).map_err(data_err)?, load_idx_dataset(c, d).map_err(data_err)?)
        }
        (None, None, None, None) => {
            (glyph_dataset(im.synthetic_train, im.data_seed), glyph_dataset(im.synthetic_test, im.data_seed + 1))
        }
        _ => return Err(config_err("image paths need all of train/test images and labels")),
    };
    let train = shape_dataset(&train, im.subset.map(|n| n.min(train.len())), im.pair, im.data_seed).map_err(data_err)?;
    let test =
        shape_dataset(&test, im.test_subset.map(|n| n.min(test.len())), im.pair, im.data_seed + 1).map_err(data_err)?;
    Ok((train, test))
}

/// Trains every (variant, seed) pair; run ids sort variants then seeds.
fn training_runs(
    cfg: &RunConfig,
    variants: &[(Option<(SweepAxis, String)>, RunConfig)],
) -> Result<Vec<RunResult>, HarnessError> {
    let shared_image = match cfg.base_experiment() {
        Experiment::Image => Some(image_data(&cfg.image)?),
        _ => None,
    };
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let (axis, vcfg) = &variants[v];
            let run_id = match axis {
                Some((a, _)) => format!("{}-{}{v:02}-s{seed:04}", vcfg.experiment.as_str(), a.as_str()),
                None => format!("{}-s{seed:04}", vcfg.experiment.as_str()),
            };
            let (train, test) = match &shared_image {
                Some(d) => d.clone(),
                None => load_data(vcfg, seed)?,
            };
            let mode = vcfg.crr_mode();
            let tcfg = vcfg.train_config(seed, train.dim(), train.num_classes.max(test.num_classes), mode)?;
            let eval = vcfg.eval_spec()?;
            let out = train_run(&tcfg, &train, &test, &eval).map_err(|e| run_err(&run_id, e))?;
            let mut row = vec![
                ("run_id".to_string(), run_id.clone()),
                ("seed".into(), seed.to_string()),
                ("mode".into(), tcfg.mode.name().into()),
            ];
            if let Some((a, label)) = axis {
                row.push(("axis".into(), a.as_str().into()));
                row.push(("value".into(), label.clone()));
            }
            row.extend(final_columns(&out));
            if matches!(vcfg.base_experiment(), Experiment::Image) {
                row.extend(image_columns(vcfg, &out, &test, seed).map_err(|e| run_err(&run_id, e))?);
            }
            Ok(RunResult { run_id, seed, records: out.records, row })
        })
        .collect()
}

fn final_columns(out: &TrainOutcome) -> Vec<(String, String)> {
    let last = out.records.last().expect("epochs >= 1");
    let mut row = vec![
        ("epochs".to_string(), last.epoch.to_string()),
        ("train_loss".into(), fmt_f(last.train_loss)),
        ("penalty".into(), fmt_f(last.penalty)),
        ("test_error".into(), fmt_f(last.test_error)),
        ("ece".into(), fmt_f(last.ece)),
    ];
    row.extend(fit_columns(out.final_fit.as_ref()));
    row
}

/// Accuracy-style metrics and per-pair λ for the image task.
fn image_columns(
    cfg: &RunConfig,
    out: &TrainOutcome,
    test: &Dataset,
    seed: u64,
) -> Result<Vec<(String, String)>, TrainError> {
    let probs = predict_proba(&out.params, test.inputs.view())?;
    let preds = argmax_rows(probs.view());
    let err = test_error(probs.view(), &test.labels)?;
    let hard = hard_quantile_accuracy(probs.view(), &test.labels, cfg.image.hard_quantile)?;
    let mean_conf = confidences(probs.view()).iter().sum::<f64>() / test.len() as f64;
    let mut row = vec![
        ("accuracy".to_string(), fmt_f(1.0 - err)),
        ("hard_accuracy".into(), fmt_f(hard)),
        ("mean_confidence".into(), fmt_f(mean_conf)),
        ("ece_bins".into(), ece(probs.view(), &test.labels, DEFAULT_ECE_BINS)?.num_bins.to_string()),
    ];
    let spec = cfg.eval_spec().map_err(|e| TrainError::Config(e.to_string()))?;
    let dirs = random_directions(&mut seeded_at(seed, Stream::EvalDirections, 0), spec.directions, test.dim());
    for &(a, b) in &cfg.image.lambda_pairs {
        let name = format!("{a}_{b}");
        let idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] == a || test.labels[i] == b).collect();
        if idx.is_empty() || cfg.image.pair.is_some() {
            continue;
        }
        let idx: Vec<usize> = idx.into_iter().take(spec.max_points).collect();
        let sel = test.select(&idx);
        let lam = match measure_lambda(&out.params, sel.inputs.view(), &sel.labels, dirs.view(), spec.head, spec.fit_orders)
        {
            Ok(f) => Some(f.lambda),
            Err(TrainError::Lambda(_)) => None,
            Err(e) => return Err(e),
        };
        row.push((format!("lambda_pair_{name}"), fmt_opt(lam)));
        if let Ok((ab, ba)) = pair_confusion(&preds, &test.labels, (a, b)) {
            row.push((format!("confusion_{a}_to_{b}"), fmt_f(ab)));
            row.push((format!("confusion_{b}_to_{a}"), fmt_f(ba)));
        }
    }
    Ok(row)
}

/// Baseline, SAM and CRR on identical image-task data and seeds.
fn sam_compare_runs(cfg: &RunConfig) -> Result<Vec<RunResult>, HarnessError> {
    let mut base = cfg.clone();
    base.experiment = Experiment::Image;
    let mut variants = Vec::new();
    let mut b = base.clone();
    b.crr.scale = 0.0;
    variants.push(b);
    let mut s = base.clone();
    s.crr.scale = 0.0;
    variants.push(s);
    variants.push(base.clone());
    let data = image_data(&cfg.image)?;
    let modes = ["baseline", "sam", "crr"];
    let jobs: Vec<(usize, u64)> = (0..3).flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let vcfg = &variants[v];
            let run_id = format!("sam-compare-{v}{}-s{seed:04}", modes[v]);
            let (train, test) = data.clone();
            let mode = match v {
                0 => TrainMode::Baseline,
                1 => TrainMode::Sam(cfg.sam),
                _ => vcfg.crr_mode(),
            };
            let tcfg = vcfg.train_config(seed, train.dim(), train.num_classes.max(test.num_classes), mode)?;
            let out = train_run(&tcfg, &train, &test, &vcfg.eval_spec()?).map_err(|e| run_err(&run_id, e))?;
            let mut row = vec![
                ("run_id".to_string(), run_id.clone()),
                ("seed".into(), seed.to_string()),
                ("mode".into(), tcfg.mode.name().into()),
            ];
            row.extend(final_columns(&out));
            row.extend(image_columns(vcfg, &out, &test, seed).map_err(|e| run_err(&run_id, e))?);
            Ok(RunResult { run_id, seed, records: out.records, row })
        })
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "curvrate", about = "Curvature-rate measurement and regularization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radius and λ recovery on closed-form series.
    Sanity(CommonArgs),
    /// Spectral-edge recovery on synthesized bandlimited signals.
    Bandlimited(CommonArgs),
    /// Two Moons training runs.
    Twomoons(CommonArgs),
    /// Image-task training runs (IDX files or synthetic glyphs).
    Image(CommonArgs),
    /// Grid of runs along one axis.
    Sweep(SweepArgs),
    /// Baseline, SAM and CRR under identical conditions.
    SamCompare(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A count `N` (seeds 0..N), a range `a..b`, or a list `3,5,8`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub crr_scale: Option<f64>,
    /// Comma-separated orders, e.g. `2,3`.
    #[arg(long)]
    pub crr_orders: Option<String>,
    /// `loss` or `max_logit`.
    #[arg(long)]
    pub crr_head: Option<String>,
    /// Comma-separated classes the penalty applies to.
    #[arg(long)]
    pub crr_classes: Option<String>,
    #[arg(long)]
    pub sam_rho: Option<f64>,
    /// Inclusive order range `lo,hi` of the λ fit.
    #[arg(long)]
    pub fit_orders: Option<String>,
    /// Confidence band `lo,hi`, or `all`.
    #[arg(long)]
    pub band: Option<String>,
    /// Number of evaluation directions.
    #[arg(long)]
    pub directions: Option<usize>,
    /// IDX images file; the labels file is given after a comma.
    #[arg(long)]
    pub train_path: Option<String>,
    #[arg(long)]
    pub test_path: Option<String>,
    #[arg(long)]
    pub subset: Option<usize>,
    /// Class pair `a,b`, relabelled to {0, 1}.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Experiment swept over.
    #[arg(long, value_enum)]
    pub base: Option<Experiment>,
    #[arg(long, value_enum)]
    pub axis: Option<SweepAxis>,
    /// Values separated by `;` (list-valued entries use `,`), e.g.
    /// `0;0.01;0.1` or `1;2;1,2` or `0.48,0.52;all`.
    #[arg(long)]
    pub values: Option<String>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, HarnessError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| config_err(format!("bad {what} entry `{p}`"))))
        .collect()
}

fn parse_pair<T: std::str::FromStr + Copy>(s: &str, what: &str) -> Result<(T, T), HarnessError> {
    match parse_list::<T>(s, what)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(config_err(format!("{what} needs two comma-separated values, got `{s}`"))),
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(config_err)?, b.trim().parse().map_err(config_err)?);
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return parse_list(s, "seed");
    }
    let n: u64 = s.trim().parse().map_err(|_| config_err(format!("bad seeds `{s}`")))?;
    Ok((0..n).collect())
}

fn parse_band(s: &str) -> Result<BandSetting, HarnessError> {
    if s.trim() == "all" {
        return Ok(BandSetting::Keyword(BandKeyword::All));
    }
    let (lo, hi) = parse_pair::<f64>(s, "band")?;
    Ok(BandSetting::Range(lo, hi))
}

fn parse_head(s: &str) -> Result<Head, HarnessError> {
    match s {
        "loss" => Ok(Head::Loss),
        "max_logit" => Ok(Head::MaxLogit),
        _ => Err(config_err(format!("unknown head `{s}` (loss or max_logit)"))),
    }
}

fn idx_paths(s: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
    let (a, b) = s.split_once(',').ok_or_else(|| config_err(format!("expected `images,labels`, got `{s}`")))?;
    Ok((PathBuf::from(a), PathBuf::from(b)))
}

impl CommonArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), HarnessError> {
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = Some(v);
        }
        if let Some(v) = self.lr {
            cfg.train.lr = Some(v);
        }
        if let Some(v) = self.crr_scale {
            cfg.crr.scale = v;
        }
        if let Some(s) = &self.crr_orders {
            cfg.crr.orders = parse_list(s, "crr order")?;
        }
        if let Some(s) = &self.crr_head {
            cfg.crr.head = parse_head(s)?;
        }
        if let Some(s) = &self.crr_classes {
            cfg.crr.class_filter = Some(parse_list(s, "class")?);
        }
        if let Some(v) = self.sam_rho {
            cfg.sam.rho = v;
        }
        if let Some(s) = &self.fit_orders {
            cfg.eval.fit_orders = Some(parse_pair(s, "fit orders")?);
        }
        if let Some(s) = &self.band {
            cfg.eval.band = Some(parse_band(s)?);
        }
        if let Some(v) = self.directions {
            cfg.eval.directions = Some(v);
        }
        if let Some(s) = &self.train_path {
            let (i, l) = idx_paths(s)?;
            cfg.image.train_images = Some(i);
            cfg.image.train_labels = Some(l);
        }
        if let Some(s) = &self.test_path {
            let (i, l) = idx_paths(s)?;
            cfg.image.test_images = Some(i);
            cfg.image.test_labels = Some(l);
        }
        if let Some(v) = self.subset {
            cfg.image.subset = Some(v);
        }
        if let Some(s) = &self.pair {
            cfg.image.pair = Some(parse_pair(s, "pair")?);
        }
        if let Some(v) = self.label_noise {
            cfg.moons.label_noise = v;
        }
        if let Some(p) = &self.out {
            cfg.output_dir = p.clone();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        Ok(())
    }
}

fn split_values(axis: SweepAxis, s: &str) -> Result<Vec<Value>, HarnessError> {
    let scalar_sep = |c: char| c == ';' || c == ',';
    let parts: Vec<&str> = match axis {
        SweepAxis::CrrScale | SweepAxis::Directions | SweepAxis::MaxOrder => s.split(scalar_sep).collect(),
        SweepAxis::CrrOrders | SweepAxis::Band => s.split(';').collect(),
    };
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| -> Result<Value, HarnessError> {
            Ok(match axis {
                SweepAxis::CrrScale => serde_json::json!(p.parse::<f64>().map_err(config_err)?),
                SweepAxis::Directions | SweepAxis::MaxOrder => serde_json::json!(p.parse::<u64>().map_err(config_err)?),
                SweepAxis::CrrOrders => serde_json::json!(parse_list::<usize>(p, "crr order")?),
                SweepAxis::Band => serde_json::to_value(parse_band(p)?).map_err(config_err)?,
            })
        })
        .collect()
}

/// Builds the run config for a parsed command line.
pub fn config_from_cli(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let (experiment, common) = match &cli.command {
        Command::Sanity(a) => (Experiment::Sanity, a),
        Command::Bandlimited(a) => (Experiment::Bandlimited, a),
        Command::Twomoons(a) => (Experiment::Twomoons, a),
        Command::Image(a) => (Experiment::Image, a),
        Command::SamCompare(a) => (Experiment::SamCompare, a),
        Command::Sweep(s) => (Experiment::Sweep, &s.common),
    };
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.experiment = experiment;
    common.apply(&mut cfg)?;
    if let Command::Sweep(s) = &cli.command {
        let existing = cfg.sweep.take();
        let base = s.base.or(existing.as_ref().map(|e| e.base)).unwrap_or(Experiment::Twomoons);
        let axis = s.axis.or(existing.as_ref().map(|e| e.axis)).ok_or_else(|| config_err("sweep needs --axis"))?;
        let values = match &s.values {
            Some(v) => split_values(axis, v)?,
            None => existing.map(|e| e.values).unwrap_or_default(),
        };
        cfg.sweep = Some(SweepSection { base, axis, values });
    }
    Ok(cfg)
}

/// Entry point shared by the binary: parses `args`, runs, and maps errors
/// to exit codes (1 configuration, 2 numeric failure).
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match config_from_cli(&cli).and_then(run) {
        Ok(a) => {
            let _ = writeln!(std::io::stdout(), "wrote {}", a.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        config_err(e)
    }
}

impl From<LambdaError> for HarnessError {
    fn from(e: LambdaError) -> Self {
        config_err(e)
    }
}
