//! The five subcommands. Outputs are written only after training succeeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use brenier_core::metrics::{grid_density, grid_map, GridSpec};
use brenier_core::train::{split_holdout, train, Clock, PretrainReport};
use brenier_core::{
    DensitySpec, EvalReport, Icnn, MapDirection, NetPushforward, SampleBatch, TrainConfig, TrainData, TrainedPair,
};
use serde::Serialize;

use crate::config::{EstimateConfig, SolveConfig, SuiteConfig};
use crate::error::{from_train_failure, Error, Result};
use crate::experiments::{build_problem, check_dim, run_problem, ExperimentKind, Run};
use crate::io;

pub const FORWARD_FILE: &str = "forward.json";
pub const INVERSE_FILE: &str = "inverse.json";
pub const BACKGROUND_FILE: &str = "background.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const GRID_FILE: &str = "grid.csv";
pub const SUITE_REPORT_FILE: &str = "report.csv";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Seconds since construction.
pub struct StdClock(Instant);

impl StdClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for StdClock {
    fn elapsed_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `forward.json`, `inverse.json`, `background.json` and `history.csv`.
fn write_model_dir(dir: &Path, pair: &TrainedPair, background: &DensitySpec) -> Result<()> {
    create_dir(dir)?;
    io::save_model(&dir.join(FORWARD_FILE), &pair.forward)?;
    io::save_model(&dir.join(INVERSE_FILE), &pair.inverse)?;
    io::save_density(&dir.join(BACKGROUND_FILE), background)?;
    io::save_history(&dir.join(HISTORY_FILE), &pair.history)
}

#[derive(Debug, Serialize)]
pub struct SolveReport<'a> {
    pub config: &'a SolveConfig,
    /// Training settings actually used, after any automatic adjustment.
    pub effective_train: &'a TrainConfig,
    pub eval: Option<&'a EvalReport>,
    pub inverse_consistency: f64,
    pub forward_pretrain: PretrainReport,
    pub inverse_pretrain: PretrainReport,
    pub train_seconds: f64,
}

pub fn load_solve_config(path: &Path) -> Result<SolveConfig> {
    let config: SolveConfig = crate::config::load(path)?;
    config.validate()?;
    Ok(config)
}

/// Trains the forward and inverse potentials of a transport problem. The
/// model directory's background is the target density.
pub fn solve(config: &SolveConfig, out: &Path) -> Result<Run> {
    config.validate()?;
    let custom = config.custom_densities()?;
    let problem = build_problem(
        config.problem.kind,
        config.dim()?,
        config.problem.seed,
        &config.problem.random_convex,
        custom.as_ref().map(|(s, t)| (s, t)),
    )?;
    let mut run = run_problem(&problem, &config.train, &config.eval, &StdClock::start())?;
    if let Some(r) = run.report.as_mut() {
        r.wall_time = run.train_secs;
    }
    write_model_dir(out, &run.pair, &problem.target)?;
    let report = SolveReport {
        config,
        effective_train: &run.pair.config,
        eval: run.report.as_ref(),
        inverse_consistency: run.pair.inverse_consistency,
        forward_pretrain: run.pair.forward_pretrain,
        inverse_pretrain: run.pair.inverse_pretrain,
        train_seconds: run.train_secs,
    };
    io::write_json(&out.join(REPORT_FILE), &report)?;
    Ok(run)
}

#[derive(Debug, Serialize)]
pub struct EstimateReport<'a> {
    pub config: &'a EstimateConfig,
    pub effective_train: &'a TrainConfig,
    pub samples: usize,
    pub train_samples: usize,
    pub heldout_samples: usize,
    /// Mean negative log-likelihood of the held-out samples under the model.
    pub heldout_nll: Option<f64>,
    /// The same under `truth`, when given.
    pub truth_heldout_nll: Option<f64>,
    pub inverse_consistency: f64,
    pub forward_pretrain: PretrainReport,
    pub inverse_pretrain: PretrainReport,
    pub train_seconds: f64,
}

/// Result of [`estimate`].
#[derive(Debug, Clone)]
pub struct Estimate {
    pub pair: TrainedPair,
    pub background: DensitySpec,
    pub heldout_nll: Option<f64>,
    pub truth_heldout_nll: Option<f64>,
}

impl Estimate {
    /// The fitted density: `det D^2u(x) g(grad u(x))`.
    pub fn density(&self) -> Result<DensitySpec> {
        Ok(DensitySpec::NetPushforward(NetPushforward::new(
            MapDirection::Pullback,
            self.pair.forward.clone(),
            self.background.clone(),
        )?))
    }
}

/// Fits a density to `samples` by likelihood. `background` overrides the
/// config's background; the default is the standard Gaussian.
pub fn estimate(
    samples: &SampleBatch,
    config: &EstimateConfig,
    background: Option<DensitySpec>,
    out: &Path,
) -> Result<Estimate> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("sample file has no rows".into()));
    }
    let d = samples.dim();
    check_dim(d, config.allow_high_dim)?;
    let background = match (background, &config.background) {
        (Some(b), _) => b,
        (None, Some(doc)) => doc.to_spec()?,
        (None, None) => DensitySpec::StandardGaussian(d),
    };
    if background.dim() != d {
        return Err(Error::Input(format!(
            "samples have dimension {d} but the background has dimension {}",
            background.dim()
        )));
    }
    let truth = config.truth.as_ref().map(|t| t.to_spec()).transpose()?;
    if truth.as_ref().is_some_and(|t| t.dim() != d) {
        return Err(Error::Input("truth density dimension differs from the samples".into()));
    }

    let start = Instant::now();
    let data = TrainData::Samples {
        samples,
        background: &background,
    };
    let pair = train(&config.train, data, &StdClock::start()).map_err(|f| from_train_failure(f.error))?;
    let train_seconds = start.elapsed().as_secs_f64();
    let (train_part, heldout) = split_holdout(samples, &config.train);
    let truth_heldout_nll = match (&truth, heldout.is_empty()) {
        (Some(t), false) => {
            let logs = t.log_density_batch(&heldout)?;
            Some(-logs.iter().sum::<f64>() / logs.len() as f64)
        }
        _ => None,
    };
    let result = Estimate {
        heldout_nll: pair.heldout_nll,
        truth_heldout_nll,
        background,
        pair,
    };

    write_model_dir(out, &result.pair, &result.background)?;
    if d == 2 {
        write_grid_file(&out.join(GRID_FILE), &result.pair.forward, &result.background, &config.grid.spec())?;
    }
    let report = EstimateReport {
        config,
        effective_train: &result.pair.config,
        samples: samples.len(),
        train_samples: train_part.len(),
        heldout_samples: heldout.len(),
        heldout_nll: result.heldout_nll,
        truth_heldout_nll: result.truth_heldout_nll,
        inverse_consistency: result.pair.inverse_consistency,
        forward_pretrain: result.pair.forward_pretrain,
        inverse_pretrain: result.pair.inverse_pretrain,
        train_seconds,
    };
    io::write_json(&out.join(REPORT_FILE), &report)?;
    Ok(result)
}

/// Forward potential, inverse potential and background of a model directory.
pub struct ModelDir {
    pub forward: Icnn,
    pub inverse: Option<Icnn>,
    pub background: DensitySpec,
}

pub fn load_model_dir(dir: &Path) -> Result<ModelDir> {
    let forward = io::load_model(&dir.join(FORWARD_FILE))?;
    let inverse_path = dir.join(INVERSE_FILE);
    let inverse = if inverse_path.exists() {
        Some(io::load_model(&inverse_path)?)
    } else {
        None
    };
    let background = io::load_density(&dir.join(BACKGROUND_FILE))?;
    if forward.dim() != background.dim() || inverse.as_ref().is_some_and(|v| v.dim() != forward.dim()) {
        return Err(Error::Input(format!("{}: model dimensions disagree", dir.display())));
    }
    Ok(ModelDir {
        forward,
        inverse,
        background,
    })
}

/// Draws `n` background samples and maps them through the inverse potential.
pub fn sample(model: &ModelDir, n: usize, seed: u64) -> Result<SampleBatch> {
    let inverse = model
        .inverse
        .as_ref()
        .ok_or_else(|| Error::Input("model directory has no inverse network".into()))?;
    let d = model.forward.dim();
    let mut out = SampleBatch::empty(d);
    // chunked so memory stays flat for large n
    let mut rng = brenier_core::rng::seeded(seed);
    let mut left = n;
    while left > 0 {
        let m = left.min(8192);
        let ys = model.background.sample_with(&mut rng, m)?;
        for row in inverse.transport_batch(&ys)?.rows() {
            out.push(row);
        }
        left -= m;
    }
    Ok(out)
}

pub fn write_grid_file(path: &Path, u: &Icnn, background: &DensitySpec, grid: &GridSpec) -> Result<()> {
    let density = DensitySpec::NetPushforward(NetPushforward::new(MapDirection::Pullback, u.clone(), background.clone())?);
    let field = grid_density(&density, grid)?;
    let map = grid_map(u, grid)?;
    io::save_grid(path, &io::GridExport::new(Some(&field), Some(&map))?)
}

/// One benchmark run's outcome.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
    pub seconds: f64,
}

/// Every (experiment, dim, seed) of a suite, in report order.
pub fn suite_runs(suite: &SuiteConfig) -> Vec<(ExperimentKind, usize, u64)> {
    let mut v = Vec::new();
    for &kind in &suite.experiments {
        for &d in &suite.dims {
            for k in 0..suite.seeds {
                v.push((kind, d, suite.base_seed + k as u64));
            }
        }
    }
    v
}

fn run_one(suite: &SuiteConfig, kind: ExperimentKind, dim: usize, seed: u64) -> RunRecord {
    let start = Instant::now();
    let outcome = (|| -> Result<EvalReport> {
        let custom = match (&suite.source, &suite.target) {
            (Some(s), Some(t)) => Some((s.to_spec()?, t.to_spec()?)),
            _ => None,
        };
        let problem = build_problem(kind, dim, seed, &suite.random_convex, custom.as_ref().map(|(s, t)| (s, t)))?;
        let config = TrainConfig {
            seed,
            ..suite.train.clone()
        };
        let run = run_problem(&problem, &config, &suite.eval, &brenier_core::train::NoClock)?;
        run.report
            .ok_or_else(|| Error::Config("benchmark problems need a known transport map".into()))
    })();
    let seconds = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(r) => log::info!(
            "{} d={dim} seed={seed}: L2-UVP {:.4} W2 error {:?}% in {seconds:.1}s",
            kind.name(),
            r.l2_uvp,
            r.w2_pct_error
        ),
        Err(e) => log::error!("{} d={dim} seed={seed} failed: {e}", kind.name()),
    }
    RunRecord {
        experiment: kind,
        dim,
        seed,
        outcome: outcome.map_err(|e| e.to_string()),
        seconds,
    }
}

/// Runs every cell of `suite`, on up to `jobs` threads. Records come back in
/// [`suite_runs`] order whatever the thread count.
pub fn run_suite(suite: &SuiteConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    suite.validate()?;
    let runs = suite_runs(suite);
    let slots: Vec<Mutex<Option<RunRecord>>> = runs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, runs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(kind, d, seed)) = runs.get(i) else {
                    break;
                };
                let rec = run_one(suite, kind, d, seed);
                *slots[i].lock().expect("no panics while holding the lock") = Some(rec);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("lock not poisoned").expect("every run filled"))
        .collect())
}

const METRICS: [&str; 8] = [
    "l2_uvp",
    "w2_est",
    "w2_true",
    "w2_pct_error",
    "w2sq_est",
    "w2sq_true",
    "w2sq_pct_error",
    "inverse_consistency",
];

fn metric_values(r: &EvalReport) -> [Option<f64>; 8] {
    [
        Some(r.l2_uvp),
        Some(r.w2_est),
        r.w2_true,
        r.w2_pct_error,
        Some(r.w2sq_est),
        r.w2sq_true,
        r.w2sq_pct_error,
        r.inverse_consistency,
    ]
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `report.csv`: a `# suite:` line with the resolved suite as JSON, then one
/// row per run and one `aggregate` row per (experiment, dim) cell holding the
/// mean and sample standard deviation over the successful runs. Wall times
/// are kept out so reruns are byte-identical.
pub fn suite_report(suite: &SuiteConfig, records: &[RunRecord]) -> Result<String> {
    let mut out = format!(
        "# suite: {}\n",
        serde_json::to_string(suite).map_err(|e| Error::Config(e.to_string()))?
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["row", "experiment", "dim", "seed", "status"].map(String::from).to_vec();
    header.extend(METRICS.iter().map(|m| m.to_string()));
    header.extend(METRICS.iter().map(|m| format!("{m}_std")));
    header.extend(["n_eval", "eval_seed", "w2_true_samples"].map(String::from));
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let blanks = || vec![String::new(); METRICS.len()];

    let mut i = 0;
    while i < records.len() {
        let (kind, d) = (records[i].experiment, records[i].dim);
        let cell: Vec<&RunRecord> = records[i..]
            .iter()
            .take_while(|r| r.experiment == kind && r.dim == d)
            .collect();
        i += cell.len();
        for r in &cell {
            let mut row = vec!["run".into(), kind.name().into(), d.to_string(), r.seed.to_string()];
            match &r.outcome {
                Ok(rep) => {
                    row.push("ok".into());
                    row.extend(metric_values(rep).map(opt));
                    row.extend(blanks());
                    row.extend([
                        rep.n_eval.to_string(),
                        rep.eval_seed.to_string(),
                        rep.w2_true_samples.map(|n| n.to_string()).unwrap_or_default(),
                    ]);
                }
                Err(msg) => {
                    row.push(format!("failed: {msg}"));
                    row.extend(blanks());
                    row.extend(blanks());
                    row.extend([String::new(), String::new(), String::new()]);
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let ok: Vec<&EvalReport> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let mut row = vec![
            "aggregate".into(),
            kind.name().into(),
            d.to_string(),
            String::new(),
            format!("ok {}/{}", ok.len(), cell.len()),
        ];
        let mut means = blanks();
        let mut stds = blanks();
        for k in 0..METRICS.len() {
            let xs: Vec<f64> = ok.iter().filter_map(|r| metric_values(r)[k]).collect();
            if !xs.is_empty() {
                let (m, s) = mean_std(&xs);
                means[k] = m.to_string();
                stds[k] = s.to_string();
            }
        }
        row.extend(means);
        row.extend(stds);
        row.extend([String::new(), String::new(), String::new()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
    Ok(out)
}

fn timings_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("experiment,dim,seed,seconds\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.experiment.name(), r.dim, r.seed, r.seconds));
    }
    s
}

/// Result of [`benchmark`].
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub records: Vec<RunRecord>,
    pub report_path: PathBuf,
}

impl BenchmarkOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Runs a suite and writes `report.csv` and `timings.csv` into `out`.
pub fn benchmark(suite: &SuiteConfig, out: &Path, jobs: usize) -> Result<BenchmarkOutcome> {
    let records = run_suite(suite, jobs)?;
    create_dir(out)?;
    let report_path = out.join(SUITE_REPORT_FILE);
    io::write_atomic(&report_path, suite_report(suite, &records)?.as_bytes())?;
    io::write_atomic(&out.join(TIMINGS_FILE), timings_csv(&records).as_bytes())?;
    Ok(BenchmarkOutcome { records, report_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(kind: ExperimentKind, seed: u64, uvp: Option<f64>) -> RunRecord {
        RunRecord {
            experiment: kind,
            dim: 2,
            seed,
            outcome: uvp
                .map(|u| EvalReport {
                    l2_uvp: u,
                    w2_est: 1.0,
                    w2_true: Some(1.0),
                    w2_pct_error: Some(0.0),
                    w2sq_est: 1.0,
                    w2sq_true: Some(1.0),
                    w2sq_pct_error: Some(0.0),
                    w2_true_samples: None,
                    w2_true_seed: None,
                    n_eval: 1000,
                    eval_seed: 7,
                    train_seed: seed,
                    inverse_consistency: Some(1e-4),
                    wall_time: 0.0,
                })
                .ok_or_else(|| "boom".to_string()),
            seconds: 1.5,
        }
    }

    #[test]
    fn three_runs_give_four_rows() {
        let suite = SuiteConfig {
            experiments: vec![ExperimentKind::RandomGaussian],
            dims: vec![2],
            seeds: 3,
            ..SuiteConfig::default()
        };
        let recs: Vec<RunRecord> = (0..3)
            .map(|s| record(ExperimentKind::RandomGaussian, s, Some(1.0 + s as f64)))
            .collect();
        let text = suite_report(&suite, &recs).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# suite: {"));
        assert_eq!(lines.len(), 2 + 4);
        assert!(lines[2..5].iter().all(|l| l.starts_with("run,random-gaussian,2,")));
        let agg: Vec<&str> = lines[5].split(',').collect();
        assert_eq!(agg[0], "aggregate");
        assert_eq!(agg[4], "ok 3/3");
        assert_eq!(agg[5], "2");
        assert_eq!(agg[5 + METRICS.len()], "1");
        assert!(!text.contains("1.5"), "wall time stays out of the report");
    }

    #[test]
    fn failures_are_recorded_and_excluded_from_means() {
        let suite = SuiteConfig {
            experiments: vec![ExperimentKind::Annulus],
            dims: vec![2],
            seeds: 2,
            ..SuiteConfig::default()
        };
        let recs = vec![record(ExperimentKind::Annulus, 0, Some(3.0)), record(ExperimentKind::Annulus, 1, None)];
        let text = suite_report(&suite, &recs).unwrap();
        assert!(text.contains("failed: boom"));
        let agg = text.lines().last().unwrap();
        assert!(agg.starts_with("aggregate,annulus,2,,ok 1/2,3,"));
    }

    #[test]
    fn suite_run_order() {
        let suite = SuiteConfig {
            experiments: vec![ExperimentKind::Annulus, ExperimentKind::RandomConvex],
            dims: vec![2, 3],
            seeds: 2,
            base_seed: 10,
            ..SuiteConfig::default()
        };
        let runs = suite_runs(&suite);
        assert_eq!(runs.len(), 8);
        assert_eq!(runs[0], (ExperimentKind::Annulus, 2, 10));
        assert_eq!(runs[1], (ExperimentKind::Annulus, 2, 11));
        assert_eq!(runs[2], (ExperimentKind::Annulus, 3, 10));
        assert_eq!(runs[7], (ExperimentKind::RandomConvex, 3, 11));
    }

    #[test]
    fn sample_needs_inverse() {
        let m = ModelDir {
            forward: Icnn::init(2, &[4], 0).unwrap(),
            inverse: None,
            background: DensitySpec::StandardGaussian(2),
        };
        assert!(matches!(sample(&m, 3, 0), Err(Error::Input(_))));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
