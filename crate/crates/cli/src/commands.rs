//! Subcommand implementations: configuration loading, execution and output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sdro::analysis::{self, SmoothingMetric};
use sdro::divergence::builtin;
use sdro::experiments::{
    self, format_float, predictor_label, CounterexampleConfig, CurseConfig, EmpiricalConfig, McConfig,
};
use sdro::loss::{EventSet, LossOracle, LossSpec};
use sdro::measure::DiscreteDistribution;
use sdro::predictor::{self, PredictorConfig};
use sdro::{oracle, Error};

use crate::{CliError, Common, McArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Solver tolerance of the duality check.
const CHECK_TOL: f64 = 1e-8;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be ≥ 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Core(Error::Resource(format!("cannot start {workers} workers: {e}"))))
}

pub fn single_threaded(common: &Common, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    pool(common.workers.unwrap_or(1))?.install(f)
}

fn mc_workers(common: &Common) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.into(), source })
}

/// Reads a Monte-Carlo config, filling in `seed` from the flag.
fn load_mc<T: DeserializeOwned>(args: &McArgs) -> Result<T> {
    let mut value: Value = read_json(&args.config)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("{}: top level must be an object", args.config.display())))?;
    match obj.get("seed") {
        Some(v) if v.as_u64() != Some(args.seed) => {
            return Err(CliError::Usage(format!(
                "seed {v} in {} disagrees with --seed {}",
                args.config.display(),
                args.seed
            )))
        }
        _ => {
            obj.insert("seed".into(), json!(args.seed));
        }
    }
    serde_json::from_value(value).map_err(|source| CliError::Parse { path: args.config.clone(), source })
}

fn write(out: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let err = |path: &Path, e: std::io::Error| CliError::Write { path: path.into(), message: e.to_string() };
    fs::create_dir_all(out).map_err(|e| err(out, e))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| err(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Write { path: "<csv buffer>".into(), message: e.to_string() };
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Write { path: "<csv buffer>".into(), message: e.to_string() })
}

/// Writes `<name>.json` with the run metadata, the echoed configuration and
/// `results`.
#[allow(clippy::too_many_arguments)]
fn summary(out: &Path, name: &str, seed: Option<u64>, workers: usize, config: Value, started: Instant, outputs: &[PathBuf], results: Value) -> Result<()> {
    let doc = json!({
        "subcommand": name,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "workers": workers,
        "config": config,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "results": results,
    });
    let text = serde_json::to_string_pretty(&doc).expect("summary is valid JSON");
    write(out, &format!("{name}.json"), text.as_bytes())?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::Usage(format!("cannot parse {what} entry '{t}'"))))
        .collect()
}

fn divergence_list(s: &str) -> Result<Vec<String>> {
    let names: Vec<String> = s.split(',').map(|t| t.trim().to_string()).collect();
    for n in &names {
        builtin(n)?;
    }
    Ok(names)
}

// ------------------------------------------------------------- predict

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictJob {
    pub distribution: DiscreteDistribution,
    pub loss: LossSpec,
    /// Event set Σ; defaults to the support of `distribution`.
    #[serde(default)]
    pub domain: Option<EventSet>,
    pub decisions: Vec<f64>,
    pub predictors: Vec<PredictorConfig>,
}

pub fn predict(job_path: &Path, common: &Common) -> Result<()> {
    let started = Instant::now();
    let job: PredictJob = read_json(job_path)?;
    if job.decisions.is_empty() || job.predictors.is_empty() {
        return Err(Error::Config("a job needs at least one decision and one predictor".into()).into());
    }
    for p in &job.predictors {
        p.validate()?;
    }
    let domain = job.domain.clone().unwrap_or_else(|| EventSet::Points(job.distribution.support().to_vec()));
    let loss = job.loss.build(domain)?;
    let mut rows = Vec::new();
    for cfg in &job.predictors {
        for &x in &job.decisions {
            let s = predictor::evaluate(cfg, &loss, x, &job.distribution)?;
            rows.push(vec![
                predictor_label(cfg),
                format_float(x),
                format_float(cfg.r),
                format_float(cfg.epsilon),
                cfg.k.to_string(),
                format_float(s.value),
                format_float(s.eta),
                format_float(s.lambda),
                format_float(s.gamma),
                format_float(s.certified_gap),
            ]);
        }
    }
    let header = ["predictor", "x", "r", "epsilon", "K", "value", "eta", "lambda", "gamma", "gap"];
    let csv = write(&common.out, "predict.csv", &csv_bytes(&header, &rows)?)?;
    summary(&common.out, "predict", None, common.workers.unwrap_or(1), to_value(&job), started, &[csv], json!({ "rows": rows.len() }))
}

// ------------------------------------------------------- duality-check

fn table_loss(values: Vec<f64>) -> Result<LossOracle> {
    let points = (0..values.len()).map(|j| vec![j as f64]).collect();
    Ok(LossOracle::from_fn(move |_, xi| values[xi[0] as usize], EventSet::Points(points))?)
}

pub fn duality_check(seed: u64, instances: usize, divergences: &str, radii: &str, common: &Common) -> Result<()> {
    let started = Instant::now();
    let divs = divergence_list(divergences)?;
    let radii: Vec<f64> = parse_list(radii, "radius")?;
    if radii.iter().any(|r| r.is_nan() || *r < 0.0) {
        return Err(CliError::Usage("radii must be ≥ 0".into()));
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for i in 0..instances {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        g.set_stream(i as u64);
        let atoms = 2 + g.random_range(0..3usize);
        let m = atoms + g.random::<bool>() as usize;
        let values: Vec<f64> = (0..m).map(|_| 10.0 * g.random::<f64>()).collect();
        let w: Vec<f64> = (0..atoms).map(|_| 0.05 + g.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        let div = &divs[g.random_range(0..divs.len())];
        let r = radii[g.random_range(0..radii.len())];
        let loss = table_loss(values)?;
        let p_hat = DiscreteDistribution::new((0..atoms).map(|j| vec![j as f64]).collect(), w.iter().map(|v| v / total).collect())?;
        let spec = builtin(div)?;
        let dual = predictor::f_dro(&loss, 0.0, &p_hat, &spec, r, CHECK_TOL)?;
        let h = if atoms == 2 { 1e-3 } else { 1e-2 };
        let primal = oracle::primal_f_dro(&loss, 0.0, &p_hat, &spec, r, h)?;
        let gap = dual.value - primal;
        worst = worst.max(gap.abs());
        if gap.abs() > 1e-4f64.max(1e-4 * primal.abs()) {
            failures += 1;
        }
        rows.push(vec![
            i.to_string(),
            spec.name().to_string(),
            atoms.to_string(),
            format_float(r),
            format_float(dual.value),
            format_float(primal),
            format_float(gap),
            format_float(dual.certified_gap),
        ]);
    }
    let header = ["instance", "divergence", "atoms", "r", "dual", "primal", "gap", "certified_gap"];
    let csv = write(&common.out, "duality-check.csv", &csv_bytes(&header, &rows)?)?;
    let config = json!({ "instances": instances, "divergences": divs, "radii": radii });
    let results = json!({ "max_abs_gap": worst, "outside_tolerance": failures });
    summary(&common.out, "duality-check", Some(seed), common.workers.unwrap_or(1), config, started, &[csv], results)
}

// -------------------------------------------------------------- radius

pub fn radius(divergences: &str, r_max: f64, points: usize, starts: usize, common: &Common) -> Result<()> {
    let started = Instant::now();
    if !(r_max > 0.0 && r_max.is_finite()) || points < 2 || starts == 0 {
        return Err(CliError::Usage("need r_max > 0, at least 2 points and at least 1 start".into()));
    }
    let divs = divergence_list(divergences)?;
    let grid: Vec<f64> = (0..points).map(|i| r_max * i as f64 / (points - 1) as f64).collect();
    let mut rows = Vec::new();
    let mut methods = serde_json::Map::new();
    for d in &divs {
        let spec = builtin(d)?;
        let curve = analysis::radius_curve(&spec, &grid, starts)?;
        methods.insert(curve.name.clone(), to_value(&curve.method));
        for (r, v) in curve.r_grid.iter().zip(&curve.values) {
            rows.push(vec![curve.name.clone(), format_float(*r), format_float(*v), to_value(&curve.method).as_str().unwrap_or("").to_string()]);
        }
    }
    let csv = write(&common.out, "radius.csv", &csv_bytes(&["divergence", "r", "R", "method"], &rows)?)?;
    let config = json!({ "divergences": divs, "r_max": r_max, "points": points, "starts": starts });
    summary(&common.out, "radius", None, common.workers.unwrap_or(1), config, started, &[csv], json!({ "methods": methods }))
}

// -------------------------------------------------------------- bounds

#[allow(clippy::too_many_arguments)]
pub fn bounds(n: &str, r: &str, cardinality: Option<usize>, epsilon: Option<f64>, diam: f64, dim: usize, metric: &str, common: &Common) -> Result<()> {
    let started = Instant::now();
    let ns: Vec<usize> = parse_list(n, "N")?;
    let rs: Vec<f64> = parse_list(r, "r")?;
    if cardinality.is_none() && epsilon.is_none() {
        return Err(CliError::Usage("bounds needs --cardinality, --epsilon or both".into()));
    }
    let metric: SmoothingMetric = serde_json::from_value(json!(metric))
        .map_err(|_| CliError::Usage(format!("unknown metric '{metric}', expected lp or wasserstein")))?;
    let mut rows = Vec::new();
    let row = |name: &str, b: &analysis::BoundReport| {
        vec![
            name.to_string(),
            b.n.to_string(),
            format_float(b.r),
            b.epsilon.map_or(String::new(), format_float),
            format_float(b.cardinality),
            format_float(b.log_value),
            format_float(b.value),
            format_float(b.clamped),
        ]
    };
    for &nn in &ns {
        for &rr in &rs {
            if let Some(card) = cardinality {
                rows.push(row("finite-sanov", &analysis::finite_sanov_bound(nn, card, rr)?));
            }
            if let Some(eps) = epsilon {
                rows.push(row("smoothed-sanov", &analysis::smoothed_sanov_bound(nn, rr, eps, diam, dim, metric)?));
            }
        }
    }
    let header = ["bound", "N", "r", "epsilon", "cardinality", "log_value", "value", "clamped"];
    let csv = write(&common.out, "bounds.csv", &csv_bytes(&header, &rows)?)?;
    let config = json!({
        "N": ns, "r": rs, "cardinality": cardinality, "epsilon": epsilon,
        "diam": diam, "dim": dim, "metric": metric,
    });
    summary(&common.out, "bounds", None, common.workers.unwrap_or(1), config, started, &[csv], json!({ "rows": rows.len() }))
}

// ---------------------------------------------------------- Monte Carlo

pub fn feasibility_mc(args: &McArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: McConfig = load_mc(args)?;
    cfg.validate()?;
    let workers = mc_workers(&args.common);
    let res = pool(workers)?.install(|| experiments::feasibility_mc(&cfg))?;
    let csv = write(&args.common.out, "feasibility-mc.csv", res.csv().as_bytes())?;
    let results = json!({ "rows": to_value(&res.rows), "distinct_samples": res.distinct_samples });
    summary(&args.common.out, "feasibility-mc", Some(cfg.seed), workers, to_value(&cfg), started, &[csv], results)
}

pub fn curse(args: &McArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: CurseConfig = load_mc(args)?;
    let workers = mc_workers(&args.common);
    let res = pool(workers)?.install(|| experiments::optimizers_curse_run(&cfg))?;
    let csv = write(&args.common.out, "curse.csv", res.csv().as_bytes())?;
    summary(&args.common.out, "curse", Some(cfg.seed), workers, to_value(&cfg), started, &[csv], json!({ "rows": to_value(&res.rows) }))
}

pub fn counterexample(args: &McArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: CounterexampleConfig = load_mc(args)?;
    let workers = mc_workers(&args.common);
    let res = pool(workers)?.install(|| experiments::counterexample_run(&cfg))?;
    let out = &args.common.out;
    let csv = write(out, "counterexample.csv", res.csv().as_bytes())?;
    let reps = write(out, "counterexample-replications.csv", res.replications_csv().as_bytes())?;
    let results = json!({
        "k_max": res.k_max,
        "kl": to_value(&res.kl),
        "smoothed": to_value(&res.smoothed),
        "smoothed_bound": res.smoothed_bound,
    });
    summary(out, "counterexample", Some(cfg.seed), workers, to_value(&cfg), started, &[csv, reps], results)
}

pub fn empirical_infeasibility(args: &McArgs) -> Result<()> {
    let started = Instant::now();
    let cfg: EmpiricalConfig = load_mc(args)?;
    let workers = mc_workers(&args.common);
    let res = pool(workers)?.install(|| experiments::empirical_infeasibility_run(&cfg))?;
    let csv = write(&args.common.out, "empirical-infeasibility.csv", res.csv().as_bytes())?;
    summary(
        &args.common.out,
        "empirical-infeasibility",
        Some(cfg.seed),
        workers,
        to_value(&cfg),
        started,
        &[csv],
        json!({ "rows": to_value(&res.rows) }),
    )
}
