//! Relative-error and timing sweeps of uniform vs sensitivity sampling.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coreset::{build_coreset, full_objective, uniform_coreset, Coreset, CoresetConfig, Method};
use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::objective::Hyperplane;
use crate::par;
use crate::rng::derive_seed;
use crate::solver::{reference_solve, SolveOutput, SolverConfig};
use crate::streaming::{stream_dataset, Compressor, StreamConfig};

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 7] = [
    "method",
    "m",
    "rel_err_mean",
    "rel_err_std",
    "t_build_s",
    "t_train_s",
    "t_total_s",
];

/// Cells with a larger share of failed trials invalidate the sweep.
pub const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Offline,
    Stream,
}

/// `round(exp(linspace(ln lo, ln hi, count)))`, deduplicated ascending.
pub fn geometric_sizes(lo: usize, hi: usize, count: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi < lo {
        return Err(Error::param(format!("invalid size range [{lo}, {hi}]")));
    }
    if count < 2 {
        return Err(Error::param("at least 2 sizes are needed"));
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    Ok(out)
}

/// `[ceil(log2 n), ceil(n^{4/5})]`.
pub fn default_size_range(n: usize) -> (usize, usize) {
    // shave float noise so exact powers do not round up
    let ceil = |x: f64| (x * (1.0 - 1e-12)).ceil() as usize;
    let lo = ceil((n.max(2) as f64).log2()).max(1);
    let hi = ceil((n as f64).powf(0.8));
    (lo, hi.max(lo))
}

/// `|F(P, w_S) - F(P, w*)| / F(P, w*)`, where `w_S` minimizes the coreset
/// objective.
pub fn relative_error(
    ds: &WeightedDataset,
    coreset: &Coreset,
    f_star: f64,
    solver: &SolverConfig,
) -> Result<(f64, SolveOutput)> {
    if !(f_star > 0.0) {
        return Err(Error::param("optimal objective must be positive"));
    }
    let trained = coreset.train(solver)?;
    let f = full_objective(ds, &trained.w, coreset.builder.lambda)?;
    Ok(((f - f_star).abs() / f_star, trained))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub mode: Mode,
    pub lambda: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub solver: SolverConfig,
}

impl SweepSpec {
    /// Spec covering `count` geometric sizes in the default range.
    pub fn for_dataset(n: usize, count: usize, trials: usize) -> Result<Self> {
        let (lo, hi) = default_size_range(n);
        Ok(Self {
            sizes: geometric_sizes(lo, hi, count)?,
            trials,
            methods: vec![Method::Uniform, Method::Coreset],
            mode: Mode::Offline,
            lambda: 1.0,
            k: None,
            seed: 0,
            epsilon: 0.3,
            delta: 0.1,
            solver: SolverConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::param("sizes must be nonempty and positive"));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("sizes must be strictly increasing"));
        }
        if self.trials == 0 || self.methods.is_empty() {
            return Err(Error::param("need at least one trial and one method"));
        }
        Ok(())
    }
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub m: usize,
    pub trial: usize,
    pub rel_err: f64,
    pub t_build_s: f64,
    pub t_train_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub m: usize,
    pub rel_err_mean: f64,
    pub rel_err_std: f64,
    pub t_build_s: f64,
    pub t_train_s: f64,
    pub t_total_s: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub mode: Mode,
    pub lambda: f64,
    /// `F(P, w*)` shared by every trial.
    pub f_star: f64,
    pub w_star: Vec<f64>,
    pub t_reference_s: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, method: Method, m: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.m == m)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::param("empty sweep result"));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.m.to_string(),
                r.rel_err_mean.to_string(),
                r.rel_err_std.to_string(),
                r.t_build_s.to_string(),
                r.t_train_s.to_string(),
                r.t_total_s.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::param("empty sweep result"));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the CSV report to `path` and the JSON report next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let json_path = crate::coreset::sidecar_path(path);
        std::fs::write(&json_path, self.to_json()? + "\n").map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds one subset for a trial.
pub fn build_subset(
    ds: &WeightedDataset,
    spec: &SweepSpec,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<Coreset> {
    match spec.mode {
        Mode::Offline => match method {
            Method::Uniform => uniform_coreset(ds, m, spec.lambda, seed),
            Method::Coreset => build_coreset(
                ds,
                &CoresetConfig {
                    epsilon: spec.epsilon,
                    delta: spec.delta,
                    k: spec.k,
                    m: Some(m),
                    seed,
                    lambda: spec.lambda,
                    solver: spec.solver.clone(),
                    ..Default::default()
                },
            ),
        },
        Mode::Stream => {
            let cfg = StreamConfig {
                leaf_size: m,
                epsilon: spec.epsilon,
                delta: spec.delta,
                n_estimate: Some(ds.len().max(2)),
                lambda: spec.lambda,
                k: spec.k,
                seed,
                solver: spec.solver.clone(),
                compressor: match method {
                    Method::Uniform => Compressor::Uniform,
                    Method::Coreset => Compressor::Sensitivity,
                },
            };
            Ok(stream_dataset(ds, &cfg)?.0)
        }
    }
}

/// Runs every `(method, size, trial)` cell against one reference optimum.
/// Trial `i` uses seed `derive_seed(seed, i)`; failed trials are counted
/// and a cell with more than 10% failures fails the sweep.
pub fn run_sweep(ds: &WeightedDataset, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let solver = SolverConfig {
        lambda: spec.lambda,
        ..spec.solver.clone()
    };
    let start = Instant::now();
    let reference = reference_solve(ds, &solver)?;
    let t_reference_s = start.elapsed().as_secs_f64();
    let f_star = reference.objective;

    let mut jobs = Vec::new();
    for &method in &spec.methods {
        for &m in &spec.sizes {
            for trial in 0..spec.trials {
                jobs.push((method, m, trial));
            }
        }
    }
    let results: Vec<Result<TrialResult>> = par::map_slice(&jobs, |&(method, m, trial)| {
        let seed = derive_seed(spec.seed, trial as u64);
        let t0 = Instant::now();
        let subset = build_subset(ds, spec, method, m, seed)?;
        let t_build_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let (rel_err, _) = relative_error(ds, &subset, f_star, &solver)?;
        let t_train_s = t1.elapsed().as_secs_f64();
        Ok(TrialResult {
            method,
            m,
            trial,
            rel_err,
            t_build_s,
            t_train_s,
        })
    });

    let mut rows = Vec::new();
    let mut offset = 0;
    for &method in &spec.methods {
        for &m in &spec.sizes {
            let cell = &results[offset..offset + spec.trials];
            offset += spec.trials;
            let ok: Vec<&TrialResult> = cell.iter().filter_map(|r| r.as_ref().ok()).collect();
            let failures = spec.trials - ok.len();
            for err in cell.iter().filter_map(|r| r.as_ref().err()) {
                log::warn!("{} m={m}: trial failed: {err}", method.name());
            }
            if failures as f64 > MAX_FAILURE_RATE * spec.trials as f64 {
                return Err(Error::SweepInvalid {
                    method: method.name().to_string(),
                    m,
                    failed: failures,
                    trials: spec.trials,
                });
            }
            let errs: Vec<f64> = ok.iter().map(|t| t.rel_err).collect();
            let (rel_err_mean, rel_err_std) = mean_std(&errs);
            let t_build_s = mean_std(&ok.iter().map(|t| t.t_build_s).collect::<Vec<_>>()).0;
            let t_train_s = mean_std(&ok.iter().map(|t| t.t_train_s).collect::<Vec<_>>()).0;
            rows.push(SweepRow {
                method,
                m,
                rel_err_mean,
                rel_err_std,
                t_build_s,
                t_train_s,
                t_total_s: t_build_s + t_train_s,
                trials: ok.len(),
                failures,
            });
        }
    }
    Ok(SweepResult {
        n: ds.len(),
        mode: spec.mode,
        lambda: spec.lambda,
        f_star,
        w_star: reference.w.w,
        t_reference_s,
        rows,
    })
}

/// Cells where the coreset method loses to uniform sampling on mean error
/// or on error spread.
pub fn dominance_violations(result: &SweepResult) -> Vec<String> {
    let mut out = Vec::new();
    for r in result.rows.iter().filter(|r| r.method == Method::Coreset) {
        if let Some(u) = result.row(Method::Uniform, r.m) {
            if r.rel_err_mean > u.rel_err_mean {
                out.push(format!(
                    "m={}: coreset mean error {} > uniform {}",
                    r.m, r.rel_err_mean, u.rel_err_mean
                ));
            }
            if r.rel_err_std > u.rel_err_std {
                out.push(format!(
                    "m={}: coreset error std {} > uniform {}",
                    r.m, r.rel_err_std, u.rel_err_std
                ));
            }
        }
    }
    out
}

/// Objective of `w` on the full set, for reporting.
pub fn evaluate(ds: &WeightedDataset, w: &[f64], lambda: f64) -> Result<f64> {
    full_objective(ds, &Hyperplane::new(w.to_vec())?, lambda)
}
