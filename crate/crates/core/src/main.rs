use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use svm_coreset::bench::{dominance_violations, run_sweep, Mode, SweepSpec};
use svm_coreset::coreset::{build_coreset, sidecar_path, uniform_coreset, CoresetConfig, Method};
use svm_coreset::data::{load_csv, save_csv, ColumnSelector, CsvOptions, DatasetMetadata, LoadedDataset};
use svm_coreset::datagen::{GenKind, GenSpec};
use svm_coreset::par;
use svm_coreset::sensitivity::{compute_sensitivities, SensitivityConfig};
use svm_coreset::solver::{approx_svm, reference_solve, SolverConfig};
use svm_coreset::streaming::{stream_csv, Compressor, StreamConfig};

/// Sensitivity-sampling coresets for soft-margin SVMs.
#[derive(Parser, Debug)]
#[command(name = "svm-coreset", version, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Regularization trade-off, in (0, 1].
    #[arg(long, global = true, default_value_t = 1.0, value_parser = parse_lambda)]
    lambda: f64,

    /// Clusters per label [default: ceil(log2 n)].
    #[arg(long, global = true, value_parser = parse_positive)]
    k: Option<usize>,

    /// Keep raw feature values.
    #[arg(long, global = true)]
    no_standardize: bool,

    /// Worker thread cap.
    #[arg(long, global = true, value_parser = parse_positive)]
    threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,

    /// The input has no header row.
    #[arg(long)]
    no_header: bool,

    /// Label column, by name or 0-based index [default: last].
    #[arg(long)]
    label_column: Option<String>,

    /// Weight column, by name or 0-based index [default: unit weights].
    #[arg(long)]
    weight_column: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Train an SVM and print the objective and hyperplane as JSON.
    Solve(SolveArgs),
    /// Write per-point sensitivity bounds.
    Sensitivity(SensitivityArgs),
    /// Build a coreset.
    Coreset(CoresetArgs),
    /// Build a coreset by merge-and-reduce over a CSV stream.
    Stream(StreamArgs),
    /// Compare coresets against uniform samples over a range of sizes.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Distance between the blob means.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    blob_std: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Epoch budget per bias value of the coarse solver.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Use the coarse solver instead of the reference solver.
    #[arg(long)]
    approx: bool,
    /// Also write the JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SensitivityArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV of `id,gamma,q`; the summary goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CoresetArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Sample size [default: from the total sensitivity].
    #[arg(long)]
    m: Option<usize>,
    /// Constant of the sample-size formula.
    #[arg(long, default_value_t = 0.1)]
    c_const: f64,
    #[arg(long, value_enum, default_value_t = Method::Coreset)]
    method: Method,
    /// Merge repeated draws.
    #[arg(long)]
    coalesce: bool,
    /// Output CSV of `id,v`; metadata goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct StreamArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Size of every stored coreset; chunks hold twice as many points.
    #[arg(long, default_value_t = 512)]
    leaf: usize,
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Expected stream length.
    #[arg(long)]
    n_estimate: Option<usize>,
    #[arg(long, value_enum, default_value_t = Compressor::Sensitivity)]
    compressor: Compressor,
    /// Output CSV of `id,v`; metadata goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Mode::Offline)]
    mode: Mode,
    /// Number of geometric sizes in [ceil(log2 n), ceil(n^0.8)].
    #[arg(long, default_value_t = 5)]
    sizes: usize,
    /// Explicit comma-separated sizes, overriding --sizes.
    #[arg(long, value_delimiter = ',')]
    size_list: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Fail unless the coreset beats uniform sampling on mean error and
    /// error spread at every size.
    #[arg(long)]
    check: bool,
    /// Output CSV; the full report goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("lambda must be in (0, 1], got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{e}")),
    }
}

impl DataArgs {
    fn load(&self, g: &Global) -> anyhow::Result<LoadedDataset> {
        let opts = self.options(g);
        load_csv(&self.data, &opts).with_context(|| format!("loading {}", self.data.display()))
    }

    fn options(&self, g: &Global) -> CsvOptions {
        let sel = |s: &Option<String>| s.as_deref().map(|v| v.parse::<ColumnSelector>().expect("infallible"));
        CsvOptions {
            has_header: !self.no_header,
            label_column: sel(&self.label_column),
            weight_column: sel(&self.weight_column),
            standardize: !g.no_standardize,
        }
    }
}

/// Record written next to every output.
#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    parallel: bool,
    global: &'a Global,
    config: &'a C,
    input: Option<&'a DatasetMetadata>,
}

fn provenance<C: Serialize>(command: &'static str, g: &Global, config: &C, input: Option<&DatasetMetadata>) -> Value {
    serde_json::to_value(Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        argv: std::env::args().skip(1).collect(),
        parallel: par::is_parallel(),
        global: g,
        config,
        input,
    })
    .expect("provenance serializes")
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Adds a `provenance` field to the JSON object stored at `path`.
fn attach_provenance(path: &Path, prov: Value) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text)?;
    match value.as_object_mut() {
        Some(obj) => obj.insert("provenance".into(), prov),
        None => bail!("{} does not hold a JSON object", path.display()),
    };
    write_json(path, &value)
}

fn solver_config(g: &Global, epochs: usize) -> SolverConfig {
    SolverConfig {
        epochs,
        lambda: g.lambda,
        seed: g.seed,
        ..SolverConfig::default()
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => {
            let spec = GenSpec {
                kind: a.kind,
                n: a.n,
                d: a.d,
                seed: g.seed,
                separation: a.separation,
                blob_std: a.blob_std,
            };
            let ds = spec.generate()?;
            save_csv(&a.out, &ds, false)?;
            write_json(&sidecar_path(&a.out), &json!({
                "n": ds.len(),
                "d": ds.dim(),
                "spec": spec,
                "provenance": provenance("gen", g, a, None),
            }))?;
            log::info!("wrote {} points to {}", ds.len(), a.out.display());
        }
        Command::Solve(a) => {
            let loaded = a.data.load(g)?;
            let cfg = solver_config(g, a.epochs);
            let out = if a.approx {
                approx_svm(&loaded.dataset, &cfg)?
            } else {
                reference_solve(&loaded.dataset, &cfg)?
            };
            let value = json!({
                "objective": out.objective,
                "lower_bound": out.lower_bound,
                "gap": out.gap(),
                "iterations": out.iterations,
                "w": out.w.w,
                "solver": cfg,
                "provenance": provenance("solve", g, a, Some(&loaded.metadata)),
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
            if let Some(path) = &a.out {
                write_json(path, &value)?;
            }
        }
        Command::Sensitivity(a) => {
            let loaded = a.data.load(g)?;
            let ds = &loaded.dataset;
            let cfg = SensitivityConfig {
                lambda: g.lambda,
                k: g.k,
                seed: g.seed,
                solver: solver_config(g, SolverConfig::default().epochs),
                xi_override: None,
            };
            let report = compute_sensitivities(ds, &cfg)?;
            let table = &report.table;
            let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            w.write_record(["id", "gamma", "q"])?;
            for i in 0..table.len() {
                w.write_record([table.ids[i].to_string(), table.gamma[i].to_string(), table.q[i].to_string()])?;
            }
            w.flush()?;
            let summary = json!({
                "n": ds.len(),
                "t": table.t,
                "cluster_bound": table.cluster_bound,
                "t_over_n": table.t / ds.len() as f64,
                "opt_tilde": table.opt_tilde,
                "xi": report.xi,
                "conservative": table.conservative,
                "k": report.clustering.k,
                "k_nonempty": table.k_nonempty,
                "provenance": provenance("sensitivity", g, a, Some(&loaded.metadata)),
            });
            write_json(&sidecar_path(&a.out), &summary)?;
            println!("t = {} (bound {}, t/n = {})", table.t, table.cluster_bound, table.t / ds.len() as f64);
        }
        Command::Coreset(a) => {
            let loaded = a.data.load(g)?;
            let ds = &loaded.dataset;
            let cfg = CoresetConfig {
                epsilon: a.epsilon,
                delta: a.delta,
                k: g.k,
                m: a.m,
                c_const: a.c_const,
                seed: g.seed,
                lambda: g.lambda,
                solver: solver_config(g, SolverConfig::default().epochs),
                xi_override: None,
                coalesce: a.coalesce,
            };
            let coreset = match a.method {
                Method::Coreset => build_coreset(ds, &cfg)?,
                Method::Uniform => {
                    cfg.validate()?;
                    let m = a.m.context("--m is required with --method uniform")?;
                    let c = uniform_coreset(ds, m, g.lambda, g.seed)?;
                    if a.coalesce {
                        c.coalesce()?
                    } else {
                        c
                    }
                }
            };
            coreset.save(&a.out)?;
            attach_provenance(&sidecar_path(&a.out), provenance("coreset", g, &cfg, Some(&loaded.metadata)))?;
            println!("{} entries, total weight {}", coreset.len(), coreset.total_weight());
        }
        Command::Stream(a) => {
            let cfg = StreamConfig {
                leaf_size: a.leaf,
                epsilon: a.epsilon,
                delta: a.delta,
                n_estimate: a.n_estimate,
                lambda: g.lambda,
                k: g.k,
                seed: g.seed,
                solver: solver_config(g, SolverConfig::default().epochs),
                compressor: a.compressor,
            };
            let opts = a.data.options(g);
            let (coreset, stats) =
                stream_csv(&a.data.data, &opts, &cfg).with_context(|| format!("streaming {}", a.data.data.display()))?;
            coreset.save(&a.out)?;
            let meta = sidecar_path(&a.out);
            attach_provenance(&meta, provenance("stream", g, &cfg, None))?;
            let text = std::fs::read_to_string(&meta)?;
            let mut value: Value = serde_json::from_str(&text)?;
            value["stream"] = serde_json::to_value(&stats)?;
            write_json(&meta, &value)?;
            println!(
                "{} points in, {} entries out, peak {} stored (bound {})",
                stats.n_seen,
                coreset.len(),
                stats.peak_entries,
                stats.peak_bound
            );
        }
        Command::Bench(a) => {
            let loaded = a.data.load(g)?;
            let ds = &loaded.dataset;
            let mut spec = SweepSpec::for_dataset(ds.len(), a.sizes, a.trials)?;
            if let Some(list) = &a.size_list {
                spec.sizes = list.clone();
            }
            spec.mode = a.mode;
            spec.lambda = g.lambda;
            spec.k = g.k;
            spec.seed = g.seed;
            spec.epsilon = a.epsilon;
            spec.delta = a.delta;
            spec.solver = solver_config(g, spec.solver.epochs);
            let result = run_sweep(ds, &spec)?;
            result.save(&a.out)?;
            attach_provenance(&sidecar_path(&a.out), provenance("bench", g, &spec, Some(&loaded.metadata)))?;
            for r in &result.rows {
                println!(
                    "{:8} m={:<6} rel_err {:.4e} +- {:.4e}  build {:.3}s train {:.3}s",
                    r.method.name(),
                    r.m,
                    r.rel_err_mean,
                    r.rel_err_std,
                    r.t_build_s,
                    r.t_train_s
                );
            }
            if a.check {
                let violations = dominance_violations(&result);
                if !violations.is_empty() {
                    for v in &violations {
                        eprintln!("violation: {v}");
                    }
                    bail!("{} invariant violation(s)", violations.len());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let threads = cli.global.threads;
    match par::with_threads(threads, || run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
