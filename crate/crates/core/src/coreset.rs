//! Coreset construction by sensitivity importance sampling, the uniform
//! baseline, the sample-size rule, and the on-disk format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::objective::{Hyperplane, ObjectiveContext};
use crate::rng::{rng_for, stream};
use crate::sensitivity::{compute_sensitivities, SensitivityConfig, SensitivityTable};
use crate::solver::{reference_solve_with_norm, SolveOutput, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coreset,
    Uniform,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Coreset => "coreset",
            Method::Uniform => "uniform",
        }
    }
}

/// Sample size and whether it was capped at `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSize {
    pub m: usize,
    pub capped: bool,
}

/// `m = ceil(c (t / eps^2) (d ln(max{t, e}) + ln(1 / delta)))`, capped at `n`.
pub fn sample_size(t: f64, epsilon: f64, delta: f64, d: usize, c_const: f64, n: usize) -> Result<SampleSize> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param(format!("total sensitivity must be positive, got {t}")));
    }
    check_eps_delta(epsilon, delta)?;
    if !(c_const > 0.0) {
        return Err(Error::param("sample-size constant must be positive"));
    }
    let log_t = t.max(std::f64::consts::E).ln();
    let raw = c_const * (t / (epsilon * epsilon)) * (d as f64 * log_t + (1.0 / delta).ln());
    let m = raw.ceil().max(1.0);
    if m >= n as f64 {
        Ok(SampleSize { m: n, capped: true })
    } else {
        Ok(SampleSize {
            m: m as usize,
            capped: false,
        })
    }
}

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::param(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Snapshot of how a coreset was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuilderInfo {
    pub method: Method,
    pub lambda: f64,
    pub m: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub xi: Option<f64>,
    pub opt_tilde: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub c_const: Option<f64>,
    /// Set when the sample size was capped at `n`.
    pub capped: bool,
    /// Set when the opt estimate was clamped.
    pub conservative: bool,
    pub cluster_bound: Option<f64>,
}

impl BuilderInfo {
    fn uniform(lambda: f64, m: usize, seed: u64) -> Self {
        Self {
            method: Method::Uniform,
            lambda,
            m,
            seed,
            k: None,
            xi: None,
            opt_tilde: None,
            epsilon: None,
            delta: None,
            c_const: None,
            capped: false,
            conservative: false,
            cluster_bound: None,
        }
    }
}

/// One draw of a coreset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetEntry {
    pub id: usize,
    pub v: f64,
}

/// Weighted subset `(S, v)` of a weighted set.
///
/// The points are kept materialized as a dataset whose weights are the
/// sampling weights `v` and whose ids are the ids in the source set. The
/// objective is always evaluated with `U = origin_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coreset {
    pub points: WeightedDataset,
    pub origin_u: f64,
    /// Total sensitivity of the distribution sampled from.
    pub t: Option<f64>,
    pub builder: BuilderInfo,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn entries(&self) -> Vec<CoresetEntry> {
        (0..self.points.len())
            .map(|i| CoresetEntry {
                id: self.points.id(i),
                v: self.points.weight(i),
            })
            .collect()
    }

    /// Sum of the sampling weights.
    pub fn total_weight(&self) -> f64 {
        self.points.total_weight()
    }

    pub fn context(&self) -> Result<ObjectiveContext> {
        ObjectiveContext::new(self.builder.lambda, self.origin_u)
    }

    /// `F((S, v), w)` with the frozen normalization.
    pub fn objective(&self, w: &Hyperplane) -> Result<f64> {
        crate::objective::svm_objective(&self.points, w, &self.context()?)
    }

    /// Minimizes the coreset objective with the reference solver.
    pub fn train(&self, cfg: &SolverConfig) -> Result<SolveOutput> {
        let cfg = SolverConfig {
            lambda: self.builder.lambda,
            ..cfg.clone()
        };
        reference_solve_with_norm(&self.points, self.origin_u, &cfg)
    }

    /// Merges repeated draws of the same id by summing their weights.
    /// Entries keep the order of first occurrence.
    pub fn coalesce(&self) -> Result<Coreset> {
        let mut first: HashMap<usize, usize> = HashMap::new();
        let mut keep = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for i in 0..self.points.len() {
            let id = self.points.id(i);
            match first.get(&id) {
                Some(&slot) => weights[slot] += self.points.weight(i),
                None => {
                    first.insert(id, keep.len());
                    keep.push(i);
                    weights.push(self.points.weight(i));
                }
            }
        }
        Ok(Coreset {
            points: self.points.select(&keep, weights)?,
            origin_u: self.origin_u,
            t: self.t,
            builder: self.builder.clone(),
        })
    }

    pub fn metadata(&self) -> CoresetMetadata {
        CoresetMetadata {
            dim: self.points.dim(),
            entries: self.len(),
            origin_u: self.origin_u,
            t: self.t,
            builder: self.builder.clone(),
        }
    }

    /// Writes `id,v` rows.
    pub fn write_entries<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "v"])?;
        for e in self.entries() {
            w.write_record([e.id.to_string(), e.v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<coreset>", e))?;
        Ok(())
    }

    /// Writes `path` (entries) and `path.json` (metadata).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_entries(std::io::BufWriter::new(file))?;
        let meta_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    /// Rebuilds a coreset from its entries and the set it was drawn from.
    pub fn from_entries(origin: &WeightedDataset, entries: &[CoresetEntry], meta: CoresetMetadata) -> Result<Self> {
        let position: HashMap<usize, usize> = (0..origin.len()).map(|i| (origin.id(i), i)).collect();
        let mut idx = Vec::with_capacity(entries.len());
        for e in entries {
            let pos = *position
                .get(&e.id)
                .ok_or_else(|| Error::param(format!("coreset id {} not in the dataset", e.id)))?;
            idx.push(pos);
        }
        let points = origin.select(&idx, entries.iter().map(|e| e.v).collect())?;
        Ok(Coreset {
            points,
            origin_u: meta.origin_u,
            t: meta.t,
            builder: meta.builder,
        })
    }

    /// Loads a coreset written by [`Coreset::save`].
    pub fn load(path: impl AsRef<Path>, origin: &WeightedDataset) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = read_entries(file)?;
        let meta_path = sidecar_path(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CoresetMetadata = serde_json::from_str(&text)?;
        Self::from_entries(origin, &entries, meta)
    }
}

/// Reads `id,v` rows.
pub fn read_entries<R: Read>(reader: R) -> Result<Vec<CoresetEntry>> {
    let mut r = crate::data::csv_reader(reader, true);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::MissingField {
                row,
                expected: 2,
                found: rec.len(),
            });
        }
        let parse_err = |column: usize| Error::Parse {
            row,
            column,
            token: rec[column].to_string(),
        };
        let id = rec[0].parse().map_err(|_| parse_err(0))?;
        let v: f64 = rec[1].parse().map_err(|_| parse_err(1))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidWeight { index: row, weight: v });
        }
        out.push(CoresetEntry { id, v });
    }
    Ok(out)
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetMetadata {
    pub dim: usize,
    pub entries: usize,
    pub origin_u: f64,
    pub t: Option<f64>,
    pub builder: BuilderInfo,
}

/// `m` i.i.d. draws from `q`; each draw becomes an entry with weight
/// `u / (m q)`.
pub fn importance_sample(ds: &WeightedDataset, table: &SensitivityTable, m: usize, seed: u64) -> Result<Coreset> {
    if m == 0 {
        return Err(Error::param("m must be at least 1"));
    }
    if table.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: table.len(),
        });
    }
    let dist = WeightedIndex::new(table.q.iter().copied()).map_err(|_| Error::ZeroWeight)?;
    let mut rng = rng_for(seed, stream::SAMPLE);
    let mut idx = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    for _ in 0..m {
        let i = dist.sample(&mut rng);
        idx.push(i);
        v.push(ds.weight(i) / (m as f64 * table.q[i]));
    }
    Ok(Coreset {
        points: ds.select(&idx, v)?,
        origin_u: ds.total_weight(),
        t: Some(table.t),
        builder: BuilderInfo {
            method: Method::Coreset,
            lambda: table.lambda,
            m,
            seed,
            k: None,
            xi: None,
            opt_tilde: Some(table.opt_tilde),
            epsilon: None,
            delta: None,
            c_const: None,
            capped: false,
            conservative: table.conservative,
            cluster_bound: Some(table.cluster_bound),
        },
    })
}

/// `m` i.i.d. draws with probability `u / U`, each with weight `U / m`.
pub fn uniform_coreset(ds: &WeightedDataset, m: usize, lambda: f64, seed: u64) -> Result<Coreset> {
    if m == 0 {
        return Err(Error::param("m must be at least 1"));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = ds.total_weight();
    let dist = WeightedIndex::new(ds.weights().iter().copied()).map_err(|_| Error::ZeroWeight)?;
    let mut rng = rng_for(seed, stream::UNIFORM);
    let idx: Vec<usize> = (0..m).map(|_| dist.sample(&mut rng)).collect();
    Ok(Coreset {
        points: ds.select(&idx, vec![total / m as f64; m])?,
        origin_u: total,
        t: None,
        builder: BuilderInfo::uniform(lambda, m, seed),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Clusters per label; `ceil(log2 n)` when unset.
    pub k: Option<usize>,
    /// Sample size; derived from the total sensitivity when unset.
    pub m: Option<usize>,
    pub c_const: f64,
    pub seed: u64,
    pub lambda: f64,
    pub solver: SolverConfig,
    pub xi_override: Option<f64>,
    /// Merge repeated draws after sampling.
    pub coalesce: bool,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            delta: 0.1,
            k: None,
            m: None,
            c_const: 0.1,
            seed: 0,
            lambda: 1.0,
            solver: SolverConfig::default(),
            xi_override: None,
            coalesce: false,
        }
    }
}

impl CoresetConfig {
    pub fn validate(&self) -> Result<()> {
        check_eps_delta(self.epsilon, self.delta)?;
        ObjectiveContext::new(self.lambda, 1.0)?;
        if self.m == Some(0) {
            return Err(Error::param("m must be at least 1"));
        }
        if self.k == Some(0) {
            return Err(Error::param("k must be at least 1"));
        }
        Ok(())
    }

    pub fn sensitivity(&self) -> SensitivityConfig {
        SensitivityConfig {
            lambda: self.lambda,
            k: self.k,
            seed: self.seed,
            solver: self.solver.clone(),
            xi_override: self.xi_override,
        }
    }
}

/// Coarse solve, opt estimate, clustering, sensitivities, sample size,
/// sampling.
pub fn build_coreset(ds: &WeightedDataset, cfg: &CoresetConfig) -> Result<Coreset> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let report = compute_sensitivities(ds, &cfg.sensitivity())?;
    let table = &report.table;
    let size = match cfg.m {
        Some(m) => SampleSize { m, capped: false },
        None => {
            let s = sample_size(table.t, cfg.epsilon, cfg.delta, ds.dim(), cfg.c_const, ds.len())?;
            if s.capped {
                log::warn!("sample size capped at n = {}", ds.len());
            }
            s
        }
    };
    let mut coreset = importance_sample(ds, table, size.m, cfg.seed)?;
    coreset.builder = BuilderInfo {
        method: Method::Coreset,
        lambda: cfg.lambda,
        m: size.m,
        seed: cfg.seed,
        k: Some(report.clustering.k),
        xi: Some(report.xi),
        opt_tilde: Some(table.opt_tilde),
        epsilon: Some(cfg.epsilon),
        delta: Some(cfg.delta),
        c_const: Some(cfg.c_const),
        capped: size.capped,
        conservative: table.conservative,
        cluster_bound: Some(table.cluster_bound),
    };
    if cfg.coalesce {
        coreset = coreset.coalesce()?;
    }
    Ok(coreset)
}

/// `F(P, w)` with `U = U[P]`.
pub fn full_objective(ds: &WeightedDataset, w: &Hyperplane, lambda: f64) -> Result<f64> {
    let ctx = ObjectiveContext::for_dataset(lambda, ds)?;
    crate::objective::svm_objective(ds, w, &ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_blobs, gen_pathological, random_query};
    use crate::objective::objective_unchecked;
    use crate::solver::reference_solve;

    fn coreset_objective_raw(c: &Coreset, w: &[f64]) -> Result<f64> {
        Ok(objective_unchecked(&c.points, w, &c.context()?))
    }

    #[test]
    fn sample_size_examples() {
        let s = sample_size(100.0, 0.1, 0.1, 10, 1.0, 1_000_000).unwrap();
        let oracle = (1e4 * (10.0 * 100f64.ln() + 10f64.ln())).ceil() as usize;
        assert_eq!(s.m, oracle);
        assert!(!s.capped);
        let c = sample_size(100.0, 0.1, 0.1, 10, 1.0, 1000).unwrap();
        assert_eq!(c, SampleSize { m: 1000, capped: true });
        // ln(max(t, e)) floors at 1
        let small = sample_size(0.5, 0.25, 0.5, 3, 1.0, 1_000_000).unwrap();
        assert_eq!(small.m, (0.5 / 0.0625 * (3.0 + 2f64.ln())).ceil() as usize);
        assert!(sample_size(0.0, 0.1, 0.1, 1, 1.0, 10).is_err());
        assert!(sample_size(1.0, 0.5, 0.1, 1, 1.0, 10).is_err());
    }

    #[test]
    fn uniform_weights_and_determinism() {
        let ds = gen_blobs(100, 2, 3.0, 0).unwrap();
        let c = uniform_coreset(&ds, 10, 1.0, 4).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.entries().iter().all(|e| e.v == 10.0));
        assert_eq!(c, uniform_coreset(&ds, 10, 1.0, 4).unwrap());
    }

    #[test]
    fn importance_weights_follow_q() {
        let ds = gen_blobs(200, 2, 3.0, 1).unwrap();
        let cfg = CoresetConfig {
            m: Some(25),
            ..Default::default()
        };
        let report = compute_sensitivities(&ds, &cfg.sensitivity()).unwrap();
        let c = importance_sample(&ds, &report.table, 25, 3).unwrap();
        let pos: HashMap<usize, usize> = (0..ds.len()).map(|i| (ds.id(i), i)).collect();
        for e in c.entries() {
            let i = pos[&e.id];
            let expect = ds.weight(i) * report.table.t / (25.0 * report.table.gamma[i]);
            assert!((e.v - expect).abs() < 1e-9 * expect);
            assert!(e.v > 0.0);
        }
        let one = importance_sample(&ds, &report.table, 1, 3).unwrap();
        let i = pos[&one.points.id(0)];
        assert!((one.points.weight(0) - ds.weight(i) / report.table.q[i]).abs() < 1e-9);
    }

    #[test]
    fn uniform_sensitivities_give_n_over_m() {
        let ds = gen_blobs(50, 2, 3.0, 1).unwrap();
        let n = ds.len();
        let table = SensitivityTable {
            ids: ds.ids().to_vec(),
            gamma: vec![1.0; n],
            q: vec![1.0 / n as f64; n],
            t: n as f64,
            lambda: 1.0,
            alpha: Vec::new(),
            opt_tilde: 1.0,
            conservative: false,
            cluster_bound: f64::INFINITY,
            k_nonempty: 1,
        };
        let c = importance_sample(&ds, &table, 10, 0).unwrap();
        for e in c.entries() {
            assert!((e.v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn build_is_deterministic_and_records_provenance() {
        let ds = gen_blobs(300, 3, 3.0, 2).unwrap();
        let cfg = CoresetConfig {
            seed: 8,
            ..Default::default()
        };
        let a = build_coreset(&ds, &cfg).unwrap();
        let b = build_coreset(&ds, &cfg).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert_eq!(a.builder.m, a.len());
        assert_eq!(a.origin_u, 300.0);
        assert!(a.t.unwrap() <= a.builder.cluster_bound.unwrap() + 1e-9);
    }

    #[test]
    fn full_size_coreset_trains_close_to_full_data() {
        let ds = gen_blobs(400, 2, 2.0, 5).unwrap();
        let cfg = CoresetConfig {
            m: Some(400),
            ..Default::default()
        };
        let c = build_coreset(&ds, &cfg).unwrap();
        let full = reference_solve(&ds, &SolverConfig::default()).unwrap();
        let w_s = c.train(&SolverConfig::default()).unwrap();
        let f = full_objective(&ds, &w_s.w, 1.0).unwrap();
        assert!(f <= 1.02 * full.objective, "{f} vs {}", full.objective);
    }

    #[test]
    fn pathological_pair_is_oversampled() {
        let ds = gen_pathological(1000, 7).unwrap();
        let pair = [ds.id(998), ds.id(999)];
        let mut hits = 0usize;
        let mut builds_with_pair = 0;
        let builds = 100;
        for seed in 0..builds {
            let cfg = CoresetConfig {
                m: Some(64),
                seed,
                ..Default::default()
            };
            let c = build_coreset(&ds, &cfg).unwrap();
            let drawn = c.entries().iter().filter(|e| pair.contains(&e.id)).count();
            hits += drawn;
            if drawn > 0 {
                builds_with_pair += 1;
            }
        }
        let freq = hits as f64 / (builds as usize * 64) as f64;
        assert!(freq > 4.0 * 2.0 / 1000.0, "pair frequency {freq}");
        // uniform draws include the pair in 1 - (1 - 2/1000)^64 ~ 12% of builds
        assert!(builds_with_pair > 36, "{builds_with_pair} builds with the pair");
    }

    #[test]
    fn coalesce_sums_duplicates() {
        let ds = gen_blobs(4, 1, 3.0, 0).unwrap();
        let c = uniform_coreset(&ds, 40, 1.0, 1).unwrap();
        let merged = c.coalesce().unwrap();
        assert!(merged.len() <= 4);
        assert!((merged.total_weight() - c.total_weight()).abs() < 1e-12);
        let w = Hyperplane::new(vec![0.3, -0.1]).unwrap();
        assert!((merged.objective(&w).unwrap() - c.objective(&w).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn save_and_load_round_trip() {
        let ds = gen_blobs(100, 2, 3.0, 3).unwrap();
        let c = build_coreset(
            &ds,
            &CoresetConfig {
                m: Some(12),
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        c.save(&path).unwrap();
        let back = Coreset::load(&path, &ds).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unbiased_at_a_fixed_query_smoke() {
        let ds = gen_blobs(200, 2, 3.0, 4).unwrap();
        let report = compute_sensitivities(&ds, &SensitivityConfig::default()).unwrap();
        let mut rng = rng_for(0, 99);
        let w = random_query(&mut rng, 3, 0.5);
        let full = full_objective(&ds, &Hyperplane::new(w.clone()).unwrap(), 1.0).unwrap();
        let reps = 400;
        let mut vals = Vec::new();
        for s in 0..reps {
            let c = importance_sample(&ds, &report.table, 16, s).unwrap();
            vals.push(coreset_objective_raw(&c, &w).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - full).abs() <= 4.0 * se, "mean {mean} full {full} se {se}");
    }
}
