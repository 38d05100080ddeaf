//! Per-point sensitivity upper bounds, their total, and a brute-force
//! lower-bound oracle used to validate them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_per_label, PerLabelClustering};
use crate::data::{Label, WeightedDataset};
use crate::error::{Error, Result};
use crate::objective::{dot, ObjectiveContext};
use crate::par;
use crate::rng::{rng_for, stream};
use crate::solver::{estimate_xi, opt_tilde, OptTilde, SolveOutput, SolverConfig};

/// `alpha = (U - U_cluster) / (2 lambda U U_cluster)`.
pub fn compute_alpha(total_weight: f64, cluster_weight: f64, lambda: f64) -> Result<f64> {
    if !(cluster_weight > 0.0) {
        return Err(Error::param("cluster weight must be positive"));
    }
    if !(lambda > 0.0) {
        return Err(Error::param("lambda must be positive"));
    }
    let complement = (total_weight - cluster_weight).max(0.0);
    Ok(complement / (2.0 * lambda * total_weight * cluster_weight))
}

/// `u / U_cl + lambda u (9/2) max{(4/9) alpha, sqrt(4 alpha^2 + 2 ||p_delta||^2 / (9 opt)) - 2 alpha}`.
pub fn gamma(
    u: f64,
    alpha: f64,
    p_delta_norm: f64,
    opt_tilde: f64,
    lambda: f64,
    cluster_weight: f64,
) -> Result<f64> {
    if !(opt_tilde > 0.0) {
        return Err(Error::param(format!("opt estimate must be positive, got {opt_tilde}")));
    }
    if !(alpha >= 0.0) || !(cluster_weight > 0.0) {
        return Err(Error::param("alpha must be nonnegative and cluster weight positive"));
    }
    let radical = (4.0 * alpha * alpha + 2.0 * p_delta_norm * p_delta_norm / (9.0 * opt_tilde)).sqrt();
    let branch = (4.0 / 9.0 * alpha).max(radical - 2.0 * alpha);
    Ok(u / cluster_weight + lambda * u * 4.5 * branch)
}

/// `4k + sum_i 3 lambda (Var_+^(i) + Var_-^(i)) / sqrt(2 opt)`, with `k` the
/// larger per-label count of nonempty clusters.
pub fn cluster_bound(clustering: &PerLabelClustering, lambda: f64, opt_tilde: f64) -> (f64, usize) {
    let k = clustering
        .pos
        .nonempty_clusters()
        .max(clustering.neg.nonempty_clusters());
    let var: f64 = clustering
        .pos
        .variance
        .iter()
        .chain(&clustering.neg.variance)
        .sum();
    (4.0 * k as f64 + 3.0 * lambda * var / (2.0 * opt_tilde).sqrt(), k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub label: Label,
    pub cluster: usize,
    pub alpha: f64,
}

/// Sensitivity bounds of one weighted set, aligned with its positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub ids: Vec<usize>,
    pub gamma: Vec<f64>,
    /// `gamma / t`.
    pub q: Vec<f64>,
    pub t: f64,
    pub lambda: f64,
    pub alpha: Vec<AlphaEntry>,
    pub opt_tilde: f64,
    /// Set when the opt estimate was clamped, making every bound looser.
    pub conservative: bool,
    pub cluster_bound: f64,
    /// Nonempty-cluster count entering the bound.
    pub k_nonempty: usize,
}

impl SensitivityTable {
    /// Builds the table from a clustering and an opt estimate, using
    /// `U = U[P]`. Fails if the total exceeds the closed-form bound.
    pub fn compute(
        ds: &WeightedDataset,
        clustering: &PerLabelClustering,
        opt: OptTilde,
        lambda: f64,
    ) -> Result<Self> {
        ObjectiveContext::new(lambda, 1.0)?;
        let total = ds.total_weight();
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(total > 0.0) {
            return Err(Error::ZeroWeight);
        }
        let mut alpha = Vec::new();
        let mut alpha_of = [Vec::new(), Vec::new()];
        for (slot, label) in [Label::Neg, Label::Pos].into_iter().enumerate() {
            let c = clustering.for_label(label);
            for (i, &w) in c.cluster_weight.iter().enumerate() {
                let a = if w > 0.0 { compute_alpha(total, w, lambda)? } else { 0.0 };
                alpha_of[slot].push(a);
                if c.sizes[i] > 0 {
                    alpha.push(AlphaEntry {
                        label,
                        cluster: i,
                        alpha: a,
                    });
                }
            }
        }
        let gammas: Vec<Result<f64>> = par::map_indexed(ds.len(), |pos| {
            let u = ds.weight(pos);
            let label = ds.label(pos);
            let c = clustering.cluster_of(pos).ok_or(Error::Unassigned(pos))?;
            let w = clustering.for_label(label).cluster_weight[c];
            if u == 0.0 || w <= 0.0 {
                return Ok(0.0);
            }
            let slot = usize::from(label == Label::Pos);
            let delta = clustering.p_delta(ds, pos)?;
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            gamma(u, alpha_of[slot][c], norm, opt.value, lambda, w)
        });
        let gamma = gammas.into_iter().collect::<Result<Vec<f64>>>()?;
        let t = par::chunked_sum(gamma.len(), |r| gamma[r].iter().sum());
        if !(t > 0.0) {
            return Err(Error::ZeroWeight);
        }
        let q = gamma.iter().map(|g| g / t).collect();
        let (bound, k_nonempty) = cluster_bound(clustering, lambda, opt.value);
        if t > bound + 1e-9 * bound.max(1.0) {
            return Err(Error::param(format!(
                "total sensitivity {t} exceeds its closed-form bound {bound}"
            )));
        }
        Ok(Self {
            ids: ds.ids().to_vec(),
            gamma,
            q,
            t,
            lambda,
            alpha,
            opt_tilde: opt.value,
            conservative: opt.clamped,
            cluster_bound: bound,
            k_nonempty,
        })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Inputs of the full sensitivity pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub lambda: f64,
    /// Clusters per label; `ceil(log2 n)` when unset.
    pub k: Option<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Replaces the certified sub-optimality of the coarse solution.
    pub xi_override: Option<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            k: None,
            seed: 0,
            solver: SolverConfig::default(),
            xi_override: None,
        }
    }
}

/// Everything produced on the way to a sensitivity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub table: SensitivityTable,
    pub coarse: SolveOutput,
    pub xi: f64,
    pub clustering: PerLabelClustering,
}

/// Coarse solve, opt estimate, per-label clustering, then the table.
pub fn compute_sensitivities(ds: &WeightedDataset, cfg: &SensitivityConfig) -> Result<SensitivityReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let solver = SolverConfig {
        lambda: cfg.lambda,
        seed: cfg.seed,
        ..cfg.solver.clone()
    };
    let est = estimate_xi(ds, ds.total_weight(), &solver)?;
    let xi = cfg.xi_override.unwrap_or(est.xi);
    let opt = opt_tilde(est.coarse.objective, xi)?;
    let clustering = cluster_per_label(ds, cfg.k, cfg.seed)?;
    let table = SensitivityTable::compute(ds, &clustering, opt, cfg.lambda)?;
    Ok(SensitivityReport {
        table,
        coarse: est.coarse,
        xi,
        clustering,
    })
}

/// Search space of [`sensitivity_oracle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Directions on the angular grid (only used when `d <= 2`).
    pub angular: usize,
    /// Radii per direction, geometric up to the maximum radius.
    pub radii: usize,
    pub random_directions: usize,
    /// Maximum radius; `3 max(sqrt(2 / lambda), sqrt(2 lambda U))` when unset.
    pub max_radius: Option<f64>,
    /// Additional queries evaluated verbatim.
    pub extra_queries: Vec<Vec<f64>>,
    /// Random-search refinement steps per point, started from its best query.
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            angular: 2000,
            radii: 24,
            random_directions: 10_000,
            max_radius: None,
            extra_queries: Vec::new(),
            refine_steps: 300,
            seed: 0,
        }
    }
}

pub const ORACLE_MAX_POINTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Lower bound on the sensitivity of each point.
    pub s_hat: Vec<f64>,
    /// Query attaining each lower bound.
    pub argmax: Vec<Vec<f64>>,
    /// Set when the maximizing grid query sat at the maximum radius, i.e.
    /// the grid may be too small.
    pub boundary: Vec<bool>,
    pub queries: usize,
}

fn unit_directions(width: usize, spec: &OracleSpec, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    let a = spec.angular.max(1);
    match width {
        2 => {
            for i in 0..a {
                let th = std::f64::consts::TAU * i as f64 / a as f64;
                dirs.push(vec![th.cos(), th.sin()]);
            }
        }
        3 => {
            // Fibonacci lattice on the sphere
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for i in 0..a {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / a as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                dirs.push(vec![r * th.cos(), r * th.sin(), z]);
            }
        }
        _ => {}
    }
    for _ in 0..spec.random_directions {
        let v = crate::datagen::random_query(rng, width, 1.0);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            dirs.push(v.iter().map(|x| x / n).collect());
        }
    }
    dirs
}

/// Per-point ratios `u(p) f(p, w) / F(P, w)` at one query.
fn ratios(ds: &WeightedDataset, w: &[f64], lambda: f64, out: &mut [f64]) {
    let d = ds.dim();
    let total = ds.total_weight();
    let reg = w[..d].iter().map(|v| v * v).sum::<f64>() / (2.0 * total);
    let mut f_sum = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let h = (1.0 - ds.y(i) * dot(ds.x(i), w)).max(0.0);
        *o = ds.weight(i) * (reg + lambda * h);
        f_sum += *o;
    }
    for o in out.iter_mut() {
        *o /= f_sum;
    }
}

fn ratio_of(ds: &WeightedDataset, w: &[f64], lambda: f64, p: usize, buf: &mut [f64]) -> f64 {
    ratios(ds, w, lambda, buf);
    buf[p]
}

/// Brute-force lower bound on every point's sensitivity: the best ratio
/// over a radial grid of queries, random directions, the caller's extra
/// queries, and a local random search around each point's best query.
///
/// Only a lower bound; it can confirm an upper bound but never refute one.
pub fn sensitivity_oracle(ds: &WeightedDataset, lambda: f64, spec: &OracleSpec) -> Result<OracleResult> {
    ObjectiveContext::new(lambda, 1.0)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.len() > ORACLE_MAX_POINTS {
        return Err(Error::param(format!("oracle supports at most {ORACLE_MAX_POINTS} points")));
    }
    if !(ds.total_weight() > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let n = ds.len();
    let width = ds.width();
    let total = ds.total_weight();
    let r_max = spec
        .max_radius
        .unwrap_or_else(|| 3.0 * (2.0 / lambda).sqrt().max((2.0 * lambda * total).sqrt()));
    let r_min = 1e-3 * r_max;
    let mut rng = rng_for(spec.seed, stream::ORACLE);
    let dirs = unit_directions(width, spec, &mut rng);
    let nr = spec.radii.max(1);
    let radii: Vec<f64> = (0..nr)
        .map(|j| {
            if nr == 1 {
                r_max
            } else {
                r_min * (r_max / r_min).powf(j as f64 / (nr - 1) as f64)
            }
        })
        .collect();

    let mut queries: Vec<(Vec<f64>, bool)> = vec![(vec![0.0; width], false)];
    for dir in &dirs {
        for (j, r) in radii.iter().enumerate() {
            queries.push((dir.iter().map(|v| v * r).collect(), j + 1 == nr));
        }
    }
    for q in &spec.extra_queries {
        if q.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: q.len(),
            });
        }
        queries.push((q.clone(), false));
    }
    let reference = crate::solver::reference_solve(
        ds,
        &SolverConfig {
            lambda,
            ..Default::default()
        },
    )?;
    queries.push((reference.w.w.clone(), false));

    // per-chunk best, merged in chunk order
    let chunk = 4096;
    let chunks = queries.len().div_ceil(chunk);
    let partial = par::map_indexed(chunks, |c| {
        let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
        let mut buf = vec![0.0; n];
        for qi in c * chunk..((c + 1) * chunk).min(queries.len()) {
            ratios(ds, &queries[qi].0, lambda, &mut buf);
            for (b, &r) in best.iter_mut().zip(&buf) {
                if r > b.0 {
                    *b = (r, qi);
                }
            }
        }
        best
    });
    let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
    for part in partial {
        for (b, p) in best.iter_mut().zip(part) {
            if p.0 > b.0 {
                *b = p;
            }
        }
    }
    let boundary: Vec<bool> = best.iter().map(|&(_, qi)| queries[qi].1).collect();

    let seeds: Vec<u64> = (0..n).map(|p| crate::rng::derive_seed(spec.seed, p as u64)).collect();
    let refined = par::map_indexed(n, |p| {
        let mut rng = rng_for(seeds[p], stream::ORACLE);
        let mut buf = vec![0.0; n];
        let mut w = queries[best[p].1].0.clone();
        let mut val = best[p].0;
        let mut step = 0.1 * (1.0 + w.iter().map(|v| v * v).sum::<f64>().sqrt());
        for _ in 0..spec.refine_steps {
            let cand: Vec<f64> = w.iter().map(|v| v + step * rng.random_range(-1.0..1.0)).collect();
            let r = ratio_of(ds, &cand, lambda, p, &mut buf);
            if r > val {
                val = r;
                w = cand;
                step *= 1.5;
            } else {
                step *= 0.9;
            }
        }
        (val, w)
    });
    let (s_hat, argmax) = refined.into_iter().unzip();
    Ok(OracleResult {
        s_hat,
        argmax,
        boundary,
        queries: queries.len(),
    })
}
