//! Weighted k-means++ over signed vectors `y * x`, run separately per label.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::{Label, WeightedDataset};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{rng_for, stream, Rng};

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Relative cost decrease below which Lloyd iterations stop.
pub const DEFAULT_COST_TOL: f64 = 1e-4;

/// `max(1, ceil(log2 n))`.
pub fn default_k(n: usize) -> usize {
    if n <= 2 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Flat row-major point matrix with per-row weights.
#[derive(Clone, Copy, Debug)]
pub struct WeightedRows<'a> {
    pub values: &'a [f64],
    pub width: usize,
    pub weights: &'a [f64],
}

impl<'a> WeightedRows<'a> {
    pub fn new(values: &'a [f64], width: usize, weights: &'a [f64]) -> Result<Self> {
        if width == 0 || values.len() != width * weights.len() {
            return Err(Error::DimensionMismatch {
                expected: width * weights.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            width,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    fn nearest(&self, i: usize, centroids: &[Vec<f64>]) -> (usize, f64) {
        let row = self.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, cent) in centroids.iter().enumerate() {
            let dist = sq_dist(row, cent);
            // strict comparison keeps the lowest index on ties
            if dist < best.1 {
                best = (c, dist);
            }
        }
        best
    }
}

/// k-means++ seeding with weights: the first seed is drawn proportionally
/// to `u`, each further seed proportionally to `u * D^2`. Stops early (fewer
/// than `k` seeds) once every point coincides with a seed.
pub fn kmeanspp_seed(rows: &WeightedRows<'_>, k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let first = WeightedIndex::new(rows.weights.iter().copied()).map_err(|_| Error::ZeroWeight)?;
    let mut seeds = vec![rows.row(first.sample(rng)).to_vec()];
    let mut d2: Vec<f64> = (0..rows.len()).map(|i| sq_dist(rows.row(i), &seeds[0])).collect();
    while seeds.len() < k {
        let scores: Vec<f64> = d2.iter().zip(rows.weights).map(|(d, u)| d * u).collect();
        let Ok(dist) = WeightedIndex::new(scores.iter().copied()) else {
            break;
        };
        let seed = rows.row(dist.sample(rng)).to_vec();
        let updated = par::map_indexed(rows.len(), |i| d2[i].min(sq_dist(rows.row(i), &seed)));
        d2 = updated;
        seeds.push(seed);
    }
    Ok(seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LloydOutput {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Weighted cost after each iteration.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

/// Weighted Lloyd refinement from the given seeds.
///
/// Each iteration assigns points to their nearest centroid, re-seeds every
/// empty cluster at the point with the largest `u * D^2`, then moves each
/// centroid to the weighted mean of its members. Stops when no centroid
/// moves by `tol` or more, when the cost drops by less than a `cost_tol`
/// fraction, or after `max_iters` iterations.
pub fn lloyd(
    rows: &WeightedRows<'_>,
    seeds: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
    cost_tol: f64,
) -> LloydOutput {
    let k = seeds.len();
    let width = rows.width;
    let mut centroids = seeds;
    let mut assignment = vec![0; rows.len()];
    let mut cost_history = Vec::new();
    let mut iterations = 0;
    if rows.is_empty() || k == 0 {
        return LloydOutput {
            centroids,
            assignment: Vec::new(),
            cost_history,
            iterations,
        };
    }
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let nearest = par::map_indexed(rows.len(), |i| rows.nearest(i, &centroids));
        let mut dist: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
        for (a, &(c, _)) in assignment.iter_mut().zip(&nearest) {
            *a = c;
        }
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let candidate = (0..rows.len())
                .map(|i| (i, rows.weights[i] * dist[i]))
                .fold((usize::MAX, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if candidate.0 == usize::MAX {
                continue;
            }
            let i = candidate.0;
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] += 1;
            dist[i] = 0.0;
            centroids[c] = rows.row(i).to_vec();
        }

        let mut sums = vec![vec![0.0; width]; k];
        let mut mass = vec![0.0; k];
        for i in 0..rows.len() {
            let a = assignment[i];
            let u = rows.weights[i];
            mass[a] += u;
            for (s, v) in sums[a].iter_mut().zip(rows.row(i)) {
                *s += u * v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if mass[c] > 0.0 {
                let next: Vec<f64> = sums[c].iter().map(|s| s / mass[c]).collect();
                movement = movement.max(sq_dist(&next, &centroids[c]).sqrt());
                centroids[c] = next;
            }
        }
        let cost = par::chunked_sum(rows.len(), |r| {
            r.map(|i| rows.weights[i] * sq_dist(rows.row(i), &centroids[assignment[i]]))
                .sum()
        });
        let stalled = cost_history
            .last()
            .is_some_and(|&prev: &f64| prev - cost <= cost_tol * prev);
        cost_history.push(cost);
        if movement < tol || stalled {
            break;
        }
    }
    LloydOutput {
        centroids,
        assignment,
        cost_history,
        iterations,
    }
}

/// Clustering of one label's signed vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub label: Label,
    /// Requested number of clusters.
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Dataset positions of the clustered points.
    pub members: Vec<usize>,
    /// Cluster index of each member, parallel to `members`.
    pub assignment: Vec<usize>,
    /// `U[P_y^(i)]` per cluster.
    pub cluster_weight: Vec<f64>,
    /// `Var^(i) = sum_{p in cluster i} u(p) ||p_delta||_2`.
    pub variance: Vec<f64>,
    /// Number of points per cluster.
    pub sizes: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
}

impl Clustering {
    pub fn empty(label: Label, k: usize) -> Self {
        Self {
            label,
            k,
            centroids: Vec::new(),
            members: Vec::new(),
            assignment: Vec::new(),
            cluster_weight: Vec::new(),
            variance: Vec::new(),
            sizes: Vec::new(),
            cost: 0.0,
            iterations: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Clusters that received at least one point.
    pub fn nonempty_clusters(&self) -> usize {
        self.sizes.iter().filter(|&&s| s > 0).count()
    }
}

/// `c - y x` for point `pos` assigned to centroid `c`. The bias entry is 0.
pub fn p_delta(ds: &WeightedDataset, pos: usize, centroid: &[f64]) -> Vec<f64> {
    let y = ds.y(pos);
    let mut out: Vec<f64> = centroid.iter().zip(ds.x(pos)).map(|(c, x)| c - y * x).collect();
    let last = out.len() - 1;
    debug_assert_eq!(out[last], 0.0);
    out[last] = 0.0;
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs seeding and Lloyd on the points of one label.
pub fn cluster_label(ds: &WeightedDataset, label: Label, k: usize, rng: &mut Rng) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let members = ds.indices_of(label).to_vec();
    if members.is_empty() {
        return Ok(Clustering::empty(label, k));
    }
    let width = ds.width();
    let s = label.sign();
    let mut values = Vec::with_capacity(members.len() * width);
    for &i in &members {
        values.extend(ds.x(i).iter().map(|v| s * v));
    }
    let weights: Vec<f64> = members.iter().map(|&i| ds.weight(i)).collect();
    let rows = WeightedRows::new(&values, width, &weights)?;
    let seeds = match kmeanspp_seed(&rows, k, rng) {
        Ok(seeds) => seeds,
        Err(Error::ZeroWeight) => {
            // all members weightless: a single cluster at their plain mean
            let mut c = vec![0.0; width];
            for i in 0..rows.len() {
                for (cj, v) in c.iter_mut().zip(rows.row(i)) {
                    *cj += v / rows.len() as f64;
                }
            }
            vec![c]
        }
        Err(e) => return Err(e),
    };
    let out = lloyd(&rows, seeds, DEFAULT_MAX_ITERS, DEFAULT_TOL, DEFAULT_COST_TOL);
    let kk = out.centroids.len();
    let mut centroids = out.centroids;
    for c in &mut centroids {
        // weighted mean of entries that all equal y
        *c.last_mut().expect("nonzero width") = s;
    }
    let mut cluster_weight = vec![0.0; kk];
    let mut variance = vec![0.0; kk];
    let mut sizes = vec![0; kk];
    for (m, &pos) in members.iter().enumerate() {
        let a = out.assignment[m];
        cluster_weight[a] += ds.weight(pos);
        sizes[a] += 1;
        variance[a] += ds.weight(pos) * norm(&p_delta(ds, pos, &centroids[a]));
    }
    Ok(Clustering {
        label,
        k,
        centroids,
        members,
        assignment: out.assignment,
        cluster_weight,
        variance,
        sizes,
        cost: out.cost_history.last().copied().unwrap_or(0.0),
        iterations: out.iterations,
    })
}

/// Both per-label clusterings plus a position -> (label, cluster) lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerLabelClustering {
    pub k: usize,
    pub pos: Clustering,
    pub neg: Clustering,
    /// Set when one label has no points.
    pub one_sided: bool,
    cluster_of: Vec<Option<usize>>,
}

impl PerLabelClustering {
    pub fn for_label(&self, label: Label) -> &Clustering {
        match label {
            Label::Pos => &self.pos,
            Label::Neg => &self.neg,
        }
    }

    /// Cluster index of dataset position `pos` within its label's clustering.
    pub fn cluster_of(&self, pos: usize) -> Option<usize> {
        self.cluster_of.get(pos).copied().flatten()
    }

    /// `p_delta` of the point at dataset position `pos`.
    pub fn p_delta(&self, ds: &WeightedDataset, pos: usize) -> Result<Vec<f64>> {
        let c = self.cluster_of(pos).ok_or(Error::Unassigned(pos))?;
        Ok(p_delta(ds, pos, &self.for_label(ds.label(pos)).centroids[c]))
    }

    /// Total k-means cost over both labels.
    pub fn cost(&self) -> f64 {
        self.pos.cost + self.neg.cost
    }
}

/// Clusters `P_+` and `P_-` independently; `k` defaults to
/// [`default_k`] of the dataset size.
pub fn cluster_per_label(ds: &WeightedDataset, k: Option<usize>, seed: u64) -> Result<PerLabelClustering> {
    let k = k.unwrap_or_else(|| default_k(ds.len()));
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let (pos, neg) = par::join(
        || cluster_label(ds, Label::Pos, k, &mut rng_for(seed, stream::CLUSTER_POS)),
        || cluster_label(ds, Label::Neg, k, &mut rng_for(seed, stream::CLUSTER_NEG)),
    );
    let (pos, neg) = (pos?, neg?);
    let one_sided = pos.is_empty() || neg.is_empty();
    if one_sided {
        log::warn!("single-label input: one clustering is empty");
    }
    let mut cluster_of = vec![None; ds.len()];
    for c in [&pos, &neg] {
        for (&m, &a) in c.members.iter().zip(&c.assignment) {
            cluster_of[m] = Some(a);
        }
    }
    Ok(PerLabelClustering {
        k,
        pos,
        neg,
        one_sided,
        cluster_of,
    })
}
