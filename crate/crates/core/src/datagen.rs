//! Synthetic instance generators.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Label, WeightedDataset};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Cluster spread of the pathological instance, in units of the cluster std.
pub const PATHOLOGICAL_SEPARATION: f64 = 20.0;
/// Distance between the two points of the close opposite-label pair.
pub const PATHOLOGICAL_PAIR_GAP: f64 = 0.1;
/// Largest supported dimension of the lower-bound instance.
pub const LOWER_BOUND_MAX_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Blobs,
    Pathological,
    LowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Distance between the two blob means (blobs only).
    pub separation: f64,
    /// Per-coordinate std of each blob (blobs only).
    pub blob_std: f64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::param("n and d must be at least 1"));
        }
        if self.kind == GenKind::LowerBound && (self.d < 2 || !self.d.is_multiple_of(2)) {
            return Err(Error::param("lower_bound needs an even d >= 2"));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<WeightedDataset> {
        self.validate()?;
        match self.kind {
            GenKind::Blobs => gen_blobs_with_std(self.n, self.d, self.separation, self.blob_std, self.seed),
            GenKind::Pathological => gen_pathological(self.n, self.seed),
            GenKind::LowerBound => gen_lower_bound(self.d),
        }
    }
}

/// Two unit-covariance Gaussian blobs with means `+-(separation / 2) e_1`.
/// Labels alternate `+, -, +, ...` so any contiguous chunk is balanced.
pub fn gen_blobs(n: usize, d: usize, separation: f64, seed: u64) -> Result<WeightedDataset> {
    gen_blobs_with_std(n, d, separation, 1.0, seed)
}

pub fn gen_blobs_with_std(
    n: usize,
    d: usize,
    separation: f64,
    std: f64,
    seed: u64,
) -> Result<WeightedDataset> {
    if n < 2 || d < 1 {
        return Err(Error::param("blobs need n >= 2 and d >= 1"));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng_for(seed, stream::GEN);
    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Pos } else { Label::Neg };
        let shift = label.sign() * separation / 2.0;
        for j in 0..d {
            let z = normal.sample(&mut rng);
            raw.push(if j == 0 { shift + z } else { z });
        }
        labels.push(label);
    }
    WeightedDataset::from_raw(d, &raw, labels, None)
}

/// Two distant opposite-label clusters plus a close opposite-label pair.
///
/// The clusters have unit std and centers `(+-10, 0)`, 20 stds apart. The
/// pair sits midway at `(+-0.05, 0)`, each point on the side of its own
/// class, so it pins the margin from inside. The last two points of the set
/// are the pair.
pub fn gen_pathological(n: usize, seed: u64) -> Result<WeightedDataset> {
    if n < 4 {
        return Err(Error::param("pathological instance needs n >= 4"));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng_for(seed, stream::GEN);
    let bulk = n - 2;
    let mut raw = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let center = PATHOLOGICAL_SEPARATION / 2.0;
    for i in 0..bulk {
        let label = if i % 2 == 0 { Label::Pos } else { Label::Neg };
        raw.push(label.sign() * center + normal.sample(&mut rng));
        raw.push(normal.sample(&mut rng));
        labels.push(label);
    }
    let half_gap = PATHOLOGICAL_PAIR_GAP / 2.0;
    raw.extend_from_slice(&[half_gap, 0.0, -half_gap, 0.0]);
    labels.extend_from_slice(&[Label::Pos, Label::Neg]);
    WeightedDataset::from_raw(2, &raw, labels, None)
}

/// Every support pattern with `d / 2` of the first `d` coordinates equal to
/// `y sqrt(2 / d)`, in lexicographic order of the support, with labels
/// alternating `+, -, +, ...`.
pub fn gen_lower_bound(d: usize) -> Result<WeightedDataset> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::param("lower-bound instance needs an even d >= 2"));
    }
    if d > LOWER_BOUND_MAX_DIM {
        return Err(Error::param(format!(
            "lower-bound instance enumerates C(d, d/2) points; d <= {LOWER_BOUND_MAX_DIM}"
        )));
    }
    let value = (2.0 / d as f64).sqrt();
    let supports = combinations(d, d / 2);
    let mut raw = Vec::with_capacity(supports.len() * d);
    let mut labels = Vec::with_capacity(supports.len());
    for (i, support) in supports.iter().enumerate() {
        let label = if i % 2 == 0 { Label::Pos } else { Label::Neg };
        let mut row = vec![0.0; d];
        for &j in support {
            row[j] = label.sign() * value;
        }
        raw.extend_from_slice(&row);
        labels.push(label);
    }
    WeightedDataset::from_raw(d, &raw, labels, None)
}

/// The query that isolates point `i` of the lower-bound instance: zero on
/// its support (including the bias) and `1 / sqrt(2 / d)` elsewhere.
pub fn lower_bound_adversary(ds: &WeightedDataset, i: usize) -> Vec<f64> {
    let d = ds.dim();
    let off = 1.0 / (2.0 / d as f64).sqrt();
    let x = ds.x(i);
    let mut w: Vec<f64> = x[..d].iter().map(|&v| if v != 0.0 { 0.0 } else { off }).collect();
    w.push(0.0);
    w
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Random query vector with i.i.d. normal entries of the given scale.
pub fn random_query<R: Rng>(rng: &mut R, width: usize, scale: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    (0..width).map(|_| normal.sample(rng)).collect()
}
