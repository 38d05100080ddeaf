//! Merge-and-reduce summarization of a point stream.
//!
//! Chunks of `2l` points are compressed to `l`-point coresets and placed in
//! level 1. Whenever a level holds two coresets they are merged (weights
//! carried over) and recompressed into the next level. Peak memory stays
//! logarithmic in the stream length.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coreset::{build_coreset, uniform_coreset, BuilderInfo, Coreset, CoresetConfig, Method};
use crate::data::{csv_reader, CsvOptions, RowParser, Standardization, StandardizationAccumulator, WeightedDataset};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::solver::SolverConfig;

/// `(eps / (2 log2 n), delta / (2 log2 n))`.
pub fn adjusted_params(epsilon: f64, delta: f64, n_estimate: usize) -> Result<(f64, f64)> {
    if n_estimate < 2 {
        return Err(Error::param("n estimate must be at least 2"));
    }
    let l = 2.0 * (n_estimate as f64).log2();
    Ok((epsilon / l, delta / l))
}

/// `((1 + eps')^{log2 n}, (1 - eps')^{log2 n})` for `eps' = eps / (2 log2 n)`.
pub fn compounding_bounds(epsilon: f64, n: usize) -> Result<(f64, f64)> {
    let (e, _) = adjusted_params(epsilon, 0.5, n)?;
    let h = (n as f64).log2();
    Ok(((1.0 + e).powf(h), (1.0 - e).powf(h)))
}

/// Advisory leaf size
/// `max{2^{beta / (1 - beta)}, c (t log2(n)^2 / eps^2) (d ln(max{t, e}) + ln(log2(n) / delta))}`.
pub fn leaf_size_hint(t: f64, epsilon: f64, delta: f64, d: usize, n: usize, beta: f64, c_const: f64) -> Result<f64> {
    if !(beta > 0.1 && beta < 0.8) {
        return Err(Error::param(format!("beta must lie in (0.1, 0.8), got {beta}")));
    }
    if !(t > 0.0 && epsilon > 0.0 && delta > 0.0 && c_const > 0.0) || n < 2 {
        return Err(Error::param("t, epsilon, delta, c must be positive and n >= 2"));
    }
    let first = 2f64.powf(beta / (1.0 - beta));
    let ln_n = (n as f64).log2();
    let second = c_const
        * (t * ln_n * ln_n / (epsilon * epsilon))
        * (d as f64 * t.max(std::f64::consts::E).ln() + (ln_n / delta).ln());
    Ok(first.max(second))
}

/// `l (ceil(log2(max(n_seen / 2l, 1))) + 2)`.
pub fn memory_bound(leaf_size: usize, n_seen: usize) -> usize {
    let chunks = n_seen as f64 / (2 * leaf_size) as f64;
    let levels = chunks.max(1.0).log2().ceil() as usize;
    leaf_size * (levels + 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Compressor {
    Sensitivity,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// `l`: size of every stored coreset; chunks hold `2l` points.
    pub leaf_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Stream length used for `eps'` and `delta'`. When unset, a running
    /// estimate is quadrupled whenever the stream outgrows it.
    pub n_estimate: Option<usize>,
    pub lambda: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
    pub compressor: Compressor,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            leaf_size: 512,
            epsilon: 0.3,
            delta: 0.1,
            n_estimate: None,
            lambda: 1.0,
            k: None,
            seed: 0,
            solver: SolverConfig::default(),
            compressor: Compressor::Sensitivity,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leaf_size == 0 {
            return Err(Error::param("leaf size must be at least 1"));
        }
        CoresetConfig {
            epsilon: self.epsilon,
            delta: self.delta,
            lambda: self.lambda,
            k: self.k,
            ..Default::default()
        }
        .validate()
    }

    pub fn chunk_size(&self) -> usize {
        2 * self.leaf_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub n_seen: usize,
    pub chunks: usize,
    pub merges: usize,
    /// Highest level reached (1 = leaves).
    pub height: usize,
    /// Largest number of entries held at once, including the chunk or
    /// union being compressed.
    pub peak_entries: usize,
    /// Memory bound evaluated when the peak was reached.
    pub peak_bound: usize,
    pub epsilon_prime: f64,
    pub delta_prime: f64,
}

/// Buckets of coresets by level plus bookkeeping.
#[derive(Clone, Debug)]
pub struct StreamState {
    cfg: StreamConfig,
    /// `buckets[j]` holds the coresets at level `j + 1`.
    buckets: Vec<Vec<Coreset>>,
    n_seen: usize,
    chunks: usize,
    merges: usize,
    height: usize,
    nodes: u64,
    estimate: usize,
    peak_entries: usize,
    peak_bound: usize,
    dim: Option<usize>,
}

impl StreamState {
    pub fn new(cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        let estimate = cfg.n_estimate.unwrap_or(4 * cfg.chunk_size()).max(2);
        Ok(Self {
            cfg,
            buckets: Vec::new(),
            n_seen: 0,
            chunks: 0,
            merges: 0,
            height: 0,
            nodes: 0,
            estimate,
            peak_entries: 0,
            peak_bound: 0,
            dim: None,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    /// Coresets currently stored per level (level 1 first).
    pub fn level_sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    /// Entries currently stored across all levels.
    pub fn stored_entries(&self) -> usize {
        self.buckets.iter().flatten().map(Coreset::len).sum()
    }

    pub fn params(&self) -> (f64, f64) {
        adjusted_params(self.cfg.epsilon, self.cfg.delta, self.estimate).expect("estimate >= 2")
    }

    pub fn stats(&self) -> StreamStats {
        let (e, d) = self.params();
        StreamStats {
            n_seen: self.n_seen,
            chunks: self.chunks,
            merges: self.merges,
            height: self.height,
            peak_entries: self.peak_entries,
            peak_bound: self.peak_bound,
            epsilon_prime: e,
            delta_prime: d,
        }
    }

    fn track(&mut self, transient: usize) -> Result<()> {
        let held = self.stored_entries() + transient;
        let bound = memory_bound(self.cfg.leaf_size, self.n_seen);
        if held > bound {
            return Err(Error::param(format!(
                "stream holds {held} entries, above the bound {bound}"
            )));
        }
        if held > self.peak_entries {
            self.peak_entries = held;
            self.peak_bound = bound;
        }
        Ok(())
    }

    /// Compresses a weighted set whose points stand for `origin_u` weight of
    /// stream points.
    fn compress(&mut self, set: WeightedDataset, origin_u: f64) -> Result<Coreset> {
        let l = self.cfg.leaf_size;
        let seed = derive_seed(self.cfg.seed, self.nodes);
        self.nodes += 1;
        if set.len() <= l {
            let m = set.len();
            return Ok(Coreset {
                points: set,
                origin_u,
                t: None,
                builder: BuilderInfo {
                    method: Method::Coreset,
                    lambda: self.cfg.lambda,
                    m,
                    seed,
                    k: None,
                    xi: None,
                    opt_tilde: None,
                    epsilon: None,
                    delta: None,
                    c_const: None,
                    capped: true,
                    conservative: false,
                    cluster_bound: None,
                },
            });
        }
        let (eps, delta) = self.params();
        let mut c = match self.cfg.compressor {
            Compressor::Sensitivity => build_coreset(
                &set,
                &CoresetConfig {
                    epsilon: eps,
                    delta,
                    k: self.cfg.k,
                    m: Some(l),
                    seed,
                    lambda: self.cfg.lambda,
                    solver: self.cfg.solver.clone(),
                    ..Default::default()
                },
            )?,
            Compressor::Uniform => uniform_coreset(&set, l, self.cfg.lambda, seed)?,
        };
        c.origin_u = origin_u;
        Ok(c)
    }

    /// Adds one chunk (at most `2l` points) and cascades merges.
    pub fn push_chunk(&mut self, chunk: WeightedDataset) -> Result<()> {
        if chunk.is_empty() {
            return Ok(());
        }
        if chunk.len() > self.cfg.chunk_size() {
            return Err(Error::param(format!(
                "chunk of {} points exceeds 2l = {}",
                chunk.len(),
                self.cfg.chunk_size()
            )));
        }
        match self.dim {
            Some(d) if d != chunk.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: chunk.dim(),
                })
            }
            _ => self.dim = Some(chunk.dim()),
        }
        self.n_seen += chunk.len();
        self.chunks += 1;
        if self.cfg.n_estimate.is_none() {
            while self.n_seen > self.estimate {
                self.estimate = self.estimate.saturating_mul(4);
            }
        }
        self.track(chunk.len())?;
        let origin = chunk.total_weight();
        let leaf = self.compress(chunk, origin)?;
        self.place(0, leaf)?;
        let mut level = 0;
        while level < self.buckets.len() {
            if self.buckets[level].len() >= 2 {
                let b = self.buckets[level].pop().expect("two items");
                let a = self.buckets[level].pop().expect("two items");
                let merged = self.merge(a, b)?;
                self.place(level + 1, merged)?;
            }
            level += 1;
        }
        Ok(())
    }

    fn place(&mut self, level: usize, c: Coreset) -> Result<()> {
        while self.buckets.len() <= level {
            self.buckets.push(Vec::new());
        }
        self.buckets[level].push(c);
        self.height = self.height.max(level + 1);
        self.track(0)
    }

    /// Union of two coresets with their weights carried over, recompressed.
    fn merge(&mut self, a: Coreset, b: Coreset) -> Result<Coreset> {
        let union = a.points.concat(&b.points)?;
        let origin = a.origin_u + b.origin_u;
        self.track(union.len())?;
        self.merges += 1;
        self.compress(union, origin)
    }

    /// Merges the remaining residents in one step (their union, compressed
    /// once) and returns the root coreset. A single resident is returned
    /// unchanged.
    pub fn finalize(mut self) -> Result<(Coreset, StreamStats)> {
        let mut residents: Vec<Coreset> = Vec::new();
        for bucket in std::mem::take(&mut self.buckets).into_iter().rev() {
            residents.extend(bucket);
        }
        let mut iter = residents.into_iter();
        let first = iter.next().ok_or(Error::EmptyStream)?;
        let rest: Vec<Coreset> = iter.collect();
        if rest.is_empty() {
            return Ok((first, self.stats()));
        }
        let mut origin = first.origin_u;
        let mut union = first.points;
        for c in rest {
            origin += c.origin_u;
            union = union.concat(&c.points)?;
        }
        self.track(union.len())?;
        self.merges += 1;
        let root = self.compress(union, origin)?;
        Ok((root, self.stats()))
    }
}

/// Runs merge-and-reduce over a dataset in stream order.
pub fn stream_dataset(ds: &WeightedDataset, cfg: &StreamConfig) -> Result<(Coreset, StreamStats)> {
    if ds.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut state = StreamState::new(cfg.clone())?;
    let chunk = cfg.chunk_size();
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let w = idx.iter().map(|&i| ds.weight(i)).collect();
        state.push_chunk(ds.select(&idx, w)?)?;
        start = end;
    }
    state.finalize()
}

/// Standardization statistics from one pass over a CSV source.
pub fn scan_standardization<R: Read>(reader: R, opts: &CsvOptions) -> Result<Standardization> {
    let mut r = csv_reader(reader, opts.has_header);
    let header = if opts.has_header { Some(r.headers()?.clone()) } else { None };
    let mut parser: Option<RowParser> = None;
    let mut acc: Option<StandardizationAccumulator> = None;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let p = match &parser {
            Some(p) => p,
            None => {
                parser = Some(RowParser::new(header.as_ref(), rec.len(), opts)?);
                parser.as_ref().expect("just set")
            }
        };
        let parsed = p.parse(&rec, row)?;
        acc.get_or_insert_with(|| StandardizationAccumulator::new(parsed.features.len()))
            .push(&parsed.features);
    }
    acc.ok_or(Error::EmptyDataset)?.finish()
}

/// Streams a CSV source through merge-and-reduce, holding at most one chunk
/// of parsed rows. Features are transformed with `standardization` when
/// given; ids are row indices.
pub fn stream_csv_reader<R: Read>(
    reader: R,
    opts: &CsvOptions,
    standardization: Option<&Standardization>,
    cfg: &StreamConfig,
) -> Result<(Coreset, StreamStats)> {
    let mut state = StreamState::new(cfg.clone())?;
    let mut r = csv_reader(reader, opts.has_header);
    let header = if opts.has_header { Some(r.headers()?.clone()) } else { None };
    let mut parser: Option<RowParser> = None;
    let chunk = cfg.chunk_size();
    let (mut ids, mut feats, mut labels, mut weights) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dim = 0;
    let flush = |state: &mut StreamState,
                     ids: &mut Vec<usize>,
                     feats: &mut Vec<f64>,
                     labels: &mut Vec<crate::data::Label>,
                     weights: &mut Vec<f64>,
                     dim: usize|
     -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        let ds = WeightedDataset::from_embedded(
            dim,
            std::mem::take(ids),
            std::mem::take(feats),
            std::mem::take(labels),
            std::mem::take(weights),
        )?;
        state.push_chunk(ds)
    };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let p = match &parser {
            Some(p) => p,
            None => {
                parser = Some(RowParser::new(header.as_ref(), rec.len(), opts)?);
                parser.as_ref().expect("just set")
            }
        };
        let mut parsed = p.parse(&rec, row)?;
        dim = parsed.features.len();
        if let Some(s) = standardization {
            s.apply(&mut parsed.features);
        }
        feats.extend_from_slice(&parsed.features);
        feats.push(1.0);
        ids.push(row);
        labels.push(parsed.label);
        weights.push(parsed.weight);
        if ids.len() == chunk {
            flush(&mut state, &mut ids, &mut feats, &mut labels, &mut weights, dim)?;
        }
    }
    flush(&mut state, &mut ids, &mut feats, &mut labels, &mut weights, dim)?;
    state.finalize()
}

/// Two passes over a CSV file when standardizing (statistics, then
/// streaming), one pass otherwise.
pub fn stream_csv(path: impl AsRef<Path>, opts: &CsvOptions, cfg: &StreamConfig) -> Result<(Coreset, StreamStats)> {
    let path = path.as_ref();
    let open = || std::fs::File::open(path).map_err(|e| Error::io(path, e));
    let standardization = if opts.standardize {
        Some(scan_standardization(std::io::BufReader::new(open()?), opts)?)
    } else {
        None
    };
    stream_csv_reader(std::io::BufReader::new(open()?), opts, standardization.as_ref(), cfg)
}
