//! Labeled, weighted point sets.
//!
//! Every stored feature vector carries the bias embedding: a point with `d`
//! raw features is stored as a row of length `d + 1` whose last entry is 1.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label in {-1, +1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn from_sign(s: f64) -> Option<Label> {
        if s == 1.0 {
            Some(Label::Pos)
        } else if s == -1.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }

    /// Parses a label token. `0` and `-1` map to the negative class, `1` and
    /// `+1` to the positive class; anything else is rejected.
    pub fn parse_token(token: &str) -> Option<Label> {
        match token.trim() {
            "-1" | "0" => Some(Label::Neg),
            "1" | "+1" => Some(Label::Pos),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Neg => "-1",
            Label::Pos => "1",
        }
    }
}

/// An owned labeled point with its embedded feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: Label,
    pub u: f64,
}

impl LabeledPoint {
    pub fn signed_vector(&self) -> Vec<f64> {
        signed_vector(&self.x, self.y)
    }
}

/// Borrowed view of one point of a [`WeightedDataset`].
#[derive(Clone, Copy, Debug)]
pub struct PointRef<'a> {
    pub id: usize,
    pub x: &'a [f64],
    pub y: Label,
    pub u: f64,
}

impl PointRef<'_> {
    pub fn to_owned(&self) -> LabeledPoint {
        LabeledPoint {
            id: self.id,
            x: self.x.to_vec(),
            y: self.y,
            u: self.u,
        }
    }
}

/// Returns `y * x` elementwise. The bias entry of the result equals `y`.
pub fn signed_vector(x: &[f64], y: Label) -> Vec<f64> {
    let s = y.sign();
    x.iter().map(|v| s * v).collect()
}

/// Appends the constant bias coordinate to a raw feature vector.
pub fn embed_bias(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::ZeroDimension);
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut out = Vec::with_capacity(raw.len() + 1);
    out.extend_from_slice(raw);
    out.push(1.0);
    Ok(out)
}

/// Immutable weighted labeled point set with cached total weight and a
/// per-label index.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDataset {
    dim: usize,
    ids: Vec<usize>,
    features: Vec<f64>,
    labels: Vec<Label>,
    weights: Vec<f64>,
    total_weight: f64,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl WeightedDataset {
    /// Builds a dataset from raw (un-embedded) row-major features of width
    /// `dim`. Weights default to 1 and ids to the row index.
    pub fn from_raw(
        dim: usize,
        raw: &[f64],
        labels: Vec<Label>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if raw.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: raw.len(),
            });
        }
        let n = labels.len();
        let mut features = Vec::with_capacity(n * (dim + 1));
        for (i, row) in raw.chunks_exact(dim).enumerate() {
            let row = embed_bias(row).map_err(|e| match e {
                Error::NonFinite { index } => Error::NonFinite {
                    index: i * dim + index,
                },
                other => other,
            })?;
            features.extend_from_slice(&row);
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        Self::from_embedded(dim, (0..n).collect(), features, labels, weights)
    }

    /// Builds a dataset from already embedded rows of width `dim + 1`.
    pub fn from_embedded(
        dim: usize,
        ids: Vec<usize>,
        features: Vec<f64>,
        labels: Vec<Label>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let n = labels.len();
        let width = dim + 1;
        if features.len() != n * width {
            return Err(Error::DimensionMismatch {
                expected: n * width,
                got: features.len(),
            });
        }
        if ids.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ids.len().min(weights.len()),
            });
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for (i, row) in features.chunks_exact(width).enumerate() {
            if row[dim] != 1.0 {
                return Err(Error::param(format!(
                    "point {i}: bias entry is {} (expected 1)",
                    row[dim]
                )));
            }
        }
        if let Some((index, &weight)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::InvalidWeight { index, weight });
        }
        let total_weight = weights.iter().sum();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (i, y) in labels.iter().enumerate() {
            match y {
                Label::Pos => positives.push(i),
                Label::Neg => negatives.push(i),
            }
        }
        Ok(Self {
            dim,
            ids,
            features,
            labels,
            weights,
            total_weight,
            positives,
            negatives,
        })
    }

    pub fn from_points(dim: usize, points: &[LabeledPoint]) -> Result<Self> {
        let mut features = Vec::with_capacity(points.len() * (dim + 1));
        for p in points {
            if p.x.len() != dim + 1 {
                return Err(Error::DimensionMismatch {
                    expected: dim + 1,
                    got: p.x.len(),
                });
            }
            features.extend_from_slice(&p.x);
        }
        Self::from_embedded(
            dim,
            points.iter().map(|p| p.id).collect(),
            features,
            points.iter().map(|p| p.y).collect(),
            points.iter().map(|p| p.u).collect(),
        )
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Raw feature dimension `d` (the embedded width is `d + 1`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.dim + 1
    }

    /// Embedded feature row of point `i`.
    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.features[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.labels[i].sign()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    #[inline]
    pub fn id(&self, i: usize) -> usize {
        self.ids[i]
    }

    pub fn point(&self, i: usize) -> PointRef<'_> {
        PointRef {
            id: self.ids[i],
            x: self.x(i),
            y: self.labels[i],
            u: self.weights[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PointRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Cached total weight `U`.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Indices (positions, not ids) of positive points.
    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn negatives(&self) -> &[usize] {
        &self.negatives
    }

    pub fn indices_of(&self, label: Label) -> &[usize] {
        match label {
            Label::Pos => &self.positives,
            Label::Neg => &self.negatives,
        }
    }

    pub fn weight_of(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.weights[i]).sum()
    }

    pub fn has_both_labels(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }

    /// New dataset made of the points at `indices` (repeats allowed) with
    /// the given weights. Ids are carried over.
    pub fn select(&self, indices: &[usize], weights: Vec<f64>) -> Result<Self> {
        let w = self.width();
        let mut features = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            features.extend_from_slice(self.x(i));
        }
        Self::from_embedded(
            self.dim,
            indices.iter().map(|&i| self.ids[i]).collect(),
            features,
            indices.iter().map(|&i| self.labels[i]).collect(),
            weights,
        )
    }

    /// Same points, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_embedded(
            self.dim,
            self.ids.clone(),
            self.features.clone(),
            self.labels.clone(),
            weights,
        )
    }

    /// Concatenates two datasets of the same dimension, keeping all weights.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::from_embedded(self.dim, ids, features, labels, weights)
    }

    /// Raw (pre-embedding) features in row-major order.
    pub fn raw_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            out.extend_from_slice(&self.x(i)[..self.dim]);
        }
        out
    }
}

/// Result of partitioning a dataset by label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSplit {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Set when one side is empty.
    pub one_sided: bool,
}

/// Partitions point ids by label.
pub fn split_by_label(ds: &WeightedDataset) -> Result<LabelSplit> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let positives: Vec<usize> = ds.positives().iter().map(|&i| ds.id(i)).collect();
    let negatives: Vec<usize> = ds.negatives().iter().map(|&i| ds.id(i)).collect();
    let one_sided = positives.is_empty() || negatives.is_empty();
    if one_sided {
        log::warn!("dataset has a single label; the other side is empty");
    }
    Ok(LabelSplit {
        positives,
        negatives,
        one_sided,
    })
}

/// Per-feature centering and scaling constants. Uses the population (1/n)
/// standard deviation; constant features get a divisor of 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(values: &[f64], d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        let n = values.len() / d;
        if n < 2 {
            return Err(Error::param("standardization needs at least 2 rows"));
        }
        let mut mean = vec![0.0; d];
        for row in values.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in values.chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Divisor applied to feature `j`: the std, or 1 for constant features.
    pub fn scale(&self, j: usize) -> f64 {
        let s = self.std[j];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.scale(j);
        }
    }
}

/// Streaming (Welford) accumulator for [`Standardization`], used when the
/// data cannot be held in memory.
#[derive(Clone, Debug)]
pub struct StandardizationAccumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StandardizationAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn finish(self) -> Result<Standardization> {
        if self.n < 2 {
            return Err(Error::param("standardization needs at least 2 rows"));
        }
        let n = self.n as f64;
        Ok(Standardization {
            std: self.m2.iter().map(|s| (s / n).max(0.0).sqrt()).collect(),
            mean: self.mean,
        })
    }
}

/// Standardizes each column of a row-major `n x d` matrix. Returns the
/// transformed matrix and the constants used.
pub fn standardize(values: &[f64], d: usize) -> Result<(Vec<f64>, Standardization)> {
    let st = Standardization::fit(values, d)?;
    let mut out = values.to_vec();
    for row in out.chunks_exact_mut(d) {
        st.apply(row);
    }
    Ok((out, st))
}

/// Column reference in a CSV file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Label column; the last column when unset.
    pub label_column: Option<ColumnSelector>,
    pub weight_column: Option<ColumnSelector>,
    pub standardize: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label_column: None,
            weight_column: None,
            standardize: true,
        }
    }
}

/// Provenance of a loaded dataset, exported as JSON next to outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub n: usize,
    pub d: usize,
    pub feature_names: Vec<String>,
    pub standardization: Option<Standardization>,
    pub std_convention: String,
    pub label_mapping: BTreeMap<String, i8>,
    pub weighted: bool,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: WeightedDataset,
    pub metadata: DatasetMetadata,
}

/// One parsed CSV record before embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub features: Vec<f64>,
    pub label: Label,
    pub weight: f64,
}

/// Resolves the column layout of a CSV source and parses its records.
#[derive(Clone, Debug)]
pub struct RowParser {
    label_col: usize,
    weight_col: Option<usize>,
    feature_cols: Vec<usize>,
    feature_names: Vec<String>,
}

impl RowParser {
    pub fn new(header: Option<&csv::StringRecord>, width: usize, opts: &CsvOptions) -> Result<Self> {
        let resolve = |sel: &ColumnSelector| -> Result<usize> {
            match sel {
                ColumnSelector::Index(i) if *i < width => Ok(*i),
                ColumnSelector::Index(i) => Err(Error::UnknownColumn(i.to_string())),
                ColumnSelector::Name(name) => header
                    .and_then(|h| h.iter().position(|c| c.trim() == name))
                    .ok_or_else(|| Error::UnknownColumn(name.clone())),
            }
        };
        if width < 2 {
            return Err(Error::ZeroDimension);
        }
        let label_col = match &opts.label_column {
            Some(sel) => resolve(sel)?,
            None => width - 1,
        };
        let weight_col = opts.weight_column.as_ref().map(resolve).transpose()?;
        if weight_col == Some(label_col) {
            return Err(Error::param("label and weight columns coincide"));
        }
        let feature_cols: Vec<usize> = (0..width)
            .filter(|&c| c != label_col && Some(c) != weight_col)
            .collect();
        if feature_cols.is_empty() {
            return Err(Error::ZeroDimension);
        }
        let feature_names = feature_cols
            .iter()
            .map(|&c| match header {
                Some(h) => h.get(c).unwrap_or("").trim().to_string(),
                None => format!("x{}", c + 1),
            })
            .collect();
        Ok(Self {
            label_col,
            weight_col,
            feature_cols,
            feature_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_cols.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn weighted(&self) -> bool {
        self.weight_col.is_some()
    }

    /// Parses one record; `row` is the 1-based data row number for errors.
    pub fn parse(&self, record: &csv::StringRecord, row: usize) -> Result<RawRow> {
        let expected = self.feature_cols.len() + 1 + usize::from(self.weight_col.is_some());
        if record.len() != expected {
            return Err(Error::MissingField {
                row,
                expected,
                found: record.len(),
            });
        }
        let num = |c: usize| -> Result<f64> {
            let token = record.get(c).unwrap_or("").trim();
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: c,
                    token: token.to_string(),
                }),
            }
        };
        let features = self
            .feature_cols
            .iter()
            .map(|&c| num(c))
            .collect::<Result<Vec<_>>>()?;
        let token = record.get(self.label_col).unwrap_or("");
        let label = Label::parse_token(token).ok_or_else(|| Error::UnknownLabel {
            row,
            token: token.to_string(),
        })?;
        let weight = match self.weight_col {
            Some(c) => {
                let w = num(c)?;
                if w < 0.0 {
                    return Err(Error::InvalidWeight {
                        index: row,
                        weight: w,
                    });
                }
                w
            }
            None => 1.0,
        };
        Ok(RawRow {
            features,
            label,
            weight,
        })
    }
}

pub(crate) fn csv_reader<R: Read>(reader: R, has_header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn label_mapping() -> BTreeMap<String, i8> {
    [("-1", -1), ("0", -1), ("1", 1), ("+1", 1)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Reads a labeled dataset from any CSV source.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<LoadedDataset> {
    let mut rdr = csv_reader(reader, opts.has_header);
    let header = if opts.has_header {
        Some(rdr.headers()?.clone())
    } else {
        None
    };
    let mut records = rdr.records();
    let mut parser: Option<RowParser> = header
        .as_ref()
        .map(|h| RowParser::new(Some(h), h.len(), opts))
        .transpose()?;
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut row = 0;
    for rec in records.by_ref() {
        let rec = rec?;
        row += 1;
        let p = match &parser {
            Some(p) => p,
            None => parser.insert(RowParser::new(None, rec.len(), opts)?),
        };
        let parsed = p.parse(&rec, row)?;
        raw.extend_from_slice(&parsed.features);
        labels.push(parsed.label);
        weights.push(parsed.weight);
    }
    let parser = parser.ok_or(Error::EmptyDataset)?;
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = parser.dim();
    let standardization = if opts.standardize {
        let (scaled, st) = standardize(&raw, d)?;
        raw = scaled;
        Some(st)
    } else {
        None
    };
    let dataset = WeightedDataset::from_raw(d, &raw, labels, Some(weights))?;
    let metadata = DatasetMetadata {
        n: dataset.len(),
        d,
        feature_names: parser.feature_names().to_vec(),
        standardization,
        std_convention: "population".into(),
        label_mapping: label_mapping(),
        weighted: parser.weighted(),
    };
    Ok(LoadedDataset { dataset, metadata })
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(file), opts)
}

/// Writes raw features, the label and (optionally) the weight of every
/// point. Floats use the shortest representation that parses back to the
/// same value.
pub fn write_csv<W: Write>(writer: W, ds: &WeightedDataset, with_weights: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = ds.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if with_weights {
        header.push("weight".into());
    }
    wtr.write_record(&header)?;
    let mut rec = Vec::with_capacity(d + 2);
    for p in ds.iter() {
        rec.clear();
        rec.extend(p.x[..d].iter().map(|v| v.to_string()));
        rec.push(p.y.token().to_string());
        if with_weights {
            rec.push(p.u.to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, ds: &WeightedDataset, with_weights: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), ds, with_weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_bias_appends_one() {
        assert_eq!(embed_bias(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0, 1.0]);
        assert_eq!(embed_bias(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(embed_bias(&[]), Err(Error::ZeroDimension)));
        assert!(matches!(
            embed_bias(&[1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn standardize_two_values() {
        let (out, st) = standardize(&[1.0, 3.0], 1).unwrap();
        assert_eq!(out, vec![-1.0, 1.0]);
        assert_eq!(st.mean, vec![2.0]);
        assert_eq!(st.std, vec![1.0]);
    }

    #[test]
    fn standardize_constant_column_is_centered() {
        let (out, st) = standardize(&[5.0, 5.0, 5.0], 1).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
        assert_eq!(st.std, vec![0.0]);
        assert_eq!(st.scale(0), 1.0);
    }

    #[test]
    fn standardize_columns_independently() {
        // [[1, 0], [0, 1]]: each column has mean 0.5 and population std 0.5.
        let (out, st) = standardize(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(st.mean, vec![0.5, 0.5]);
        assert_eq!(st.std, vec![0.5, 0.5]);
        assert_eq!(out, vec![1.0, -1.0, -1.0, 1.0]);
        assert!(standardize(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn welford_matches_batch() {
        let vals: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let batch = Standardization::fit(&vals, 2).unwrap();
        let mut acc = StandardizationAccumulator::new(2);
        for row in vals.chunks_exact(2) {
            acc.push(row);
        }
        let online = acc.finish().unwrap();
        for j in 0..2 {
            assert!((batch.mean[j] - online.mean[j]).abs() < 1e-12);
            assert!((batch.std[j] - online.std[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_vector_flips_bias() {
        assert_eq!(signed_vector(&[2.0, 1.0], Label::Pos), vec![2.0, 1.0]);
        assert_eq!(signed_vector(&[2.0, 1.0], Label::Neg), vec![-2.0, -1.0]);
        assert_eq!(signed_vector(&[0.0, 1.0], Label::Neg), vec![0.0, -1.0]);
    }

    #[test]
    fn split_by_label_partitions() {
        let ds = WeightedDataset::from_raw(
            1,
            &[0.0, 1.0, 2.0],
            vec![Label::Pos, Label::Neg, Label::Pos],
            None,
        )
        .unwrap();
        let split = split_by_label(&ds).unwrap();
        assert_eq!(split.positives, vec![0, 2]);
        assert_eq!(split.negatives, vec![1]);
        assert!(!split.one_sided);

        let all_pos =
            WeightedDataset::from_raw(1, &[0.0, 1.0], vec![Label::Pos, Label::Pos], None).unwrap();
        let split = split_by_label(&all_pos).unwrap();
        assert!(split.negatives.is_empty());
        assert!(split.one_sided);

        let empty = WeightedDataset::from_raw(1, &[], vec![], None).unwrap();
        assert!(matches!(split_by_label(&empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn dataset_invariants() {
        let ds = WeightedDataset::from_raw(
            2,
            &[1.0, 2.0, 3.0, 4.0],
            vec![Label::Pos, Label::Neg],
            Some(vec![0.5, 2.0]),
        )
        .unwrap();
        assert_eq!(ds.x(1), &[3.0, 4.0, 1.0]);
        assert_eq!(ds.total_weight(), 2.5);
        assert!(WeightedDataset::from_raw(1, &[1.0], vec![Label::Pos], Some(vec![-1.0])).is_err());
        assert!(WeightedDataset::from_embedded(1, vec![0], vec![1.0, 2.0], vec![Label::Pos], vec![1.0]).is_err());
    }

    #[test]
    fn csv_label_mapping_and_errors() {
        let text = "a,b,y\n1,2,0\n3,4,1\n5,6,0\n";
        let loaded = read_csv(
            text.as_bytes(),
            &CsvOptions {
                standardize: false,
                ..Default::default()
            },
        )
        .unwrap();
        let labels: Vec<f64> = (0..3).map(|i| loaded.dataset.y(i)).collect();
        assert_eq!(labels, vec![-1.0, 1.0, -1.0]);
        assert_eq!(loaded.metadata.d, 2);
        assert_eq!(loaded.metadata.feature_names, vec!["a", "b"]);

        let missing = "a,b,y\n1,2,0\n3,1\n";
        let err = read_csv(missing.as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingField { row: 2, .. }), "{err}");

        let bad_label = "a,y\n1,2\n";
        let err = read_csv(bad_label.as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { row: 1, .. }));

        let bad_num = "a,y\nfoo,1\n";
        let err = read_csv(bad_num.as_bytes(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, column: 0, .. }));
    }

    #[test]
    fn csv_label_column_by_name_and_weights() {
        let text = "y,w,a\n1,2.5,0.1\n-1,1,0.2\n";
        let opts = CsvOptions {
            label_column: Some(ColumnSelector::Name("y".into())),
            weight_column: Some(ColumnSelector::Name("w".into())),
            standardize: false,
            ..Default::default()
        };
        let ds = read_csv(text.as_bytes(), &opts).unwrap().dataset;
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.weights(), &[2.5, 1.0]);
        assert_eq!(ds.x(0), &[0.1, 1.0]);
    }

    #[test]
    fn csv_without_header_uses_last_column() {
        let text = "0.5,1\n0.25,-1\n";
        let opts = CsvOptions {
            has_header: false,
            standardize: false,
            ..Default::default()
        };
        let ds = read_csv(text.as_bytes(), &opts).unwrap().dataset;
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label(1), Label::Neg);
    }

    #[test]
    fn standardization_precedes_embedding() {
        let text = "a,y\n1,1\n3,-1\n";
        let ds = read_csv(text.as_bytes(), &CsvOptions::default()).unwrap().dataset;
        assert_eq!(ds.x(0), &[-1.0, 1.0]);
        assert_eq!(ds.x(1), &[1.0, 1.0]);
    }
}
