//! Labelled datasets, the synthetic generators, CSV ingestion, log-loss and
//! k-fold cross-validation.
//!
//! All randomness comes from [`ChaCha8Rng`] seeded with `seed_from_u64`, so
//! generated data is reproducible across platforms for a given crate version.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{fit, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

/// Row-major points with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset("dimension must be at least 1".into()));
        }
        if x.len() != dim * y.len() {
            return Err(Error::Dataset(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                x.len(),
                y.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite feature in row {}", i / dim)));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::Dataset(format!("label in row {i} is not 0 or 1")));
        }
        Ok(Self { dim, x, y })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> u8 {
        self.y[i]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.dim)
    }

    /// Row-major feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    /// `(class-0 count, class-1 count)`.
    pub fn label_counts(&self) -> (usize, usize) {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        (self.len() - ones, ones)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            x.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Writes `x1,…,xd,y` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for k in 1..=self.dim {
            out.push_str(&format!("x{k},"));
        }
        out.push_str("y\n");
        for (x, y) in self.points().zip(&self.y) {
            for v in x {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other("output path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// How the sphere generator turns a point into a class-1 probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereLabel {
    /// `p = 1/(1 + exp(−10 (‖x‖ − 1)))`, a function of the distance to the unit circle.
    #[default]
    DistanceToCircle,
    /// `p = 1/(1 + exp(−10 ‖x‖))`, which is close to 1 for almost every point.
    RawNorm,
}

impl SphereLabel {
    pub fn probability(self, norm: f64) -> f64 {
        match self {
            SphereLabel::DistanceToCircle => sigmoid(10.0 * (norm - 1.0)),
            SphereLabel::RawNorm => sigmoid(10.0 * norm),
        }
    }
}

/// Noisy ring around the unit circle: radius `1 + 0.3 N`, angle `2πU`.
///
/// Per point the engine draws U, then N, then the label uniform.
pub fn generate_sphere(n: usize, seed: u64, label: SphereLabel) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let radius = 1.0 + 0.3 * z;
        let (s, c) = (2.0 * PI * u).sin_cos();
        let point = [radius * c, radius * s];
        let p = label.probability(radius.abs());
        x.extend_from_slice(&point);
        y.push(u8::from(rng.random::<f64>() < p));
    }
    Dataset { dim: 2, x, y }
}

/// Class-1 probability of the cross data: 0.9 when `x₁x₂ > 0`, else 0.1
/// (points on an axis fall in the 0.1 branch).
pub fn cross_probability(x: &[f64]) -> f64 {
    if x[0] * x[1] > 0.0 {
        0.9
    } else {
        0.1
    }
}

/// Uniform points on `[−2, 2]²`, labelled by [`cross_probability`].
///
/// Per point the engine draws x₁, then x₂, then the label uniform.
pub fn generate_cross(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let point = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let p = cross_probability(&point);
        x.extend_from_slice(&point);
        y.push(u8::from(rng.random::<f64>() < p));
    }
    Dataset { dim: 2, x, y }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Header name; requires a header row.
    Name(String),
    /// Zero-based column index.
    Index(usize),
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    #[default]
    Comma,
    /// Any run of spaces or tabs, as in the original Ripley files.
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label: LabelColumn,
    pub delimiter: Delimiter,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label: LabelColumn::Last,
            delimiter: Delimiter::Comma,
        }
    }
}

fn split_fields(line: &str, delimiter: Delimiter) -> Vec<&str> {
    match delimiter {
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        Delimiter::Whitespace => line.split_whitespace().collect(),
    }
}

/// Reads a delimited text file. Features are every non-label column, in file
/// order. Rows and columns in error messages are 1-based.
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, options)
}

pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<Dataset> {
    let (dim, x, y) = parse_table(text, options, true)?;
    Dataset::new(dim, x, y)
}

/// Reads a file in which every column is a feature; `options.label` is
/// ignored. Returns the dimension and the row-major points.
pub fn load_features(path: &Path, options: &CsvOptions) -> Result<(usize, Vec<f64>)> {
    parse_features(&fs::read_to_string(path)?, options)
}

pub fn parse_features(text: &str, options: &CsvOptions) -> Result<(usize, Vec<f64>)> {
    let (dim, x, _) = parse_table(text, options, false)?;
    Ok((dim, x))
}

fn parse_table(text: &str, options: &CsvOptions, labelled: bool) -> Result<(usize, Vec<f64>, Vec<u8>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_start_matches('\u{feff}')))
        .filter(|(_, l)| !l.trim().is_empty());

    let mut header: Option<Vec<String>> = None;
    if options.has_header {
        let (_, line) = lines
            .next()
            .ok_or_else(|| Error::Dataset("file is empty".into()))?;
        header = Some(split_fields(line, options.delimiter).into_iter().map(String::from).collect());
    }

    let mut width = header.as_ref().map(Vec::len);
    let mut label_col: Option<usize> = None;
    let mut rows = 0usize;
    let mut x = Vec::new();
    let mut y = Vec::new();

    for (row, line) in lines {
        let fields = split_fields(line, options.delimiter);
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(Error::Ingestion {
                row,
                column: fields.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", fields.len()),
            });
        }
        if w < 1 + usize::from(labelled) {
            return Err(Error::Ingestion {
                row,
                column: 1,
                message: "need at least one feature column and a label column".into(),
            });
        }
        let lc = match label_col {
            _ if !labelled => usize::MAX,
            Some(c) => c,
            None => {
                let c = match &options.label {
                    LabelColumn::Last => w - 1,
                    LabelColumn::Index(i) if *i < w => *i,
                    LabelColumn::Index(i) => {
                        return Err(Error::Dataset(format!("label column {i} out of range for {w} columns")))
                    }
                    LabelColumn::Name(name) => header
                        .as_ref()
                        .and_then(|h| h.iter().position(|c| c == name))
                        .ok_or_else(|| Error::Dataset(format!("no header column named {name:?}")))?,
                };
                label_col = Some(c);
                c
            }
        };
        for (col, field) in fields.iter().enumerate() {
            if col == lc {
                let label = match field.parse::<f64>() {
                    Ok(v) if v == 0.0 => 0,
                    Ok(v) if v == 1.0 => 1,
                    _ => {
                        return Err(Error::Ingestion {
                            row,
                            column: col + 1,
                            message: format!("label {field:?} is not 0 or 1"),
                        })
                    }
                };
                y.push(label);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: col + 1,
                    message: format!("cannot parse {field:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion {
                        row,
                        column: col + 1,
                        message: "value is not finite".into(),
                    });
                }
                x.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Dataset("no data rows".into()));
    }
    Ok((x.len() / rows, x, y))
}

/// Mean binary cross-entropy. Every prediction must lie strictly in (0, 1).
pub fn log_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    // running mean: a constant per-point loss is reproduced exactly
    let mut mean = 0.0;
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Metric(format!("prediction {p} at row {i} is outside (0, 1)")));
        }
        let loss = -if y == 1 { p.ln() } else { (1.0 - p).ln() };
        mean += (loss - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Seeded partition of `m` indices into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn new(m: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
        if m < k {
            return Err(Error::Config(format!("{m} points cannot fill {k} folds")));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; m];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % k;
        }
        Ok(Self { k, assignment, seed })
    }

    /// `(train, test)` indices for one fold, each ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub log_loss: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean_log_loss: f64,
    pub mean_node_count: f64,
}

/// Fits on `k − 1` folds and scores the held-out fold, for every fold.
/// Folds run in parallel; each fit uses `config` unchanged.
pub fn cross_validate(data: &Dataset, config: &TrainConfig, k: usize, seed: u64) -> Result<CrossValidation> {
    config.validate()?;
    let plan = FoldPlan::new(data.len(), k, seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(fold);
            let (tree, _) = fit(&data.subset(&train), config)?;
            let test = data.subset(&test);
            let predictions = tree.predict_many(test.features())?;
            Ok(FoldResult {
                fold,
                log_loss: log_loss(&predictions, test.labels())?,
                node_count: tree.internal_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_log_loss = folds.iter().map(|f| f.log_loss).sum::<f64>() / k as f64;
    let mean_node_count = folds.iter().map(|f| f.node_count as f64).sum::<f64>() / k as f64;
    Ok(CrossValidation {
        folds,
        mean_log_loss,
        mean_node_count,
    })
}
