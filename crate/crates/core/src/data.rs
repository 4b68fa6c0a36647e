//! Labelled datasets with train/test split and forget mask, CSV ingestion,
//! and the synthetic generators used as desk-scale benchmarks.
//!
//! CSV layout: header `f0,…,f{d-1},label[,split][,forget]`; `label ∈ {-1,1}`,
//! `split ∈ {train,test}`, `forget ∈ {0,1}`. A missing `split` column falls
//! back to the generators' stratified 80/20 split, a missing `forget` column
//! to an empty forget set.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::derived_rng;
use crate::{Error, Result};

/// Fraction of each class assigned to the train split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Row subsets. `Retain` is `D_s` (train rows not marked for forgetting),
/// `Forget` is `D_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Test,
    Retain,
    Forget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    split: Vec<Split>,
    forget: Vec<bool>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, split: Vec<Split>, forget: Vec<bool>) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(Error::validation("features", "need at least one feature column"));
        }
        for (name, len) in [
            ("labels", labels.len()),
            ("split", split.len()),
            ("forget", forget.len()),
        ] {
            if len != n {
                return Err(Error::validation(name, format!("{len} entries for {n} rows")));
            }
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::validation(
                    format!("row {i}"),
                    format!("{} features, expected {d}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {i}"), "non-finite feature"));
            }
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::validation(format!("row {i}"), "label must be -1 or 1"));
        }
        if let Some(i) = (0..n).find(|&i| forget[i] && split[i] == Split::Test) {
            return Err(Error::validation(
                format!("row {i}"),
                "test rows cannot be in the forget set",
            ));
        }
        Ok(Self {
            features,
            labels,
            split,
            forget,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn forget_mask(&self) -> &[bool] {
        &self.forget
    }

    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| match subset {
                Subset::Train => self.split[i] == Split::Train,
                Subset::Test => self.split[i] == Split::Test,
                Subset::Retain => self.split[i] == Split::Train && !self.forget[i],
                Subset::Forget => self.forget[i],
            })
            .collect()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            x: self.features[i].clone(),
            y: self.labels[i],
        }
    }

    pub fn samples_at(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.sample(i)).collect()
    }

    pub fn samples(&self, subset: Subset) -> Vec<Sample> {
        self.samples_at(&self.indices(subset))
    }

    /// Replaces the forget mask with exactly `rows` (train rows only).
    pub fn with_forget_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut forget = vec![false; self.len()];
        for &r in rows {
            if r >= self.len() {
                return Err(Error::validation("forget", format!("row {r} out of range")));
            }
            forget[r] = true;
        }
        Self::new(self.features.clone(), self.labels.clone(), self.split.clone(), forget)
    }

    pub fn apply_forget_policy(&self, policy: &ForgetPolicy) -> Result<Self> {
        let rows = policy.select(self)?;
        self.with_forget_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let d = self.n_features();
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label,split,forget\n");
        for i in 0..self.len() {
            for v in &self.features[i] {
                let _ = write!(out, "{v},");
            }
            let split = match self.split[i] {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(out, "{},{split},{}", self.labels[i] as i64, u8::from(self.forget[i]));
        }
        out
    }

    /// Parses the CSV layout above. `split_seed` drives the fallback split
    /// when the file has no `split` column.
    pub fn from_csv(text: &str, split_seed: u64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        let label_at = cols
            .iter()
            .position(|c| *c == "label")
            .ok_or_else(|| Error::validation("header", "missing `label` column"))?;
        if label_at == 0 {
            return Err(Error::validation("header", "need at least one feature column"));
        }
        for (j, c) in cols[..label_at].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(Error::validation(
                    "header",
                    format!("column {j} should be `f{j}`, found `{c}`"),
                ));
            }
        }
        let tail = &cols[label_at + 1..];
        let (has_split, has_forget) = match tail {
            [] => (false, false),
            ["split"] => (true, false),
            ["forget"] => (false, true),
            ["split", "forget"] => (true, true),
            _ => {
                return Err(Error::validation(
                    "header",
                    format!("unexpected trailing columns {tail:?}"),
                ))
            }
        };

        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut split = Vec::new();
        let mut forget = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv row {i}: {e}")))?;
            if rec.len() != cols.len() {
                return Err(Error::validation(
                    format!("row {i}"),
                    format!("{} fields, expected {}", rec.len(), cols.len()),
                ));
            }
            let num = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::validation(format!("row {i}"), format!("`{}` is not a finite number", &rec[j]))
                })
            };
            features.push((0..label_at).map(num).collect::<Result<Vec<_>>>()?);
            labels.push(num(label_at)?);
            let mut at = label_at + 1;
            if has_split {
                split.push(match &rec[at] {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => return Err(Error::validation(format!("row {i}"), format!("split `{other}`"))),
                });
                at += 1;
            }
            if has_forget {
                forget.push(match &rec[at] {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::validation(format!("row {i}"), format!("forget `{other}`"))),
                });
            }
        }
        if features.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let n = features.len();
        if !has_split {
            split = stratified_split(&labels, split_seed);
        }
        if !has_forget {
            forget = vec![false; n];
        }
        Self::new(features, labels, split, forget)
    }

    /// Min-max rescales each feature column onto `[−π, π]`.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        standardize(&mut out.features);
        out
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

fn standardize(features: &mut [Vec<f64>]) {
    let d = features[0].len();
    for j in 0..d {
        let (lo, hi) = features.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[j]), hi.max(r[j]))
        });
        let span = hi - lo;
        for row in features.iter_mut() {
            row[j] = if span > 0.0 {
                -PI + 2.0 * PI * (row[j] - lo) / span
            } else {
                0.0
            };
        }
    }
}

/// Per-class shuffled split with `TRAIN_FRACTION` of each class in train.
pub fn stratified_split(labels: &[f64], seed: u64) -> Vec<Split> {
    let mut split = vec![Split::Test; labels.len()];
    for (c, class) in [-1.0, 1.0].into_iter().enumerate() {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut derived_rng(seed, "split", c as u64));
        let n_train = (TRAIN_FRACTION * rows.len() as f64).round() as usize;
        for &r in &rows[..n_train] {
            split[r] = Split::Train;
        }
    }
    split
}

/// Which train rows form the forget set `D_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForgetPolicy {
    None,
    Rows {
        rows: Vec<usize>,
    },
    /// Every train row of one class.
    Class {
        label: i32,
    },
    /// `count` train rows of `label` nearest the class's left-most train row
    /// (smallest first feature): a spatially compact sub-cluster.
    Cluster {
        label: i32,
        count: usize,
    },
    /// `count` train rows drawn uniformly.
    Random {
        count: usize,
        seed: u64,
    },
}

impl ForgetPolicy {
    pub fn select(&self, data: &Dataset) -> Result<Vec<usize>> {
        let train = data.indices(Subset::Train);
        let class_rows = |label: i32| -> Result<Vec<usize>> {
            if label != 1 && label != -1 {
                return Err(Error::validation("forget.label", "must be -1 or 1"));
            }
            Ok(train
                .iter()
                .copied()
                .filter(|&i| data.labels[i] == f64::from(label))
                .collect())
        };
        let mut rows = match self {
            ForgetPolicy::None => Vec::new(),
            ForgetPolicy::Rows { rows } => rows.clone(),
            ForgetPolicy::Class { label } => class_rows(*label)?,
            ForgetPolicy::Cluster { label, count } => {
                let rows = class_rows(*label)?;
                if *count > rows.len() {
                    return Err(Error::validation(
                        "forget.count",
                        format!("{count} exceeds {} class rows", rows.len()),
                    ));
                }
                let anchor = *rows
                    .iter()
                    .min_by(|&&a, &&b| data.features[a][0].total_cmp(&data.features[b][0]).then(a.cmp(&b)))
                    .ok_or(Error::Empty("class"))?;
                let dist = |i: usize| -> f64 {
                    data.features[i]
                        .iter()
                        .zip(&data.features[anchor])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                };
                let mut sorted = rows;
                sorted.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
                sorted.truncate(*count);
                sorted
            }
            ForgetPolicy::Random { count, seed } => {
                if *count > train.len() {
                    return Err(Error::validation(
                        "forget.count",
                        format!("{count} exceeds {} train rows", train.len()),
                    ));
                }
                let mut rng = derived_rng(*seed, "forget", 0);
                let mut pool = train.clone();
                pool.shuffle(&mut rng);
                pool.truncate(*count);
                pool
            }
        };
        rows.sort_unstable();
        rows.dedup();
        if let Some(&r) = rows.iter().find(|&&r| r >= data.len() || data.split[r] != Split::Train) {
            return Err(Error::validation("forget.rows", format!("row {r} is not a train row")));
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoMoons,
    Blobs,
    Xor,
}

impl std::str::FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(Generator::TwoMoons),
            "blobs" => Ok(Generator::Blobs),
            "xor" => Ok(Generator::Xor),
            other => Err(Error::Unknown {
                kind: "generator",
                name: other.to_string(),
            }),
        }
    }
}

/// Deterministic synthetic dataset: 2 features standardized to `[−π, π]`,
/// balanced ±1 labels, stratified 80/20 train/test split, rows shuffled.
pub fn generate_dataset(name: Generator, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::param("n", format!("{n} < 4")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::param(
            "noise",
            format!("{noise} must be a finite non-negative std"),
        ));
    }
    let mut rng = derived_rng(seed, "generate", 0);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::param("noise", e.to_string()))?;
    let n_pos = n / 2;
    let n_neg = n - n_pos;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match name {
        Generator::TwoMoons => {
            let arc = |k: usize, i: usize| if k > 1 { PI * i as f64 / (k - 1) as f64 } else { 0.0 };
            for i in 0..n_pos {
                let t = arc(n_pos, i);
                features.push(vec![t.cos(), t.sin()]);
                labels.push(1.0);
            }
            for i in 0..n_neg {
                let t = arc(n_neg, i);
                features.push(vec![1.0 - t.cos(), 0.5 - t.sin()]);
                labels.push(-1.0);
            }
        }
        Generator::Blobs => {
            for i in 0..n {
                let (c, y) = if i < n_pos { (1.0, 1.0) } else { (-1.0, -1.0) };
                features.push(vec![c, c]);
                labels.push(y);
            }
        }
        Generator::Xor => {
            let pos = [(1.0, 1.0), (-1.0, -1.0)];
            let neg = [(1.0, -1.0), (-1.0, 1.0)];
            for i in 0..n_pos {
                let (a, b) = pos[i % 2];
                features.push(vec![a, b]);
                labels.push(1.0);
            }
            for i in 0..n_neg {
                let (a, b) = neg[i % 2];
                features.push(vec![a, b]);
                labels.push(-1.0);
            }
            // Spread points inside their quadrant before jitter.
            for row in features.iter_mut() {
                let s: f64 = rng.random_range(0.2..1.0);
                let r: f64 = rng.random_range(0.2..1.0);
                row[0] *= s;
                row[1] *= r;
            }
        }
    }
    for row in features.iter_mut() {
        for v in row.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut features: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
    let labels: Vec<f64> = order.iter().map(|&i| labels[i]).collect();
    standardize(&mut features);
    let split = stratified_split(&labels, seed);
    Dataset::new(features, labels, split, vec![false; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_contract() {
        for g in [Generator::TwoMoons, Generator::Blobs, Generator::Xor] {
            let d = generate_dataset(g, 100, 0.1, 3).unwrap();
            assert_eq!(d.len(), 100);
            let pos = d.labels().iter().filter(|&&y| y == 1.0).count();
            assert_eq!(pos, 50);
            assert_eq!(d.indices(Subset::Train).len(), 80);
            assert!(d
                .features()
                .iter()
                .flatten()
                .all(|v| (-PI - 1e-12..=PI + 1e-12).contains(v)));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_dataset(Generator::TwoMoons, 60, 0.05, 9).unwrap().to_csv();
        let b = generate_dataset(Generator::TwoMoons, 60, 0.05, 9).unwrap().to_csv();
        assert_eq!(a, b);
        let c = generate_dataset(Generator::TwoMoons, 60, 0.05, 10).unwrap().to_csv();
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_rejected() {
        assert!(generate_dataset(Generator::Blobs, 3, 0.1, 0).is_err());
    }

    #[test]
    fn two_moons_not_linearly_separable() {
        // Perceptron over a fine grid of directions and offsets never separates.
        let d = generate_dataset(Generator::TwoMoons, 100, 0.0, 1).unwrap();
        let mut best = 0.0f64;
        for k in 0..180 {
            let a = PI * k as f64 / 180.0;
            let (s, c) = a.sin_cos();
            let mut proj: Vec<(f64, f64)> = d
                .features()
                .iter()
                .zip(d.labels())
                .map(|(x, &y)| (c * x[0] + s * x[1], y))
                .collect();
            proj.sort_by(|a, b| a.0.total_cmp(&b.0));
            for cut in 0..=proj.len() {
                let correct =
                    proj[..cut].iter().filter(|p| p.1 < 0.0).count() + proj[cut..].iter().filter(|p| p.1 > 0.0).count();
                let acc = correct as f64 / proj.len() as f64;
                best = best.max(acc.max(1.0 - acc));
            }
        }
        assert!(best < 1.0, "two moons separated by a line");
    }

    #[test]
    fn csv_round_trip() {
        let d = generate_dataset(Generator::Xor, 40, 0.1, 4).unwrap();
        let d = d
            .apply_forget_policy(&ForgetPolicy::Random { count: 5, seed: 2 })
            .unwrap();
        let back = Dataset::from_csv(&d.to_csv(), 0).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_defaults_and_errors() {
        let text = "f0,f1,label\n0.1,0.2,1\n-0.3,0.0,-1\n0.5,0.5,1\n1.0,-1.0,-1\n0.2,0.2,1\n";
        let d = Dataset::from_csv(text, 5).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.forget_mask().iter().all(|f| !f));
        assert!(Dataset::from_csv("f0,label\n0.1,2\n", 0).is_err());
        assert!(Dataset::from_csv("f1,label\n0.1,1\n", 0).is_err());
        assert!(Dataset::from_csv("f0,label,split,forget\n0.1,1,test,1\n", 0).is_err());
        assert!(Dataset::from_csv("f0,label\n", 0).is_err());
        assert!(Dataset::from_csv("f0,label,extra\n0.1,1,x\n", 0).is_err());
        assert!(Dataset::from_csv("f0,label\nnan,1\n", 0).is_err());
    }

    #[test]
    fn cluster_policy_is_compact_and_single_class() {
        let d = generate_dataset(Generator::TwoMoons, 100, 0.05, 2).unwrap();
        let rows = ForgetPolicy::Cluster { label: 1, count: 15 }.select(&d).unwrap();
        assert_eq!(rows.len(), 15);
        assert!(rows
            .iter()
            .all(|&r| d.labels()[r] == 1.0 && d.split()[r] == Split::Train));
        let d = d.with_forget_rows(&rows).unwrap();
        assert_eq!(d.indices(Subset::Forget), rows);
        assert_eq!(d.indices(Subset::Retain).len(), 65);
    }
}
