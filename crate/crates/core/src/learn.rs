//! Feature assembly and RBF kernel regularized least-squares classification.

use crate::config::LearnConfig;
use crate::error::{Error, Result};
use crate::explore::{Mode, Outcome, TrialRecord};
use crate::par;
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fmt::Write as _;
use std::ops::Range;

pub const FEATURES: usize = 45;
pub const DATASET_SCHEMA: &str = "haptic-dataset/1";
pub const MODEL_SCHEMA: &str = "haptic-krls/1";

/// `[theta_grasp_init(6), theta_grasp_fin(6), theta_wrap(9), tau(24)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURES]);

pub fn assemble(t: &TrialRecord) -> Result<FeatureVector> {
    let m = match (&t.measurements, t.outcome) {
        (Some(m), Outcome::Completed) => m,
        _ => return Err(Error::IncompleteRecord(format!("{:?}", t.outcome))),
    };
    let mut v = [0.0; FEATURES];
    v[0..6].copy_from_slice(&m.theta_grasp_init);
    v[6..12].copy_from_slice(&m.theta_grasp_fin);
    v[12..21].copy_from_slice(&m.theta_wrap);
    v[21..45].copy_from_slice(&m.tau);
    Ok(FeatureVector(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSubset {
    InitOnly,
    Grasp,
    AllEncoders,
    TactileOnly,
    All,
}

impl FeatureSubset {
    pub const ALL: [FeatureSubset; 5] = [Self::InitOnly, Self::Grasp, Self::AllEncoders, Self::TactileOnly, Self::All];

    pub fn columns(self) -> Range<usize> {
        match self {
            Self::InitOnly => 0..6,
            Self::Grasp => 0..12,
            Self::AllEncoders => 0..21,
            Self::TactileOnly => 21..45,
            Self::All => 0..45,
        }
    }

    pub fn dims(self) -> usize {
        self.columns().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::InitOnly => "init-only",
            Self::Grasp => "grasp",
            Self::AllEncoders => "all-encoders",
            Self::TactileOnly => "tactile-only",
            Self::All => "all",
        }
    }

    pub fn select(self, x: &FeatureVector) -> Vec<f64> {
        x.0[self.columns()].to_vec()
    }
}

impl std::str::FromStr for FeatureSubset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown feature subset `{s}`")))
    }
}

/// One trial of a dataset. Failed trials keep their row with no features.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub label: u32,
    pub trial: u32,
    /// Attempts used, counting the successful one.
    pub attempts: u32,
    pub outcome: Outcome,
    pub features: Option<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub catalog_hash: String,
    pub rows: Vec<DatasetRow>,
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Completed => "completed",
        Outcome::Dropped => "dropped",
        Outcome::Timeout => "timeout",
    }
}

fn parse_outcome(s: &str) -> Result<Outcome> {
    match s {
        "completed" => Ok(Outcome::Completed),
        "dropped" => Ok(Outcome::Dropped),
        "timeout" => Ok(Outcome::Timeout),
        other => Err(Error::Format(format!("unknown outcome `{other}`"))),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("bad number `{s}`")))
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad integer `{s}`")))
}

fn header_fields(line: Option<&str>) -> Result<Vec<(String, String)>> {
    let line = line.ok_or_else(|| Error::Format("missing header".into()))?;
    let body = line.strip_prefix("# ").ok_or_else(|| Error::Format("header must start with `# `".into()))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad header field `{kv}`")))
        })
        .collect()
}

fn field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("header lacks `{key}`")))
}

impl Dataset {
    /// Completed rows only.
    pub fn samples(&self) -> Vec<(u32, FeatureVector)> {
        self.rows.iter().filter_map(|r| r.features.map(|f| (r.label, f))).collect()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.features.is_none()).count()
    }

    /// Keep rows whose label passes `keep`.
    pub fn filter_labels(&self, keep: impl Fn(u32) -> bool) -> Dataset {
        Dataset {
            rows: self.rows.iter().filter(|r| keep(r.label)).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# schema={DATASET_SCHEMA}\n");
        writeln!(
            s,
            "# seed={} mode={} config={} catalog={}",
            self.seed,
            self.mode.name(),
            self.config_hash,
            self.catalog_hash
        )
        .unwrap();
        s.push_str("label,trial,attempts,outcome");
        for i in 0..FEATURES {
            write!(s, ",f{i}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{},{},{}", r.label, r.trial, r.attempts, outcome_name(r.outcome)).unwrap();
            match &r.features {
                // `{:?}` is the shortest representation that parses back to the same bits
                Some(f) => f.0.iter().for_each(|v| write!(s, ",{v:?}").unwrap()),
                None => (0..FEATURES).for_each(|_| s.push(',')),
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(&format!("# schema={DATASET_SCHEMA}")) {
            return Err(Error::Format(format!("expected `# schema={DATASET_SCHEMA}`")));
        }
        let fields = header_fields(lines.next())?;
        let mode = field(&fields, "mode")?.parse()?;
        let seed = parse_int(field(&fields, "seed")?)?;
        let config_hash = field(&fields, "config")?.to_string();
        let catalog_hash = field(&fields, "catalog")?.to_string();
        let columns = lines.next().ok_or_else(|| Error::Format("missing column header".into()))?;
        if columns.split(',').count() != 4 + FEATURES || !columns.starts_with("label,trial,attempts,outcome,f0") {
            return Err(Error::Format("unexpected column header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 + FEATURES {
                return Err(Error::Format(format!("row {} has {} cells", n + 1, cells.len())));
            }
            let outcome = parse_outcome(cells[3])?;
            let features = if outcome == Outcome::Completed {
                let mut v = [0.0; FEATURES];
                for (i, c) in cells[4..].iter().enumerate() {
                    v[i] = parse_f64(c)?;
                    if !v[i].is_finite() {
                        return Err(Error::Format(format!("row {} has a non-finite feature", n + 1)));
                    }
                }
                Some(FeatureVector(v))
            } else {
                None
            };
            rows.push(DatasetRow {
                label: parse_int(cells[0])?,
                trial: parse_int(cells[1])?,
                attempts: parse_int(cells[2])?,
                outcome,
                features,
            });
        }
        Ok(Dataset {
            mode,
            seed,
            config_hash,
            catalog_hash,
            rows,
        })
    }
}

pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("kernel width must be positive, got {sigma}")));
    }
    Ok(rbf_unchecked(x, y, sigma))
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn rbf_unchecked(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    (-sq_dist(x, y) / (2.0 * sigma * sigma)).exp()
}

/// Symmetric kernel matrix with a unit diagonal.
pub fn kernel_matrix(xs: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = rbf_unchecked(&xs[i], &xs[j], sigma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn cross_kernel(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| rbf_unchecked(&a[i], &b[j], sigma))
}

/// Per-column standardization fitted on training data; constant columns are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    /// Indices of the input columns that are kept.
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let n = xs.len();
        let p = xs.first().map(|x| x.len()).ok_or_else(|| Error::Insufficient("no training rows".into()))?;
        let (mut keep, mut mean, mut scale) = (vec![], vec![], vec![]);
        for j in 0..p {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 * m.abs().max(1.0) {
                keep.push(j);
                mean.push(m);
                scale.push(sd);
            }
        }
        Ok(Self { keep, mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.keep.iter().enumerate().map(|(i, &j)| (x[j] - self.mean[i]) / self.scale[i]).collect()
    }
}

/// Median of all pairwise Euclidean distances.
pub fn median_pairwise_distance(xs: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = (0..xs.len())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(&xs[i], &xs[j]).sqrt())
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrlsModel {
    pub standardizer: Standardizer,
    /// Standardized training inputs.
    pub support: Vec<Vec<f64>>,
    /// `n x classes`.
    pub coef: DMatrix<f64>,
    pub sigma: f64,
    pub lambda: f64,
    /// Class label of each score column.
    pub classes: Vec<u32>,
    /// `max |(K + lambda n I) C - Y|` at training time.
    pub residual: f64,
}

fn one_hot(labels: &[usize], classes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), classes, |i, c| if labels[i] == c { 1.0 } else { 0.0 })
}

fn class_index(classes: &[u32], label: u32) -> Result<usize> {
    classes
        .binary_search(&label)
        .map_err(|_| Error::Domain(format!("label {label} not among the classes")))
}

/// Sorted distinct labels.
pub fn classes_of(labels: &[u32]) -> Vec<u32> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Fit on raw (unstandardized) rows. `classes` must be sorted and contain every label.
pub fn train(xs: &[Vec<f64>], labels: &[u32], classes: &[u32], lambda: f64, sigma: f64) -> Result<KrlsModel> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Insufficient(format!("{} rows for {} labels", xs.len(), labels.len())));
    }
    if !(lambda > 0.0) || !(sigma > 0.0) {
        return Err(Error::Domain(format!("lambda and sigma must be positive (got {lambda}, {sigma})")));
    }
    let idx = labels.iter().map(|&l| class_index(classes, l)).collect::<Result<Vec<_>>>()?;
    if classes_of(labels).len() < 2 {
        return Err(Error::Insufficient("at least two classes are needed".into()));
    }
    let standardizer = Standardizer::fit(xs)?;
    let support: Vec<Vec<f64>> = xs.iter().map(|x| standardizer.apply(x)).collect();
    let n = support.len();
    let mut a = kernel_matrix(&support, sigma);
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    let y = one_hot(&idx, classes.len());
    let chol = Cholesky::new(a.clone()).ok_or_else(|| Error::Domain("kernel system is not positive definite".into()))?;
    let mut coef = chol.solve(&y);
    // a few steps of iterative refinement keep the residual small for tiny lambda
    let mut residual = (&a * &coef - &y).amax();
    for _ in 0..4 {
        if residual < 1e-12 {
            break;
        }
        let r = &y - &a * &coef;
        let next = &coef + chol.solve(&r);
        let res = (&a * &next - &y).amax();
        if res >= residual {
            break;
        }
        coef = next;
        residual = res;
    }
    Ok(KrlsModel {
        standardizer,
        support,
        coef,
        sigma,
        lambda,
        classes: classes.to_vec(),
        residual,
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

impl KrlsModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        let k: Vec<f64> = self.support.iter().map(|s| rbf_unchecked(&z, s, self.sigma)).collect();
        (0..self.coef.ncols())
            .map(|c| k.iter().enumerate().map(|(i, v)| v * self.coef[(i, c)]).sum())
            .collect()
    }

    /// `(scores, label)`.
    pub fn predict(&self, x: &[f64]) -> (Vec<f64>, u32) {
        let s = self.scores(x);
        let label = self.classes[argmax(&s)];
        (s, label)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("schema={MODEL_SCHEMA}\n");
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        writeln!(s, "lambda={:?}", self.lambda).unwrap();
        writeln!(s, "sigma={:?}", self.sigma).unwrap();
        writeln!(s, "classes={}", join(&mut self.classes.iter().map(|c| c.to_string()))).unwrap();
        writeln!(s, "keep={}", join(&mut self.standardizer.keep.iter().map(|c| c.to_string()))).unwrap();
        writeln!(s, "mean={}", join(&mut self.standardizer.mean.iter().map(|v| format!("{v:?}")))).unwrap();
        writeln!(s, "scale={}", join(&mut self.standardizer.scale.iter().map(|v| format!("{v:?}")))).unwrap();
        writeln!(s, "support={}", self.support.len()).unwrap();
        for (i, z) in self.support.iter().enumerate() {
            let c = self.coef.row(i).iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
            let z = z.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
            writeln!(s, "{z};{c}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut kv = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("expected `{key}=`")))
        };
        if kv("schema")? != MODEL_SCHEMA {
            return Err(Error::Format(format!("expected schema={MODEL_SCHEMA}")));
        }
        fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
            if s.is_empty() {
                return Ok(vec![]);
            }
            s.split(',')
                .map(|c| c.parse().map_err(|_| Error::Format(format!("bad value `{c}`"))))
                .collect()
        }
        let lambda = parse_f64(&kv("lambda")?)?;
        let sigma = parse_f64(&kv("sigma")?)?;
        let classes: Vec<u32> = list(&kv("classes")?)?;
        let keep: Vec<usize> = list(&kv("keep")?)?;
        let mean: Vec<f64> = list(&kv("mean")?)?;
        let scale: Vec<f64> = list(&kv("scale")?)?;
        let n: usize = parse_int(&kv("support")?)?;
        if mean.len() != keep.len() || scale.len() != keep.len() || classes.len() < 2 {
            return Err(Error::Format("inconsistent model header".into()));
        }
        let mut support = Vec::with_capacity(n);
        let mut coef = DMatrix::zeros(n, classes.len());
        for i in 0..n {
            let line = lines.next().ok_or_else(|| Error::Format("truncated support".into()))?;
            let (z, c) = line.split_once(';').ok_or_else(|| Error::Format("support row lacks `;`".into()))?;
            let z: Vec<f64> = list(z)?;
            let c: Vec<f64> = list(c)?;
            if z.len() != keep.len() || c.len() != classes.len() {
                return Err(Error::Format(format!("support row {i} has the wrong width")));
            }
            support.push(z);
            for (j, v) in c.into_iter().enumerate() {
                coef[(i, j)] = v;
            }
        }
        if !(lambda > 0.0 && sigma > 0.0) {
            return Err(Error::Format("lambda and sigma must be positive".into()));
        }
        Ok(Self {
            standardizer: Standardizer { keep, mean, scale },
            support,
            coef,
            sigma,
            lambda,
            classes,
            residual: f64::NAN,
        })
    }
}

pub const CLASSIFIER_SCHEMA: &str = "haptic-classifier/1";

/// A trained model together with the feature columns it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub subset: FeatureSubset,
    pub model: KrlsModel,
}

impl Classifier {
    pub fn fit(ds: &Dataset, subset: FeatureSubset, hypers: Hypers) -> Result<Self> {
        let (xs, labels) = subset_rows(ds, subset);
        let model = train_with(&xs, &labels, &classes_of(&labels), hypers)?;
        Ok(Self { subset, model })
    }

    pub fn predict(&self, x: &FeatureVector) -> u32 {
        self.model.predict(&self.subset.select(x)).1
    }

    /// Accuracy and confusion matrix (rows true, columns predicted) over the completed rows.
    pub fn evaluate(&self, ds: &Dataset) -> Result<(f64, Vec<Vec<usize>>)> {
        let classes = &self.model.classes;
        let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
        let samples = ds.samples();
        if samples.is_empty() {
            return Err(Error::Insufficient("no completed rows to evaluate".into()));
        }
        for (label, x) in &samples {
            let t = class_index(classes, *label)?;
            let p = class_index(classes, self.predict(x))?;
            confusion[t][p] += 1;
        }
        let hit: usize = (0..classes.len()).map(|i| confusion[i][i]).sum();
        Ok((hit as f64 / samples.len() as f64, confusion))
    }

    pub fn to_text(&self) -> String {
        format!("schema={CLASSIFIER_SCHEMA}\nsubset={}\n{}", self.subset.name(), self.model.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut parts = text.splitn(3, '\n');
        if parts.next() != Some(&format!("schema={CLASSIFIER_SCHEMA}")) {
            return Err(Error::Format(format!("expected schema={CLASSIFIER_SCHEMA}")));
        }
        let subset = parts
            .next()
            .and_then(|l| l.strip_prefix("subset="))
            .ok_or_else(|| Error::Format("expected `subset=`".into()))?
            .parse()?;
        let model = KrlsModel::from_text(parts.next().unwrap_or_default())?;
        if model.standardizer.keep.iter().any(|&j| j >= FeatureSubset::dims(subset)) {
            return Err(Error::Format("model reads columns outside its subset".into()));
        }
        Ok(Self { subset, model })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypers {
    pub lambda: f64,
    /// Multiple of the median pairwise distance of the standardized training rows.
    pub sigma_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub subset: FeatureSubset,
    pub classes: Vec<u32>,
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub hypers: Vec<Hypers>,
}

impl CvReport {
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.confusion.iter().flatten().sum();
        let hit: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        hit as f64 / total as f64
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            write!(s, "{}", self.classes[i]).unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Aligned text grid; `.` marks zero cells.
    pub fn confusion_grid(&self) -> String {
        let mut s = String::from("    ");
        for c in &self.classes {
            write!(s, "{c:>3}").unwrap();
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            write!(s, "{:>3} ", self.classes[i]).unwrap();
            for v in row {
                if *v == 0 {
                    s.push_str("  .");
                } else {
                    write!(s, "{v:>3}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Assign each row a fold so every class has the same count per fold.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[u32], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    assign_folds(labels, folds, true, rng)
}

/// Round-robin over a per-class shuffle. With `exact`, every class must split evenly.
fn assign_folds<R: Rng + ?Sized>(labels: &[u32], folds: usize, exact: bool, rng: &mut R) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::NotStratifiable("need at least two folds".into()));
    }
    let mut fold = vec![0; labels.len()];
    for c in classes_of(labels) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if (exact && members.len() % folds != 0) || members.len() < folds {
            return Err(Error::NotStratifiable(format!(
                "class {c} has {} rows, not divisible by {folds} folds",
                members.len()
            )));
        }
        members.shuffle(rng);
        for (k, i) in members.into_iter().enumerate() {
            fold[i] = k % folds;
        }
    }
    Ok(fold)
}

/// Inner-CV accuracy for every `(sigma_factor, lambda)` on already standardized rows.
fn grid_scores(z: &[Vec<f64>], labels: &[usize], classes: usize, inner: &[usize], cfg: &LearnConfig) -> Vec<(Hypers, f64)> {
    let k_folds = inner.iter().max().map_or(0, |m| m + 1);
    let median = median_pairwise_distance(z);
    let mut out = Vec::new();
    for &sf in &cfg.sigma_factors {
        let sigma = sf * median;
        let mut hits = vec![0usize; cfg.lambdas.len()];
        let mut total = 0usize;
        for f in 0..k_folds {
            let tr: Vec<usize> = (0..z.len()).filter(|&i| inner[i] != f).collect();
            let va: Vec<usize> = (0..z.len()).filter(|&i| inner[i] == f).collect();
            let ztr: Vec<Vec<f64>> = tr.iter().map(|&i| z[i].clone()).collect();
            let zva: Vec<Vec<f64>> = va.iter().map(|&i| z[i].clone()).collect();
            let eig = SymmetricEigen::new(kernel_matrix(&ztr, sigma));
            let ytr = one_hot(&tr.iter().map(|&i| labels[i]).collect::<Vec<_>>(), classes);
            // scores(lambda) = K_va Q diag(1 / (eig + lambda n)) Q^T Y
            let a = cross_kernel(&zva, &ztr, sigma) * &eig.eigenvectors;
            let b = eig.eigenvectors.transpose() * &ytr;
            let n = tr.len() as f64;
            for (li, &lambda) in cfg.lambdas.iter().enumerate() {
                let mut scaled = b.clone();
                for (r, mut row) in scaled.row_iter_mut().enumerate() {
                    row /= eig.eigenvalues[r].max(0.0) + lambda * n;
                }
                let scores = &a * scaled;
                for (v, &i) in va.iter().enumerate() {
                    let row: Vec<f64> = scores.row(v).iter().copied().collect();
                    hits[li] += usize::from(argmax(&row) == labels[i]);
                }
            }
            total += va.len();
        }
        for (li, &lambda) in cfg.lambdas.iter().enumerate() {
            out.push((Hypers { lambda, sigma_factor: sf }, hits[li] as f64 / total as f64));
        }
    }
    out
}

/// Pick hyperparameters by inner stratified CV. Ties prefer larger lambda, then larger sigma.
pub fn select_hypers<R: Rng + ?Sized>(xs: &[Vec<f64>], labels: &[u32], cfg: &LearnConfig, rng: &mut R) -> Result<Hypers> {
    let classes = classes_of(labels);
    let idx = labels.iter().map(|&l| class_index(&classes, l)).collect::<Result<Vec<_>>>()?;
    let inner = assign_folds(labels, cfg.inner_folds, false, rng)?;
    let st = Standardizer::fit(xs)?;
    let z: Vec<Vec<f64>> = xs.iter().map(|x| st.apply(x)).collect();
    let scores = grid_scores(&z, &idx, classes.len(), &inner, cfg);
    let best = scores
        .iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.lambda.total_cmp(&b.0.lambda))
                .then(a.0.sigma_factor.total_cmp(&b.0.sigma_factor))
        })
        .ok_or_else(|| Error::Domain("empty hyperparameter grid".into()))?;
    Ok(best.0)
}

/// Train with a sigma resolved against the training rows.
pub fn train_with(xs: &[Vec<f64>], labels: &[u32], classes: &[u32], h: Hypers) -> Result<KrlsModel> {
    let st = Standardizer::fit(xs)?;
    let z: Vec<Vec<f64>> = xs.iter().map(|x| st.apply(x)).collect();
    let sigma = h.sigma_factor * median_pairwise_distance(&z);
    train(xs, labels, classes, h.lambda, sigma)
}

fn subset_rows(ds: &Dataset, subset: FeatureSubset) -> (Vec<Vec<f64>>, Vec<u32>) {
    ds.samples().into_iter().map(|(l, f)| (subset.select(&f), l)).unzip()
}

/// Stratified k-fold CV with inner model selection on each training portion.
pub fn cross_validate<R: Rng + ?Sized>(ds: &Dataset, subset: FeatureSubset, cfg: &LearnConfig, rng: &mut R) -> Result<CvReport> {
    let (xs, labels) = subset_rows(ds, subset);
    cross_validate_rows(&xs, &labels, subset, cfg, rng)
}

pub fn cross_validate_rows<R: Rng + ?Sized>(
    xs: &[Vec<f64>],
    labels: &[u32],
    subset: FeatureSubset,
    cfg: &LearnConfig,
    rng: &mut R,
) -> Result<CvReport> {
    let classes = classes_of(labels);
    if classes.len() < 2 {
        return Err(Error::Insufficient("at least two classes are needed".into()));
    }
    let fold = stratified_folds(labels, cfg.folds, rng)?;
    let inner_seeds: Vec<u64> = (0..cfg.folds).map(|_| rng.gen()).collect();
    let jobs: Vec<usize> = (0..cfg.folds).collect();
    let results = par::map(&jobs, |&f| -> Result<(f64, Vec<(usize, usize)>, Hypers)> {
        let tr: Vec<usize> = (0..xs.len()).filter(|&i| fold[i] != f).collect();
        let te: Vec<usize> = (0..xs.len()).filter(|&i| fold[i] == f).collect();
        let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| xs[i].clone()).collect();
        let ltr: Vec<u32> = tr.iter().map(|&i| labels[i]).collect();
        let mut inner_rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(inner_seeds[f]);
        let h = select_hypers(&xtr, &ltr, cfg, &mut inner_rng)?;
        let model = train_with(&xtr, &ltr, &classes, h)?;
        let mut pairs = Vec::with_capacity(te.len());
        let mut hit = 0;
        for &i in &te {
            let (_, pred) = model.predict(&xs[i]);
            hit += usize::from(pred == labels[i]);
            pairs.push((class_index(&classes, labels[i])?, class_index(&classes, pred)?));
        }
        Ok((hit as f64 / te.len() as f64, pairs, h))
    });
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut fold_accuracy = Vec::new();
    let mut hypers = Vec::new();
    for r in results {
        let (acc, pairs, h) = r?;
        fold_accuracy.push(acc);
        hypers.push(h);
        for (t, p) in pairs {
            confusion[t][p] += 1;
        }
    }
    let (mean, std) = mean_std(&fold_accuracy);
    Ok(CvReport {
        subset,
        classes,
        fold_accuracy,
        mean,
        std,
        confusion,
        hypers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Accuracy against the number of training trials per object.
///
/// Each repeat holds out `test_per_class` rows of every class and trains on
/// `size` of the remaining rows per class with fixed hyperparameters.
pub fn learning_curve<R: Rng + ?Sized>(
    ds: &Dataset,
    subset: FeatureSubset,
    sizes: &[usize],
    test_per_class: usize,
    repeats: usize,
    hypers: Hypers,
    rng: &mut R,
) -> Result<Vec<CurvePoint>> {
    let (xs, labels) = subset_rows(ds, subset);
    let classes = classes_of(&labels);
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == *c).collect())
        .collect();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    let pool = members.iter().map(Vec::len).min().unwrap_or(0);
    if classes.len() < 2 || pool < max_size + test_per_class || sizes.contains(&0) || repeats == 0 {
        return Err(Error::Insufficient(format!(
            "need {} rows per class for sizes up to {max_size}, smallest class has {pool}",
            max_size + test_per_class
        )));
    }
    // one shuffle per repeat, shared by every size so curves are paired across sizes
    let orders: Vec<Vec<Vec<usize>>> = (0..repeats)
        .map(|_| {
            members
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.shuffle(rng);
                    m
                })
                .collect()
        })
        .collect();
    let jobs: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| (0..repeats).map(move |r| (s, r))).collect();
    let accs = par::map(&jobs, |&(size, r)| -> Result<f64> {
        let (mut tr, mut te) = (vec![], vec![]);
        for m in &orders[r] {
            te.extend_from_slice(&m[..test_per_class]);
            tr.extend_from_slice(&m[test_per_class..test_per_class + size]);
        }
        let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| xs[i].clone()).collect();
        let ltr: Vec<u32> = tr.iter().map(|&i| labels[i]).collect();
        let model = train_with(&xtr, &ltr, &classes, hypers)?;
        let hit = te.iter().filter(|&&i| model.predict(&xs[i]).1 == labels[i]).count();
        Ok(hit as f64 / te.len() as f64)
    });
    let accs = accs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let a = accs[k * repeats..(k + 1) * repeats].to_vec();
            let (mean, std) = mean_std(&a);
            CurvePoint {
                size,
                accuracies: a,
                mean,
                std,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    /// Mean of `a - b`.
    pub mean_diff: f64,
    pub t: f64,
    pub dof: usize,
    /// Two-sided.
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on matched samples.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Insufficient(format!("paired test needs two equal samples of size >= 2 ({} vs {})", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, sd) = mean_std(&d);
    let dof = d.len() - 1;
    let se = sd / (d.len() as f64).sqrt();
    let (t, p) = if se > 0.0 {
        let t = m / se;
        let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::Domain(e.to_string()))?;
        (t, 2.0 * dist.cdf(-t.abs()))
    } else if m == 0.0 {
        (0.0, 1.0)
    } else {
        (m.signum() * f64::INFINITY, 0.0)
    };
    Ok(PairedTest {
        mean_diff: m,
        t,
        dof,
        p_value: p,
        alpha,
        significant: p < alpha,
    })
}
