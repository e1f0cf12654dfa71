//! Dataset representation, validation, on-disk ingestion and a synthetic
//! generator.
//!
//! A [`DatasetBundle`] holds `t` visual feature rows. The first `l` rows are
//! labeled samples of seen classes; the remaining rows are unlabeled samples
//! of unseen classes whose ground truth is only reachable through the
//! evaluation accessor. Reads of guarded data are counted in an
//! [`AccessLog`] so tests can prove that training never touched them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{fmt_sig9, quantize9};
use crate::rng::{self, streams};

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PROTOTYPES_FILE: &str = "prototypes.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const SEEN_TEST_FEATURES_FILE: &str = "seen_test_features.csv";
pub const SEEN_TEST_LABELS_FILE: &str = "seen_test_labels.csv";

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A visual feature vector of dimension `d`.
pub type FeatureVector = Array1<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrototype {
    pub class_id: ClassId,
    pub vector: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

impl SplitSpec {
    pub fn all_classes(&self) -> Vec<ClassId> {
        self.seen.iter().chain(&self.unseen).copied().collect()
    }

    pub fn is_seen(&self, id: ClassId) -> bool {
        self.seen.contains(&id)
    }

    pub fn is_unseen(&self, id: ClassId) -> bool {
        self.unseen.contains(&id)
    }
}

/// Per-dimension min-max statistics applied at ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxStats {
    pub fn fit(features: ArrayView2<f64>) -> Self {
        let d = features.ncols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if features.nrows() == 0 {
            min.fill(0.0);
            max.fill(1.0);
        }
        Self { min, max }
    }

    /// Maps into [0, 1], clipping values outside the fitted range. Constant
    /// dimensions map to 0.
    pub fn apply(&self, features: &mut Array2<f64>) {
        for mut row in features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 {
                    ((*v - self.min[j]) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
    }
}

/// Features paired with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub features: Array2<f64>,
    pub labels: Vec<ClassId>,
}

impl LabeledFeatures {
    pub fn empty(d: usize) -> Self {
        Self {
            features: Array2::zeros((0, d)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concat(&self, other: &LabeledFeatures) -> Result<LabeledFeatures> {
        if self.features.ncols() != other.features.ncols() {
            return Err(Error::DimensionMismatch {
                what: "feature concatenation".into(),
                expected: self.features.ncols(),
                got: other.features.ncols(),
            });
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("column counts checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledFeatures { features, labels })
    }
}

/// Counters for reads of guarded bundle data.
#[derive(Debug, Default)]
pub struct AccessLog {
    unlabeled_labels: AtomicUsize,
    unlabeled_features: AtomicUsize,
    prototypes: BTreeMap<ClassId, AtomicUsize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessSnapshot {
    pub unlabeled_label_reads: usize,
    pub unlabeled_feature_reads: usize,
    pub prototype_reads: BTreeMap<ClassId, usize>,
}

impl AccessSnapshot {
    pub fn prototype_reads_of(&self, ids: &[ClassId]) -> usize {
        ids.iter()
            .map(|id| self.prototype_reads.get(id).copied().unwrap_or(0))
            .sum()
    }
}

impl AccessLog {
    fn for_classes<'a>(ids: impl IntoIterator<Item = &'a ClassId>) -> Self {
        Self {
            prototypes: ids.into_iter().map(|&id| (id, AtomicUsize::new(0))).collect(),
            ..Self::default()
        }
    }

    pub fn snapshot(&self) -> AccessSnapshot {
        AccessSnapshot {
            unlabeled_label_reads: self.unlabeled_labels.load(Ordering::Relaxed),
            unlabeled_feature_reads: self.unlabeled_features.load(Ordering::Relaxed),
            prototype_reads: self
                .prototypes
                .iter()
                .map(|(&id, c)| (id, c.load(Ordering::Relaxed)))
                .collect(),
        }
    }

    pub fn reset(&self) {
        self.unlabeled_labels.store(0, Ordering::Relaxed);
        self.unlabeled_features.store(0, Ordering::Relaxed);
        for c in self.prototypes.values() {
            c.store(0, Ordering::Relaxed);
        }
    }

    fn touch_prototype(&self, id: ClassId) {
        if let Some(c) = self.prototypes.get(&id) {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }
}

/// Raw, unvalidated contents of a bundle.
#[derive(Clone, Debug)]
pub struct BundleParts {
    pub name: String,
    pub features: Array2<f64>,
    pub labels: Vec<ClassId>,
    pub n_labeled: usize,
    pub prototypes: BTreeMap<ClassId, Array1<f64>>,
    pub split: SplitSpec,
    pub normalization: Option<MinMaxStats>,
    /// Held-out labeled samples of seen classes, used for the seen-class
    /// accuracy of generalized evaluation.
    pub seen_test: Option<LabeledFeatures>,
}

#[derive(Debug)]
pub struct DatasetBundle {
    parts: BundleParts,
    access: AccessLog,
}

impl Clone for DatasetBundle {
    fn clone(&self) -> Self {
        Self::from_parts(self.parts.clone())
    }
}

impl PartialEq for DatasetBundle {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (&self.parts, &other.parts);
        a.name == b.name
            && a.features == b.features
            && a.labels == b.labels
            && a.n_labeled == b.n_labeled
            && a.prototypes == b.prototypes
            && a.split == b.split
            && a.normalization == b.normalization
            && a.seen_test == b.seen_test
    }
}

impl DatasetBundle {
    /// Wraps parts without validation; see [`validate_bundle`].
    pub fn from_parts(parts: BundleParts) -> Self {
        let mut ids: BTreeSet<ClassId> = parts.prototypes.keys().copied().collect();
        ids.extend(parts.split.all_classes());
        let access = AccessLog::for_classes(&ids);
        Self { parts, access }
    }

    pub fn try_new(parts: BundleParts) -> Result<Self> {
        let bundle = Self::from_parts(parts);
        let violations = validate_bundle(&bundle);
        if violations.is_empty() {
            Ok(bundle)
        } else {
            Err(Error::InvalidBundle(violations))
        }
    }

    pub fn into_parts(self) -> BundleParts {
        self.parts
    }

    pub fn parts(&self) -> &BundleParts {
        &self.parts
    }

    pub fn name(&self) -> &str {
        &self.parts.name
    }

    pub fn split(&self) -> &SplitSpec {
        &self.parts.split
    }

    /// Total sample count `t`.
    pub fn n_samples(&self) -> usize {
        self.parts.features.nrows()
    }

    /// Labeled sample count `l`.
    pub fn n_labeled(&self) -> usize {
        self.parts.n_labeled
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_samples().saturating_sub(self.n_labeled())
    }

    pub fn feature_dim(&self) -> usize {
        self.parts.features.ncols()
    }

    pub fn prototype_dim(&self) -> usize {
        self.parts
            .prototypes
            .values()
            .next()
            .map(|p| p.len())
            .unwrap_or(0)
    }

    pub fn normalization(&self) -> Option<&MinMaxStats> {
        self.parts.normalization.as_ref()
    }

    pub fn labeled_features(&self) -> ArrayView2<'_, f64> {
        self.parts.features.slice(s![..self.parts.n_labeled, ..])
    }

    pub fn labeled_labels(&self) -> &[ClassId] {
        &self.parts.labels[..self.parts.n_labeled]
    }

    pub fn labeled(&self) -> LabeledFeatures {
        LabeledFeatures {
            features: self.labeled_features().to_owned(),
            labels: self.labeled_labels().to_vec(),
        }
    }

    /// Training-mode access to unlabeled samples: features only.
    pub fn unlabeled_features(&self) -> ArrayView2<'_, f64> {
        self.access.unlabeled_features.fetch_add(1, Ordering::Relaxed);
        self.parts.features.slice(s![self.parts.n_labeled.., ..])
    }

    /// Evaluation-mode access to the ground truth of unlabeled samples.
    pub fn eval_unlabeled_labels(&self) -> &[ClassId] {
        self.access.unlabeled_labels.fetch_add(1, Ordering::Relaxed);
        &self.parts.labels[self.parts.n_labeled..]
    }

    /// Unlabeled samples with ground truth, for evaluation only.
    pub fn eval_unseen_test(&self) -> LabeledFeatures {
        LabeledFeatures {
            features: self.unlabeled_features().to_owned(),
            labels: self.eval_unlabeled_labels().to_vec(),
        }
    }

    pub fn seen_test(&self) -> Option<&LabeledFeatures> {
        self.parts.seen_test.as_ref()
    }

    pub fn has_prototype(&self, id: ClassId) -> bool {
        self.parts.prototypes.contains_key(&id)
    }

    pub fn prototype(&self, id: ClassId) -> Option<ArrayView1<'_, f64>> {
        let p = self.parts.prototypes.get(&id)?;
        self.access.touch_prototype(id);
        Some(p.view())
    }

    /// Stacks the prototypes of `ids` as rows.
    pub fn prototype_matrix(&self, ids: &[ClassId]) -> Result<Array2<f64>> {
        let a = self.prototype_dim();
        let mut out = Array2::zeros((ids.len(), a));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&self.prototype(id).ok_or(Error::MissingPrototype(id))?);
        }
        Ok(out)
    }

    pub fn access(&self) -> &AccessLog {
        &self.access
    }
}

/// Checks every bundle invariant and returns human-readable violations.
pub fn validate_bundle(bundle: &DatasetBundle) -> Vec<String> {
    let p = &bundle.parts;
    let mut out = Vec::new();
    let t = p.features.nrows();
    let d = p.features.ncols();

    if p.labels.len() != t {
        out.push(format!("label count {} differs from feature rows {t}", p.labels.len()));
    }
    if p.n_labeled < 1 || p.n_labeled > t {
        out.push(format!("n_labeled {} outside [1, {t}]", p.n_labeled));
    }
    if d == 0 {
        out.push("feature dimension is zero".into());
    }
    for (i, row) in p.features.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            out.push(format!("non-finite feature at index {i}"));
        }
    }

    let seen: BTreeSet<ClassId> = p.split.seen.iter().copied().collect();
    let unseen: BTreeSet<ClassId> = p.split.unseen.iter().copied().collect();
    if seen.len() != p.split.seen.len() || unseen.len() != p.split.unseen.len() {
        out.push("duplicate class id in split".into());
    }
    if seen.is_empty() {
        out.push("seen class set is empty".into());
    }
    if unseen.is_empty() {
        out.push("unseen class set is empty".into());
    }
    for id in seen.intersection(&unseen) {
        out.push(format!("non-disjoint split: class {id}"));
    }

    let mut region_errors = BTreeSet::new();
    for (i, &y) in p.labels.iter().enumerate() {
        let labeled = i < p.n_labeled;
        if !seen.contains(&y) && !unseen.contains(&y) {
            region_errors.insert(format!("label {y} not covered by split"));
        } else if labeled && !seen.contains(&y) {
            region_errors.insert("labeled region contains unseen class".to_string());
        } else if !labeled && !unseen.contains(&y) {
            region_errors.insert("unlabeled region contains seen class".to_string());
        }
    }
    out.extend(region_errors);

    let a = p.prototypes.values().next().map(|v| v.len()).unwrap_or(0);
    for id in seen.union(&unseen) {
        if !p.prototypes.contains_key(id) {
            out.push(format!("class {id} without prototype"));
        }
    }
    for (id, v) in &p.prototypes {
        if v.len() != a {
            out.push(format!("prototype {id} has dimension {} instead of {a}", v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            out.push(format!("non-finite prototype entry for class {id}"));
        }
    }
    if a == 0 && !p.prototypes.is_empty() {
        out.push("prototype dimension is zero".into());
    }

    if let Some(stats) = &p.normalization {
        if stats.min.len() != d || stats.max.len() != d {
            out.push("normalization statistics dimension mismatch".into());
        }
    }
    if let Some(test) = &p.seen_test {
        if test.features.nrows() != test.labels.len() {
            out.push("seen test label count differs from feature rows".into());
        }
        if test.features.ncols() != d {
            out.push("seen test feature dimension mismatch".into());
        }
        if test.labels.iter().any(|y| !seen.contains(y)) {
            out.push("seen test set contains non-seen class".into());
        }
        if test.features.iter().any(|v| !v.is_finite()) {
            out.push("non-finite seen test feature".into());
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
    n_labeled: usize,
    d: usize,
    a: usize,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<MinMaxStats>,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{field:?}: {e}"),
    })
}

fn parse_class(path: &Path, line: usize, field: &str) -> Result<ClassId> {
    field
        .trim()
        .parse::<u32>()
        .map(ClassId)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("class id {field:?}: {e}"),
        })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    require(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?)
}

fn read_matrix(path: &Path, expected_cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != expected_cols {
            return Err(Error::DimensionMismatch {
                what: format!("{} row {}", path.display(), i + 1),
                expected: expected_cols,
                got: rec.len(),
            });
        }
        for field in rec.iter() {
            data.push(parse_f64(path, i + 1, field)?);
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, expected_cols), data).expect("row lengths checked"))
}

fn read_labels(path: &Path) -> Result<Vec<ClassId>> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected one class id, found {} fields", rec.len()),
            });
        }
        out.push(parse_class(path, i + 1, &rec[0])?);
    }
    Ok(out)
}

fn read_prototypes(path: &Path, a: usize) -> Result<BTreeMap<ClassId, Array1<f64>>> {
    let mut out = BTreeMap::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != a + 1 {
            return Err(Error::DimensionMismatch {
                what: format!("{} row {}", path.display(), i + 1),
                expected: a + 1,
                got: rec.len(),
            });
        }
        let id = parse_class(path, i + 1, &rec[0])?;
        let v = rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(path, i + 1, f).map(quantize9))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(id, Array1::from(v)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate prototype for class {id}"),
            });
        }
    }
    Ok(out)
}

fn quantize_matrix(m: &mut Array2<f64>) {
    m.mapv_inplace(quantize9);
}

/// Loads the bundle stored in `root/name`.
pub fn load_dataset(root: &Path, name: &str) -> Result<DatasetBundle> {
    load_dataset_dir(&root.join(name))
}

/// Loads a bundle directory. Features without recorded normalization are
/// min-max normalized per dimension and the statistics are kept.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetBundle> {
    let split_path = dir.join(SPLIT_FILE);
    require(&split_path)?;
    for f in [FEATURES_FILE, LABELS_FILE, PROTOTYPES_FILE] {
        require(&dir.join(f))?;
    }
    let split: SplitFile = serde_json::from_str(&fs::read_to_string(&split_path)?)?;

    let seen: BTreeSet<_> = split.seen.iter().collect();
    if let Some(&id) = split.unseen.iter().find(|id| seen.contains(id)) {
        return Err(Error::NonDisjointSplit(id));
    }

    let mut features = read_matrix(&dir.join(FEATURES_FILE), split.d)?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            what: "labels vs feature rows".into(),
            expected: features.nrows(),
            got: labels.len(),
        });
    }
    let prototypes = read_prototypes(&dir.join(PROTOTYPES_FILE), split.a)?;
    for id in split.seen.iter().chain(&split.unseen).chain(&labels) {
        if !prototypes.contains_key(id) {
            return Err(Error::MissingPrototype(*id));
        }
    }

    let st_features = dir.join(SEEN_TEST_FEATURES_FILE);
    let st_labels = dir.join(SEEN_TEST_LABELS_FILE);
    let mut seen_test = match (st_features.is_file(), st_labels.is_file()) {
        (true, true) => Some(LabeledFeatures {
            features: read_matrix(&st_features, split.d)?,
            labels: read_labels(&st_labels)?,
        }),
        (false, false) => None,
        (true, false) => return Err(Error::MissingFile(st_labels)),
        (false, true) => return Err(Error::MissingFile(st_features)),
    };

    let normalization = match split.normalization {
        Some(stats) => {
            if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::OutOfRange(
                    "features declared normalized but lie outside [0, 1]".into(),
                ));
            }
            stats
        }
        None => {
            let stats = MinMaxStats::fit(features.view());
            stats.apply(&mut features);
            if let Some(t) = seen_test.as_mut() {
                stats.apply(&mut t.features);
            }
            stats
        }
    };
    quantize_matrix(&mut features);
    if let Some(t) = seen_test.as_mut() {
        quantize_matrix(&mut t.features);
    }

    let bundle = DatasetBundle::try_new(BundleParts {
        name: split.name,
        features,
        labels,
        n_labeled: split.n_labeled,
        prototypes,
        split: SplitSpec {
            seen: split.seen,
            unseen: split.unseen,
        },
        normalization: Some(normalization),
        seen_test,
    })?;
    log::debug!(
        "loaded bundle {} from {}: t={} l={} d={} a={}",
        bundle.name(),
        dir.display(),
        bundle.n_samples(),
        bundle.n_labeled(),
        bundle.feature_dim(),
        bundle.prototype_dim()
    );
    Ok(bundle)
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = String> + 'a) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn matrix_lines(m: &Array2<f64>) -> impl Iterator<Item = String> + '_ {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| fmt_sig9(v)).collect::<Vec<_>>().join(","))
}

/// Writes the bundle in the documented directory layout. Features are
/// written normalized, with the statistics recorded in `split.json`.
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = &bundle.parts;
    write_rows(&dir.join(FEATURES_FILE), matrix_lines(&p.features))?;
    write_rows(&dir.join(LABELS_FILE), p.labels.iter().map(|y| y.to_string()))?;
    write_rows(
        &dir.join(PROTOTYPES_FILE),
        p.prototypes.iter().map(|(id, v)| {
            std::iter::once(id.to_string())
                .chain(v.iter().map(|&x| fmt_sig9(x)))
                .collect::<Vec<_>>()
                .join(",")
        }),
    )?;
    if let Some(test) = &p.seen_test {
        write_rows(&dir.join(SEEN_TEST_FEATURES_FILE), matrix_lines(&test.features))?;
        write_rows(
            &dir.join(SEEN_TEST_LABELS_FILE),
            test.labels.iter().map(|y| y.to_string()),
        )?;
    }
    let split = SplitFile {
        seen: p.split.seen.clone(),
        unseen: p.split.unseen.clone(),
        n_labeled: p.n_labeled,
        d: p.features.ncols(),
        a: bundle.prototype_dim(),
        name: p.name.clone(),
        normalization: Some(p.normalization.clone().unwrap_or_else(|| MinMaxStats {
            min: vec![0.0; p.features.ncols()],
            max: vec![1.0; p.features.ncols()],
        })),
    };
    fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(&split)? + "\n")?;
    Ok(dir.to_path_buf())
}

/// Parameters of [`generate_synthetic_bundle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub d: usize,
    pub a: usize,
    pub samples_per_class: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Builds a desk-scale bundle whose visual clusters are a deterministic
/// function of the class prototypes.
///
/// Prototypes are uniform in `[0,1]^a`; a fixed Gaussian map `M` (entries
/// with standard deviation `2/sqrt(a)`) gives cluster centres
/// `sigmoid(M c)`, and each sample adds `noise_scale` Gaussian noise before
/// clipping to `[0,1]`. Classes `1..=n_seen` are seen, the rest unseen.
/// `samples_per_class` extra held-out samples per seen class form the seen
/// test set. The result is normalized exactly as [`load_dataset_dir`] would.
pub fn generate_synthetic_bundle(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let SyntheticSpec {
        n_seen,
        n_unseen,
        d,
        a,
        samples_per_class,
        noise_scale,
        seed,
    } = *spec;
    if n_seen < 1 || n_unseen < 1 || d < 1 || a < 1 || samples_per_class < 1 {
        return Err(Error::Config("all synthetic counts must be >= 1".into()));
    }
    if noise_scale.is_nan() || noise_scale < 0.0 {
        return Err(Error::Config("noise_scale must be >= 0".into()));
    }
    let mut rng = rng::stream(seed, streams::DATA);

    let n_classes = n_seen + n_unseen;
    let ids: Vec<ClassId> = (1..=n_classes as u32).map(ClassId).collect();
    let mut prototypes = BTreeMap::new();
    for &id in &ids {
        let v: Array1<f64> = (0..a).map(|_| quantize9(rng.random::<f64>())).collect();
        prototypes.insert(id, v);
    }
    let map = rng::normal_matrix(&mut rng, d, a) * (2.0 / (a as f64).sqrt());
    let centres: BTreeMap<ClassId, Array1<f64>> = prototypes
        .iter()
        .map(|(&id, c)| (id, map.dot(c).mapv(sigmoid)))
        .collect();

    let draw = |id: ClassId, rng: &mut rng::Stream| -> Array1<f64> {
        centres[&id].mapv(|m| {
            let n: f64 = rng.sample(StandardNormal);
            (m + noise_scale * n).clamp(0.0, 1.0)
        })
    };

    let t = n_classes * samples_per_class;
    let mut features = Array2::zeros((t, d));
    let mut labels = Vec::with_capacity(t);
    for &id in &ids {
        for _ in 0..samples_per_class {
            let row = labels.len();
            features.row_mut(row).assign(&draw(id, &mut rng));
            labels.push(id);
        }
    }
    let n_test = n_seen * samples_per_class;
    let mut test_features = Array2::zeros((n_test, d));
    let mut test_labels = Vec::with_capacity(n_test);
    for &id in &ids[..n_seen] {
        for _ in 0..samples_per_class {
            let row = test_labels.len();
            test_features.row_mut(row).assign(&draw(id, &mut rng));
            test_labels.push(id);
        }
    }

    let stats = MinMaxStats::fit(features.view());
    stats.apply(&mut features);
    stats.apply(&mut test_features);
    quantize_matrix(&mut features);
    quantize_matrix(&mut test_features);

    DatasetBundle::try_new(BundleParts {
        name: format!("synthetic-{seed}"),
        features,
        labels,
        n_labeled: n_seen * samples_per_class,
        prototypes,
        split: SplitSpec {
            seen: ids[..n_seen].to_vec(),
            unseen: ids[n_seen..].to_vec(),
        },
        normalization: Some(stats),
        seen_test: Some(LabeledFeatures {
            features: test_features,
            labels: test_labels,
        }),
    })
}
