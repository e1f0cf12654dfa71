//! Evaluation protocol and cross-benchmark aggregation.
//!
//! Accuracies are per-class top-1 in percent. Cross-benchmark scores use
//! mNRG: for each dataset the gain is the method's score minus the reference
//! method's score, and mNRG is the median gain (mean of the two central
//! values for an even count). ZSL aggregates T1, GZSL aggregates H.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledFeatures};
use crate::error::{Error, Result};
use crate::nets::{predict, LinearClassifier};

/// Tolerance on `h` against `2us/(u+s)` for printed one-decimal values.
pub const H_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inductive,
    Transductive,
}

impl Mode {
    pub fn code(&self) -> &'static str {
        match self {
            Mode::Inductive => "IN",
            Mode::Transductive => "TR",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Inductive => "inductive",
            Mode::Transductive => "transductive",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inductive" | "in" => Ok(Mode::Inductive),
            "transductive" | "tr" => Ok(Mode::Transductive),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "ZSL")]
    Zsl,
    #[serde(rename = "GZSL")]
    Gzsl,
}

/// Task and training mode, written `ZSL-IN`, `GZSL-TR`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Setting {
    pub task: Task,
    pub mode: Mode,
}

impl Setting {
    pub fn new(task: Task, mode: Mode) -> Self {
        Self { task, mode }
    }

    /// The metric aggregated for this task.
    pub fn headline_metric(&self) -> &'static str {
        match self.task {
            Task::Zsl => "T1",
            Task::Gzsl => "H",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let task = match self.task {
            Task::Zsl => "ZSL",
            Task::Gzsl => "GZSL",
        };
        write!(f, "{task}-{}", self.mode.code())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (task, mode) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("setting '{s}' is not TASK-MODE")))?;
        let task = match task.to_ascii_uppercase().as_str() {
            "ZSL" => Task::Zsl,
            "GZSL" => Task::Gzsl,
            _ => return Err(Error::Config(format!("unknown task '{task}'"))),
        };
        Ok(Setting::new(task, mode.parse()?))
    }
}

impl Serialize for Setting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluation result. ZSL records carry `t1`; GZSL records carry
/// `u`, `s` and `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub dataset: String,
    pub setting: Setting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

impl MetricsRecord {
    pub fn zsl(method: &str, dataset: &str, mode: Mode, t1: f64) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            setting: Setting::new(Task::Zsl, mode),
            t1: Some(t1),
            u: None,
            s: None,
            h: None,
        }
    }

    pub fn gzsl(method: &str, dataset: &str, mode: Mode, u: f64, s: f64, h: f64) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            setting: Setting::new(Task::Gzsl, mode),
            t1: None,
            u: Some(u),
            s: Some(s),
            h: Some(h),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "T1" | "t1" => self.t1,
            "u" => self.u,
            "s" => self.s,
            "H" | "h" => self.h,
            _ => None,
        }
    }

    pub fn headline(&self) -> Option<f64> {
        self.metric(self.setting.headline_metric())
    }

    /// Range checks and, for GZSL, `|h - 2us/(u+s)| <= H_TOLERANCE`.
    pub fn validate(&self) -> Result<()> {
        for v in [self.t1, self.u, self.s, self.h].into_iter().flatten() {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::OutOfRange(format!("{} {} {}: {v}", self.method, self.dataset, self.setting)));
            }
        }
        if let (Some(u), Some(s), Some(h)) = (self.u, self.s, self.h) {
            let dev = (h - harmonic_mean(u, s)).abs();
            if dev > H_TOLERANCE + 1e-9 {
                return Err(Error::OutOfRange(format!(
                    "{} {} {}: H = {h} but 2us/(u+s) = {:.4}",
                    self.method,
                    self.dataset,
                    self.setting,
                    harmonic_mean(u, s)
                )));
            }
        }
        Ok(())
    }
}

/// Mean over `class_set` of each class's accuracy, in percent.
pub fn per_class_top1(predictions: &[ClassId], labels: &[ClassId], class_set: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::SizeMismatch(predictions.len(), labels.len()));
    }
    if class_set.is_empty() {
        return Err(Error::Empty("class set".into()));
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (p, y) in predictions.iter().zip(labels) {
        let entry = tally.get_mut(y).ok_or(Error::UnknownClass(*y))?;
        entry.1 += 1;
        if p == y {
            entry.0 += 1;
        }
    }
    let mut sum = 0.0;
    for (&c, &(hit, total)) in &tally {
        if total == 0 {
            return Err(Error::EmptyClass(c));
        }
        sum += hit as f64 / total as f64;
    }
    Ok(100.0 * sum / tally.len() as f64)
}

/// `2us/(u+s)`, or 0 when `u + s = 0`.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

fn distinct_classes(labels: &[ClassId]) -> Vec<ClassId> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

fn covered(clf: &LinearClassifier, labels: &[ClassId]) -> Result<()> {
    match labels.iter().find(|y| !clf.classes.contains(y)) {
        Some(&y) => Err(Error::UnknownClass(y)),
        None => Ok(()),
    }
}

/// Top-1 accuracy of `clf` on the classes present in `test`, predicting over
/// every class the classifier knows.
pub fn top1_on(clf: &LinearClassifier, features: ArrayView2<f64>, labels: &[ClassId]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    covered(clf, labels)?;
    let preds = predict(clf, features)?;
    per_class_top1(&preds, labels, &distinct_classes(labels))
}

/// `(u, s, H)` with the search space covering every class of `clf`.
pub fn gzsl_eval(clf: &LinearClassifier, seen_test: &LabeledFeatures, unseen_test: &LabeledFeatures) -> Result<(f64, f64, f64)> {
    if seen_test.is_empty() || unseen_test.is_empty() {
        return Err(Error::Empty("GZSL test set".into()));
    }
    let u = top1_on(clf, unseen_test.features.view(), &unseen_test.labels)?;
    let s = top1_on(clf, seen_test.features.view(), &seen_test.labels)?;
    Ok((u, s, harmonic_mean(u, s)))
}

/// Median; even counts average the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: String,
    pub reference_method: String,
    pub setting: Setting,
    pub per_dataset_gains: BTreeMap<String, f64>,
    pub mnrg: f64,
}

/// Gains and their median for one method against a reference.
pub fn mnrg(
    method_scores: &BTreeMap<String, f64>,
    reference_scores: &BTreeMap<String, f64>,
) -> Result<(BTreeMap<String, f64>, f64)> {
    if method_scores.is_empty() {
        return Err(Error::Empty("score map".into()));
    }
    let a: Vec<_> = method_scores.keys().collect();
    let b: Vec<_> = reference_scores.keys().collect();
    if a != b {
        return Err(Error::KeyMismatch(format!("method datasets {a:?} vs reference datasets {b:?}")));
    }
    let gains: BTreeMap<String, f64> = method_scores
        .iter()
        .map(|(k, v)| (k.clone(), v - reference_scores[k]))
        .collect();
    let m = median(&gains.values().copied().collect::<Vec<_>>()).expect("non-empty");
    Ok((gains, m))
}

/// One row of a score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub dataset: String,
    pub setting: Setting,
    pub metric: String,
    pub value: f64,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row: ScoreRow = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        if !matches!(row.metric.as_str(), "T1" | "u" | "s" | "H") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("unknown metric '{}'", row.metric),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Groups score rows into records, one per (method, dataset, setting), in
/// first-appearance order.
pub fn records_from_scores(rows: &[ScoreRow]) -> Vec<MetricsRecord> {
    let mut out: Vec<MetricsRecord> = Vec::new();
    for r in rows {
        let idx = match out
            .iter()
            .position(|m| m.method == r.method && m.dataset == r.dataset && m.setting == r.setting)
        {
            Some(i) => i,
            None => {
                out.push(MetricsRecord {
                    method: r.method.clone(),
                    dataset: r.dataset.clone(),
                    setting: r.setting,
                    t1: None,
                    u: None,
                    s: None,
                    h: None,
                });
                out.len() - 1
            }
        };
        let rec = &mut out[idx];
        match r.metric.as_str() {
            "T1" => rec.t1 = Some(r.value),
            "u" => rec.u = Some(r.value),
            "s" => rec.s = Some(r.value),
            _ => rec.h = Some(r.value),
        }
    }
    out
}

/// Result of aggregating every method of one setting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub reports: Vec<AggregateReport>,
    /// Methods left out, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// mNRG of every method reporting `setting`, against `reference`'s scores in
/// the inductive variant of the same task. Datasets in `exclude` are dropped
/// on both sides; methods missing a reference dataset are skipped.
pub fn aggregate(records: &[MetricsRecord], reference: &str, setting: Setting, exclude: &[String]) -> Result<AggregateSummary> {
    let metric = setting.headline_metric();
    let ref_setting = Setting::new(setting.task, Mode::Inductive);
    let scores_of = |method: &str, st: Setting| -> BTreeMap<String, f64> {
        records
            .iter()
            .filter(|r| r.method == method && r.setting == st && !exclude.contains(&r.dataset))
            .filter_map(|r| r.metric(metric).map(|v| (r.dataset.clone(), v)))
            .collect()
    };
    let ref_scores = scores_of(reference, ref_setting);
    if ref_scores.is_empty() {
        return Err(Error::Config(format!("no {metric} scores for reference '{reference}' in {ref_setting}")));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in records.iter().filter(|r| r.setting == setting) {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut summary = AggregateSummary::default();
    for m in methods {
        let scores = scores_of(m, setting);
        let missing: Vec<_> = ref_scores.keys().filter(|k| !scores.contains_key(*k)).cloned().collect();
        if !missing.is_empty() {
            summary.skipped.push((m.to_string(), format!("no {metric} for {}", missing.join(", "))));
            continue;
        }
        let scores: BTreeMap<_, _> = scores.into_iter().filter(|(k, _)| ref_scores.contains_key(k)).collect();
        let (gains, value) = mnrg(&scores, &ref_scores)?;
        summary.reports.push(AggregateReport {
            method: m.to_string(),
            reference_method: reference.to_string(),
            setting,
            per_dataset_gains: gains,
            mnrg: value,
        });
    }
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<MetricsRecord>,
    pub aggregates: Vec<AggregateReport>,
}

/// Text table with one block per setting: a row per method, a column group
/// per dataset and an mNRG column when available. T1, u, s as printed,
/// H to one decimal, mNRG to two.
pub fn render_table(report: &Report) -> String {
    let mut settings: Vec<Setting> = report.records.iter().map(|r| r.setting).collect();
    settings.sort();
    settings.dedup();
    let mut out = String::new();
    for st in settings {
        let recs: Vec<&MetricsRecord> = report.records.iter().filter(|r| r.setting == st).collect();
        let mut datasets: Vec<&str> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for r in &recs {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let cols: &[&str] = match st.task {
            Task::Zsl => &["T1"],
            Task::Gzsl => &["u", "s", "H"],
        };
        let mut header = vec![st.to_string()];
        for d in &datasets {
            for c in cols {
                header.push(format!("{d} {c}"));
            }
        }
        header.push("mNRG".into());
        let mut rows = vec![header];
        for m in &methods {
            let mut row = vec![m.to_string()];
            for d in &datasets {
                let rec = recs.iter().find(|r| r.method == *m && r.dataset == *d);
                for c in cols {
                    row.push(match rec.and_then(|r| r.metric(c)) {
                        Some(v) => format!("{v:.1}"),
                        None => "-".into(),
                    });
                }
            }
            let agg = report.aggregates.iter().find(|a| a.method == *m && a.setting == st);
            row.push(match agg {
                Some(a) if a.method == a.reference_method && a.setting.mode == Mode::Inductive => "0 [ref]".into(),
                Some(a) => format!("{:.2}", a.mnrg),
                None => "-".into(),
            });
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, cell)| if j == 0 { format!("{cell:<w$}", w = widths[j]) } else { format!("{cell:>w$}", w = widths[j]) })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    let txt = dir.join("report.txt");
    fs::write(&json, serde_json::to_string_pretty(report)?)?;
    fs::write(&txt, render_table(report))?;
    Ok((json, txt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|&i| ClassId(i)).collect()
    }

    #[test]
    fn per_class_examples() {
        let labels = ids(&[1, 1, 2, 2, 2, 2, 2, 2]);
        assert_eq!(per_class_top1(&labels, &labels, &ids(&[1, 2])).unwrap(), 100.0);
        let preds = ids(&[1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(per_class_top1(&preds, &labels, &ids(&[1, 2])).unwrap(), 50.0);
        let wrong = ids(&[2, 2, 1, 1, 1, 1, 1, 1]);
        assert_eq!(per_class_top1(&wrong, &labels, &ids(&[1, 2])).unwrap(), 0.0);
    }

    #[test]
    fn per_class_errors() {
        let l = ids(&[1, 1]);
        assert!(matches!(per_class_top1(&l, &l, &ids(&[1, 2])), Err(Error::EmptyClass(ClassId(2)))));
        assert!(matches!(per_class_top1(&l, &l, &ids(&[3])), Err(Error::UnknownClass(_))));
        assert!(per_class_top1(&l[..1], &l, &ids(&[1])).is_err());
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(60.3, 75.9) - 67.2).abs() <= 0.05);
        assert_eq!(harmonic_mean(42.0, 42.0), 42.0);
        assert_eq!(harmonic_mean(0.0, 80.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn gzsl_eval_with_identity_classifier() {
        let clf = LinearClassifier {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: array![0.0, 0.0],
            classes: ids(&[1, 2]),
        };
        let seen = LabeledFeatures {
            features: array![[1.0, 0.0], [0.0, 1.0]],
            labels: ids(&[1, 1]),
        };
        let unseen = LabeledFeatures {
            features: array![[0.0, 1.0]],
            labels: ids(&[2]),
        };
        let (u, s, h) = gzsl_eval(&clf, &seen, &unseen).unwrap();
        assert_eq!((u, s), (100.0, 50.0));
        assert!((h - 200.0 / 3.0).abs() < 1e-12);
        assert!(gzsl_eval(&clf, &LabeledFeatures::empty(2), &unseen).is_err());
    }

    fn map(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
    }

    #[test]
    fn mnrg_examples() {
        let reference = map(&[("CUB", 57.3), ("FLO", 67.2), ("SUN", 60.8), ("AWA2", 68.2)]);
        let ours = map(&[("CUB", 80.6), ("FLO", 89.3), ("SUN", 71.7), ("AWA2", 92.8)]);
        assert!((mnrg(&ours, &reference).unwrap().1 - 22.7).abs() < 1e-9);
        let tf = map(&[("CUB", 77.2), ("FLO", 92.6), ("SUN", 70.1), ("AWA2", 92.1)]);
        assert!((mnrg(&tf, &reference).unwrap().1 - 21.9).abs() < 1e-9);
        assert_eq!(mnrg(&reference, &reference).unwrap().1, 0.0);
        assert!(matches!(mnrg(&map(&[("CUB", 1.0)]), &reference), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn setting_round_trip() {
        for s in ["ZSL-IN", "ZSL-TR", "GZSL-IN", "GZSL-TR"] {
            assert_eq!(s.parse::<Setting>().unwrap().to_string(), s);
        }
        assert!("ZSL".parse::<Setting>().is_err());
    }

    #[test]
    fn report_shapes() {
        let empty = Report::default();
        let json = serde_json::to_value(&empty).unwrap();
        assert_eq!(json["records"].as_array().unwrap().len(), 0);
        assert_eq!(render_table(&empty), "");

        let one = Report {
            records: vec![MetricsRecord::zsl("m", "d", Mode::Inductive, 50.0)],
            aggregates: vec![],
        };
        let json = serde_json::to_value(&one).unwrap();
        let rec = json["records"][0].as_object().unwrap();
        assert_eq!(rec["t1"], 50.0);
        assert!(!rec.contains_key("u") && !rec.contains_key("h"));
        assert_eq!(rec["setting"], "ZSL-IN");
    }

    #[test]
    fn validate_flags_inconsistent_h() {
        assert!(MetricsRecord::gzsl("m", "d", Mode::Inductive, 60.3, 75.9, 67.2).validate().is_ok());
        assert!(MetricsRecord::gzsl("m", "d", Mode::Inductive, 60.3, 75.9, 60.0).validate().is_err());
        assert!(MetricsRecord::zsl("m", "d", Mode::Inductive, 101.0).validate().is_err());
    }
}
