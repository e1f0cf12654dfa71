//! Virtual ambiguous classes.
//!
//! An ambiguous class mixes two real classes `y_i != y_j` with a proportion
//! `lam`: its prototype is `lam * c(y_i) + (1 - lam) * c(y_j)` and its label
//! is the soft distribution putting `lam` on `y_i` and `1 - lam` on `y_j`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, DatasetBundle, SplitSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaKind {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
    Beta { alpha: f64, beta: f64 },
}

fn default_true() -> bool {
    true
}

/// Distribution of the mixing proportion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPolicy {
    #[serde(flatten)]
    pub kind: LambdaKind,
    /// One draw shared by the whole minibatch (otherwise one per row).
    #[serde(default = "default_true")]
    pub per_minibatch: bool,
    /// Lets prototypes extrapolate outside the segment between the two
    /// parents. Soft labels still use the proportion clamped to [0, 1].
    #[serde(default)]
    pub allow_extrapolation: bool,
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        Self::fixed(0.5)
    }
}

impl LambdaPolicy {
    pub fn new(kind: LambdaKind) -> Self {
        Self {
            kind,
            per_minibatch: true,
            allow_extrapolation: false,
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self::new(LambdaKind::Fixed { value })
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::new(LambdaKind::Uniform { lo, hi })
    }

    pub fn normal(mean: f64, std: f64) -> Self {
        Self::new(LambdaKind::Normal { mean, std })
    }

    pub fn beta(alpha: f64, beta: f64) -> Self {
        Self::new(LambdaKind::Beta { alpha, beta })
    }

    pub fn per_row(mut self) -> Self {
        self.per_minibatch = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPolicy(m));
        let finite = |v: f64| v.is_finite();
        match self.kind {
            LambdaKind::Fixed { value } => {
                if !finite(value) || (!self.allow_extrapolation && !(0.0..=1.0).contains(&value)) {
                    return bad(format!("fixed value {value} outside [0, 1]"));
                }
            }
            LambdaKind::Uniform { lo, hi } => {
                if !finite(lo) || !finite(hi) || lo >= hi {
                    return bad(format!("uniform bounds ({lo}, {hi}) need lo < hi"));
                }
                if !self.allow_extrapolation && (lo < 0.0 || hi > 1.0) {
                    return bad(format!("uniform bounds ({lo}, {hi}) outside [0, 1]"));
                }
            }
            LambdaKind::Normal { mean, std } => {
                if !finite(mean) || !finite(std) || std <= 0.0 {
                    return bad(format!("normal({mean}, {std}) needs std > 0"));
                }
            }
            LambdaKind::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0) || !finite(alpha) || !finite(beta) {
                    return bad(format!("beta({alpha}, {beta}) needs alpha, beta > 0"));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LambdaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LambdaKind::Fixed { value } => write!(f, "fixed:{value}")?,
            LambdaKind::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}")?,
            LambdaKind::Normal { mean, std } => write!(f, "normal:{mean}:{std}")?,
            LambdaKind::Beta { alpha, beta } => write!(f, "beta:{alpha}:{beta}")?,
        }
        if !self.per_minibatch {
            write!(f, ":row")?;
        }
        if self.allow_extrapolation {
            write!(f, ":extrapolate")?;
        }
        Ok(())
    }
}

impl FromStr for LambdaPolicy {
    type Err = Error;

    /// Parses `fixed:V`, `uniform:LO:HI`, `normal:MEAN:STD` or `beta:A:B`,
    /// optionally followed by `:row` (one draw per row) and/or
    /// `:extrapolate`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let mut per_minibatch = true;
        let mut allow_extrapolation = false;
        while let Some(&last) = parts.last() {
            match last {
                "row" => per_minibatch = false,
                "batch" => per_minibatch = true,
                "extrapolate" => allow_extrapolation = true,
                _ => break,
            }
            parts.pop();
        }
        let nums = parts
            .iter()
            .skip(1)
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidPolicy(format!("bad number {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let kind = match (parts.first().copied(), nums.as_slice()) {
            (Some("fixed"), &[value]) => LambdaKind::Fixed { value },
            (Some("uniform"), &[lo, hi]) => LambdaKind::Uniform { lo, hi },
            (Some("normal"), &[mean, std]) => LambdaKind::Normal { mean, std },
            (Some("beta"), &[alpha, beta]) => LambdaKind::Beta { alpha, beta },
            _ => {
                return Err(Error::InvalidPolicy(format!(
                    "cannot parse {s:?}; expected fixed:V, uniform:LO:HI, normal:MEAN:STD or beta:A:B"
                )))
            }
        };
        let policy = LambdaPolicy {
            kind,
            per_minibatch,
            allow_extrapolation,
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Draws from the nominal distribution without range enforcement.
pub fn sample_lambda_raw<R: Rng + ?Sized>(policy: &LambdaPolicy, rng: &mut R) -> f64 {
    match policy.kind {
        LambdaKind::Fixed { value } => value,
        LambdaKind::Uniform { lo, hi } => rng.random_range(lo..hi),
        LambdaKind::Normal { mean, std } => Normal::new(mean, std)
            .expect("validated normal policy")
            .sample(rng),
        LambdaKind::Beta { alpha, beta } => Beta::new(alpha, beta)
            .expect("validated beta policy")
            .sample(rng),
    }
}

/// Draws a mixing proportion. Normal draws are clipped to [0, 1] unless the
/// policy allows extrapolation.
pub fn sample_lambda<R: Rng + ?Sized>(policy: &LambdaPolicy, rng: &mut R) -> f64 {
    let v = sample_lambda_raw(policy, rng);
    match policy.kind {
        LambdaKind::Normal { .. } if !policy.allow_extrapolation => v.clamp(0.0, 1.0),
        _ => v,
    }
}

/// Which real prototypes feed the ambiguous classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSelector {
    Seen,
    Unseen,
    #[default]
    Both,
}

impl PoolSelector {
    pub const ALL: [PoolSelector; 3] = [PoolSelector::Seen, PoolSelector::Unseen, PoolSelector::Both];

    /// Pool classes in split order (seen first).
    pub fn classes(&self, split: &SplitSpec) -> Vec<ClassId> {
        match self {
            PoolSelector::Seen => split.seen.clone(),
            PoolSelector::Unseen => split.unseen.clone(),
            PoolSelector::Both => split.all_classes(),
        }
    }

    pub fn uses_unseen(&self) -> bool {
        !matches!(self, PoolSelector::Seen)
    }
}

impl fmt::Display for PoolSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolSelector::Seen => "seen",
            PoolSelector::Unseen => "unseen",
            PoolSelector::Both => "both",
        })
    }
}

impl FromStr for PoolSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" | "s" => Ok(PoolSelector::Seen),
            "unseen" | "u" => Ok(PoolSelector::Unseen),
            "both" | "s+u" => Ok(PoolSelector::Both),
            other => Err(Error::Config(format!("unknown pool {other:?}"))),
        }
    }
}

/// A minibatch of virtual classes.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbiguousBatch {
    /// `b x a` mixed prototypes.
    pub prototypes: Array2<f64>,
    /// `b x K` soft labels over `pool_classes`.
    pub soft_labels: Array2<f64>,
    pub lambdas: Vec<f64>,
    pub source_pairs: Vec<(ClassId, ClassId)>,
    pub pool_classes: Vec<ClassId>,
}

impl AmbiguousBatch {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Convex combination `lam * a + (1 - lam) * b`, elementwise.
pub fn mix(a: ArrayView1<f64>, b: ArrayView1<f64>, lam: f64) -> Array1<f64> {
    let mut out = Array1::zeros(a.len());
    ndarray::Zip::from(&mut out)
        .and(&a)
        .and(&b)
        .for_each(|o, &x, &y| *o = lam * x + (1.0 - lam) * y);
    out
}

/// Samples `batch_size` ambiguous classes from the selected pool.
///
/// The unordered pair `{y_i, y_j}` is uniform over distinct pool classes and
/// its orientation is uniform. Only pool prototypes are read from the bundle.
pub fn make_ambiguous_batch<R: Rng + ?Sized>(
    bundle: &DatasetBundle,
    pool: PoolSelector,
    policy: &LambdaPolicy,
    batch_size: usize,
    rng: &mut R,
) -> Result<AmbiguousBatch> {
    policy.validate()?;
    let pool_classes = pool.classes(bundle.split());
    let k = pool_classes.len();
    if k < 2 {
        return Err(Error::PoolTooSmall(k));
    }
    let table = bundle.prototype_matrix(&pool_classes)?;
    let a = table.ncols();

    let shared = policy.per_minibatch.then(|| sample_lambda(policy, rng));
    let mut prototypes = Array2::zeros((batch_size, a));
    let mut soft_labels = Array2::zeros((batch_size, k));
    let mut lambdas = Vec::with_capacity(batch_size);
    let mut source_pairs = Vec::with_capacity(batch_size);
    for row in 0..batch_size {
        let i = rng.random_range(0..k);
        let mut j = rng.random_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let lam = shared.unwrap_or_else(|| sample_lambda(policy, rng));
        prototypes
            .row_mut(row)
            .assign(&mix(table.row(i), table.row(j), lam));
        let label_lam = lam.clamp(0.0, 1.0);
        soft_labels[[row, i]] = label_lam;
        soft_labels[[row, j]] = 1.0 - label_lam;
        lambdas.push(lam);
        source_pairs.push((pool_classes[i], pool_classes[j]));
    }
    Ok(AmbiguousBatch {
        prototypes,
        soft_labels,
        lambdas,
        source_pairs,
        pool_classes,
    })
}

/// Mixes both a pair of visual samples and their prototypes, as in
/// sample-level mixup. Provided as a baseline.
pub fn visual_mixup_pair(
    x_i: ArrayView1<f64>,
    x_j: ArrayView1<f64>,
    c_i: ArrayView1<f64>,
    c_j: ArrayView1<f64>,
    lam: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch {
            what: "visual mixup features".into(),
            expected: x_i.len(),
            got: x_j.len(),
        });
    }
    if c_i.len() != c_j.len() {
        return Err(Error::DimensionMismatch {
            what: "visual mixup prototypes".into(),
            expected: c_i.len(),
            got: c_j.len(),
        });
    }
    Ok((mix(x_i, x_j, lam), mix(c_i, c_j, lam)))
}
