//! Two-layer perceptrons with analytic gradients.
//!
//! Every network in the model is `in -> hidden (leaky rectifier, slope 0.2)
//! -> out`, with an optional sigmoid on the output. Backpropagation is
//! written out by hand, including the parameter gradient of the critic's
//! input-gradient penalty (the second-order path of WGAN-GP).

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Bounds on the encoder's log-variance output.
pub const LOGVAR_MIN: f64 = -50.0;
pub const LOGVAR_MAX: f64 = 20.0;
/// Sigmoid outputs are kept this far from 0 and 1.
const SIGMOID_MARGIN: f64 = 1e-15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    None,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize, output_activation: OutputActivation) -> Self {
        Self {
            in_dim,
            hidden_dim,
            out_dim,
            output_activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.out_dim + self.out_dim
    }
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)
}

/// Gradient buffers with the same layout as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpGrads {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            w1: Array2::zeros((spec.in_dim, spec.hidden_dim)),
            b1: Array1::zeros(spec.hidden_dim),
            w2: Array2::zeros((spec.hidden_dim, spec.out_dim)),
            b2: Array1::zeros(spec.out_dim),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        self.w1.scaled_add(scale, &other.w1);
        self.b1.scaled_add(scale, &other.b1);
        self.w2.scaled_add(scale, &other.w2);
        self.b2.scaled_add(scale, &other.b2);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub input: Array2<f64>,
    pub pre_hidden: Array2<f64>,
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
    pub output: Array2<f64>,
}

/// Value and parameter gradient of `mean_i (||grad_x D(x_i)||_2 - 1)^2`.
#[derive(Clone, Debug)]
pub struct PenaltyOutput {
    pub value: f64,
    pub norms: Array1<f64>,
    pub grads: MlpGrads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// `in x hidden`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `hidden x out`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let g = MlpGrads::zeros(&spec);
        Self {
            spec,
            w1: g.w1,
            b1: g.b1,
            w2: g.w2,
            b2: g.b2,
        }
    }

    /// Gaussian(0, `std`) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite init std");
        let mut m = Self::zeros(spec);
        m.w1.mapv_inplace(|_| normal.sample(rng));
        m.w2.mapv_inplace(|_| normal.sample(rng));
        m
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        let mut it = values.iter().copied();
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.in_dim {
            return Err(Error::DimensionMismatch {
                what: "network input".into(),
                expected: self.spec.in_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(&x)?;
        let pre_hidden = x.dot(&self.w1) + &self.b1;
        let hidden = pre_hidden.mapv(leaky);
        let logits = hidden.dot(&self.w2) + &self.b2;
        let output = match self.spec.output_activation {
            OutputActivation::None => logits.clone(),
            OutputActivation::Sigmoid => logits.mapv(sigmoid),
        };
        Ok(MlpCache {
            input: x.to_owned(),
            pre_hidden,
            hidden,
            logits,
            output,
        })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Backpropagates a gradient given with respect to the pre-activation
    /// output. Returns parameter gradients and the input gradient.
    pub fn backward_logits(&self, cache: &MlpCache, d_logits: ArrayView2<f64>) -> (MlpGrads, Array2<f64>) {
        let w2 = standard(cache.hidden.t().dot(&d_logits));
        let b2 = d_logits.sum_axis(Axis(0));
        let mut d_hidden = d_logits.dot(&self.w2.t());
        Zip::from(&mut d_hidden)
            .and(&cache.pre_hidden)
            .for_each(|g, &h| *g *= leaky_grad(h));
        let w1 = standard(cache.input.t().dot(&d_hidden));
        let b1 = d_hidden.sum_axis(Axis(0));
        let d_input = d_hidden.dot(&self.w1.t());
        (MlpGrads { w1, b1, w2, b2 }, d_input)
    }

    /// Backpropagates a gradient given with respect to the activated output.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> (MlpGrads, Array2<f64>) {
        match self.spec.output_activation {
            OutputActivation::None => self.backward_logits(cache, d_out),
            OutputActivation::Sigmoid => {
                let mut d_logits = d_out.to_owned();
                Zip::from(&mut d_logits)
                    .and(&cache.output)
                    .for_each(|g, &s| *g *= s * (1.0 - s));
                self.backward_logits(cache, d_logits.view())
            }
        }
    }

    fn scalar_head(&self) -> Result<ArrayView1<'_, f64>> {
        if self.spec.out_dim != 1 || self.spec.output_activation != OutputActivation::None {
            return Err(Error::Config(
                "input gradients are defined for linear scalar-output critics".into(),
            ));
        }
        Ok(self.w2.column(0))
    }

    /// Per-row `grad_x D(x_i)` for a scalar critic, plus the activation
    /// slopes used to build it.
    fn input_gradients_with_slopes(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(&x)?;
        let head = self.scalar_head()?;
        let mut slopes = x.dot(&self.w1) + &self.b1;
        slopes.mapv_inplace(leaky_grad);
        let weighted = &slopes * &head;
        Ok((weighted.dot(&self.w1.t()), slopes))
    }

    pub fn input_gradients(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.input_gradients_with_slopes(x)?.0)
    }

    /// `mean_i (sqrt(||grad_x D(x_i)||^2 + eps) - 1)^2` and its gradient with
    /// respect to the critic parameters. The activation slopes are piecewise
    /// constant, so only the weight matrices receive gradient.
    pub fn gradient_penalty(&self, x: ArrayView2<f64>, eps: f64) -> Result<PenaltyOutput> {
        let (grads_x, slopes) = self.input_gradients_with_slopes(x)?;
        let head = self.w2.column(0);
        let n = grads_x.nrows().max(1) as f64;
        let norms = grads_x.map_axis(Axis(1), |g| (g.dot(&g) + eps).sqrt());
        let value = norms.iter().map(|&r| (r - 1.0).powi(2)).sum::<f64>() / n;

        let mut upstream = grads_x;
        for (mut row, &r) in upstream.rows_mut().into_iter().zip(&norms) {
            row *= 2.0 * (r - 1.0) / (r * n);
        }
        let weighted = &slopes * &head;
        let w1 = standard(upstream.t().dot(&weighted));
        let back = upstream.dot(&self.w1);
        let w2_col = (&slopes * &back).sum_axis(Axis(0));
        let mut grads = MlpGrads::zeros(&self.spec);
        grads.w1 = w1;
        grads.w2.column_mut(0).assign(&w2_col);
        Ok(PenaltyOutput { value, norms, grads })
    }
}

/// Row-major copy unless already row-major; products with transposed
/// operands may come back column-major.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::SizeMismatch(a.nrows(), b.nrows()));
    }
    Ok(concatenate(Axis(1), &[a, b]).expect("row counts checked"))
}

/// Sizes shared by all networks of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Visual feature dimension.
    pub d: usize,
    /// Prototype dimension.
    pub a: usize,
    pub z_dim: usize,
    pub hidden_dim: usize,
    /// Number of classes the regularizer classifier scores.
    pub k: usize,
}

impl ModelDims {
    pub fn encoder(&self) -> MlpSpec {
        MlpSpec::new(self.d, self.hidden_dim, 2 * self.z_dim, OutputActivation::None)
    }

    pub fn generator(&self) -> MlpSpec {
        MlpSpec::new(self.z_dim + self.a, self.hidden_dim, self.d, OutputActivation::Sigmoid)
    }

    pub fn disc_cond(&self) -> MlpSpec {
        MlpSpec::new(self.d + self.a, self.hidden_dim, 1, OutputActivation::None)
    }

    pub fn disc_uncond(&self) -> MlpSpec {
        MlpSpec::new(self.d, self.hidden_dim, 1, OutputActivation::None)
    }

    pub fn reg_classifier(&self) -> MlpSpec {
        MlpSpec::new(self.d, self.hidden_dim, self.k, OutputActivation::None)
    }

    pub fn semantic_decoder(&self) -> MlpSpec {
        MlpSpec::new(self.d, self.hidden_dim, self.a, OutputActivation::None)
    }
}

/// Parameters of encoder `E`, generator `G`, critics `D1`/`D2`, the
/// regularizer classifier `f` and the optional semantic decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Mlp,
    pub generator: Mlp,
    pub disc_cond: Mlp,
    pub disc_uncond: Mlp,
    pub reg_classifier: Mlp,
    pub semantic_decoder: Option<Mlp>,
    /// Classes scored by `reg_classifier`, in column order.
    pub pool_classes: Vec<ClassId>,
}

impl ModelParams {
    /// Initializes every network from its own seeded stream.
    pub fn init(dims: ModelDims, pool_classes: Vec<ClassId>, init_std: f64, with_decoder: bool, seed: u64) -> Result<Self> {
        if pool_classes.len() != dims.k {
            return Err(Error::DimensionMismatch {
                what: "regularizer classes".into(),
                expected: dims.k,
                got: pool_classes.len(),
            });
        }
        let mut backbone = rng::stream(seed, streams::INIT);
        let encoder = Mlp::init(dims.encoder(), init_std, &mut backbone);
        let generator = Mlp::init(dims.generator(), init_std, &mut backbone);
        let disc_cond = Mlp::init(dims.disc_cond(), init_std, &mut backbone);
        let disc_uncond = Mlp::init(dims.disc_uncond(), init_std, &mut backbone);
        let reg_classifier = Mlp::init(
            dims.reg_classifier(),
            init_std,
            &mut rng::stream(seed, streams::REGULARIZER_INIT),
        );
        let semantic_decoder = with_decoder.then(|| {
            Mlp::init(
                dims.semantic_decoder(),
                init_std,
                &mut rng::stream(seed, streams::DECODER_INIT),
            )
        });
        Ok(Self {
            dims,
            encoder,
            generator,
            disc_cond,
            disc_uncond,
            reg_classifier,
            semantic_decoder,
            pool_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_mlps().iter().map(|(_, m)| m.param_count()).sum()
    }

    pub fn named_mlps(&self) -> Vec<(&'static str, &Mlp)> {
        let mut out = vec![
            ("encoder", &self.encoder),
            ("generator", &self.generator),
            ("disc_cond", &self.disc_cond),
            ("disc_uncond", &self.disc_uncond),
            ("reg_classifier", &self.reg_classifier),
        ];
        if let Some(dec) = &self.semantic_decoder {
            out.push(("semantic_decoder", dec));
        }
        out
    }
}

/// Output of the encoder with the reparameterized sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub z: Array2<f64>,
    pub mu: Array2<f64>,
    /// Log-variance after clamping to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub logvar: Array2<f64>,
}

/// Splits encoder output into `(mu, clamped logvar)`.
pub fn split_moments(out: &Array2<f64>, z_dim: usize) -> (Array2<f64>, Array2<f64>) {
    let mu = out.slice(ndarray::s![.., ..z_dim]).to_owned();
    let logvar = out
        .slice(ndarray::s![.., z_dim..])
        .mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    (mu, logvar)
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &Array2<f64>, logvar: &Array2<f64>, eps: &Array2<f64>) -> Array2<f64> {
    let mut z = mu.clone();
    Zip::from(&mut z)
        .and(logvar)
        .and(eps)
        .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
    z
}

pub fn encode<R: Rng + ?Sized>(params: &ModelParams, x: ArrayView2<f64>, rng: &mut R) -> Result<Encoded> {
    let out = params.encoder.forward(x)?;
    let (mu, logvar) = split_moments(&out, params.dims.z_dim);
    let eps = rng::normal_matrix(rng, mu.nrows(), mu.ncols());
    let z = reparameterize(&mu, &logvar, &eps);
    Ok(Encoded { z, mu, logvar })
}

/// `G([z; c])`, rows in `(0, 1)^d`.
pub fn generate(params: &ModelParams, z: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<Array2<f64>> {
    if z.ncols() != params.dims.z_dim {
        return Err(Error::DimensionMismatch {
            what: "latent code".into(),
            expected: params.dims.z_dim,
            got: z.ncols(),
        });
    }
    params.generator.forward(concat_cols(z, c)?.view())
}

/// Critic scores: `D1([x; c])` when `c` is given, `D2(x)` otherwise.
pub fn discriminate(params: &ModelParams, x: ArrayView2<f64>, c: Option<ArrayView2<f64>>) -> Result<Array1<f64>> {
    let out = match c {
        Some(c) => params.disc_cond.forward(concat_cols(x, c)?.view())?,
        None => params.disc_uncond.forward(x)?,
    };
    Ok(out.column(0).to_owned())
}

pub fn classify_reg(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    params.reg_classifier.forward(x)
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Affine classifier over a fixed class ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// `d x n_classes`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub classes: Vec<ClassId>,
}

impl LinearClassifier {
    pub fn zeros(d: usize, classes: Vec<ClassId>) -> Self {
        let n = classes.len();
        Self {
            weight: Array2::zeros((d, n)),
            bias: Array1::zeros(n),
            classes,
        }
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.nrows() {
            return Err(Error::DimensionMismatch {
                what: "classifier input".into(),
                expected: self.weight.nrows(),
                got: x.ncols(),
            });
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }
}

/// Argmax of the affine scores; exact ties go to the lowest class id.
pub fn predict(clf: &LinearClassifier, x: ArrayView2<f64>) -> Result<Vec<ClassId>> {
    let scores = clf.scores(x)?;
    Ok(scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                let b = row[best];
                if v > b || (v == b && clf.classes[j] < clf.classes[best]) {
                    best = j;
                }
            }
            clf.classes[best]
        })
        .collect())
}
