//! Training objectives and their gradients.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::AmbiguousBatch;
use crate::nets::{self, concat_cols, Mlp, MlpGrads, ModelParams, LOGVAR_MAX, LOGVAR_MIN};
use crate::rng;

/// Added under the square root of the gradient-penalty norm.
pub const GP_EPS: f64 = 1e-8;
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Per-step loss values. `l_kl`, `l_i` and `l_sem` hold their weighted
/// contributions, so `total = l_bce + l_kl + gamma * l_wgan_s + l_wgan_u +
/// l_i + l_sem`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_bce: f64,
    pub l_kl: f64,
    pub l_wgan_s: f64,
    pub l_wgan_u: f64,
    pub l_i: f64,
    /// Semantic-decoder reconstruction term; zero unless enabled.
    pub l_sem: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_bce: f64, l_kl: f64, l_wgan_s: f64, l_wgan_u: f64, l_i: f64, l_sem: f64, gamma: f64) -> Self {
        let mut r = Self {
            l_bce,
            l_kl,
            l_wgan_s,
            l_wgan_u,
            l_i,
            l_sem,
            total: 0.0,
        };
        r.total = total_loss(&r, gamma);
        r
    }

    pub const CSV_HEADER: &'static str = "step,l_bce,l_kl,l_wgan_s,l_wgan_u,l_i,l_sem,total,wall_clock_s";

    pub fn csv_row(&self, step: usize, wall_clock_s: f64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{wall_clock_s:.6}",
            self.l_bce, self.l_kl, self.l_wgan_s, self.l_wgan_u, self.l_i, self.l_sem, self.total
        )
    }
}

/// `l_bce + l_kl + gamma * l_wgan_s + l_wgan_u + l_i + l_sem`.
pub fn total_loss(c: &LossReport, gamma: f64) -> f64 {
    c.l_bce + c.l_kl + gamma * c.l_wgan_s + c.l_wgan_u + c.l_i + c.l_sem
}

/// Writes a loss log as CSV with a fixed column order.
pub fn write_loss_log<W: Write>(mut out: W, log: &[LossReport], wall_clock_s: &[f64]) -> Result<()> {
    writeln!(out, "{}", LossReport::CSV_HEADER)?;
    for (i, r) in log.iter().enumerate() {
        let t = wall_clock_s.get(i).copied().unwrap_or(0.0);
        writeln!(out, "{}", r.csv_row(i, t))?;
    }
    Ok(())
}

fn check_simplex(target: ArrayView1<f64>) -> Result<()> {
    let sum: f64 = target.sum();
    if target.iter().any(|&t| t < -SIMPLEX_TOL || !t.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex(format!("sum {sum}, entries {target}")));
    }
    Ok(())
}

fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `-sum_k target_k * log softmax(logits)_k`.
pub fn soft_cross_entropy(logits: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
    if logits.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "soft cross-entropy target".into(),
            expected: logits.len(),
            got: target.len(),
        });
    }
    check_simplex(target)?;
    let lse = log_sum_exp(logits);
    Ok(target
        .iter()
        .zip(&logits)
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &l)| t * (lse - l))
        .sum())
}

/// Mean soft cross-entropy over rows and its gradient w.r.t. the logits.
pub fn soft_cross_entropy_batch(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            what: "soft cross-entropy targets".into(),
            expected: logits.ncols(),
            got: targets.ncols(),
        });
    }
    let n = logits.nrows().max(1) as f64;
    let mut total = 0.0;
    for (l, t) in logits.rows().into_iter().zip(targets.rows()) {
        total += soft_cross_entropy(l, t)?;
    }
    let probs = nets::softmax(logits);
    let mut grad = probs;
    for (mut g, t) in grad.rows_mut().into_iter().zip(targets.rows()) {
        let mass = t.sum();
        Zip::from(&mut g).and(&t).for_each(|g, &t| *g = (*g * mass - t) / n);
    }
    Ok((total / n, grad))
}

/// Mean binary cross-entropy between predicted probabilities and targets in
/// [0, 1], with `0 * log 0 = 0`.
pub fn binary_cross_entropy(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    Zip::from(&pred).and(&target).for_each(|&p, &x| {
        if x != 0.0 {
            sum -= x * p.ln();
        }
        if x != 1.0 {
            sum -= (1.0 - x) * (1.0 - p).ln();
        }
    });
    sum / n
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dimensions and
/// averaged over rows.
pub fn kl_divergence(mu: ArrayView2<f64>, logvar: ArrayView2<f64>) -> f64 {
    let n = mu.nrows().max(1) as f64;
    let mut sum = 0.0;
    Zip::from(&mu)
        .and(&logvar)
        .for_each(|&m, &lv| sum += 0.5 * (m * m + lv.exp() - lv - 1.0));
    sum / n
}

#[derive(Clone, Debug)]
pub struct VaeOutput {
    pub l_bce: f64,
    pub l_kl: f64,
    pub encoder: MlpGrads,
    pub generator: MlpGrads,
}

/// Reconstruction and prior terms of the VAE with gradients of
/// `l_bce + kl_weight * l_kl` w.r.t. encoder and generator.
pub fn vae_loss_with_grads<R: Rng + ?Sized>(
    params: &ModelParams,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    kl_weight: f64,
    rng: &mut R,
) -> Result<VaeOutput> {
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("VAE input value {v}")));
    }
    if x.nrows() != c.nrows() {
        return Err(Error::SizeMismatch(x.nrows(), c.nrows()));
    }
    let z_dim = params.dims.z_dim;
    let enc = params.encoder.forward_cached(x)?;
    let (mu, logvar) = nets::split_moments(&enc.output, z_dim);
    let eps = rng::normal_matrix(rng, mu.nrows(), z_dim);
    let z = nets::reparameterize(&mu, &logvar, &eps);

    let gen = params.generator.forward_cached(concat_cols(z.view(), c)?.view())?;
    let l_bce = binary_cross_entropy(gen.output.view(), x);
    let l_kl = kl_divergence(mu.view(), logvar.view());

    let n = x.nrows().max(1) as f64;
    let d_logits = (&gen.output - &x) / (x.len().max(1) as f64);
    let (g_gen, d_in) = params.generator.backward_logits(&gen, d_logits.view());
    let dz = d_in.slice(s![.., ..z_dim]);

    let mut d_enc = Array2::zeros(enc.output.dim());
    for i in 0..mu.nrows() {
        for j in 0..z_dim {
            let m = mu[[i, j]];
            let lv = logvar[[i, j]];
            d_enc[[i, j]] = dz[[i, j]] + kl_weight * m / n;
            let raw = enc.output[[i, z_dim + j]];
            d_enc[[i, z_dim + j]] = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                dz[[i, j]] * eps[[i, j]] * 0.5 * (0.5 * lv).exp() + kl_weight * 0.5 * (lv.exp() - 1.0) / n
            } else {
                0.0
            };
        }
    }
    let (g_enc, _) = params.encoder.backward_logits(&enc, d_enc.view());
    Ok(VaeOutput {
        l_bce,
        l_kl,
        encoder: g_enc,
        generator: g_gen,
    })
}

/// `(l_bce, l_kl)` for seen samples `x` with prototypes `c`.
pub fn vae_loss<R: Rng + ?Sized>(
    params: &ModelParams,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let out = vae_loss_with_grads(params, x, c, 1.0, rng)?;
    Ok((out.l_bce, out.l_kl))
}

#[derive(Clone, Debug)]
pub struct WganOutput {
    /// `mean D(fake) - mean D(real) + lambda * penalty`
    pub critic_loss: f64,
    /// `-mean D(fake)`
    pub generator_loss: f64,
    pub penalty: f64,
    pub critic_grads: MlpGrads,
}

fn critic_input(x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
    match cond {
        Some(c) => concat_cols(x, c),
        None => Ok(x.to_owned()),
    }
}

/// WGAN critic objective with gradient penalty on random interpolates
/// `alpha * real + (1 - alpha) * fake`, `alpha ~ U(0, 1)` per row. For a
/// conditional critic the penalty uses the gradient w.r.t. `[x; c]`.
pub fn wgan_loss<R: Rng + ?Sized>(
    critic: &Mlp,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    cond: Option<ArrayView2<f64>>,
    lambda_gp: f64,
    rng: &mut R,
) -> Result<WganOutput> {
    if real.dim() != fake.dim() {
        return Err(Error::SizeMismatch(real.nrows(), fake.nrows()));
    }
    if let Some(c) = cond {
        if c.nrows() != real.nrows() {
            return Err(Error::SizeMismatch(real.nrows(), c.nrows()));
        }
    }
    let n = real.nrows();
    if n == 0 {
        return Err(Error::Empty("critic batch".into()));
    }
    let mut interp = Array2::zeros(real.dim());
    for i in 0..n {
        let alpha: f64 = rng.random();
        Zip::from(interp.row_mut(i))
            .and(real.row(i))
            .and(fake.row(i))
            .for_each(|o, &r, &f| *o = alpha * r + (1.0 - alpha) * f);
    }

    let real_cache = critic.forward_cached(critic_input(real, cond)?.view())?;
    let fake_cache = critic.forward_cached(critic_input(fake, cond)?.view())?;
    let gp = critic.gradient_penalty(critic_input(interp.view(), cond)?.view(), GP_EPS)?;

    let nf = n as f64;
    let mean_real = real_cache.output.sum() / nf;
    let mean_fake = fake_cache.output.sum() / nf;

    let up = Array2::from_elem((n, 1), 1.0 / nf);
    let (mut grads, _) = critic.backward_logits(&fake_cache, up.view());
    let (g_real, _) = critic.backward_logits(&real_cache, (-&up).view());
    grads.add_scaled(&g_real, 1.0);
    grads.add_scaled(&gp.grads, lambda_gp);

    Ok(WganOutput {
        critic_loss: mean_fake - mean_real + lambda_gp * gp.value,
        generator_loss: -mean_fake,
        penalty: gp.value,
        critic_grads: grads,
    })
}

/// Generator-side adversarial loss `-mean D([fake; c])` and its gradient
/// w.r.t. `fake`.
pub fn generator_adversarial(critic: &Mlp, fake: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<(f64, Array2<f64>)> {
    let n = fake.nrows().max(1) as f64;
    let cache = critic.forward_cached(critic_input(fake, cond)?.view())?;
    let loss = -cache.output.sum() / n;
    let up = Array2::from_elem((fake.nrows(), 1), -1.0 / n);
    let (_, d_in) = critic.backward_logits(&cache, up.view());
    Ok((loss, d_in.slice(s![.., ..fake.ncols()]).to_owned()))
}

#[derive(Clone, Debug)]
pub struct AmbiguityOutput {
    pub value: f64,
    pub generator: MlpGrads,
    pub classifier: MlpGrads,
}

fn check_pool(params: &ModelParams, batch: &AmbiguousBatch) -> Result<()> {
    if batch.soft_labels.ncols() != params.dims.k || batch.pool_classes != params.pool_classes {
        return Err(Error::DimensionMismatch {
            what: "regularizer classifier vs ambiguous pool".into(),
            expected: params.dims.k,
            got: batch.soft_labels.ncols(),
        });
    }
    Ok(())
}

/// Soft-label cross-entropy of `f(G([z; c~]))` against `y~`, with one fresh
/// `z ~ N(0, I)` per row, and its gradients w.r.t. `G` and `f`.
pub fn ambiguity_loss_with_grads<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &AmbiguousBatch,
    rng: &mut R,
) -> Result<AmbiguityOutput> {
    check_pool(params, batch)?;
    let z = rng::normal_matrix(rng, batch.len(), params.dims.z_dim);
    let gen = params
        .generator
        .forward_cached(concat_cols(z.view(), batch.prototypes.view())?.view())?;
    let clf = params.reg_classifier.forward_cached(gen.output.view())?;
    let (value, d_logits) = soft_cross_entropy_batch(clf.logits.view(), batch.soft_labels.view())?;
    let (g_clf, d_x) = params.reg_classifier.backward_logits(&clf, d_logits.view());
    let (g_gen, _) = params.generator.backward(&gen, d_x.view());
    Ok(AmbiguityOutput {
        value,
        generator: g_gen,
        classifier: g_clf,
    })
}

pub fn ambiguity_loss<R: Rng + ?Sized>(params: &ModelParams, batch: &AmbiguousBatch, rng: &mut R) -> Result<f64> {
    Ok(ambiguity_loss_with_grads(params, batch, rng)?.value)
}

/// Mean squared error of a semantic decoder reconstructing prototypes from
/// features, with parameter and input gradients.
pub fn semantic_reconstruction(decoder: &Mlp, x: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<(f64, MlpGrads, Array2<f64>)> {
    let cache = decoder.forward_cached(x)?;
    if cache.output.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            what: "semantic decoder target".into(),
            expected: cache.output.ncols(),
            got: c.ncols(),
        });
    }
    let diff = &cache.output - &c;
    let n = diff.len().max(1) as f64;
    let value = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let d_out = diff * (2.0 / n);
    let (g, d_x) = decoder.backward_logits(&cache, d_out.view());
    Ok((value, g, d_x))
}

/// Column means, used when logging critic scores.
pub fn column_mean(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}
