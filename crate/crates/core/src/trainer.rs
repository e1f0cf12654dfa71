//! Adversarial training, feature synthesis and final classifiers.
//!
//! One outer step runs `n_critic` critic iterations followed by one joint
//! update of the encoder, the generator and the regularizer classifier.
//! Every source of randomness has its own stream (see [`crate::rng`]), so
//! switching the regularizer on or off never perturbs the backbone's draws.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_bundle, ClassId, DatasetBundle, LabeledFeatures};
use crate::error::{Error, Result};
use crate::eval::{gzsl_eval, top1_on, MetricsRecord};
use crate::losses::{self, LossReport};
use crate::mixer::{make_ambiguous_batch, LambdaPolicy, PoolSelector};
use crate::nets::{self, concat_cols, LinearClassifier, MlpGrads, ModelDims, ModelParams};
use crate::optim::Adam;
use crate::rng::{self, streams};

pub use crate::eval::Mode;

/// Mini-batch size of the final softmax classifiers.
pub const CLF_BATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub gamma: f64,
    pub lambda_wgan: f64,
    pub n_critic: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to the prototype dimension.
    pub z_dim: Option<usize>,
    pub lambda_policy: LambdaPolicy,
    pub pool: PoolSelector,
    pub ambiguity_weight: f64,
    pub kl_weight: f64,
    pub synth_per_unseen: usize,
    pub synth_per_seen: usize,
    pub clf_epochs: usize,
    pub clf_lr: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub init_std: f64,
    /// Runs the regularizer's forward pass at all. With
    /// `ambiguity_weight = 0` it is evaluated and logged but has no effect.
    pub attach_regularizer: bool,
    pub unseen_prototypes_available: bool,
    pub freeze_encoder: bool,
    /// Weight of the optional prototype-reconstruction term; 0 disables it.
    pub semantic_decoder_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Inductive,
            gamma: 10.0,
            lambda_wgan: 10.0,
            n_critic: 5,
            lr: 1e-4,
            adam_betas: (0.5, 0.999),
            epochs: 30,
            batch_size: 64,
            z_dim: None,
            lambda_policy: LambdaPolicy::fixed(0.5),
            pool: PoolSelector::Both,
            ambiguity_weight: 1.0,
            kl_weight: 1.0,
            synth_per_unseen: 300,
            synth_per_seen: 0,
            clf_epochs: 20,
            clf_lr: 1e-3,
            seed: 0,
            hidden_dim: 4096,
            init_std: 0.02,
            attach_regularizer: true,
            unseen_prototypes_available: true,
            freeze_encoder: false,
            semantic_decoder_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("clf_lr", self.clf_lr),
            ("init_std", self.init_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("gamma", self.gamma),
            ("lambda_wgan", self.lambda_wgan),
            ("ambiguity_weight", self.ambiguity_weight),
            ("kl_weight", self.kl_weight),
            ("semantic_decoder_weight", self.semantic_decoder_weight),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("adam_betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("batch_size and hidden_dim must be at least 1".into()));
        }
        if self.z_dim == Some(0) {
            return Err(Error::Config("z_dim must be at least 1".into()));
        }
        self.lambda_policy.validate()
    }

    fn regularizer_active(&self) -> bool {
        self.attach_regularizer
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    /// One entry per generator step.
    pub loss_log: Vec<LossReport>,
    /// Seconds since the start of training, per generator step.
    pub step_seconds: Vec<f64>,
    pub critic_updates: usize,
    pub generator_updates: usize,
}

impl TrainedModel {
    pub fn write_loss_log(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path)?;
        losses::write_loss_log(std::io::BufWriter::new(f), &self.loss_log, &self.step_seconds)
    }
}

fn check_preconditions(bundle: &DatasetBundle, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let problems = validate_bundle(bundle);
    if !problems.is_empty() {
        return Err(Error::InvalidBundle(problems));
    }
    if bundle.n_labeled() == 0 {
        return Err(Error::Empty("labeled seen samples".into()));
    }
    if config.mode == Mode::Transductive {
        if bundle.n_unlabeled() == 0 {
            return Err(Error::NoUnlabeledSamples);
        }
        if !config.unseen_prototypes_available {
            return Err(Error::InvalidPolicy(
                "transductive training needs unseen prototypes".into(),
            ));
        }
    }
    if config.regularizer_active() && config.pool.uses_unseen() && !config.unseen_prototypes_available {
        return Err(Error::InvalidPolicy(format!(
            "pool '{}' needs unseen prototypes, which are declared unavailable",
            config.pool
        )));
    }
    Ok(())
}

fn model_dims(bundle: &DatasetBundle, config: &TrainConfig) -> ModelDims {
    let a = bundle.prototype_dim();
    ModelDims {
        d: bundle.feature_dim(),
        a,
        z_dim: config.z_dim.unwrap_or(a),
        hidden_dim: config.hidden_dim,
        k: config.pool.classes(bundle.split()).len(),
    }
}

fn with_decoder(config: &TrainConfig) -> bool {
    config.semantic_decoder_weight > 0.0
}

/// Full model with the regularizer attached as configured.
pub fn train(bundle: &DatasetBundle, config: &TrainConfig) -> Result<TrainedModel> {
    check_preconditions(bundle, config)?;
    let params = ModelParams::init(
        model_dims(bundle, config),
        config.pool.classes(bundle.split()),
        config.init_std,
        with_decoder(config),
        config.seed,
    )?;
    run_loop(bundle, config, params)
}

/// Backbone only: the regularizer is detached.
pub fn train_backbone(bundle: &DatasetBundle, config: &TrainConfig) -> Result<TrainedModel> {
    let cfg = TrainConfig {
        attach_regularizer: false,
        ..config.clone()
    };
    train(bundle, &cfg)
}

/// Continues training a pretrained encoder and generator with the
/// configured objective. Both critics and the regularizer classifier start
/// from a fresh initialization.
pub fn regularize_pretrained(pretrained: &ModelParams, bundle: &DatasetBundle, config: &TrainConfig) -> Result<TrainedModel> {
    check_preconditions(bundle, config)?;
    let old = pretrained.dims;
    if old.d != bundle.feature_dim() || old.a != bundle.prototype_dim() {
        return Err(Error::DimensionMismatch {
            what: "pretrained generator (d + a)".into(),
            expected: bundle.feature_dim() + bundle.prototype_dim(),
            got: old.d + old.a,
        });
    }
    if let Some(z) = config.z_dim {
        if z != old.z_dim {
            return Err(Error::DimensionMismatch {
                what: "pretrained latent size".into(),
                expected: z,
                got: old.z_dim,
            });
        }
    }
    let pool = config.pool.classes(bundle.split());
    let dims = ModelDims { k: pool.len(), ..old };
    let mut params = ModelParams::init(
        dims,
        pool,
        config.init_std,
        with_decoder(config),
        rng::derive_seed(config.seed, streams::FINETUNE_INIT),
    )?;
    params.encoder = pretrained.encoder.clone();
    params.generator = pretrained.generator.clone();
    let cfg = TrainConfig {
        z_dim: Some(old.z_dim),
        hidden_dim: old.hidden_dim,
        ..config.clone()
    };
    run_loop(bundle, &cfg, params)
}

fn select_rows(m: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

fn sample_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k.min(n)).into_vec()
}

struct SeenPrototypes {
    matrix: Array2<f64>,
    row_of: std::collections::BTreeMap<ClassId, usize>,
}

impl SeenPrototypes {
    fn for_labels(&self, labels: &[ClassId]) -> Array2<f64> {
        let rows: Vec<usize> = labels.iter().map(|y| self.row_of[y]).collect();
        select_rows(self.matrix.view(), &rows)
    }
}

fn run_loop(bundle: &DatasetBundle, config: &TrainConfig, mut params: ModelParams) -> Result<TrainedModel> {
    let start = Instant::now();
    let split = bundle.split().clone();
    let seen = SeenPrototypes {
        matrix: bundle.prototype_matrix(&split.seen)?,
        row_of: split.seen.iter().enumerate().map(|(i, &c)| (c, i)).collect(),
    };
    let transductive = config.mode == Mode::Transductive;
    let unseen_protos = if transductive {
        Some(bundle.prototype_matrix(&split.unseen)?)
    } else {
        None
    };

    let x_l = bundle.labeled_features();
    let y_l = bundle.labeled_labels();
    let l = bundle.n_labeled();
    let batch = config.batch_size.min(l);
    let z_dim = params.dims.z_dim;
    let steps_per_epoch = l.div_ceil(config.batch_size).max(1);
    let total_steps = steps_per_epoch * config.epochs;

    let (lr, betas) = (config.lr, config.adam_betas);
    let mut opt_e = Adam::for_mlp(&params.encoder, lr, betas);
    let mut opt_g = Adam::for_mlp(&params.generator, lr, betas);
    let mut opt_d1 = Adam::for_mlp(&params.disc_cond, lr, betas);
    let mut opt_d2 = Adam::for_mlp(&params.disc_uncond, lr, betas);
    let mut opt_f = Adam::for_mlp(&params.reg_classifier, lr, betas);
    let mut opt_dec = params.semantic_decoder.as_ref().map(|m| Adam::for_mlp(m, lr, betas));

    let seed = config.seed;
    let mut rng_batches = rng::stream(seed, streams::BATCHES);
    let mut rng_critic = rng::stream(seed, streams::CRITIC);
    let mut rng_gen = rng::stream(seed, streams::GENERATOR);
    let mut rng_trans = rng::stream(seed, streams::TRANSDUCTIVE);
    let mut rng_reg = rng::stream(seed, streams::REGULARIZER);

    let mut log = Vec::with_capacity(total_steps);
    let mut step_seconds = Vec::with_capacity(total_steps);
    let mut critic_updates = 0;

    // Unlabeled real features and matching fakes from uniformly drawn unseen
    // prototypes, for the unconditional critic.
    let unseen_pair = |rng: &mut rng::Stream| -> Result<(Array2<f64>, Array2<f64>)> {
        let protos = unseen_protos.as_ref().expect("transductive");
        let x_u = bundle.unlabeled_features();
        let idx = sample_indices(rng, x_u.nrows(), batch);
        let real = select_rows(x_u, &idx);
        let rows: Vec<usize> = (0..real.nrows()).map(|_| rng.random_range(0..protos.nrows())).collect();
        let c = select_rows(protos.view(), &rows);
        let z = rng::normal_matrix(rng, real.nrows(), z_dim);
        Ok((real, concat_cols(z.view(), c.view())?))
    };

    for _ in 0..total_steps {
        for _ in 0..config.n_critic {
            let idx = sample_indices(&mut rng_batches, l, batch);
            let x = select_rows(x_l, &idx);
            let labels: Vec<ClassId> = idx.iter().map(|&i| y_l[i]).collect();
            let c = seen.for_labels(&labels);
            let z = rng::normal_matrix(&mut rng_critic, x.nrows(), z_dim);
            let fake = nets::generate(&params, z.view(), c.view())?;
            let out = losses::wgan_loss(
                &params.disc_cond,
                x.view(),
                fake.view(),
                Some(c.view()),
                config.lambda_wgan,
                &mut rng_critic,
            )?;
            opt_d1.step(&mut params.disc_cond, &out.critic_grads);

            if transductive {
                let (real_u, gen_in) = unseen_pair(&mut rng_trans)?;
                let fake_u = params.generator.forward(gen_in.view())?;
                let out = losses::wgan_loss(
                    &params.disc_uncond,
                    real_u.view(),
                    fake_u.view(),
                    None,
                    config.lambda_wgan,
                    &mut rng_trans,
                )?;
                opt_d2.step(&mut params.disc_uncond, &out.critic_grads);
            }
            critic_updates += 1;
        }

        let idx = sample_indices(&mut rng_batches, l, batch);
        let x = select_rows(x_l, &idx);
        let labels: Vec<ClassId> = idx.iter().map(|&i| y_l[i]).collect();
        let c = seen.for_labels(&labels);

        let vae = losses::vae_loss_with_grads(&params, x.view(), c.view(), config.kl_weight, &mut rng_gen)?;
        let mut g_grads = vae.generator;

        let z = rng::normal_matrix(&mut rng_gen, x.nrows(), z_dim);
        let gen = params.generator.forward_cached(concat_cols(z.view(), c.view())?.view())?;
        let (l_wgan_s, d_fake) = losses::generator_adversarial(&params.disc_cond, gen.output.view(), Some(c.view()))?;
        let mut d_fake = d_fake * config.gamma;
        let mut l_sem = 0.0;
        let mut dec_grads = None;
        if let Some(dec) = &params.semantic_decoder {
            let w = config.semantic_decoder_weight;
            let (mse, g, d_x) = losses::semantic_reconstruction(dec, gen.output.view(), c.view())?;
            l_sem = w * mse;
            d_fake.scaled_add(w, &d_x);
            let mut scaled = MlpGrads::zeros(&dec.spec);
            scaled.add_scaled(&g, w);
            dec_grads = Some(scaled);
        }
        let (g_adv, _) = params.generator.backward(&gen, d_fake.view());
        g_grads.add_scaled(&g_adv, 1.0);

        let mut l_wgan_u = 0.0;
        if transductive {
            let (_, gen_in) = unseen_pair(&mut rng_trans)?;
            let cache = params.generator.forward_cached(gen_in.view())?;
            let (loss_u, d_fu) = losses::generator_adversarial(&params.disc_uncond, cache.output.view(), None)?;
            l_wgan_u = loss_u;
            let (g_u, _) = params.generator.backward(&cache, d_fu.view());
            g_grads.add_scaled(&g_u, 1.0);
        }

        let mut l_i = 0.0;
        let mut f_grads = None;
        if config.regularizer_active() {
            let amb_batch = make_ambiguous_batch(
                bundle,
                config.pool,
                &config.lambda_policy,
                config.batch_size,
                &mut rng_reg,
            )?;
            let amb = losses::ambiguity_loss_with_grads(&params, &amb_batch, &mut rng_reg)?;
            let w = config.ambiguity_weight;
            l_i = w * amb.value;
            if w != 0.0 {
                g_grads.add_scaled(&amb.generator, w);
                let mut scaled = MlpGrads::zeros(&params.reg_classifier.spec);
                scaled.add_scaled(&amb.classifier, w);
                f_grads = Some(scaled);
            }
        }

        if !config.freeze_encoder {
            opt_e.step(&mut params.encoder, &vae.encoder);
        }
        opt_g.step(&mut params.generator, &g_grads);
        if let Some(g) = f_grads {
            opt_f.step(&mut params.reg_classifier, &g);
        }
        if let (Some(g), Some(opt), Some(dec)) = (dec_grads, opt_dec.as_mut(), params.semantic_decoder.as_mut()) {
            opt.step(dec, &g);
        }

        let report = LossReport::new(
            vae.l_bce,
            config.kl_weight * vae.l_kl,
            l_wgan_s,
            l_wgan_u,
            l_i,
            l_sem,
            config.gamma,
        );
        if !report.total.is_finite() {
            return Err(Error::OutOfRange(format!("non-finite loss at step {}", log.len())));
        }
        log.push(report);
        step_seconds.push(start.elapsed().as_secs_f64());
    }

    log::debug!(
        "trained {} generator steps, {} critic iterations in {:.2}s",
        log.len(),
        critic_updates,
        start.elapsed().as_secs_f64()
    );
    Ok(TrainedModel {
        params,
        config: config.clone(),
        generator_updates: log.len(),
        loss_log: log,
        step_seconds,
        critic_updates,
    })
}

/// `n_per_class` generated features for each class, in the given class order.
pub fn synthesize_features(
    model: &TrainedModel,
    bundle: &DatasetBundle,
    class_ids: &[ClassId],
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledFeatures> {
    let params = &model.params;
    if let Some(&missing) = class_ids.iter().find(|&&c| !bundle.has_prototype(c)) {
        return Err(Error::UnknownClass(missing));
    }
    let mut rng = rng::stream(seed, streams::SYNTH);
    let mut blocks = Vec::with_capacity(class_ids.len());
    let mut labels = Vec::with_capacity(class_ids.len() * n_per_class);
    for &id in class_ids {
        let proto = bundle.prototype(id).ok_or(Error::UnknownClass(id))?;
        let c = proto.broadcast((n_per_class, proto.len())).expect("row broadcast").to_owned();
        let z = rng::normal_matrix(&mut rng, n_per_class, params.dims.z_dim);
        blocks.push(nets::generate(params, z.view(), c.view())?);
        labels.extend(std::iter::repeat_n(id, n_per_class));
    }
    let features = if blocks.is_empty() {
        Array2::zeros((0, params.dims.d))
    } else {
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    Ok(LabeledFeatures { features, labels })
}

/// Softmax regression over `target_classes`, trained with Adam on shuffled
/// mini-batches from a zero initialization.
pub fn fit_final_classifier(
    features: &LabeledFeatures,
    target_classes: &[ClassId],
    clf_epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearClassifier> {
    if target_classes.is_empty() || features.is_empty() {
        return Err(Error::Empty("classifier training set".into()));
    }
    let col_of: std::collections::BTreeMap<ClassId, usize> =
        target_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![0usize; target_classes.len()];
    let mut cols = Vec::with_capacity(features.len());
    for y in &features.labels {
        let j = *col_of.get(y).ok_or(Error::UnknownClass(*y))?;
        counts[j] += 1;
        cols.push(j);
    }
    if let Some(j) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(target_classes[j]));
    }

    let d = features.features.ncols();
    let k = target_classes.len();
    let mut clf = LinearClassifier::zeros(d, target_classes.to_vec());
    let mut opt = Adam::new(d * k + k, lr, (0.5, 0.999));
    let mut rng = rng::stream(seed, streams::CLASSIFIER);
    let n = features.len();
    for _ in 0..clf_epochs {
        let order = index::sample(&mut rng, n, n).into_vec();
        for chunk in order.chunks(CLF_BATCH_SIZE) {
            let x = select_rows(features.features.view(), chunk);
            let mut grad = nets::softmax(clf.scores(x.view())?.view());
            for (r, &i) in chunk.iter().enumerate() {
                grad[[r, cols[i]]] -= 1.0;
            }
            grad /= chunk.len() as f64;
            let dw = nets::standard(x.t().dot(&grad));
            let db = grad.sum_axis(Axis(0));
            let params = vec![
                clf.weight.as_slice_mut().expect("standard layout"),
                clf.bias.as_slice_mut().expect("standard layout"),
            ];
            opt.step_slices(
                params,
                &[dw.as_slice().expect("standard layout"), db.as_slice().expect("standard layout")],
            );
        }
    }
    Ok(clf)
}

/// ZSL and (when held-out seen features exist) GZSL records for a trained
/// model, using the model's configuration for synthesis and classifiers.
pub fn evaluate(model: &TrainedModel, bundle: &DatasetBundle, method: &str) -> Result<Vec<MetricsRecord>> {
    let cfg = &model.config;
    let split = bundle.split().clone();
    let synth_seed = rng::derive_seed(cfg.seed, streams::SYNTH);
    let clf_seed = rng::derive_seed(cfg.seed, streams::CLASSIFIER);
    let syn_unseen = synthesize_features(model, bundle, &split.unseen, cfg.synth_per_unseen, synth_seed)?;
    let unseen_test = bundle.eval_unseen_test();

    let zsl_clf = fit_final_classifier(&syn_unseen, &split.unseen, cfg.clf_epochs, cfg.clf_lr, clf_seed)?;
    let t1 = top1_on(&zsl_clf, unseen_test.features.view(), &unseen_test.labels)?;
    let mut records = vec![MetricsRecord::zsl(method, bundle.name(), cfg.mode, t1)];

    match bundle.seen_test() {
        Some(seen_test) => {
            let mut train_set = bundle.labeled().concat(&syn_unseen)?;
            if cfg.synth_per_seen > 0 {
                let syn_seen = synthesize_features(
                    model,
                    bundle,
                    &split.seen,
                    cfg.synth_per_seen,
                    rng::derive_seed(synth_seed, 1),
                )?;
                train_set = train_set.concat(&syn_seen)?;
            }
            let mut all = split.all_classes();
            all.sort();
            let clf = fit_final_classifier(&train_set, &all, cfg.clf_epochs, cfg.clf_lr, rng::derive_seed(clf_seed, 1))?;
            let (u, s, h) = gzsl_eval(&clf, seen_test, &unseen_test)?;
            records.push(MetricsRecord::gzsl(method, bundle.name(), cfg.mode, u, s, h));
        }
        None => log::warn!("{}: no held-out seen features, skipping GZSL", bundle.name()),
    }
    Ok(records)
}
