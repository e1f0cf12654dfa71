//! Analytic gradients against central finite differences on toy nets.

use ambigzsl::losses::{ambiguity_loss_with_grads, generator_adversarial, semantic_reconstruction, vae_loss_with_grads, wgan_loss};
use ambigzsl::mixer::{make_ambiguous_batch, LambdaPolicy, PoolSelector};
use ambigzsl::nets::{concat_cols, Mlp, MlpGrads, MlpSpec, ModelDims, ModelParams, OutputActivation};
use ambigzsl::rng::{normal_matrix, stream};
use ambigzsl::ClassId;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

mod common;

const H: f64 = 1e-5;
const REL: f64 = 1e-3;

fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, 99);
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

fn toy(spec: MlpSpec, seed: u64) -> Mlp {
    Mlp::init(spec, 0.5, &mut stream(seed, 0))
}

/// Compares every coordinate of `analytic` with a central difference of `f`.
fn check(label: &str, mlp: &Mlp, analytic: &MlpGrads, f: impl Fn(&Mlp) -> f64) {
    let theta = mlp.flatten();
    let a = analytic.flatten();
    assert_eq!(theta.len(), a.len());
    let mut probe = mlp.clone();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + H;
        probe.set_flat(&t);
        let up = f(&probe);
        t[i] = theta[i] - H;
        probe.set_flat(&t);
        let down = f(&probe);
        let num = (up - down) / (2.0 * H);
        let err = (a[i] - num).abs();
        let tol = REL * a[i].abs().max(num.abs()) + 1e-8;
        assert!(err <= tol, "{label}[{i}]: analytic {} vs numeric {num}", a[i]);
        worst = worst.max(err / (a[i].abs().max(num.abs()) + 1e-12));
    }
    assert!(a.iter().any(|&g| g != 0.0), "{label}: all-zero gradient");
    eprintln!("{label}: {} params, worst relative error {worst:.2e}", theta.len());
}

#[test]
fn mlp_backward_matches_finite_differences() {
    for (act, label) in [(OutputActivation::None, "linear head"), (OutputActivation::Sigmoid, "sigmoid head")] {
        let mlp = toy(MlpSpec::new(5, 16, 3, act), 1);
        let x = uniform(7, 5, 2);
        let w = uniform(7, 3, 3) - 0.5;
        let loss = |m: &Mlp| (&m.forward(x.view()).unwrap() * &w).sum();
        let cache = mlp.forward_cached(x.view()).unwrap();
        let (g, d_x) = mlp.backward(&cache, w.view());
        check(label, &mlp, &g, loss);

        // input gradient
        for (r, c) in [(0, 0), (3, 2), (6, 4)] {
            let mut xp = x.clone();
            xp[[r, c]] += H;
            let mut xm = x.clone();
            xm[[r, c]] -= H;
            let f = |x: &Array2<f64>| (&mlp.forward(x.view()).unwrap() * &w).sum();
            let num = (f(&xp) - f(&xm)) / (2.0 * H);
            assert!((d_x[[r, c]] - num).abs() <= REL * num.abs() + 1e-8);
        }
    }
}

#[test]
fn critic_gradient_including_penalty_path() {
    let (d, a) = (4, 3);
    let critic = toy(MlpSpec::new(d + a, 16, 1, OutputActivation::None), 5);
    let real = uniform(6, d, 6);
    let fake = uniform(6, d, 7);
    let cond = uniform(6, a, 8);
    for (cond, label) in [(Some(cond.view()), "conditional critic"), (None, "unconditional critic")] {
        let critic = if cond.is_some() {
            critic.clone()
        } else {
            toy(MlpSpec::new(d, 16, 1, OutputActivation::None), 9)
        };
        // the interpolation coefficients come from this stream; reuse it per evaluation
        let loss = |m: &Mlp| wgan_loss(m, real.view(), fake.view(), cond, 10.0, &mut stream(11, 1)).unwrap().critic_loss;
        let out = wgan_loss(&critic, real.view(), fake.view(), cond, 10.0, &mut stream(11, 1)).unwrap();
        assert!(out.penalty > 0.0);
        check(label, &critic, &out.critic_grads, loss);
    }
}

#[test]
fn penalty_only_gradient() {
    let critic = toy(MlpSpec::new(5, 12, 1, OutputActivation::None), 12);
    let x = uniform(9, 5, 13);
    let loss = |m: &Mlp| m.gradient_penalty(x.view(), ambigzsl::losses::GP_EPS).unwrap().value;
    let gp = critic.gradient_penalty(x.view(), ambigzsl::losses::GP_EPS).unwrap();
    check("gradient penalty", &critic, &gp.grads, loss);
}

fn toy_params(k: usize) -> ModelParams {
    let dims = ModelDims {
        d: 4,
        a: 3,
        z_dim: 3,
        hidden_dim: 10,
        k,
    };
    let pool = (1..=k as u32).map(ClassId).collect();
    let mut p = ModelParams::init(dims, pool, 0.3, true, 21).unwrap();
    // wider init than training uses, so the sampling path is not negligible
    p.encoder = toy(dims.encoder(), 22);
    p
}

#[test]
fn vae_gradients() {
    let p = toy_params(3);
    let x = uniform(5, 4, 23);
    let c = uniform(5, 3, 24);
    let kl_weight = 0.7;
    let out = vae_loss_with_grads(&p, x.view(), c.view(), kl_weight, &mut stream(25, 2)).unwrap();
    let total = |q: &ModelParams| {
        let o = vae_loss_with_grads(q, x.view(), c.view(), kl_weight, &mut stream(25, 2)).unwrap();
        o.l_bce + kl_weight * o.l_kl
    };
    check("VAE wrt encoder", &p.encoder, &out.encoder, |m| {
        total(&ModelParams { encoder: m.clone(), ..p.clone() })
    });
    check("VAE wrt generator", &p.generator, &out.generator, |m| {
        total(&ModelParams { generator: m.clone(), ..p.clone() })
    });
}

fn generator_adversarial_loss(p: &ModelParams, z: ArrayView2<f64>, c: ArrayView2<f64>) -> (f64, MlpGrads) {
    let cache = p.generator.forward_cached(concat_cols(z, c).unwrap().view()).unwrap();
    let (loss, d_fake) = generator_adversarial(&p.disc_cond, cache.output.view(), Some(c)).unwrap();
    let (g, _) = p.generator.backward(&cache, d_fake.view());
    (loss, g)
}

#[test]
fn generator_adversarial_gradient() {
    let mut p = toy_params(3);
    p.disc_cond = toy(p.dims.disc_cond(), 31);
    let z = normal_matrix(&mut stream(32, 0), 6, 3);
    let c = uniform(6, 3, 33);
    let (_, g) = generator_adversarial_loss(&p, z.view(), c.view());
    check("generator through conditional critic", &p.generator, &g, |m| {
        generator_adversarial_loss(&ModelParams { generator: m.clone(), ..p.clone() }, z.view(), c.view()).0
    });
}

#[test]
fn ambiguity_gradients() {
    let bundle = common::bundle(2, 2, 40);
    let dims = ModelDims {
        d: bundle.feature_dim(),
        a: bundle.prototype_dim(),
        z_dim: 3,
        hidden_dim: 10,
        k: 4,
    };
    let p = ModelParams {
        generator: toy(dims.generator(), 41),
        reg_classifier: toy(dims.reg_classifier(), 42),
        ..ModelParams::init(dims, PoolSelector::Both.classes(bundle.split()), 0.3, false, 43).unwrap()
    };
    let batch = make_ambiguous_batch(&bundle, PoolSelector::Both, &LambdaPolicy::uniform(0.0, 1.0).per_row(), 6, &mut stream(44, 3)).unwrap();
    let out = ambiguity_loss_with_grads(&p, &batch, &mut stream(45, 3)).unwrap();
    let value = |q: &ModelParams| ambiguity_loss_with_grads(q, &batch, &mut stream(45, 3)).unwrap().value;
    check("ambiguity wrt generator", &p.generator, &out.generator, |m| {
        value(&ModelParams { generator: m.clone(), ..p.clone() })
    });
    check("ambiguity wrt classifier", &p.reg_classifier, &out.classifier, |m| {
        value(&ModelParams { reg_classifier: m.clone(), ..p.clone() })
    });
}

#[test]
fn semantic_decoder_gradient() {
    let dec = toy(MlpSpec::new(4, 8, 3, OutputActivation::None), 50);
    let x = uniform(5, 4, 51);
    let c = uniform(5, 3, 52);
    let (_, g, _) = semantic_reconstruction(&dec, x.view(), c.view()).unwrap();
    check("semantic decoder", &dec, &g, |m| semantic_reconstruction(m, x.view(), c.view()).unwrap().0);
}
