//! Adam over the parameters of one [`Mlp`].

use serde::{Deserialize, Serialize};

use crate::nets::{Mlp, MlpGrads};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, betas: (f64, f64)) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_mlp(mlp: &Mlp, lr: f64, betas: (f64, f64)) -> Self {
        Self::new(mlp.param_count(), lr, betas)
    }

    /// One bias-corrected descent step.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        let params: Vec<&mut [f64]> = mlp.slices_mut().into_iter().collect();
        self.step_slices(params, &grads.slices());
    }

    /// Same as [`Adam::step`] over parameter blocks given in a fixed order.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut offset = 0;
        for (p, g) in params.into_iter().zip(grads) {
            assert_eq!(p.len(), g.len(), "parameter and gradient blocks differ");
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps * bc2.sqrt());
            }
            offset += p.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{MlpSpec, OutputActivation};

    #[test]
    fn first_step_moves_each_parameter_by_lr() {
        let mut m = Mlp::zeros(MlpSpec::new(2, 3, 1, OutputActivation::None));
        let mut g = MlpGrads::zeros(&m.spec);
        g.w1.fill(0.3);
        g.b2.fill(-2.0);
        let mut opt = Adam::for_mlp(&m, 1e-2, (0.5, 0.999));
        opt.step(&mut m, &g);
        assert!(m.w1.iter().all(|&w| (w + 1e-2).abs() < 1e-9));
        assert!((m.b2[0] - 1e-2).abs() < 1e-9);
        assert!(m.w2.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut m = Mlp::zeros(MlpSpec::new(1, 1, 1, OutputActivation::None));
        let mut opt = Adam::for_mlp(&m, 5e-2, (0.5, 0.999));
        for _ in 0..2000 {
            let mut g = MlpGrads::zeros(&m.spec);
            g.b2[0] = 2.0 * (m.b2[0] - 3.0);
            opt.step(&mut m, &g);
        }
        assert!((m.b2[0] - 3.0).abs() < 1e-3);
    }
}
