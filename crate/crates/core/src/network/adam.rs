use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, lengths: &[usize]) -> Self {
        AdamState {
            config,
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_network(net: &Network, config: AdamConfig) -> Self {
        let lengths: Vec<usize> = net.param_layout().iter().map(|&(_, _, n)| n).collect();
        Self::new(config, &lengths)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam: {} moment tensors, {} parameter tensors, {} gradient tensors",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::config(format!(
                    "adam: tensor {i} has {} params and {} grads, expected {}",
                    p.len(),
                    g.len(),
                    self.m[i].len()
                )));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 / (1.0 - beta1.powi(t));
        let c2 = 1.0 / (1.0 - beta2.powi(t));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] * c1;
                let v_hat = v[j] * c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut w = vec![0.3, -1.2, 4.0];
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        for _ in 0..10 {
            s.step(&mut [&mut w[..]], &[&[0.0; 3][..]]).unwrap();
        }
        assert_eq!(w, vec![0.3, -1.2, 4.0]);
        assert_eq!(s.t, 10);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = [0.5];
        let mut s = AdamState::new(AdamConfig::default(), &[1]);
        s.step(&mut [&mut w[..]], &[&[1.0][..]]).unwrap();
        // m̂ = 1 and v̂ = 1 after bias correction, so Δw = -lr/(1 + eps)
        assert!((w[0] - (0.5 - 0.001)).abs() < 1e-8);
    }

    /// Textbook Adam on a scalar, transcribed without the slice plumbing.
    fn reference_adam(mut w: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = grad(w);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_converges_like_reference() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut w = [1.0];
        let mut s = AdamState::new(cfg, &[1]);
        for _ in 0..200 {
            let g = [w[0]];
            s.step(&mut [&mut w[..]], &[&g[..]]).unwrap();
        }
        let want = reference_adam(1.0, |w| w, 0.1, 200);
        assert!(want.abs() < 0.01, "reference ended at {want}");
        assert!(w[0].abs() < 0.01);
        assert!((w[0] - want).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut w = [0.0; 3];
        assert!(s.step(&mut [&mut w[..]], &[&[0.0; 3][..]]).is_err());
        let mut w = [0.0; 2];
        assert!(adam_step(&mut [&mut w[..]], &[], &mut s).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn second_moment_nonnegative() {
        let mut s = AdamState::new(AdamConfig::default(), &[4]);
        let mut w = [0.0; 4];
        for k in 0..20 {
            let g = [k as f64 - 10.0, -3.0, 0.5, 1e3];
            s.step(&mut [&mut w[..]], &[&g[..]]).unwrap();
        }
        assert!(s.v[0].iter().all(|&v| v >= 0.0));
    }
}
