//! Adam with decoupled weight decay, gradient clipping and the cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::engine::params::{ParamKind, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Divide the step for temporal weights by the neuron's fan-in, so a
    /// step moves each weight sum by at most `lr` whatever the layer size.
    pub fan_in_scaled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            fan_in_scaled: false,
        }
    }
}

/// First and second moment estimates, one vector per parameter slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam update of a single tensor. `step` is the 1-based step count
/// after this update. Decay, when enabled, is applied directly to the
/// parameter (decoupled from the gradient moments).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
    decay: bool,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        if decay {
            p[i] -= lr * cfg.weight_decay * p[i];
        }
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Updates every trainable slot, then projects delays onto `theta >= 0`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Contract(
            "optimizer state does not match the parameter store".into(),
        ));
    }
    state.step += 1;
    for (id, p) in params.iter_mut().enumerate() {
        if !p.kind.trainable() {
            continue;
        }
        if grads[id].len() != p.data.len() {
            return Err(Error::Contract(format!(
                "gradient for {} has the wrong length",
                p.name
            )));
        }
        let lr = if cfg.fan_in_scaled && p.kind == ParamKind::Weight {
            lr / p.row_len() as f64
        } else {
            lr
        };
        adam_update(
            &mut p.data,
            &grads[id],
            &mut state.m[id],
            &mut state.v[id],
            state.step,
            lr,
            cfg,
            p.kind.decays(),
        );
        if p.kind == ParamKind::Delay {
            project_nonnegative(&mut p.data);
        }
    }
    Ok(())
}

pub fn project_nonnegative(theta: &mut [f64]) {
    for t in theta {
        if !(*t >= 0.0) {
            *t = 0.0;
        }
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &ParamStore, grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .zip(grads.iter())
        .filter(|(p, _)| p.kind.trainable())
        .flat_map(|(_, g)| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// `lr0 * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Domain(format!(
            "epoch {epoch} outside schedule of {total_epochs}"
        )));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store() -> ParamStore {
        let mut s = ParamStore::default();
        s.add("w", vec![2], ParamKind::Weight, vec![0.5, -0.5]);
        s.add("theta", vec![1], ParamKind::Delay, vec![0.1]);
        s.add("rm", vec![1], ParamKind::Buffer, vec![3.0]);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let z = s.zeros_like();
        adam_step(&mut s, &z, &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moments_and_direction() {
        let (mut p, g) = (vec![1.0, 1.0], vec![0.3, -2.0]);
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.01, &cfg, false);
        assert_relative_eq!(m[0], 0.03, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.004, epsilon = 1e-15);
        // Bias correction makes the first step -lr * sign(g).
        assert_relative_eq!(p[0], 0.99, epsilon = 1e-9);
        assert_relative_eq!(p[1], 1.01, epsilon = 1e-9);
    }

    #[test]
    fn delays_are_projected_and_buffers_untouched() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let grads = vec![vec![0.0, 0.0], vec![1.0], vec![5.0]];
        // A step of 0.15 against theta = 0.1 would land at -0.05.
        adam_step(&mut s, &grads, &mut st, 0.15, &AdamConfig::default()).unwrap();
        assert_eq!(s.data(1), &[0.0]);
        assert_eq!(s.data(2), &[3.0]);
    }

    #[test]
    fn decay_only_touches_weights() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let z = s.zeros_like();
        adam_step(&mut s, &z, &mut st, 0.1, &AdamConfig::default()).unwrap();
        assert_relative_eq!(s.data(0)[0], 0.5 * (1.0 - 0.1 * 1e-3));
        assert_eq!(s.data(1), &[0.1]);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let s = store();
        let mut g = vec![vec![3.0, 4.0], vec![0.0], vec![100.0]];
        let n = clip_grad_norm(&s, &mut g, 1.0);
        assert_relative_eq!(n, 5.0);
        assert_relative_eq!(g[0][0], 0.6);
        let mut g = vec![vec![0.3, 0.4], vec![0.0], vec![0.0]];
        clip_grad_norm(&s, &mut g, 1.0);
        assert_eq!(g[0], vec![0.3, 0.4]);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0, 100, 6e-4).unwrap(), 6e-4);
        assert_relative_eq!(cosine_lr(50, 100, 6e-4).unwrap(), 3e-4, epsilon = 1e-15);
        let last = cosine_lr(99, 100, 6e-4).unwrap();
        assert_relative_eq!(
            last,
            6e-4 * 0.5 * (1.0 + (std::f64::consts::PI * 0.99).cos())
        );
        assert!(last > 0.0 && last < 1e-6);
        assert!(cosine_lr(100, 100, 6e-4).is_err());
    }
}
