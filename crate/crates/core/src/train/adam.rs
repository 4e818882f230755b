//! Adam with lazy (row-sparse) updates for texel tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Moments for every tensor, keyed by tensor name. Entries are created on
/// first update.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    fn entry(&mut self, name: &str, len: usize) -> &mut Moments {
        let e = self.moments.entry(name.to_string()).or_default();
        if e.m.len() != len {
            e.m = vec![0.0; len];
            e.v = vec![0.0; len];
        }
        e
    }

    /// Updates every element. `step` is the 1-based global step used for
    /// bias correction.
    pub fn update_dense(&mut self, name: &str, param: &mut [f32], grad: &[f32], lr: f64, step: u64, cfg: &AdamConfig) {
        let e = self.entry(name, param.len());
        let c = Correction::new(lr, step, cfg);
        for i in 0..param.len() {
            c.apply(&mut param[i], &mut e.m[i], &mut e.v[i], grad[i]);
        }
    }

    /// Updates only the listed rows of width `width`. Untouched rows keep
    /// both their values and their moments.
    #[allow(clippy::too_many_arguments)]
    pub fn update_rows(
        &mut self,
        name: &str,
        param: &mut [f32],
        grad: &[f32],
        rows: &[u32],
        width: usize,
        lr: f64,
        step: u64,
        cfg: &AdamConfig,
    ) {
        let e = self.entry(name, param.len());
        let c = Correction::new(lr, step, cfg);
        for &r in rows {
            for i in r as usize * width..(r as usize + 1) * width {
                c.apply(&mut param[i], &mut e.m[i], &mut e.v[i], grad[i]);
            }
        }
    }
}

struct Correction {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

impl Correction {
    fn new(lr: f64, step: u64, cfg: &AdamConfig) -> Self {
        let t = step.max(1) as i32;
        Correction {
            lr,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.epsilon,
            c1: 1.0 - cfg.beta1.powi(t),
            c2: 1.0 - cfg.beta2.powi(t),
        }
    }

    #[inline]
    fn apply(&self, p: &mut f32, m: &mut f32, v: &mut f32, g: f32) {
        let g = g as f64;
        let m1 = self.b1 * *m as f64 + (1.0 - self.b1) * g;
        let v1 = self.b2 * *v as f64 + (1.0 - self.b2) * g * g;
        *m = m1 as f32;
        *v = v1 as f32;
        let mh = m1 / self.c1;
        let vh = v1 / self.c2;
        *p = (*p as f64 - self.lr * mh / (vh.sqrt() + self.eps)) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * sign(g).
        let mut s = AdamState::default();
        let mut p = vec![1.0f32, 1.0];
        s.update_dense("w", &mut p, &[0.5, -2.0], 0.01, 1, &AdamConfig::default());
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn lazy_rows_leave_others_untouched() {
        let mut s = AdamState::default();
        let mut p = vec![0.0f32; 6];
        let g = vec![1.0f32; 6];
        s.update_rows("t", &mut p, &g, &[1], 2, 0.1, 1, &AdamConfig::default());
        assert_eq!(&p[0..2], &[0.0, 0.0]);
        assert_eq!(&p[4..6], &[0.0, 0.0]);
        assert!(p[2] < 0.0 && p[3] < 0.0);
        let e = &s.moments["t"];
        assert_eq!(e.m[0], 0.0);
        assert!(e.m[2] > 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut s = AdamState::default();
        let mut p = vec![0.3f32, -0.7];
        s.update_dense("w", &mut p, &[1.0, 2.0], 0.0, 1, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn matches_reference_sequence() {
        // Hand-rolled scalar Adam over three steps.
        let cfg = AdamConfig::default();
        let grads = [0.3, -0.1, 0.2];
        let (mut m, mut v, mut p) = (0.0f64, 0.0f64, 0.5f64);
        let mut s = AdamState::default();
        let mut q = vec![0.5f32];
        for (t, &g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            p -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            s.update_dense("p", &mut q, &[g as f32], 0.01, t as u64, &cfg);
        }
        assert!((q[0] as f64 - p).abs() < 1e-6);
    }
}
