//! AdamW with optional global gradient clipping.

use super::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2-norm clip applied before the update; 0 disables.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> AdamWConfig {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 0.0,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> AdamW {
        let m = (0..store.len())
            .map(|i| vec![0.0; store.tensor(i).len()])
            .collect();
        let v = (0..store.len())
            .map(|i| vec![0.0; store.tensor(i).len()])
            .collect();
        AdamW {
            cfg,
            m,
            v,
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update from `(param_idx, grad)` pairs produced by
    /// `Tape::backward`. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(usize, Vec<f64>)]) -> f64 {
        let mut sq = 0.0;
        for (_, g) in grads {
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
        let norm = sq.sqrt();
        let scale = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (idx, g) in grads {
            let m = &mut self.m[*idx];
            let v = &mut self.v[*idx];
            let p = &mut store.tensor_mut(*idx).data;
            for i in 0..g.len() {
                let gi = g[i] * scale;
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.cfg.lr * (mhat / (vhat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * p[i]);
            }
        }
        norm
    }
}
