//! Cosine learning-rate annealing and Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// `lr(k) = lr_end + (lr_start - lr_end) (1 + cos(pi k / K)) / 2` with
/// `K = total_steps - 1`; both endpoints are returned exactly.
pub fn cosine_lr(step: u64, total_steps: u64, lr_start: f64, lr_end: f64) -> f64 {
    let last = total_steps.saturating_sub(1);
    if step == 0 || last == 0 {
        return lr_start;
    }
    if step >= last {
        return lr_end;
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / last as f64).cos());
    lr_end + (lr_start - lr_end) * w
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub steps: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>, betas: (f64, f64), weight_decay: f64) -> Self {
        let zeros: Vec<Tensor<f32>> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamW {
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `grads` follows [`ParamStore::tensors_mut`] order.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &[Tensor<f32>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(
                "adamw",
                format!("{} gradients for {} tensors", grads.len(), self.m.len()),
            ));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != g.shape() {
                return Err(Error::invalid(
                    "adamw",
                    format!("gradient shape {:?} for {:?}", g.shape(), p.shape()),
                ));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i] as f64;
                let mi = b1 * md[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * vd[i] as f64 + (1.0 - b2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = (pd[i] as f64 * decay - update) as f32;
            }
        }
        Ok(())
    }
}
