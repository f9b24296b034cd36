use super::{AutodiffError, ParamSet, Tensor};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Update every parameter with its gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), AutodiffError> {
        let all = vec![true; params.len()];
        self.step_masked(params, grads, &all)
    }

    /// Like [`step`](Self::step) but parameters with `trainable[i] == false`
    /// are left untouched (their moments do not advance either).
    pub fn step_masked(
        &mut self,
        params: &mut ParamSet,
        grads: &[Tensor],
        trainable: &[bool],
    ) -> Result<(), AutodiffError> {
        if grads.len() != params.len() || trainable.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().zip(grads) {
            if p.shape() != g.shape() && p.len() != g.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.tensors().map(|t| vec![0.0; t.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                left: vec![self.first_moment.len()],
                right: vec![params.len()],
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for ((w, &gi), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
