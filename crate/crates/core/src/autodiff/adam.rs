use super::DiffError;
use ndarray::Array2;

/// Adam with a per-epoch multiplicative learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, decay: f64) -> Self {
        Self {
            lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. Moment buffers are created on the first call; every later
    /// call must pass tensors of the same count and shapes.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<(), DiffError> {
        if params.len() != grads.len() {
            return Err(DiffError::TensorCount {
                got: grads.len(),
                expected: params.len(),
            });
        }
        if let Some(bad) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(DiffError::NonFiniteGradient(bad));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(DiffError::TensorCount {
                got: grads.len(),
                expected: self.m.len(),
            });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let correct1 = 1.0 - b1.powi(self.step);
        let correct2 = 1.0 - b2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / correct1;
                    let v_hat = *v / correct2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
        Ok(())
    }

    /// Applies the per-epoch learning-rate decay.
    pub fn end_epoch(&mut self) {
        self.lr *= self.decay;
    }
}
