use crate::autodiff::Tensor;
use crate::scalar::{real, Scalar};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams {
            learning_rate,
            ..Default::default()
        }
    }
}

/// First/second-moment adaptive optimizer with bias correction. One
/// instance owns the moment buffers for a fixed, ordered parameter list.
pub struct Adam<F: Scalar> {
    params: AdamParams,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: AdamParams) -> Self {
        Adam {
            params,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over parallel lists of parameters and gradients. The
    /// parameter order must be identical on every call.
    pub fn update(&mut self, tensors: &mut [&mut Tensor<F>], grads: &[Vec<F>]) {
        assert_eq!(tensors.len(), grads.len(), "parameter/gradient count mismatch");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
            self.second = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = real::<F>(self.params.learning_rate);
        let b1 = real::<F>(self.params.beta1);
        let b2 = real::<F>(self.params.beta2);
        let eps = real::<F>(self.params.epsilon);
        let one = F::one();
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);

        for ((tensor, grad), (m, v)) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            assert_eq!(tensor.numel(), grad.len(), "gradient shaped like its parameter");
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
