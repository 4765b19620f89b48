//! Adam with bias correction, one moment pair per parameter tensor.

use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moments: Vec<Vec<f64>>,
    second_moments: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    /// Apply one update. Parameter order must stay fixed across steps;
    /// moment buffers are allocated lazily on the first call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        if self.first_moments.is_empty() {
            for p in params.iter() {
                self.first_moments.push(alloc::vec![0.0; p.len()]);
                self.second_moments.push(alloc::vec![0.0; p.len()]);
            }
        }
        assert_eq!(self.first_moments.len(), params.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - math::powf(self.beta1, t as f64);
        let correction2 = 1.0 - math::powf(self.beta2, t as f64);
        for (idx, param) in params.iter_mut().enumerate() {
            let g = grads[idx].data();
            let m = &mut self.first_moments[idx];
            let v = &mut self.second_moments[idx];
            let data = param.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                data[i] -= self.learning_rate * m_hat / (math::sqrt(v_hat) + self.epsilon);
            }
        }
    }

    /// Moment buffers for state serialization, in parameter order.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moments, &self.second_moments)
    }

    pub fn restore_moments(
        &mut self,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
        step_count: u64,
    ) {
        self.first_moments = first;
        self.second_moments = second;
        self.step_count = step_count;
    }
}
