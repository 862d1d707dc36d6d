//! Adam optimizer state over a flat parameter vector.

use crate::error::{Error, Result};

/// First/second moment estimates plus the step counter; bias-corrected update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// Applies one update in place. `params` and `grads` must match the
    /// state's parameter count.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "adam expects {} parameters, got params={} grads={}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_trace_matches_reference() {
        // Reference trace computed with 40-digit arithmetic: p0=0.5, lr=0.1,
        // gradients [1, -2, 0.5].
        let mut adam = AdamState::new(1, 0.1);
        let mut p = [0.5];
        let expected = [
            0.4000000009999999900000001,
            0.4366103534720750882055071,
            0.4502794196738217255933309,
        ];
        for (g, want) in [1.0, -2.0, 0.5].into_iter().zip(expected) {
            adam.apply(&mut p, &[g]).unwrap();
            assert_abs_diff_eq!(p[0], want, epsilon = 1e-12);
        }
        assert_eq!(adam.step, 3);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With zero moments, |Δp| = lr·|g|/(|g| + ε·√bias) ≈ lr for any g ≠ 0.
        for g in [1e-3, 2.0, -40.0] {
            let mut adam = AdamState::new(1, 1e-4);
            let mut p = [0.0];
            adam.apply(&mut p, &[g]).unwrap();
            assert_abs_diff_eq!(p[0].abs(), 1e-4, epsilon = 1e-9);
            assert_eq!(p[0] < 0.0, g > 0.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut adam = AdamState::new(3, 0.1);
        let mut p = [1.0, -2.0, 0.25];
        adam.apply(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.25]);
    }

    #[test]
    fn length_mismatch_errors() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = [0.0; 2];
        assert!(adam.apply(&mut p, &[0.0; 3]).is_err());
        let mut p3 = [0.0; 3];
        assert!(adam.apply(&mut p3, &[0.0; 3]).is_err());
    }
}
