use crate::error::{Error, Result};
use crate::math::MlpParams;

/// Adam optimizer state for one network.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn for_params(params: &MlpParams, lr: f64) -> Self {
        Self::new(params.num_params(), lr)
    }

    /// Bias-corrected update of a flat parameter vector (gradient descent).
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension { expected: self.m.len(), got: params.len().max(grads.len()) });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        let mut flat = params.to_flat();
        self.step_flat(&mut flat, &grads.to_flat())?;
        params.set_flat(&flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step_flat(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let mut s = AdamState::new(3, 1e-3);
        let g = [0.5, -3.0, 1e-9];
        let mut p = vec![0.0; 3];
        s.step_flat(&mut p, &g).unwrap();
        for i in 0..3 {
            let expected = -1e-3 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15, "{i}: {} vs {expected}", p[i]);
        }
    }

    #[test]
    fn two_steps_follow_the_recurrence() {
        let mut s = AdamState::new(1, 0.01);
        let mut p = vec![1.0];
        s.step_flat(&mut p, &[2.0]).unwrap();
        s.step_flat(&mut p, &[2.0]).unwrap();
        // replay by hand
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.01, 1e-8);
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 2.0;
            v = b2 * v + (1.0 - b2) * 4.0;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((p[0] - x).abs() < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut s = AdamState::new(2, 1e-3);
        assert!(s.step_flat(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
