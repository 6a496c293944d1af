use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const DEFAULT_LR: f64 = 0.01;

/// Adagrad state for one flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    /// Running sum of squared gradients.
    pub accum: Vec<f64>,
}

impl Adagrad {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            eps: ADAGRAD_EPS,
            accum: vec![0.0; len],
        }
    }

    /// `accum += g²; θ -= lr·g/(√accum + eps)`, elementwise.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.accum.len() || grads.len() != self.accum.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} entries, got {} params and {} grads",
                self.accum.len(),
                params.len(),
                grads.len()
            )));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        for ((p, a), g) in params.iter_mut().zip(&mut self.accum).zip(grads) {
            *a += g * g;
            *p -= self.lr * g / (a.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut opt = Adagrad::new(2, DEFAULT_LR);
        let mut p = [1.0, -3.0];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -3.0]);
        assert_eq!(opt.accum, vec![0.0, 0.0]);
    }

    #[test]
    fn two_hand_computed_steps() {
        let mut opt = Adagrad::new(1, 0.01);
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert_eq!(opt.accum[0], 4.0);
        assert!((p[0] - 0.99).abs() < 1e-12);
        opt.step(&mut p, &[2.0]).unwrap();
        assert_eq!(opt.accum[0], 8.0);
        assert!((p[0] - (0.99 - 0.02 / 8f64.sqrt())).abs() < 1e-12);
        assert!((p[0] - 0.982929).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut opt = Adagrad::new(1, 0.01);
        let mut p = [1.0];
        assert!(opt.step(&mut p, &[f64::NAN]).is_err());
        assert!(opt.step(&mut p, &[1.0, 2.0]).is_err());
    }
}
