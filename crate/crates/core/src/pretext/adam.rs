use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Step decay: `initial` before `decay_epoch`, `last` from then on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub initial: f64,
    pub last: f64,
    pub decay_epoch: usize,
}

impl LearningRate {
    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.last
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract("parameter count differs from optimizer state".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::row_vector(&[1.0, -2.0, 0.5]);
        let g = Matrix::row_vector(&[0.3, -4.0, 0.0]);
        let mut adam = Adam::new(&[(1, 3)]);
        adam.step(vec![&mut p], &[g], 0.1).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let expect = [1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 0.5];
        for (a, b) in p.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let mut p = Matrix::scalar(2.0);
        let mut adam = Adam::new(&[(1, 1)]);
        let (mut w, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * w - 1.0;
            let grad = Matrix::scalar(2.0 * p.item() - 1.0);
            adam.step(vec![&mut p], &[grad], 0.05).unwrap();
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            w -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert_eq!(p.item(), w);
        }
        assert!((w - 0.5).abs() < 0.1);
    }

    #[test]
    fn schedule_steps_down() {
        let lr = LearningRate {
            initial: 1e-4,
            last: 1e-5,
            decay_epoch: 3,
        };
        assert_eq!([lr.at(0), lr.at(2), lr.at(3), lr.at(10)], [1e-4, 1e-4, 1e-5, 1e-5]);
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let mut adam = Adam::new(&[(1, 2)]);
        let mut p = Matrix::zeros(1, 3);
        assert!(adam.step(vec![&mut p], &[Matrix::zeros(1, 3)], 0.1).is_err());
        assert!(adam.step(vec![], &[], 0.1).is_err());
    }
}
