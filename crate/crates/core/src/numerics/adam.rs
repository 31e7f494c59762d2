use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Adam moment estimates for a fixed list of parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    /// Fresh state with standard hyperparameters for parameters of the given shapes.
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self::with_hyper(shapes, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPSILON)
    }

    pub fn with_hyper(shapes: &[(usize, usize)], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self { beta1, beta2, epsilon, first: zeros(), second: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self, idx: usize) -> &Matrix {
        &self.first[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &Matrix {
        &self.second[idx]
    }

    /// One bias-corrected Adam update applied to every parameter in place.
    ///
    /// An all-zero gradient leaves parameters and state untouched and returns
    /// `Ok(false)`. A non-finite gradient aborts before anything is mutated.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<bool> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "Adam state tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} / gradient {:?} do not match moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric("non-finite gradient in Adam step".into()));
            }
        }
        if grads.iter().all(|g| g.as_slice().iter().all(|v| *v == 0.0)) {
            return Ok(false);
        }

        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[idx].as_mut_slice();
            let v = self.second[idx].as_mut_slice();
            for (((pi, gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(true)
    }
}

/// Single-parameter convenience wrapper around [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut Matrix, grad: &Matrix, lr: f64) -> Result<bool> {
    let mut slot = [std::mem::replace(params, Matrix::zeros(0, 0))];
    let out = state.step(&mut slot, std::slice::from_ref(grad), lr);
    let [p] = slot;
    *params = p;
    out
}
