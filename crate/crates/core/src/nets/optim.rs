use ndarray::{ArrayD, Zip};

use super::ops::real;
use super::{ParameterSet, Real};

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParameterSet<T>, lr: f64) -> Self {
        let zeros = params.zeros_like();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.tensors().to_vec(),
            v: zeros.tensors().to_vec(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) {
        debug_assert!(params.same_shape(grads));
        self.step += 1;
        let b1: T = real(self.beta1);
        let b2: T = real(self.beta2);
        let one = T::one();
        let c1: T = real(1.0 - self.beta1.powi(self.step));
        let c2: T = real(1.0 - self.beta2.powi(self.step));
        let lr: T = real(self.lr);
        let eps: T = real(self.eps);
        for (i, g) in grads.tensors().iter().enumerate() {
            Zip::from(params.tensor_mut(i))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParameterSet::<f64>::new();
        p.push("x", ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let mut opt = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g = p.clone(); // d/dx x^2 / 2
            opt.step(&mut p, &g);
        }
        assert!(p.max_abs() < 1e-2, "{:?}", p.flatten());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParameterSet::<f64>::new();
        p.push("x", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut g = p.zeros_like();
        g.tensor_mut(0)[[0]] = 5.0;
        Adam::new(&p, 1e-4).step(&mut p, &g);
        assert!((p.flatten()[0] - (1.0 - 1e-4)).abs() < 1e-9);
    }
}
