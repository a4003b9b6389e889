//! Small dense kernels shared by the network roles.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::Real;
use crate::Rng;

pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

/// `x W + b`.
pub(crate) fn affine<T: Real>(x: ArrayView2<T>, w: ArrayView2<T>, b: ArrayView1<T>) -> Array2<T> {
    let mut out = x.dot(&w);
    out += &b;
    out
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| v.max(T::zero()));
}

/// Zeroes gradient entries whose forward activation was clamped.
pub(crate) fn relu_backward<T: Real>(grad: &mut Array2<T>, activated: &Array2<T>) {
    Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

pub(crate) fn column_sums<T: Real>(x: &Array2<T>) -> Array1<T> {
    x.sum_axis(Axis(0))
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Real>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Inverted dropout applied to features during training.
///
/// With no generator attached (evaluation, gradient checks) it is the identity.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut Rng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rate: f64, rng: &'a mut Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    /// Returns the dropped-out features and the scaling mask (if any).
    pub(crate) fn apply<T: Real>(&mut self, mut x: Array2<T>) -> (Array2<T>, Option<Array2<T>>) {
        use rand::Rng as _;
        let Some(rng) = self.rng.as_deref_mut() else {
            return (x, None);
        };
        if self.rate <= 0.0 {
            return (x, None);
        }
        let keep = 1.0 - self.rate;
        let scale = real::<T>(1.0 / keep);
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if rng.random_bool(keep) {
                scale
            } else {
                T::zero()
            }
        });
        x *= &mask;
        (x, Some(mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn log_softmax_rows_normalize() {
        let x = array![[1.0f64, 2.0, 3.0], [-100.0, 0.0, 100.0]];
        let l = log_softmax(x.view());
        for row in l.rows() {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_identity_without_rng() {
        let x = array![[1.0f32, 2.0]];
        let (y, m) = Dropout::off().apply(x.clone());
        assert_eq!(y, x);
        assert!(m.is_none());
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut rng = crate::seeded(1);
        let x = Array2::<f64>::ones((50, 40));
        let (y, m) = Dropout::train(0.4, &mut rng).apply(x);
        let m = m.unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.6).abs() < 1e-12));
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / m.len() as f64;
        assert!((kept - 0.6).abs() < 0.05, "{kept}");
    }
}
