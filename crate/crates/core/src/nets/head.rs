use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::extractor::{init_weight, zeros};
use super::ops::{affine, column_sums, log_softmax, relu_backward, relu_inplace};
use super::{ParameterSet, Real};
use crate::error::{ensure, Result};
use crate::Rng;

/// One hidden ReLU layer followed by a linear output layer. Used for the
/// sentiment classifier and for both discriminators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    /// Log-probabilities over domains.
    Multinomial,
    /// Unbounded scores, one per row.
    Critic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T: Real = f32> {
    config: HeadConfig,
    params: ParameterSet<T>,
}

pub struct HeadCache<T: Real> {
    input: Array2<T>,
    hidden: Array2<T>,
}

impl<T: Real> Head<T> {
    pub fn init(config: HeadConfig, rng: &mut Rng) -> Result<Self> {
        ensure!(
            config.input_dim > 0 && config.hidden_dim > 0 && config.output_dim > 0,
            "head dimensions must be positive: {config:?}"
        );
        let mut params = ParameterSet::new();
        params.push("w1", init_weight(rng, config.input_dim, config.hidden_dim));
        params.push("b1", zeros(config.hidden_dim));
        params.push("w2", init_weight(rng, config.hidden_dim, config.output_dim));
        params.push("b2", zeros(config.output_dim));
        Ok(Head { config, params })
    }

    pub fn from_parts(config: HeadConfig, params: ParameterSet<T>) -> Result<Self> {
        let expected = Self::init(config.clone(), &mut crate::seeded(0))?;
        ensure!(
            expected.params.same_shape(&params),
            "parameter layout does not match head config {config:?}"
        );
        Ok(Head { config, params })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Head<U> {
        Head {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Raw output scores (logits).
    pub fn forward(&self, input: ArrayView2<T>) -> Result<(Array2<T>, HeadCache<T>)> {
        ensure!(
            input.ncols() == self.config.input_dim,
            "head expects width {}, got {}",
            self.config.input_dim,
            input.ncols()
        );
        let mut hidden = affine(input, self.params.matrix(0), self.params.vector(1));
        relu_inplace(&mut hidden);
        let out = affine(hidden.view(), self.params.matrix(2), self.params.vector(3));
        Ok((
            out,
            HeadCache {
                input: input.to_owned(),
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `d loss / d input`.
    pub fn backward(&self, cache: &HeadCache<T>, grad_out: &Array2<T>, grads: &mut ParameterSet<T>) -> Array2<T> {
        grads.matrix_mut(2).scaled_add(T::one(), &cache.hidden.t().dot(grad_out));
        grads.vector_mut(3).scaled_add(T::one(), &column_sums(grad_out));
        let mut d_hidden = grad_out.dot(&self.params.matrix(2).t());
        relu_backward(&mut d_hidden, &cache.hidden);
        grads.matrix_mut(0).scaled_add(T::one(), &cache.input.t().dot(&d_hidden));
        grads.vector_mut(1).scaled_add(T::one(), &column_sums(&d_hidden));
        d_hidden.dot(&self.params.matrix(0).t())
    }
}

/// Concatenates `(shared, private)` feature blocks column-wise.
pub fn concat_features<T: Real>(shared: ArrayView2<T>, private: ArrayView2<T>) -> Result<Array2<T>> {
    ensure!(
        shared.nrows() == private.nrows(),
        "shared ({}) and private ({}) row counts differ",
        shared.nrows(),
        private.nrows()
    );
    Ok(concatenate(Axis(1), &[shared, private]).expect("row counts checked"))
}

/// Sentiment log-probabilities `C(shared, private)`, `batch × 2`.
pub fn forward_classifier<T: Real>(
    classifier: &Head<T>,
    shared: ArrayView2<T>,
    private: ArrayView2<T>,
) -> Result<Array2<T>> {
    let x = concat_features(shared, private)?;
    let (logits, _) = classifier.forward(x.view())?;
    Ok(log_softmax(logits.view()))
}

/// Multinomial mode: `batch × domains` log-probabilities.
/// Critic mode: `batch × 1` unbounded scores.
pub fn forward_discriminator<T: Real>(
    discriminator: &Head<T>,
    features: ArrayView2<T>,
    mode: DiscriminatorMode,
) -> Result<Array2<T>> {
    let (scores, _) = discriminator.forward(features)?;
    match mode {
        DiscriminatorMode::Multinomial => {
            ensure!(scores.ncols() >= 2, "multinomial discriminator needs at least 2 outputs");
            Ok(log_softmax(scores.view()))
        }
        DiscriminatorMode::Critic => {
            ensure!(scores.ncols() == 1, "critic must have exactly one output");
            Ok(scores)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn head(input: usize, output: usize, seed: u64) -> Head<f64> {
        Head::init(
            HeadConfig {
                input_dim: input,
                hidden_dim: 8,
                output_dim: output,
            },
            &mut crate::seeded(seed),
        )
        .unwrap()
    }

    #[test]
    fn classifier_rows_normalize() {
        let c = head(6, 2, 1);
        let lp = forward_classifier(&c, random(10, 4, 2).view(), random(10, 2, 3).view()).unwrap();
        assert_eq!(lp.dim(), (10, 2));
        for row in lp.rows() {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut c = head(6, 2, 1);
        let zeroed = c.params().zeros_like();
        *c.params_mut() = zeroed;
        let lp = forward_classifier(&c, random(3, 4, 2).view(), random(3, 2, 3).view()).unwrap();
        for v in lp.iter() {
            assert!((v - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn concatenation_order_matters() {
        let c = head(8, 2, 4);
        let a = random(5, 4, 5);
        let b = random(5, 4, 6);
        let ab = forward_classifier(&c, a.view(), b.view()).unwrap();
        let ba = forward_classifier(&c, b.view(), a.view()).unwrap();
        assert!(ab.iter().zip(ba.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn mismatched_rows_or_width_rejected() {
        let c = head(6, 2, 1);
        assert!(forward_classifier(&c, random(3, 4, 1).view(), random(2, 2, 1).view()).is_err());
        assert!(forward_classifier(&c, random(3, 4, 1).view(), random(3, 3, 1).view()).is_err());
    }

    #[test]
    fn discriminator_modes() {
        let d = head(4, 5, 7);
        let lp = forward_discriminator(&d, random(6, 4, 8).view(), DiscriminatorMode::Multinomial).unwrap();
        assert_eq!(lp.ncols(), 5);
        for row in lp.rows() {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(forward_discriminator(&d, random(6, 4, 8).view(), DiscriminatorMode::Critic).is_err());
        let critic = head(4, 1, 9);
        let s = forward_discriminator(&critic, (random(6, 4, 8) * 100.0).view(), DiscriminatorMode::Critic).unwrap();
        assert_eq!(s.ncols(), 1);
        assert!(s.iter().any(|v| v.abs() > 1.0), "critic scores are not squashed");
        assert!(forward_discriminator(&critic, random(6, 3, 8).view(), DiscriminatorMode::Critic).is_err());
    }
}
