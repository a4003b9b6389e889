//! Scalar losses with their gradients with respect to raw head outputs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ops::{log_softmax, real};
use super::Real;
use crate::error::{ensure, Result};

/// Loss used by a discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    /// Negative log-likelihood of the true domain label.
    #[default]
    Nll,
    /// Wasserstein critic objective; weights are clipped after each update.
    Wasserstein,
}

impl std::str::FromStr for AdversarialLoss {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(AdversarialLoss::Nll),
            "wasserstein" => Ok(AdversarialLoss::Wasserstein),
            other => Err(crate::Error::Config(format!(
                "unknown adversarial loss '{other}' (expected nll or wasserstein)"
            ))),
        }
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn nll<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    ensure!(logits.nrows() == labels.len(), "label count does not match batch");
    ensure!(!labels.is_empty(), "empty batch");
    let k = logits.ncols();
    ensure!(labels.iter().all(|&y| y < k), "label out of range for {k} classes");
    let logp = log_softmax(logits.view());
    let n: T = real(labels.len() as f64);
    let mut loss = T::zero();
    let mut grad = logp.mapv(|v| v.exp());
    for (r, &y) in labels.iter().enumerate() {
        loss -= logp[[r, y]];
        grad[[r, y]] -= T::one();
    }
    grad.mapv_inplace(|g| g / n);
    Ok((loss / n, grad))
}

/// One-vs-rest Wasserstein objective over `K` domain scores:
/// `1/K Σ_j [mean_{x∉j} s_j(x) − mean_{x∈j} s_j(x)]`, skipping domains
/// without members on both sides of the split.
pub fn domain_critic<T: Real>(scores: &Array2<T>, domains: &[usize]) -> Result<(T, Array2<T>)> {
    ensure!(scores.nrows() == domains.len(), "label count does not match batch");
    let k = scores.ncols();
    ensure!(domains.iter().all(|&d| d < k), "domain label out of range for {k} outputs");
    let n = domains.len();
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut loss = T::zero();
    let kk: T = real(k as f64);
    for j in 0..k {
        let inside = domains.iter().filter(|&&d| d == j).count();
        let outside = n - inside;
        if inside == 0 || outside == 0 {
            continue;
        }
        let w_in: T = real(1.0 / inside as f64);
        let w_out: T = real(1.0 / outside as f64);
        for (r, &d) in domains.iter().enumerate() {
            let s = scores[[r, j]];
            if d == j {
                loss -= s * w_in / kk;
                grad[[r, j]] = -w_in / kk;
            } else {
                loss += s * w_out / kk;
                grad[[r, j]] = w_out / kk;
            }
        }
    }
    Ok((loss, grad))
}

/// `mean(a) − mean(b)` over single-column critic scores.
pub fn critic_gap<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Result<(T, Array2<T>, Array2<T>)> {
    ensure!(a.ncols() == 1 && b.ncols() == 1, "critic scores must be a single column");
    ensure!(a.nrows() > 0 && b.nrows() > 0, "empty batch");
    let na: T = real(a.nrows() as f64);
    let nb: T = real(b.nrows() as f64);
    let loss = a.sum() / na - b.sum() / nb;
    Ok((
        loss,
        Array2::from_elem(a.raw_dim(), T::one() / na),
        Array2::from_elem(b.raw_dim(), -T::one() / nb),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nll_uniform_is_log_k() {
        let logits = Array2::<f64>::zeros((4, 3));
        let (l, g) = nll(&logits, &[0, 1, 2, 0]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn nll_rejects_bad_labels() {
        let logits = Array2::<f64>::zeros((2, 2));
        assert!(nll(&logits, &[0]).is_err());
        assert!(nll(&logits, &[0, 2]).is_err());
    }

    #[test]
    fn critic_gap_value() {
        let a = array![[1.0f64], [3.0]];
        let b = array![[0.5f64]];
        let (l, ga, gb) = critic_gap(&a, &b).unwrap();
        assert_eq!(l, 1.5);
        assert_eq!(ga, array![[0.5], [0.5]]);
        assert_eq!(gb, array![[-1.0]]);
    }

    #[test]
    fn domain_critic_rewards_own_domain_scores() {
        // Domain 0 scores high on its own members: loss should be negative.
        let s = array![[2.0f64, 0.0], [2.0, 0.0], [0.0, 2.0]];
        let (l, _) = domain_critic(&s, &[0, 0, 1]).unwrap();
        assert!(l < 0.0);
    }

    #[test]
    fn adversarial_loss_parses() {
        assert_eq!("nll".parse::<AdversarialLoss>().unwrap(), AdversarialLoss::Nll);
        assert_eq!(
            "wasserstein".parse::<AdversarialLoss>().unwrap(),
            AdversarialLoss::Wasserstein
        );
        assert!("l2".parse::<AdversarialLoss>().is_err());
    }
}
