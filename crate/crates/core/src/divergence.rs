//! Proxy A-distance between domains and the source-selection rules built on it.
//!
//! A linear bag-of-words SVM (hinge loss, L2 regularization) is trained to
//! tell two domains apart; its held-out error `ε` gives `2(1 − 2ε)`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, featurize_bow, Content, CorpusMode, DomainDataset, SparseVector};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyClassifierConfig {
    /// Hinge-loss weight `C` of the primal `½‖w‖² + C Σ hinge`.
    pub c: f64,
    /// Maximum passes of the dual coordinate-descent solver.
    pub max_epochs: usize,
    /// Fraction of each (balanced) domain held out for the error estimate.
    pub heldout_fraction: f64,
    /// Bag-of-words width used when the inputs are raw text.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for ProxyClassifierConfig {
    fn default() -> Self {
        ProxyClassifierConfig {
            c: 1.0,
            max_epochs: 50,
            heldout_fraction: 0.2,
            feature_dim: 5000,
            seed: 0,
        }
    }
}

impl ProxyClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.c > 0.0, "regularization strength must be positive");
        ensure!(self.max_epochs >= 1, "max_epochs must be ≥ 1");
        ensure!(
            self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0,
            "heldout_fraction must lie in (0, 1)"
        );
        ensure!(self.feature_dim >= 1, "feature_dim must be positive");
        Ok(())
    }
}

const MIN_PER_SIDE: usize = 10;
const STOP_TOLERANCE: f64 = 0.1;

/// Linear SVM fitted by dual coordinate descent on the L2-regularized hinge
/// loss. The bias is learned through a constant feature.
struct LinearSvm {
    w: Vec<f64>,
    bias: f64,
}

impl LinearSvm {
    fn fit(xs: &[&SparseVector], ys: &[f64], c: f64, max_epochs: usize, rng: &mut crate::Rng) -> Self {
        let dim = xs.first().map_or(0, |x| x.dim());
        let mut w = vec![0.0; dim];
        let mut bias = 0.0;
        let mut alpha = vec![0.0; xs.len()];
        let q: Vec<f64> = xs
            .iter()
            .map(|x| 1.0 + x.entries().iter().map(|&(_, v)| (v as f64).powi(2)).sum::<f64>())
            .collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..max_epochs {
            order.shuffle(rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let margin = bias + xs[i].entries().iter().map(|&(j, v)| w[j as usize] * v as f64).sum::<f64>();
                let g = ys[i] * margin - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / q[i]).clamp(0.0, c);
                    let delta = (alpha[i] - old) * ys[i];
                    for &(j, v) in xs[i].entries() {
                        w[j as usize] += delta * v as f64;
                    }
                    bias += delta;
                }
            }
            if pg_max - pg_min < STOP_TOLERANCE {
                break;
            }
        }
        LinearSvm { w, bias }
    }

    fn predict(&self, x: &SparseVector) -> f64 {
        let s = self.bias + x.entries().iter().map(|&(j, v)| self.w[j as usize] * v as f64).sum::<f64>();
        if s >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

fn features(ds: &DomainDataset) -> Result<Vec<&SparseVector>> {
    ds.examples()
        .iter()
        .map(|e| match &e.content {
            Content::Features(v) => Ok(v),
            _ => Err(Error::Validation(format!("dataset '{}' is not featurized", ds.name()))),
        })
        .collect()
}

/// Held-out error of a linear SVM separating `a` (one class) from `b` (the
/// other). Sentiment labels are ignored. The larger domain is subsampled to
/// the smaller one's size. Raw-text inputs are featurized with a vocabulary
/// built from the pair.
pub fn estimate_proxy_error(a: &DomainDataset, b: &DomainDataset, config: &ProxyClassifierConfig) -> Result<f64> {
    config.validate()?;
    if a.mode() == CorpusMode::Text && b.mode() == CorpusMode::Text {
        let vocab = build_vocabulary(&[a, b], config.feature_dim + 2)?;
        let dim = config.feature_dim.min(vocab.size() - 2).max(1);
        let fa = featurize_bow(a, &vocab, dim)?;
        let fb = featurize_bow(b, &vocab, dim)?;
        return estimate_proxy_error(&fa, &fb, config);
    }
    let xa = features(a)?;
    let xb = features(b)?;
    ensure!(
        xa[0].dim() == xb[0].dim(),
        "feature dimensions differ ({} vs {})",
        xa[0].dim(),
        xb[0].dim()
    );
    let n = xa.len().min(xb.len());
    let n_test = (n as f64 * config.heldout_fraction).round() as usize;
    let n_train = n - n_test;
    ensure!(
        n_test >= MIN_PER_SIDE && n_train >= MIN_PER_SIDE,
        "too few examples for a held-out split: {n} per domain gives {n_train} train / {n_test} held-out \
         (need ≥ {MIN_PER_SIDE} each)"
    );

    let mut rng = crate::seeded(config.seed);
    let mut pick = |xs: &[&'_ SparseVector]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    };
    let ia = pick(&xa);
    let ib = pick(&xb);

    let mut train_x = Vec::with_capacity(2 * n_train);
    let mut train_y = Vec::with_capacity(2 * n_train);
    for k in 0..n_train {
        train_x.push(xa[ia[k]]);
        train_y.push(1.0);
        train_x.push(xb[ib[k]]);
        train_y.push(-1.0);
    }
    let svm = LinearSvm::fit(&train_x, &train_y, config.c, config.max_epochs, &mut rng);
    let wrong = (n_train..n)
        .map(|k| usize::from(svm.predict(xa[ia[k]]) < 0.0) + usize::from(svm.predict(xb[ib[k]]) > 0.0))
        .sum::<usize>();
    Ok(wrong as f64 / (2 * n_test) as f64)
}

/// `2(1 − 2ε)`.
pub fn a_distance(error: f64) -> Result<f64> {
    ensure!((0.0..=1.0).contains(&error), "error rate {error} outside [0, 1]");
    Ok(2.0 * (1.0 - 2.0 * error))
}

/// Pairwise proxy A-distances. Each unordered pair is estimated once, so the
/// matrix is exactly symmetric; the diagonal is not estimated and holds 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    /// Distances clamped to `[0, 2]`.
    pub distances: Vec<Vec<f64>>,
    /// Unclamped `2(1 − 2ε)`, which may dip below 0.
    pub raw: Vec<Vec<f64>>,
    /// Held-out proxy errors.
    pub errors: Vec<Vec<f64>>,
}

/// Sort direction for [`select_top_k`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Closest first.
    Ascending,
    /// Farthest first.
    Descending,
}

impl DistanceMatrix {
    /// Builds a matrix from known distances (clamped copy; errors back-solved).
    #[allow(clippy::needless_range_loop)]
    pub fn from_distances(names: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self> {
        let n = names.len();
        ensure!(n >= 2, "a distance matrix needs at least two domains");
        ensure!(raw.len() == n && raw.iter().all(|r| r.len() == n), "matrix must be {n}×{n}");
        for i in 0..n {
            for j in 0..n {
                ensure!(raw[i][j] == raw[j][i], "matrix is not symmetric at ({i}, {j})");
            }
        }
        let distances = raw.iter().map(|r| r.iter().map(|d| d.clamp(0.0, 2.0)).collect()).collect();
        let errors = raw
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(j, d)| if i == j { 0.0 } else { (2.0 - d) / 4.0 }).collect())
            .collect();
        Ok(DistanceMatrix {
            names,
            distances,
            raw,
            errors,
        })
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Validation(format!("domain '{name}' is not in the distance matrix")))
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.distances[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn num_pairs(&self) -> usize {
        self.names.len() * (self.names.len() - 1) / 2
    }

    /// Square CSV with domain names as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.distances) {
            out.push_str(n);
            for d in row {
                let _ = write!(out, ",{d:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Long-format CSV, one line per unordered pair.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("domain_a,domain_b,distance,raw_distance,error\n");
        for i in 0..self.names.len() {
            for j in i + 1..self.names.len() {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6}",
                    self.names[i], self.names[j], self.distances[i][j], self.raw[i][j], self.errors[i][j]
                );
            }
        }
        out
    }

    /// Candidate sources of `target` with their distances, in matrix order.
    fn sources_of(&self, target: &str) -> Result<Vec<(usize, f64)>> {
        let t = self.index_of(target)?;
        let out: Vec<(usize, f64)> = (0..self.names.len())
            .filter(|&j| j != t)
            .map(|j| (j, self.distances[t][j]))
            .collect();
        ensure!(!out.is_empty(), "no source domains besides '{target}'");
        Ok(out)
    }
}

fn pair_seed(seed: u64, i: usize, j: usize) -> u64 {
    seed.wrapping_add(((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Estimates every unordered pair (in parallel); deterministic under the seed.
pub fn distance_matrix(datasets: &[&DomainDataset], config: &ProxyClassifierConfig) -> Result<DistanceMatrix> {
    config.validate()?;
    let n = datasets.len();
    ensure!(n >= 2, "need at least two datasets");
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let estimates: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let cfg = ProxyClassifierConfig {
                seed: pair_seed(config.seed, i, j),
                ..config.clone()
            };
            estimate_proxy_error(datasets[i], datasets[j], &cfg)
        })
        .collect::<Result<_>>()?;
    let mut errors = vec![vec![0.0; n]; n];
    let mut raw = vec![vec![0.0; n]; n];
    for (&(i, j), &e) in pairs.iter().zip(&estimates) {
        errors[i][j] = e;
        errors[j][i] = e;
        raw[i][j] = a_distance(e)?;
        raw[j][i] = raw[i][j];
    }
    let distances = raw.iter().map(|r| r.iter().map(|d| d.clamp(0.0, 2.0)).collect()).collect();
    Ok(DistanceMatrix {
        names: datasets.iter().map(|d| d.name().to_string()).collect(),
        distances,
        raw,
        errors,
    })
}

/// Source closest to `target`; ties go to the earlier domain.
pub fn select_closest(matrix: &DistanceMatrix, target: &str) -> Result<String> {
    Ok(select_top_k(matrix, target, 1, Order::Ascending)?.remove(0))
}

/// The `k` sources nearest to (ascending) or farthest from (descending)
/// `target`, sorted accordingly; ties go to the earlier domain either way.
pub fn select_top_k(matrix: &DistanceMatrix, target: &str, k: usize, order: Order) -> Result<Vec<String>> {
    let mut sources = matrix.sources_of(target)?;
    ensure!(k >= 1, "k must be ≥ 1");
    ensure!(k <= sources.len(), "k = {k} exceeds the {} available sources", sources.len());
    sources.sort_by(|a, b| {
        let by_distance = match order {
            Order::Ascending => a.1.total_cmp(&b.1),
            Order::Descending => b.1.total_cmp(&a.1),
        };
        by_distance.then(a.0.cmp(&b.0))
    });
    Ok(sources.into_iter().take(k).map(|(j, _)| matrix.names[j].clone()).collect())
}
