//! Feature extractors: the shared `F_s`, the per-domain private extractors
//! and the target private extractor all use this type.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ops::{affine, column_sums, real, relu_backward, relu_inplace};
use super::{ParameterSet, Real};
use crate::corpus::{Content, CorpusMode, Example, PAD};
use crate::error::{ensure, Error, Result};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    /// Two affine+ReLU layers over a sparse feature vector.
    Feedforward {
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
    },
    /// Embedding lookup, 1-d convolutions with ReLU, max-over-time pooling.
    /// The `output_dim` channels are split across kernel widths.
    Convolutional {
        vocab_size: usize,
        embedding_dim: usize,
        kernel_widths: Vec<usize>,
        output_dim: usize,
    },
}

impl EncoderConfig {
    pub fn feedforward(input_dim: usize, output_dim: usize) -> Self {
        EncoderConfig::Feedforward {
            input_dim,
            hidden_dim: 2 * output_dim,
            output_dim,
        }
    }

    pub fn convolutional(vocab_size: usize, output_dim: usize) -> Self {
        EncoderConfig::Convolutional {
            vocab_size,
            embedding_dim: 100,
            kernel_widths: vec![3, 4, 5],
            output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::Feedforward { output_dim, .. }
            | EncoderConfig::Convolutional { output_dim, .. } => *output_dim,
        }
    }

    /// Corpus mode this extractor consumes.
    pub fn input_mode(&self) -> CorpusMode {
        match self {
            EncoderConfig::Feedforward { .. } => CorpusMode::Features,
            EncoderConfig::Convolutional { .. } => CorpusMode::Tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Feedforward {
                input_dim,
                hidden_dim,
                output_dim,
            } => ensure!(
                *input_dim > 0 && *hidden_dim > 0 && *output_dim > 0,
                "feedforward dimensions must be positive: {self:?}"
            ),
            EncoderConfig::Convolutional {
                vocab_size,
                embedding_dim,
                kernel_widths,
                output_dim,
            } => {
                ensure!(*vocab_size >= 2, "convolutional vocab_size must cover PAD and UNK");
                ensure!(*embedding_dim > 0, "embedding_dim must be positive");
                ensure!(
                    !kernel_widths.is_empty() && kernel_widths.iter().all(|&w| w > 0),
                    "kernel widths must be positive and non-empty"
                );
                ensure!(
                    *output_dim >= kernel_widths.len(),
                    "output_dim {output_dim} cannot cover {} kernel widths",
                    kernel_widths.len()
                );
            }
        }
        Ok(())
    }

    /// Channels per kernel width; the remainder goes to the first widths.
    pub fn channels(&self) -> Vec<usize> {
        match self {
            EncoderConfig::Feedforward { .. } => Vec::new(),
            EncoderConfig::Convolutional {
                kernel_widths,
                output_dim,
                ..
            } => {
                let n = kernel_widths.len();
                (0..n)
                    .map(|i| output_dim / n + usize::from(i < output_dim % n))
                    .collect()
            }
        }
    }
}

fn uniform<T: Real>(rng: &mut Rng, shape: &[usize], bound: f64) -> ArrayD<T> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| real(rng.random_range(-bound..=bound)))
}

/// Weight `[fan_in, fan_out]` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_weight<T: Real>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> ArrayD<T> {
    uniform(rng, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
}

pub(crate) fn zeros<T: Real>(n: usize) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(&[n]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T: Real = f32> {
    config: EncoderConfig,
    params: ParameterSet<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ExtractorCache<T: Real> {
    inner: CacheKind<T>,
}

enum CacheKind<T: Real> {
    Feedforward {
        inputs: Vec<Vec<(usize, T)>>,
        hidden: Array2<T>,
        output: Array2<T>,
    },
    Convolutional {
        docs: Vec<Vec<u32>>,
        /// Per document, per width: (argmax window, pre-activation max) per channel.
        pooled: Vec<Vec<Vec<(usize, T)>>>,
    },
}

impl<T: Real> Extractor<T> {
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        match &config {
            EncoderConfig::Feedforward {
                input_dim,
                hidden_dim,
                output_dim,
            } => {
                params.push("w1", init_weight(rng, *input_dim, *hidden_dim));
                params.push("b1", zeros(*hidden_dim));
                params.push("w2", init_weight(rng, *hidden_dim, *output_dim));
                params.push("b2", zeros(*output_dim));
            }
            EncoderConfig::Convolutional {
                vocab_size,
                embedding_dim,
                kernel_widths,
                ..
            } => {
                let bound = 1.0 / (*embedding_dim as f64).sqrt();
                params.push("embedding", uniform(rng, &[*vocab_size, *embedding_dim], bound));
                for (w, ch) in kernel_widths.iter().zip(config.channels()) {
                    params.push(format!("conv{w}.w"), init_weight(rng, w * embedding_dim, ch));
                    params.push(format!("conv{w}.b"), zeros(ch));
                }
            }
        }
        Ok(Extractor { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        let expected = Self::init(config.clone(), &mut crate::seeded(0))?;
        ensure!(
            expected.params.same_shape(&params),
            "parameter layout does not match encoder config {config:?}"
        );
        Ok(Extractor { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn cast<U: Real>(&self) -> Extractor<U> {
        Extractor {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Overwrites embedding rows from `token v1 v2 ...` lines. Returns the
    /// number of rows replaced.
    pub fn load_embeddings(&mut self, text: &str, vocab: &crate::corpus::Vocabulary) -> Result<usize> {
        let EncoderConfig::Convolutional { embedding_dim, .. } = self.config else {
            return Err(Error::Validation("only convolutional extractors have embeddings".into()));
        };
        let mut table = self.params.matrix_mut(0);
        let mut replaced = 0;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Validation(format!("embedding line {}: bad number", n + 1)))?;
            if values.len() != embedding_dim {
                // Header lines ("count dim") and mismatched rows are skipped.
                continue;
            }
            let id = vocab.index_of(token);
            if id <= crate::corpus::UNK || id as usize >= table.nrows() {
                continue;
            }
            for (dst, v) in table.row_mut(id as usize).iter_mut().zip(values) {
                *dst = real(v);
            }
            replaced += 1;
        }
        Ok(replaced)
    }

    /// Encodes a batch into a `batch × output_dim` matrix.
    pub fn forward(&self, batch: &[&Example]) -> Result<(Array2<T>, ExtractorCache<T>)> {
        ensure!(!batch.is_empty(), "empty batch");
        match &self.config {
            EncoderConfig::Feedforward { input_dim, .. } => self.forward_ff(batch, *input_dim),
            EncoderConfig::Convolutional {
                vocab_size,
                kernel_widths,
                ..
            } => self.forward_conv(batch, *vocab_size, kernel_widths),
        }
    }

    fn forward_ff(&self, batch: &[&Example], input_dim: usize) -> Result<(Array2<T>, ExtractorCache<T>)> {
        let w1 = self.params.matrix(0);
        let b1 = self.params.vector(1);
        let mut inputs = Vec::with_capacity(batch.len());
        let mut hidden = Array2::zeros((batch.len(), w1.ncols()));
        for (r, ex) in batch.iter().enumerate() {
            let Content::Features(x) = &ex.content else {
                return Err(Error::Validation(format!(
                    "feedforward extractor needs feature vectors, got {:?}",
                    ex.content.mode()
                )));
            };
            ensure!(
                x.dim() == input_dim,
                "feature dimension {} does not match extractor input {input_dim}",
                x.dim()
            );
            let mut row = hidden.row_mut(r);
            row.assign(&b1);
            let sparse: Vec<(usize, T)> = x
                .entries()
                .iter()
                .map(|&(i, v)| (i as usize, real(v as f64)))
                .collect();
            for &(i, v) in &sparse {
                row.scaled_add(v, &w1.row(i));
            }
            inputs.push(sparse);
        }
        relu_inplace(&mut hidden);
        let mut output = affine(hidden.view(), self.params.matrix(2), self.params.vector(3));
        relu_inplace(&mut output);
        Ok((
            output.clone(),
            ExtractorCache {
                inner: CacheKind::Feedforward {
                    inputs,
                    hidden,
                    output,
                },
            },
        ))
    }

    fn forward_conv(
        &self,
        batch: &[&Example],
        vocab_size: usize,
        widths: &[usize],
    ) -> Result<(Array2<T>, ExtractorCache<T>)> {
        let max_w = widths.iter().copied().max().unwrap_or(1);
        let emb = self.params.matrix(0);
        let mut out = Array2::zeros((batch.len(), self.output_dim()));
        let mut docs = Vec::with_capacity(batch.len());
        let mut pooled = Vec::with_capacity(batch.len());
        for (r, ex) in batch.iter().enumerate() {
            let Content::Tokens(toks) = &ex.content else {
                return Err(Error::Validation(format!(
                    "convolutional extractor needs token sequences, got {:?}",
                    ex.content.mode()
                )));
            };
            ensure!(
                toks.iter().all(|&t| (t as usize) < vocab_size),
                "token index out of range for vocabulary of {vocab_size}"
            );
            let mut doc = toks.clone();
            if doc.len() < max_w {
                doc.resize(max_w, PAD);
            }
            let mut per_width = Vec::with_capacity(widths.len());
            let mut col = 0;
            for (k, &w) in widths.iter().enumerate() {
                let weight = self.params.matrix(1 + 2 * k);
                let bias = self.params.vector(2 + 2 * k);
                let windows = window_matrix(&emb, &doc, w);
                let z = affine(windows.view(), weight, bias);
                let mut best: Vec<(usize, T)> = vec![(0, T::neg_infinity()); z.ncols()];
                for (t, zrow) in z.rows().into_iter().enumerate() {
                    for (c, &v) in zrow.iter().enumerate() {
                        if v > best[c].1 {
                            best[c] = (t, v);
                        }
                    }
                }
                for (c, &(_, v)) in best.iter().enumerate() {
                    out[[r, col + c]] = v.max(T::zero());
                }
                col += z.ncols();
                per_width.push(best);
            }
            docs.push(doc);
            pooled.push(per_width);
        }
        Ok((
            out,
            ExtractorCache {
                inner: CacheKind::Convolutional { docs, pooled },
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d output` into `grads`.
    pub fn backward(&self, cache: &ExtractorCache<T>, grad_out: &Array2<T>, grads: &mut ParameterSet<T>) {
        match &cache.inner {
            CacheKind::Feedforward {
                inputs,
                hidden,
                output,
            } => {
                let mut d_out = grad_out.clone();
                relu_backward(&mut d_out, output);
                grads.matrix_mut(2).scaled_add(T::one(), &hidden.t().dot(&d_out));
                grads.vector_mut(3).scaled_add(T::one(), &column_sums(&d_out));
                let mut d_hidden = d_out.dot(&self.params.matrix(2).t());
                relu_backward(&mut d_hidden, hidden);
                grads.vector_mut(1).scaled_add(T::one(), &column_sums(&d_hidden));
                let mut gw1 = grads.matrix_mut(0);
                for (r, sparse) in inputs.iter().enumerate() {
                    let dh = d_hidden.row(r);
                    for &(i, v) in sparse {
                        gw1.row_mut(i).scaled_add(v, &dh);
                    }
                }
            }
            CacheKind::Convolutional { docs, pooled } => {
                let EncoderConfig::Convolutional {
                    embedding_dim,
                    kernel_widths,
                    ..
                } = &self.config
                else {
                    unreachable!("cache kind matches config")
                };
                let e = *embedding_dim;
                let emb = self.params.matrix(0);
                for (r, (doc, per_width)) in docs.iter().zip(pooled).enumerate() {
                    let mut col = 0;
                    for (k, (&w, best)) in kernel_widths.iter().zip(per_width).enumerate() {
                        let weight = self.params.matrix(1 + 2 * k);
                        let mut d_emb_rows: Vec<(u32, Array1<T>)> = Vec::new();
                        for (c, &(t, z)) in best.iter().enumerate() {
                            let g = grad_out[[r, col + c]];
                            if z <= T::zero() || g == T::zero() {
                                continue;
                            }
                            {
                                let mut gw = grads.matrix_mut(1 + 2 * k);
                                for j in 0..w {
                                    let er = emb.row(doc[t + j] as usize);
                                    for q in 0..e {
                                        gw[[j * e + q, c]] += g * er[q];
                                    }
                                }
                            }
                            grads.vector_mut(2 + 2 * k)[c] += g;
                            for j in 0..w {
                                let seg = weight.slice(ndarray::s![j * e..(j + 1) * e, c]);
                                d_emb_rows.push((doc[t + j], seg.mapv(|x| x * g)));
                            }
                        }
                        let mut gemb = grads.matrix_mut(0);
                        for (tok, d) in d_emb_rows {
                            gemb.row_mut(tok as usize).scaled_add(T::one(), &d);
                        }
                        col += best.len();
                    }
                }
            }
        }
    }
}

/// Rows are concatenated embeddings of each length-`w` window.
fn window_matrix<T: Real>(emb: &ndarray::ArrayView2<T>, doc: &[u32], w: usize) -> Array2<T> {
    let e = emb.ncols();
    let n = doc.len() + 1 - w;
    let mut x = Array2::zeros((n, w * e));
    for t in 0..n {
        for j in 0..w {
            x.slice_mut(ndarray::s![t, j * e..(j + 1) * e])
                .assign(&emb.row(doc[t + j] as usize));
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SparseVector;

    fn features(n: usize, dim: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let v = SparseVector::new(dim, vec![((i % dim) as u32, 1.0), (0, 2.0)]).unwrap();
                Example::new(Content::Features(v), None)
            })
            .collect()
    }

    #[test]
    fn feedforward_output_shape() {
        let ext: Extractor<f32> =
            Extractor::init(EncoderConfig::feedforward(50, 128), &mut crate::seeded(1)).unwrap();
        let batch = features(16, 50);
        let refs: Vec<&Example> = batch.iter().collect();
        let (out, _) = ext.forward(&refs).unwrap();
        assert_eq!(out.dim(), (16, 128));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let ext: Extractor<f32> =
            Extractor::init(EncoderConfig::feedforward(10, 8), &mut crate::seeded(2)).unwrap();
        let ex = Example::new(Content::Features(SparseVector::zeros(10)), None);
        let (out, _) = ext.forward(&[&ex]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_document_is_padded() {
        let cfg = EncoderConfig::Convolutional {
            vocab_size: 20,
            embedding_dim: 6,
            kernel_widths: vec![3, 4, 5],
            output_dim: 9,
        };
        let ext: Extractor<f32> = Extractor::init(cfg, &mut crate::seeded(3)).unwrap();
        let ex = Example::new(Content::Tokens(vec![7]), None);
        let (out, _) = ext.forward(&[&ex]).unwrap();
        assert_eq!(out.dim(), (1, 9));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn channels_split_across_widths() {
        assert_eq!(EncoderConfig::convolutional(100, 128).channels(), vec![43, 43, 42]);
        assert_eq!(EncoderConfig::convolutional(100, 64).channels(), vec![22, 21, 21]);
    }

    #[test]
    fn mode_mismatch_and_empty_batch_rejected() {
        let ext: Extractor<f32> =
            Extractor::init(EncoderConfig::feedforward(10, 4), &mut crate::seeded(4)).unwrap();
        let tok = Example::new(Content::Tokens(vec![2, 3]), None);
        assert!(ext.forward(&[&tok]).is_err());
        assert!(ext.forward(&[]).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = EncoderConfig::feedforward(30, 16);
        let a: Extractor<f32> = Extractor::init(cfg.clone(), &mut crate::seeded(1)).unwrap();
        let b: Extractor<f32> = Extractor::init(cfg, &mut crate::seeded(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embeddings_loaded_from_text() {
        let vocab = crate::corpus::Vocabulary::from_tokens(["good", "bad"]).unwrap();
        let cfg = EncoderConfig::Convolutional {
            vocab_size: vocab.size(),
            embedding_dim: 2,
            kernel_widths: vec![1],
            output_dim: 2,
        };
        let mut ext: Extractor<f32> = Extractor::init(cfg, &mut crate::seeded(5)).unwrap();
        let n = ext.load_embeddings("2 2\ngood 0.5 -0.5\nmissing 1 1\n", &vocab).unwrap();
        assert_eq!(n, 1);
        let row: Vec<f32> = ext.params().matrix(0).row(2).to_vec();
        assert_eq!(row, vec![0.5, -0.5]);
    }
}
