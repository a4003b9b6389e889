//! Multi-domain sentiment corpora: loading, vocabulary, bag-of-words
//! featurization, splitting and a synthetic suite generator.

mod split;
mod synthetic;
mod tsv;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use split::{split_dataset, SplitFractions};
pub use synthetic::{generate_synthetic_suite, SyntheticSuiteSpec};
pub use tsv::{
    load_labeled_tsv, load_sparse_features, write_labeled_tsv, write_sparse_features,
};
pub use vocab::{build_vocabulary, encode_tokens, featurize_bow, tokenize, Vocabulary, PAD, UNK};

/// Sparse real vector with sorted, unique indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f32)>,
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs; duplicate indices are summed.
    pub fn new(dim: usize, mut entries: Vec<(u32, f32)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(u32, f32)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            ensure!((i as usize) < dim, "sparse index {i} out of range for dimension {dim}");
            ensure!(v.is_finite(), "non-finite sparse value at index {i}");
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        Ok(SparseVector { dim, entries: merged })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: u32) -> f32 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// What an example carries: raw text, vocabulary indices or a feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Content {
    Text(String),
    Tokens(Vec<u32>),
    Features(SparseVector),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusMode {
    Text,
    Tokens,
    Features,
}

impl Content {
    pub fn mode(&self) -> CorpusMode {
        match self {
            Content::Text(_) => CorpusMode::Text,
            Content::Tokens(_) => CorpusMode::Tokens,
            Content::Features(_) => CorpusMode::Features,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub content: Content,
    /// Binary sentiment, `1` positive. `None` for unlabeled data.
    pub label: Option<u8>,
    pub domain_id: usize,
}

impl Example {
    pub fn new(content: Content, label: Option<u8>) -> Self {
        Example {
            content,
            label,
            domain_id: 0,
        }
    }
}

/// A named domain's examples. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    name: String,
    examples: Vec<Example>,
    labeled: bool,
}

impl DomainDataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>, labeled: bool) -> Result<Self> {
        let name = name.into();
        ensure!(!examples.is_empty(), "dataset '{name}' is empty");
        let mode = examples[0].content.mode();
        for (i, ex) in examples.iter().enumerate() {
            ensure!(
                ex.content.mode() == mode,
                "dataset '{name}': example {i} is {:?} but the dataset is {mode:?}",
                ex.content.mode()
            );
            match (labeled, ex.label) {
                (true, Some(y)) => ensure!(y <= 1, "dataset '{name}': example {i} has label {y}"),
                (true, None) => {
                    return Err(crate::Error::Validation(format!(
                        "dataset '{name}' is labeled but example {i} has no label"
                    )))
                }
                (false, Some(_)) => {
                    return Err(crate::Error::Validation(format!(
                        "dataset '{name}' is unlabeled but example {i} carries a label"
                    )))
                }
                (false, None) => {}
            }
        }
        Ok(DomainDataset {
            name,
            examples,
            labeled,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn mode(&self) -> CorpusMode {
        self.examples[0].content.mode()
    }

    /// Labels in example order, or `None` for an unlabeled dataset.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.labeled
            .then(|| self.examples.iter().map(|e| e.label.unwrap_or(0)).collect())
    }

    /// Copy with every sentiment label removed.
    pub fn unlabeled(&self) -> DomainDataset {
        DomainDataset {
            name: self.name.clone(),
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    label: None,
                    ..e.clone()
                })
                .collect(),
            labeled: false,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Stamps every example with the given domain index.
    pub fn with_domain_id(mut self, domain_id: usize) -> Self {
        for ex in &mut self.examples {
            ex.domain_id = domain_id;
        }
        self
    }

    pub(crate) fn map_content<F>(&self, mut f: F) -> Result<DomainDataset>
    where
        F: FnMut(&Content) -> Result<Content>,
    {
        let examples = self
            .examples
            .iter()
            .map(|e| {
                Ok(Example {
                    content: f(&e.content)?,
                    label: e.label,
                    domain_id: e.domain_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DomainDataset::new(self.name.clone(), examples, self.labeled)
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> Result<DomainDataset> {
        DomainDataset::new(
            self.name.clone(),
            indices.iter().map(|&i| self.examples[i].clone()).collect(),
            self.labeled,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_vector_merges_and_sorts() {
        let v = SparseVector::new(5, vec![(3, 1.0), (1, 2.0), (3, 1.0)]).unwrap();
        assert_eq!(v.entries(), &[(1, 2.0), (3, 2.0)]);
        assert_eq!(v.get(3), 2.0);
        assert_eq!(v.get(0), 0.0);
        assert!(SparseVector::new(2, vec![(2, 1.0)]).is_err());
    }

    #[test]
    fn dataset_label_invariants() {
        let ex = |l| Example::new(Content::Text("a".into()), l);
        assert!(DomainDataset::new("d", vec![ex(Some(1)), ex(None)], true).is_err());
        assert!(DomainDataset::new("d", vec![ex(Some(1))], false).is_err());
        assert!(DomainDataset::new("d", vec![ex(Some(2))], true).is_err());
        assert!(DomainDataset::new("d", vec![], true).is_err());
        let d = DomainDataset::new("d", vec![ex(Some(1)), ex(Some(0))], true).unwrap();
        assert_eq!(d.labels(), Some(vec![1, 0]));
        let u = d.unlabeled();
        assert!(!u.is_labeled());
        assert!(u.examples().iter().all(|e| e.label.is_none()));
    }

    #[test]
    fn mixed_modes_rejected() {
        let a = Example::new(Content::Text("a".into()), None);
        let b = Example::new(Content::Tokens(vec![2]), None);
        assert!(DomainDataset::new("d", vec![a, b], false).is_err());
    }
}
