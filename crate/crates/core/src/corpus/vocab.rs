use std::collections::HashMap;

use super::{Content, CorpusMode, DomainDataset, SparseVector};
use crate::error::{ensure, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Dense token index. `PAD` and `UNK` occupy indices 0 and 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in index order, after `PAD` and `UNK`.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            ensure!(index.insert(t.clone(), i as u32).is_none(), "duplicate token '{t}'");
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn index_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|t| self.index_of(&t)).collect()
    }
}

/// Keeps the `max_size - 2` most frequent tokens across all datasets; ties
/// are broken lexicographically.
pub fn build_vocabulary(datasets: &[&DomainDataset], max_size: usize) -> Result<Vocabulary> {
    ensure!(max_size >= 2, "vocabulary max_size must be at least 2, got {max_size}");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for ds in datasets {
        ensure!(
            ds.mode() == CorpusMode::Text,
            "vocabulary needs raw-text datasets; '{}' is {:?}",
            ds.name(),
            ds.mode()
        );
        for ex in ds.examples() {
            if let Content::Text(text) = &ex.content {
                for tok in tokenize(text) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    ensure!(!counts.is_empty(), "no tokens found in the provided datasets");
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, _)| t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Converts a raw-text dataset into vocabulary indices (OOV becomes `UNK`).
pub fn encode_tokens(dataset: &DomainDataset, vocab: &Vocabulary) -> Result<DomainDataset> {
    dataset.map_content(|c| match c {
        Content::Text(text) => Ok(Content::Tokens(vocab.encode(text))),
        Content::Tokens(toks) => {
            ensure!(
                toks.iter().all(|&t| (t as usize) < vocab.size()),
                "token index out of vocabulary range"
            );
            Ok(Content::Tokens(toks.clone()))
        }
        Content::Features(_) => Err(crate::Error::Validation(
            "cannot tokenize a feature-vector dataset".into(),
        )),
    })
}

/// Raw term-frequency vectors over the `feature_dim` most frequent
/// vocabulary entries. Feature `i` counts vocabulary index `i + 2`.
pub fn featurize_bow(
    dataset: &DomainDataset,
    vocab: &Vocabulary,
    feature_dim: usize,
) -> Result<DomainDataset> {
    ensure!(feature_dim > 0, "feature_dim must be positive");
    ensure!(
        feature_dim <= vocab.size(),
        "feature_dim {feature_dim} exceeds vocabulary size {}",
        vocab.size()
    );
    let count = |ids: &mut dyn Iterator<Item = u32>| -> Result<Content> {
        let mut entries = Vec::new();
        for id in ids {
            if id >= 2 && ((id - 2) as usize) < feature_dim {
                entries.push((id - 2, 1.0));
            }
        }
        Ok(Content::Features(SparseVector::new(feature_dim, entries)?))
    };
    dataset.map_content(|c| match c {
        Content::Text(text) => count(&mut tokenize(text).map(|t| vocab.index_of(&t))),
        Content::Tokens(toks) => count(&mut toks.iter().copied()),
        Content::Features(_) => Err(crate::Error::Validation(
            "dataset is already featurized".into(),
        )),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;

    fn text_ds(lines: &[&str]) -> DomainDataset {
        DomainDataset::new(
            "t",
            lines
                .iter()
                .map(|l| Example::new(Content::Text(l.to_string()), None))
                .collect(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        let toks: Vec<_> = tokenize("Great BOOK!! it's-fine").collect();
        assert_eq!(toks, ["great", "book", "it", "s", "fine"]);
    }

    #[test]
    fn most_frequent_kept() {
        let v = build_vocabulary(&[&text_ds(&["a a b"])], 4).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
    }

    #[test]
    fn frequency_ties_are_lexicographic() {
        let v = build_vocabulary(&[&text_ds(&["c b"])], 3).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "b"]);
    }

    #[test]
    fn max_size_one_rejected() {
        assert!(build_vocabulary(&[&text_ds(&["a"])], 1).is_err());
    }

    #[test]
    fn no_tokens_rejected() {
        assert!(build_vocabulary(&[&text_ds(&["!!! ..."])], 10).is_err());
    }

    #[test]
    fn vocabulary_spans_all_domains() {
        let src = text_ds(&["alpha beta"]);
        let tgt = text_ds(&["gamma gamma"]);
        let v = build_vocabulary(&[&src, &tgt], 10).unwrap();
        assert_eq!(v.index_of("gamma"), 2);
        assert_ne!(v.index_of("alpha"), UNK);
    }

    #[test]
    fn bow_counts_raw_frequencies() {
        let ds = text_ds(&["a a b"]);
        let v = build_vocabulary(&[&ds], 4).unwrap();
        let f = featurize_bow(&ds, &v, 2).unwrap();
        let Content::Features(x) = &f.examples()[0].content else {
            panic!("expected features")
        };
        assert_eq!(x.to_dense(), vec![2.0, 1.0]);
    }

    #[test]
    fn unknown_only_text_gives_zero_vector() {
        let ds = text_ds(&["a"]);
        let v = build_vocabulary(&[&ds], 3).unwrap();
        let f = featurize_bow(&text_ds(&["zzz qqq"]), &v, 1).unwrap();
        let Content::Features(x) = &f.examples()[0].content else {
            panic!("expected features")
        };
        assert_eq!(x.nnz(), 0);
        assert_eq!(x.dim(), 1);
    }

    #[test]
    fn feature_dim_beyond_vocab_rejected() {
        let ds = text_ds(&["a b"]);
        let v = build_vocabulary(&[&ds], 4).unwrap();
        assert!(featurize_bow(&ds, &v, 5).is_err());
    }

    #[test]
    fn featurize_preserves_count_and_order() {
        let ds = text_ds(&["a", "b b", "c"]);
        let v = build_vocabulary(&[&ds], 10).unwrap();
        let f = featurize_bow(&ds, &v, 3).unwrap();
        assert_eq!(f.len(), 3);
        let b = v.index_of("b") - 2;
        let Content::Features(x) = &f.examples()[1].content else {
            panic!()
        };
        assert_eq!(x.get(b), 2.0);
    }
}
