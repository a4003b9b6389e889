use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Content, DomainDataset, Example, SparseVector};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_label(path: &Path, line: usize, tok: &str) -> Result<u8> {
    match tok.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad label '{other}', expected 0 or 1"),
        }),
    }
}

/// Reads `label<TAB>text` lines (or bare `text` lines when unlabeled).
///
/// Malformed lines are rejected with their 1-based line number.
pub fn load_labeled_tsv(
    path: impl AsRef<Path>,
    domain_name: &str,
    labeled: bool,
) -> Result<DomainDataset> {
    let path = path.as_ref();
    let body = read(path)?;
    let mut examples = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (label, text) = if labeled {
            let (lab, text) = raw
                .split_once('\t')
                .ok_or_else(|| parse_err("expected 'label<TAB>text'".into()))?;
            (Some(parse_label(path, line_no, lab)?), text)
        } else {
            (None, raw)
        };
        if text.trim().is_empty() {
            return Err(parse_err("empty text".into()));
        }
        examples.push(Example::new(Content::Text(text.to_string()), label));
    }
    if examples.is_empty() {
        return Err(Error::Validation(format!("{} contains no examples", path.display())));
    }
    DomainDataset::new(domain_name, examples, labeled)
}

/// Writes a raw-text dataset in the format read by [`load_labeled_tsv`].
pub fn write_labeled_tsv(dataset: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for ex in dataset.examples() {
        let Content::Text(text) = &ex.content else {
            return Err(Error::Validation("only raw-text datasets can be written as TSV".into()));
        };
        if let Some(y) = ex.label {
            out.push_str(&format!("{y}\t"));
        }
        out.push_str(text);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `label<TAB>idx:count idx:count ...` lines. Unlabeled files omit the
/// label column.
pub fn load_sparse_features(
    path: impl AsRef<Path>,
    domain_name: &str,
    labeled: bool,
    dim: usize,
) -> Result<DomainDataset> {
    let path = path.as_ref();
    let body = read(path)?;
    let mut examples = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (label, feats) = if labeled {
            let (lab, rest) = raw.split_once('\t').unwrap_or((raw, ""));
            (Some(parse_label(path, line_no, lab)?), rest)
        } else {
            (None, raw)
        };
        let mut entries = Vec::new();
        for pair in feats.split_whitespace() {
            let (idx, val) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(format!("bad feature '{pair}'")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| parse_err(format!("bad feature index '{idx}'")))?;
            let val: f32 = val
                .parse()
                .map_err(|_| parse_err(format!("bad feature value '{val}'")))?;
            entries.push((idx, val));
        }
        let v = SparseVector::new(dim, entries).map_err(|e| parse_err(e.to_string()))?;
        examples.push(Example::new(Content::Features(v), label));
    }
    if examples.is_empty() {
        return Err(Error::Validation(format!("{} contains no examples", path.display())));
    }
    DomainDataset::new(domain_name, examples, labeled)
}

pub fn write_sparse_features(dataset: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for ex in dataset.examples() {
        let Content::Features(v) = &ex.content else {
            return Err(Error::Validation("dataset is not featurized".into()));
        };
        let feats: Vec<String> = v.entries().iter().map(|(i, x)| format!("{i}:{x}")).collect();
        match ex.label {
            Some(y) => writeln!(out, "{y}\t{}", feats.join(" ")),
            None => writeln!(out, "{}", feats.join(" ")),
        }
        .expect("writing to a Vec cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
