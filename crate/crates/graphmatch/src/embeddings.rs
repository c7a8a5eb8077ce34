//! Plain-text label embeddings, one label per line: `<name> <v1> ... <v_dw>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use graphmatch_core::graphs::LabelVocab;
use graphmatch_core::numeric::Tensor;

use crate::error::{self, Error, Result};

#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub vocab: LabelVocab,
    /// Names that appeared more than once; the last occurrence was kept.
    pub duplicates: Vec<String>,
}

/// Parses embedding text. With `names`, rows are ordered by that list and
/// every name must be present; otherwise file order defines the vocabulary.
pub fn parse_embeddings(path: &Path, text: &str, names: Option<&[String]>) -> Result<LoadedEmbeddings> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(name) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|e| Error::parse(path, i + 1, format!("`{v}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, i + 1, format!("label `{name}` has no values")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, i + 1, format!("label `{name}` has a non-finite value")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("label `{name}` has {} values, expected {d}", values.len()),
                ))
            }
            Some(_) => {}
        }
        if rows.insert(name.to_string(), values).is_some() {
            log::warn!("{}:{}: duplicate label `{name}`, keeping this row", path.display(), i + 1);
            duplicates.push(name.to_string());
        } else {
            order.push(name.to_string());
        }
    }
    let names: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => order,
    };
    let missing: Vec<&str> = names.iter().filter(|n| !rows.contains_key(*n)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: no embedding for {}",
            path.display(),
            missing.join(", ")
        )));
    }
    if names.is_empty() {
        return Err(Error::Data(format!("{}: no labels", path.display())));
    }
    let matrix: Vec<&Vec<f64>> = names.iter().map(|n| &rows[n]).collect();
    let vocab = LabelVocab::new(names, Tensor::from_rows(&matrix)?)?;
    Ok(LoadedEmbeddings { vocab, duplicates })
}

pub fn load_embeddings(path: impl AsRef<Path>, names: Option<&[String]>) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    parse_embeddings(path, &error::read_to_string(path)?, names)
}

pub fn embeddings_to_string(vocab: &LabelVocab) -> String {
    let mut out = String::new();
    for (c, name) in vocab.names().iter().enumerate() {
        out.push_str(name);
        for v in vocab.embeddings().row(c) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(path: impl AsRef<Path>, vocab: &LabelVocab) -> Result<()> {
    error::write(path.as_ref(), embeddings_to_string(vocab))
}
