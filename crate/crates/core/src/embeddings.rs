//! Embedding tables and their alignment with a norm matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::NormMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    /// `N D` header line, then `word v1 … vD` space-separated rows.
    Word2VecText,
    /// `word\tv1\t…\tvD` rows, no header.
    Tsv,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word2vec_text" | "word2vec" | "w2v" => Ok(EmbeddingFormat::Word2VecText),
            "tsv" => Ok(EmbeddingFormat::Tsv),
            other => Err(Error::InvalidParameter(format!("unknown embedding format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// One row per word.
    vectors: DMatrix<f64>,
    source_tag: String,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, vectors: DMatrix<f64>, source_tag: impl Into<String>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::DimensionMismatch {
                context: "embedding rows vs words".to_string(),
                expected: words.len(),
                found: vectors.nrows(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        let mut normalized = Vec::with_capacity(words.len());
        for (i, w) in words.into_iter().enumerate() {
            let w = w.trim().to_lowercase();
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::DuplicateWord(w));
            }
            normalized.push(w);
        }
        Ok(EmbeddingTable {
            words: normalized,
            index,
            vectors,
            source_tag: source_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn get(&self, word: &str) -> Option<Vec<f64>> {
        self.index
            .get(word)
            .map(|&i| self.vectors.row(i).iter().copied().collect())
    }

    /// Word2vec text rendering; `{}` float formatting keeps it lossless.
    pub fn to_word2vec_text(&self) -> String {
        let mut out = String::new();
        if !self.source_tag.is_empty() {
            let _ = writeln!(out, "# {}", self.source_tag);
        }
        let _ = writeln!(out, "{} {}", self.len(), self.dim());
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.vectors.row(i).iter() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses an embedding file. Leading lines starting with `#` are comments;
/// the first one becomes the table's source tag.
pub fn parse_embeddings(text: &str, format: EmbeddingFormat) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().peekable();
    let mut source_tag = String::new();
    while let Some((_, line)) = lines.peek() {
        if let Some(comment) = line.strip_prefix('#') {
            if source_tag.is_empty() {
                source_tag = comment.trim().to_string();
            }
            lines.next();
        } else {
            break;
        }
    }

    let mut declared: Option<(usize, usize)> = None;
    if format == EmbeddingFormat::Word2VecText {
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("missing \"N D\" header".to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [n, d] => n.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
            _ => None,
        };
        let (n, d) = parsed
            .ok_or_else(|| Error::MalformedHeader(format!("expected \"N D\", found {header:?}")))?;
        if d == 0 {
            return Err(Error::MalformedHeader("dimension must be positive".to_string()));
        }
        declared = Some((n, d));
    }

    let mut words = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut dim = declared.map(|(_, d)| d);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields: Box<dyn Iterator<Item = &str>> = match format {
            EmbeddingFormat::Word2VecText => Box::new(line.split_whitespace()),
            EmbeddingFormat::Tsv => Box::new(line.split('\t')),
        };
        let word = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::MalformedLine {
                    line: line_no,
                    reason: format!("{f:?} is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::DimensionMismatch {
                context: format!("embedding row for {word:?} at line {line_no}"),
                expected: d,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "non-finite embedding value".to_string(),
            });
        }
        words.push(word.to_string());
        data.extend(values);
    }
    if let Some((n, _)) = declared {
        if n != words.len() {
            return Err(Error::MalformedHeader(format!(
                "header declares {n} rows, file has {}",
                words.len()
            )));
        }
    }
    let d = dim.unwrap_or(0);
    let vectors = DMatrix::from_row_slice(words.len(), d, &data);
    EmbeddingTable::new(words, vectors, source_tag)
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = parse_embeddings(&text, format)?;
    if table.source_tag.is_empty() {
        table.source_tag = path.display().to_string();
    }
    Ok(table)
}

/// Embedding lookup key for a concept label: lowercased, with any sense
/// marker (from the first `(` or `_` on) removed. `bat_(animal)` and
/// `bank_river` become `bat` and `bank`.
pub fn lookup_key(concept: &str) -> String {
    let lower = concept.trim().to_lowercase();
    let cut = lower.find(['(', '_']).unwrap_or(lower.len());
    lower[..cut].trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Drop,
    Error,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(MissingPolicy::Drop),
            "error" => Ok(MissingPolicy::Error),
            other => Err(Error::InvalidParameter(format!("unknown missing policy {other:?}"))),
        }
    }
}

/// Row-aligned source and target matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub x: DMatrix<f64>,
    pub y: NormMatrix,
    pub dropped: Vec<String>,
}

impl AlignedPair {
    pub fn concept_order(&self) -> &[String] {
        self.y.concepts()
    }
}

/// Pairs every norm concept with the embedding of its lookup key, keeping
/// the norm's concept order.
pub fn align(table: &EmbeddingTable, norm: &NormMatrix, policy: MissingPolicy) -> Result<AlignedPair> {
    let mut keep = Vec::with_capacity(norm.nrows());
    let mut sources = Vec::with_capacity(norm.nrows());
    let mut dropped = Vec::new();
    for (i, concept) in norm.concepts().iter().enumerate() {
        match table.index.get(&lookup_key(concept)) {
            Some(&row) => {
                keep.push(i);
                sources.push(row);
            }
            None => match policy {
                MissingPolicy::Error => return Err(Error::MissingEmbedding(concept.clone())),
                MissingPolicy::Drop => dropped.push(concept.clone()),
            },
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if !dropped.is_empty() {
        warn!("align: {} concepts have no embedding and were dropped", dropped.len());
    }
    Ok(AlignedPair {
        x: table.vectors.select_rows(&sources),
        y: norm.select_concepts(&keep),
        dropped,
    })
}
