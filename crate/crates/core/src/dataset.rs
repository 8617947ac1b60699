//! Feature-norm ingestion, the canonical long-form store, and the
//! concept × feature matrix built from it.
//!
//! Each published distribution has its own adapter with a pinned set of
//! required header columns. A file missing any of them is rejected with
//! [`Error::UnknownColumnLayout`] instead of being guessed at.
//!
//! | dataset  | required columns (case/space-insensitive)                | value used              |
//! |----------|-----------------------------------------------------------|-------------------------|
//! | McRae    | `Concept`, `Feature`, `WB_Label`, `BR_Label`, `Prod_Freq` | production frequency    |
//! | Buchanan | `cue`, `translated`, `normalized_translated`              | normalized translated   |
//! | Binder   | `Word` plus the 65 rating dimensions in [`BINDER_DIMENSIONS`] | mean rating in [0, 6] |
//!
//! Tab- and comma-separated files are both accepted; the delimiter is taken
//! from the header line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    McRae,
    Buchanan,
    Binder,
    Synthetic,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::McRae => "mcrae",
            DatasetId::Buchanan => "buchanan",
            DatasetId::Binder => "binder",
            DatasetId::Synthetic => "synthetic",
        }
    }

    /// Continuous norms are scored with Spearman's rho, categorical ones with F1@N.
    pub fn is_continuous(self) -> bool {
        matches!(self, DatasetId::Binder)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mcrae" => Ok(DatasetId::McRae),
            "buchanan" => Ok(DatasetId::Buchanan),
            "binder" => Ok(DatasetId::Binder),
            "synthetic" => Ok(DatasetId::Synthetic),
            other => Err(Error::InvalidParameter(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Upper end of the Binder rating scale.
pub const BINDER_MAX_RATING: f64 = 6.0;

/// Highest McRae production frequency (number of participants per concept).
pub const MCRAE_MAX_PRODUCTION_FREQUENCY: f64 = 30.0;

/// The 65 Binder rating dimensions, in distribution order.
pub const BINDER_DIMENSIONS: [&str; 65] = [
    "Vision", "Bright", "Dark", "Color", "Pattern", "Large", "Small", "Motion", "Biomotion",
    "Fast", "Slow", "Shape", "Complexity", "Face", "Body", "Touch", "Temperature", "Texture",
    "Weight", "Pain", "Audition", "Loud", "Low", "High", "Sound", "Music", "Speech", "Taste",
    "Smell", "Head", "UpperLimb", "LowerLimb", "Practice", "Landmark", "Path", "Scene", "Near",
    "Toward", "Away", "Number", "Time", "Duration", "Long", "Short", "Caused", "Consequential",
    "Social", "Human", "Communication", "Self", "Cognition", "Benefit", "Harm", "Pleasant",
    "Unpleasant", "Happy", "Sad", "Angry", "Disgusted", "Fearful", "Surprised", "Drive", "Needs",
    "Attention", "Arousal",
];

const MCRAE_COLUMNS: [&str; 5] = ["concept", "feature", "wb_label", "br_label", "prod_freq"];
const BUCHANAN_COLUMNS: [&str; 3] = ["cue", "translated", "normalized_translated"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub concept: String,
    pub feature: String,
    pub value: f64,
}

impl Triple {
    pub fn new(concept: impl Into<String>, feature: impl Into<String>, value: f64) -> Self {
        Triple {
            concept: concept.into(),
            feature: feature.into(),
            value,
        }
    }
}

/// Lowercased, whitespace-trimmed label used for all concept and feature matching.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Whether a McRae relation tag marks a taxonomic (superordinate) feature.
pub fn is_taxonomic_tag(tag: &str) -> bool {
    tag.contains("taxonomic") || tag.contains("superordinate")
}

/// Long-form feature norm: sorted, duplicate-free (concept, feature, value) triples.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalNorm {
    dataset: DatasetId,
    triples: Vec<Triple>,
    feature_meta: BTreeMap<String, String>,
}

impl CanonicalNorm {
    /// Validates and sorts the triples.
    pub fn new(
        dataset: DatasetId,
        mut triples: Vec<Triple>,
        feature_meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        for t in &triples {
            check_label(&t.concept)?;
            check_label(&t.feature)?;
            check_value(dataset, t.value, None)?;
        }
        triples.sort_by(|a, b| (&a.concept, &a.feature).cmp(&(&b.concept, &b.feature)));
        if let Some(w) = triples
            .windows(2)
            .find(|w| w[0].concept == w[1].concept && w[0].feature == w[1].feature)
        {
            return Err(Error::DuplicateTriple {
                concept: w[0].concept.clone(),
                feature: w[0].feature.clone(),
            });
        }
        for (feature, tag) in &feature_meta {
            check_label(feature)?;
            check_label(tag)?;
        }
        Ok(CanonicalNorm {
            dataset,
            triples,
            feature_meta,
        })
    }

    pub fn dataset(&self) -> DatasetId {
        self.dataset
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Feature → relation tag; only McRae carries these.
    pub fn feature_meta(&self) -> &BTreeMap<String, String> {
        &self.feature_meta
    }

    /// Sorted distinct concept labels.
    pub fn concepts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.triples {
            if out.last() != Some(&t.concept) {
                out.push(t.concept.clone());
            }
        }
        out
    }

    /// Sorted distinct feature labels.
    pub fn features(&self) -> Vec<String> {
        self.triples
            .iter()
            .map(|t| t.feature.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts().len()
    }

    pub fn feature_count(&self) -> usize {
        self.features().len()
    }

    /// Number of nonzero features listed for each concept.
    pub fn features_per_concept(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for t in self.triples.iter().filter(|t| t.value != 0.0) {
            *out.entry(t.concept.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn taxonomic_features(&self) -> BTreeSet<String> {
        self.feature_meta
            .iter()
            .filter(|(_, tag)| is_taxonomic_tag(tag))
            .map(|(f, _)| f.clone())
            .collect()
    }

    pub fn stats(&self) -> NormStats {
        let n = self.concept_count();
        let m = self.feature_count();
        let per_concept = self.features_per_concept();
        let mut concepts_per_feature: HashMap<&str, usize> = HashMap::new();
        for t in self.triples.iter().filter(|t| t.value != 0.0) {
            *concepts_per_feature.entry(&t.feature).or_insert(0) += 1;
        }
        let singletons = concepts_per_feature.values().filter(|&&c| c == 1).count();
        let nonzero: usize = per_concept.values().sum();
        NormStats {
            dataset: self.dataset,
            concepts: n,
            features: m,
            triples: self.triples.len(),
            density: if n * m == 0 {
                0.0
            } else {
                nonzero as f64 / (n * m) as f64
            },
            singleton_feature_fraction: if m == 0 {
                0.0
            } else {
                singletons as f64 / m as f64
            },
            min_features_per_concept: per_concept.values().copied().min().unwrap_or(0),
            max_features_per_concept: per_concept.values().copied().max().unwrap_or(0),
            mean_features_per_concept: if n == 0 { 0.0 } else { nonzero as f64 / n as f64 },
        }
    }

    /// Canonical TSV body: one `concept\tfeature\tvalue` line per triple, sorted.
    pub fn to_canonical_tsv(&self) -> String {
        let mut out = String::with_capacity(self.triples.len() * 24);
        for t in &self.triples {
            out.push_str(&t.concept);
            out.push('\t');
            out.push_str(&t.feature);
            out.push('\t');
            out.push_str(&t.value.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses a canonical TSV body.
    pub fn from_canonical_tsv(
        dataset: DatasetId,
        text: &str,
        feature_meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut triples = Vec::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", parts.len()),
                });
            }
            let value: f64 = parts[2].parse().map_err(|_| Error::MalformedLine {
                line: line_no,
                reason: format!("value {:?} is not a number", parts[2]),
            })?;
            check_value(dataset, value, Some(line_no))?;
            if parts[0].is_empty() || parts[1].is_empty() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: "empty label".to_string(),
                });
            }
            if !seen.insert((parts[0].to_string(), parts[1].to_string())) {
                return Err(Error::DuplicateTriple {
                    concept: parts[0].to_string(),
                    feature: parts[1].to_string(),
                });
            }
            triples.push(Triple::new(parts[0], parts[1], value));
        }
        CanonicalNorm::new(dataset, triples, feature_meta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub dataset: DatasetId,
    pub concepts: usize,
    pub features: usize,
    pub triples: usize,
    pub density: f64,
    /// Fraction of features that occur with exactly one concept.
    pub singleton_feature_fraction: f64,
    pub min_features_per_concept: usize,
    pub max_features_per_concept: usize,
    pub mean_features_per_concept: f64,
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidParameter(format!(
            "label {label:?} is empty or contains a tab/newline"
        )));
    }
    Ok(())
}

fn check_value(dataset: DatasetId, value: f64, line: Option<usize>) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::ValueOutOfRange {
            line,
            value,
            detail: "norm values must be finite and non-negative".to_string(),
        });
    }
    if dataset == DatasetId::Binder && value > BINDER_MAX_RATING {
        return Err(Error::ValueOutOfRange {
            line,
            value,
            detail: format!("Binder ratings lie in [0, {BINDER_MAX_RATING}]"),
        });
    }
    Ok(())
}

fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

/// Writes the canonical TSV and, next to it, a `<path>.meta` sidecar holding
/// the dataset id and any feature relation tags.
pub fn save_canonical(norm: &CanonicalNorm, path: &Path) -> Result<()> {
    fs::write(path, norm.to_canonical_tsv()).map_err(|e| Error::io(path, e))?;
    let mut meta = format!("dataset\t{}\n", norm.dataset);
    for (feature, tag) in &norm.feature_meta {
        meta.push_str(&format!("relation\t{feature}\t{tag}\n"));
    }
    let mpath = meta_path(path);
    fs::write(&mpath, meta).map_err(|e| Error::io(mpath, e))
}

/// Reads a canonical TSV. Without a sidecar the norm is tagged `Synthetic`.
pub fn load_canonical(path: &Path) -> Result<CanonicalNorm> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mpath = meta_path(path);
    let mut dataset = DatasetId::Synthetic;
    let mut feature_meta = BTreeMap::new();
    if mpath.exists() {
        let meta = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        for (idx, line) in meta.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.as_slice() {
                ["dataset", id] => dataset = id.parse()?,
                ["relation", feature, tag] => {
                    feature_meta.insert(feature.to_string(), tag.to_string());
                }
                [""] => {}
                _ => {
                    return Err(Error::MalformedLine {
                        line: idx + 1,
                        reason: format!("unrecognised metadata line in {}", mpath.display()),
                    })
                }
            }
        }
    }
    CanonicalNorm::from_canonical_tsv(dataset, &text, feature_meta)
}

/// A parsed delimited table with normalized header names.
struct RawTable {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl RawTable {
    fn parse(text: &str, dataset: DatasetId) -> Result<Self> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let first = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| {
            Error::UnknownColumnLayout {
                dataset: dataset.to_string(),
                detail: "input is empty".to_string(),
            }
        })?;
        let delimiter = if first.contains('\t') { b'\t' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .flexible(true)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()?
            .iter()
            .map(normalize_header)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            // header is line 1
            let line = record.position().map(|p| p.line() as usize).unwrap_or(idx + 2);
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push((line, record.iter().map(|f| f.trim().to_string()).collect()));
        }
        Ok(RawTable { header, rows })
    }

    fn require(&self, dataset: DatasetId, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                let wanted = normalize_header(name);
                self.header
                    .iter()
                    .position(|h| *h == wanted)
                    .ok_or_else(|| Error::UnknownColumnLayout {
                        dataset: dataset.to_string(),
                        detail: format!("missing column {name:?}; header is {:?}", self.header),
                    })
            })
            .collect()
    }
}

fn normalize_header(h: &str) -> String {
    h.trim()
        .trim_matches('"')
        .to_lowercase()
        .replace([' ', '-', '.'], "_")
}

fn field<'a>(row: &'a [String], idx: usize, line: usize) -> Result<&'a str> {
    row.get(idx).map(String::as_str).ok_or(Error::MalformedLine {
        line,
        reason: format!("row has {} fields, column {} missing", row.len(), idx + 1),
    })
}

fn number(text: &str, line: usize) -> Result<f64> {
    text.parse::<f64>().map_err(|_| Error::MalformedLine {
        line,
        reason: format!("{text:?} is not a number"),
    })
}

/// Reads a published norm distribution file into canonical form.
pub fn ingest_norm(dataset: DatasetId, raw: &str) -> Result<CanonicalNorm> {
    let table = RawTable::parse(raw, dataset)?;
    let norm = match dataset {
        DatasetId::McRae => ingest_mcrae(&table)?,
        DatasetId::Buchanan => ingest_buchanan(&table)?,
        DatasetId::Binder => ingest_binder(&table)?,
        DatasetId::Synthetic => {
            return Err(Error::InvalidParameter(
                "synthetic norms have no raw distribution; use the canonical format".to_string(),
            ))
        }
    };
    let stats = norm.stats();
    info!(
        "ingested {}: {} concepts, {} features, {} triples",
        dataset, stats.concepts, stats.features, stats.triples
    );
    Ok(norm)
}

pub fn ingest_norm_file(dataset: DatasetId, path: &Path) -> Result<CanonicalNorm> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_norm(dataset, &raw)
}

fn ingest_mcrae(table: &RawTable) -> Result<CanonicalNorm> {
    let cols = table.require(DatasetId::McRae, &MCRAE_COLUMNS)?;
    let (c_concept, c_feature, c_wb, c_br, c_pf) = (cols[0], cols[1], cols[2], cols[3], cols[4]);
    let mut triples = Vec::with_capacity(table.rows.len());
    let mut meta = BTreeMap::new();
    for (line, row) in &table.rows {
        let line = *line;
        let concept = normalize_label(field(row, c_concept, line)?);
        let feature = normalize_label(field(row, c_feature, line)?);
        let value = number(field(row, c_pf, line)?, line)?;
        if value <= 0.0 || value > MCRAE_MAX_PRODUCTION_FREQUENCY {
            return Err(Error::ValueOutOfRange {
                line: Some(line),
                value,
                detail: format!("production frequency must lie in (0, {MCRAE_MAX_PRODUCTION_FREQUENCY}]"),
            });
        }
        let br = normalize_label(field(row, c_br, line)?);
        let tag = if br.is_empty() {
            normalize_label(field(row, c_wb, line)?)
        } else {
            br
        };
        if !tag.is_empty() {
            meta.entry(feature.clone()).or_insert(tag);
        }
        triples.push(Triple::new(concept, feature, value));
    }
    CanonicalNorm::new(DatasetId::McRae, triples, meta)
}

fn ingest_buchanan(table: &RawTable) -> Result<CanonicalNorm> {
    let cols = table.require(DatasetId::Buchanan, &BUCHANAN_COLUMNS)?;
    let (c_cue, c_feature, c_value) = (cols[0], cols[1], cols[2]);
    // Several raw features can lemmatize to the same translated feature; those
    // rows repeat one normalized value and collapse into one triple.
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut skipped = 0usize;
    for (line, row) in &table.rows {
        let line = *line;
        let concept = normalize_label(field(row, c_cue, line)?);
        let feature = normalize_label(field(row, c_feature, line)?);
        let raw_value = field(row, c_value, line)?;
        if concept.is_empty() || feature.is_empty() || raw_value.eq_ignore_ascii_case("na") || raw_value.is_empty() {
            skipped += 1;
            continue;
        }
        let value = number(raw_value, line)?;
        check_value(DatasetId::Buchanan, value, Some(line))?;
        match cells.get(&(concept.clone(), feature.clone())) {
            Some(&prev) if prev != value => {
                return Err(Error::DuplicateTriple { concept, feature });
            }
            Some(_) => {}
            None => {
                cells.insert((concept, feature), value);
            }
        }
    }
    if skipped > 0 {
        warn!("buchanan: skipped {skipped} rows without a translated feature or value");
    }
    let triples = cells
        .into_iter()
        .map(|((c, f), v)| Triple::new(c, f, v))
        .collect();
    CanonicalNorm::new(DatasetId::Buchanan, triples, BTreeMap::new())
}

fn ingest_binder(table: &RawTable) -> Result<CanonicalNorm> {
    let word_col = table.require(DatasetId::Binder, &["word"])?[0];
    let dim_cols = table.require(DatasetId::Binder, &BINDER_DIMENSIONS)?;
    let mut seen = HashSet::new();
    let mut rows: Vec<(String, Vec<Option<f64>>, usize)> = Vec::new();
    for (line, row) in &table.rows {
        let line = *line;
        let concept = normalize_label(field(row, word_col, line)?);
        if concept.is_empty() {
            continue;
        }
        if !seen.insert(concept.clone()) {
            warn!("binder: dropping duplicate concept {concept:?} at line {line}");
            continue;
        }
        let mut ratings = Vec::with_capacity(dim_cols.len());
        for &c in &dim_cols {
            let text = field(row, c, line)?;
            if text.is_empty() || text.eq_ignore_ascii_case("na") {
                ratings.push(None);
            } else {
                let v = number(text, line)?;
                check_value(DatasetId::Binder, v, Some(line))?;
                ratings.push(Some(v));
            }
        }
        rows.push((concept, ratings, line));
    }
    let keep: Vec<usize> = (0..dim_cols.len())
        .filter(|&j| rows.iter().all(|(_, r, _)| r[j].is_some()))
        .collect();
    let dropped: Vec<&str> = (0..dim_cols.len())
        .filter(|j| !keep.contains(j))
        .map(|j| BINDER_DIMENSIONS[j])
        .collect();
    if !dropped.is_empty() {
        info!("binder: dropping dimensions with missing ratings: {dropped:?}");
    }
    let mut triples = Vec::with_capacity(rows.len() * keep.len());
    for (concept, ratings, _) in &rows {
        for &j in &keep {
            triples.push(Triple::new(
                concept.clone(),
                normalize_label(BINDER_DIMENSIONS[j]),
                ratings[j].expect("kept dimensions are complete"),
            ));
        }
    }
    CanonicalNorm::new(DatasetId::Binder, triples, BTreeMap::new())
}

/// Concept × feature matrix with its row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMatrix {
    values: DataMatrix,
    concept_index: Vec<String>,
    feature_index: Vec<String>,
}

impl NormMatrix {
    pub fn new(
        values: DataMatrix,
        concept_index: Vec<String>,
        feature_index: Vec<String>,
    ) -> Result<Self> {
        if values.nrows() != concept_index.len() {
            return Err(Error::DimensionMismatch {
                context: "norm matrix rows vs concept labels".to_string(),
                expected: concept_index.len(),
                found: values.nrows(),
            });
        }
        if values.ncols() != feature_index.len() {
            return Err(Error::DimensionMismatch {
                context: "norm matrix columns vs feature labels".to_string(),
                expected: feature_index.len(),
                found: values.ncols(),
            });
        }
        for labels in [&concept_index, &feature_index] {
            let mut set = HashSet::with_capacity(labels.len());
            for l in labels.iter() {
                if !set.insert(l.as_str()) {
                    return Err(Error::InvalidParameter(format!("duplicate label {l:?}")));
                }
            }
        }
        Ok(NormMatrix {
            values,
            concept_index,
            feature_index,
        })
    }

    pub fn values(&self) -> &DataMatrix {
        &self.values
    }

    pub fn concepts(&self) -> &[String] {
        &self.concept_index
    }

    pub fn features(&self) -> &[String] {
        &self.feature_index
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn density(&self) -> f64 {
        self.values.density()
    }

    /// Keeps the given rows, in the given order.
    pub fn select_concepts(&self, rows: &[usize]) -> NormMatrix {
        NormMatrix {
            values: self.values.select_rows(rows),
            concept_index: rows.iter().map(|&i| self.concept_index[i].clone()).collect(),
            feature_index: self.feature_index.clone(),
        }
    }

    /// Same labels, replaced values.
    pub fn with_values(&self, values: DataMatrix) -> Result<NormMatrix> {
        NormMatrix::new(values, self.concept_index.clone(), self.feature_index.clone())
    }

    /// Long form of the matrix. Sparse matrices emit their nonzero cells,
    /// dense ones every cell, so rebuilding yields the same matrix.
    pub fn to_canonical(
        &self,
        dataset: DatasetId,
        feature_meta: BTreeMap<String, String>,
    ) -> Result<CanonicalNorm> {
        let mut triples = Vec::new();
        if self.values.is_sparse() {
            self.values.for_each_nonzero(|i, j, v| {
                triples.push(Triple::new(
                    self.concept_index[i].clone(),
                    self.feature_index[j].clone(),
                    v,
                ));
            });
        } else {
            for i in 0..self.nrows() {
                for j in 0..self.ncols() {
                    triples.push(Triple::new(
                        self.concept_index[i].clone(),
                        self.feature_index[j].clone(),
                        self.values.get(i, j),
                    ));
                }
            }
        }
        CanonicalNorm::new(dataset, triples, feature_meta)
    }
}

/// Places each triple at (concept, feature); absent cells are zero. Rows and
/// columns are ordered lexicographically by label.
pub fn build_matrix(norm: &CanonicalNorm) -> NormMatrix {
    let concepts = norm.concepts();
    let features = norm.features();
    let row_of: HashMap<&str, usize> = concepts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let col_of: HashMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(j, f)| (f.as_str(), j))
        .collect();
    let values = DataMatrix::from_entries(
        concepts.len(),
        features.len(),
        norm.triples()
            .iter()
            .map(|t| (row_of[t.concept.as_str()], col_of[t.feature.as_str()], t.value)),
    );
    NormMatrix {
        values,
        concept_index: concepts,
        feature_index: features,
    }
}
