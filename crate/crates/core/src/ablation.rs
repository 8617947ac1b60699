//! Diagnostic target matrices and the self-mapping upper bound.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{is_taxonomic_tag, NormMatrix};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, EvalOptions, EvalReport, FoldPlan, ModelSpec};
use crate::matrix::DataMatrix;

/// Densities at or above this are not treated as categorical norms.
pub const CATEGORICAL_MAX_DENSITY: f64 = 0.5;

/// Value given to features switched on by the shuffles.
pub const SHUFFLE_VALUE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Rand,
    Shuffle,
    TaxShuffle,
    CDiff,
    UpperBound,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Rand => "rand",
            AblationKind::Shuffle => "shuffle",
            AblationKind::TaxShuffle => "taxshuffle",
            AblationKind::CDiff => "cdiff",
            AblationKind::UpperBound => "upperbound",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "rand" => Ok(AblationKind::Rand),
            "shuffle" => Ok(AblationKind::Shuffle),
            "taxshuffle" => Ok(AblationKind::TaxShuffle),
            "cdiff" => Ok(AblationKind::CDiff),
            "upperbound" | "upper" => Ok(AblationKind::UpperBound),
            _ => Err(Error::InvalidParameter(format!("unknown ablation kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub kind: AblationKind,
    #[serde(default)]
    pub seed: u64,
    pub base_norm_id: String,
}

/// Builds the target matrix for `spec` from `base`. `UpperBound` returns the
/// base unchanged.
pub fn generate(
    spec: &AblationSpec,
    base: &NormMatrix,
    feature_meta: &BTreeMap<String, String>,
) -> Result<NormMatrix> {
    match spec.kind {
        AblationKind::Rand => make_rand(base, spec.seed),
        AblationKind::Shuffle => make_shuffle(base, spec.seed),
        AblationKind::TaxShuffle => make_tax_shuffle(base, feature_meta, spec.seed),
        AblationKind::CDiff => make_cdiff(base.concepts(), base.features()),
        AblationKind::UpperBound => Ok(base.clone()),
    }
}

/// i.i.d. Uniform[0, 1) values, row-major from one seeded stream.
pub fn rand_values(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = rng.random::<f64>();
        }
    }
    out
}

/// Random matrix with the labels of `template`.
pub fn make_rand(template: &NormMatrix, seed: u64) -> Result<NormMatrix> {
    if template.nrows() == 0 || template.ncols() == 0 {
        return Err(Error::InvalidParameter("random matrix needs n, m >= 1".to_string()));
    }
    let values = rand_values(template.nrows(), template.ncols(), seed);
    template.with_values(DataMatrix::Dense(values))
}

/// Random matrix with generated labels `c0.., f0..`.
pub fn make_rand_shaped(rows: usize, cols: usize, seed: u64) -> Result<NormMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter("random matrix needs n, m >= 1".to_string()));
    }
    NormMatrix::new(
        DataMatrix::Dense(rand_values(rows, cols, seed)),
        (0..rows).map(|i| format!("c{i}")).collect(),
        (0..cols).map(|j| format!("f{j}")).collect(),
    )
}

fn require_categorical(y: &NormMatrix) -> Result<()> {
    let density = y.density();
    if density >= CATEGORICAL_MAX_DENSITY {
        return Err(Error::NotCategorical { density });
    }
    Ok(())
}

/// Every row keeps its feature count; positions are drawn uniformly without
/// replacement over all features and set to 1.
pub fn make_shuffle(y: &NormMatrix, seed: u64) -> Result<NormMatrix> {
    require_categorical(y)?;
    let m = y.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..y.nrows() {
        let count = y.values().row_support(i).len();
        let mut cols = index::sample(&mut rng, m, count).into_vec();
        cols.sort_unstable();
        entries.extend(cols.into_iter().map(|j| (i, j, SHUFFLE_VALUE)));
    }
    y.with_values(DataMatrix::from_entries(y.nrows(), m, entries))
}

/// Columns of `y` whose relation tag marks them as taxonomic.
pub fn taxonomic_columns(y: &NormMatrix, feature_meta: &BTreeMap<String, String>) -> BTreeSet<usize> {
    y.features()
        .iter()
        .enumerate()
        .filter(|(_, f)| feature_meta.get(*f).is_some_and(|tag| is_taxonomic_tag(tag)))
        .map(|(j, _)| j)
        .collect()
}

/// Swaps each concept's taxonomic features for as many others drawn from the
/// pool of all taxonomic features, excluding its own. Other cells are kept.
pub fn make_tax_shuffle(
    y: &NormMatrix,
    feature_meta: &BTreeMap<String, String>,
    seed: u64,
) -> Result<NormMatrix> {
    let pool = taxonomic_columns(y, feature_meta);
    if pool.is_empty() {
        return Err(Error::MissingTaxonomyMeta);
    }
    let pool: Vec<usize> = pool.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..y.nrows() {
        let row = y.values().row_dense(i);
        let own: Vec<usize> = pool.iter().copied().filter(|&j| row[j] != 0.0).collect();
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 && own.binary_search(&j).is_err() {
                entries.push((i, j, v));
            }
        }
        if own.is_empty() {
            continue;
        }
        let candidates: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|j| own.binary_search(j).is_err())
            .collect();
        let take = own.len().min(candidates.len());
        if take < own.len() {
            log::warn!(
                "taxonomic shuffle: concept {:?} has {} hypernyms but only {} replacements exist",
                y.concepts()[i],
                own.len(),
                candidates.len()
            );
        }
        for pick in index::sample(&mut rng, candidates.len(), take) {
            entries.push((i, candidates[pick], SHUFFLE_VALUE));
        }
    }
    y.with_values(DataMatrix::from_entries(y.nrows(), y.ncols(), entries))
}

/// `|chars(concept) − chars(feature)|` for every cell.
pub fn make_cdiff(concepts: &[String], features: &[String]) -> Result<NormMatrix> {
    if concepts.is_empty() || features.is_empty() {
        return Err(Error::InvalidParameter("length difference needs labels on both axes".to_string()));
    }
    let cl: Vec<i64> = concepts.iter().map(|c| c.chars().count() as i64).collect();
    let fl: Vec<i64> = features.iter().map(|f| f.chars().count() as i64).collect();
    let values = DMatrix::from_fn(cl.len(), fl.len(), |i, j| (cl[i] - fl[j]).abs() as f64);
    NormMatrix::new(DataMatrix::Dense(values), concepts.to_vec(), features.to_vec())
}

/// Cross-validated self-mapping: the target doubles as the input.
pub fn upper_bound(
    y: &NormMatrix,
    spec: &ModelSpec,
    plan: &FoldPlan,
    options: &EvalOptions,
) -> Result<EvalReport> {
    cross_validate(y.values(), y, spec, plan, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sparse_norm() -> (NormMatrix, BTreeMap<String, String>) {
        let concepts: Vec<String> = ["raven", "robin", "hammer", "saw"].map(String::from).to_vec();
        let features: Vec<String> = [
            "a_bird", "an_animal", "a_tool", "a_scavenger", "is_black", "has_teeth", "is_heavy",
            "a_weapon", "a_device", "has_wings", "is_red", "is_metal", "is_sharp", "a_utensil",
            "flies", "sings", "eats_worms", "is_wooden", "cuts", "is_loud",
        ]
        .map(String::from)
        .to_vec();
        let col = |f: &str| features.iter().position(|x| x == f).unwrap();
        let entries = vec![
            (0, col("a_bird"), 20.0),
            (0, col("an_animal"), 5.0),
            (0, col("a_scavenger"), 2.0),
            (0, col("is_black"), 25.0),
            (1, col("a_bird"), 18.0),
            (1, col("is_red"), 12.0),
            (2, col("a_tool"), 24.0),
            (2, col("is_heavy"), 6.0),
            (3, col("cuts"), 20.0),
        ];
        let values = DataMatrix::from_entries(4, features.len(), entries);
        let meta = ["a_bird", "an_animal", "a_tool", "a_scavenger", "a_weapon", "a_device", "a_utensil"]
            .iter()
            .map(|f| (f.to_string(), "superordinate".to_string()))
            .collect();
        (NormMatrix::new(values, concepts, features).unwrap(), meta)
    }

    #[test]
    fn rand_is_seeded_and_uniform() {
        let a = make_rand_shaped(541, 2526, 7).unwrap();
        assert_eq!(a, make_rand_shaped(541, 2526, 7).unwrap());
        assert_ne!(a, make_rand_shaped(541, 2526, 8).unwrap());
        let dense = a.values().to_dense();
        assert!((dense.mean() - 0.5).abs() < 0.01);
        assert!(dense.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn shuffle_keeps_row_counts() {
        let (y, _) = sparse_norm();
        let s = make_shuffle(&y, 3).unwrap();
        for i in 0..y.nrows() {
            let support = s.values().row_support(i);
            assert_eq!(support.len(), y.values().row_support(i).len());
            assert!(support.iter().all(|&j| s.values().get(i, j) == 1.0));
        }
        assert_eq!(s, make_shuffle(&y, 3).unwrap());
        let dense = y.with_values(DataMatrix::Dense(DMatrix::from_element(4, 20, 1.0))).unwrap();
        assert!(matches!(make_shuffle(&dense, 0), Err(Error::NotCategorical { .. })));
    }

    #[test]
    fn tax_shuffle_replaces_only_hypernyms() {
        let (y, meta) = sparse_norm();
        let pool = taxonomic_columns(&y, &meta);
        let s = make_tax_shuffle(&y, &meta, 11).unwrap();
        // raven: its three hypernyms go, three other hypernyms arrive
        let raven_old: Vec<usize> = y.values().row_support(0).into_iter().filter(|j| pool.contains(j)).collect();
        let raven_new: Vec<usize> = s.values().row_support(0).into_iter().filter(|j| pool.contains(j)).collect();
        assert_eq!(raven_old.len(), 3);
        assert_eq!(raven_new.len(), 3);
        assert!(raven_new.iter().all(|j| !raven_old.contains(j)));
        for i in 0..y.nrows() {
            assert_eq!(s.values().row_support(i).len(), y.values().row_support(i).len());
            for j in 0..y.ncols() {
                if !pool.contains(&j) {
                    assert_eq!(s.values().get(i, j), y.values().get(i, j));
                }
            }
        }
        // "saw" has no hypernyms
        assert_eq!(s.values().row_dense(3), y.values().row_dense(3));
        assert!(matches!(
            make_tax_shuffle(&y, &BTreeMap::new(), 0),
            Err(Error::MissingTaxonomyMeta)
        ));
    }

    #[test]
    fn cdiff_is_length_difference() {
        let c = make_cdiff(&["raven".into(), "ox".into()], &["bright".into(), "is_ok".into()]).unwrap();
        assert_eq!(c.values().get(0, 0), 1.0);
        assert_eq!(c.values().get(0, 1), 0.0);
        assert_eq!(c.values().get(1, 0), 4.0);
        assert!(!c.values().is_sparse());
    }

    #[test]
    fn kind_parses_loosely() {
        assert_eq!("tax-shuffle".parse::<AblationKind>().unwrap(), AblationKind::TaxShuffle);
        assert_eq!("CDiff".parse::<AblationKind>().unwrap(), AblationKind::CDiff);
        assert!("noise".parse::<AblationKind>().is_err());
    }
}
