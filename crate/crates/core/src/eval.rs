//! Ranking and regression metrics, the k-fold driver and a paired
//! sign-flip permutation test.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NormMatrix;
use crate::error::{Error, Result};
use crate::ffnn::{Activation, FfnnModel, TrainConfig};
use crate::matrix::DataMatrix;
use crate::plsr::{fit_plsr, PlsrConfig, PlsrModel};

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_FOLDS: usize = 10;

pub const MSE: &str = "mse";
pub const PRECISION: &str = "precision";
pub const RECALL: &str = "recall";
pub const F1: &str = "f1";
pub const RHO: &str = "rho";
pub const NA: &str = "na";
pub const TRAIN_MSE: &str = "train_mse";
pub const TRAIN_F1: &str = "train_f1";
pub const TRAIN_RHO: &str = "train_rho";

/// Rows processed at once when scoring training folds.
const TRAIN_CHUNK: usize = 256;

pub fn mse(pred: &DMatrix<f64>, gold: &DMatrix<f64>) -> Result<f64> {
    check_shape(pred, gold, "mse")?;
    Ok(squared_error(pred, gold) / (pred.len().max(1)) as f64)
}

fn squared_error(pred: &DMatrix<f64>, gold: &DMatrix<f64>) -> f64 {
    pred.iter().zip(gold.iter()).map(|(p, g)| (p - g) * (p - g)).sum()
}

fn check_shape(pred: &DMatrix<f64>, gold: &DMatrix<f64>, what: &str) -> Result<()> {
    if pred.nrows() != gold.nrows() {
        return Err(Error::DimensionMismatch {
            context: format!("{what}: rows"),
            expected: gold.nrows(),
            found: pred.nrows(),
        });
    }
    if pred.ncols() != gold.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!("{what}: columns"),
            expected: gold.ncols(),
            found: pred.ncols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_hits(hits: usize, n: usize, gold: usize) -> Prf {
        let precision = hits as f64 / n as f64;
        let recall = hits as f64 / gold as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Descending by value, ties by ascending index.
fn by_value_desc(row: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Indices of the `n` largest entries, best first.
pub fn top_n(row: &[f64], n: usize) -> Vec<usize> {
    let n = n.min(row.len());
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if n == 0 {
        return Vec::new();
    }
    let cmp = by_value_desc(row);
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, &cmp);
        idx.truncate(n);
    }
    idx.sort_unstable_by(&cmp);
    idx
}

/// Precision, recall and F1 of the top `n` predicted features against a
/// sorted gold support.
pub fn f1_at_n(pred_row: &[f64], gold_support: &[usize], n: usize) -> Result<Prf> {
    if gold_support.is_empty() {
        return Err(Error::EmptyGold);
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".to_string()));
    }
    let hits = top_n(pred_row, n)
        .iter()
        .filter(|j| gold_support.binary_search(j).is_ok())
        .count();
    Ok(Prf::from_hits(hits, n, gold_support.len()))
}

/// Mean of P/R/F1@i for i = 1..=n.
pub fn average_prf_at_n(pred_row: &[f64], gold_support: &[usize], n: usize) -> Result<Prf> {
    if gold_support.is_empty() {
        return Err(Error::EmptyGold);
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".to_string()));
    }
    let ranked = top_n(pred_row, n);
    let mut hits = 0;
    let mut acc = Prf::default();
    for i in 1..=n {
        if let Some(j) = ranked.get(i - 1) {
            if gold_support.binary_search(j).is_ok() {
                hits += 1;
            }
        }
        let s = Prf::from_hits(hits, i, gold_support.len());
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    let n = n as f64;
    Ok(Prf {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingVariant {
    /// P/R/F1 of the top n.
    #[default]
    AtN,
    /// Averaged over cut-offs 1..=n.
    AverageToN,
    /// n set per concept to its gold feature count.
    PerConceptN,
}

pub fn ranking_score(
    pred_row: &[f64],
    gold_support: &[usize],
    n: usize,
    variant: RankingVariant,
) -> Result<Prf> {
    match variant {
        RankingVariant::AtN => f1_at_n(pred_row, gold_support, n),
        RankingVariant::AverageToN => average_prf_at_n(pred_row, gold_support, n),
        RankingVariant::PerConceptN => f1_at_n(pred_row, gold_support, gold_support.len().max(1)),
    }
}

/// Fractional ranks, 1-based, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// `None` when either side is constant.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Spearman correlation of two equally long vectors; 0 when either is
/// constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b)).unwrap_or(0.0)
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoAxis {
    #[default]
    PerConcept,
    PerFeature,
    Global,
}

/// Per-row Spearman correlations. Rows where either side is constant score
/// 0 and are still counted.
pub fn spearman_rows(pred: &DMatrix<f64>, gold: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shape(pred, gold, "spearman")?;
    if pred.ncols() < 2 {
        return Err(Error::InvalidParameter("spearman needs at least 2 features".to_string()));
    }
    let mut constant = 0;
    let out = (0..pred.nrows())
        .map(|i| {
            let p: Vec<f64> = pred.row(i).iter().copied().collect();
            let g: Vec<f64> = gold.row(i).iter().copied().collect();
            if is_constant(&p) || is_constant(&g) {
                constant += 1;
            }
            spearman(&p, &g)
        })
        .collect();
    if constant > 0 {
        log::warn!("spearman: {constant} constant row(s) scored as 0");
    }
    Ok(out)
}

pub fn spearman_rho(pred: &DMatrix<f64>, gold: &DMatrix<f64>, axis: RhoAxis) -> Result<f64> {
    match axis {
        RhoAxis::PerConcept => Ok(mean(&spearman_rows(pred, gold)?)),
        RhoAxis::PerFeature => Ok(mean(&spearman_rows(&pred.transpose(), &gold.transpose())?)),
        RhoAxis::Global => {
            check_shape(pred, gold, "spearman")?;
            Ok(spearman(pred.as_slice(), gold.as_slice()))
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Where the neighbours of a predicted row are looked up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaQuery {
    /// Predicted row queried against every gold row.
    #[default]
    GoldPool,
    /// Predicted row queried against the other predicted rows.
    PredictedSpace,
}

fn row_norms(m: &DataMatrix) -> Vec<f64> {
    let mut sq = vec![0.0; m.nrows()];
    m.for_each_nonzero(|i, _, v| sq[i] += v * v);
    sq.into_iter().map(f64::sqrt).collect()
}

/// Cosine similarities, pool rows × query rows. A zero vector on either
/// side scores −1.
fn cosine_block(queries: &DMatrix<f64>, pool: &DataMatrix, pool_norms: &[f64]) -> DMatrix<f64> {
    let mut sims = pool.mul_dense(&queries.transpose());
    for (c, q) in queries.row_iter().enumerate() {
        let qn = q.norm();
        for (r, &pn) in pool_norms.iter().enumerate() {
            let denom = qn * pn;
            sims[(r, c)] = if denom == 0.0 { -1.0 } else { sims[(r, c)] / denom };
        }
    }
    sims
}

fn nearest(sims: &[f64], exclude: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&j| j != exclude).collect();
    let cmp = by_value_desc(sims);
    if n < idx.len() {
        idx.select_nth_unstable_by(n, &cmp);
        idx.truncate(n);
    }
    idx.sort_unstable();
    idx
}

/// Nearest `n` neighbours (sorted indices) of each query vector in `pool`;
/// `self_rows[i]` is excluded for query `i`.
fn neighbour_sets(
    queries: &DMatrix<f64>,
    self_rows: &[usize],
    pool: &DataMatrix,
    pool_norms: &[f64],
    n: usize,
) -> Vec<Vec<usize>> {
    let zero_queries = queries.row_iter().filter(|r| r.norm() == 0.0).count();
    if zero_queries > 0 {
        log::warn!("neighbourhood: {zero_queries} zero query vector(s), cosine taken as -1");
    }
    let sims = cosine_block(queries, pool, pool_norms);
    self_rows
        .iter()
        .enumerate()
        .map(|(c, &own)| nearest(sims.column(c).as_slice(), own, n))
        .collect()
}

fn overlap(a: &[usize], b: &[usize], n: usize) -> f64 {
    a.iter().filter(|x| b.binary_search(x).is_ok()).count() as f64 / n as f64
}

fn check_pool(pool_size: usize, n: usize) -> Result<()> {
    if n == 0 || pool_size <= n {
        return Err(Error::InvalidParameter(format!(
            "neighbourhood size {n} needs more than {n} concepts, have {pool_size}"
        )));
    }
    Ok(())
}

/// Gold neighbour set of every pool row.
pub fn gold_neighbours(pool: &DataMatrix, n: usize) -> Result<Vec<Vec<usize>>> {
    check_pool(pool.nrows(), n)?;
    let norms = row_norms(pool);
    let rows: Vec<usize> = (0..pool.nrows()).collect();
    let chunks: Vec<Vec<Vec<usize>>> = rows
        .par_chunks(TRAIN_CHUNK)
        .map(|chunk| neighbour_sets(&pool.rows_dense(chunk), chunk, pool, &norms, n))
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Per-query neighbourhood overlap. Row `i` of `pred` is the prediction for
/// pool row `query_rows[i]`; its neighbours are searched among all pool rows
/// except its own.
pub fn neighbourhood_scores(
    pred: &DMatrix<f64>,
    query_rows: &[usize],
    pool: &DataMatrix,
    gold_sets: &[Vec<usize>],
    n: usize,
) -> Result<Vec<f64>> {
    check_pool(pool.nrows(), n)?;
    if pred.nrows() != query_rows.len() {
        return Err(Error::LengthMismatch {
            left: pred.nrows(),
            right: query_rows.len(),
        });
    }
    if pred.ncols() != pool.ncols() {
        return Err(Error::DimensionMismatch {
            context: "neighbourhood: prediction columns".to_string(),
            expected: pool.ncols(),
            found: pred.ncols(),
        });
    }
    let norms = row_norms(pool);
    let predicted = neighbour_sets(pred, query_rows, pool, &norms, n);
    Ok(query_rows
        .iter()
        .zip(&predicted)
        .map(|(&c, p)| overlap(&gold_sets[c], p, n))
        .collect())
}

/// Per-concept overlap when predicted rows are searched among each other.
/// `pred` must hold one row per pool row.
pub fn neighbourhood_scores_predicted_space(
    pred: &DMatrix<f64>,
    gold_sets: &[Vec<usize>],
    n: usize,
) -> Result<Vec<f64>> {
    check_pool(pred.nrows(), n)?;
    if pred.nrows() != gold_sets.len() {
        return Err(Error::LengthMismatch {
            left: pred.nrows(),
            right: gold_sets.len(),
        });
    }
    let pool = DataMatrix::Dense(pred.clone());
    let pred_sets = gold_neighbours(&pool, n)?;
    Ok(gold_sets
        .iter()
        .zip(&pred_sets)
        .map(|(g, p)| overlap(g, p, n))
        .collect())
}

/// Mean neighbourhood accuracy where row `i` of `pred` predicts row `i` of
/// `gold` and the pool is all gold rows.
pub fn neighborhood_accuracy(pred: &DMatrix<f64>, gold: &DMatrix<f64>, n: usize) -> Result<f64> {
    check_shape(pred, gold, "neighbourhood")?;
    let pool = DataMatrix::Dense(gold.clone());
    let sets = gold_neighbours(&pool, n)?;
    let rows: Vec<usize> = (0..gold.nrows()).collect();
    Ok(mean(&neighbourhood_scores(pred, &rows, &pool, &sets, n)?))
}

/// Seeded assignment of rows to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub seed: u64,
    /// Fold id of each row.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn new(rows: usize, fold_count: usize, seed: u64) -> Result<Self> {
        if fold_count < 2 {
            return Err(Error::InvalidParameter("need at least 2 folds".to_string()));
        }
        if rows < fold_count {
            return Err(Error::InvalidParameter(format!(
                "{rows} concepts cannot fill {fold_count} folds"
            )));
        }
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; rows];
        for (pos, &row) in order.iter().enumerate() {
            assignments[row] = pos % fold_count;
        }
        Ok(FoldPlan {
            fold_count,
            seed,
            assignments,
        })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnnSpec {
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ModelSpec {
    Plsr(PlsrConfig),
    Ffnn(FfnnSpec),
}

impl ModelSpec {
    /// Latent size: PLSR components or FFNN hidden units.
    pub fn size(&self) -> usize {
        match self {
            ModelSpec::Plsr(c) => c.k,
            ModelSpec::Ffnn(s) => s.hidden,
        }
    }

    pub fn with_size(&self, size: usize) -> ModelSpec {
        let mut out = self.clone();
        match &mut out {
            ModelSpec::Plsr(c) => c.k = size,
            ModelSpec::Ffnn(s) => s.hidden = size,
        }
        out
    }

    pub fn fit(&self, x: &DataMatrix, y: &DataMatrix) -> Result<FittedModel> {
        match self {
            ModelSpec::Plsr(cfg) => fit_plsr(x, y, cfg).map(FittedModel::Plsr),
            ModelSpec::Ffnn(spec) => {
                let init =
                    FfnnModel::init(x.ncols(), spec.hidden, y.ncols(), spec.activation, spec.init_seed)?;
                init.train(x, y, &spec.train).map(FittedModel::Ffnn)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Plsr(PlsrModel),
    Ffnn(FfnnModel),
}

impl FittedModel {
    pub fn predict(&self, x: &DataMatrix) -> Result<DMatrix<f64>> {
        match self {
            FittedModel::Plsr(m) => m.predict(x),
            FittedModel::Ffnn(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub ranking: RankingVariant,
    #[serde(default)]
    pub rho_axis: RhoAxis,
    #[serde(default = "default_top_n")]
    pub na_n: usize,
    #[serde(default)]
    pub na_query: NaQuery,
    /// Also score the training folds (mse, f1, rho).
    #[serde(default)]
    pub train_metrics: bool,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            top_n: DEFAULT_TOP_N,
            ranking: RankingVariant::default(),
            rho_axis: RhoAxis::default(),
            na_n: DEFAULT_TOP_N,
            na_query: NaQuery::default(),
            train_metrics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScores {
    pub fold: usize,
    pub mse: f64,
    /// Absent when the concept has no gold features.
    pub f1: Option<f64>,
    pub rho: f64,
    pub na: f64,
}

impl ConceptScores {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            MSE => Some(self.mse),
            F1 => self.f1,
            RHO => Some(self.rho),
            NA => Some(self.na),
            _ => None,
        }
    }
}

pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub model: ModelSpec,
    pub options: EvalOptions,
    pub fold_count: usize,
    pub fold_seed: u64,
    pub concepts: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub per_fold: Vec<MetricMap>,
    pub aggregate: MetricMap,
    pub per_concept: BTreeMap<String, ConceptScores>,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Per-concept values of `metric`, in concept order, for paired tests.
    pub fn concept_values(&self, metric: &str) -> Vec<(String, f64)> {
        self.per_concept
            .iter()
            .filter_map(|(c, s)| s.metric(metric).map(|v| (c.clone(), v)))
            .collect()
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).copied()
    }
}

/// Mean of each key over the maps that carry it, in fold order.
pub fn aggregate(per_fold: &[MetricMap]) -> MetricMap {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for fold in per_fold {
        for (k, v) in fold {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

pub fn fingerprint(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct FoldOutcome {
    test_rows: Vec<usize>,
    pred: Option<DMatrix<f64>>,
    mse: Vec<f64>,
    prf: Vec<Option<Prf>>,
    rho_rows: Vec<f64>,
    rho: f64,
    na: Vec<f64>,
    train: Option<MetricMap>,
}

/// k-fold cross-validation: fit on the other folds, predict the held-out
/// one. Neighbourhoods are searched among all concepts.
pub fn cross_validate(
    x: &DataMatrix,
    y: &NormMatrix,
    spec: &ModelSpec,
    plan: &FoldPlan,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let gold = y.values();
    if x.nrows() != gold.nrows() {
        return Err(Error::DimensionMismatch {
            context: "cross-validation: input rows".to_string(),
            expected: gold.nrows(),
            found: x.nrows(),
        });
    }
    if plan.len() != gold.nrows() {
        return Err(Error::LengthMismatch {
            left: plan.len(),
            right: gold.nrows(),
        });
    }
    if options.top_n == 0 {
        return Err(Error::InvalidParameter("top_n must be at least 1".to_string()));
    }
    let gold_sets = gold_neighbours(gold, options.na_n)?;
    let supports: Vec<Vec<usize>> = (0..gold.nrows()).map(|i| gold.row_support(i)).collect();
    let keep_pred = options.na_query == NaQuery::PredictedSpace;

    let outcomes: Vec<FoldOutcome> = (0..plan.fold_count)
        .into_par_iter()
        .map(|fold| {
            run_fold(x, gold, spec, plan, options, fold, &supports, &gold_sets, keep_pred)
                .map_err(|e| e.in_fold(fold))
        })
        .collect::<Result<_>>()?;

    let mut na_by_row = vec![0.0; gold.nrows()];
    if keep_pred {
        let mut all = DMatrix::zeros(gold.nrows(), gold.ncols());
        for o in &outcomes {
            let pred = o.pred.as_ref().expect("kept for predicted-space search");
            for (r, &i) in o.test_rows.iter().enumerate() {
                all.set_row(i, &pred.row(r));
            }
        }
        na_by_row = neighbourhood_scores_predicted_space(&all, &gold_sets, options.na_n)?;
    } else {
        for o in &outcomes {
            for (r, &i) in o.test_rows.iter().enumerate() {
                na_by_row[i] = o.na[r];
            }
        }
    }

    let mut per_fold = Vec::with_capacity(outcomes.len());
    let mut per_concept = BTreeMap::new();
    for (fold, o) in outcomes.iter().enumerate() {
        let mut map = MetricMap::new();
        map.insert(MSE.to_string(), mean(&o.mse));
        let scored: Vec<Prf> = o.prf.iter().flatten().copied().collect();
        if !scored.is_empty() {
            let k = scored.len() as f64;
            map.insert(PRECISION.to_string(), scored.iter().map(|s| s.precision).sum::<f64>() / k);
            map.insert(RECALL.to_string(), scored.iter().map(|s| s.recall).sum::<f64>() / k);
            map.insert(F1.to_string(), scored.iter().map(|s| s.f1).sum::<f64>() / k);
        }
        map.insert(RHO.to_string(), o.rho);
        let na: Vec<f64> = o.test_rows.iter().map(|&i| na_by_row[i]).collect();
        map.insert(NA.to_string(), mean(&na));
        if let Some(train) = &o.train {
            map.extend(train.iter().map(|(k, v)| (k.clone(), *v)));
        }
        for (r, &i) in o.test_rows.iter().enumerate() {
            per_concept.insert(
                y.concepts()[i].clone(),
                ConceptScores {
                    fold,
                    mse: o.mse[r],
                    f1: o.prf[r].map(|s| s.f1),
                    rho: o.rho_rows[r],
                    na: na_by_row[i],
                },
            );
        }
        per_fold.push(map);
    }

    let config_fingerprint = fingerprint(&(spec, options, plan))?;
    Ok(EvalReport {
        label: String::new(),
        model: spec.clone(),
        options: *options,
        fold_count: plan.fold_count,
        fold_seed: plan.seed,
        concepts: gold.nrows(),
        input_dim: x.ncols(),
        output_dim: gold.ncols(),
        aggregate: aggregate(&per_fold),
        per_fold,
        per_concept,
        config_fingerprint,
    })
}

fn ranking_rows(
    pred: &DMatrix<f64>,
    rows: &[usize],
    supports: &[Vec<usize>],
    options: &EvalOptions,
) -> Result<Vec<Option<Prf>>> {
    rows.iter()
        .enumerate()
        .map(|(r, &i)| {
            if supports[i].is_empty() {
                return Ok(None);
            }
            let row: Vec<f64> = pred.row(r).iter().copied().collect();
            ranking_score(&row, &supports[i], options.top_n, options.ranking).map(Some)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    x: &DataMatrix,
    gold: &DataMatrix,
    spec: &ModelSpec,
    plan: &FoldPlan,
    options: &EvalOptions,
    fold: usize,
    supports: &[Vec<usize>],
    gold_sets: &[Vec<usize>],
    keep_pred: bool,
) -> Result<FoldOutcome> {
    let test_rows = plan.test_rows(fold);
    let train_rows = plan.train_rows(fold);
    let model = spec.fit(&x.select_rows(&train_rows), &gold.select_rows(&train_rows))?;

    let pred = model.predict(&x.select_rows(&test_rows))?;
    let truth = gold.rows_dense(&test_rows);
    let m = truth.ncols() as f64;
    let mse: Vec<f64> = pred
        .row_iter()
        .zip(truth.row_iter())
        .map(|(p, g)| (p - g).norm_squared() / m)
        .collect();
    let prf = ranking_rows(&pred, &test_rows, supports, options)?;
    let rho_rows = spearman_rows(&pred, &truth)?;
    let rho = match options.rho_axis {
        RhoAxis::PerConcept => mean(&rho_rows),
        axis => spearman_rho(&pred, &truth, axis)?,
    };
    let na = if keep_pred {
        Vec::new()
    } else {
        neighbourhood_scores(&pred, &test_rows, gold, gold_sets, options.na_n)?
    };

    let train = if options.train_metrics {
        Some(train_scores(&model, x, gold, &train_rows, supports, options)?)
    } else {
        None
    };

    Ok(FoldOutcome {
        test_rows,
        pred: keep_pred.then_some(pred),
        mse,
        prf,
        rho_rows,
        rho,
        na,
        train,
    })
}

fn train_scores(
    model: &FittedModel,
    x: &DataMatrix,
    gold: &DataMatrix,
    rows: &[usize],
    supports: &[Vec<usize>],
    options: &EvalOptions,
) -> Result<MetricMap> {
    let mut sq = 0.0;
    let mut f1 = Vec::new();
    let mut rho = Vec::new();
    for chunk in rows.chunks(TRAIN_CHUNK) {
        let pred = model.predict(&x.select_rows(chunk))?;
        let truth = gold.rows_dense(chunk);
        sq += squared_error(&pred, &truth);
        f1.extend(ranking_rows(&pred, chunk, supports, options)?.into_iter().flatten().map(|s| s.f1));
        rho.extend(spearman_rows(&pred, &truth)?);
    }
    let mut map = MetricMap::new();
    map.insert(TRAIN_MSE.to_string(), sq / (rows.len() * gold.ncols()) as f64);
    if !f1.is_empty() {
        map.insert(TRAIN_F1.to_string(), mean(&f1));
    }
    map.insert(TRAIN_RHO.to_string(), mean(&rho));
    Ok(map)
}

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Largest sample size enumerated exhaustively.
const MAX_EXACT: usize = 20;

/// Two-sided paired sign-flip test on `a − b`. Enumerates all sign patterns
/// when that is no more work than `iterations` random draws.
pub fn permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".to_string()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>().abs();
    if observed == 0.0 && diffs.iter().all(|d| *d == 0.0) {
        return Ok(1.0);
    }
    let slack = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>();
    let extreme = |s: f64| s.abs() >= observed - slack;

    let n = diffs.len();
    if n <= MAX_EXACT && (1usize << n) <= iterations {
        let total = 1usize << n;
        let count = (0..total)
            .filter(|mask| {
                let s: f64 = diffs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                    .sum();
                extreme(s)
            })
            .count();
        return Ok(count as f64 / total as f64);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    for _ in 0..iterations {
        let s: f64 = diffs
            .iter()
            .map(|d| if rng.random::<bool>() { -d } else { *d })
            .sum();
        if extreme(s) {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (iterations + 1) as f64)
}
