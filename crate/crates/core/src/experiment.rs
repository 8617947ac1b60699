//! Config-driven experiments: one fold plan shared by the system run, every
//! ablation and every upper bound; hyperparameter sweeps; results-table suites.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::{generate, upper_bound, AblationKind, AblationSpec, CATEGORICAL_MAX_DENSITY};
use crate::dataset::{build_matrix, ingest_norm_file, load_canonical, save_canonical, DatasetId, NormMatrix};
use crate::embeddings::{align, load_embeddings, EmbeddingFormat, MissingPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    cross_validate, fingerprint, permutation_test, EvalOptions, EvalReport, FfnnSpec, FoldPlan,
    ModelSpec, DEFAULT_PERMUTATIONS, F1, MSE, NA, RHO, TRAIN_F1, TRAIN_MSE, TRAIN_RHO,
};
use crate::ffnn::{Activation, TrainConfig};
use crate::matrix::DataMatrix;
use crate::plsr::PlsrConfig;
use crate::report::ReportFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnnSettings {
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub full_batch: bool,
    #[serde(default)]
    pub train_seed: u64,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_activation() -> String {
    "tanh".to_string()
}

mod defaults {
    use crate::ffnn::TrainConfig;

    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn learning_rate() -> f64 {
        TrainConfig::default().learning_rate
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn folds() -> usize {
        crate::eval::DEFAULT_FOLDS
    }
    pub fn yes() -> bool {
        true
    }
    pub fn norm_format() -> String {
        "raw".to_string()
    }
    pub fn embedding_format() -> String {
        "word2vec".to_string()
    }
    pub fn missing() -> String {
        "drop".to_string()
    }
    pub fn formats() -> Vec<String> {
        vec!["json".to_string(), "markdown".to_string()]
    }
    pub fn output_dir() -> std::path::PathBuf {
        "out".into()
    }
}

impl Default for FfnnSettings {
    fn default() -> Self {
        FfnnSettings {
            activation: default_activation(),
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            full_batch: false,
            train_seed: 0,
            init_seed: 0,
        }
    }
}

/// One experiment as written in a TOML file. Relative paths are resolved
/// against the directory of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: String,
    pub norm: PathBuf,
    /// `raw` distribution file or `canonical` TSV.
    #[serde(default = "defaults::norm_format")]
    pub norm_format: String,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "defaults::embedding_format")]
    pub embedding_format: String,
    /// `drop` or `error` for concepts without an embedding.
    #[serde(default = "defaults::missing")]
    pub missing: String,
    pub method: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub ffnn: FfnnSettings,
    #[serde(default)]
    pub sweep: Vec<usize>,
    #[serde(default = "defaults::folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold_seed: u64,
    #[serde(default)]
    pub ablations: Vec<String>,
    #[serde(default)]
    pub ablation_seed: u64,
    #[serde(default = "defaults::yes")]
    pub upper_bounds: bool,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::formats")]
    pub formats: Vec<String>,
    /// Write generated ablation targets as canonical TSV.
    #[serde(default)]
    pub save_ablations: bool,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Maps a TOML error to the offending key when the message names one.
fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("<document>")
        .to_string();
    invalid(field, msg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Experiment> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_toml(&text)?.validate(base)
    }

    pub fn validate(&self, base_dir: &Path) -> Result<Experiment> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(invalid("name", "use letters, digits, '-', '_' or '.'"));
        }
        let dataset: DatasetId = self
            .dataset
            .parse()
            .map_err(|_| invalid("dataset", format!("unknown dataset {:?}", self.dataset)))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let norm_path = resolve(&self.norm);
        if !norm_path.is_file() {
            return Err(invalid("norm", format!("{} does not exist", norm_path.display())));
        }
        let canonical = match self.norm_format.as_str() {
            "raw" => false,
            "canonical" => true,
            other => return Err(invalid("norm_format", format!("expected raw or canonical, got {other:?}"))),
        };
        let embeddings = match &self.embeddings {
            Some(p) => {
                let path = resolve(p);
                if !path.is_file() {
                    return Err(invalid("embeddings", format!("{} does not exist", path.display())));
                }
                Some(path)
            }
            None => None,
        };
        let embedding_format: EmbeddingFormat = self
            .embedding_format
            .parse()
            .map_err(|_| invalid("embedding_format", format!("unknown format {:?}", self.embedding_format)))?;
        let missing: MissingPolicy = self
            .missing
            .parse()
            .map_err(|_| invalid("missing", format!("expected drop or error, got {:?}", self.missing)))?;

        let spec = match self.method.as_str() {
            "plsr" => {
                let k = self.k.ok_or_else(|| invalid("k", "plsr needs k"))?;
                if k == 0 {
                    return Err(invalid("k", "must be at least 1"));
                }
                ModelSpec::Plsr(PlsrConfig::new(k))
            }
            "ffnn" => {
                let hidden = self.hidden.ok_or_else(|| invalid("hidden", "ffnn needs a hidden size"))?;
                if hidden == 0 {
                    return Err(invalid("hidden", "must be at least 1"));
                }
                let f = &self.ffnn;
                let activation = match f.activation.as_str() {
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    other => return Err(invalid("ffnn.activation", format!("unknown activation {other:?}"))),
                };
                if f.epochs == 0 {
                    return Err(invalid("ffnn.epochs", "must be at least 1"));
                }
                if !(f.learning_rate.is_finite() && f.learning_rate > 0.0) {
                    return Err(invalid("ffnn.learning_rate", "must be positive"));
                }
                if f.batch_size == 0 {
                    return Err(invalid("ffnn.batch_size", "must be at least 1"));
                }
                ModelSpec::Ffnn(FfnnSpec {
                    hidden,
                    activation,
                    train: TrainConfig {
                        epochs: f.epochs,
                        learning_rate: f.learning_rate,
                        batch_size: f.batch_size,
                        full_batch: f.full_batch,
                        seed: f.train_seed,
                        ..TrainConfig::default()
                    },
                    init_seed: f.init_seed,
                })
            }
            other => return Err(invalid("method", format!("expected plsr or ffnn, got {other:?}"))),
        };
        if self.sweep.contains(&0) {
            return Err(invalid("sweep", "grid values must be at least 1"));
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sweep", "grid must be strictly ascending"));
        }
        if self.folds < 2 {
            return Err(invalid("folds", "need at least 2 folds"));
        }
        let mut ablations = Vec::with_capacity(self.ablations.len());
        for (i, a) in self.ablations.iter().enumerate() {
            let kind: AblationKind = a
                .parse()
                .map_err(|_| invalid(format!("ablations[{i}]"), format!("unknown ablation {a:?}")))?;
            if kind == AblationKind::UpperBound {
                return Err(invalid(format!("ablations[{i}]"), "upper bounds are set with upper_bounds"));
            }
            if ablations.contains(&kind) {
                return Err(invalid(format!("ablations[{i}]"), format!("{a:?} listed twice")));
            }
            ablations.push(kind);
        }
        if self.eval.top_n == 0 {
            return Err(invalid("eval.top_n", "must be at least 1"));
        }
        if self.eval.na_n == 0 {
            return Err(invalid("eval.na_n", "must be at least 1"));
        }
        let mut formats = Vec::with_capacity(self.formats.len());
        for (i, f) in self.formats.iter().enumerate() {
            formats.push(
                f.parse::<ReportFormat>()
                    .map_err(|_| invalid(format!("formats[{i}]"), format!("unknown format {f:?}")))?,
            );
        }
        Ok(Experiment {
            config: self.clone(),
            dataset,
            norm_path,
            canonical_norm: canonical,
            embeddings,
            embedding_format,
            missing,
            spec,
            ablations,
            formats,
            output_dir: resolve(&self.output_dir),
        })
    }
}

/// A validated config with resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: DatasetId,
    pub norm_path: PathBuf,
    pub canonical_norm: bool,
    pub embeddings: Option<PathBuf>,
    pub embedding_format: EmbeddingFormat,
    pub missing: MissingPolicy,
    pub spec: ModelSpec,
    pub ablations: Vec<AblationKind>,
    pub formats: Vec<ReportFormat>,
    pub output_dir: PathBuf,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    tool_version: &'a str,
    config: &'a ExperimentConfig,
    norm_sha256: String,
    embeddings_sha256: Option<String>,
}

impl Experiment {
    /// Hash of everything that can change a number: the config minus its
    /// output settings, plus the contents of the input files.
    pub fn fingerprint(&self) -> Result<String> {
        let mut config = self.config.clone();
        config.output_dir = PathBuf::new();
        config.formats.clear();
        config.save_ablations = false;
        config.norm = PathBuf::new();
        config.embeddings = config.embeddings.map(|_| PathBuf::new());
        fingerprint(&FingerprintInput {
            tool_version: env!("CARGO_PKG_VERSION"),
            config: &config,
            norm_sha256: file_digest(&self.norm_path)?,
            embeddings_sha256: self.embeddings.as_deref().map(file_digest).transpose()?,
        })
    }

    /// Ranking metric reported for this norm.
    pub fn headline_metric(&self, y: &NormMatrix) -> &'static str {
        headline_metric(self.dataset, y)
    }
}

pub fn headline_metric(dataset: DatasetId, y: &NormMatrix) -> &'static str {
    let continuous = match dataset {
        DatasetId::Synthetic => y.density() >= CATEGORICAL_MAX_DENSITY,
        d => d.is_continuous(),
    };
    if continuous {
        RHO
    } else {
        F1
    }
}

/// Inputs of an experiment after ingestion and alignment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub norm: NormMatrix,
    pub feature_meta: BTreeMap<String, String>,
    /// Concepts in the norm before alignment.
    pub norm_concepts: usize,
    pub x: Option<DataMatrix>,
    pub dropped: Vec<String>,
}

pub fn prepare(exp: &Experiment) -> Result<PreparedData> {
    let canonical = if exp.canonical_norm {
        load_canonical(&exp.norm_path)
    } else {
        ingest_norm_file(exp.dataset, &exp.norm_path)
    }
    .map_err(|e| e.in_stage("ingest"))?;
    let matrix = build_matrix(&canonical);
    let norm_concepts = matrix.nrows();
    let feature_meta = canonical.feature_meta().clone();
    match &exp.embeddings {
        None => Ok(PreparedData {
            norm: matrix,
            feature_meta,
            norm_concepts,
            x: None,
            dropped: Vec::new(),
        }),
        Some(path) => {
            let table = load_embeddings(path, exp.embedding_format).map_err(|e| e.in_stage("align"))?;
            let pair = align(&table, &matrix, exp.missing).map_err(|e| e.in_stage("align"))?;
            Ok(PreparedData {
                norm: pair.y,
                feature_meta,
                norm_concepts,
                x: Some(DataMatrix::Dense(pair.x)),
                dropped: pair.dropped,
            })
        }
    }
}

/// Everything one experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBundle {
    pub name: String,
    pub fingerprint: String,
    pub dataset: DatasetId,
    pub method: String,
    pub size: usize,
    pub headline_metric: String,
    pub fold_count: usize,
    pub fold_seed: u64,
    pub ablation_seed: u64,
    pub norm_concepts: usize,
    pub concepts: usize,
    pub features: usize,
    pub input_dim: Option<usize>,
    pub dropped: Vec<String>,
    /// Keyed by run label: `sys`, `upper`, `rand`, `rand-upper`, ...
    pub reports: BTreeMap<String, EvalReport>,
    /// Paired permutation p-values of the headline metric, `sys~<label>`.
    pub significance: BTreeMap<String, f64>,
}

fn method_name(spec: &ModelSpec) -> &'static str {
    match spec {
        ModelSpec::Plsr(_) => "plsr",
        ModelSpec::Ffnn(_) => "ffnn",
    }
}

fn upper_label(base: &str) -> String {
    if base == "sys" {
        "upper".to_string()
    } else {
        format!("{base}-upper")
    }
}

/// Runs the system, each ablation and the upper bounds on one fold plan.
/// Without embeddings only the upper bounds are run.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentBundle> {
    let fp = exp.fingerprint()?;
    let data = prepare(exp)?;
    let cfg = &exp.config;
    let plan = FoldPlan::new(data.norm.nrows(), cfg.folds, cfg.fold_seed).map_err(|e| e.in_stage("evaluate"))?;

    let mut targets: Vec<(String, NormMatrix)> = vec![("sys".to_string(), data.norm.clone())];
    for &kind in &exp.ablations {
        let spec = AblationSpec {
            kind,
            seed: cfg.ablation_seed,
            base_norm_id: exp.dataset.to_string(),
        };
        let target = generate(&spec, &data.norm, &data.feature_meta).map_err(|e| e.in_stage("ablate"))?;
        if cfg.save_ablations {
            save_ablation(exp, kind, &target, &data.feature_meta)?;
        }
        targets.push((kind.to_string(), target));
    }

    let mut reports = BTreeMap::new();
    for (label, target) in &targets {
        if let Some(x) = &data.x {
            let mut r = cross_validate(x, target, &exp.spec, &plan, &cfg.eval)
                .map_err(|e| e.in_stage(format!("evaluate {label}")))?;
            r.label = label.clone();
            r.config_fingerprint = fp.clone();
            reports.insert(label.clone(), r);
        }
        if cfg.upper_bounds {
            let up = upper_label(label);
            let mut r = upper_bound(target, &exp.spec, &plan, &cfg.eval)
                .map_err(|e| e.in_stage(format!("upper-bound {label}")))?;
            r.label = up.clone();
            r.config_fingerprint = fp.clone();
            reports.insert(up, r);
        }
    }

    let headline = exp.headline_metric(&data.norm);
    let significance = significance(&reports, headline, cfg.fold_seed)?;
    Ok(ExperimentBundle {
        name: cfg.name.clone(),
        fingerprint: fp,
        dataset: exp.dataset,
        method: method_name(&exp.spec).to_string(),
        size: exp.spec.size(),
        headline_metric: headline.to_string(),
        fold_count: plan.fold_count,
        fold_seed: plan.seed,
        ablation_seed: cfg.ablation_seed,
        norm_concepts: data.norm_concepts,
        concepts: data.norm.nrows(),
        features: data.norm.ncols(),
        input_dim: data.x.as_ref().map(DataMatrix::ncols),
        dropped: data.dropped,
        reports,
        significance,
    })
}

fn significance(reports: &BTreeMap<String, EvalReport>, metric: &str, seed: u64) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let Some(sys) = reports.get("sys") else {
        return Ok(out);
    };
    let base: BTreeMap<String, f64> = sys.concept_values(metric).into_iter().collect();
    for (label, r) in reports {
        if label == "sys" {
            continue;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = r
            .concept_values(metric)
            .into_iter()
            .filter_map(|(c, v)| base.get(&c).map(|s| (*s, v)))
            .unzip();
        if a.is_empty() {
            continue;
        }
        out.insert(format!("sys~{label}"), permutation_test(&a, &b, DEFAULT_PERMUTATIONS, seed)?);
    }
    Ok(out)
}

fn save_ablation(
    exp: &Experiment,
    kind: AblationKind,
    target: &NormMatrix,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    std::fs::create_dir_all(&exp.output_dir).map_err(|e| Error::io(&exp.output_dir, e))?;
    let path = exp.output_dir.join(format!("{}.{kind}.tsv", exp.config.name));
    let canonical = target
        .to_canonical(exp.dataset, meta.clone())
        .map_err(|e| e.in_stage("ablate"))?;
    save_canonical(&canonical, &path).map_err(|e| e.in_stage("ablate"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub train_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub test_na: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub fingerprint: String,
    pub dataset: DatasetId,
    pub method: String,
    pub metric: String,
    pub fold_seed: u64,
    pub points: Vec<SweepPoint>,
    pub selected_k: usize,
}

/// Index of the smallest test MSE, earliest on ties.
pub fn select_elbow(points: &[SweepPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if best.is_none_or(|b| p.test_mse < points[b].test_mse) {
            best = Some(i);
        }
    }
    best
}

/// Cross-validates the system at every grid size on one fold plan.
pub fn sweep_k(exp: &Experiment, grid: &[usize]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(invalid("sweep", "grid is empty"));
    }
    if grid.contains(&0) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sweep", "grid must be strictly ascending and at least 1"));
    }
    let fp = exp.fingerprint()?;
    let data = prepare(exp)?;
    let x = data
        .x
        .as_ref()
        .ok_or_else(|| invalid("embeddings", "a sweep maps embeddings and needs them"))?;
    let cfg = &exp.config;
    let plan = FoldPlan::new(data.norm.nrows(), cfg.folds, cfg.fold_seed)?;
    let options = EvalOptions {
        train_metrics: true,
        ..cfg.eval
    };
    let metric = exp.headline_metric(&data.norm);
    let train_key = if metric == RHO { TRAIN_RHO } else { TRAIN_F1 };
    let mut points = Vec::with_capacity(grid.len());
    for &k in grid {
        let r = cross_validate(x, &data.norm, &exp.spec.with_size(k), &plan, &options)
            .map_err(|e| e.in_stage(format!("sweep k={k}")))?;
        points.push(SweepPoint {
            k,
            train_mse: r.get(TRAIN_MSE).unwrap_or(f64::NAN),
            test_mse: r.get(MSE).unwrap_or(f64::NAN),
            train_metric: r.get(train_key),
            test_metric: r.get(metric),
            test_na: r.get(NA).unwrap_or(f64::NAN),
        });
    }
    let selected_k = points[select_elbow(&points).expect("grid is non-empty")].k;
    Ok(SweepReport {
        name: cfg.name.clone(),
        fingerprint: fp,
        dataset: exp.dataset,
        method: method_name(&exp.spec).to_string(),
        metric: metric.to_string(),
        fold_seed: plan.seed,
        points,
        selected_k,
    })
}

/// A file building one results table from several experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub table: u32,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::formats")]
    pub formats: Vec<String>,
    pub experiment: Vec<ExperimentConfig>,
}

/// Results tables a suite can build.
pub const SUPPORTED_TABLES: [u32; 5] = [1, 3, 4, 5, 6];

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub table: u32,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub experiments: Vec<Experiment>,
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn load(path: &Path) -> Result<Suite> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        SuiteConfig::from_toml(&text)?.validate(base)
    }

    pub fn validate(&self, base_dir: &Path) -> Result<Suite> {
        if !SUPPORTED_TABLES.contains(&self.table) {
            return Err(invalid("table", format!("expected one of {SUPPORTED_TABLES:?}")));
        }
        if self.experiment.is_empty() {
            return Err(invalid("experiment", "suite lists no experiments"));
        }
        let mut experiments = Vec::with_capacity(self.experiment.len());
        for (i, e) in self.experiment.iter().enumerate() {
            let exp = e.validate(base_dir).map_err(|err| match err {
                Error::ConfigInvalid { field, reason } => invalid(format!("experiment[{i}].{field}"), reason),
                other => other,
            })?;
            if self.table == 6 && exp.config.sweep.is_empty() {
                return Err(invalid(format!("experiment[{i}].sweep"), "table 6 needs a sweep grid"));
            }
            experiments.push(exp);
        }
        let mut formats = Vec::new();
        for (i, f) in self.formats.iter().enumerate() {
            formats.push(
                f.parse::<ReportFormat>()
                    .map_err(|_| invalid(format!("formats[{i}]"), format!("unknown format {f:?}")))?,
            );
        }
        Ok(Suite {
            table: self.table,
            output_dir: if self.output_dir.is_absolute() {
                self.output_dir.clone()
            } else {
                base_dir.join(&self.output_dir)
            },
            formats,
            experiments,
        })
    }
}
