use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use normprobe::ablation::{generate, AblationKind, AblationSpec};
use normprobe::dataset::{build_matrix, ingest_norm_file, load_canonical, save_canonical, CanonicalNorm, DatasetId};
use normprobe::embeddings::{align, load_embeddings, EmbeddingFormat, MissingPolicy};
use normprobe::experiment::{prepare, run_experiment, sweep_k, Experiment, ExperimentBundle, ExperimentConfig, SuiteConfig};
use normprobe::model_io::save_model;
use normprobe::report::{emit_bundle, emit_bundles, emit_sweep, emit_tables, results_tables, ReportFormat};
use normprobe::{Error, Result};

#[derive(Parser)]
#[command(name = "normprobe", version, about = "Property inference from word embeddings to feature norms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a norm distribution file to the canonical TSV.
    Ingest {
        #[arg(long)]
        dataset: DatasetId,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match norm concepts to embedding rows and report what is dropped.
    Align {
        #[arg(long)]
        norm: PathBuf,
        /// Dataset of a raw norm file; omit for canonical TSV input.
        #[arg(long)]
        dataset: Option<DatasetId>,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "word2vec")]
        format: EmbeddingFormat,
        #[arg(long, default_value = "drop")]
        missing: MissingPolicy,
        /// Write the dropped concepts here, one per line.
        #[arg(long)]
        dropped_out: Option<PathBuf>,
    },
    /// Fit the configured model on every aligned concept and save it.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate the system mapping only.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a diagnostic target matrix as canonical TSV.
    Ablate {
        #[arg(long)]
        kind: AblationKind,
        #[arg(long)]
        norm: PathBuf,
        /// Dataset of a raw norm file; omit for canonical TSV input.
        #[arg(long)]
        dataset: Option<DatasetId>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-mapping upper bounds for the norm and its configured ablations.
    UpperBound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the system, ablations and upper bounds of one config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cross-validate over a grid of k and pick the test-MSE minimum.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated grid; defaults to the config's `sweep`.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
    },
    /// Re-render saved JSON bundles.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a suite config and build one results table.
    Reproduce {
        #[arg(long)]
        table: u32,
        /// Defaults to configs/table<N>.toml.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_norm(path: &Path, dataset: Option<DatasetId>) -> Result<CanonicalNorm> {
    match dataset {
        Some(d) => ingest_norm_file(d, path),
        None => load_canonical(path),
    }
}

fn paths_json(paths: &[PathBuf]) -> serde_json::Value {
    json!(paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}

fn emit(exp: &Experiment, bundle: &ExperimentBundle) -> Result<serde_json::Value> {
    let files = emit_bundle(bundle, &exp.formats, &exp.output_dir).map_err(|e| e.in_stage("report"))?;
    Ok(json!({
        "name": bundle.name,
        "fingerprint": bundle.fingerprint,
        "aggregate": bundle.reports.iter().map(|(k, r)| (k.clone(), json!(r.aggregate))).collect::<serde_json::Map<_, _>>(),
        "files": paths_json(&files),
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Ingest { dataset, input, out } => {
            let norm = ingest_norm_file(dataset, &input)?;
            save_canonical(&norm, &out)?;
            Ok(json!({ "stats": norm.stats(), "out": out.display().to_string() }))
        }
        Command::Align {
            norm,
            dataset,
            embeddings,
            format,
            missing,
            dropped_out,
        } => {
            let matrix = build_matrix(&load_norm(&norm, dataset)?);
            let table = load_embeddings(&embeddings, format)?;
            let pair = align(&table, &matrix, missing)?;
            if let Some(path) = &dropped_out {
                let mut text = pair.dropped.join("\n");
                if !text.is_empty() {
                    text.push('\n');
                }
                std::fs::write(path, text).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            Ok(json!({
                "norm_concepts": matrix.nrows(),
                "aligned": pair.y.nrows(),
                "dropped": pair.dropped,
                "embedding_dim": table.dim(),
                "features": pair.y.ncols(),
            }))
        }
        Command::Fit { config, out } => {
            let exp = ExperimentConfig::load(&config)?;
            let data = prepare(&exp)?;
            let x = data.x.ok_or_else(|| Error::ConfigInvalid {
                field: "embeddings".to_string(),
                reason: "fitting maps embeddings and needs them".to_string(),
            })?;
            let model = exp.spec.fit(&x, data.norm.values()).map_err(|e| e.in_stage("fit"))?;
            save_model(&model, &out)?;
            Ok(json!({ "concepts": data.norm.nrows(), "out": out.display().to_string() }))
        }
        Command::Evaluate { config } => {
            let mut exp = ExperimentConfig::load(&config)?;
            if exp.embeddings.is_none() {
                return Err(Error::ConfigInvalid {
                    field: "embeddings".to_string(),
                    reason: "evaluation maps embeddings and needs them".to_string(),
                });
            }
            exp.ablations.clear();
            exp.config.ablations.clear();
            exp.config.upper_bounds = false;
            let bundle = run_experiment(&exp)?;
            emit(&exp, &bundle)
        }
        Command::Ablate {
            kind,
            norm,
            dataset,
            seed,
            out,
        } => {
            let canonical = load_norm(&norm, dataset)?;
            let matrix = build_matrix(&canonical);
            let spec = AblationSpec {
                kind,
                seed,
                base_norm_id: canonical.dataset().to_string(),
            };
            let target = generate(&spec, &matrix, canonical.feature_meta())?;
            let result = target.to_canonical(canonical.dataset(), canonical.feature_meta().clone())?;
            save_canonical(&result, &out)?;
            Ok(json!({ "kind": kind, "seed": seed, "stats": result.stats(), "out": out.display().to_string() }))
        }
        Command::UpperBound { config } => {
            let mut exp = ExperimentConfig::load(&config)?;
            exp.embeddings = None;
            exp.config.embeddings = None;
            exp.config.upper_bounds = true;
            let bundle = run_experiment(&exp)?;
            emit(&exp, &bundle)
        }
        Command::Run { config } => {
            let exp = ExperimentConfig::load(&config)?;
            let bundle = run_experiment(&exp)?;
            emit(&exp, &bundle)
        }
        Command::Sweep { config, grid } => {
            let exp = ExperimentConfig::load(&config)?;
            let grid = if grid.is_empty() { exp.config.sweep.clone() } else { grid };
            let sweep = sweep_k(&exp, &grid)?;
            let files = emit_sweep(&sweep, &exp.formats, &exp.output_dir).map_err(|e| e.in_stage("report"))?;
            Ok(json!({ "selected_k": sweep.selected_k, "points": sweep.points, "files": paths_json(&files) }))
        }
        Command::Report { inputs, format, out } => {
            let mut bundles = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                bundles.push(serde_json::from_str::<ExperimentBundle>(&text)?);
            }
            let files = emit_bundles(&bundles, &[format], &out)?;
            Ok(json!({ "files": paths_json(&files) }))
        }
        Command::Reproduce { table, config } => {
            let path = config.unwrap_or_else(|| PathBuf::from(format!("configs/table{table}.toml")));
            let suite = SuiteConfig::load(&path)?;
            if suite.table != table {
                return Err(Error::ConfigInvalid {
                    field: "table".to_string(),
                    reason: format!("{} describes table {}, not {table}", path.display(), suite.table),
                });
            }
            let mut bundles = Vec::new();
            let mut sweeps = Vec::new();
            let mut files = Vec::new();
            for exp in &suite.experiments {
                if table == 6 {
                    let sweep = sweep_k(exp, &exp.config.sweep)?;
                    files.extend(emit_sweep(&sweep, &exp.formats, &suite.output_dir)?);
                    sweeps.push(sweep);
                } else {
                    let bundle = run_experiment(exp)?;
                    files.extend(emit_bundle(&bundle, &exp.formats, &suite.output_dir)?);
                    bundles.push(bundle);
                }
            }
            let tables = results_tables(table, &bundles, &sweeps)?;
            files.extend(emit_tables(table, &tables, &suite.formats, &suite.output_dir)?);
            for t in &tables {
                println!("{}", t.to_markdown());
            }
            Ok(json!({ "table": table, "files": paths_json(&files) }))
        }
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut chain = vec![e.to_string()];
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        chain.push(s.to_string());
        source = s.source();
    }
    let field = match innermost(e) {
        Error::ConfigInvalid { field, .. } => Some(field.clone()),
        _ => None,
    };
    json!({ "error": e.kind(), "message": e.to_string(), "field": field, "causes": &chain[1..] })
}

fn innermost(e: &Error) -> &Error {
    match e {
        Error::Fold { source, .. } | Error::Stage { source, .. } => innermost(source),
        other => other,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
