use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CONCEPTS: usize = 40;
const FEATURES: usize = 12;
const LATENT: usize = 3;
const DIM: usize = 8;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Sparse count norms and word2vec embeddings sharing a latent factor, plus
/// two norm concepts with no vector.
fn write_fixture(dir: &Path) {
    let mut rng = Lcg(7);
    let z: Vec<Vec<f64>> = (0..CONCEPTS).map(|_| (0..LATENT).map(|_| rng.next() * 2.0 - 1.0).collect()).collect();
    let a: Vec<Vec<f64>> = (0..LATENT).map(|_| (0..FEATURES).map(|_| rng.next() * 2.0 - 1.0).collect()).collect();
    let b: Vec<Vec<f64>> = (0..LATENT).map(|_| (0..DIM).map(|_| rng.next() * 2.0 - 1.0).collect()).collect();

    let mut norm = String::new();
    for (i, zi) in z.iter().enumerate().chain([(CONCEPTS, &z[0]), (CONCEPTS + 1, &z[1])]) {
        let mut any = false;
        for f in 0..FEATURES {
            let s: f64 = (0..LATENT).map(|l| zi[l] * a[l][f]).sum();
            let v = (s * 12.0).round();
            if v > 0.0 || (!any && f == FEATURES - 1) {
                let _ = writeln!(norm, "concept{i}\tfeature{f}\t{}", v.max(1.0));
                any = true;
            }
        }
    }
    std::fs::write(dir.join("norm.tsv"), norm).unwrap();

    let mut emb = format!("{CONCEPTS} {DIM}\n");
    for (i, zi) in z.iter().enumerate() {
        let cells: Vec<String> = (0..DIM)
            .map(|d| {
                let s: f64 = (0..LATENT).map(|l| zi[l] * b[l][d]).sum();
                format!("{:.6}", s + 0.05 * (rng.next() - 0.5))
            })
            .collect();
        let _ = writeln!(emb, "concept{i} {}", cells.join(" "));
    }
    std::fs::write(dir.join("emb.txt"), emb).unwrap();
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text = format!(
        "name = \"{name}\"\ndataset = \"synthetic\"\nnorm = \"norm.tsv\"\nnorm_format = \"canonical\"\n\
         embeddings = \"emb.txt\"\nmethod = \"plsr\"\nk = 3\nfolds = 5\noutput_dir = \"out\"\n\
         formats = [\"json\", \"markdown\"]\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn normprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normprobe")).args(args).output().unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: Output) -> Value {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn align_reports_dropped_concepts() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let dropped = dir.path().join("dropped.txt");
    let v = ok_json(normprobe(&[
        "align",
        "--norm",
        s(&dir.path().join("norm.tsv")),
        "--embeddings",
        s(&dir.path().join("emb.txt")),
        "--dropped-out",
        s(&dropped),
    ]));
    assert_eq!(v["norm_concepts"], CONCEPTS + 2);
    assert_eq!(v["aligned"], CONCEPTS);
    assert_eq!(v["embedding_dim"], DIM);
    let listed = std::fs::read_to_string(&dropped).unwrap();
    assert_eq!(listed.lines().collect::<Vec<_>>(), ["concept40", "concept41"]);
}

#[test]
fn strict_missing_policy_fails_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let e = err_json(normprobe(&[
        "align",
        "--norm",
        s(&dir.path().join("norm.tsv")),
        "--embeddings",
        s(&dir.path().join("emb.txt")),
        "--missing",
        "error",
    ]));
    assert_eq!(e["error"], "MissingEmbedding");
}

#[test]
fn ingest_writes_canonical_norms() {
    let dir = tempfile::tempdir().unwrap();
    let raw = "Concept\tFeature\tWB_Label\tBR_Label\tProd_Freq\n\
               apple\tis_red\tvisual-colour\tvisual-form_and_surface\t12\n\
               apple\ta_fruit\tsuperordinate\ttaxonomic\t20\n\
               car\thas_wheels\tpart\tvisual-form_and_surface\t25\n";
    let input = dir.path().join("mcrae.txt");
    std::fs::write(&input, raw).unwrap();
    let out = dir.path().join("mcrae.tsv");
    let v = ok_json(normprobe(&["ingest", "--dataset", "mcrae", "--input", s(&input), "--out", s(&out)]));
    assert_eq!(v["stats"]["concepts"], 2);
    assert_eq!(v["stats"]["triples"], 3);
    let meta = std::fs::read_to_string(dir.path().join("mcrae.tsv.meta")).unwrap();
    assert!(meta.contains("dataset\tmcrae"));
    assert!(meta.contains("relation\ta_fruit\ttaxonomic"));
}

#[test]
fn run_writes_bundle_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "exp", "ablations = [\"rand\", \"shuffle\"]\n");
    let v = ok_json(normprobe(&["run", "--config", s(&cfg)]));
    for label in ["sys", "upper", "rand", "rand-upper", "shuffle", "shuffle-upper"] {
        assert!(v["aggregate"][label]["mse"].is_number(), "missing {label}");
    }
    let json_path = dir.path().join("out/exp.json");
    let first = std::fs::read(&json_path).unwrap();
    assert!(dir.path().join("out/exp.md").exists());

    ok_json(normprobe(&["run", "--config", s(&cfg)]));
    assert_eq!(std::fs::read(&json_path).unwrap(), first);

    let bundle: Value = serde_json::from_slice(&first).unwrap();
    let sys = bundle["reports"]["sys"]["aggregate"]["rho"].as_f64().unwrap();
    let rand = bundle["reports"]["rand"]["aggregate"]["rho"].as_f64().unwrap();
    assert!(sys > rand, "system rho {sys} should beat random {rand}");
    assert!(bundle["significance"]["sys~rand"].is_number());
}

#[test]
fn evaluate_and_upper_bound_split_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "split", "ablations = [\"rand\"]\n");
    let v = ok_json(normprobe(&["evaluate", "--config", s(&cfg)]));
    let labels: Vec<&String> = v["aggregate"].as_object().unwrap().keys().collect();
    assert_eq!(labels, ["sys"]);
    let v = ok_json(normprobe(&["upper-bound", "--config", s(&cfg)]));
    let labels: Vec<&String> = v["aggregate"].as_object().unwrap().keys().collect();
    assert_eq!(labels, ["rand-upper", "upper"]);
}

#[test]
fn fit_saves_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "fit", "");
    let model = dir.path().join("model.txt");
    let v = ok_json(normprobe(&["fit", "--config", s(&cfg), "--out", s(&model)]));
    assert_eq!(v["concepts"], CONCEPTS);
    let loaded = normprobe::model_io::load_model(&model).unwrap();
    assert!(matches!(loaded, normprobe::eval::FittedModel::Plsr(_)));
}

#[test]
fn ablate_writes_canonical_targets() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let norm = dir.path().join("norm.tsv");
    for kind in ["rand", "shuffle", "cdiff"] {
        let out = dir.path().join(format!("{kind}.tsv"));
        let v = ok_json(normprobe(&["ablate", "--kind", kind, "--norm", s(&norm), "--seed", "3", "--out", s(&out)]));
        assert_eq!(v["stats"]["concepts"], CONCEPTS + 2, "{kind}");
        let back = normprobe::dataset::load_canonical(&out).unwrap();
        assert_eq!(back.concept_count(), CONCEPTS + 2);
    }
    let e = err_json(normprobe(&[
        "ablate",
        "--kind",
        "taxshuffle",
        "--norm",
        s(&norm),
        "--out",
        s(&dir.path().join("t.tsv")),
    ]));
    assert_eq!(e["error"], "MissingTaxonomyMeta");
}

#[test]
fn sweep_selects_a_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "sw", "");
    let v = ok_json(normprobe(&["sweep", "--config", s(&cfg), "--grid", "1,2,3,5"]));
    let k = v["selected_k"].as_u64().unwrap();
    assert!([1, 2, 3, 5].contains(&k));
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("out/sw.sweep.svg").exists());
}

#[test]
fn report_rerenders_bundles() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "rep", "upper_bounds = false\n");
    ok_json(normprobe(&["run", "--config", s(&cfg)]));
    let out = dir.path().join("again");
    let v = ok_json(normprobe(&[
        "report",
        "--input",
        s(&dir.path().join("out/rep.json")),
        "--format",
        "csv",
        "--out",
        s(&out),
    ]));
    assert_eq!(v["files"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(out.join("rep.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn reproduce_builds_a_table() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let suite = dir.path().join("table1.toml");
    std::fs::write(
        &suite,
        "table = 1\noutput_dir = \"tables\"\nformats = [\"markdown\"]\n\n\
         [[experiment]]\nname = \"plsr\"\ndataset = \"synthetic\"\nnorm = \"norm.tsv\"\nnorm_format = \"canonical\"\n\
         embeddings = \"emb.txt\"\nmethod = \"plsr\"\nk = 3\nfolds = 4\nablations = [\"rand\"]\nupper_bounds = false\n",
    )
    .unwrap();
    let out = normprobe(&["reproduce", "--table", "1", "--config", s(&suite)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("tables/table1.md").exists());

    let e = err_json(normprobe(&["reproduce", "--table", "3", "--config", s(&suite)]));
    assert_eq!(e["error"], "ConfigInvalid");
    assert_eq!(e["field"], "table");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let cfg = write_config(dir.path(), "bad", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"plsr\"", "\"svm\"");
    std::fs::write(&cfg, text).unwrap();
    let e = err_json(normprobe(&["run", "--config", s(&cfg)]));
    assert_eq!(e["error"], "ConfigInvalid");
    assert_eq!(e["field"], "method");
}
