use normprobe::dataset::{
    build_matrix, ingest_norm, load_canonical, save_canonical, DatasetId, BINDER_DIMENSIONS,
};
use normprobe::embeddings::{align, parse_embeddings, EmbeddingFormat, MissingPolicy};
use normprobe::Error;

const MCRAE: &str = "\
Concept\tFeature\tWB_Label\tWB_Maj\tWB_Min\tBR_Label\tProd_Freq\tRank_PF\n\
airplane\tflies\tentity_behaviour\tentity\tbehaviour\tvisual-motion\t23\t1\n\
airplane\ta_vehicle\tsuperordinate\tcategorical\tsuper\ttaxonomic\t18\t2\n\
airplane\thas_wings\texternal_component\tentity\tcomponent\tvisual-form_and_surface\t20\t3\n\
bat_(animal)\tflies\tentity_behaviour\tentity\tbehaviour\tvisual-motion\t17\t1\n\
bat_(animal)\tan_animal\tsuperordinate\tcategorical\tsuper\ttaxonomic\t9\t2\n\
bat_(baseball)\tmade_of_wood\tmade_of\tentity\tmaterial\tvisual-form_and_surface\t21\t1\n";

fn buchanan() -> String {
    "where,cue,feature,translated,frequency_feature,normalized_translated,pos_cue\n\
     b,apple,red,red,12,0.4,NN\n\
     b,apple,reds,red,3,0.4,NN\n\
     b,apple,fruit,fruit,20,0.66,NN\n\
     b,apple,,,2,NA,NN\n\
     b,zebra,stripe,stripe,25,0.83,NN\n"
        .to_string()
}

fn binder() -> String {
    let mut header = vec!["Word".to_string(), "Super Category".to_string()];
    header.extend(BINDER_DIMENSIONS.iter().map(|d| d.to_string()));
    let row = |word: &str, base: f64, gap: bool| {
        let mut cells = vec![word.to_string(), "Thing".to_string()];
        for (j, _) in BINDER_DIMENSIONS.iter().enumerate() {
            if gap && j == 3 {
                cells.push("na".to_string());
            } else {
                cells.push(format!("{:.2}", (base + j as f64 * 0.05) % 6.0));
            }
        }
        cells.join(",")
    };
    [header.join(","), row("apple", 1.0, false), row("table", 2.5, true), row("apple", 5.0, false)].join("\n")
}

#[test]
fn mcrae_layout_keeps_senses_and_relations() {
    let norm = ingest_norm(DatasetId::McRae, MCRAE).unwrap();
    assert_eq!(norm.concepts(), ["airplane", "bat_(animal)", "bat_(baseball)"]);
    assert_eq!(norm.triples().len(), 6);
    assert_eq!(norm.feature_meta()["a_vehicle"], "taxonomic");
    assert_eq!(norm.taxonomic_features().len(), 2);
    let m = build_matrix(&norm);
    let (i, j) = (
        m.concepts().iter().position(|c| c == "airplane").unwrap(),
        m.features().iter().position(|f| f == "flies").unwrap(),
    );
    assert_eq!(m.values().get(i, j), 23.0);
}

#[test]
fn mcrae_frequency_outside_range_is_rejected() {
    let bad = MCRAE.replace("\t23\t1", "\t31\t1");
    assert!(matches!(ingest_norm(DatasetId::McRae, &bad), Err(Error::ValueOutOfRange { .. })));
}

#[test]
fn buchanan_collapses_lemmatized_duplicates() {
    let norm = ingest_norm(DatasetId::Buchanan, &buchanan()).unwrap();
    assert_eq!(norm.triples().len(), 3);
    assert_eq!(norm.concepts(), ["apple", "zebra"]);
    let conflicting = buchanan().replace("reds,red,3,0.4", "reds,red,3,0.5");
    assert!(matches!(
        ingest_norm(DatasetId::Buchanan, &conflicting),
        Err(Error::DuplicateTriple { .. })
    ));
}

#[test]
fn binder_keeps_first_duplicate_and_drops_gapped_dimensions() {
    let norm = ingest_norm(DatasetId::Binder, &binder()).unwrap();
    assert_eq!(norm.concepts(), ["apple", "table"]);
    assert_eq!(norm.feature_count(), BINDER_DIMENSIONS.len() - 1);
    assert!(!norm.features().contains(&"color".to_string()));
    let m = build_matrix(&norm);
    let vision = m.features().iter().position(|f| f == "vision").unwrap();
    assert_eq!(m.values().get(0, vision), 1.0);
    assert!(!m.values().is_sparse());
}

#[test]
fn binder_without_dimension_columns_is_unknown_layout() {
    let text = "Word,Vision\napple,1.0\n";
    assert!(matches!(
        ingest_norm(DatasetId::Binder, text),
        Err(Error::UnknownColumnLayout { .. })
    ));
}

#[test]
fn canonical_files_round_trip_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mcrae.tsv");
    let norm = ingest_norm(DatasetId::McRae, MCRAE).unwrap();
    save_canonical(&norm, &path).unwrap();
    let back = load_canonical(&path).unwrap();
    assert_eq!(back, norm);
    std::fs::remove_file(dir.path().join("mcrae.tsv.meta")).unwrap();
    let bare = load_canonical(&path).unwrap();
    assert_eq!(bare.dataset(), DatasetId::Synthetic);
    assert_eq!(bare.triples(), norm.triples());
}

#[test]
fn senses_align_to_one_embedding() {
    let norm = build_matrix(&ingest_norm(DatasetId::McRae, MCRAE).unwrap());
    let table = parse_embeddings("2 3\nairplane 1 0 0\nbat 0 1 0\n", EmbeddingFormat::Word2VecText).unwrap();
    let pair = align(&table, &norm, MissingPolicy::Drop).unwrap();
    assert_eq!(pair.y.nrows(), 3);
    assert!(pair.dropped.is_empty());
    assert_eq!(pair.x.row(1), pair.x.row(2));
    let only_plane = parse_embeddings("1 3\nairplane 1 0 0\n", EmbeddingFormat::Word2VecText).unwrap();
    let pair = align(&only_plane, &norm, MissingPolicy::Drop).unwrap();
    assert_eq!(pair.dropped, ["bat_(animal)", "bat_(baseball)"]);
    assert!(matches!(
        align(&only_plane, &norm, MissingPolicy::Error),
        Err(Error::MissingEmbedding(_))
    ));
}
