use std::path::{Path, PathBuf};

use graphmatch::checkpoint::{load_checkpoint, save_checkpoint};
use graphmatch::dataset::{canonicalize, dataset_to_string, load_dataset, save_dataset};
use graphmatch::embeddings::load_embeddings;
use graphmatch::Error;
use graphmatch_core::gnb::{forward, GnbConfig, GnbParams};
use graphmatch_core::graphs::{build_label_graph, AssignmentGraph};
use graphmatch_core::rng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn two_record_fixture_loads_normalized() {
    let ds = load_dataset(fixture("two_records.jsonl"), 3).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.feature_dim, 3);
    let b = ds.records[0].instances[0].bbox;
    assert_eq!((b.x, b.y, b.w, b.h), (0.0, 0.0, 0.5, 0.5));
    let b = ds.records[1].instances[1].bbox;
    assert_eq!((b.x, b.y, b.w, b.h), (0.0, 0.5, 1.0, 0.5));
    assert_eq!(ds.records[1].labels.positives().collect::<Vec<_>>(), [0, 2]);
}

#[test]
fn pixel_fixture_loads_normalized() {
    let ds = load_dataset(fixture("pixel_boxes.jsonl"), 3).unwrap();
    assert_eq!(ds.len(), 2);
    let b = ds.records[0].instances[0].bbox;
    assert_eq!((b.x, b.y, b.w, b.h), (104.0 / 500.0, 78.0 / 281.0, 271.0 / 500.0, 105.0 / 281.0));
    assert_eq!(ds.records[0].instances[1].feature, [1e-3, -250.0, 7.0]);
    assert_eq!(ds.records[0].pixel_boxes[1], [133.0, 88.0, 64.0, 35.0]);
}

#[test]
fn save_of_load_is_canonical_form() {
    for name in ["two_records.jsonl", "pixel_boxes.jsonl"] {
        let path = fixture(name);
        let text = std::fs::read_to_string(&path).unwrap();
        let ds = load_dataset(&path, 3).unwrap();
        assert_eq!(dataset_to_string(&ds), canonicalize(&path, &text).unwrap(), "{name}");
    }
    // the first fixture is already canonical
    let path = fixture("two_records.jsonl");
    assert_eq!(dataset_to_string(&load_dataset(&path, 3).unwrap()), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn saved_dataset_loads_back_equal() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_dataset(fixture("pixel_boxes.jsonl"), 3).unwrap();
    let out = dir.path().join("nested/copy.jsonl");
    save_dataset(&out, &ds).unwrap();
    let back = load_dataset(&out, 3).unwrap();
    assert_eq!(back.records, ds.records);
}

#[test]
fn schema_lists_the_record_fields() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/dataset.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let names = |v: &serde_json::Value| -> Vec<String> {
        v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    assert_eq!(names(&schema["required"]), ["id", "width", "height", "labels", "instances"]);
    assert_eq!(
        names(&schema["properties"]["instances"]["items"]["required"]),
        ["feature", "bbox", "confidence", "class"]
    );
}

#[test]
fn label_out_of_range_is_a_data_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let text = std::fs::read_to_string(fixture("two_records.jsonl")).unwrap();
    std::fs::write(&p, text.replace("\"labels\":[0,2]", "\"labels\":[0,7]")).unwrap();
    let err = load_dataset(&p, 3).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn missing_file_is_an_io_error_naming_the_path() {
    let err = load_dataset("/nonexistent/x.jsonl", 3).unwrap_err();
    assert_eq!(err.exit_code(), 5);
    assert!(err.to_string().contains("/nonexistent/x.jsonl"));
}

#[test]
fn embedding_fixture_orders_rows_by_vocabulary() {
    let names: Vec<String> = ["bird", "aeroplane"].iter().map(|s| s.to_string()).collect();
    let e = load_embeddings(fixture("labels.txt"), Some(&names)).unwrap();
    assert_eq!(e.vocab.embeddings().shape(), &[2, 4]);
    assert_eq!(e.vocab.embeddings().row(0), [0.9, 1.0, -1.1, 1.2]);
    assert!(e.duplicates.is_empty());
}

#[test]
fn checkpoint_file_round_trip_scores_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_dataset(fixture("two_records.jsonl"), 3).unwrap();
    let vocab = load_embeddings(fixture("labels.txt"), None).unwrap().vocab;
    let cfg = GnbConfig::new(3, 4, vec![6, 5]).unwrap();
    let p = GnbParams::init(cfg, &mut rng::stream(11, rng::STREAM_INIT)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &p).unwrap();
    let q = load_checkpoint(&path).unwrap();
    let lg = build_label_graph(&vocab).unwrap();
    for r in &ds.records {
        let g = AssignmentGraph::build(&r.instances, &lg, 3).unwrap();
        assert_eq!(forward(&g, &p).unwrap(), forward(&g, &q).unwrap());
    }
}
