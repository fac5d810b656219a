use std::fs;
use std::path::Path;

use neuroscope_core::store::{dump_file_name, INSTANCES_FILE, MANIFEST_FILE};
use neuroscope_core::synth::{question_bundle, tabular_bundle, QuestionSpec, QUESTION_CLASSES};
use neuroscope_core::{load_bundle, save_bundle, ActivationMatrix, NodeId, StoreError};

fn saved_fixture() -> (tempfile::TempDir, neuroscope_core::synth::Generated) {
    let gen = question_bundle(&QuestionSpec::default());
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&gen.bundle, dir.path()).unwrap();
    (dir, gen)
}

fn rewrite_json(path: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn question_fixture_round_trips() {
    let (dir, gen) = saved_fixture();
    let loaded = load_bundle(dir.path()).unwrap();
    assert_eq!(loaded.n_instances(), 1000);
    let widths: Vec<(String, usize)> = loaded
        .matrices()
        .iter()
        .map(|(id, m)| (id.to_string(), m.n_neurons()))
        .collect();
    assert_eq!(
        widths,
        [("concat_out".into(), 384), ("fc_out".into(), 128), ("softmax_out".into(), 6)]
    );
    assert_eq!(loaded.classes(), QUESTION_CLASSES);
    for (i, rec) in loaded.instances().iter().enumerate() {
        assert_eq!(rec.true_label, QUESTION_CLASSES[gen.true_class[i]]);
        assert_eq!(rec.predicted_label, QUESTION_CLASSES[gen.predicted_class[i]]);
        assert_eq!(rec, &gen.bundle.instances()[i]);
    }
    for (id, m) in gen.bundle.matrices() {
        let other = loaded.matrix(id.as_str()).unwrap();
        assert_eq!(other.values(), m.values(), "{id}");
    }
    assert_eq!(loaded.graph(), gen.bundle.graph());
    assert_eq!(
        loaded.activation_row("fc_out", 38).unwrap(),
        gen.bundle.activation_row("fc_out", 38).unwrap()
    );
}

#[test]
fn loads_are_deterministic() {
    let (dir, _) = saved_fixture();
    let a = load_bundle(dir.path()).unwrap();
    let b = load_bundle(dir.path()).unwrap();
    assert_eq!(a.instances(), b.instances());
    assert_eq!(a.matrices(), b.matrices());
}

#[test]
fn short_dump_is_a_header_mismatch() {
    let (dir, gen) = saved_fixture();
    let m = gen.bundle.matrix("concat_out").unwrap();
    let rows = 999;
    let short = ActivationMatrix::new(
        NodeId::from("concat_out"),
        rows,
        m.n_neurons(),
        m.values()[..rows * m.n_neurons()].to_vec(),
    )
    .unwrap();
    let file = dir.path().join(dump_file_name(&NodeId::from("concat_out")));
    fs::write(&file, short.encode()).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert_eq!(err.code(), "HeaderMismatch", "{err}");

    // Header still claims 1000 rows but the payload is cut short.
    let mut bytes = m.encode();
    bytes.truncate(bytes.len() - 4 * m.n_neurons());
    fs::write(&file, bytes).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "HeaderMismatch");
}

#[test]
fn label_outside_class_list() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join(INSTANCES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    rec["true_label"] = "XYZ".into();
    lines[3] = rec.to_string();
    fs::write(&path, lines.join("\n")).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, StoreError::LabelOutsideClassList { ref label, .. } if label == "XYZ"));
}

#[test]
fn metadata_row_count_must_match() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join(INSTANCES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(998).collect();
    fs::write(&path, kept.join("\n")).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "RowCountMismatch");
}

#[test]
fn manifest_errors() {
    let (dir, _) = saved_fixture();
    let path = dir.path().join(MANIFEST_FILE);
    let original = fs::read_to_string(&path).unwrap();

    rewrite_json(&path, |v| v["nodes"][0]["id"] = "embedded".into());
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "UnknownNodeInManifest");

    fs::write(&path, &original).unwrap();
    rewrite_json(&path, |v| v["nodes"][1]["neurons"] = 64.into());
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "HeaderMismatch");

    fs::write(&path, &original).unwrap();
    rewrite_json(&path, |v| v["nodes"][2]["file"] = "gone.act".into());
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "MissingFile");

    fs::write(&path, "not json").unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "MalformedFile");

    fs::remove_file(&path).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap_err().code(), "MissingFile");
}

#[test]
fn lookups_report_unknown_nodes_and_indices() {
    let bundle = question_bundle(&QuestionSpec::default()).bundle;
    assert!(matches!(bundle.matrix("embedded"), Err(StoreError::UnknownNode(_))));
    assert!(matches!(bundle.matrix("FC_OUT"), Err(StoreError::UnknownNode(_))));
    let err = bundle.activation_row("fc_out", 1000).unwrap_err();
    assert!(matches!(err, StoreError::IndexOutOfRange { index: 1000, len: 1000 }));
    assert!(bundle.activation_row("fc_out", 999).is_ok());
    assert!(bundle.instance(1000).is_err());
}

#[test]
fn feature_bundles_round_trip() {
    let gen = tabular_bundle(50, 3, &[4, 7], 11);
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&gen.bundle, dir.path()).unwrap();
    let loaded = load_bundle(dir.path()).unwrap();
    assert_eq!(loaded.instances(), gen.bundle.instances());
    assert_eq!(loaded.matrices(), gen.bundle.matrices());
}
