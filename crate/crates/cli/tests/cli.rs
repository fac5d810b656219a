use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use neuroscope_core::store::dump_file_name;
use neuroscope_core::synth::{question_bundle, QuestionSpec};
use neuroscope_core::{save_bundle, NodeId};

fn fixture(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let spec = QuestionSpec { n_instances: n, ..Default::default() };
    save_bundle(&question_bundle(&spec).bundle, dir.path()).unwrap();
    dir
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroscope"))
        .args(&args[..1])
        .arg(dir)
        .args(&args[1..])
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn ingest_reports_a_summary() {
    let dir = fixture(1000);
    let out = run(&["ingest"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("instances: 1000"));
    assert!(text.contains("node fc_out: 128 neurons"));
    assert!(text.contains("node concat_out: 384 neurons"));
}

#[test]
fn ingest_rejects_a_truncated_dump() {
    let dir = fixture(300);
    let file = dir.path().join(dump_file_name(&NodeId::from("fc_out")));
    let mut bytes = fs::read(&file).unwrap();
    bytes.truncate(bytes.len() - 128 * 4);
    fs::write(&file, bytes).unwrap();
    let out = run(&["ingest"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "HeaderMismatch");
    assert!(out.stdout.is_empty());

    let out = run(&["ingest"], &dir.path().join("missing"));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "MissingFile");
}

#[test]
fn aggregate_prints_one_row_per_subset() {
    let dir = fixture(1000);
    let out = run(&["aggregate", "--node", "fc_out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("row_key,n_members,n0,n1,"));
    assert_eq!(lines[0].split(',').count(), 2 + 128);
    assert!(lines[6].starts_with("subset:class.NUM,"));
    let again = run(&["aggregate", "--node", "fc_out"], dir.path());
    assert_eq!(out.stdout, again.stdout);

    let out = run(
        &["aggregate", "--node", "fc_out", "--instance", "38", "--subset", "text starts_with 'What is'", "--sort-by", "subset:class.NUM"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[7].starts_with("subset:user.1,"));
    assert!(lines[8].starts_with("instance:38,1,"));
    let num: Vec<f64> = lines[6].split(',').skip(2).map(|c| c.parse().unwrap()).collect();
    assert!(num.windows(2).all(|w| w[0] >= w[1]));

    let out = run(&["aggregate", "--node", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "UnknownNode");
    let out = run(&["aggregate", "--node", "fc_out", "--subset", "text <"], dir.path());
    let err = stderr_json(&out);
    assert_eq!(err["code"], "SyntaxError");
    assert!(err["position"].is_u64());
}

#[test]
fn empty_subsets_have_empty_cells() {
    let dir = fixture(200);
    let out = run(&["aggregate", "--node", "softmax_out", "--subset", "false"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert_eq!(last, "subset:user.1,0,,,,,,");
}

#[test]
fn project_is_reproducible() {
    let dir = fixture(150);
    let args = ["project", "--node", "fc_out", "--seed", "7", "--iterations", "300"];
    let a = run(&args, dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&args, dir.path());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index,x,y");
    assert_eq!(lines.len(), 151);
    let c = run(&["project", "--node", "fc_out", "--seed", "8", "--iterations", "300"], dir.path());
    assert_ne!(text.as_bytes(), c.stdout.as_slice());

    let bad = run(&["project", "--node", "fc_out", "--perplexity", "60"], dir.path());
    assert_eq!(stderr_json(&bad)["code"], "PerplexityInfeasible");
}

#[test]
fn export_writes_a_snapshot() {
    let dir = fixture(120);
    let out_file = dir.path().join("snapshot.json");
    let out = Command::new(env!("CARGO_BIN_EXE_neuroscope"))
        .arg("export")
        .arg(dir.path())
        .arg("--out")
        .arg(&out_file)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    assert_eq!(v["instances"].as_array().unwrap().len(), 120);
    assert_eq!(v["subsets"].as_array().unwrap().len(), 6);
    assert_eq!(v["matrices"]["fc_out"]["row_keys"].as_array().unwrap().len(), 6);
    assert_eq!(v["panel"]["groups"].as_array().unwrap().len(), 6);
    assert!(v["members"]["class.NUM"].is_array());
    assert!(v.get("projections").is_none());
}
