//! Write the synthetic question-classification bundle to a directory.
//!
//! cargo run -p neuroscope-core --example make_fixture -- <dir> [n_instances]

use neuroscope_core::save_bundle;
use neuroscope_core::synth::{question_bundle, QuestionSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next() else {
        eprintln!("usage: make_fixture <dir> [n_instances]");
        std::process::exit(2);
    };
    let mut spec = QuestionSpec::default();
    if let Some(n) = args.next() {
        spec.n_instances = n.parse().expect("n_instances must be an integer");
    }
    let generated = question_bundle(&spec);
    save_bundle(&generated.bundle, &dir).expect("write bundle");
    println!("wrote {} instances to {dir}", spec.n_instances);
}
