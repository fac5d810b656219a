use std::collections::BTreeSet;

use neuroscope_core::sampler::{class_allocation, largest_remainder};
use neuroscope_core::synth::{question_bundle, tabular_bundle, QuestionSpec};
use neuroscope_core::{build_panel, draw_sample, Bundle, SampleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn class_counts(bundle: &Bundle, sample: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; bundle.classes().len()];
    for &i in sample {
        counts[bundle.class_index(&bundle.instances()[i].true_label).unwrap()] += 1;
    }
    counts
}

#[test]
fn quotas_are_within_one_of_proportional() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let k = rng.random_range(1..10);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(0..5000)).collect();
        let total: usize = sizes.iter().sum();
        if total == 0 {
            continue;
        }
        let budget = rng.random_range(0..total.min(3000) + 1);
        let seats = largest_remainder(budget, &sizes);
        assert_eq!(seats.iter().sum::<usize>(), budget);
        for (s, w) in seats.iter().zip(&sizes) {
            let quota = budget as f64 * *w as f64 / total as f64;
            assert!((*s as f64 - quota).abs() < 1.0, "{s} vs {quota}");
        }
        let alloc = class_allocation(budget, &sizes, &vec![0; k]);
        assert_eq!(alloc.iter().sum::<usize>(), budget);
        assert!(alloc.iter().zip(&sizes).all(|(a, s)| a <= s));
    }
}

#[test]
fn sample_is_stratified_and_seeded() {
    let q = question_bundle(&QuestionSpec { n_instances: 3000, ..Default::default() }).bundle;
    let spec = SampleSpec { budget: 1000, seed: 4, ..Default::default() };
    let s = draw_sample(&q, &spec).unwrap();
    assert_eq!(s.len(), 1000);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    let sizes = class_counts(&q, &(0..3000).collect::<Vec<_>>());
    assert_eq!(class_counts(&q, &s), largest_remainder(1000, &sizes));
    assert_eq!(draw_sample(&q, &spec).unwrap(), s);
    assert_ne!(draw_sample(&q, &SampleSpec { seed: 5, ..spec }).unwrap(), s);
}

#[test]
fn small_bundles_are_taken_whole() {
    let q = question_bundle(&QuestionSpec { n_instances: 400, ..Default::default() }).bundle;
    let s = draw_sample(&q, &SampleSpec::default()).unwrap();
    assert_eq!(s, (0..400).collect::<Vec<_>>());
}

#[test]
fn pins_are_always_present() {
    let q = question_bundle(&QuestionSpec { n_instances: 5000, ..Default::default() }).bundle;
    for seed in 0..20 {
        let spec = SampleSpec {
            budget: 300,
            pinned: vec!["q120".into(), "q126".into(), "q38".into()],
            seed,
            ..Default::default()
        };
        let s = draw_sample(&q, &spec).unwrap();
        assert_eq!(s.len(), 300);
        for i in [38, 120, 126] {
            assert!(s.binary_search(&i).is_ok());
        }
    }
    let bad = SampleSpec { pinned: vec!["q999999".into()], ..Default::default() };
    assert_eq!(draw_sample(&q, &bad).unwrap_err().code(), "UnknownPinnedId");
    let tight = SampleSpec { budget: 1, pinned: vec!["q1".into(), "q2".into()], ..Default::default() };
    assert_eq!(draw_sample(&q, &tight).unwrap_err().code(), "BudgetTooSmall");
}

#[test]
fn panel_partitions_and_orders_the_sample() {
    let q = question_bundle(&QuestionSpec::default()).bundle;
    let sample: Vec<usize> = (0..1000).collect();
    let panel = build_panel(&q, &sample).unwrap();
    let mut seen = BTreeSet::new();
    for (g, class) in panel.groups.iter().zip(q.classes()) {
        assert_eq!(&g.class, class);
        for (list, correct) in [(&g.correct, true), (&g.misclassified, false)] {
            let conf = |i: usize| {
                let r = &q.instances()[i];
                r.scores[q.class_index(&r.predicted_label).unwrap()]
            };
            let mut expected = list.clone();
            expected.sort_by(|&a, &b| conf(b).partial_cmp(&conf(a)).unwrap().then(a.cmp(&b)));
            assert_eq!(list, &expected);
            for &i in list.iter() {
                let r = &q.instances()[i];
                assert_eq!(&r.true_label, class);
                assert_eq!(r.true_label == r.predicted_label, correct);
                assert!(seen.insert(i));
            }
        }
    }
    assert_eq!(seen.len(), 1000);
    let num = panel.groups.iter().find(|g| g.class == "NUM").unwrap();
    assert!(!num.misclassified.is_empty());
    assert!(num.misclassified.iter().any(|&i| q.instances()[i].predicted_label == "DESC"));
    assert!(num.correct.contains(&38) && num.misclassified.contains(&120));
}

#[test]
fn perfect_classifier_has_empty_misclassified_lists() {
    let q = question_bundle(&QuestionSpec {
        n_instances: 300,
        num_confusion: 0.0,
        base_error: 0.0,
        ..Default::default()
    })
    .bundle;
    // The generator forces 120 and 126 to be confused; everything else is correct.
    let sample: Vec<usize> = (0..300).filter(|&i| i != 120 && i != 126).collect();
    let panel = build_panel(&q, &sample).unwrap();
    assert!(panel.groups.iter().all(|g| g.misclassified.is_empty()));
    assert_eq!(panel.groups.iter().map(|g| g.correct.len()).sum::<usize>(), 298);
    let one = tabular_bundle(20, 1, &[2], 3).bundle;
    let panel = build_panel(&one, &(0..20).collect::<Vec<_>>()).unwrap();
    assert_eq!(panel.groups.len(), 1);
    assert_eq!(build_panel(&one, &[20]).unwrap_err().code(), "IndexOutOfRange");
}
