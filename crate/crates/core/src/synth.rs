//! Synthetic bundles for tests, benchmarks and demos.
//!
//! [`question_bundle`] mimics a six-class question classifier built on a
//! word-level CNN: class means are well separated at the last hidden layer
//! except for `NUM`, whose mean sits close to `DESC` and whose instances are
//! often predicted as `DESC`. [`tabular_bundle`] produces feature-map
//! instances over a plain operator/tensor chain.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{ComputationGraph, Edge, GraphNode, NodeId, NodeKind};
use crate::store::{ActivationMatrix, Bundle, DisplayPayload, FeatureValue, InstanceRecord};
use crate::subset::{CompareOp, FieldPath, Literal, Predicate};

pub const QUESTION_CLASSES: [&str; 6] = ["ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM"];

const DESC: usize = 1;
const NUM: usize = 5;

fn tensor(id: &str, inspectable: bool) -> GraphNode {
    GraphNode {
        id: id.into(),
        kind: NodeKind::Tensor,
        display_name: id.to_owned(),
        op_type: None,
        inspectable,
    }
}

fn operator(id: &str, op_type: &str) -> GraphNode {
    GraphNode {
        id: id.into(),
        kind: NodeKind::Operator,
        display_name: id.to_owned(),
        op_type: Some(op_type.to_owned()),
        inspectable: false,
    }
}

fn edge(from: &str, to: &str) -> Edge {
    Edge {
        from: from.into(),
        to: to.into(),
    }
}

/// Word-level CNN: embedding, one conv + max-pool branch per filter width,
/// all pools writing into `concat_out`, then dropout, a fully connected
/// layer and softmax. `concat_out`, `fc_out` and `softmax_out` are inspectable.
pub fn word_cnn_graph(filter_widths: &[usize]) -> ComputationGraph {
    let mut nodes = vec![
        tensor("tokens", false),
        operator("embedding", "embedding_lookup"),
        tensor("embedded", false),
    ];
    let mut edges = vec![edge("tokens", "embedding"), edge("embedding", "embedded")];
    let branch_nodes: Vec<[String; 3]> = filter_widths
        .iter()
        .map(|w| [format!("conv{w}"), format!("conv{w}_out"), format!("maxpool{w}")])
        .collect();
    for [conv, conv_out, pool] in &branch_nodes {
        nodes.push(operator(conv, "conv"));
        nodes.push(tensor(conv_out, false));
        nodes.push(operator(pool, "maxpool"));
    }
    nodes.push(tensor("concat_out", true));
    for [conv, conv_out, pool] in &branch_nodes {
        edges.push(edge("embedded", conv));
        edges.push(edge(conv, conv_out));
        edges.push(edge(conv_out, pool));
        edges.push(edge(pool, "concat_out"));
    }
    nodes.extend([
        operator("dropout", "dropout"),
        tensor("dropout_out", false),
        operator("fc", "matmul"),
        tensor("fc_out", true),
        operator("softmax", "softmax"),
        tensor("softmax_out", true),
    ]);
    edges.extend([
        edge("concat_out", "dropout"),
        edge("dropout", "dropout_out"),
        edge("dropout_out", "fc"),
        edge("fc", "fc_out"),
        edge("fc_out", "softmax"),
        edge("softmax", "softmax_out"),
    ]);
    ComputationGraph::new(nodes, edges).expect("fixture graph is valid")
}

/// Softmax scores whose argmax is `predicted`.
fn scores_for(rng: &mut ChaCha8Rng, n_classes: usize, predicted: usize) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut logits: Vec<f64> = (0..n_classes).map(|_| noise.sample(rng)).collect();
    let top = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != predicted)
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[predicted] = if top.is_finite() { top } else { 0.0 } + rng.random_range(0.5..3.0);
    let m = logits[predicted];
    let exp: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

fn question_text(rng: &mut ChaCha8Rng, class: usize, predicted: usize, i: usize) -> String {
    const PLACES: [&str; 5] = ["Peru", "Norway", "Ohio", "Kenya", "Tokyo"];
    const THINGS: [&str; 5] = ["photosynthesis", "a quasar", "jazz", "inflation", "an atom"];
    let place = PLACES[rng.random_range(0..PLACES.len())];
    let thing = THINGS[rng.random_range(0..THINGS.len())];
    match (class, predicted) {
        (NUM, DESC) => format!("What is the population of {place}? (#{i})"),
        (NUM, _) => format!("How many rivers flow through {place}? (#{i})"),
        (DESC, _) => format!("What is {thing}? (#{i})"),
        (0, _) => format!("What does the abbreviation in {place} stand for? (#{i})"),
        (2, _) => format!("Which animal is the symbol of {place}? (#{i})"),
        (3, _) => format!("Who founded {place}? (#{i})"),
        _ => format!("Where is {place}? (#{i})"),
    }
}

#[derive(Debug, Clone)]
pub struct QuestionSpec {
    pub n_instances: usize,
    /// Width of the last hidden layer (`fc_out`).
    pub hidden: usize,
    /// Filters per branch; `concat_out` has `3 * filters` neurons.
    pub filters: usize,
    /// Probability that a `NUM` instance is predicted as `DESC`.
    pub num_confusion: f64,
    /// Probability that any other instance is misclassified.
    pub base_error: f64,
    pub seed: u64,
}

impl Default for QuestionSpec {
    fn default() -> Self {
        QuestionSpec {
            n_instances: 1000,
            hidden: 128,
            filters: 128,
            num_confusion: 0.3,
            base_error: 0.03,
            seed: 7,
        }
    }
}

/// Ground truth retained by the generator.
#[derive(Debug, Clone)]
pub struct Generated {
    pub bundle: Bundle,
    pub true_class: Vec<usize>,
    pub predicted_class: Vec<usize>,
}

/// Instances 38 and 47 are correctly classified `NUM` questions and 120 and
/// 126 are `NUM` questions predicted as `DESC` (when `n_instances` allows).
pub fn question_bundle(spec: &QuestionSpec) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = QUESTION_CLASSES.len();
    let n = spec.n_instances;
    let unit = Normal::new(0.0, 1.0).unwrap();

    let mut true_class: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut predicted_class: Vec<usize> = true_class
        .iter()
        .map(|&c| {
            if c == NUM && rng.random_bool(spec.num_confusion) {
                DESC
            } else if c != NUM && rng.random_bool(spec.base_error) {
                (c + rng.random_range(1..k)) % k
            } else {
                c
            }
        })
        .collect();
    for (i, pred) in [(38, NUM), (47, NUM), (120, DESC), (126, DESC)] {
        if i < n {
            true_class[i] = NUM;
            predicted_class[i] = pred;
        }
    }

    // Class means at the last hidden layer; NUM lies near DESC.
    let mut fc_means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..spec.hidden).map(|_| 3.0 * unit.sample(&mut rng)).collect())
        .collect();
    fc_means[NUM] = fc_means[DESC]
        .iter()
        .map(|m| m + 0.6 * unit.sample(&mut rng))
        .collect();
    let concat_width = 3 * spec.filters;
    let concat_means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..concat_width).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let mut instances = Vec::with_capacity(n);
    let mut fc = Vec::with_capacity(n * spec.hidden);
    let mut concat = Vec::with_capacity(n * concat_width);
    let mut softmax = Vec::with_capacity(n * k);
    for i in 0..n {
        let (c, p) = (true_class[i], predicted_class[i]);
        // Misclassified instances look like their predicted class to the model.
        for m in &fc_means[p] {
            fc.push((m + unit.sample(&mut rng)).max(0.0) as f32);
        }
        for m in &concat_means[c] {
            concat.push((m + 1.5 * unit.sample(&mut rng)).max(0.0) as f32);
        }
        let scores = scores_for(&mut rng, k, p);
        softmax.extend(scores.iter().map(|&s| s as f32));
        instances.push(InstanceRecord {
            index: i,
            id: format!("q{i}"),
            true_label: QUESTION_CLASSES[c].to_owned(),
            predicted_label: QUESTION_CLASSES[p].to_owned(),
            scores,
            display: DisplayPayload::Text(question_text(&mut rng, c, p, i)),
        });
    }

    let matrices = vec![
        ActivationMatrix::new(NodeId::from("concat_out"), n, concat_width, concat).unwrap(),
        ActivationMatrix::new(NodeId::from("fc_out"), n, spec.hidden, fc).unwrap(),
        ActivationMatrix::new(NodeId::from("softmax_out"), n, k, softmax).unwrap(),
    ];
    let bundle = Bundle::new(
        word_cnn_graph(&[3, 4, 5]),
        QUESTION_CLASSES.iter().map(|s| s.to_string()).collect(),
        instances,
        matrices,
    )
    .expect("generated bundle is valid");
    Generated {
        bundle,
        true_class,
        predicted_class,
    }
}

/// Chain graph `input -> layer0 -> h0 -> layer1 -> h1 ...`; every `h*` is inspectable.
pub fn chain_graph(layers: usize) -> ComputationGraph {
    let mut nodes = vec![tensor("input", false)];
    let mut edges = Vec::new();
    let mut prev = "input".to_owned();
    for l in 0..layers {
        let op = format!("layer{l}");
        let out = format!("h{l}");
        nodes.push(operator(&op, "dense"));
        nodes.push(tensor(&out, true));
        edges.push(edge(&prev, &op));
        edges.push(edge(&op, &out));
        prev = out;
    }
    ComputationGraph::new(nodes, edges).expect("chain graph is valid")
}

/// Random feature-map bundle with `n_classes` classes `c0, c1, ...` and one
/// inspectable node `h<l>` per entry of `widths`. Every instance carries
/// numeric `age` and string `topic`; about half also carry numeric `income`.
pub fn tabular_bundle(n_instances: usize, n_classes: usize, widths: &[usize], seed: u64) -> Generated {
    const TOPICS: [&str; 4] = ["sports", "politics", "science", "arts"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
    let mut true_class = Vec::with_capacity(n_instances);
    let mut predicted_class = Vec::with_capacity(n_instances);
    let mut instances = Vec::with_capacity(n_instances);
    for i in 0..n_instances {
        let c = rng.random_range(0..n_classes);
        let p = if n_classes > 1 && rng.random_bool(0.2) {
            (c + rng.random_range(1..n_classes)) % n_classes
        } else {
            c
        };
        let mut features = BTreeMap::new();
        features.insert("age".to_owned(), FeatureValue::Number(rng.random_range(10..80) as f64));
        features.insert(
            "topic".to_owned(),
            FeatureValue::Text(TOPICS[rng.random_range(0..TOPICS.len())].to_owned()),
        );
        if rng.random_bool(0.5) {
            features.insert("income".to_owned(), FeatureValue::Number(rng.random_range(0.0..100.0)));
        }
        instances.push(InstanceRecord {
            index: i,
            id: format!("r{i}"),
            true_label: classes[c].clone(),
            predicted_label: classes[p].clone(),
            scores: scores_for(&mut rng, n_classes, p),
            display: DisplayPayload::Features(features),
        });
        true_class.push(c);
        predicted_class.push(p);
    }
    let matrices = widths
        .iter()
        .enumerate()
        .map(|(l, &w)| {
            let values = (0..n_instances * w)
                .map(|_| unit.sample(&mut rng) as f32)
                .collect();
            ActivationMatrix::new(NodeId::new(format!("h{l}")), n_instances, w, values).unwrap()
        })
        .collect();
    let bundle = Bundle::new(chain_graph(widths.len()), classes, instances, matrices)
        .expect("generated bundle is valid");
    Generated {
        bundle,
        true_class,
        predicted_class,
    }
}

/// Row-major `n x dim` unit-variance Gaussian points around `clusters`
/// centres placed on distinct axes so every pair of centres is `spacing`
/// apart. Returns the points and each point's cluster.
pub fn gaussian_clusters(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    spacing: f64,
    seed: u64,
) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(clusters * per_cluster * dim);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        for _ in 0..per_cluster {
            for d in 0..dim {
                let centre = if d == c % dim { spacing / 2f64.sqrt() } else { 0.0 };
                data.push(centre + unit.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    (data, labels)
}

/// Random predicate tree of at most `depth` connective levels over the
/// fields of [`tabular_bundle`] (or of [`question_bundle`] when `with_text`).
pub fn random_predicate<R: Rng>(rng: &mut R, depth: usize, classes: &[String], with_text: bool) -> Predicate {
    if depth == 0 || rng.random_bool(0.3) {
        return random_leaf(rng, classes, with_text);
    }
    match rng.random_range(0..3) {
        0 => Predicate::not(random_predicate(rng, depth - 1, classes, with_text)),
        k => {
            let n = rng.random_range(2..4);
            let items = (0..n)
                .map(|_| random_predicate(rng, depth - 1, classes, with_text))
                .collect();
            if k == 1 {
                Predicate::And(items)
            } else {
                Predicate::Or(items)
            }
        }
    }
}

fn random_op<R: Rng>(rng: &mut R) -> CompareOp {
    [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge]
        [rng.random_range(0..6)]
}

fn random_leaf<R: Rng>(rng: &mut R, classes: &[String], with_text: bool) -> Predicate {
    let class = classes[rng.random_range(0..classes.len())].clone();
    let eq_or_ne = if rng.random_bool(0.5) { CompareOp::Eq } else { CompareOp::Ne };
    match rng.random_range(0..7) {
        0 => Predicate::compare(FieldPath::TrueLabel, eq_or_ne, Literal::Str(class)),
        1 => Predicate::compare(FieldPath::PredictedLabel, eq_or_ne, Literal::Str(class)),
        2 => Predicate::compare(FieldPath::Correct, eq_or_ne, Literal::Bool(rng.random_bool(0.5))),
        3 => Predicate::compare(
            FieldPath::Score(class),
            random_op(rng),
            Literal::Number((rng.random_range(0.0..1.0f64) * 100.0).round() / 100.0),
        ),
        4 if with_text => Predicate::StartsWith {
            path: FieldPath::Text,
            prefix: ["What is", "How", "Who", "Where"][rng.random_range(0..4)].to_owned(),
        },
        5 if with_text => Predicate::Contains {
            path: FieldPath::Text,
            needle: ["population", "Peru", "?", "it's"][rng.random_range(0..4)].to_owned(),
        },
        4 => Predicate::compare(
            FieldPath::Feature("age".into()),
            random_op(rng),
            Literal::Number(rng.random_range(5..85) as f64),
        ),
        5 => Predicate::compare(
            FieldPath::Feature("income".into()),
            random_op(rng),
            Literal::Number(rng.random_range(-10.0..110.0f64).round()),
        ),
        _ if with_text => Predicate::StartsWith {
            path: FieldPath::TrueLabel,
            prefix: class[..1].to_owned(),
        },
        _ => {
            let topic = ["sports", "politics", "science", "arts"][rng.random_range(0..4)];
            if rng.random_bool(0.5) {
                Predicate::compare(FieldPath::Feature("topic".into()), eq_or_ne, Literal::Str(topic.into()))
            } else {
                Predicate::Contains {
                    path: FieldPath::Feature("topic".into()),
                    needle: topic[1..3].to_owned(),
                }
            }
        }
    }
}
