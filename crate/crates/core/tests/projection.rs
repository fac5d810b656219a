use std::sync::atomic::AtomicBool;

use neuroscope_core::projection::{kl_divergence, kl_gradient, squared_distances};
use neuroscope_core::synth::{gaussian_clusters, question_bundle, QuestionSpec};
use neuroscope_core::{
    highlight_membership, pairwise_affinities, project_node, tsne, ProjectionConfig, SubsetRegistry,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n * dim).map(|_| unit.sample(&mut rng)).collect()
}

/// Conditional distribution of point `i` at precision `beta`, from scratch.
fn conditional_row(data: &[f64], dim: usize, i: usize, beta: f64) -> Vec<f64> {
    let n = data.len() / dim;
    let d: Vec<f64> = (0..n)
        .map(|j| {
            (0..dim)
                .map(|k| (data[i * dim + k] - data[j * dim + k]).powi(2))
                .sum::<f64>()
        })
        .collect();
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = (0..n)
        .map(|j| if j == i { 0.0 } else { (-beta * (d[j] - dmin)).exp() })
        .collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
    row
}

fn perplexity(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.exp()
}

#[test]
fn affinities_hit_the_target_perplexity() {
    let (n, dim) = (200, 50);
    let data = gaussian(n, dim, 1);
    let aff = pairwise_affinities(&data, dim, 30.0).unwrap();
    assert!(aff.converged.iter().all(|&c| c));
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let row = conditional_row(&data, dim, i, aff.betas[i]);
        assert!((perplexity(&row) - 30.0).abs() < 1e-2, "point {i}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        cond[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut total = 0.0;
    for i in 0..n {
        assert_eq!(aff.p[i * n + i], 0.0);
        for j in 0..n {
            assert_eq!(aff.p[i * n + j], aff.p[j * n + i]);
            if i != j {
                let expected = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
                assert!((aff.p[i * n + j] - expected).abs() <= 1e-9 * expected.max(1e-12) + 1e-15);
            }
            total += aff.p[i * n + j];
        }
    }
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn within_cluster_affinity_dominates() {
    let (data, labels) = gaussian_clusters(3, 30, 20, 10.0, 4);
    let n = labels.len();
    let aff = pairwise_affinities(&data, 20, 10.0).unwrap();
    let (mut within, mut across) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                within += aff.p[i * n + j];
            } else {
                across += aff.p[i * n + j];
            }
        }
    }
    assert!(within > 0.99, "{within}");
    assert!(across < 0.01);
    let d = squared_distances(&data, 20);
    assert_eq!(d.len(), n * n);
}

#[test]
fn gradient_matches_finite_differences() {
    let data = gaussian(10, 5, 8);
    let aff = pairwise_affinities(&data, 5, 2.0).unwrap();
    let y = gaussian(10, 2, 9);
    let (kl, grad) = kl_gradient(&aff.p, &y);
    assert!((kl - kl_divergence(&aff.p, &y)).abs() < 1e-12);
    let h = 1e-6;
    let mut num = vec![0.0; y.len()];
    for k in 0..y.len() {
        let mut plus = y.clone();
        let mut minus = y.clone();
        plus[k] += h;
        minus[k] -= h;
        num[k] = (kl_divergence(&aff.p, &plus) - kl_divergence(&aff.p, &minus)) / (2.0 * h);
    }
    let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / norm < 1e-4, "relative error {}", diff / norm);
}

#[test]
fn objective_is_translation_invariant() {
    let data = gaussian(12, 4, 3);
    let aff = pairwise_affinities(&data, 4, 3.0).unwrap();
    let y = gaussian(12, 2, 4);
    let shifted: Vec<f64> = y.iter().enumerate().map(|(k, v)| v + if k % 2 == 0 { 3.5 } else { -1.25 }).collect();
    let (a, ga) = kl_gradient(&aff.p, &y);
    let (b, gb) = kl_gradient(&aff.p, &shifted);
    assert!((a - b).abs() < 1e-12);
    for (x, z) in ga.iter().zip(&gb) {
        assert!((x - z).abs() < 1e-12);
    }
}

fn knn_purity(coords: &[f64], labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut agree = 0usize;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[2 * i] - coords[2 * j];
                let dy = coords[2 * i + 1] - coords[2 * j + 1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        agree += d[..k].iter().filter(|&&(_, j)| labels[j] == labels[i]).count();
    }
    agree as f64 / (n * k) as f64
}

#[test]
fn separated_clusters_stay_separated() {
    let (data, labels) = gaussian_clusters(3, 50, 50, 10.0, 11);
    let cfg = ProjectionConfig { seed: 5, ..Default::default() };
    let emb = tsne(&data, 50, &cfg).unwrap();
    assert_eq!(emb.coords.len(), 300);
    assert!(knn_purity(&emb.coords, &labels, 10) >= 0.9);

    let again = tsne(&data, 50, &cfg).unwrap();
    assert_eq!(emb, again);
    let other = tsne(&data, 50, &ProjectionConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(emb.coords, other.coords);

    let trace = &emb.kl_trace;
    assert_eq!(trace.len(), 1000);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&trace[900..]) <= mean(&trace[300..400]));
    assert!(trace.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn projection_of_a_bundle_node() {
    let q = question_bundle(&QuestionSpec { n_instances: 200, ..Default::default() }).bundle;
    let reg = SubsetRegistry::with_defaults(&q);
    let sample: Vec<usize> = (0..200).step_by(2).collect();
    let cfg = ProjectionConfig { iterations: 300, ..Default::default() };
    let res = project_node(&q, "fc_out", &sample, &cfg, &AtomicBool::new(false)).unwrap();
    assert_eq!(res.point_ids, sample);
    assert_eq!(res.coords.len(), 200);
    let mask = highlight_membership(&res, reg.members("class.NUM").unwrap());
    let expected = sample.iter().filter(|&&i| q.instances()[i].true_label == "NUM").count();
    assert_eq!(mask.iter().filter(|&&m| m).count(), expected);
    assert!(res.kl_final().is_some());

    let cancelled = AtomicBool::new(true);
    assert_eq!(
        project_node(&q, "fc_out", &sample, &cfg, &cancelled).unwrap_err().code(),
        "Cancelled"
    );
    assert_eq!(
        project_node(&q, "nope", &sample, &cfg, &AtomicBool::new(false)).unwrap_err().code(),
        "UnknownNode"
    );
    let few: Vec<usize> = (0..20).collect();
    assert_eq!(
        project_node(&q, "fc_out", &few, &ProjectionConfig::default(), &AtomicBool::new(false))
            .unwrap_err()
            .code(),
        "PerplexityInfeasible"
    );
}
