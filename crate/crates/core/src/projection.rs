//! Exact t-SNE for projecting instance activations to 2-D.
//!
//! Input affinities are per-point Gaussians over squared Euclidean distances,
//! each bandwidth found by bisection so that the conditional distribution has
//! the requested perplexity, then symmetrized. The embedding minimizes
//! `KL(P || Q)` with Student-t (one degree of freedom) output affinities by
//! gradient descent with momentum, per-coordinate adaptive gains and an
//! initial early-exaggeration phase.
//!
//! Everything is `O(N^2)` in memory and time per iteration; the sampler keeps
//! `N` near a thousand. Runs are bit-for-bit reproducible for a given input
//! and config.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::NodeId;
use crate::store::{Bundle, StoreError};

/// Bisection steps allowed per point when calibrating bandwidths.
pub const MAX_BANDWIDTH_STEPS: usize = 50;
/// Accepted distance between the achieved and target entropy, in nats.
pub const ENTROPY_TOLERANCE: f64 = 1e-6;
/// Lower bound applied to every off-diagonal joint affinity.
pub const AFFINITY_FLOOR: f64 = 1e-12;
/// Standard deviation of the initial embedding coordinates.
pub const INIT_STD: f64 = 1e-4;

const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("perplexity {perplexity} is infeasible for {n} points (need 3 * perplexity < n - 1)")]
    PerplexityInfeasible { perplexity: f64, n: usize },
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error("optimization diverged at iteration {iteration}; try a lower learning rate")]
    NonFiniteEncountered { iteration: usize },
    #[error("projection cancelled")]
    Cancelled,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
}

impl ProjectionError {
    pub fn code(&self) -> &'static str {
        match self {
            ProjectionError::DegenerateInput(_) => "DegenerateInput",
            ProjectionError::PerplexityInfeasible { .. } => "PerplexityInfeasible",
            ProjectionError::InvalidConfig(_) => "InvalidConfig",
            ProjectionError::NonFiniteEncountered { .. } => "NonFiniteEncountered",
            ProjectionError::Cancelled => "Cancelled",
            ProjectionError::UnknownNode(_) => "UnknownNode",
            ProjectionError::IndexOutOfRange { .. } => "IndexOutOfRange",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Iterations during which input affinities are multiplied by `early_exaggeration`.
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 4.0,
            exaggeration_iters: 250,
            learning_rate: 100.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidConfig(m.to_owned()));
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return bad("perplexity must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.early_exaggeration.is_finite() && self.early_exaggeration > 0.0) {
            return bad("early exaggeration must be positive");
        }
        if self.iterations < self.exaggeration_iters {
            return bad("iterations must cover the early-exaggeration phase");
        }
        if self.iterations == 0 {
            return bad("at least one iteration is required");
        }
        Ok(())
    }

    /// Check `3 * perplexity < n - 1`.
    pub fn check_feasible(&self, n: usize) -> Result<(), ProjectionError> {
        if 3.0 * self.perplexity < n as f64 - 1.0 {
            Ok(())
        } else {
            Err(ProjectionError::PerplexityInfeasible {
                perplexity: self.perplexity,
                n,
            })
        }
    }
}

/// Symmetric joint input affinities plus per-point calibration results.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n`, zero diagonal, sums to one.
    pub p: Vec<f64>,
    /// Precision `1 / (2 sigma^2)` chosen for each point.
    pub betas: Vec<f64>,
    /// `exp(H(P_i))` achieved by each point's conditional distribution.
    pub perplexities: Vec<f64>,
    /// Whether the search met [`ENTROPY_TOLERANCE`] within [`MAX_BANDWIDTH_STEPS`].
    pub converged: Vec<bool>,
}

pub fn squared_distances(data: &[f64], dim: usize) -> Vec<f64> {
    let n = data.len() / dim;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let xi = &data[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let xj = &data[j * dim..(j + 1) * dim];
            let s: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional distribution of point `i` at precision `beta`; returns the entropy in nats.
fn conditional_row(dist: &[f64], i: usize, min_d: f64, beta: f64, row: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(row.iter_mut()).enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        let shifted = d - min_d;
        let e = (-beta * shifted).exp();
        *p = e;
        z += e;
        weighted += e * shifted;
    }
    for p in row.iter_mut() {
        *p /= z;
    }
    z.ln() + beta * weighted / z
}

struct Calibration {
    beta: f64,
    entropy: f64,
    converged: bool,
}

/// Bisection on the precision until the row entropy matches `target` (nats).
fn calibrate_row(dist: &[f64], i: usize, target: f64, row: &mut [f64]) -> Calibration {
    let n = dist.len();
    let others = || dist.iter().enumerate().filter(move |&(j, _)| j != i).map(|(_, &d)| d);
    let min_d = others().fold(f64::INFINITY, f64::min);
    let mean_spread = others().map(|d| d - min_d).sum::<f64>() / (n - 1) as f64;
    let mut beta = if mean_spread > 0.0 { 1.0 / mean_spread } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut entropy = conditional_row(dist, i, min_d, beta, row);
    for _ in 0..MAX_BANDWIDTH_STEPS {
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOLERANCE {
            return Calibration {
                beta,
                entropy,
                converged: true,
            };
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        entropy = conditional_row(dist, i, min_d, beta, row);
    }
    Calibration {
        beta,
        entropy,
        converged: (entropy - target).abs() < ENTROPY_TOLERANCE,
    }
}

/// Raise sub-floor entries to the floor and rescale the rest so the total stays one.
fn apply_floor(p: &mut [f64], n: usize) {
    let mut floored = vec![false; p.len()];
    loop {
        let mut fixed_mass = 0.0;
        let mut free_mass = 0.0;
        for (k, &v) in p.iter().enumerate() {
            if k / n == k % n {
                continue;
            }
            if floored[k] {
                fixed_mass += AFFINITY_FLOOR;
            } else {
                free_mass += v;
            }
        }
        let scale = (1.0 - fixed_mass) / free_mass;
        let mut changed = false;
        for (k, v) in p.iter_mut().enumerate() {
            if k / n == k % n {
                continue;
            }
            if floored[k] {
                *v = AFFINITY_FLOOR;
            } else {
                *v *= scale;
                if *v < AFFINITY_FLOOR {
                    floored[k] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

fn affinities_unchecked(data: &[f64], dim: usize, perplexity: f64) -> Result<Affinities, ProjectionError> {
    let n = data.len() / dim;
    let dist = squared_distances(data, dim);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(ProjectionError::DegenerateInput("all points are identical".into()));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut betas = Vec::with_capacity(n);
    let mut perplexities = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    for i in 0..n {
        let c = calibrate_row(&dist[i * n..(i + 1) * n], i, target, &mut cond[i * n..(i + 1) * n]);
        betas.push(c.beta);
        perplexities.push(c.entropy.exp());
        converged.push(c.converged);
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (cond[i * n + j] + cond[j * n + i]) / denom;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    apply_floor(&mut p, n);
    Ok(Affinities {
        n,
        p,
        betas,
        perplexities,
        converged,
    })
}

/// Joint input affinities for `data` (row-major, `dim` columns).
pub fn pairwise_affinities(data: &[f64], dim: usize, perplexity: f64) -> Result<Affinities, ProjectionError> {
    let n = check_points(data, dim)?;
    if n < 4 {
        return Err(ProjectionError::DegenerateInput(format!("{n} points; at least 4 required")));
    }
    ProjectionConfig {
        perplexity,
        ..Default::default()
    }
    .check_feasible(n)?;
    affinities_unchecked(data, dim, perplexity)
}

fn check_points(data: &[f64], dim: usize) -> Result<usize, ProjectionError> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(ProjectionError::DegenerateInput(format!(
            "{} values do not form rows of width {dim}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::DegenerateInput("non-finite input value".into()));
    }
    Ok(data.len() / dim)
}

/// `KL(P || Q)` for a 2-D embedding `y`, computed directly from its definition.
pub fn kl_divergence(p: &[f64], y: &[f64]) -> f64 {
    let n = y.len() / 2;
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                w[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += w[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for k in 0..n * n {
        if p[k] > 0.0 {
            kl += p[k] * (p[k] / (w[k] / z)).ln();
        }
    }
    kl
}

/// Gradient of `KL(exaggeration * P || Q)` with respect to `y`, plus the
/// (unexaggerated) `KL(P || Q)` at `y`. `w` is an `n x n` scratch buffer.
fn gradient_and_kl(
    p: &[f64],
    p_entropy_term: f64,
    y: &[f64],
    exaggeration: f64,
    w: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    let n = y.len() / 2;
    let mut half_z = 0.0;
    let mut p_log_w = 0.0;
    for i in 0..n {
        w[i * n + i] = 0.0;
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let wij = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = wij;
            w[j * n + i] = wij;
            half_z += wij;
            p_log_w += p[i * n + j] * wij.ln();
        }
    }
    let z = 2.0 * half_z;
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        let (yix, yiy) = (y[2 * i], y[2 * i + 1]);
        for j in 0..n {
            let wij = w[i * n + j];
            let m = (exaggeration * p[i * n + j] - wij / z) * wij;
            gx += m * (yix - y[2 * j]);
            gy += m * (yiy - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
    // sum p log(p / q) = sum p log p - sum p log w + log Z, with sum p = 1.
    p_entropy_term - 2.0 * p_log_w + z.ln()
}

/// Analytic gradient of `KL(P || Q)` and the divergence itself.
pub fn kl_gradient(p: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() / 2;
    let mut w = vec![0.0; n * n];
    let mut grad = vec![0.0; y.len()];
    let kl = gradient_and_kl(p, p_log_p(p), y, 1.0, &mut w, &mut grad);
    (kl, grad)
}

fn p_log_p(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// A 2-D embedding and its per-iteration objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// Row-major `n x 2`.
    pub coords: Vec<f64>,
    /// `KL(P || Q)` at the start of every iteration, always against the unexaggerated `P`.
    pub kl_trace: Vec<f64>,
}

pub fn tsne(data: &[f64], dim: usize, config: &ProjectionConfig) -> Result<Embedding, ProjectionError> {
    tsne_cancellable(data, dim, config, &AtomicBool::new(false))
}

/// [`tsne`] that stops with [`ProjectionError::Cancelled`] once `cancel` is set.
pub fn tsne_cancellable(
    data: &[f64],
    dim: usize,
    config: &ProjectionConfig,
    cancel: &AtomicBool,
) -> Result<Embedding, ProjectionError> {
    config.validate()?;
    let n = check_points(data, dim)?;
    if n < 2 {
        return Err(ProjectionError::DegenerateInput(format!("{n} points; at least 2 required")));
    }
    // Below four points the perplexity target cannot be met; the bandwidth
    // search runs out its steps and the result is accepted as is.
    if n >= 4 {
        config.check_feasible(n)?;
    }
    let aff = affinities_unchecked(data, dim, config.perplexity)?;
    run_gradient_descent(&aff.p, n, config, cancel)
}

/// Optimize an embedding for precomputed joint affinities `p` (`n x n`).
pub fn run_gradient_descent(
    p: &[f64],
    n: usize,
    config: &ProjectionConfig,
    cancel: &AtomicBool,
) -> Result<Embedding, ProjectionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut w = vec![0.0; n * n];
    let entropy_term = p_log_p(p);
    let mut kl_trace = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        if cancel.load(Ordering::Relaxed) {
            return Err(ProjectionError::Cancelled);
        }
        let exaggeration = if iter < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch_iter {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let kl = gradient_and_kl(p, entropy_term, &y, exaggeration, &mut w, &mut grad);
        if !kl.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ProjectionError::NonFiniteEncountered { iteration: iter });
        }
        kl_trace.push(kl.max(0.0));

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(sx, sy), i| (sx + y[2 * i], sy + y[2 * i + 1]));
        let (mx, my) = (mx / n as f64, my / n as f64);
        for i in 0..n {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NonFiniteEncountered { iteration: iter });
        }
    }

    Ok(Embedding { coords: y, kl_trace })
}

/// Projection of a node's activations for a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub node_id: NodeId,
    pub point_ids: Vec<usize>,
    pub coords: Vec<f64>,
    pub kl_trace: Vec<f64>,
}

impl ProjectionResult {
    pub fn kl_final(&self) -> Option<f64> {
        self.kl_trace.last().copied()
    }
}

/// Run t-SNE over the activations of `sample` at `node`.
pub fn project_node(
    bundle: &Bundle,
    node: &str,
    sample: &[usize],
    config: &ProjectionConfig,
    cancel: &AtomicBool,
) -> Result<ProjectionResult, ProjectionError> {
    let m = bundle.matrix(node).map_err(|e| match e {
        StoreError::UnknownNode(n) => ProjectionError::UnknownNode(n.to_string()),
        other => ProjectionError::UnknownNode(other.to_string()),
    })?;
    let dim = m.n_neurons();
    let mut data = Vec::with_capacity(sample.len() * dim);
    for &i in sample {
        if i >= m.n_instances() {
            return Err(ProjectionError::IndexOutOfRange {
                index: i,
                len: m.n_instances(),
            });
        }
        data.extend(m.row(i).iter().map(|&v| f64::from(v)));
    }
    let emb = tsne_cancellable(&data, dim, config, cancel)?;
    Ok(ProjectionResult {
        node_id: m.node_id().clone(),
        point_ids: sample.to_vec(),
        coords: emb.coords,
        kl_trace: emb.kl_trace,
    })
}

/// Mask over `result.point_ids`: true where the point belongs to `subset`.
pub fn highlight_membership(result: &ProjectionResult, subset: &[usize]) -> Vec<bool> {
    let members: HashSet<usize> = subset.iter().copied().collect();
    result.point_ids.iter().map(|i| members.contains(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Vertices of a regular 4-simplex: all pairwise distances equal.
    fn simplex() -> Vec<f64> {
        let mut data = vec![0.0; 25];
        for i in 0..5 {
            data[i * 5 + i] = 1.0;
        }
        data
    }

    #[test]
    fn equidistant_points_give_uniform_conditionals() {
        let aff = pairwise_affinities(&simplex(), 5, 1.2).unwrap();
        // Entropy is log(4) whatever the bandwidth, so the search cannot meet 1.2.
        for (&perp, &ok) in aff.perplexities.iter().zip(&aff.converged) {
            assert!((perp - 4.0).abs() < 1e-12);
            assert!(!ok);
        }
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 0.0 } else { 1.0 / 20.0 };
                assert!((aff.p[i * 5 + j] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn infeasible_perplexity() {
        let err = pairwise_affinities(&simplex(), 5, 30.0).unwrap_err();
        assert_eq!(err.code(), "PerplexityInfeasible");
    }

    #[test]
    fn identical_points_are_degenerate() {
        let data = vec![1.0; 12];
        assert_eq!(pairwise_affinities(&data, 2, 1.0).unwrap_err().code(), "DegenerateInput");
    }

    #[test]
    fn floor_keeps_normalization() {
        let n = 6;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    p[i * n + j] = if (i + j) % 2 == 0 { 1e-20 } else { 1.0 };
                }
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        apply_floor(&mut p, n);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..n {
            assert_eq!(p[i * n + i], 0.0);
            for j in 0..n {
                if i != j {
                    assert!(p[i * n + j] >= AFFINITY_FLOOR);
                    assert_eq!(p[i * n + j], p[j * n + i]);
                }
            }
        }
    }

    #[test]
    fn fused_kl_matches_direct_kl() {
        let data: Vec<f64> = (0..40).map(|v| ((v * 37 % 11) as f64).sin()).collect();
        let aff = pairwise_affinities(&data, 4, 2.0).unwrap();
        let y: Vec<f64> = (0..20).map(|v| ((v * 13 % 7) as f64 - 3.0) * 0.7).collect();
        let (kl, _) = kl_gradient(&aff.p, &y);
        assert!((kl - kl_divergence(&aff.p, &y)).abs() < 1e-12);
    }

    #[test]
    fn two_points_stay_finite() {
        let data = vec![0.0, 0.0, 3.0, 4.0];
        let emb = tsne(&data, 2, &ProjectionConfig::default()).unwrap();
        assert!(emb.coords.iter().all(|v| v.is_finite()));
        assert!(emb.kl_trace.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_ne!(emb.coords[0..2], emb.coords[2..4]);
    }

    #[test]
    fn single_point_rejected() {
        assert_eq!(
            tsne(&[1.0, 2.0], 2, &ProjectionConfig::default()).unwrap_err().code(),
            "DegenerateInput"
        );
    }

    #[test]
    fn config_validation() {
        let cfg = ProjectionConfig {
            iterations: 100,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code(), "InvalidConfig");
        let cfg = ProjectionConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code(), "InvalidConfig");
    }

    #[test]
    fn cancellation_stops_the_run() {
        let data: Vec<f64> = (0..60).map(|v| (v as f64 * 0.37).cos()).collect();
        let cancel = AtomicBool::new(true);
        let cfg = ProjectionConfig {
            perplexity: 2.0,
            ..Default::default()
        };
        assert_eq!(
            tsne_cancellable(&data, 3, &cfg, &cancel).unwrap_err(),
            ProjectionError::Cancelled
        );
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<f64> = (0..60).map(|v| (v as f64 * 0.37).cos()).collect();
        let cfg = ProjectionConfig {
            perplexity: 2.0,
            learning_rate: 1e300,
            ..Default::default()
        };
        assert_eq!(tsne(&data, 3, &cfg).unwrap_err().code(), "NonFiniteEncountered");
    }
}
