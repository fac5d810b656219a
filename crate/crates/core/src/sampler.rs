//! Working-sample selection and the instance selection panel.
//!
//! The sample is stratified by true label. Class quotas follow the
//! largest-remainder (Hamilton) method with ties going to the earlier class.
//! Pinned instances count against their class's quota; a class whose pins
//! exceed its quota, or whose quota exceeds its size, is fixed at that bound
//! and the remaining budget is re-apportioned among the other classes.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::store::Bundle;

pub const DEFAULT_BUDGET: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("pinned instance id {0:?} is not in the bundle")]
    UnknownPinnedId(String),
    #[error("budget {budget} cannot hold {pinned} pinned instances")]
    BudgetTooSmall { budget: usize, pinned: usize },
    #[error("sample index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
}

impl SampleError {
    pub fn code(&self) -> &'static str {
        match self {
            SampleError::UnknownPinnedId(_) => "UnknownPinnedId",
            SampleError::BudgetTooSmall { .. } => "BudgetTooSmall",
            SampleError::IndexOutOfRange { .. } => "IndexOutOfRange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    StratifiedByTrueLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpec {
    pub budget: usize,
    /// Instance ids that must appear in the sample.
    pub pinned: Vec<String>,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            budget: DEFAULT_BUDGET,
            pinned: Vec::new(),
            seed: 0,
            strategy: Strategy::default(),
        }
    }
}

/// Hamilton apportionment of `budget` seats over `weights`.
///
/// Each class `c` receives `floor(budget * w_c / W)` plus one extra seat for
/// the `budget - sum(floors)` largest remainders, earliest class first on ties.
/// Integer arithmetic throughout, so the result is exact.
pub fn largest_remainder(budget: usize, weights: &[usize]) -> Vec<usize> {
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut seats = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (c, &w) in weights.iter().enumerate() {
        let num = budget as u128 * w as u128;
        seats.push((num / total) as usize);
        remainders.push((num % total, c));
    }
    let leftover = budget - seats.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(leftover) {
        seats[c] += 1;
    }
    seats
}

/// Per-class sample sizes honouring pins (lower bounds) and class sizes (upper bounds).
pub fn class_allocation(budget: usize, class_sizes: &[usize], pinned: &[usize]) -> Vec<usize> {
    let k = class_sizes.len();
    let mut fixed: Vec<Option<usize>> = vec![None; k];
    loop {
        let fixed_total: usize = fixed.iter().flatten().sum();
        let remaining = budget.saturating_sub(fixed_total);
        let weights: Vec<usize> = (0..k)
            .map(|c| if fixed[c].is_some() { 0 } else { class_sizes[c] })
            .collect();
        let quota = largest_remainder(remaining, &weights);
        let mut changed = false;
        for c in 0..k {
            if fixed[c].is_some() {
                continue;
            }
            if pinned[c] > quota[c] {
                fixed[c] = Some(pinned[c]);
                changed = true;
            } else if quota[c] > class_sizes[c] {
                fixed[c] = Some(class_sizes[c]);
                changed = true;
            }
        }
        if !changed {
            return (0..k).map(|c| fixed[c].unwrap_or(quota[c])).collect();
        }
    }
}

/// Draw the working sample. Returns ascending instance indices.
pub fn draw_sample(bundle: &Bundle, spec: &SampleSpec) -> Result<Vec<usize>, SampleError> {
    let mut pinned = BTreeSet::new();
    for id in &spec.pinned {
        let i = bundle
            .instance_by_id(id)
            .ok_or_else(|| SampleError::UnknownPinnedId(id.clone()))?;
        pinned.insert(i);
    }
    if spec.budget < pinned.len() {
        return Err(SampleError::BudgetTooSmall {
            budget: spec.budget,
            pinned: pinned.len(),
        });
    }
    let n = bundle.n_instances();
    if spec.budget >= n {
        return Ok((0..n).collect());
    }

    let n_classes = bundle.classes().len();
    let mut pinned_by_class = vec![Vec::new(); n_classes];
    let mut free_by_class = vec![Vec::new(); n_classes];
    for rec in bundle.instances() {
        let c = bundle.class_index(&rec.true_label).expect("validated label");
        if pinned.contains(&rec.index) {
            pinned_by_class[c].push(rec.index);
        } else {
            free_by_class[c].push(rec.index);
        }
    }
    let sizes: Vec<usize> = (0..n_classes)
        .map(|c| pinned_by_class[c].len() + free_by_class[c].len())
        .collect();
    let pin_counts: Vec<usize> = pinned_by_class.iter().map(Vec::len).collect();
    let alloc = class_allocation(spec.budget, &sizes, &pin_counts);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sample = Vec::with_capacity(spec.budget);
    for c in 0..n_classes {
        sample.extend_from_slice(&pinned_by_class[c]);
        let want = alloc[c] - pin_counts[c];
        let free = &free_by_class[c];
        sample.extend(index::sample(&mut rng, free.len(), want).into_iter().map(|k| free[k]));
    }
    sample.sort_unstable();
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelGroup {
    pub class: String,
    pub correct: Vec<usize>,
    pub misclassified: Vec<usize>,
}

/// Sampled instances grouped by true label, split by prediction outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstancePanel {
    pub groups: Vec<PanelGroup>,
}

/// Group `sample` for the selection panel. Within each list instances are
/// ordered by their score for the predicted class, descending, then by index.
pub fn build_panel(bundle: &Bundle, sample: &[usize]) -> Result<InstancePanel, SampleError> {
    let mut groups: Vec<PanelGroup> = bundle
        .classes()
        .iter()
        .map(|c| PanelGroup {
            class: c.clone(),
            correct: Vec::new(),
            misclassified: Vec::new(),
        })
        .collect();
    let confidence = |i: usize| {
        let rec = &bundle.instances()[i];
        rec.scores[bundle.class_index(&rec.predicted_label).expect("validated label")]
    };
    for &i in sample {
        let rec = bundle.instance(i).map_err(|_| SampleError::IndexOutOfRange {
            index: i,
            len: bundle.n_instances(),
        })?;
        let g = &mut groups[bundle.class_index(&rec.true_label).expect("validated label")];
        if rec.is_correct() {
            g.correct.push(i);
        } else {
            g.misclassified.push(i);
        }
    }
    for g in &mut groups {
        for list in [&mut g.correct, &mut g.misclassified] {
            list.sort_by(|&a, &b| confidence(b).total_cmp(&confidence(a)).then(a.cmp(&b)));
        }
    }
    Ok(InstancePanel { groups })
}
