//! Subset-average activation matrices (`S^T A` followed by division by the
//! member counts), mixed subset/instance views, and column sorting.
//!
//! Each subset row is summed in `f64` with a fixed schedule: members are
//! visited in ascending index order in blocks of [`SUM_BLOCK`] rows, and block
//! partials are merged pairwise like a binary counter. The result depends only
//! on the member set, never on the order it was supplied in, and the rounding
//! error grows with `log(|members|)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::NodeId;
use crate::store::{ActivationMatrix, Bundle, StoreError};
use crate::subset::MembershipMatrix;

/// Rows summed sequentially before entering the pairwise tree.
pub const SUM_BLOCK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("subset {subset} lists instance {index}, but the matrix has {n_instances} rows")]
    MemberIndexOutOfRange {
        subset: String,
        index: usize,
        n_instances: usize,
    },
    #[error("unknown subset {0}")]
    UnknownSubset(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row {0} is not in the view")]
    UnknownRow(RowKey),
    #[error("row {0} belongs to an empty subset")]
    EmptyAnchorRow(RowKey),
}

impl AggregateError {
    pub fn code(&self) -> &'static str {
        match self {
            AggregateError::MemberIndexOutOfRange { .. } => "MemberIndexOutOfRange",
            AggregateError::UnknownSubset(_) => "UnknownSubset",
            AggregateError::UnknownNode(_) => "UnknownNode",
            AggregateError::IndexOutOfRange { .. } => "IndexOutOfRange",
            AggregateError::UnknownRow(_) => "UnknownRow",
            AggregateError::EmptyAnchorRow(_) => "EmptyAnchorRow",
        }
    }
}

impl From<StoreError> for AggregateError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownNode(n) => AggregateError::UnknownNode(n.to_string()),
            StoreError::IndexOutOfRange { index, len } => AggregateError::IndexOutOfRange { index, len },
            other => unreachable!("matrix lookups only fail with UnknownNode/IndexOutOfRange: {other}"),
        }
    }
}

/// Identifies a row of the matrix view. Text form: `subset:<id>` or `instance:<index>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RowKey {
    Subset(String),
    Instance(usize),
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKey::Subset(id) => write!(f, "subset:{id}"),
            RowKey::Instance(i) => write!(f, "instance:{i}"),
        }
    }
}

impl FromStr for RowKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(id) = s.strip_prefix("subset:") {
            return Ok(RowKey::Subset(id.to_owned()));
        }
        if let Some(ix) = s.strip_prefix("instance:") {
            return ix
                .parse()
                .map(RowKey::Instance)
                .map_err(|_| format!("bad instance index in row key {s:?}"));
        }
        Err(format!("row key {s:?} must start with `subset:` or `instance:`"))
    }
}

/// Rows of subset means and individual instances over one node's neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetActivationMatrix {
    pub node_id: NodeId,
    pub row_keys: Vec<RowKey>,
    pub n_neurons: usize,
    /// Row-major, `row_keys.len() x n_neurons`.
    pub values: Vec<f64>,
    /// Rows whose subset has no members. Their values are zero and carry no meaning.
    pub empty_rows: Vec<usize>,
}

impl SubsetActivationMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_neurons..(r + 1) * self.n_neurons]
    }

    pub fn is_empty_row(&self, r: usize) -> bool {
        self.empty_rows.binary_search(&r).is_ok()
    }

    pub fn row_position(&self, key: &RowKey) -> Option<usize> {
        self.row_keys.iter().position(|k| k == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnOrder {
    pub node_id: NodeId,
    pub anchor: RowKey,
    /// Neuron indices, anchor value non-increasing, ties by ascending index.
    pub permutation: Vec<usize>,
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += *b;
    }
}

/// Sum of `a`'s rows at `sorted_members` using the fixed pairwise schedule.
fn pairwise_sum(a: &ActivationMatrix, sorted_members: &[usize], out: &mut [f64]) {
    let width = a.n_neurons();
    let mut stack: Vec<(u32, Vec<f64>)> = Vec::new();
    for block in sorted_members.chunks(SUM_BLOCK) {
        let mut acc = vec![0.0f64; width];
        for &i in block {
            for (s, &v) in acc.iter_mut().zip(a.row(i)) {
                *s += f64::from(v);
            }
        }
        let mut level = 0;
        while stack.last().is_some_and(|(l, _)| *l == level) {
            let (_, mut left) = stack.pop().expect("checked non-empty");
            add_into(&mut left, &acc);
            acc = left;
            level += 1;
        }
        stack.push((level, acc));
    }
    out.fill(0.0);
    if let Some((_, mut acc)) = stack.pop() {
        while let Some((_, mut left)) = stack.pop() {
            add_into(&mut left, &acc);
            acc = left;
        }
        out.copy_from_slice(&acc);
    }
}

/// Mean of the given rows of `a` written to `out`. Returns false (and zeros
/// `out`) when `members` is empty.
pub fn mean_row(a: &ActivationMatrix, members: &[usize], out: &mut [f64]) -> bool {
    assert_eq!(out.len(), a.n_neurons());
    if members.is_empty() {
        out.fill(0.0);
        return false;
    }
    if members.windows(2).all(|w| w[0] <= w[1]) {
        pairwise_sum(a, members, out);
    } else {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        pairwise_sum(a, &sorted, out);
    }
    let n = members.len() as f64;
    for v in out.iter_mut() {
        *v /= n;
    }
    true
}

fn check_members(a: &ActivationMatrix, subset: &str, members: &[usize]) -> Result<(), AggregateError> {
    match members.iter().copied().find(|&i| i >= a.n_instances()) {
        Some(index) => Err(AggregateError::MemberIndexOutOfRange {
            subset: subset.to_owned(),
            index,
            n_instances: a.n_instances(),
        }),
        None => Ok(()),
    }
}

/// One mean row per subset of `s`, in `s`'s order.
pub fn aggregate_subsets(
    a: &ActivationMatrix,
    s: &MembershipMatrix,
) -> Result<SubsetActivationMatrix, AggregateError> {
    let width = a.n_neurons();
    let mut values = vec![0.0; s.len() * width];
    let mut empty_rows = Vec::new();
    for (k, id) in s.subsets().iter().enumerate() {
        let members = s.members(k);
        check_members(a, id, members)?;
        if !mean_row(a, members, &mut values[k * width..(k + 1) * width]) {
            empty_rows.push(k);
        }
    }
    Ok(SubsetActivationMatrix {
        node_id: a.node_id().clone(),
        row_keys: s.subsets().iter().cloned().map(RowKey::Subset).collect(),
        n_neurons: width,
        values,
        empty_rows,
    })
}

/// Matrix view for one node: the requested subsets first, then the
/// requested instances, each in the order given. Duplicates are kept.
pub fn assemble_view(
    bundle: &Bundle,
    membership: &MembershipMatrix,
    node: &str,
    subset_rows: &[String],
    instance_rows: &[usize],
) -> Result<SubsetActivationMatrix, AggregateError> {
    let a = bundle.matrix(node)?;
    let width = a.n_neurons();
    let n_rows = subset_rows.len() + instance_rows.len();
    let mut values = vec![0.0; n_rows * width];
    let mut row_keys = Vec::with_capacity(n_rows);
    let mut empty_rows = Vec::new();

    for (r, id) in subset_rows.iter().enumerate() {
        let members = membership
            .members_of(id)
            .ok_or_else(|| AggregateError::UnknownSubset(id.clone()))?;
        check_members(a, id, members)?;
        if !mean_row(a, members, &mut values[r * width..(r + 1) * width]) {
            empty_rows.push(r);
        }
        row_keys.push(RowKey::Subset(id.clone()));
    }
    for (offset, &index) in instance_rows.iter().enumerate() {
        let r = subset_rows.len() + offset;
        let src = bundle.activation_row(node, index)?;
        for (dst, &v) in values[r * width..(r + 1) * width].iter_mut().zip(src) {
            *dst = f64::from(v);
        }
        row_keys.push(RowKey::Instance(index));
    }

    Ok(SubsetActivationMatrix {
        node_id: a.node_id().clone(),
        row_keys,
        n_neurons: width,
        values,
        empty_rows,
    })
}

/// Order the neurons by the anchor row's values, largest first.
pub fn sort_columns(
    view: &SubsetActivationMatrix,
    anchor: &RowKey,
) -> Result<ColumnOrder, AggregateError> {
    let r = view
        .row_position(anchor)
        .ok_or_else(|| AggregateError::UnknownRow(anchor.clone()))?;
    if view.is_empty_row(r) {
        return Err(AggregateError::EmptyAnchorRow(anchor.clone()));
    }
    let row = view.row(r);
    let mut permutation: Vec<usize> = (0..view.n_neurons).collect();
    // Stable sort keeps ascending index order among equal values.
    permutation.sort_by(|&i, &j| row[j].total_cmp(&row[i]));
    Ok(ColumnOrder {
        node_id: view.node_id.clone(),
        anchor: anchor.clone(),
        permutation,
    })
}
