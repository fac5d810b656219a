//! Instance subsets: predicate evaluation and the membership structure.
//!
//! Evaluation is two-valued. An instance that lacks a referenced optional
//! value (a feature it does not carry, or `text` on a feature-only instance)
//! fails the comparison, so `not p` always selects exactly the complement of
//! `p`.

mod predicate;

use std::collections::HashSet;

use thiserror::Error;

use crate::store::{Bundle, FeatureValue, InstanceRecord};

pub use predicate::{parse_predicate, CompareOp, FieldPath, Literal, Predicate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubsetError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown field {path}")]
    UnknownField {
        path: String,
        position: Option<usize>,
    },
    #[error("type mismatch at {position}: {message}")]
    TypeMismatch { position: usize, message: String },
    #[error("duplicate subset id {0}")]
    DuplicateSubsetId(String),
    #[error("unknown subset {0}")]
    UnknownSubset(String),
}

impl SubsetError {
    pub fn code(&self) -> &'static str {
        match self {
            SubsetError::Syntax { .. } => "SyntaxError",
            SubsetError::UnknownField { .. } => "UnknownField",
            SubsetError::TypeMismatch { .. } => "TypeMismatch",
            SubsetError::DuplicateSubsetId(_) => "DuplicateSubsetId",
            SubsetError::UnknownSubset(_) => "UnknownSubset",
        }
    }

    pub fn position(&self) -> Option<usize> {
        match self {
            SubsetError::Syntax { position, .. } | SubsetError::TypeMismatch { position, .. } => {
                Some(*position)
            }
            SubsetError::UnknownField { position, .. } => *position,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetKind {
    ClassDefault,
    UserDefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDefinition {
    pub subset_id: String,
    pub name: String,
    pub predicate: Predicate,
    pub kind: SubsetKind,
}

/// Check that every path in `pred` exists for at least one instance.
pub fn check_fields(pred: &Predicate, bundle: &Bundle) -> Result<(), SubsetError> {
    if bundle.n_instances() == 0 {
        return Ok(());
    }
    for path in pred.paths() {
        let present = match path {
            FieldPath::TrueLabel | FieldPath::PredictedLabel | FieldPath::Correct => true,
            FieldPath::Score(class) => bundle.class_index(class).is_some(),
            FieldPath::Text => bundle.instances().iter().any(|r| r.text().is_some()),
            FieldPath::Feature(name) => bundle.instances().iter().any(|r| r.feature(name).is_some()),
        };
        if !present {
            return Err(SubsetError::UnknownField {
                path: path.to_string(),
                position: None,
            });
        }
    }
    Ok(())
}

enum Value<'a> {
    Str(&'a str),
    Num(f64),
    Bool(bool),
}

fn resolve<'a>(path: &FieldPath, rec: &'a InstanceRecord, bundle: &Bundle) -> Option<Value<'a>> {
    match path {
        FieldPath::TrueLabel => Some(Value::Str(&rec.true_label)),
        FieldPath::PredictedLabel => Some(Value::Str(&rec.predicted_label)),
        FieldPath::Correct => Some(Value::Bool(rec.is_correct())),
        FieldPath::Score(class) => bundle.class_index(class).map(|i| Value::Num(rec.scores[i])),
        FieldPath::Text => rec.text().map(Value::Str),
        FieldPath::Feature(name) => rec.feature(name).map(|v| match v {
            FeatureValue::Bool(b) => Value::Bool(*b),
            FeatureValue::Number(n) => Value::Num(*n),
            FeatureValue::Text(s) => Value::Str(s),
        }),
    }
}

fn compare(value: Value<'_>, op: CompareOp, literal: &Literal) -> bool {
    use std::cmp::Ordering;
    let ord = match (value, literal) {
        (Value::Num(a), Literal::Number(b)) => a.partial_cmp(b),
        (Value::Str(a), Literal::Str(b)) => Some(a.cmp(b.as_str())),
        (Value::Bool(a), Literal::Bool(b)) => Some(a.cmp(b)),
        _ => None,
    };
    let Some(ord) = ord else { return false };
    match op {
        CompareOp::Eq => ord == Ordering::Equal,
        CompareOp::Ne => ord != Ordering::Equal,
        CompareOp::Lt => ord == Ordering::Less,
        CompareOp::Le => ord != Ordering::Greater,
        CompareOp::Gt => ord == Ordering::Greater,
        CompareOp::Ge => ord != Ordering::Less,
    }
}

/// Whether one instance satisfies the predicate. Assumes [`check_fields`] passed.
pub fn matches(pred: &Predicate, rec: &InstanceRecord, bundle: &Bundle) -> bool {
    match pred {
        Predicate::Compare { path, op, value } => {
            resolve(path, rec, bundle).is_some_and(|v| compare(v, *op, value))
        }
        Predicate::Contains { path, needle } => {
            matches!(resolve(path, rec, bundle), Some(Value::Str(s)) if s.contains(needle.as_str()))
        }
        Predicate::StartsWith { path, prefix } => {
            matches!(resolve(path, rec, bundle), Some(Value::Str(s)) if s.starts_with(prefix.as_str()))
        }
        Predicate::And(ps) => ps.iter().all(|p| matches(p, rec, bundle)),
        Predicate::Or(ps) => ps.iter().any(|p| matches(p, rec, bundle)),
        Predicate::Not(p) => !matches(p, rec, bundle),
    }
}

/// Ascending indices of all instances satisfying `pred`.
pub fn evaluate(pred: &Predicate, bundle: &Bundle) -> Result<Vec<usize>, SubsetError> {
    check_fields(pred, bundle)?;
    Ok(bundle
        .instances()
        .iter()
        .filter(|r| matches(pred, r, bundle))
        .map(|r| r.index)
        .collect())
}

pub fn class_subset_id(class: &str) -> String {
    format!("class.{class}")
}

/// One `true_label = <class>` subset per class, in class order.
pub fn default_class_subsets(bundle: &Bundle) -> Vec<SubsetDefinition> {
    bundle
        .classes()
        .iter()
        .map(|c| SubsetDefinition {
            subset_id: class_subset_id(c),
            name: c.clone(),
            predicate: Predicate::compare(FieldPath::TrueLabel, CompareOp::Eq, Literal::Str(c.clone())),
            kind: SubsetKind::ClassDefault,
        })
        .collect()
}

/// Sparse instance-to-subset indicator: one sorted member list per subset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MembershipMatrix {
    subsets: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl MembershipMatrix {
    /// Build from explicit member lists. Lists are sorted and deduplicated.
    pub fn from_members(
        subsets: Vec<String>,
        mut members: Vec<Vec<usize>>,
    ) -> Result<Self, SubsetError> {
        assert_eq!(subsets.len(), members.len(), "one member list per subset");
        let mut seen = HashSet::new();
        for id in &subsets {
            if !seen.insert(id.as_str()) {
                return Err(SubsetError::DuplicateSubsetId(id.clone()));
            }
        }
        for list in &mut members {
            list.sort_unstable();
            list.dedup();
        }
        Ok(MembershipMatrix { subsets, members })
    }

    pub fn subsets(&self) -> &[String] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn position(&self, subset_id: &str) -> Option<usize> {
        self.subsets.iter().position(|s| s == subset_id)
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn members_of(&self, subset_id: &str) -> Option<&[usize]> {
        self.position(subset_id).map(|k| self.members[k].as_slice())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Total number of (instance, subset) memberships.
    pub fn nnz(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

/// Evaluate every definition in one pass over the instances.
pub fn build_membership(
    definitions: &[SubsetDefinition],
    bundle: &Bundle,
) -> Result<MembershipMatrix, SubsetError> {
    let mut seen = HashSet::new();
    for d in definitions {
        if !seen.insert(d.subset_id.as_str()) {
            return Err(SubsetError::DuplicateSubsetId(d.subset_id.clone()));
        }
        check_fields(&d.predicate, bundle)?;
    }
    let mut members = vec![Vec::new(); definitions.len()];
    for rec in bundle.instances() {
        for (k, d) in definitions.iter().enumerate() {
            if matches(&d.predicate, rec, bundle) {
                members[k].push(rec.index);
            }
        }
    }
    Ok(MembershipMatrix {
        subsets: definitions.iter().map(|d| d.subset_id.clone()).collect(),
        members,
    })
}

/// Ordered subset definitions with their membership, rebuilt on every change.
#[derive(Debug, Clone)]
pub struct SubsetRegistry {
    definitions: Vec<SubsetDefinition>,
    membership: MembershipMatrix,
    next_user: u64,
}

impl SubsetRegistry {
    /// Registry holding the per-class defaults.
    pub fn with_defaults(bundle: &Bundle) -> Self {
        let definitions = default_class_subsets(bundle);
        let membership = build_membership(&definitions, bundle).expect("class subsets are valid");
        SubsetRegistry {
            definitions,
            membership,
            next_user: 1,
        }
    }

    pub fn definitions(&self) -> &[SubsetDefinition] {
        &self.definitions
    }

    pub fn membership(&self) -> &MembershipMatrix {
        &self.membership
    }

    pub fn get(&self, subset_id: &str) -> Option<&SubsetDefinition> {
        self.definitions.iter().find(|d| d.subset_id == subset_id)
    }

    pub fn members(&self, subset_id: &str) -> Result<&[usize], SubsetError> {
        self.membership
            .members_of(subset_id)
            .ok_or_else(|| SubsetError::UnknownSubset(subset_id.to_owned()))
    }

    /// Parse `source` and append it as a user-defined subset with a fresh id.
    pub fn add_user_defined(
        &mut self,
        name: &str,
        source: &str,
        bundle: &Bundle,
    ) -> Result<&SubsetDefinition, SubsetError> {
        let predicate = parse_predicate(source)?;
        let mut id = format!("user.{}", self.next_user);
        while self.get(&id).is_some() {
            self.next_user += 1;
            id = format!("user.{}", self.next_user);
        }
        self.insert(
            SubsetDefinition {
                subset_id: id,
                name: name.to_owned(),
                predicate,
                kind: SubsetKind::UserDefined,
            },
            bundle,
        )?;
        self.next_user += 1;
        Ok(self.definitions.last().expect("just inserted"))
    }

    pub fn insert(&mut self, def: SubsetDefinition, bundle: &Bundle) -> Result<(), SubsetError> {
        let mut definitions = self.definitions.clone();
        definitions.push(def);
        self.membership = build_membership(&definitions, bundle)?;
        self.definitions = definitions;
        Ok(())
    }

    pub fn remove(&mut self, subset_id: &str, bundle: &Bundle) -> Result<SubsetDefinition, SubsetError> {
        let pos = self
            .definitions
            .iter()
            .position(|d| d.subset_id == subset_id)
            .ok_or_else(|| SubsetError::UnknownSubset(subset_id.to_owned()))?;
        let mut definitions = self.definitions.clone();
        let removed = definitions.remove(pos);
        self.membership = build_membership(&definitions, bundle)?;
        self.definitions = definitions;
        Ok(removed)
    }
}
