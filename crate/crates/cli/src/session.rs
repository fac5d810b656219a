//! Per-server session state and the JSON payloads built from it.

use std::collections::BTreeMap;

use neuroscope_core::aggregate::RowKey;
use neuroscope_core::subset::SubsetDefinition;
use neuroscope_core::{
    assemble_view, build_panel, draw_sample, sort_columns, Bundle, SampleSpec, SubsetKind,
    SubsetRegistry,
};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::format::num;

/// Mutable part of a session. The bundle itself is immutable and shared separately.
#[derive(Debug, Clone)]
pub struct Session {
    pub registry: SubsetRegistry,
    pub sample_spec: SampleSpec,
    pub sample: Vec<usize>,
    /// Instance rows pinned to each node's matrix, in pin order.
    pub pins: BTreeMap<String, Vec<usize>>,
}

impl Session {
    /// Default class subsets and the default sample.
    pub fn new(bundle: &Bundle) -> Result<Self, ApiError> {
        let sample_spec = SampleSpec::default();
        let sample = draw_sample(bundle, &sample_spec)?;
        Ok(Session {
            registry: SubsetRegistry::with_defaults(bundle),
            sample_spec,
            sample,
            pins: BTreeMap::new(),
        })
    }

    pub fn pinned(&self, node: &str) -> &[usize] {
        self.pins.get(node).map_or(&[], Vec::as_slice)
    }

    /// Matrix view of `node`: every registry subset, then the node's pinned instances.
    pub fn matrix_json(&self, bundle: &Bundle, node: &str, sort_by: Option<&str>) -> Result<Value, ApiError> {
        let subsets = self.registry.membership().subsets().to_vec();
        matrix_json(bundle, &self.registry, node, &subsets, self.pinned(node), sort_by)
    }

    pub fn subsets_json(&self) -> Value {
        self.registry
            .definitions()
            .iter()
            .map(|d| subset_json(d, self.registry.members(&d.subset_id).map_or(0, <[usize]>::len)))
            .collect()
    }

    pub fn sample_json(&self) -> Value {
        json!({
            "budget": self.sample_spec.budget,
            "seed": self.sample_spec.seed,
            "pinned": self.sample_spec.pinned,
            "strategy": "stratified_by_true_label",
            "size": self.sample.len(),
            "indices": self.sample,
        })
    }

    pub fn panel_json(&self, bundle: &Bundle) -> Result<Value, ApiError> {
        let panel = build_panel(bundle, &self.sample)?;
        let refs = |list: &[usize]| -> Value {
            list.iter()
                .map(|&i| {
                    let r = &bundle.instances()[i];
                    let p = bundle.class_index(&r.predicted_label).expect("validated label");
                    json!({
                        "index": i,
                        "id": r.id,
                        "predicted_label": r.predicted_label,
                        "score": num(r.scores[p]),
                    })
                })
                .collect()
        };
        let groups: Vec<Value> = panel
            .groups
            .iter()
            .map(|g| {
                json!({
                    "class": g.class,
                    "correct": refs(&g.correct),
                    "misclassified": refs(&g.misclassified),
                })
            })
            .collect();
        Ok(json!({ "sample_size": self.sample.len(), "groups": groups }))
    }

    /// Redraw the sample. Fields left as `None` keep their current values.
    pub fn resample(
        &mut self,
        bundle: &Bundle,
        budget: Option<usize>,
        pinned: Option<Vec<String>>,
        seed: Option<u64>,
    ) -> Result<(), ApiError> {
        let mut spec = self.sample_spec.clone();
        if let Some(b) = budget {
            spec.budget = b;
        }
        if let Some(p) = pinned {
            spec.pinned = p;
        }
        if let Some(s) = seed {
            spec.seed = s;
        }
        self.sample = draw_sample(bundle, &spec)?;
        self.sample_spec = spec;
        Ok(())
    }

    pub fn pin(&mut self, bundle: &Bundle, node: &str, instance: usize) -> Result<(), ApiError> {
        bundle.activation_row(node, instance)?;
        self.pins.entry(node.to_owned()).or_default().push(instance);
        Ok(())
    }

    /// Remove the most recent pin of `instance` on `node`.
    pub fn unpin(&mut self, bundle: &Bundle, node: &str, instance: usize) -> Result<(), ApiError> {
        bundle.matrix(node)?;
        let list = self.pins.entry(node.to_owned()).or_default();
        let pos = list.iter().rposition(|&i| i == instance).ok_or_else(|| {
            ApiError::not_found("NotPinned", format!("instance {instance} is not pinned on {node}"))
        })?;
        list.remove(pos);
        if list.is_empty() {
            self.pins.remove(node);
        }
        Ok(())
    }

    pub fn pins_json(&self, node: &str) -> Value {
        json!({ "node": node, "instances": self.pinned(node) })
    }
}

pub fn kind_name(kind: SubsetKind) -> &'static str {
    match kind {
        SubsetKind::ClassDefault => "class_default",
        SubsetKind::UserDefined => "user_defined",
    }
}

pub fn subset_json(def: &SubsetDefinition, count: usize) -> Value {
    json!({
        "subset_id": def.subset_id,
        "name": def.name,
        "kind": kind_name(def.kind),
        "predicate": def.predicate.to_string(),
        "count": count,
    })
}

/// Matrix payload. Rows of empty subsets are all `null`.
pub fn matrix_json(
    bundle: &Bundle,
    registry: &SubsetRegistry,
    node: &str,
    subsets: &[String],
    instances: &[usize],
    sort_by: Option<&str>,
) -> Result<Value, ApiError> {
    let view = assemble_view(bundle, registry.membership(), node, subsets, instances)?;
    let column_order: Vec<usize> = match sort_by {
        Some(key) => {
            let key: RowKey = key
                .parse()
                .map_err(|m: String| ApiError::bad_request(m))?;
            sort_columns(&view, &key)?.permutation
        }
        None => (0..view.n_neurons).collect(),
    };
    let mut labels = Vec::with_capacity(view.n_rows());
    let mut counts = Vec::with_capacity(view.n_rows());
    for key in &view.row_keys {
        match key {
            RowKey::Subset(id) => {
                labels.push(registry.get(id).map(|d| d.name.clone()).unwrap_or_default());
                counts.push(registry.members(id).map_or(0, <[usize]>::len));
            }
            RowKey::Instance(i) => {
                labels.push(bundle.instances()[*i].id.clone());
                counts.push(1);
            }
        }
    }
    let values: Vec<Value> = (0..view.n_rows())
        .map(|r| {
            if view.is_empty_row(r) {
                vec![Value::Null; view.n_neurons].into()
            } else {
                view.row(r).iter().map(|&v| num(v)).collect()
            }
        })
        .collect();
    Ok(json!({
        "node_id": view.node_id,
        "n_neurons": view.n_neurons,
        "row_keys": view.row_keys.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "row_labels": labels,
        "row_counts": counts,
        "values": values,
        "empty_rows": view.empty_rows,
        "sort_by": sort_by,
        "column_order": column_order,
    }))
}

pub fn graph_json(bundle: &Bundle) -> Value {
    bundle.graph().to_json_value()
}

/// Inspectable nodes in topological order with their dump widths.
pub fn nodes_json(bundle: &Bundle) -> Value {
    bundle
        .graph()
        .inspectable_nodes()
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "name": n.display_name,
                "n_neurons": bundle.matrix(n.id.as_str()).ok().map(|m| m.n_neurons()),
            })
        })
        .collect()
}

pub fn instance_json(bundle: &Bundle, index: usize) -> Result<Value, ApiError> {
    let rec = bundle.instance(index)?;
    let mut v = rec.to_json_value();
    v["correct"] = rec.is_correct().into();
    Ok(v)
}

pub fn instance_row_json(bundle: &Bundle, node: &str, index: usize) -> Result<Value, ApiError> {
    Ok(bundle
        .activation_row(node, index)?
        .iter()
        .map(|&v| num(f64::from(v)))
        .collect())
}
