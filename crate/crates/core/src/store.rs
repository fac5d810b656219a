//! On-disk bundle: graph, manifest, instance metadata and activation dumps.
//!
//! A bundle directory holds
//!
//! * `graph.json`: the computation graph document,
//! * `manifest.json`: class list, instance count and one entry per dumped node,
//! * `instances.jsonl`: one metadata object per instance,
//! * `<node>.act`: one activation dump per manifest entry.
//!
//! Dumps start with a fixed 24-byte little-endian header (`ACTV`, `u32`
//! version, `u64` rows, `u64` cols) followed by `rows * cols` `f32` values in
//! row-major order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_graph, ComputationGraph, GraphError, NodeId, NodeKind};

pub const DUMP_MAGIC: [u8; 4] = *b"ACTV";
pub const DUMP_VERSION: u32 = 1;
pub const DUMP_HEADER_LEN: usize = 24;

pub const GRAPH_FILE: &str = "graph.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed {file}: {message}")]
    Malformed { file: String, message: String },
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("dump for {node} disagrees with its header or manifest entry: {detail}")]
    HeaderMismatch { node: NodeId, detail: String },
    #[error("{what} has {found} rows, expected {expected}")]
    RowCountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("manifest node {0} is not an inspectable tensor of the graph")]
    UnknownNodeInManifest(NodeId),
    #[error("non-finite activation in {node} at row {row}, column {col}")]
    NonFiniteActivation { node: NodeId, row: usize, col: usize },
    #[error("instance {instance}: label {label:?} is not in the class list")]
    LabelOutsideClassList { instance: String, label: String },
    #[error("instance {instance}: {message}")]
    InvalidInstance { instance: String, message: String },
    #[error("instance {instance}: predicted label {stored:?} but scores argmax is {argmax:?}")]
    PredictionMismatch {
        instance: String,
        stored: String,
        argmax: String,
    },
    #[error("invalid class list: {0}")]
    InvalidClasses(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::MissingFile(_) => "MissingFile",
            StoreError::Io { .. } => "IoError",
            StoreError::Malformed { .. } => "MalformedFile",
            StoreError::Graph(e) => e.code(),
            StoreError::HeaderMismatch { .. } => "HeaderMismatch",
            StoreError::RowCountMismatch { .. } => "RowCountMismatch",
            StoreError::UnknownNodeInManifest(_) => "UnknownNodeInManifest",
            StoreError::NonFiniteActivation { .. } => "NonFiniteActivation",
            StoreError::LabelOutsideClassList { .. } => "LabelOutsideClassList",
            StoreError::InvalidInstance { .. } => "InvalidInstance",
            StoreError::PredictionMismatch { .. } => "PredictionMismatch",
            StoreError::InvalidClasses(_) => "InvalidClasses",
            StoreError::UnknownNode(_) => "UnknownNode",
            StoreError::IndexOutOfRange { .. } => "IndexOutOfRange",
        }
    }
}

/// Dense `n_instances x n_neurons` activations of one tensor node.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    node_id: NodeId,
    n_instances: usize,
    n_neurons: usize,
    values: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(
        node_id: NodeId,
        n_instances: usize,
        n_neurons: usize,
        values: Vec<f32>,
    ) -> Result<Self, StoreError> {
        if n_instances.checked_mul(n_neurons) != Some(values.len()) {
            return Err(StoreError::HeaderMismatch {
                node: node_id,
                detail: format!(
                    "{} values for a {n_instances}x{n_neurons} matrix",
                    values.len()
                ),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteActivation {
                node: node_id,
                row: pos / n_neurons,
                col: pos % n_neurons,
            });
        }
        Ok(ActivationMatrix {
            node_id,
            n_instances,
            n_neurons,
            values,
        })
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Row `i`. Panics if out of range; see [`Bundle::activation_row`] for the checked form.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_neurons..(i + 1) * self.n_neurons]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DUMP_HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(&DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_instances as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_neurons as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(node_id: NodeId, bytes: &[u8]) -> Result<Self, StoreError> {
        let mismatch = |detail: String| StoreError::HeaderMismatch {
            node: node_id.clone(),
            detail,
        };
        if bytes.len() < DUMP_HEADER_LEN {
            return Err(mismatch(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if bytes[0..4] != DUMP_MAGIC {
            return Err(mismatch("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DUMP_VERSION {
            return Err(mismatch(format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let payload = &bytes[DUMP_HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| n == payload.len() as u64);
        if expected.is_none() {
            return Err(mismatch(format!(
                "header declares {rows}x{cols} but payload holds {} bytes",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ActivationMatrix::new(node_id, rows as usize, cols as usize, values)
    }
}

/// Scalar-or-string feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

/// What the tooltip shows for an instance.
#[derive(Debug, Clone, PartialEq)]
pub enum DisplayPayload {
    Text(String),
    Features(BTreeMap<String, FeatureValue>),
}

/// One line of `instances.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    id: String,
    true_label: String,
    predicted_label: String,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<BTreeMap<String, FeatureValue>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub index: usize,
    pub id: String,
    pub true_label: String,
    pub predicted_label: String,
    pub scores: Vec<f64>,
    pub display: DisplayPayload,
}

impl InstanceRecord {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }

    pub fn text(&self) -> Option<&str> {
        match &self.display {
            DisplayPayload::Text(t) => Some(t),
            DisplayPayload::Features(_) => None,
        }
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureValue> {
        match &self.display {
            DisplayPayload::Features(f) => f.get(name),
            DisplayPayload::Text(_) => None,
        }
    }

    fn to_line(&self) -> InstanceLine {
        let (text, features) = match &self.display {
            DisplayPayload::Text(t) => (Some(t.clone()), None),
            DisplayPayload::Features(f) => (None, Some(f.clone())),
        };
        InstanceLine {
            id: self.id.clone(),
            true_label: self.true_label.clone(),
            predicted_label: self.predicted_label.clone(),
            scores: self.scores.clone(),
            text,
            features,
        }
    }

    /// JSON object in the `instances.jsonl` shape plus its `index`.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self.to_line()).expect("instance serializes");
        value["index"] = self.index.into();
        value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestNode {
    pub id: NodeId,
    pub file: String,
    pub neurons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub nodes: Vec<ManifestNode>,
    pub n_instances: usize,
}

/// A fully validated bundle. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Bundle {
    graph: ComputationGraph,
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
    instances: Vec<InstanceRecord>,
    instance_ids: HashMap<String, usize>,
    matrices: BTreeMap<NodeId, ActivationMatrix>,
}

/// Index of the maximum score; the first maximum wins.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

impl Bundle {
    /// Assemble a bundle and check every cross-part invariant.
    pub fn new(
        graph: ComputationGraph,
        classes: Vec<String>,
        instances: Vec<InstanceRecord>,
        matrices: Vec<ActivationMatrix>,
    ) -> Result<Self, StoreError> {
        if classes.is_empty() {
            return Err(StoreError::InvalidClasses("empty class list".into()));
        }
        let mut class_index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if class_index.insert(c.clone(), i).is_some() {
                return Err(StoreError::InvalidClasses(format!("duplicate class {c:?}")));
            }
        }

        let mut instance_ids = HashMap::with_capacity(instances.len());
        for (pos, rec) in instances.iter().enumerate() {
            let invalid = |message: String| StoreError::InvalidInstance {
                instance: rec.id.clone(),
                message,
            };
            if rec.index != pos {
                return Err(invalid(format!("index {} at position {pos}", rec.index)));
            }
            if instance_ids.insert(rec.id.clone(), pos).is_some() {
                return Err(invalid("duplicate instance id".into()));
            }
            for label in [&rec.true_label, &rec.predicted_label] {
                if !class_index.contains_key(label) {
                    return Err(StoreError::LabelOutsideClassList {
                        instance: rec.id.clone(),
                        label: label.clone(),
                    });
                }
            }
            if rec.scores.len() != classes.len() {
                return Err(invalid(format!(
                    "{} scores for {} classes",
                    rec.scores.len(),
                    classes.len()
                )));
            }
            if rec.scores.iter().any(|s| !s.is_finite()) {
                return Err(invalid("non-finite score".into()));
            }
            let top = &classes[argmax(&rec.scores).expect("non-empty scores")];
            if *top != rec.predicted_label {
                return Err(StoreError::PredictionMismatch {
                    instance: rec.id.clone(),
                    stored: rec.predicted_label.clone(),
                    argmax: top.clone(),
                });
            }
        }

        let mut by_node = BTreeMap::new();
        for m in matrices {
            let inspectable = graph
                .node(m.node_id().as_str())
                .is_some_and(|n| n.kind == NodeKind::Tensor && n.inspectable);
            if !inspectable {
                return Err(StoreError::UnknownNodeInManifest(m.node_id().clone()));
            }
            if m.n_instances() != instances.len() {
                return Err(StoreError::RowCountMismatch {
                    what: format!("dump for {}", m.node_id()),
                    expected: instances.len(),
                    found: m.n_instances(),
                });
            }
            by_node.insert(m.node_id().clone(), m);
        }

        Ok(Bundle {
            graph,
            classes,
            class_index,
            instances,
            instance_ids,
            matrices: by_node,
        })
    }

    pub fn graph(&self) -> &ComputationGraph {
        &self.graph
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.class_index.get(class).copied()
    }

    pub fn instances(&self) -> &[InstanceRecord] {
        &self.instances
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn instance(&self, index: usize) -> Result<&InstanceRecord, StoreError> {
        self.instances.get(index).ok_or(StoreError::IndexOutOfRange {
            index,
            len: self.instances.len(),
        })
    }

    pub fn instance_by_id(&self, id: &str) -> Option<usize> {
        self.instance_ids.get(id).copied()
    }

    pub fn matrices(&self) -> &BTreeMap<NodeId, ActivationMatrix> {
        &self.matrices
    }

    pub fn matrix(&self, node: &str) -> Result<&ActivationMatrix, StoreError> {
        self.matrices
            .get(node)
            .ok_or_else(|| StoreError::UnknownNode(NodeId::from(node)))
    }

    /// Activation vector of one instance at one node.
    pub fn activation_row(&self, node: &str, instance: usize) -> Result<&[f32], StoreError> {
        let m = self.matrix(node)?;
        if instance >= m.n_instances() {
            return Err(StoreError::IndexOutOfRange {
                index: instance,
                len: m.n_instances(),
            });
        }
        Ok(m.row(instance))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            classes: self.classes.clone(),
            nodes: self
                .matrices
                .values()
                .map(|m| ManifestNode {
                    id: m.node_id().clone(),
                    file: dump_file_name(m.node_id()),
                    neurons: m.n_neurons(),
                })
                .collect(),
            n_instances: self.instances.len(),
        }
    }
}

/// File name used for a node's dump when writing bundles.
pub fn dump_file_name(node: &NodeId) -> String {
    let stem: String = node
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}.act")
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            StoreError::MissingFile(path.to_owned())
        } else {
            StoreError::Io {
                path: path.to_owned(),
                source,
            }
        }
    })
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    String::from_utf8(read_file(path)?).map_err(|_| StoreError::Malformed {
        file: path.display().to_string(),
        message: "not valid UTF-8".into(),
    })
}

fn parse_instances(text: &str) -> Result<Vec<InstanceRecord>, StoreError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InstanceLine =
            serde_json::from_str(line).map_err(|e| StoreError::Malformed {
                file: INSTANCES_FILE.into(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
        let display = match (parsed.text, parsed.features) {
            (Some(t), None) => DisplayPayload::Text(t),
            (None, Some(f)) => DisplayPayload::Features(f),
            _ => {
                return Err(StoreError::InvalidInstance {
                    instance: parsed.id,
                    message: "exactly one of `text` or `features` is required".into(),
                })
            }
        };
        out.push(InstanceRecord {
            index: out.len(),
            id: parsed.id,
            true_label: parsed.true_label,
            predicted_label: parsed.predicted_label,
            scores: parsed.scores,
            display,
        });
    }
    Ok(out)
}

/// Load and validate a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle, StoreError> {
    let dir = dir.as_ref();
    let graph = parse_graph(&read_text(&dir.join(GRAPH_FILE))?)?;
    let manifest: Manifest = serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)
        .map_err(|e| StoreError::Malformed {
            file: MANIFEST_FILE.into(),
            message: e.to_string(),
        })?;
    if manifest.nodes.is_empty() {
        return Err(StoreError::Malformed {
            file: MANIFEST_FILE.into(),
            message: "no activation dumps listed".into(),
        });
    }
    let instances = parse_instances(&read_text(&dir.join(INSTANCES_FILE))?)?;
    if instances.len() != manifest.n_instances {
        return Err(StoreError::RowCountMismatch {
            what: INSTANCES_FILE.into(),
            expected: manifest.n_instances,
            found: instances.len(),
        });
    }

    let mut seen = HashSet::new();
    let mut matrices = Vec::with_capacity(manifest.nodes.len());
    for entry in &manifest.nodes {
        if !seen.insert(entry.id.clone()) {
            return Err(StoreError::Malformed {
                file: MANIFEST_FILE.into(),
                message: format!("node {} listed twice", entry.id),
            });
        }
        let known = graph
            .node(entry.id.as_str())
            .is_some_and(|n| n.kind == NodeKind::Tensor && n.inspectable);
        if !known {
            return Err(StoreError::UnknownNodeInManifest(entry.id.clone()));
        }
        let bytes = read_file(&dir.join(&entry.file))?;
        let m = ActivationMatrix::decode(entry.id.clone(), &bytes)?;
        if m.n_neurons() != entry.neurons || m.n_instances() != manifest.n_instances {
            return Err(StoreError::HeaderMismatch {
                node: entry.id.clone(),
                detail: format!(
                    "header {}x{} vs manifest {}x{}",
                    m.n_instances(),
                    m.n_neurons(),
                    manifest.n_instances,
                    entry.neurons
                ),
            });
        }
        matrices.push(m);
    }

    Bundle::new(graph, manifest.classes, instances, matrices)
}

/// Write a bundle in the on-disk layout read by [`load_bundle`].
pub fn save_bundle(bundle: &Bundle, dir: impl AsRef<Path>) -> io::Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(GRAPH_FILE), bundle.graph().to_document())?;
    let manifest = bundle.manifest();
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?,
    )?;
    let mut lines = String::new();
    for rec in bundle.instances() {
        lines.push_str(&serde_json::to_string(&rec.to_line()).map_err(io::Error::other)?);
        lines.push('\n');
    }
    fs::write(dir.join(INSTANCES_FILE), lines)?;
    for (entry, m) in manifest.nodes.iter().zip(bundle.matrices().values()) {
        fs::write(dir.join(&entry.file), m.encode())?;
    }
    Ok(())
}
