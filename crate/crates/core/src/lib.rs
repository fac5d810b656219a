//! Activation inspection engine for trained neural-network classifiers.
//!
//! A [`Bundle`] holds a model's computation graph, per-node activation
//! matrices and per-instance metadata. On top of it the crate provides
//! predicate-defined instance subsets, subset-average activation views,
//! exact t-SNE projections and stratified sampling for the selection panel.

pub mod aggregate;
pub mod graph;
pub mod projection;
pub mod sampler;
pub mod store;
pub mod subset;
pub mod synth;

pub use aggregate::{
    aggregate_subsets, assemble_view, sort_columns, AggregateError, ColumnOrder, RowKey,
    SubsetActivationMatrix,
};
pub use graph::{parse_graph, ComputationGraph, Edge, GraphError, GraphNode, NodeId, NodeKind};
pub use projection::{
    highlight_membership, pairwise_affinities, project_node, tsne, ProjectionConfig,
    ProjectionError, ProjectionResult,
};
pub use sampler::{build_panel, draw_sample, InstancePanel, SampleError, SampleSpec};
pub use store::{
    load_bundle, save_bundle, ActivationMatrix, Bundle, DisplayPayload, FeatureValue,
    InstanceRecord, StoreError,
};
pub use subset::{
    build_membership, default_class_subsets, evaluate, parse_predicate, MembershipMatrix,
    Predicate, SubsetDefinition, SubsetError, SubsetKind, SubsetRegistry,
};
