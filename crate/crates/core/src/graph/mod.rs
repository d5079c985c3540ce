//! Graph ingestion, node features, fixed-size padding and fold assignment.

mod features;
mod folds;
mod padding;
mod synthetic;
mod tudataset;

pub use features::{build_node_features, FeaturePolicy, FeatureSpec, MAX_DEGREE_BUCKETS};
pub use folds::{stratified_folds, FoldAssignment};
pub use padding::{pad_and_mask, round_up, PaddedGraph, PreparedDataset};
pub use synthetic::synthetic_dataset;
pub use tudataset::{
    load_raw, load_tudataset, raw_dir, write_tudataset, DatasetName, GraphInstance, IngestStats,
    TuDataset,
};
