use ndarray::{s, Array1, Array2};

use super::features::{build_node_features, FeatureSpec};
use super::tudataset::{GraphInstance, IngestStats, TuDataset};
use crate::diffusion::NoisyAdjacency;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// A graph padded to a fixed node count. Real nodes occupy the leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGraph<T> {
    pub adjacency: Array2<u8>,
    pub features: Array2<T>,
    pub node_mask: Array1<u8>,
    /// `outer(node_mask, node_mask)` with a zero diagonal.
    pub edge_mask: Array2<u8>,
    pub label: usize,
    pub n_nodes: usize,
}

pub fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

pub fn pad_and_mask<T: Scalar>(
    g: &GraphInstance,
    features: &Array2<T>,
    n_max: usize,
) -> Result<PaddedGraph<T>> {
    if g.n_nodes > n_max {
        return Err(invalid(format!(
            "graph with {} nodes exceeds the padded size {n_max}",
            g.n_nodes
        )));
    }
    if features.nrows() != g.n_nodes {
        return Err(invalid("feature rows must equal the node count"));
    }
    let n = g.n_nodes;
    let mut adjacency = Array2::<u8>::zeros((n_max, n_max));
    for &(u, v) in &g.edges {
        adjacency[[u, v]] = 1;
        adjacency[[v, u]] = 1;
    }
    let mut padded_features = Array2::<T>::zeros((n_max, features.ncols()));
    padded_features.slice_mut(s![..n, ..]).assign(features);
    let node_mask = Array1::from_shape_fn(n_max, |i| u8::from(i < n));
    let edge_mask =
        Array2::from_shape_fn((n_max, n_max), |(i, j)| u8::from(i < n && j < n && i != j));
    Ok(PaddedGraph {
        adjacency,
        features: padded_features,
        node_mask,
        edge_mask,
        label: g.graph_label,
        n_nodes: n,
    })
}

impl<T: Scalar> PaddedGraph<T> {
    pub fn size(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn clean_adjacency(&self) -> NoisyAdjacency {
        NoisyAdjacency {
            bits: self.adjacency.clone(),
            t: 0,
            edge_mask: self.edge_mask.clone(),
        }
    }

    /// Re-pads to `size >= n_nodes`, keeping the real block unchanged.
    pub fn resized(&self, size: usize) -> Result<PaddedGraph<T>> {
        if size < self.n_nodes {
            return Err(invalid("cannot crop below the real node count"));
        }
        let n = self.n_nodes;
        let keep = size.min(self.size());
        let mut adjacency = Array2::<u8>::zeros((size, size));
        adjacency
            .slice_mut(s![..keep, ..keep])
            .assign(&self.adjacency.slice(s![..keep, ..keep]));
        let mut features = Array2::<T>::zeros((size, self.features.ncols()));
        features
            .slice_mut(s![..keep, ..])
            .assign(&self.features.slice(s![..keep, ..]));
        Ok(PaddedGraph {
            adjacency,
            features,
            node_mask: Array1::from_shape_fn(size, |i| u8::from(i < n)),
            edge_mask: Array2::from_shape_fn((size, size), |(i, j)| {
                u8::from(i < n && j < n && i != j)
            }),
            label: self.label,
            n_nodes: n,
        })
    }

    pub fn edge_count(&self) -> usize {
        let n = self.size();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[[i, j]] == 1)
            .count()
    }
}

/// Dataset after feature construction and size filtering. Graphs are kept
/// unpadded; [`PreparedDataset::padded`] materialises the padded view.
#[derive(Debug, Clone)]
pub struct PreparedDataset<T> {
    pub name: String,
    pub graphs: Vec<GraphInstance>,
    pub features: Vec<Array2<T>>,
    /// Indices of the kept graphs in the source dataset.
    pub source_index: Vec<usize>,
    pub feature_spec: FeatureSpec,
    pub n_max: usize,
    pub dropped: usize,
    pub stats: IngestStats,
}

impl<T: Scalar> PreparedDataset<T> {
    /// `n_max` defaults to the largest kept graph rounded up to `multiple`.
    /// Graphs larger than `cap` are filtered and counted in `dropped`.
    pub fn new(
        ds: &TuDataset,
        feature_spec: FeatureSpec,
        multiple: usize,
        cap: Option<usize>,
    ) -> Result<Self> {
        let mut graphs = Vec::new();
        let mut features = Vec::new();
        let mut source_index = Vec::new();
        let mut dropped = 0;
        for (i, g) in ds.graphs.iter().enumerate() {
            if cap.is_some_and(|c| g.n_nodes > c) {
                dropped += 1;
                continue;
            }
            features.push(build_node_features(
                g,
                feature_spec.policy,
                feature_spec.width,
            )?);
            graphs.push(g.clone());
            source_index.push(i);
        }
        if graphs.is_empty() {
            return Err(invalid("no graphs left after size filtering"));
        }
        let largest = graphs.iter().map(|g| g.n_nodes).max().unwrap().max(1);
        Ok(Self {
            name: ds.name.clone(),
            graphs,
            features,
            source_index,
            feature_spec,
            n_max: round_up(largest, multiple),
            dropped,
            stats: ds.stats.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.graph_label).collect()
    }

    /// Padded view of graph `i` at `size` nodes (defaults to `n_max`).
    pub fn padded(&self, i: usize, size: Option<usize>) -> Result<PaddedGraph<T>> {
        pad_and_mask(
            &self.graphs[i],
            &self.features[i],
            size.unwrap_or(self.n_max),
        )
    }
}
