use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tudataset::{DatasetName, GraphInstance, TuDataset};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Upper bound on degree one-hot width for featureless graphs.
pub const MAX_DEGREE_BUCKETS: usize = 136;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePolicy {
    NodeLabelOnehot,
    DegreeOnehot,
}

/// Resolved feature policy and width for one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub policy: FeaturePolicy,
    pub width: usize,
}

impl FeatureSpec {
    /// Node-label one-hot when the dataset carries node labels, otherwise a
    /// clipped degree one-hot of width `min(max degree + 1, 136)`.
    pub fn for_dataset(ds: &TuDataset) -> FeatureSpec {
        match &ds.node_label_values {
            Some(values) => FeatureSpec {
                policy: FeaturePolicy::NodeLabelOnehot,
                width: values.len().max(1),
            },
            None => FeatureSpec {
                policy: FeaturePolicy::DegreeOnehot,
                width: (ds.stats.max_degree + 1).min(MAX_DEGREE_BUCKETS),
            },
        }
    }

    pub fn default_policy(name: DatasetName) -> FeaturePolicy {
        if name.has_node_labels() {
            FeaturePolicy::NodeLabelOnehot
        } else {
            FeaturePolicy::DegreeOnehot
        }
    }
}

/// `n_nodes x width` one-hot feature matrix.
pub fn build_node_features<T: Scalar>(
    g: &GraphInstance,
    policy: FeaturePolicy,
    width: usize,
) -> Result<Array2<T>> {
    if width == 0 {
        return Err(invalid("feature width must be positive"));
    }
    let mut x = Array2::<T>::zeros((g.n_nodes, width));
    match policy {
        FeaturePolicy::NodeLabelOnehot => {
            let labels = g
                .node_labels
                .as_ref()
                .ok_or_else(|| invalid("node_label_onehot needs node labels"))?;
            for (i, &l) in labels.iter().enumerate() {
                if l >= width {
                    return Err(invalid(format!(
                        "node label index {l} does not fit feature width {width}"
                    )));
                }
                x[[i, l]] = T::one();
            }
        }
        FeaturePolicy::DegreeOnehot => {
            for (i, d) in g.degrees().into_iter().enumerate() {
                x[[i, d.min(width - 1)]] = T::one();
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_degree_onehot() {
        let g = GraphInstance::new(3, [(0, 1), (1, 2), (0, 2)], None, 0).unwrap();
        let x = build_node_features::<f64>(&g, FeaturePolicy::DegreeOnehot, 4).unwrap();
        for row in x.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn degree_is_clipped() {
        let star = GraphInstance::new(6, (1..6).map(|v| (0, v)), None, 0).unwrap();
        let x = build_node_features::<f32>(&star, FeaturePolicy::DegreeOnehot, 3).unwrap();
        assert_eq!(x[[0, 2]], 1.0);
        assert_eq!(x.row(0).sum(), 1.0);
        assert_eq!(x[[1, 1]], 1.0);
    }

    #[test]
    fn node_label_policy_requires_labels() {
        let g = GraphInstance::new(2, [(0, 1)], None, 0).unwrap();
        assert!(build_node_features::<f64>(&g, FeaturePolicy::NodeLabelOnehot, 3).is_err());
        let g = GraphInstance::new(2, [(0, 1)], Some(vec![2, 0]), 0).unwrap();
        let x = build_node_features::<f64>(&g, FeaturePolicy::NodeLabelOnehot, 3).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(build_node_features::<f64>(&g, FeaturePolicy::NodeLabelOnehot, 2).is_err());
    }
}
