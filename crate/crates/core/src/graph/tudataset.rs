use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    #[serde(rename = "PROTEINS")]
    Proteins,
    #[serde(rename = "IMDB-BINARY")]
    ImdbBinary,
}

impl DatasetName {
    pub const ALL: [DatasetName; 2] = [DatasetName::Proteins, DatasetName::ImdbBinary];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Proteins => "PROTEINS",
            DatasetName::ImdbBinary => "IMDB-BINARY",
        }
    }

    pub fn has_node_labels(self) -> bool {
        matches!(self, DatasetName::Proteins)
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PROTEINS" => Ok(DatasetName::Proteins),
            "IMDB-BINARY" | "IMDB-B" | "IMDB_BINARY" => Ok(DatasetName::ImdbBinary),
            other => Err(invalid(format!("unknown dataset {other:?}"))),
        }
    }
}

/// `<root>/<NAME>/raw`
pub fn raw_dir(root: &Path, name: DatasetName) -> PathBuf {
    root.join(name.as_str()).join("raw")
}

/// One undirected simple graph with 0-based node indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphInstance {
    pub n_nodes: usize,
    /// Sorted `(u, v)` pairs with `u < v`.
    pub edges: Vec<(usize, usize)>,
    /// Dense label indices (position in the dataset's sorted label vocabulary).
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: usize,
}

impl GraphInstance {
    /// Builds a graph, normalising edge orientation, dropping duplicates and
    /// rejecting self-loops or out-of-range endpoints.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Option<Vec<usize>>,
        graph_label: usize,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(invalid(format!("self-loop at node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(invalid(format!("edge ({u}, {v}) outside {n_nodes} nodes")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        if let Some(l) = &node_labels {
            if l.len() != n_nodes {
                return Err(invalid("one node label per node required"));
            }
        }
        Ok(Self {
            n_nodes,
            edges: set.into_iter().collect(),
            node_labels,
            graph_label,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub graphs: usize,
    pub nodes: usize,
    /// Lines of the edge file; TU files list every undirected edge twice.
    pub directed_entries: usize,
    pub undirected_edges: usize,
    pub self_loops_dropped: usize,
    pub mean_nodes: f64,
    pub mean_directed_entries: f64,
    pub mean_undirected_edges: f64,
    pub max_nodes: usize,
    pub max_degree: usize,
}

impl IngestStats {
    fn summarize(graphs: &[GraphInstance], directed_entries: usize, self_loops: usize) -> Self {
        let g = graphs.len().max(1) as f64;
        let nodes: usize = graphs.iter().map(|x| x.n_nodes).sum();
        let undirected: usize = graphs.iter().map(|x| x.edges.len()).sum();
        Self {
            graphs: graphs.len(),
            nodes,
            directed_entries,
            undirected_edges: undirected,
            self_loops_dropped: self_loops,
            mean_nodes: nodes as f64 / g,
            mean_directed_entries: directed_entries as f64 / g,
            mean_undirected_edges: undirected as f64 / g,
            max_nodes: graphs.iter().map(|x| x.n_nodes).max().unwrap_or(0),
            max_degree: graphs.iter().flat_map(|x| x.degrees()).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuDataset {
    pub name: String,
    pub graphs: Vec<GraphInstance>,
    /// Raw graph label for each dense class index.
    pub graph_label_values: Vec<i64>,
    /// Raw node label for each dense node-label index.
    pub node_label_values: Option<Vec<i64>>,
    pub stats: IngestStats,
}

impl TuDataset {
    /// Wraps graphs whose labels are already dense indices.
    pub fn from_graphs(name: impl Into<String>, graphs: Vec<GraphInstance>) -> Result<TuDataset> {
        if graphs.is_empty() {
            return Err(invalid("dataset has no graphs"));
        }
        let classes = graphs.iter().map(|g| g.graph_label).max().unwrap() + 1;
        let with_labels = graphs.iter().filter(|g| g.node_labels.is_some()).count();
        if with_labels != 0 && with_labels != graphs.len() {
            return Err(invalid(
                "node labels must be present on every graph or none",
            ));
        }
        let node_label_values = (with_labels > 0).then(|| {
            let k = graphs
                .iter()
                .flat_map(|g| g.node_labels.iter().flatten().copied())
                .max()
                .map_or(1, |m| m + 1);
            (0..k as i64).collect()
        });
        let stats =
            IngestStats::summarize(&graphs, graphs.iter().map(|g| 2 * g.edges.len()).sum(), 0);
        Ok(TuDataset {
            name: name.into(),
            graphs,
            graph_label_values: (0..classes as i64).collect(),
            node_label_values,
            stats,
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.graph_label).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.graph_label_values.len()
    }

    /// Keeps the first `n` graphs.
    pub fn truncated(&self, n: usize) -> TuDataset {
        let idx: Vec<usize> = (0..n.min(self.graphs.len())).collect();
        self.select(&idx)
    }

    /// Keeps the graphs at `idx`, in that order. Label vocabularies are
    /// kept so class indices stay comparable with the full dataset.
    pub fn select(&self, idx: &[usize]) -> TuDataset {
        let graphs: Vec<_> = idx.iter().map(|&i| self.graphs[i].clone()).collect();
        let stats =
            IngestStats::summarize(&graphs, graphs.iter().map(|g| 2 * g.edges.len()).sum(), 0);
        TuDataset {
            name: self.name.clone(),
            graphs,
            graph_label_values: self.graph_label_values.clone(),
            node_label_values: self.node_label_values.clone(),
            stats,
        }
    }
}

pub fn load_tudataset(raw: &Path, name: DatasetName) -> Result<TuDataset> {
    load_raw(raw, name.as_str(), name.has_node_labels())
}

fn file_for(dir: &Path, prefix: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{prefix}_{suffix}.txt"))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = File::open(path).map_err(|e| Error::Ingest {
        file: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Ingest {
            file: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            out.push((no + 1, trimmed.to_string()));
        }
    }
    Ok(out)
}

fn parse_int<T: FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Ingest {
        file: path.to_path_buf(),
        msg: format!("line {line}: cannot parse {s:?} as an integer"),
    })
}

fn vocabulary(raw: &[i64]) -> (Vec<i64>, Vec<usize>) {
    let values: Vec<i64> = raw
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense = raw
        .iter()
        .map(|v| values.binary_search(v).unwrap())
        .collect();
    (values, dense)
}

/// Reads `<prefix>_A.txt`, `<prefix>_graph_indicator.txt`,
/// `<prefix>_graph_labels.txt` and, when required, `<prefix>_node_labels.txt`.
pub fn load_raw(dir: &Path, prefix: &str, require_node_labels: bool) -> Result<TuDataset> {
    let a_path = file_for(dir, prefix, "A");
    let ind_path = file_for(dir, prefix, "graph_indicator");
    let gl_path = file_for(dir, prefix, "graph_labels");
    let nl_path = file_for(dir, prefix, "node_labels");

    let indicator: Vec<usize> = read_lines(&ind_path)?
        .iter()
        .map(|(no, s)| parse_int(&ind_path, *no, s))
        .collect::<Result<_>>()?;
    let raw_graph_labels: Vec<i64> = read_lines(&gl_path)?
        .iter()
        .map(|(no, s)| parse_int(&gl_path, *no, s))
        .collect::<Result<_>>()?;
    let n_graphs = raw_graph_labels.len();

    let raw_node_labels: Option<Vec<i64>> = if require_node_labels || nl_path.exists() {
        let v: Vec<i64> = read_lines(&nl_path)?
            .iter()
            .map(|(no, s)| parse_int(&nl_path, *no, s))
            .collect::<Result<_>>()?;
        if v.len() != indicator.len() {
            return Err(Error::CorruptDataset(format!(
                "{} node labels for {} nodes",
                v.len(),
                indicator.len()
            )));
        }
        Some(v)
    } else {
        None
    };

    // global node -> (graph, local index)
    let mut counts = vec![0usize; n_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for (node, &g) in indicator.iter().enumerate() {
        if g == 0 || g > n_graphs {
            return Err(Error::CorruptDataset(format!(
                "node {} assigned to graph {g}, but only {n_graphs} graph labels exist",
                node + 1
            )));
        }
        local.push(counts[g - 1]);
        counts[g - 1] += 1;
    }

    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n_graphs];
    let mut directed = 0usize;
    let mut self_loops = 0usize;
    for (no, line) in read_lines(&a_path)? {
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Ingest {
                file: a_path.clone(),
                msg: format!("line {no}: expected \"i, j\""),
            });
        };
        let i: usize = parse_int(&a_path, no, a)?;
        let j: usize = parse_int(&a_path, no, b)?;
        for x in [i, j] {
            if x == 0 || x > indicator.len() {
                return Err(Error::CorruptDataset(format!(
                    "edge file line {no} references node {x}, but only {} nodes exist",
                    indicator.len()
                )));
            }
        }
        let (gi, gj) = (indicator[i - 1], indicator[j - 1]);
        if gi != gj {
            return Err(Error::CorruptDataset(format!(
                "edge file line {no} joins graphs {gi} and {gj}"
            )));
        }
        directed += 1;
        if i == j {
            self_loops += 1;
            continue;
        }
        let (u, v) = (local[i - 1], local[j - 1]);
        edge_sets[gi - 1].insert((u.min(v), u.max(v)));
    }

    let (graph_label_values, dense_graph_labels) = vocabulary(&raw_graph_labels);
    let (node_label_values, mut per_graph_node_labels) = match &raw_node_labels {
        Some(raw) => {
            let (values, dense) = vocabulary(raw);
            let mut per: Vec<Vec<usize>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
            for (node, &g) in indicator.iter().enumerate() {
                per[g - 1].push(dense[node]);
            }
            (Some(values), per.into_iter().map(Some).collect::<Vec<_>>())
        }
        None => (None, vec![None; n_graphs]),
    };

    let graphs: Vec<GraphInstance> = edge_sets
        .into_iter()
        .enumerate()
        .map(|(g, edges)| GraphInstance {
            n_nodes: counts[g],
            edges: edges.into_iter().collect(),
            node_labels: per_graph_node_labels[g].take(),
            graph_label: dense_graph_labels[g],
        })
        .collect();

    let stats = IngestStats::summarize(&graphs, directed, self_loops);
    Ok(TuDataset {
        name: prefix.to_string(),
        graphs,
        graph_label_values,
        node_label_values,
        stats,
    })
}

/// Writes a dataset back in the raw TU layout, listing each undirected edge
/// in both directions.
pub fn write_tudataset(dir: &Path, prefix: &str, ds: &TuDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut a = BufWriter::new(File::create(file_for(dir, prefix, "A"))?);
    let mut ind = BufWriter::new(File::create(file_for(dir, prefix, "graph_indicator"))?);
    let mut gl = BufWriter::new(File::create(file_for(dir, prefix, "graph_labels"))?);
    let mut nl = match &ds.node_label_values {
        Some(_) => Some(BufWriter::new(File::create(file_for(
            dir,
            prefix,
            "node_labels",
        ))?)),
        None => None,
    };

    let mut offset = 1usize;
    for (gid, g) in ds.graphs.iter().enumerate() {
        writeln!(gl, "{}", ds.graph_label_values[g.graph_label])?;
        for _ in 0..g.n_nodes {
            writeln!(ind, "{}", gid + 1)?;
        }
        if let (Some(w), Some(values), Some(labels)) =
            (&mut nl, &ds.node_label_values, &g.node_labels)
        {
            for &l in labels {
                writeln!(w, "{}", values[l])?;
            }
        }
        let mut directed: Vec<(usize, usize)> = g
            .edges
            .iter()
            .flat_map(|&(u, v)| [(u, v), (v, u)])
            .collect();
        directed.sort_unstable();
        for (u, v) in directed {
            writeln!(a, "{}, {}", u + offset, v + offset)?;
        }
        offset += g.n_nodes;
    }
    a.flush()?;
    ind.flush()?;
    gl.flush()?;
    if let Some(mut w) = nl {
        w.flush()?;
    }
    Ok(())
}
