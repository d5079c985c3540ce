use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::RunMeta;
use crate::error::{invalid, Error, Result};
use crate::graph::{round_up, PaddedGraph, PreparedDataset};
use crate::networks::Ddgae;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DDGAEEMB";
pub const EMBEDDING_VERSION: u32 = 1;

/// `z = [h_enc, h_int]` for one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEmbedding {
    pub z: Vec<f64>,
    pub enc_dim: usize,
    pub graph_id: usize,
    pub label: usize,
}

impl GraphEmbedding {
    pub fn h_enc(&self) -> &[f64] {
        &self.z[..self.enc_dim]
    }

    pub fn h_int(&self) -> &[f64] {
        &self.z[self.enc_dim..]
    }
}

/// One encoder pass and one denoiser pass on the clean adjacency at step `t`.
pub fn extract_embedding<T: Scalar>(
    model: &Ddgae<T>,
    g: &PaddedGraph<T>,
    t: usize,
    graph_id: usize,
) -> Result<GraphEmbedding> {
    let (h_enc, h_int) = model.embed_parts(g, t)?;
    let z: Vec<f64> = h_enc
        .iter()
        .chain(h_int.iter())
        .map(|v| v.as_f64())
        .collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            graph: graph_id,
            t,
            detail: "non-finite embedding".into(),
        });
    }
    Ok(GraphEmbedding {
        z,
        enc_dim: h_enc.len(),
        graph_id,
        label: g.label,
    })
}

/// Embeddings of a whole dataset plus the provenance needed to audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dataset: String,
    pub config_hash: String,
    pub enc_dim: usize,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub data: Array2<f64>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn from_embeddings(
        dataset: &str,
        config_hash: &str,
        rows: &[GraphEmbedding],
    ) -> Result<EmbeddingSet> {
        let first = rows.first().ok_or_else(|| invalid("no embeddings"))?;
        let d = first.z.len();
        if rows
            .iter()
            .any(|r| r.z.len() != d || r.enc_dim != first.enc_dim)
        {
            return Err(invalid("embeddings have inconsistent widths"));
        }
        let data = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i].z[j]);
        Ok(EmbeddingSet {
            dataset: dataset.to_string(),
            config_hash: config_hash.to_string(),
            enc_dim: first.enc_dim,
            ids: rows.iter().map(|r| r.graph_id as u64).collect(),
            labels: rows.iter().map(|r| r.label).collect(),
            data,
        })
    }
}

/// Embeds every graph of `data` with a model trained under `meta`. Refuses
/// data prepared differently from the training run.
pub fn extract_all<T: Scalar>(
    meta: &RunMeta,
    model: &Ddgae<T>,
    data: &PreparedDataset<T>,
    t: usize,
) -> Result<EmbeddingSet> {
    if meta.model != model.config {
        return Err(Error::Config(
            "model does not match the checkpoint config".into(),
        ));
    }
    if data.feature_spec != meta.feature_spec || data.name != meta.dataset {
        return Err(Error::Config(format!(
            "dataset {} ({:?}) does not match checkpoint dataset {} ({:?})",
            data.name, data.feature_spec, meta.dataset, meta.feature_spec
        )));
    }
    if t > meta.config.timesteps {
        return Err(Error::Config(format!(
            "extraction step {t} exceeds the trained horizon {}",
            meta.config.timesteps
        )));
    }
    let multiple = model.config.denoiser.size_multiple();
    let rows = (0..data.len())
        .map(|i| {
            let n = data.graphs[i].n_nodes.max(1);
            let g = data.padded(i, Some(round_up(n, multiple)))?;
            extract_embedding(model, &g, t, data.source_index[i])
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_embeddings(&data.name, &meta.config_hash, &rows)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Binary layout: magic, `u32` version, `u64` n, `u64` d, `u64` encoder
/// width, length-prefixed config hash and dataset name, `u32` labels,
/// `u64` graph ids, then `n * d` little-endian `f64` row-major.
pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let (n, d) = set.data.dim();
    let mut out = Vec::with_capacity(64 + n * (12 + 8 * d));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    for v in [n as u64, d as u64, set.enc_dim as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_str(&mut out, &set.config_hash);
    put_str(&mut out, &set.dataset);
    for &l in &set.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &id in &set.ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for &v in set.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Artifact("truncated embedding file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Artifact("invalid utf-8 in embedding header".into()))
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader { bytes };
    if r.take(8)? != EMBEDDING_MAGIC {
        return Err(Error::Artifact("not an embedding file".into()));
    }
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported embedding version {version}"
        )));
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let enc_dim = r.u64()? as usize;
    if enc_dim > d {
        return Err(Error::Artifact("encoder width exceeds row width".into()));
    }
    let config_hash = r.string()?;
    let dataset = r.string()?;
    let labels = (0..n)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let raw = r.take(n * d * 8)?;
    if !r.bytes.is_empty() {
        return Err(Error::Artifact("trailing bytes in embedding file".into()));
    }
    let vals = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((n, d), vals).map_err(|e| Error::Artifact(e.to_string()))?;
    Ok(EmbeddingSet {
        dataset,
        config_hash,
        enc_dim,
        ids,
        labels,
        data,
    })
}

/// CSV mirror: `graph_id,label,enc_0..,int_0..` with shortest round-trip
/// float formatting.
pub fn embeddings_csv(set: &EmbeddingSet) -> String {
    let mut s = String::from("graph_id,label");
    for j in 0..set.dim() {
        if j < set.enc_dim {
            write!(s, ",enc_{j}").unwrap();
        } else {
            write!(s, ",int_{}", j - set.enc_dim).unwrap();
        }
    }
    s.push('\n');
    for (i, row) in set.data.rows().into_iter().enumerate() {
        write!(s, "{},{}", set.ids[i], set.labels[i]).unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Writes `path` (binary) and `path` with a `.csv` extension.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    std::fs::write(path, encode_embeddings(set))?;
    std::fs::write(path.with_extension("csv"), embeddings_csv(set))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingSet {
        EmbeddingSet {
            dataset: "PROTEINS".into(),
            config_hash: "0123456789abcdef".into(),
            enc_dim: 2,
            ids: vec![4, 9, 11],
            labels: vec![0, 1, 1],
            data: ndarray::array![
                [0.1, -2.5, 1e-300, 3.0],
                [f64::MIN_POSITIVE, 7.0, -0.0, 1.0 / 3.0],
                [1.0, 2.0, 3.0, 4.0]
            ],
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let s = sample();
        let back = decode_embeddings(&encode_embeddings(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_mirror_parses_back() {
        let s = sample();
        let csv = embeddings_csv(&s);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "graph_id,label,enc_0,enc_1,int_0,int_1"
        );
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|v| v.parse().unwrap())
                .collect();
            assert_eq!(vals, s.data.row(i).to_vec());
        }
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let bytes = encode_embeddings(&sample());
        assert!(decode_embeddings(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_embeddings(b"DDGAECKP....").is_err());
    }
}
