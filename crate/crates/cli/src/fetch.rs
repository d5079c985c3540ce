//! Dataset download and cache management.

use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use ddgae::graph::{raw_dir, DatasetName};
use ddgae::Error;
use sha2::{Digest, Sha256};

pub const DEFAULT_BASE_URL: &str = "https://www.chrsmrrs.com/graphkerneldatasets";
pub const BASE_URL_ENV: &str = "DDGAE_BASE_URL";
const CHECKSUM_FILE: &str = "archive.sha256";

#[derive(Debug, PartialEq, Eq)]
pub enum FetchStatus {
    Downloaded { sha256: String },
    Cached { sha256: Option<String> },
}

fn required_files(name: DatasetName) -> Vec<String> {
    let mut v = vec!["A", "graph_indicator", "graph_labels"];
    if name.has_node_labels() {
        v.push("node_labels");
    }
    v.into_iter()
        .map(|s| format!("{}_{s}.txt", name.as_str()))
        .collect()
}

fn is_cached(raw: &Path, name: DatasetName) -> bool {
    required_files(name).iter().all(|f| raw.join(f).is_file())
}

fn checksum_path(root: &Path, name: DatasetName) -> PathBuf {
    root.join(name.as_str()).join(CHECKSUM_FILE)
}

fn read_bytes(url: &str) -> Result<Vec<u8>> {
    if let Some(path) = url.strip_prefix("file://") {
        return std::fs::read(path).map_err(|e| {
            Error::Ingest {
                file: PathBuf::from(path),
                msg: e.to_string(),
            }
            .into()
        });
    }
    let mut body = ureq::get(url).call().map_err(|e| Error::Ingest {
        file: PathBuf::from(url),
        msg: format!("download failed: {e}"),
    })?;
    let mut buf = Vec::new();
    body.body_mut()
        .as_reader()
        .read_to_end(&mut buf)
        .with_context(|| format!("reading {url}"))?;
    Ok(buf)
}

fn extract(bytes: &[u8], raw: &Path) -> Result<usize> {
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| Error::CorruptDataset(format!("archive is not a readable zip: {e}")))?;
    std::fs::create_dir_all(raw)?;
    let mut written = 0;
    for i in 0..zip.len() {
        let mut entry = zip.by_index(i)?;
        if entry.is_dir() {
            continue;
        }
        let Some(name) = entry
            .enclosed_name()
            .and_then(|p| p.file_name().map(|n| n.to_owned()))
        else {
            continue;
        };
        let mut out = Vec::new();
        entry.read_to_end(&mut out)?;
        std::fs::write(raw.join(name), out)?;
        written += 1;
    }
    Ok(written)
}

/// Makes `<root>/<NAME>/raw` available. A present cache is reused without
/// network access. The archive digest is recorded on first download and
/// checked on later downloads; `pin` must match whenever it is given.
pub fn fetch(
    root: &Path,
    name: DatasetName,
    base_url: &str,
    pin: Option<&str>,
    force: bool,
) -> Result<FetchStatus> {
    let raw = raw_dir(root, name);
    let record = checksum_path(root, name);
    let recorded = std::fs::read_to_string(&record)
        .ok()
        .map(|s| s.trim().to_string());
    if let (Some(pin), Some(rec)) = (pin, &recorded) {
        if !pin.eq_ignore_ascii_case(rec) {
            return Err(Error::CorruptDataset(format!(
                "cached archive digest {rec} does not match pinned {pin}"
            ))
            .into());
        }
    }
    if !force && is_cached(&raw, name) {
        return Ok(FetchStatus::Cached { sha256: recorded });
    }
    let url = format!("{}/{}.zip", base_url.trim_end_matches('/'), name.as_str());
    let bytes = read_bytes(&url)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let expected = pin.map(str::to_lowercase).or(recorded);
    if let Some(want) = expected {
        if want != digest {
            return Err(Error::CorruptDataset(format!(
                "checksum mismatch for {url}: expected {want}, got {digest}"
            ))
            .into());
        }
    }
    let n = extract(&bytes, &raw)?;
    if !is_cached(&raw, name) {
        return Err(anyhow!(Error::CorruptDataset(format!(
            "archive from {url} ({n} files) lacks the expected {} files",
            name.as_str()
        ))));
    }
    std::fs::write(&record, format!("{digest}\n"))?;
    Ok(FetchStatus::Downloaded { sha256: digest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn archive(name: &str, files: &[(&str, &str)]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut z = zip::ZipWriter::new(&mut buf);
            let opts = zip::write::SimpleFileOptions::default();
            for (f, body) in files {
                z.start_file(format!("{name}/{name}_{f}.txt"), opts)
                    .unwrap();
                z.write_all(body.as_bytes()).unwrap();
            }
            z.finish().unwrap();
        }
        buf.into_inner()
    }

    fn imdb_zip() -> Vec<u8> {
        archive(
            "IMDB-BINARY",
            &[
                ("A", "1, 2\n2, 1\n"),
                ("graph_indicator", "1\n1\n2\n"),
                ("graph_labels", "1\n-1\n"),
            ],
        )
    }

    #[test]
    fn download_record_and_cache_hit() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("IMDB-BINARY.zip"), imdb_zip()).unwrap();
        let base = format!("file://{}", src.path().display());
        let first = fetch(root.path(), DatasetName::ImdbBinary, &base, None, false).unwrap();
        let FetchStatus::Downloaded { sha256 } = first else {
            panic!("expected a download");
        };
        // A second fetch must not touch the source at all.
        std::fs::remove_file(src.path().join("IMDB-BINARY.zip")).unwrap();
        let second = fetch(root.path(), DatasetName::ImdbBinary, &base, None, false).unwrap();
        assert_eq!(
            second,
            FetchStatus::Cached {
                sha256: Some(sha256)
            }
        );
        let ds = ddgae::graph::load_tudataset(
            &raw_dir(root.path(), DatasetName::ImdbBinary),
            DatasetName::ImdbBinary,
        )
        .unwrap();
        assert_eq!(ds.graphs.len(), 2);
    }

    #[test]
    fn bad_checksum_is_a_hard_error() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("IMDB-BINARY.zip"), imdb_zip()).unwrap();
        let base = format!("file://{}", src.path().display());
        let err = fetch(
            root.path(),
            DatasetName::ImdbBinary,
            &base,
            Some("00"),
            false,
        )
        .unwrap_err();
        assert!(matches!(
            err.downcast_ref::<Error>(),
            Some(Error::CorruptDataset(_))
        ));
        assert!(!raw_dir(root.path(), DatasetName::ImdbBinary).exists());
    }

    #[test]
    fn changed_archive_rejected_on_refetch() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let base = format!("file://{}", src.path().display());
        std::fs::write(src.path().join("IMDB-BINARY.zip"), imdb_zip()).unwrap();
        fetch(root.path(), DatasetName::ImdbBinary, &base, None, false).unwrap();
        let other = archive(
            "IMDB-BINARY",
            &[
                ("A", "1, 2\n"),
                ("graph_indicator", "1\n1\n"),
                ("graph_labels", "1\n"),
            ],
        );
        std::fs::write(src.path().join("IMDB-BINARY.zip"), other).unwrap();
        let err = fetch(root.path(), DatasetName::ImdbBinary, &base, None, true).unwrap_err();
        assert!(matches!(
            err.downcast_ref::<Error>(),
            Some(Error::CorruptDataset(_))
        ));
    }

    #[test]
    fn missing_source_is_a_data_error() {
        let root = tempfile::tempdir().unwrap();
        let err = fetch(
            root.path(),
            DatasetName::Proteins,
            "file:///nonexistent",
            None,
            false,
        )
        .unwrap_err();
        assert!(matches!(
            err.downcast_ref::<Error>(),
            Some(Error::Ingest { .. })
        ));
    }
}
