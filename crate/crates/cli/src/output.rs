//! Atomic output files.

use std::path::Path;

use protoprior::checkpoint::write_atomic;
use serde::Serialize;

pub fn text(path: &Path, contents: &str) -> anyhow::Result<()> {
    write_atomic(path, contents.as_bytes())?;
    Ok(())
}

pub fn json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))?)?;
    Ok(())
}

/// Shortest representation that round-trips; `""` for `None`.
pub fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
