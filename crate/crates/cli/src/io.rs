//! File helpers for the command line: input checks, id lists, keyed tables.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;

use crate::UsageError;

/// Fail with a usage error (exit status 2) naming the path when it is missing.
pub fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("no such file or directory: {}", path.display())).into());
    }
    Ok(())
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut s = ids.join("\n");
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    require(path)?;
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Ids stored next to a summaries directory, or `1..=len` when absent.
pub fn ids_or_index(dir: &Path, name: &str, len: usize) -> Result<Vec<String>> {
    let path = dir.join(name);
    if path.exists() {
        let ids = read_ids(&path)?;
        anyhow::ensure!(ids.len() == len, "{}: {} ids for {len} rows", path.display(), ids.len());
        Ok(ids)
    } else {
        Ok((1..=len).map(|i| i.to_string()).collect())
    }
}

pub fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Matrix with an id column: `key,<cols...>`.
pub fn write_keyed(path: &Path, key: &str, ids: &[String], cols: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![key.to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(m.row_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn factor_names(k: usize) -> Vec<String> {
    (1..=k).map(|l| format!("f{l}")).collect()
}

/// Read a table by header name; every row as a map from column to value.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    require(path)?;
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((header, rows))
}

pub fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{}: no '{name}' column", path.display()))
}
