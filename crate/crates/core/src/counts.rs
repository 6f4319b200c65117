//! Sparse count matrix, covariate table and species attribute table.
//!
//! The count matrix is held as its nonzero triplets only; zeros are implicit
//! and never materialized. Sample and species ids are arbitrary strings that
//! are densely re-indexed on load, and the id maps travel with the matrix so
//! every output can be reported in the original ids.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One stored nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub count: u64,
}

/// Nonzero triplets of an `n x p` count matrix with row and column views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCounts {
    n: usize,
    p: usize,
    // sorted by (row, col)
    entries: Vec<Entry>,
    row_ptr: Vec<usize>,
    col_ptr: Vec<usize>,
    col_order: Vec<usize>,
    sample_ids: Vec<String>,
    species_ids: Vec<String>,
}

impl SparseCounts {
    /// Build from triplets with generated ids (`s0..`, `sp0..`).
    pub fn from_triplets(n: usize, p: usize, triplets: &[(usize, usize, u64)]) -> Result<Self> {
        let sample_ids = (0..n).map(|i| format!("s{i}")).collect();
        let species_ids = (0..p).map(|j| format!("sp{j}")).collect();
        Self::with_ids(triplets, sample_ids, species_ids)
    }

    /// Build from triplets and explicit id maps; dimensions come from the id maps.
    pub fn with_ids(
        triplets: &[(usize, usize, u64)],
        sample_ids: Vec<String>,
        species_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = (sample_ids.len(), species_ids.len());
        let mut entries = Vec::with_capacity(triplets.len());
        for &(row, col, count) in triplets {
            if row >= n || col >= p {
                return Err(Error::InvalidArgument(format!(
                    "entry ({row}, {col}) outside {n} x {p}"
                )));
            }
            if count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({row}, {col}) has count 0; zeros must be implicit"
                )));
            }
            entries.push(Entry { row, col, count });
        }
        entries.sort_unstable_by_key(|e| (e.row, e.col));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].row == w[1].row && w[0].col == w[1].col)
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry ({}, {})",
                w[0].row, w[0].col
            )));
        }
        Ok(Self::from_sorted(n, p, entries, sample_ids, species_ids))
    }

    fn from_sorted(
        n: usize,
        p: usize,
        entries: Vec<Entry>,
        sample_ids: Vec<String>,
        species_ids: Vec<String>,
    ) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_ptr = vec![0usize; p + 1];
        for e in &entries {
            row_ptr[e.row + 1] += 1;
            col_ptr[e.col + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..p {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_order = vec![0usize; entries.len()];
        for (idx, e) in entries.iter().enumerate() {
            col_order[next[e.col]] = idx;
            next[e.col] += 1;
        }
        SparseCounts {
            n,
            p,
            entries,
            row_ptr,
            col_ptr,
            col_order,
            sample_ids,
            species_ids,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Indices into [`entries`](Self::entries) for row `i`.
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row(&self, i: usize) -> &[Entry] {
        &self.entries[self.row_range(i)]
    }

    /// Entry indices of column `j`, in row order.
    pub fn col_indices(&self, j: usize) -> &[usize] {
        &self.col_order[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = &Entry> + '_ {
        self.col_indices(j).iter().map(move |&k| &self.entries[k])
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn species_ids(&self) -> &[String] {
        &self.species_ids
    }

    /// Number of samples in which each species is present.
    pub fn prevalence(&self) -> Vec<usize> {
        (0..self.p)
            .map(|j| self.col_ptr[j + 1] - self.col_ptr[j])
            .collect()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|e| e.count).sum())
            .collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.p];
        for e in &self.entries {
            t[e.col] += e.count;
        }
        t
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        let row = self.row(i);
        row.binary_search_by_key(&j, |e| e.col)
            .map(|k| row[k].count)
            .unwrap_or(0)
    }

    /// Keep the columns with at least `t` samples present; samples are untouched.
    pub fn filter_min_prevalence(&self, t: u64) -> Result<SparseCounts> {
        if t == 0 {
            return Err(Error::InvalidArgument(
                "minimum prevalence must be at least 1".into(),
            ));
        }
        let keep: Vec<usize> = self
            .prevalence()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as u64 >= t)
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return Err(Error::NoSpeciesRetained(t));
        }
        Ok(self.select_cols(&keep))
    }

    /// Submatrix with the given columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> SparseCounts {
        let mut remap = vec![usize::MAX; self.p];
        for (new, &old) in cols.iter().enumerate() {
            remap[old] = new;
        }
        let mut entries: Vec<Entry> = self
            .entries
            .iter()
            .filter(|e| remap[e.col] != usize::MAX)
            .map(|e| Entry {
                col: remap[e.col],
                ..*e
            })
            .collect();
        entries.sort_unstable_by_key(|e| (e.row, e.col));
        let species_ids = cols.iter().map(|&j| self.species_ids[j].clone()).collect();
        Self::from_sorted(
            self.n,
            cols.len(),
            entries,
            self.sample_ids.clone(),
            species_ids,
        )
    }

    /// Submatrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseCounts {
        let mut entries = Vec::new();
        for (new, &old) in rows.iter().enumerate() {
            entries.extend(self.row(old).iter().map(|e| Entry { row: new, ..*e }));
        }
        let sample_ids = rows.iter().map(|&i| self.sample_ids[i].clone()).collect();
        Self::from_sorted(
            rows.len(),
            self.p,
            entries,
            sample_ids,
            self.species_ids.clone(),
        )
    }

    /// Dense copy; for tests and small fixtures only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.p);
        for e in &self.entries {
            m[(e.row, e.col)] = e.count as f64;
        }
        m
    }

    pub fn sparsity_report(&self) -> SparsityReport {
        let cells = self.n as f64 * self.p as f64;
        let prev = self.prevalence();
        let mean_prev = if self.p == 0 {
            0.0
        } else {
            prev.iter().sum::<usize>() as f64 / self.p as f64
        };
        SparsityReport {
            n: self.n,
            p: self.p,
            nnz: self.nnz(),
            sparsity: if cells > 0.0 {
                1.0 - self.nnz() as f64 / cells
            } else {
                0.0
            },
            max_count: self.entries.iter().map(|e| e.count).max().unwrap_or(0),
            total: self.entries.iter().map(|e| e.count).sum(),
            mean_prevalence: mean_prev,
            mean_prevalence_fraction: if self.n > 0 {
                mean_prev / self.n as f64
            } else {
                0.0
            },
        }
    }

    /// Write as `sample_id,species_id,count`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "sample_id,species_id,count").map_err(io)?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{}",
                self.sample_ids[e.row], self.species_ids[e.col], e.count
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Summary of matrix shape and sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub n: usize,
    pub p: usize,
    pub nnz: usize,
    /// Fraction of zero cells.
    pub sparsity: f64,
    pub max_count: u64,
    pub total: u64,
    /// Mean number of samples in which a species is present.
    pub mean_prevalence: f64,
    /// `mean_prevalence / n`.
    pub mean_prevalence_fraction: f64,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(path, line, e.to_string())
}

/// Read a triplet CSV with header `sample_id,species_id,count`.
///
/// Ids are re-indexed in order of first appearance. Counts must be positive
/// integers and `(sample, species)` pairs must be unique.
pub fn load_counts(path: &Path) -> Result<SparseCounts> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let expect = ["sample_id", "species_id", "count"];
    if headers.len() < 3 || headers.iter().take(3).ne(expect.iter().copied()) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {}", expect.join(",")),
        ));
    }
    let mut sample_idx: HashMap<String, usize> = HashMap::new();
    let mut species_idx: HashMap<String, usize> = HashMap::new();
    let mut sample_ids = Vec::new();
    let mut species_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut triplets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::parse(path, line, "expected 3 fields"));
        }
        let count: u64 = rec[2].parse().map_err(|_| {
            Error::parse(path, line, format!("count '{}' is not a positive integer", &rec[2]))
        })?;
        if count == 0 {
            return Err(Error::parse(
                path,
                line,
                "count 0; zeros must be left implicit",
            ));
        }
        let i = *sample_idx.entry(rec[0].to_string()).or_insert_with(|| {
            sample_ids.push(rec[0].to_string());
            sample_ids.len() - 1
        });
        let j = *species_idx.entry(rec[1].to_string()).or_insert_with(|| {
            species_ids.push(rec[1].to_string());
            species_ids.len() - 1
        });
        if !seen.insert((i, j)) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate entry for ({}, {})", &rec[0], &rec[1]),
            ));
        }
        triplets.push((i, j, count));
    }
    if triplets.is_empty() {
        return Err(Error::NoEntries);
    }
    SparseCounts::with_ids(&triplets, sample_ids, species_ids)
}

/// Real-valued sample covariates aligned to the count matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl CovariateTable {
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if x.ncols() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate columns but {} names",
                x.ncols(),
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariate".into()));
        }
        Ok(CovariateTable { x, names })
    }

    /// Table with zero columns (no covariates; the factor prior mean is 0).
    pub fn empty(n: usize) -> Self {
        CovariateTable {
            x: DMatrix::zeros(n, 0),
            names: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        CovariateTable {
            x: self.x.select_rows(rows),
            names: self.names.clone(),
        }
    }

    /// Write as `sample_id,<cov1>,...`.
    pub fn save(&self, path: &Path, sample_ids: &[String]) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        write!(w, "sample_id").map_err(io)?;
        for name in &self.names {
            write!(w, ",{name}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for (i, id) in sample_ids.iter().enumerate() {
            write!(w, "{id}").map_err(io)?;
            for c in 0..self.d() {
                write!(w, ",{}", self.x[(i, c)]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Read `sample_id,<cov1>,...` and align rows to `sample_ids`.
///
/// Rows for samples not in `sample_ids` are ignored; a sample missing from
/// the file is an error.
pub fn load_covariates(path: &Path, sample_ids: &[String]) -> Result<CovariateTable> {
    let (names, rows) = read_keyed_table(path, "sample_id")?;
    let d = names.len();
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
    for (line, id, fields) in rows {
        let vals = fields
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, line, format!("'{s}' is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if by_id.insert(id.clone(), vals).is_some() {
            return Err(Error::parse(path, line, format!("duplicate sample '{id}'")));
        }
    }
    let mut x = DMatrix::zeros(sample_ids.len(), d);
    for (i, id) in sample_ids.iter().enumerate() {
        let row = by_id.get(id).ok_or_else(|| {
            Error::InvalidArgument(format!("{}: no covariates for sample '{id}'", path.display()))
        })?;
        for c in 0..d {
            x[(i, c)] = row[c];
        }
    }
    CovariateTable::new(x, names)
}

type KeyedRows = Vec<(u64, String, Vec<String>)>;

fn read_keyed_table(path: &Path, key: &str) -> Result<(Vec<String>, KeyedRows)> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some(key) {
        return Err(Error::parse(path, 1, format!("first column must be '{key}'")));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != names.len() + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", names.len() + 1, rec.len()),
            ));
        }
        rows.push((
            line,
            rec[0].to_string(),
            rec.iter().skip(1).map(str::to_string).collect(),
        ));
    }
    Ok((names, rows))
}

/// Site of every sample from a `sample_id,site_id` table, in `sample_ids` order.
pub fn load_sites(path: &Path, sample_ids: &[String]) -> Result<Vec<String>> {
    let (names, rows) = read_keyed_table(path, "sample_id")?;
    if names.first().map(String::as_str) != Some("site_id") {
        return Err(Error::parse(path, 1, "second column must be 'site_id'"));
    }
    let mut by_id: HashMap<String, String> = HashMap::new();
    for (line, id, mut fields) in rows {
        if by_id.insert(id.clone(), fields.swap_remove(0)).is_some() {
            return Err(Error::parse(path, line, format!("duplicate sample '{id}'")));
        }
    }
    sample_ids
        .iter()
        .map(|id| {
            by_id.get(id).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("{}: no site for sample '{id}'", path.display()))
            })
        })
        .collect()
}

/// Attributes of one species. Missing values are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesRecord {
    /// Genus and species epithet as recorded, e.g. "Syrphus vitripennis".
    pub name: Option<String>,
    pub class: Option<String>,
    pub order: Option<String>,
    pub family: Option<String>,
    pub body_size: Option<f64>,
    pub tags: BTreeMap<String, String>,
}

impl SpeciesRecord {
    /// True when the name is a binomial (genus plus epithet) rather than a
    /// bare genus or a placeholder such as "Smittia sp. ES12".
    pub fn is_named(&self) -> bool {
        let Some(name) = &self.name else {
            return false;
        };
        let mut words = name.split_whitespace();
        let (Some(genus), Some(epithet)) = (words.next(), words.next()) else {
            return false;
        };
        let placeholder = ["sp.", "sp", "spp.", "cf.", "aff.", "nr."];
        genus.chars().next().is_some_and(char::is_uppercase)
            && !placeholder.contains(&epithet)
            && epithet.chars().all(|c| c.is_lowercase() || c == '-')
    }
}

/// Per-species attributes aligned to the count matrix columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesAttributes {
    pub records: Vec<SpeciesRecord>,
    /// Declared vocabulary of every tag column.
    pub tag_vocab: BTreeMap<String, BTreeSet<String>>,
}

fn missing(s: &str) -> bool {
    matches!(s, "" | "None" | "none" | "NA" | "nan" | "NaN")
}

const KNOWN_ATTRIBUTE_COLUMNS: [&str; 5] = ["name", "class", "order", "family", "body_size"];

impl SpeciesAttributes {
    /// Attributes with every field missing.
    pub fn empty(p: usize) -> Self {
        SpeciesAttributes {
            records: vec![SpeciesRecord::default(); p],
            tag_vocab: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        SpeciesAttributes {
            records: cols.iter().map(|&j| self.records[j].clone()).collect(),
            tag_vocab: self.tag_vocab.clone(),
        }
    }

    /// Write as `species_id,name,class,order,family,body_size,<tags...>`.
    pub fn save(&self, path: &Path, species_ids: &[String]) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        let tag_cols: Vec<&String> = self.tag_vocab.keys().collect();
        write!(w, "species_id,name,class,order,family,body_size").map_err(io)?;
        for t in &tag_cols {
            write!(w, ",{t}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        let opt = |s: &Option<String>| s.clone().unwrap_or_default();
        for (id, r) in species_ids.iter().zip(&self.records) {
            write!(
                w,
                "{id},{},{},{},{},{}",
                opt(&r.name),
                opt(&r.class),
                opt(&r.order),
                opt(&r.family),
                r.body_size.map(|v| v.to_string()).unwrap_or_default()
            )
            .map_err(io)?;
            for t in &tag_cols {
                write!(w, ",{}", r.tags.get(*t).cloned().unwrap_or_default()).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Read `species_id,...` and align to `species_ids`.
///
/// Recognized columns are `name`, `class`, `order`, `family` and `body_size`;
/// any other column is a tag column whose vocabulary is the set of values it
/// takes. Species absent from the file get all-missing attributes.
pub fn load_attributes(path: &Path, species_ids: &[String]) -> Result<SpeciesAttributes> {
    let (names, rows) = read_keyed_table(path, "species_id")?;
    let mut by_id: HashMap<String, SpeciesRecord> = HashMap::new();
    let mut tag_vocab: BTreeMap<String, BTreeSet<String>> = names
        .iter()
        .filter(|c| !KNOWN_ATTRIBUTE_COLUMNS.contains(&c.as_str()))
        .map(|c| (c.clone(), BTreeSet::new()))
        .collect();
    for (line, id, fields) in rows {
        let mut rec = SpeciesRecord::default();
        for (col, val) in names.iter().zip(&fields) {
            if missing(val) {
                continue;
            }
            match col.as_str() {
                "name" => rec.name = Some(val.clone()),
                "class" => rec.class = Some(val.clone()),
                "order" => rec.order = Some(val.clone()),
                "family" => rec.family = Some(val.clone()),
                "body_size" => {
                    let v: f64 = val.parse().map_err(|_| {
                        Error::parse(path, line, format!("body_size '{val}' is not a number"))
                    })?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::parse(path, line, "body_size must be finite and >= 0"));
                    }
                    rec.body_size = Some(v);
                }
                _ => {
                    tag_vocab
                        .get_mut(col)
                        .expect("tag column registered")
                        .insert(val.clone());
                    rec.tags.insert(col.clone(), val.clone());
                }
            }
        }
        if by_id.insert(id.clone(), rec).is_some() {
            return Err(Error::parse(path, line, format!("duplicate species '{id}'")));
        }
    }
    let records = species_ids
        .iter()
        .map(|id| by_id.remove(id).unwrap_or_default())
        .collect();
    Ok(SpeciesAttributes { records, tag_vocab })
}
