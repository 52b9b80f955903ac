//! Compressed sparse row storage shared by the Markov and tracking matrices,
//! and the plain-text triplet format they serialize to.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Square CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            if r >= n || c >= n {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) outside a {n}x{n} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        for &(r, c, v) in triplets {
            cols[cursor[r]] = c;
            vals[cursor[r]] = v;
            cursor[r] += 1;
        }
        let rows = (0..n).map(|r| {
            let mut row: Vec<(usize, f64)> = (counts[r]..counts[r + 1])
                .map(|p| (cols[p], vals[p]))
                .collect();
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|e| e.1 != 0.0);
            merged
        });
        Ok(Self::from_rows(n, rows))
    }

    /// Builds from per-row `(col, value)` lists already sorted by column.
    pub(crate) fn from_rows<I, R>(n: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = (usize, f64)>,
    {
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        debug_assert_eq!(indptr.len(), n + 1);
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `(col, value)` pairs of one row, ascending by column.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    #[inline]
    pub(crate) fn row_slices(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n {
            return 0.0;
        }
        let (cols, vals) = self.row_slices(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row vector times matrix: `y[j] = sum_i x[i] * a[i][j]`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row_slices(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += xi * v;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

/// Sparse row vector with a dense backing store, used to push a single
/// release through repeated vector-matrix products without touching the
/// full state space on every step.
pub(crate) struct SparseRow {
    dense: Vec<f64>,
    touched: Vec<bool>,
    support: Vec<usize>,
}

impl SparseRow {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            dense: vec![0.0; n],
            touched: vec![false; n],
            support: Vec::new(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, i: usize, v: f64) {
        if !self.touched[i] {
            self.touched[i] = true;
            self.support.push(i);
        }
        self.dense[i] += v;
    }

    pub(crate) fn support(&self) -> &[usize] {
        &self.support
    }

    #[inline]
    pub(crate) fn value(&self, i: usize) -> f64 {
        self.dense[i]
    }

    pub(crate) fn clear(&mut self) {
        for &i in &self.support {
            self.dense[i] = 0.0;
            self.touched[i] = false;
        }
        self.support.clear();
    }

    /// Sorted nonzero `(index, value)` pairs.
    pub(crate) fn to_sorted(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .support
            .iter()
            .map(|&i| (i, self.dense[i]))
            .filter(|e| e.1 != 0.0)
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }
}

/// Shortest round-trip decimal for a float.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Serializes `rows` triplets under a magic line and `n nnz extra` header.
pub(crate) fn write_triplets(magic: &str, n: usize, header_extra: Option<f64>, m: &CsrMatrix) -> String {
    let mut s = String::with_capacity(32 * m.nnz() + 64);
    s.push_str(magic);
    s.push('\n');
    match header_extra {
        Some(x) => writeln!(s, "{} {} {}", n, m.nnz(), fmt_f64(x)).unwrap(),
        None => writeln!(s, "{} {}", n, m.nnz()).unwrap(),
    }
    for (i, j, v) in m.triplets() {
        writeln!(s, "{} {} {}", i, j, fmt_f64(v)).unwrap();
    }
    s
}

/// Line-oriented reader that reports 1-based line numbers in errors.
pub(crate) struct LineReader<'a> {
    name: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> LineReader<'a> {
    pub(crate) fn new(name: &'a str, text: &'a str) -> Self {
        Self {
            name,
            lines: text.lines().enumerate(),
            last: 0,
        }
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.name, self.last, msg)
    }

    pub(crate) fn next_line(&mut self, what: &str) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => {
                self.last += 1;
                Err(self.err(format!("unexpected end of file, expected {what}")))
            }
        }
    }

    pub(crate) fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let line = self.next_line("header")?;
        if line.trim_end() != magic {
            return Err(self.err(format!("expected header `{magic}`, found `{line}`")));
        }
        Ok(())
    }

    /// Parses exactly `count` whitespace-separated fields from the next line.
    pub(crate) fn fields<T: std::str::FromStr>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        let line = self.next_line(what)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != count {
            return Err(self.err(format!(
                "expected {count} fields for {what}, found {}",
                parts.len()
            )));
        }
        parts
            .iter()
            .map(|p| {
                p.parse::<T>()
                    .map_err(|_| self.err(format!("cannot parse `{p}` in {what}")))
            })
            .collect()
    }

    pub(crate) fn finite(&self, v: f64, what: &str) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("non-finite value in {what}")))
        }
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        for (i, l) in self.lines.by_ref() {
            if !l.trim().is_empty() {
                self.last = i + 1;
                return Err(self.err("unexpected trailing data"));
            }
        }
        Ok(())
    }
}

/// Parses the body of a triplet file after its magic line.
pub(crate) fn read_triplets(
    reader: &mut LineReader<'_>,
    with_extra: bool,
) -> Result<(usize, Option<f64>, Vec<(usize, usize, f64)>)> {
    let header = reader.next_line("size header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let expected = if with_extra { 3 } else { 2 };
    if parts.len() != expected {
        return Err(reader.err(format!("expected {expected} header fields")));
    }
    let n: usize = parts[0]
        .parse()
        .map_err(|_| reader.err("bad state count"))?;
    let nnz: usize = parts[1].parse().map_err(|_| reader.err("bad entry count"))?;
    let extra = if with_extra {
        let x: f64 = parts[2].parse().map_err(|_| reader.err("bad time step"))?;
        Some(reader.finite(x, "header")?)
    } else {
        None
    };
    let mut triplets = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let line = reader.next_line("entry")?;
        let p: Vec<&str> = line.split_whitespace().collect();
        if p.len() != 3 {
            return Err(reader.err("expected `row col value`"));
        }
        let r: usize = p[0].parse().map_err(|_| reader.err("bad row index"))?;
        let c: usize = p[1].parse().map_err(|_| reader.err("bad column index"))?;
        let v: f64 = p[2].parse().map_err(|_| reader.err("bad value"))?;
        let v = reader.finite(v, "entry")?;
        if r >= n || c >= n {
            return Err(reader.err(format!("entry ({r}, {c}) outside {n} states")));
        }
        triplets.push((r, c, v));
    }
    reader.expect_end()?;
    Ok((n, extra, triplets))
}
