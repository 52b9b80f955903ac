//! Contaminant tracking matrices and their operational transforms.
//!
//! `Q = I + P + P^2 + ... + P^m` accumulates, for a release at row `i`, how
//! much contaminant visits column `j` over the horizon `m * dt`. The pipeline
//! then thresholds `Q` to a binary pattern by sensor accuracy, removes
//! forbidden sensor columns and out-of-zone release rows, and weights each
//! remaining row by its volume share.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{StructuredGrid, ZoneMask};
use crate::parallel;
use crate::sparse::{read_triplets, write_triplets, CsrMatrix, LineReader, SparseRow};
use crate::transfer_operator::MarkovMatrix;

pub const TRACKING_MAGIC: &str = "# pfsensor-tracking v1";
pub const BINARY_TRACKING_MAGIC: &str = "# pfsensor-tracking-binary v1";

/// Neumann partial sum of a Markov operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingMatrix {
    matrix: CsrMatrix,
    steps: usize,
    dt: f64,
}

impl TrackingMatrix {
    pub fn n_states(&self) -> usize {
        self.matrix.n()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Horizon `tau = m * dt`.
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    /// The file header carries `dt`; the step count is recovered by the
    /// caller from the run settings.
    pub fn to_text(&self) -> String {
        write_triplets(TRACKING_MAGIC, self.n_states(), Some(self.dt), &self.matrix)
    }

    pub fn parse(name: &str, text: &str, steps: usize) -> Result<Self> {
        let mut r = LineReader::new(name, text);
        r.expect_magic(TRACKING_MAGIC)?;
        let (n, dt, triplets) = read_triplets(&mut r, true)?;
        let matrix = CsrMatrix::from_triplets(n, &triplets)?;
        let bound = (steps + 1) as f64;
        if matrix.values().iter().any(|&v| !(0.0..=bound * (1.0 + 1e-12)).contains(&v)) {
            return Err(Error::parse(name, 0, format!("tracking entries must lie in [0, {bound}]")));
        }
        Ok(Self {
            matrix,
            steps,
            dt: dt.unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Computes `I + P + ... + P^m` one row at a time: row `i` is the history of
/// a unit release at `i` pushed through `m` steps. Rows are independent and
/// computed in parallel.
pub fn tracking_matrix(p: &MarkovMatrix, steps: usize) -> TrackingMatrix {
    let n = p.n_states();
    let csr = p.matrix();
    let rows = parallel::map_range(n, |i| {
        let mut current = SparseRow::new(n);
        let mut next = SparseRow::new(n);
        let mut acc = SparseRow::new(n);
        current.add(i, 1.0);
        acc.add(i, 1.0);
        for _ in 0..steps {
            next.clear();
            for &k in current.support() {
                let x = current.value(k);
                if x == 0.0 {
                    continue;
                }
                let (cols, vals) = csr.row_slices(k);
                for (&c, &v) in cols.iter().zip(vals) {
                    next.add(c, x * v);
                }
            }
            for &k in next.support() {
                acc.add(k, next.value(k));
            }
            std::mem::swap(&mut current, &mut next);
        }
        acc.to_sorted()
    });
    TrackingMatrix {
        matrix: CsrMatrix::from_rows(n, rows),
        steps,
        dt: p.dt(),
    }
}

/// Sensor accuracy as a fraction of released mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    epsilon_acc: f64,
    raw: bool,
}

impl SensorSpec {
    /// Threshold compared against `epsilon_acc * (m + 1)`, so the fraction
    /// keeps its meaning for any horizon length.
    pub fn new(epsilon_acc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon_acc) {
            return Err(Error::invalid(format!("epsilon_acc must lie in [0, 1], got {epsilon_acc}")));
        }
        Ok(Self { epsilon_acc, raw: false })
    }

    /// Threshold compared directly against tracking entries.
    pub fn raw(epsilon_acc: f64) -> Result<Self> {
        Ok(Self {
            raw: true,
            ..Self::new(epsilon_acc)?
        })
    }

    pub fn epsilon_acc(&self) -> f64 {
        self.epsilon_acc
    }

    pub fn is_raw(&self) -> bool {
        self.raw
    }

    /// Absolute value an entry must reach for a horizon of `steps` steps.
    pub fn cutoff(&self, steps: usize) -> f64 {
        if self.raw {
            self.epsilon_acc
        } else {
            self.epsilon_acc * (steps + 1) as f64
        }
    }
}

/// Sparse 0/1 pattern: a pair `(i, j)` means a release at `i` is sensed at `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTrackingMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl BinaryTrackingMatrix {
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("pair ({i}, {j}) outside {n} states")));
            }
            rows[i].push(j);
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        Ok(Self::from_rows(n, rows))
    }

    /// Every pair present.
    pub fn full(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|_| (0..n).collect()))
    }

    fn from_rows(n: usize, rows: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        for r in rows {
            indices.extend(r);
            indptr.push(indices.len());
        }
        Self { n, indptr, indices }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_pairs(&self) -> usize {
        self.indices.len()
    }

    /// Sensing columns of row `i`, ascending.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n && self.row(i).binary_search(&j).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{BINARY_TRACKING_MAGIC}\n{} {}\n", self.n, self.n_pairs());
        for (i, j) in self.pairs() {
            s.push_str(&format!("{i} {j}\n"));
        }
        s
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut r = LineReader::new(name, text);
        r.expect_magic(BINARY_TRACKING_MAGIC)?;
        let header: Vec<usize> = r.fields(2, "size header `n_states n_pairs`")?;
        let (n, count) = (header[0], header[1]);
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let p: Vec<usize> = r.fields(2, "pair `row col`")?;
            if p[0] >= n || p[1] >= n {
                return Err(r.err(format!("pair ({}, {}) outside {n} states", p[0], p[1])));
            }
            pairs.push((p[0], p[1]));
        }
        r.expect_end()?;
        Self::from_pairs(n, pairs)
    }
}

/// Keeps the stored entries of `q` that reach the sensor cutoff. Entries
/// absent from the sparse structure count as zero and are never kept; the
/// identity term guarantees the diagonal is stored.
pub fn threshold(q: &TrackingMatrix, spec: &SensorSpec) -> BinaryTrackingMatrix {
    let cutoff = spec.cutoff(q.steps);
    let rows = parallel::map_range(q.n_states(), |i| {
        q.matrix
            .row(i)
            .filter(|&(_, v)| v >= cutoff)
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
    });
    BinaryTrackingMatrix::from_rows(q.n_states(), rows)
}

/// Location and sensing constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    /// States that cannot host a sensor (columns removed).
    pub forbidden_locations: ZoneMask,
    /// Release states outside the zone of interest (rows removed).
    pub sensing_ignore: ZoneMask,
}

impl ConstraintSet {
    pub fn none(n_states: usize) -> Self {
        Self {
            forbidden_locations: ZoneMask::empty(n_states),
            sensing_ignore: ZoneMask::empty(n_states),
        }
    }

    /// Sensing restricted to an occupied zone: every state outside it is ignored.
    pub fn occupied_zone(forbidden_locations: ZoneMask, occupied: &ZoneMask) -> Self {
        Self {
            forbidden_locations,
            sensing_ignore: occupied.complement(),
        }
    }

    /// Widens both masks to `n_states`, excluding the added states from
    /// placement and from sensing.
    pub fn extended(&self, n_states: usize) -> Self {
        Self {
            forbidden_locations: self.forbidden_locations.extended(n_states, true),
            sensing_ignore: self.sensing_ignore.extended(n_states, true),
        }
    }
}

/// Removes pairs whose column is a forbidden location or whose row is ignored.
pub fn apply_constraints(qb: &BinaryTrackingMatrix, c: &ConstraintSet) -> Result<BinaryTrackingMatrix> {
    let n = qb.n;
    for (name, m) in [("forbidden-location", &c.forbidden_locations), ("sensing-ignore", &c.sensing_ignore)] {
        if m.n_states() != n {
            return Err(Error::invalid(format!(
                "{name} mask covers {} states, matrix has {n}",
                m.n_states()
            )));
        }
    }
    let rows = (0..n).map(|i| {
        if c.sensing_ignore.contains(i) {
            Vec::new()
        } else {
            qb.row(i)
                .iter()
                .copied()
                .filter(|&j| !c.forbidden_locations.contains(j))
                .collect()
        }
    });
    Ok(BinaryTrackingMatrix::from_rows(n, rows))
}

/// Binary pattern whose row `i` entries carry the volume share of state `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTrackingMatrix {
    pattern: BinaryTrackingMatrix,
    row_weight: Vec<f64>,
}

impl ScaledTrackingMatrix {
    /// Pattern with explicit per-row volume shares.
    pub fn new(pattern: BinaryTrackingMatrix, row_weight: Vec<f64>) -> Result<Self> {
        if row_weight.len() != pattern.n {
            return Err(Error::invalid(format!(
                "{} row weights for {} states",
                row_weight.len(),
                pattern.n
            )));
        }
        if row_weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("row weights must be finite and >= 0"));
        }
        Ok(Self { pattern, row_weight })
    }

    pub fn n_states(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &BinaryTrackingMatrix {
        &self.pattern
    }

    /// Volume share carried by every entry of row `i`.
    pub fn row_weight(&self, i: usize) -> f64 {
        self.row_weight[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.pattern.contains(i, j) {
            self.row_weight[i]
        } else {
            0.0
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pattern.pairs().map(|(i, j)| (i, j, self.row_weight[i]))
    }
}

/// Scales each row by `V_i / V_total`. A matrix with one more state than the
/// grid has an absorbing exit state; its row and column are dropped.
pub fn volumetric_scale(qb: &BinaryTrackingMatrix, grid: &StructuredGrid) -> Result<ScaledTrackingMatrix> {
    let n = grid.n_states();
    let pattern = if qb.n == n {
        qb.clone()
    } else if qb.n == n + 1 {
        BinaryTrackingMatrix::from_rows(
            n,
            (0..n).map(|i| qb.row(i).iter().copied().filter(|&j| j < n).collect()),
        )
    } else {
        return Err(Error::invalid(format!(
            "binary matrix has {} states, grid has {n}",
            qb.n
        )));
    };
    let share = grid.cell_volume() / grid.total_volume();
    ScaledTrackingMatrix::new(pattern, vec![share; n])
}
