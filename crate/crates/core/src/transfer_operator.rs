//! Discrete Perron-Frobenius (Markov) operators built from flow scenarios.
//!
//! Entry `(i, j)` is the fraction of the contents of cell `i` that moves to
//! cell `j` during one step `dt`. Advection is donor-cell (only outgoing face
//! fluxes create off-diagonal mass), diffusion is a two-point flux, and the
//! diagonal takes whatever stays behind. Densities are row vectors: one step
//! is `phi <- phi * P + s`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flowfield::FlowScenario;
use crate::sparse::{read_triplets, write_triplets, CsrMatrix, LineReader};

pub const MARKOV_MAGIC: &str = "# pfsensor-markov v1";

/// Row sums must match 1 to this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Boundary face sides, indexed `2 * axis + upper`.
pub const SIDE_NAMES: [&str; 6] = ["x-", "x+", "y-", "y+", "z-", "z+"];

/// Which outer faces let mass leave the domain. Closed sides are no-flux.
/// Open (outlet) sides route their outgoing advective flux into one extra
/// absorbing state appended after the grid states.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundarySpec {
    outlets: [bool; 6],
}

impl BoundarySpec {
    pub fn closed() -> Self {
        Self::default()
    }

    pub fn with_outlet(mut self, axis: usize, upper: bool) -> Self {
        self.outlets[2 * axis + usize::from(upper)] = true;
        self
    }

    /// Parses side names such as `x+` or `y-`.
    pub fn from_sides<S: AsRef<str>>(sides: &[S]) -> Result<Self> {
        let mut spec = Self::closed();
        for s in sides {
            let idx = SIDE_NAMES
                .iter()
                .position(|n| *n == s.as_ref())
                .ok_or_else(|| Error::invalid(format!("unknown boundary side `{}`", s.as_ref())))?;
            spec.outlets[idx] = true;
        }
        Ok(spec)
    }

    pub fn is_outlet(&self, axis: usize, upper: bool) -> bool {
        self.outlets[2 * axis + usize::from(upper)]
    }

    pub fn has_outlets(&self) -> bool {
        self.outlets.iter().any(|&o| o)
    }
}

/// Sparse row-stochastic transition matrix with its time step.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix {
    matrix: CsrMatrix,
    dt: f64,
}

impl MarkovMatrix {
    /// Wraps a matrix after checking entries lie in `[0, 1]` and rows sum to 1.
    pub fn new(matrix: CsrMatrix, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("Markov time step must be positive, got {dt}")));
        }
        if let Some(v) = matrix.values().iter().find(|v| !(-0.0..=1.0 + ROW_SUM_TOL).contains(*v)) {
            return Err(Error::invalid(format!("transition probability {v} outside [0, 1]")));
        }
        for (i, s) in matrix.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { matrix, dt })
    }

    pub fn identity(n: usize, dt: f64) -> Result<Self> {
        Self::new(CsrMatrix::identity(n), dt)
    }

    pub fn from_triplets(n: usize, dt: f64, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        Self::new(CsrMatrix::from_triplets(n, triplets)?, dt)
    }

    pub fn n_states(&self) -> usize {
        self.matrix.n()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn to_text(&self) -> String {
        write_triplets(MARKOV_MAGIC, self.n_states(), Some(self.dt), &self.matrix)
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut r = LineReader::new(name, text);
        r.expect_magic(MARKOV_MAGIC)?;
        let (n, dt, triplets) = read_triplets(&mut r, true)?;
        let dt = dt.unwrap_or_default();
        Self::from_triplets(n, dt, &triplets).map_err(|e| Error::parse(name, 0, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }
}

/// Builds the operator with closed boundaries.
pub fn build_markov(scenario: &FlowScenario, dt: f64) -> Result<MarkovMatrix> {
    build_markov_with(scenario, dt, &BoundarySpec::closed())
}

/// Transfers out of one cell over one step, as `(target, volume moved)`.
/// `target == None` means the absorbing exit state.
fn outgoing_transfers(
    scenario: &FlowScenario,
    boundary: &BoundarySpec,
    state: usize,
    dt: f64,
    out: &mut Vec<(Option<usize>, f64)>,
) {
    let field = &scenario.field;
    let grid = field.grid();
    let h = grid.spacing();
    let d = scenario.diffusivity();
    out.clear();
    for axis in 0..3 {
        if grid.dims()[axis] == 1 {
            continue;
        }
        let area = grid.face_area(axis);
        for upper in [false, true] {
            let sign = if upper { 1.0 } else { -1.0 };
            match grid.neighbor(state, axis, upper) {
                Some(nb) => {
                    let un = sign * field.face_velocity(state, nb, axis);
                    let moved = un.max(0.0) * area * dt + d * area * dt / h[axis];
                    if moved > 0.0 {
                        out.push((Some(nb), moved));
                    }
                }
                None if boundary.is_outlet(axis, upper) => {
                    let un = sign * field.component(axis)[state];
                    let moved = un.max(0.0) * area * dt;
                    if moved > 0.0 {
                        out.push((None, moved));
                    }
                }
                None => {}
            }
        }
    }
}

/// Builds the operator with the given boundary treatment. With any outlet the
/// matrix has `N + 1` states, the last one absorbing.
pub fn build_markov_with(scenario: &FlowScenario, dt: f64, boundary: &BoundarySpec) -> Result<MarkovMatrix> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("Markov time step must be positive, got {dt}")));
    }
    let grid = scenario.grid();
    let n = grid.n_states();
    let volume = grid.cell_volume();
    let exit = boundary.has_outlets().then_some(n);
    let total = n + usize::from(exit.is_some());

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(total);
    let mut transfers = Vec::with_capacity(6);
    // Smallest volume / outflow-rate ratio over all cells; dt cancels.
    let mut bound = f64::INFINITY;
    let mut violated = false;
    for i in 0..n {
        outgoing_transfers(scenario, boundary, i, dt, &mut transfers);
        let leaving: f64 = transfers.iter().map(|t| t.1).sum::<f64>() / volume;
        if leaving > 0.0 {
            bound = bound.min(dt / leaving);
        }
        if leaving > 1.0 + ROW_SUM_TOL {
            violated = true;
        }
        if violated {
            continue;
        }
        let mut row: Vec<(usize, f64)> = transfers
            .iter()
            .map(|&(to, moved)| (to.unwrap_or(n), moved / volume))
            .collect();
        row.push((i, (1.0 - leaving).max(0.0)));
        row.sort_by_key(|e| e.0);
        row.retain(|e| e.1 != 0.0);
        rows.push(row);
    }
    if violated {
        return Err(Error::Unstable { dt, max_dt: bound });
    }
    if let Some(e) = exit {
        rows.push(vec![(e, 1.0)]);
    }
    MarkovMatrix::new(CsrMatrix::from_rows(total, rows), dt)
}

/// Largest step for which every diagonal entry stays non-negative.
/// `None` when nothing moves (any step is admissible).
pub fn max_stable_dt(scenario: &FlowScenario, boundary: &BoundarySpec) -> Option<f64> {
    let grid = scenario.grid();
    let volume = grid.cell_volume();
    let mut transfers = Vec::with_capacity(6);
    let mut bound: Option<f64> = None;
    for i in 0..grid.n_states() {
        outgoing_transfers(scenario, boundary, i, 1.0, &mut transfers);
        let rate: f64 = transfers.iter().map(|t| t.1).sum::<f64>() / volume;
        if rate > 0.0 {
            bound = Some(bound.map_or(1.0 / rate, |b: f64| b.min(1.0 / rate)));
        }
    }
    bound
}

/// Non-negative per-state contaminant density.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationField {
    values: Vec<f64>,
}

impl ConcentrationField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "concentration at state {k} is {}, must be finite and >= 0",
                values[k]
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Per-state amount added after every propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    values: Vec<f64>,
}

impl SourceTerm {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("source at state {k} must be finite and >= 0")));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Applies `phi <- phi * P + source` `steps` times.
pub fn propagate(
    phi: &ConcentrationField,
    p: &MarkovMatrix,
    source: &SourceTerm,
    steps: usize,
) -> Result<ConcentrationField> {
    let n = p.n_states();
    if phi.len() != n || source.values.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: field {}, source {}, operator {n}",
            phi.len(),
            source.values.len()
        )));
    }
    let zero_source = source.is_zero();
    let mut values = phi.values.clone();
    for _ in 0..steps {
        values = p.matrix.left_mul(&values);
        if !zero_source {
            for (v, s) in values.iter_mut().zip(&source.values) {
                *v += s;
            }
        }
    }
    // Round-off can leave -0.0 or tiny negatives only if P had them; it has not.
    Ok(ConcentrationField { values })
}

/// Probability-weighted sum of operators sharing size and time step.
pub fn expected_operator(scenarios: &[(&MarkovMatrix, f64)]) -> Result<MarkovMatrix> {
    let (first, _) = scenarios
        .first()
        .ok_or_else(|| Error::invalid("expected operator needs at least one scenario"))?;
    let n = first.n_states();
    let dt = first.dt();
    crate::uncertainty::check_weights(scenarios.iter().map(|s| s.1))?;
    let mut triplets = Vec::new();
    for (m, w) in scenarios {
        if m.n_states() != n {
            return Err(Error::invalid(format!(
                "operator sizes differ: {} vs {n}",
                m.n_states()
            )));
        }
        if m.dt() != dt {
            return Err(Error::invalid(format!("operator time steps differ: {} vs {dt}", m.dt())));
        }
        triplets.extend(m.matrix.triplets().map(|(i, j, v)| (i, j, w * v)));
    }
    MarkovMatrix::new(CsrMatrix::from_triplets(n, &triplets)?, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{synth_recirculating, VelocityField};
    use crate::grid::StructuredGrid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> StructuredGrid {
        StructuredGrid::new([n, 1, 1], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn no_transport_is_identity() {
        let g = StructuredGrid::new_2d(3, 3, 0.5, 0.5).unwrap();
        let s = FlowScenario::single(VelocityField::zeros(g), 0.0).unwrap();
        let p = build_markov(&s, 1.0).unwrap();
        assert_eq!(p, MarkovMatrix::identity(9, 1.0).unwrap());
    }

    #[test]
    fn two_cell_diffusion() {
        // unit face area, dx = 1: G / V = D * dt.
        let s = FlowScenario::single(VelocityField::zeros(line(2)), 0.1).unwrap();
        let p = build_markov(&s, 1.0).unwrap();
        let d = p.matrix().to_dense();
        assert_abs_diff_eq!(d[0][0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0][1], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1][0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1][1], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn three_cell_upwind() {
        let f = VelocityField::uniform(line(3), [0.25, 0.0, 0.0]).unwrap();
        let s = FlowScenario::single(f, 0.0).unwrap();
        let d = build_markov(&s, 1.0).unwrap().matrix().to_dense();
        assert_eq!(d[0], vec![0.75, 0.25, 0.0]);
        assert_eq!(d[1], vec![0.0, 0.75, 0.25]);
        assert_eq!(d[2], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn outlet_routes_to_absorbing_state() {
        let f = VelocityField::uniform(line(3), [0.25, 0.0, 0.0]).unwrap();
        let s = FlowScenario::single(f, 0.0).unwrap();
        let p = build_markov_with(&s, 1.0, &BoundarySpec::closed().with_outlet(0, true)).unwrap();
        assert_eq!(p.n_states(), 4);
        assert_eq!(p.get(2, 2), 0.75);
        assert_eq!(p.get(2, 3), 0.25);
        assert_eq!(p.get(3, 3), 1.0);
        assert!(BoundarySpec::from_sides(&["x+", "q"]).is_err());
        assert!(BoundarySpec::from_sides(&["x+"]).unwrap().is_outlet(0, true));
    }

    #[test]
    fn unstable_step_reports_bound() {
        let f = VelocityField::uniform(line(4), [0.5, 0.0, 0.0]).unwrap();
        let s = FlowScenario::single(f, 0.25).unwrap();
        match build_markov(&s, 10.0) {
            Err(Error::Unstable { dt, max_dt }) => {
                assert_eq!(dt, 10.0);
                // interior cell: 0.5 advective + 2 * 0.25 diffusive per second.
                assert_abs_diff_eq!(max_dt, 1.0, epsilon = 1e-12);
                assert!(build_markov(&s, max_dt).is_ok());
                assert_abs_diff_eq!(max_stable_dt(&s, &BoundarySpec::closed()).unwrap(), max_dt, epsilon = 1e-12);
            }
            other => panic!("expected stability error, got {other:?}"),
        }
        assert!(build_markov(&s, 0.0).is_err());
    }

    #[test]
    fn propagate_edge_cases() {
        let p = MarkovMatrix::identity(3, 0.5).unwrap();
        let phi = ConcentrationField::new(vec![1.0, 2.0, 0.5]).unwrap();
        let z = SourceTerm::zeros(3);
        assert_eq!(propagate(&phi, &p, &z, 0).unwrap(), phi);
        assert_eq!(propagate(&phi, &p, &z, 17).unwrap(), phi);
        let src = SourceTerm::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(propagate(&phi, &p, &src, 3).unwrap().values(), &[1.0, 5.0, 0.5]);
        assert!(propagate(&ConcentrationField::zeros(2), &p, &z, 1).is_err());
        assert!(ConcentrationField::new(vec![-1.0]).is_err());
        assert!(SourceTerm::new(vec![f64::NAN]).is_err());
    }

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> MarkovMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 }).collect();
            let mut raw = raw;
            raw[i] += 0.1;
            let s: f64 = raw.iter().sum();
            // fold rounding into the diagonal so the row sums to 1 exactly enough
            let mut acc = 0.0;
            for (j, v) in raw.iter().enumerate() {
                if j != i && *v > 0.0 {
                    t.push((i, j, v / s));
                    acc += v / s;
                }
            }
            t.push((i, i, 1.0 - acc));
        }
        MarkovMatrix::from_triplets(n, 1.0, &t).unwrap()
    }

    #[test]
    fn expected_operator_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_stochastic(4, &mut rng);
        let b = random_stochastic(4, &mut rng);
        assert_eq!(expected_operator(&[(&a, 1.0)]).unwrap(), a);
        let same = expected_operator(&[(&a, 0.3), (&a, 0.7)]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(same.get(i, j), a.get(i, j), epsilon = 1e-15);
            }
        }
        let mix = expected_operator(&[(&a, 0.3), (&b, 0.7)]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(mix.get(i, j), 0.3 * a.get(i, j) + 0.7 * b.get(i, j), epsilon = 1e-15);
            }
        }
        for s in mix.matrix().row_sums() {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert!(expected_operator(&[(&a, 0.3), (&b, 0.6)]).is_err());
        let c = MarkovMatrix::identity(3, 1.0).unwrap();
        assert!(expected_operator(&[(&a, 0.5), (&c, 0.5)]).is_err());
        let d = MarkovMatrix::identity(4, 2.0).unwrap();
        assert!(expected_operator(&[(&a, 0.5), (&d, 0.5)]).is_err());
    }

    #[test]
    fn file_round_trip_and_validation() {
        let g = StructuredGrid::new_2d(6, 5, 0.2, 0.2).unwrap();
        let s = FlowScenario::single(synth_recirculating(&g, 0.03).unwrap(), 1e-3).unwrap();
        let p = build_markov(&s, 0.5).unwrap();
        let back = MarkovMatrix::parse("mem", &p.to_text()).unwrap();
        assert_eq!(p, back);

        let corrupted = "# pfsensor-markov v1\n2 3 1.0\n0 0 0.5\n0 1 0.4\n1 1 1.0\n";
        assert!(matches!(MarkovMatrix::parse("mem", corrupted), Err(Error::Parse { .. })));
        let truncated = "# pfsensor-markov v1\n2 3 1.0\n0 0 1.0\n";
        assert!(matches!(MarkovMatrix::parse("mem", truncated), Err(Error::Parse { line: 4, .. })));
    }

    proptest! {
        #[test]
        fn mass_is_conserved(seed in any::<u64>(), steps in 0usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..12);
            let p = random_stochastic(n, &mut rng);
            let phi = ConcentrationField::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
            let out = propagate(&phi, &p, &SourceTerm::zeros(n), steps).unwrap();
            prop_assert!(((out.total() - phi.total()) / phi.total()).abs() <= 1e-10);
            prop_assert!(out.values().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn expected_operator_is_linear(seed in any::<u64>(), w in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..10);
            let a = random_stochastic(n, &mut rng);
            let b = random_stochastic(n, &mut rng);
            let phi = ConcentrationField::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
            let z = SourceTerm::zeros(n);
            let e = expected_operator(&[(&a, w), (&b, 1.0 - w)]).unwrap();
            let lhs = propagate(&phi, &e, &z, 1).unwrap();
            let pa = propagate(&phi, &a, &z, 1).unwrap();
            let pb = propagate(&phi, &b, &z, 1).unwrap();
            for k in 0..n {
                let rhs = w * pa.values()[k] + (1.0 - w) * pb.values()[k];
                prop_assert!((lhs.values()[k] - rhs).abs() <= 1e-12);
            }
        }
    }
}
