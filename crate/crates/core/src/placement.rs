//! Greedy expected-coverage sensor placement.
//!
//! A candidate sensor at state `j` covers, in one scenario, the volume share
//! of every release row `i` with a pair `(i, j)`. The expected coverage of
//! `j` is the weighted sum over scenarios. Each iteration picks the state
//! with the largest expected coverage (lowest index on ties), credits its
//! coverage, then removes its column and the release rows it covered from
//! every scenario before the next pick.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel;
use crate::tracking::ScaledTrackingMatrix;
use crate::uncertainty::check_weights;

/// Covered fraction of the total volume per candidate sensor state.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageVector {
    values: Vec<f64>,
}

impl CoverageVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("coverage values must be finite and >= 0"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        best.map(|b| b.0)
    }
}

/// Column sums of a scaled tracking matrix.
pub fn coverage_vector(qss: &ScaledTrackingMatrix) -> CoverageVector {
    let mut values = vec![0.0; qss.n_states()];
    for i in 0..qss.n_states() {
        let w = qss.row_weight(i);
        for &j in qss.pattern().row(i) {
            values[j] += w;
        }
    }
    CoverageVector { values }
}

/// `sum_s theta_s * v_s`, accumulated in scenario order.
pub fn expected_coverage(vectors: &[CoverageVector], weights: &[f64]) -> Result<CoverageVector> {
    if vectors.is_empty() || vectors.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} coverage vectors for {} weights",
            vectors.len(),
            weights.len()
        )));
    }
    check_weights(weights.iter().copied())?;
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("coverage vectors differ in length"));
    }
    let mut values = vec![0.0; n];
    for (v, &w) in vectors.iter().zip(weights) {
        for (acc, x) in values.iter_mut().zip(&v.values) {
            *acc += w * x;
        }
    }
    Ok(CoverageVector { values })
}

/// What is removed from every scenario after a sensor is placed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Removal {
    /// The sensor's column and every release row it covered.
    #[default]
    Covered,
    /// Only the row and column of the sensor state itself.
    Literal,
}

impl std::str::FromStr for Removal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covered" => Ok(Removal::Covered),
            "literal" => Ok(Removal::Literal),
            other => Err(Error::invalid(format!("unknown removal mode `{other}` (covered|literal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementOptions {
    pub max_sensors: Option<usize>,
    pub min_coverage: Option<f64>,
    pub removal: Removal,
}

impl PlacementOptions {
    pub fn sensors(k: usize) -> Self {
        Self {
            max_sensors: Some(k),
            min_coverage: None,
            removal: Removal::Covered,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(c) = self.min_coverage {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::invalid(format!("min_coverage must lie in (0, 1], got {c}")));
            }
        }
        match (self.max_sensors, self.min_coverage) {
            (Some(0), _) => Err(Error::invalid("sensor count must be at least 1")),
            (None, None) => Err(Error::invalid("need a sensor count or a minimum coverage")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SensorCount,
    MinCoverage,
    NoResidualCoverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedSensor {
    pub state: usize,
    pub expected_marginal: f64,
    pub per_scenario_marginal: Vec<f64>,
    /// Release rows credited to this sensor, per scenario, ascending.
    pub covered_rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub sensors: Vec<PlacedSensor>,
    /// Expected coverage before any sensor was placed.
    pub initial_expected: CoverageVector,
    pub cumulative_expected_coverage: f64,
    pub stop_reason: StopReason,
    /// Fewer sensors were placed than requested because no admissible
    /// column had residual coverage.
    pub truncated: bool,
}

impl Placement {
    /// Cumulative expected coverage after each sensor.
    pub fn cumulative_curve(&self) -> Vec<f64> {
        self.sensors
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.expected_marginal;
                Some(*acc)
            })
            .collect()
    }
}

/// Mutable greedy state for one scenario.
struct ScenarioState<'a> {
    q: &'a ScaledTrackingMatrix,
    /// Release rows per column.
    col_rows: Vec<Vec<usize>>,
    row_alive: Vec<bool>,
    col_alive: Vec<bool>,
    coverage: Vec<f64>,
}

impl<'a> ScenarioState<'a> {
    fn new(q: &'a ScaledTrackingMatrix) -> Self {
        let n = q.n_states();
        let mut col_rows = vec![Vec::new(); n];
        for i in 0..n {
            for &j in q.pattern().row(i) {
                col_rows[j].push(i);
            }
        }
        let mut s = Self {
            q,
            col_rows,
            row_alive: vec![true; n],
            col_alive: vec![true; n],
            coverage: vec![0.0; n],
        };
        for j in 0..n {
            s.coverage[j] = s.column_sum(j);
        }
        s
    }

    /// Sum in ascending row order so repeated recomputation is reproducible.
    fn column_sum(&self, j: usize) -> f64 {
        if !self.col_alive[j] {
            return 0.0;
        }
        self.col_rows[j]
            .iter()
            .filter(|&&i| self.row_alive[i])
            .map(|&i| self.q.row_weight(i))
            .sum()
    }

    fn covered_by(&self, j: usize) -> Vec<usize> {
        if !self.col_alive[j] {
            return Vec::new();
        }
        self.col_rows[j].iter().copied().filter(|&i| self.row_alive[i]).collect()
    }

    fn remove(&mut self, sensor: usize, removal: Removal, covered: &[usize]) {
        let rows: Vec<usize> = match removal {
            Removal::Covered => covered.to_vec(),
            Removal::Literal => vec![sensor],
        };
        let mut touched: Vec<usize> = Vec::new();
        for &i in &rows {
            if self.row_alive[i] {
                self.row_alive[i] = false;
                touched.extend_from_slice(self.q.pattern().row(i));
            }
        }
        self.col_alive[sensor] = false;
        touched.push(sensor);
        touched.sort_unstable();
        touched.dedup();
        for j in touched {
            self.coverage[j] = self.column_sum(j);
        }
    }
}

/// Greedy placement over weighted scenarios.
pub fn place_sensors(
    scenarios: &[ScaledTrackingMatrix],
    weights: &[f64],
    options: &PlacementOptions,
) -> Result<Placement> {
    options.validate()?;
    if scenarios.is_empty() || scenarios.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} scenario matrices for {} weights",
            scenarios.len(),
            weights.len()
        )));
    }
    check_weights(weights.iter().copied())?;
    let n = scenarios[0].n_states();
    if scenarios.iter().any(|q| q.n_states() != n) {
        return Err(Error::invalid("scenario matrices differ in size"));
    }

    let mut states: Vec<ScenarioState> = parallel::map_slice(scenarios, ScenarioState::new);
    let expected_now = |states: &[ScenarioState]| {
        let mut e = vec![0.0; n];
        for (s, &w) in states.iter().zip(weights) {
            for (acc, x) in e.iter_mut().zip(&s.coverage) {
                *acc += w * x;
            }
        }
        CoverageVector { values: e }
    };

    let initial_expected = expected_now(&states);
    let mut sensors = Vec::new();
    let mut cumulative = 0.0;
    let mut expected = initial_expected.clone();
    let stop_reason = loop {
        if options.max_sensors.is_some_and(|k| sensors.len() >= k) {
            break StopReason::SensorCount;
        }
        if options.min_coverage.is_some_and(|c| cumulative >= c) {
            break StopReason::MinCoverage;
        }
        let best = match expected.argmax() {
            Some(j) if expected.values[j] > 0.0 => j,
            _ => break StopReason::NoResidualCoverage,
        };
        let per_scenario_marginal: Vec<f64> = states.iter().map(|s| s.coverage[best]).collect();
        let covered_rows: Vec<Vec<usize>> = parallel::map_slice(&states, |s| s.covered_by(best));
        let removal = options.removal;
        {
            let mut paired: Vec<(&mut ScenarioState, &Vec<usize>)> = states.iter_mut().zip(&covered_rows).collect();
            parallel::for_each_mut(&mut paired, |(s, rows)| s.remove(best, removal, rows));
        }
        let marginal = expected.values[best];
        cumulative += marginal;
        sensors.push(PlacedSensor {
            state: best,
            expected_marginal: marginal,
            per_scenario_marginal,
            covered_rows,
        });
        expected = expected_now(&states);
    };
    let truncated = stop_reason == StopReason::NoResidualCoverage
        && options.max_sensors.is_some_and(|k| sensors.len() < k);
    if truncated {
        log::warn!(
            "placed {} of {} requested sensors: no admissible state has residual coverage",
            sensors.len(),
            options.max_sensors.unwrap_or_default()
        );
    }
    Ok(Placement {
        sensors,
        initial_expected,
        cumulative_expected_coverage: cumulative,
        stop_reason,
        truncated,
    })
}
