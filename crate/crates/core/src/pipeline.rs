//! End-to-end commands: build operators, place sensors, validate against the
//! oracle, study sample convergence, propagate a release.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{GridConfig, RunConfig, ScenarioSample};
use crate::error::{Error, Result};
use crate::flowfield::save_scalar_field;
use crate::grid::StructuredGrid;
use crate::oracle::{compare_markov, OracleConfig};
use crate::parallel::{map_range, map_slice, with_workers};
use crate::placement::{coverage_vector, expected_coverage, place_sensors, CoverageVector, Placement, Removal, StopReason};
use crate::tracking::{apply_constraints, threshold, tracking_matrix, volumetric_scale, ConstraintSet, ScaledTrackingMatrix};
use crate::transfer_operator::{build_markov_with, propagate, ConcentrationField, MarkovMatrix, SourceTerm};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLAN_FILE: &str = "plan.json";
pub const EXPECTED_COVERAGE_FILE: &str = "expected_coverage.txt";

/// cdf point sets used when a sample count has a tabulated entry.
pub const TABULATED_CDF_POINTS: [&[f64]; 5] = [
    &[0.0, 1.0],
    &[0.0, 0.5, 1.0],
    &[0.0, 0.3, 0.5, 0.7, 1.0],
    &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
    &[0.0, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 1.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub xi: f64,
    pub weight: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: GridConfig,
    pub dt: f64,
    pub outlets: Vec<String>,
    pub scenarios: Vec<ManifestEntry>,
}

/// Scenarios and their Markov operators, in scenario order.
pub struct Operators {
    pub grid: StructuredGrid,
    pub samples: Vec<ScenarioSample>,
    pub markov: Vec<MarkovMatrix>,
}

fn grid_config(g: &StructuredGrid) -> GridConfig {
    GridConfig {
        dims: g.dims(),
        spacing: g.spacing(),
        origin: g.origin(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn build_operators(cfg: &RunConfig) -> Result<Operators> {
    let samples = cfg.scenarios()?;
    let grid = samples[0].scenario.grid().clone();
    let boundary = cfg.boundary()?;
    let dt = cfg.operator.dt;
    let markov = with_workers(cfg.run.workers, || {
        map_slice(&samples, |s| build_markov_with(&s.scenario, dt, &boundary))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Operators { grid, samples, markov })
}

/// Writes one matrix file per scenario and a manifest into the output directory.
pub fn cmd_build(cfg: &RunConfig) -> Result<Manifest> {
    let ops = build_operators(cfg)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let mut scenarios = Vec::with_capacity(ops.samples.len());
    for (id, (s, p)) in ops.samples.iter().zip(&ops.markov).enumerate() {
        let name = PathBuf::from(format!("markov_{id:03}.txt"));
        p.save(out.join(&name))?;
        scenarios.push(ManifestEntry {
            id,
            xi: s.xi,
            weight: s.weight,
            path: name,
        });
    }
    let manifest = Manifest {
        grid: grid_config(&ops.grid),
        dt: cfg.operator.dt,
        outlets: cfg.operator.outlets.clone(),
        scenarios,
    };
    write_file(&out.join(MANIFEST_FILE), &to_json(&manifest)?)?;
    log::info!("wrote {} operators to {}", manifest.scenarios.len(), out.display());
    Ok(manifest)
}

/// Loads a manifest and its matrices. Matrix paths are relative to the manifest.
pub fn load_manifest(path: &Path) -> Result<(Manifest, StructuredGrid, Vec<MarkovMatrix>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path.display().to_string(), e.line(), e.to_string()))?;
    let grid = manifest.grid.build()?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let markov = manifest
        .scenarios
        .iter()
        .map(|e| MarkovMatrix::load(dir.join(&e.path)))
        .collect::<Result<Vec<_>>>()?;
    for (e, p) in manifest.scenarios.iter().zip(&markov) {
        let n = p.n_states();
        if n != grid.n_states() && n != grid.n_states() + 1 {
            return Err(Error::invalid(format!(
                "{}: {n} states do not fit a grid of {}",
                e.path.display(),
                grid.n_states()
            )));
        }
    }
    Ok((manifest, grid, markov))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Tracking, threshold, constraints and volume scaling for one operator.
pub fn scaled_tracking(
    p: &MarkovMatrix,
    grid: &StructuredGrid,
    cfg: &RunConfig,
    constraints: &ConstraintSet,
) -> Result<ScaledTrackingMatrix> {
    let q = tracking_matrix(p, cfg.tracking.steps);
    let qb = threshold(&q, &cfg.sensor_spec()?);
    let qc = apply_constraints(&qb, &constraints.extended(p.n_states()))?;
    volumetric_scale(&qc, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorReport {
    pub state: usize,
    pub ijk: [usize; 3],
    pub position: [f64; 3],
    pub expected_marginal: f64,
    pub per_scenario_marginal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub xi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSettings {
    pub n_states: usize,
    pub dt: f64,
    pub steps: usize,
    pub horizon: f64,
    pub eps_acc: f64,
    pub threshold_mode: &'static str,
    pub removal: Removal,
    pub sensors: Option<usize>,
    pub min_coverage: Option<f64>,
    pub outlets: Vec<String>,
    pub forbidden_states: usize,
    pub ignored_states: usize,
    pub scenarios: Vec<ScenarioReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub sensors: Vec<SensorReport>,
    /// Cumulative expected coverage after each sensor (fraction of total volume).
    pub cumulative_expected_coverage: Vec<f64>,
    /// The same curve relative to the occupied volume, when a sensing zone is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupied_space_coverage: Option<Vec<f64>>,
    pub stop_reason: StopReason,
    pub truncated: bool,
    pub settings: PlanSettings,
}

impl PlanReport {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }
}

/// A placement together with the per-state maps written next to the plan.
pub struct PlanOutcome {
    pub report: PlanReport,
    pub placement: Placement,
    pub expected_coverage: Vec<f64>,
    /// For each sensor, the probability that a release in each state is
    /// credited to it.
    pub sensor_maps: Vec<Vec<f64>>,
}

/// Runs tracking through greedy placement for already built operators.
pub fn plan_from_operators(
    cfg: &RunConfig,
    grid: &StructuredGrid,
    scenarios: &[ScenarioReport],
    markov: &[MarkovMatrix],
) -> Result<PlanOutcome> {
    let n = grid.n_states();
    let constraints = cfg.constraint_set(grid)?;
    if constraints.forbidden_locations.len() == n {
        return Err(Error::invalid(format!(
            "location constraints forbid all {n} states; no sensor can be placed"
        )));
    }
    if constraints.sensing_ignore.len() == n {
        return Err(Error::invalid("sensing constraints ignore every state"));
    }
    let options = cfg.placement_options()?;
    let weights: Vec<f64> = scenarios.iter().map(|s| s.weight).collect();
    let placement = with_workers(cfg.run.workers, || -> Result<Placement> {
        let scaled = map_slice(markov, |p| scaled_tracking(p, grid, cfg, &constraints))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        place_sensors(&scaled, &weights, &options)
    })?;

    let cumulative = placement.cumulative_curve();
    let occupied_space_coverage = cfg.has_sensing_mask().then(|| {
        let share = (n - constraints.sensing_ignore.len()) as f64 / n as f64;
        cumulative.iter().map(|c| c / share).collect()
    });
    let sensors = placement
        .sensors
        .iter()
        .map(|s| {
            Ok(SensorReport {
                state: s.state,
                ijk: grid.ijk(s.state)?,
                position: grid.cell_center(s.state)?,
                expected_marginal: s.expected_marginal,
                per_scenario_marginal: s.per_scenario_marginal.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sensor_maps = placement
        .sensors
        .iter()
        .map(|s| {
            let mut map = vec![0.0; n];
            for (rows, w) in s.covered_rows.iter().zip(&weights) {
                for &i in rows {
                    map[i] += w;
                }
            }
            map
        })
        .collect();
    let spec = cfg.sensor_spec()?;
    let report = PlanReport {
        sensors,
        cumulative_expected_coverage: cumulative,
        occupied_space_coverage,
        stop_reason: placement.stop_reason,
        truncated: placement.truncated,
        settings: PlanSettings {
            n_states: n,
            dt: markov[0].dt(),
            steps: cfg.tracking.steps,
            horizon: cfg.tracking.steps as f64 * markov[0].dt(),
            eps_acc: spec.epsilon_acc(),
            threshold_mode: if spec.is_raw() { "raw" } else { "normalized" },
            removal: options.removal,
            sensors: options.max_sensors,
            min_coverage: options.min_coverage,
            outlets: cfg.operator.outlets.clone(),
            forbidden_states: constraints.forbidden_locations.len(),
            ignored_states: constraints.sensing_ignore.len(),
            scenarios: scenarios.to_vec(),
        },
    };
    Ok(PlanOutcome {
        report,
        expected_coverage: placement.initial_expected.values().to_vec(),
        placement,
        sensor_maps,
    })
}

/// Builds and places without touching the file system.
pub fn run_in_memory(cfg: &RunConfig) -> Result<PlanOutcome> {
    let ops = build_operators(cfg)?;
    let scenarios: Vec<ScenarioReport> = ops
        .samples
        .iter()
        .map(|s| ScenarioReport { xi: s.xi, weight: s.weight })
        .collect();
    plan_from_operators(cfg, &ops.grid, &scenarios, &ops.markov)
}

/// Places sensors on the operators listed in a manifest (default: the one in
/// the output directory) and writes the plan and coverage maps.
pub fn cmd_place(cfg: &RunConfig, manifest: Option<&Path>) -> Result<PlanOutcome> {
    let out = cfg.out_dir();
    let manifest_path = manifest.map(Path::to_path_buf).unwrap_or_else(|| out.join(MANIFEST_FILE));
    let (manifest, grid, markov) = load_manifest(&manifest_path)?;
    if manifest.dt != cfg.operator.dt {
        log::warn!(
            "manifest dt {} differs from configured dt {}; using the manifest",
            manifest.dt,
            cfg.operator.dt
        );
    }
    let scenarios: Vec<ScenarioReport> = manifest
        .scenarios
        .iter()
        .map(|e| ScenarioReport { xi: e.xi, weight: e.weight })
        .collect();
    let outcome = plan_from_operators(cfg, &grid, &scenarios, &markov)?;
    create_dir(&out)?;
    write_file(&out.join(PLAN_FILE), &outcome.report.to_json()?)?;
    save_scalar_field(out.join(EXPECTED_COVERAGE_FILE), &grid, &outcome.expected_coverage)?;
    for (k, map) in outcome.sensor_maps.iter().enumerate() {
        save_scalar_field(out.join(format!("coverage_sensor_{k:02}.txt")), &grid, map)?;
    }
    if outcome.report.truncated {
        log::warn!("plan truncated at {} sensors", outcome.report.sensors.len());
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub scenario: usize,
    pub xi: f64,
    pub l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub steps: usize,
    pub dt: f64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.l2_error).fold(0.0, f64::max)
    }
}

/// Gaussian blob with center and width given as fractions of the domain.
pub fn blob(grid: &StructuredGrid, center: [f64; 3], width: f64) -> Result<ConcentrationField> {
    let len = grid.lengths();
    let o = grid.origin();
    let dims = grid.dims();
    let active: Vec<usize> = (0..3).filter(|&a| dims[a] > 1).collect();
    let scale = active.iter().map(|&a| len[a]).fold(f64::INFINITY, f64::min);
    let sigma = width * if scale.is_finite() { scale } else { 1.0 };
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("blob width must be positive, got {width}")));
    }
    let values = (0..grid.n_states())
        .map(|k| {
            let c = grid.cell_center(k)?;
            let r2: f64 = active.iter().map(|&a| (c[a] - o[a] - center[a] * len[a]).powi(2)).sum();
            Ok((-r2 / (2.0 * sigma * sigma)).exp())
        })
        .collect::<Result<Vec<_>>>()?;
    ConcentrationField::new(values)
}

/// Compares Markov transport with the finite-volume oracle for every
/// scenario. Operators come from `manifest` when given, otherwise they are
/// built from the configuration.
pub fn cmd_validate(cfg: &RunConfig, manifest: Option<&Path>) -> Result<ValidationReport> {
    let v = cfg
        .validate
        .clone()
        .ok_or_else(|| Error::Config("validate needs a [validate] section".into()))?;
    let samples = cfg.scenarios()?;
    let markov = match manifest {
        Some(path) => {
            let (m, _, markov) = load_manifest(path)?;
            if markov.len() != samples.len() {
                return Err(Error::invalid(format!(
                    "manifest lists {} scenarios, configuration has {}",
                    markov.len(),
                    samples.len()
                )));
            }
            if m.dt != cfg.operator.dt {
                log::warn!("manifest dt {} differs from configured dt {}", m.dt, cfg.operator.dt);
            }
            markov
        }
        None => build_operators(cfg)?.markov,
    };
    let boundary = cfg.boundary()?;
    let steps = v.steps.unwrap_or(cfg.tracking.steps);
    let grid = samples[0].scenario.grid().clone();
    let phi0 = blob(&grid, v.blob_center, v.blob_width)?;
    let errors = with_workers(cfg.run.workers, || {
        map_range(samples.len(), |i| {
            let p = &markov[i];
            let mut oracle = OracleConfig::new(v.cfl_target, steps as f64 * p.dt())?;
            if let Some(r) = v.step_ratio {
                oracle = oracle.with_fixed_step(r * p.dt())?;
            }
            compare_markov(p, &samples[i].scenario, &phi0, steps, &oracle, &boundary)
        })
    });
    let rows = errors
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(ValidationRow {
                scenario: i,
                xi: samples[i].xi,
                l2_error: e?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ValidationReport {
        tolerance: v.tolerance,
        steps,
        dt: markov[0].dt(),
        rows,
    };
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join("validation.json"), &to_json(&report)?)?;
    if let Some(worst) = report.rows.iter().find(|r| !(r.l2_error <= v.tolerance)) {
        return Err(Error::ToleranceExceeded {
            scenario: worst.scenario,
            error: worst.l2_error,
            tolerance: v.tolerance,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub samples: usize,
    pub cdf_points: Vec<f64>,
    /// `None` for the reference row.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("samples  cdf_points                               error\n");
        for r in &self.rows {
            let pts = r.cdf_points.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(",");
            let err = r.error.map_or_else(|| "-".to_string(), |e| format!("{e:.4}"));
            let _ = writeln!(s, "{:<8} {:<40} {}", r.samples, pts, err);
        }
        s
    }
}

/// Tabulated cdf points for `m` samples, else `m` evenly spaced points.
pub fn default_cdf_points(m: usize) -> Vec<f64> {
    if let Some(t) = TABULATED_CDF_POINTS.iter().find(|t| t.len() == m) {
        return t.to_vec();
    }
    if m == 1 {
        return vec![0.5];
    }
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Expected coverage for each sample count, compared with the largest count.
pub fn cmd_converge(cfg: &RunConfig, sample_counts: &[usize]) -> Result<ConvergenceTable> {
    if sample_counts.len() < 2 {
        return Err(Error::invalid("convergence study needs at least two sample counts"));
    }
    let mut counts = sample_counts.to_vec();
    counts.sort_unstable();
    if counts[0] == 0 || counts.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("sample counts must be distinct and positive: {sample_counts:?}")));
    }
    let grid = cfg.grid_required()?;
    let constraints = cfg.constraint_set(&grid)?;
    let boundary = cfg.boundary()?;

    // Coverage vectors are cached per cdf point; point sets overlap heavily.
    let mut cache: HashMap<u64, CoverageVector> = HashMap::new();
    let mut expected = Vec::with_capacity(counts.len());
    for &m in &counts {
        let points = default_cdf_points(m);
        let samples = cfg.vortex_scenarios(&points)?;
        let missing: Vec<usize> = (0..points.len())
            .filter(|&i| !cache.contains_key(&points[i].to_bits()))
            .collect();
        let fresh = with_workers(cfg.run.workers, || {
            map_slice(&missing, |&i| -> Result<CoverageVector> {
                let p = build_markov_with(&samples[i].scenario, cfg.operator.dt, &boundary)?;
                Ok(coverage_vector(&scaled_tracking(&p, &grid, cfg, &constraints)?))
            })
        });
        for (&i, v) in missing.iter().zip(fresh) {
            cache.insert(points[i].to_bits(), v?);
        }
        let vectors: Vec<CoverageVector> = points.iter().map(|p| cache[&p.to_bits()].clone()).collect();
        let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
        expected.push((points, expected_coverage(&vectors, &weights)?));
    }

    let reference = expected.last().expect("at least two rows").1.values().to_vec();
    let norm = l2_norm(&reference);
    let last = expected.len() - 1;
    let rows = expected
        .into_iter()
        .enumerate()
        .map(|(r, (points, ev))| {
            let error = (r != last).then(|| {
                let diff: Vec<f64> = ev.values().iter().zip(&reference).map(|(a, b)| a - b).collect();
                if norm > 0.0 {
                    l2_norm(&diff) / norm
                } else {
                    l2_norm(&diff)
                }
            });
            ConvergenceRow {
                samples: points.len(),
                cdf_points: points,
                error,
            }
        })
        .collect();
    Ok(ConvergenceTable { rows })
}

/// Transport of a unit release from `release` (default: the center cell)
/// under one scenario. A constant source keeps releasing every step when
/// `continuous` is set.
pub fn cmd_propagate(
    cfg: &RunConfig,
    scenario: usize,
    release: Option<usize>,
    continuous: bool,
) -> Result<(StructuredGrid, Vec<f64>)> {
    let samples = cfg.scenarios()?;
    let s = samples.get(scenario).ok_or_else(|| {
        Error::invalid(format!("scenario {scenario} out of range (have {})", samples.len()))
    })?;
    let grid = s.scenario.grid().clone();
    let p = build_markov_with(&s.scenario, cfg.operator.dt, &cfg.boundary()?)?;
    let release = match release {
        Some(r) => r,
        None => {
            let d = grid.dims();
            grid.state_index([d[0] / 2, d[1] / 2, d[2] / 2])?
        }
    };
    if release >= grid.n_states() {
        return Err(Error::StateOutOfRange {
            state: release,
            n_states: grid.n_states(),
        });
    }
    let mut unit = vec![0.0; p.n_states()];
    unit[release] = 1.0;
    let (phi0, source) = if continuous {
        (ConcentrationField::zeros(p.n_states()), SourceTerm::new(unit)?)
    } else {
        (ConcentrationField::new(unit)?, SourceTerm::zeros(p.n_states()))
    };
    let phi = propagate(&phi0, &p, &source, cfg.tracking.steps)?;
    let values = phi.values()[..grid.n_states()].to_vec();
    let out = cfg.out_dir();
    create_dir(&out)?;
    save_scalar_field(out.join("propagate.txt"), &grid, &values)?;
    Ok((grid, values))
}
