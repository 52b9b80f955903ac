//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{load_field, synth_recirculating, FlowScenario};
use crate::grid::{StructuredGrid, ZoneMask};
use crate::placement::{PlacementOptions, Removal};
use crate::tracking::{ConstraintSet, SensorSpec};
use crate::transfer_operator::BoundarySpec;
use crate::uncertainty::{check_weights, fit_kde, Distribution, QuadratureRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
}

impl GridConfig {
    pub fn build(&self) -> Result<StructuredGrid> {
        StructuredGrid::new(self.dims, self.spacing, self.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionConfig {
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    /// Kernel density fitted to observations, inline or one value per line.
    Kde {
        #[serde(default)]
        samples: Vec<f64>,
        samples_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub path: PathBuf,
    pub xi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Recirculating vortex whose strength is `strength_offset + strength_scale * xi`.
    Vortex {
        diffusivity: f64,
        #[serde(default)]
        strength_offset: f64,
        strength_scale: f64,
        distribution: DistributionConfig,
        cdf_points: Vec<f64>,
    },
    /// Precomputed velocity fields with explicit weights.
    Fields { diffusivity: f64, files: Vec<FieldEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub dt: f64,
    #[serde(default)]
    pub outlets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    pub steps: usize,
    pub eps_acc: f64,
    #[serde(default)]
    pub raw_threshold: bool,
}

/// Axis-aligned box in physical coordinates; cells whose centers fall
/// inside are selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    /// Sensors may not be installed here.
    #[serde(default)]
    pub forbidden: Vec<BoxConfig>,
    /// Releases outside these boxes are ignored. Empty means everywhere counts.
    #[serde(default)]
    pub occupied: Vec<BoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub sensors: Option<usize>,
    pub min_coverage: Option<f64>,
    #[serde(default)]
    pub removal: RemovalConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalConfig {
    #[default]
    Covered,
    Literal,
}

impl From<RemovalConfig> for Removal {
    fn from(r: RemovalConfig) -> Self {
        match r {
            RemovalConfig::Covered => Removal::Covered,
            RemovalConfig::Literal => Removal::Literal,
        }
    }
}

impl From<Removal> for RemovalConfig {
    fn from(r: Removal) -> Self {
        match r {
            Removal::Covered => RemovalConfig::Covered,
            Removal::Literal => RemovalConfig::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub tolerance: f64,
    /// Markov steps compared; defaults to the tracking horizon.
    pub steps: Option<usize>,
    #[serde(default = "default_cfl")]
    pub cfl_target: f64,
    /// Oracle step as a fraction of `dt`. Overrides `cfl_target` when set.
    pub step_ratio: Option<f64>,
    /// Initial Gaussian blob, center and width as fractions of the domain.
    #[serde(default = "default_blob_center")]
    pub blob_center: [f64; 3],
    #[serde(default = "default_blob_width")]
    pub blob_width: f64,
}

fn default_cfl() -> f64 {
    0.4
}

fn default_blob_center() -> [f64; 3] {
    [0.3, 0.5, 0.5]
}

fn default_blob_width() -> f64 {
    0.08
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Option<GridConfig>,
    pub scenarios: ScenarioConfig,
    pub operator: OperatorConfig,
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    pub placement: PlacementConfig,
    pub validate: Option<ValidateConfig>,
    #[serde(default)]
    pub run: RunSection,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that replace their config counterparts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub eps_acc: Option<f64>,
    pub raw_threshold: bool,
    pub removal: Option<Removal>,
    pub sensors: Option<usize>,
    pub min_coverage: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// One flow realization and the sample it came from.
#[derive(Debug, Clone)]
pub struct ScenarioSample {
    pub scenario: FlowScenario,
    pub xi: f64,
    pub weight: f64,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(dt) = o.dt {
            self.operator.dt = dt;
        }
        if let Some(m) = o.steps {
            self.tracking.steps = m;
        }
        if let Some(e) = o.eps_acc {
            self.tracking.eps_acc = e;
        }
        if o.raw_threshold {
            self.tracking.raw_threshold = true;
        }
        if let Some(r) = o.removal {
            self.placement.removal = r.into();
        }
        if o.sensors.is_some() {
            self.placement.sensors = o.sensors;
        }
        if o.min_coverage.is_some() {
            self.placement.min_coverage = o.min_coverage;
        }
        if o.workers.is_some() {
            self.run.workers = o.workers;
        }
        if o.out.is_some() {
            self.run.out = o.out.clone();
        }
        self.check()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.operator.dt.is_finite() && self.operator.dt > 0.0) {
            return bad(format!("operator.dt must be positive, got {}", self.operator.dt));
        }
        BoundarySpec::from_sides(&self.operator.outlets).map_err(|e| Error::Config(e.to_string()))?;
        SensorSpec::new(self.tracking.eps_acc).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(w) = self.run.workers {
            if w == 0 {
                return bad("run.workers must be at least 1".into());
            }
        }
        match &self.scenarios {
            ScenarioConfig::Vortex {
                diffusivity, cdf_points, ..
            } => {
                if self.grid.is_none() {
                    return bad("vortex scenarios need a [grid] section".into());
                }
                if cdf_points.is_empty() {
                    return bad("scenarios.cdf_points must not be empty".into());
                }
                if *diffusivity < 0.0 {
                    return bad(format!("scenarios.diffusivity must be non-negative, got {diffusivity}"));
                }
            }
            ScenarioConfig::Fields { files, .. } => {
                if files.is_empty() {
                    return bad("scenarios.files must not be empty".into());
                }
                check_weights(files.iter().map(|f| f.weight)).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        self.placement_options().map(|_| ())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.run.out.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn boundary(&self) -> Result<BoundarySpec> {
        BoundarySpec::from_sides(&self.operator.outlets)
    }

    pub fn sensor_spec(&self) -> Result<SensorSpec> {
        if self.tracking.raw_threshold {
            SensorSpec::raw(self.tracking.eps_acc)
        } else {
            SensorSpec::new(self.tracking.eps_acc)
        }
    }

    pub fn placement_options(&self) -> Result<PlacementOptions> {
        let opts = PlacementOptions {
            max_sensors: self.placement.sensors,
            min_coverage: self.placement.min_coverage,
            removal: self.placement.removal.into(),
        };
        if opts.max_sensors.is_none() && opts.min_coverage.is_none() {
            return Err(Error::Config("placement needs `sensors` or `min_coverage`".into()));
        }
        if opts.max_sensors == Some(0) {
            return Err(Error::Config("placement.sensors must be at least 1".into()));
        }
        if let Some(c) = opts.min_coverage {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Config(format!("placement.min_coverage must lie in (0, 1], got {c}")));
            }
        }
        Ok(opts)
    }

    pub fn distribution(&self) -> Result<Option<Distribution>> {
        let ScenarioConfig::Vortex { distribution, .. } = &self.scenarios else {
            return Ok(None);
        };
        let dist = match distribution {
            DistributionConfig::Gaussian { mu, sigma } => Distribution::gaussian(*mu, *sigma)?,
            DistributionConfig::Kde { samples, samples_file } => {
                let mut data = samples.clone();
                if let Some(f) = samples_file {
                    let path = self.resolve(f);
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    for (n, line) in text.lines().enumerate() {
                        let t = line.trim();
                        if t.is_empty() || t.starts_with('#') {
                            continue;
                        }
                        let x = t
                            .parse::<f64>()
                            .map_err(|e| Error::parse(&path.display().to_string(), n + 1, e.to_string()))?;
                        data.push(x);
                    }
                }
                fit_kde(&data)?
            }
        };
        Ok(Some(dist))
    }

    /// Scenarios at the configured cdf points (or the listed field files).
    pub fn scenarios(&self) -> Result<Vec<ScenarioSample>> {
        match &self.scenarios {
            ScenarioConfig::Vortex { cdf_points, .. } => self.vortex_scenarios(cdf_points),
            ScenarioConfig::Fields { diffusivity, files } => {
                let grid = self.grid.as_ref().map(GridConfig::build).transpose()?;
                files
                    .iter()
                    .map(|f| {
                        let field = load_field(self.resolve(&f.path))?;
                        if let Some(g) = &grid {
                            if g != field.grid() {
                                return Err(Error::Config(format!(
                                    "{}: field grid does not match [grid]",
                                    f.path.display()
                                )));
                            }
                        }
                        Ok(ScenarioSample {
                            scenario: FlowScenario::new(field, *diffusivity, f.xi, f.weight)?,
                            xi: f.xi,
                            weight: f.weight,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Vortex scenarios at arbitrary cdf points, with quadrature weights.
    pub fn vortex_scenarios(&self, cdf_points: &[f64]) -> Result<Vec<ScenarioSample>> {
        let ScenarioConfig::Vortex {
            diffusivity,
            strength_offset,
            strength_scale,
            ..
        } = &self.scenarios
        else {
            return Err(Error::Config("cdf points require a vortex scenario family".into()));
        };
        let dist = self.distribution()?.expect("vortex family has a distribution");
        let rule = QuadratureRule::from_cdf_points(&dist, cdf_points)?;
        let grid = self.grid_required()?;
        rule.samples()
            .iter()
            .zip(rule.weights())
            .map(|(&xi, &w)| {
                let field = synth_recirculating(&grid, strength_offset + strength_scale * xi)?;
                Ok(ScenarioSample {
                    scenario: FlowScenario::new(field, *diffusivity, xi, w)?,
                    xi,
                    weight: w,
                })
            })
            .collect()
    }

    pub fn grid_required(&self) -> Result<StructuredGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::Config("missing [grid] section".into()))?
            .build()
    }

    /// Location and sensing masks on `grid`.
    pub fn constraint_set(&self, grid: &StructuredGrid) -> Result<ConstraintSet> {
        let n = grid.n_states();
        let union = |boxes: &[BoxConfig]| -> Result<ZoneMask> {
            boxes
                .iter()
                .try_fold(ZoneMask::empty(n), |acc, b| acc.union(&grid.box_mask(b.lo, b.hi)?))
        };
        let forbidden = union(&self.constraints.forbidden)?;
        if self.constraints.occupied.is_empty() {
            Ok(ConstraintSet {
                forbidden_locations: forbidden,
                sensing_ignore: ZoneMask::empty(n),
            })
        } else {
            Ok(ConstraintSet::occupied_zone(forbidden, &union(&self.constraints.occupied)?))
        }
    }

    pub fn has_sensing_mask(&self) -> bool {
        !self.constraints.occupied.is_empty()
    }
}
