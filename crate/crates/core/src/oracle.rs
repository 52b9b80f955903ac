//! Explicit finite-volume advection-diffusion solver used as an independent
//! reference for Markov transport.
//!
//! Fluxes are assembled face by face (first-order upwind advection, central
//! two-point diffusion) and integrated with forward Euler. Nothing here goes
//! through the Markov operator builder.

use crate::error::{Error, Result};
use crate::flowfield::FlowScenario;
use crate::transfer_operator::{
    build_markov_with, propagate, BoundarySpec, ConcentrationField, MarkovMatrix, SourceTerm,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    cfl_target: f64,
    end_time: f64,
    fixed_step: Option<f64>,
}

impl OracleConfig {
    /// Time step chosen as `cfl_target` times the explicit stability limit.
    pub fn new(cfl_target: f64, end_time: f64) -> Result<Self> {
        if !(cfl_target > 0.0 && cfl_target <= 0.5) {
            return Err(Error::invalid(format!("cfl_target must lie in (0, 0.5], got {cfl_target}")));
        }
        if !(end_time.is_finite() && end_time > 0.0) {
            return Err(Error::invalid(format!("end_time must be positive, got {end_time}")));
        }
        Ok(Self {
            cfl_target,
            end_time,
            fixed_step: None,
        })
    }

    /// Uses a prescribed step instead of the CFL-derived one. The step is
    /// shortened so that a whole number of steps reaches `end_time`.
    pub fn with_fixed_step(mut self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid(format!("oracle step must be positive, got {step}")));
        }
        self.fixed_step = Some(step);
        Ok(self)
    }

    pub fn cfl_target(&self) -> f64 {
        self.cfl_target
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub field: ConcentrationField,
    pub steps: usize,
    pub step: f64,
}

struct Face {
    lo: usize,
    hi: usize,
    /// Volumetric flow from `lo` to `hi`, m^3/s (negative means reverse).
    flow: f64,
    /// Diffusive conductance `D * A / h`, m^3/s.
    conductance: f64,
}

struct Assembly {
    faces: Vec<Face>,
    /// `(cell, outflow m^3/s)` through open boundary faces.
    outlets: Vec<(usize, f64)>,
    volume: f64,
}

impl Assembly {
    fn new(scenario: &FlowScenario, boundary: &BoundarySpec) -> Self {
        let field = &scenario.field;
        let grid = field.grid();
        let [nx, ny, nz] = grid.dims();
        let h = grid.spacing();
        let d = scenario.diffusivity();
        let mut faces = Vec::new();
        let mut outlets = Vec::new();
        for l in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let ijk = [i, j, l];
                    let k = grid.index_unchecked(ijk);
                    for axis in 0..3 {
                        let n_axis = grid.dims()[axis];
                        if n_axis == 1 {
                            continue;
                        }
                        let area = grid.face_area(axis);
                        let c = field.component(axis);
                        if ijk[axis] + 1 < n_axis {
                            let mut up = ijk;
                            up[axis] += 1;
                            let kn = grid.index_unchecked(up);
                            faces.push(Face {
                                lo: k,
                                hi: kn,
                                flow: 0.5 * (c[k] + c[kn]) * area,
                                conductance: d * area / h[axis],
                            });
                        } else if boundary.is_outlet(axis, true) && c[k] > 0.0 {
                            outlets.push((k, c[k] * area));
                        }
                        if ijk[axis] == 0 && boundary.is_outlet(axis, false) && c[k] < 0.0 {
                            outlets.push((k, -c[k] * area));
                        }
                    }
                }
            }
        }
        Self {
            faces,
            outlets,
            volume: grid.cell_volume(),
        }
    }

    /// Largest stable forward-Euler step, `None` when nothing moves.
    fn max_step(&self, n: usize) -> Option<f64> {
        let mut out = vec![0.0; n];
        for f in &self.faces {
            out[f.lo] += f.flow.max(0.0) + f.conductance;
            out[f.hi] += (-f.flow).max(0.0) + f.conductance;
        }
        for &(k, q) in &self.outlets {
            out[k] += q;
        }
        out.iter()
            .filter(|&&r| r > 0.0)
            .map(|r| self.volume / r)
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))))
    }

    fn rate(&self, phi: &[f64], dphi: &mut [f64]) {
        dphi.iter_mut().for_each(|x| *x = 0.0);
        for f in &self.faces {
            let adv = if f.flow > 0.0 {
                f.flow * phi[f.lo]
            } else {
                f.flow * phi[f.hi]
            };
            let transfer = adv + f.conductance * (phi[f.lo] - phi[f.hi]);
            dphi[f.lo] -= transfer;
            dphi[f.hi] += transfer;
        }
        for &(k, q) in &self.outlets {
            dphi[k] -= q * phi[k];
        }
    }
}

/// Integrates `dphi/dt + div(U phi) = D lap(phi) + s` to `cfg.end_time`.
/// `source_rate` is per second.
pub fn solve_pde(
    scenario: &FlowScenario,
    phi0: &ConcentrationField,
    source_rate: &SourceTerm,
    cfg: &OracleConfig,
    boundary: &BoundarySpec,
) -> Result<OracleSolution> {
    let n = scenario.grid().n_states();
    if phi0.len() != n || source_rate.values().len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: field {}, source {}, grid {n}",
            phi0.len(),
            source_rate.values().len()
        )));
    }
    let asm = Assembly::new(scenario, boundary);
    let limit = asm.max_step(n);
    let requested = match (cfg.fixed_step, limit) {
        (Some(step), Some(max)) if step > max * (1.0 + 1e-12) => {
            return Err(Error::Unstable { dt: step, max_dt: max });
        }
        (Some(step), _) => step,
        (None, Some(max)) => cfg.cfl_target * max,
        (None, None) => cfg.end_time,
    };
    let steps = ((cfg.end_time / requested) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let step = cfg.end_time / steps as f64;

    let mut phi = phi0.values().to_vec();
    let mut dphi = vec![0.0; n];
    let scale = step / asm.volume;
    for _ in 0..steps {
        asm.rate(&phi, &mut dphi);
        for ((p, d), s) in phi.iter_mut().zip(&dphi).zip(source_rate.values()) {
            *p += scale * d + step * s;
        }
    }
    // Round-off near zero; the scheme itself is positivity preserving.
    phi.iter_mut().for_each(|p| {
        if *p < 0.0 && *p > -1e-300 {
            *p = 0.0
        }
    });
    Ok(OracleSolution {
        field: ConcentrationField::new(phi)?,
        steps,
        step,
    })
}

fn l2_relative(candidate: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = candidate.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = reference.iter().map(|b| b * b).sum();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

/// Relative L2 distance between `m` Markov steps of size `dt` and the PDE
/// solution over the same horizon. `cfg.end_time` must equal `m * dt`.
pub fn compare_transport(
    scenario: &FlowScenario,
    phi0: &ConcentrationField,
    steps: usize,
    dt: f64,
    cfg: &OracleConfig,
    boundary: &BoundarySpec,
) -> Result<f64> {
    let p = build_markov_with(scenario, dt, boundary)?;
    compare_markov(&p, scenario, phi0, steps, cfg, boundary)
}

/// Same as [`compare_transport`] for an operator that was already built
/// (or loaded from disk).
pub fn compare_markov(
    p: &MarkovMatrix,
    scenario: &FlowScenario,
    phi0: &ConcentrationField,
    steps: usize,
    cfg: &OracleConfig,
    boundary: &BoundarySpec,
) -> Result<f64> {
    let horizon = steps as f64 * p.dt();
    if (cfg.end_time - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "oracle end time {} differs from Markov horizon {horizon}",
            cfg.end_time
        )));
    }
    let n = scenario.grid().n_states();
    if p.n_states() < n || phi0.len() != n {
        return Err(Error::invalid(format!(
            "operator has {} states, field {}, grid {n}",
            p.n_states(),
            phi0.len()
        )));
    }
    let mut start = phi0.values().to_vec();
    start.resize(p.n_states(), 0.0);
    let start = ConcentrationField::new(start)?;
    let markov = propagate(&start, p, &SourceTerm::zeros(p.n_states()), steps)?;
    let pde = solve_pde(scenario, phi0, &SourceTerm::zeros(n), cfg, boundary)?;
    Ok(l2_relative(&markov.values()[..n], pde.field.values()))
}
