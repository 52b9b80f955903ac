//! Acceptance gate. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any fails.
//!
//! Randomized criteria draw from a ChaCha stream seeded by `PFSENSOR_SEED`
//! (default 42).

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfsensor::config::RunConfig;
use pfsensor::flowfield::{synth_recirculating, FlowScenario, VelocityField};
use pfsensor::grid::{StructuredGrid, ZoneMask};
use pfsensor::oracle::{compare_transport, OracleConfig};
use pfsensor::pipeline::cmd_converge;
use pfsensor::placement::{coverage_vector, expected_coverage, place_sensors, CoverageVector, PlacementOptions};
use pfsensor::tracking::{
    apply_constraints, threshold, tracking_matrix, volumetric_scale, BinaryTrackingMatrix, ConstraintSet,
    ScaledTrackingMatrix, SensorSpec,
};
use pfsensor::transfer_operator::{
    build_markov, build_markov_with, max_stable_dt, propagate, BoundarySpec, ConcentrationField, MarkovMatrix,
    SourceTerm,
};
use pfsensor::uncertainty::{expectation, Distribution, QuadratureRule};
use pfsensor::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn seed() -> u64 {
    std::env::var("PFSENSOR_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(42)
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed());
    r.set_stream(stream);
    r
}

fn random_scenario(r: &mut ChaCha8Rng, max_dim: usize) -> FlowScenario {
    let nx = r.random_range(2..=max_dim);
    let ny = r.random_range(1..=max_dim);
    let dx = r.random_range(0.01..0.5);
    let dy = r.random_range(0.01..0.5);
    let grid = StructuredGrid::new_2d(nx, ny, dx, dy).unwrap();
    let xi: f64 = r.random_range(-2.0..2.0);
    let field = if r.random_bool(0.7) {
        synth_recirculating(&grid, xi * r.random_range(0.001..0.1)).unwrap()
    } else {
        let n = grid.n_states();
        let u = (0..n).map(|_| r.random_range(-0.2..0.2)).collect();
        let v = (0..n).map(|_| r.random_range(-0.2..0.2)).collect();
        VelocityField::new(grid, u, v, vec![0.0; n]).unwrap()
    };
    let d = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..1e-3) };
    FlowScenario::single(field, d).unwrap()
}

fn random_boundary(r: &mut ChaCha8Rng) -> BoundarySpec {
    let mut b = BoundarySpec::closed();
    for axis in 0..2 {
        for upper in [false, true] {
            if r.random_bool(0.15) {
                b = b.with_outlet(axis, upper);
            }
        }
    }
    b
}

fn c1_table3() -> Outcome {
    let dist = Distribution::gaussian(0.5, 0.05).unwrap();
    let rule = QuadratureRule::from_cdf_points(&dist, &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]).unwrap();
    let eval = |f: fn(f64) -> f64| {
        let v: Vec<f64> = rule.samples().iter().map(|&x| f(x)).collect();
        expectation(&rule, &v).unwrap()
    };
    let got = [eval(|x| x), eval(|x| x * x), eval(f64::exp)];
    let want = [0.499, 0.259, 1.656];
    let pass = got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 0.01);
    outcome(
        pass,
        format!("E[xi]={:.6} E[xi^2]={:.6} E[exp xi]={:.6}", got[0], got[1], got[2]),
    )
}

fn c2_operator_invariants() -> Outcome {
    let mut r = rng(2);
    let mut worst_row = 0.0f64;
    let mut rebuilt = 0;
    for case in 0..200 {
        let s = random_scenario(&mut r, 64);
        let b = random_boundary(&mut r);
        let Some(max_dt) = max_stable_dt(&s, &b) else {
            continue;
        };
        let dt = max_dt * r.random_range(0.05..1.0);
        let p = match build_markov_with(&s, dt, &b) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("case {case}: stable dt {dt} rejected: {e}")),
        };
        for (i, sum) in p.matrix().row_sums().iter().enumerate() {
            worst_row = worst_row.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > 1e-12 {
                return outcome(false, format!("case {case}: row {i} sums to {sum}"));
            }
        }
        if p.matrix().values().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return outcome(false, format!("case {case}: entry outside [0, 1]"));
        }
        match build_markov_with(&s, max_dt * r.random_range(1.01..4.0), &b) {
            Err(Error::Unstable { max_dt: reported, .. }) => {
                if (reported - max_dt).abs() > 1e-12 * max_dt {
                    return outcome(false, format!("case {case}: reported bound {reported}, expected {max_dt}"));
                }
                if build_markov_with(&s, reported, &b).is_err() {
                    return outcome(false, format!("case {case}: rebuild at reported dt {reported} failed"));
                }
                rebuilt += 1;
            }
            other => return outcome(false, format!("case {case}: expected instability, got {:?}", other.map(|_| ()))),
        }
    }
    outcome(
        rebuilt > 150,
        format!("max |row sum - 1| = {worst_row:.2e}; {rebuilt} stability bounds rebuilt"),
    )
}

fn c3_mass_conservation() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let s = random_scenario(&mut r, 24);
        let dt = max_stable_dt(&s, &BoundarySpec::closed()).unwrap_or(1.0) * r.random_range(0.1..1.0);
        let p = build_markov(&s, dt).unwrap();
        let phi0 = ConcentrationField::new((0..p.n_states()).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let phi = propagate(&phi0, &p, &SourceTerm::zeros(p.n_states()), 1000).unwrap();
        let drift = ((phi.total() - phi0.total()) / phi0.total()).abs();
        worst = worst.max(drift);
        if drift > 1e-10 {
            return outcome(false, format!("case {case}: drift {drift:.3e}"));
        }
    }
    outcome(true, format!("max relative drift {worst:.2e} over 1000 steps"))
}

fn random_stochastic(r: &mut ChaCha8Rng, n: usize) -> MarkovMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        let k = r.random_range(1..=n.min(6));
        let cols: Vec<usize> = (0..k).map(|_| r.random_range(0..n)).collect();
        let w: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        for (c, x) in cols.into_iter().zip(w) {
            triplets.push((i, c, x / total));
        }
    }
    MarkovMatrix::from_triplets(n, 1.0, &triplets).unwrap()
}

fn c4_tracking_row_sums() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let n = r.random_range(1..=60);
        let p = random_stochastic(&mut r, n);
        for m in [0usize, 1, 5, 20] {
            let q = tracking_matrix(&p, m);
            for sum in q.matrix().row_sums() {
                let e = (sum - (m + 1) as f64).abs();
                worst = worst.max(e);
                if e > 1e-9 {
                    return outcome(false, format!("n={n} m={m}: row sum {sum}"));
                }
            }
        }
    }
    outcome(true, format!("max |row sum - (m+1)| = {worst:.2e}"))
}

fn vortex_error(n: usize, dt: f64) -> f64 {
    let h = 1.0 / n as f64;
    let grid = StructuredGrid::new_2d(n, n, h, h).unwrap();
    let s = FlowScenario::single(synth_recirculating(&grid, 0.005).unwrap(), 1e-4).unwrap();
    let phi0: Vec<f64> = (0..grid.n_states())
        .map(|k| {
            let c = grid.cell_center(k).unwrap();
            let r2 = (c[0] - 0.3).powi(2) + (c[1] - 0.5).powi(2);
            (-r2 / (2.0 * 0.08f64.powi(2))).exp()
        })
        .collect();
    let phi0 = ConcentrationField::new(phi0).unwrap();
    let steps = (50.0 / dt).round() as usize;
    let cfg = OracleConfig::new(0.5, steps as f64 * dt)
        .unwrap()
        .with_fixed_step(0.2 * dt)
        .unwrap();
    compare_transport(&s, &phi0, steps, dt, &cfg, &BoundarySpec::closed()).unwrap()
}

fn c5_pde_validation() -> Outcome {
    let coarse = vortex_error(25, 0.2);
    let base = vortex_error(50, 0.1);
    let fine = vortex_error(100, 0.05);
    outcome(
        base <= 1e-2 && coarse > base && base > fine,
        format!("L2 error 25x25: {coarse:.3e}, 50x50: {base:.3e}, 100x100: {fine:.3e}"),
    )
}

fn random_scaled(r: &mut ChaCha8Rng, n: usize, density: f64) -> ScaledTrackingMatrix {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|_| r.random_bool(density))
        .collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    ScaledTrackingMatrix::new(
        BinaryTrackingMatrix::from_pairs(n, pairs).unwrap(),
        w.into_iter().map(|x| x / total).collect(),
    )
    .unwrap()
}

fn random_weights(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn c6_greedy() -> Outcome {
    let mut r = rng(6);
    for case in 0..500 {
        let n = r.random_range(1..=20);
        let m = r.random_range(1..=4);
        let density = r.random_range(0.02..0.6);
        let qs: Vec<ScaledTrackingMatrix> = (0..m).map(|_| random_scaled(&mut r, n, density)).collect();
        let theta = random_weights(&mut r, m);
        let plan = place_sensors(&qs, &theta, &PlacementOptions::sensors(n)).unwrap();

        // Probability-weighted covered volume of each single state, by brute force.
        let value = |j: usize| -> f64 {
            qs.iter()
                .zip(&theta)
                .map(|(q, t)| t * (0..n).filter(|&i| q.pattern().contains(i, j)).map(|i| q.row_weight(i)).sum::<f64>())
                .sum()
        };
        let values: Vec<f64> = (0..n).map(value).collect();
        let best = values.iter().cloned().fold(0.0, f64::max);
        match plan.sensors.first() {
            None if best == 0.0 => {}
            None => return outcome(false, format!("case {case}: no sensor but best value {best}")),
            Some(s) => {
                let expected = values.iter().position(|&v| v >= best - 1e-12).unwrap();
                if s.state != expected {
                    return outcome(false, format!("case {case}: greedy {} vs exhaustive {expected}", s.state));
                }
            }
        }
        let curve = plan.cumulative_curve();
        if curve.windows(2).any(|w| w[1] < w[0]) {
            return outcome(false, format!("case {case}: cumulative coverage decreased"));
        }
        if plan
            .sensors
            .windows(2)
            .any(|w| w[1].expected_marginal > w[0].expected_marginal + 1e-14)
        {
            return outcome(false, format!("case {case}: marginal increased"));
        }
    }
    outcome(true, "500 instances: first sensor matches exhaustive argmax; curves monotone")
}

fn c7_linearity() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=50);
        let m = r.random_range(1..=9);
        let vectors: Vec<CoverageVector> = (0..m)
            .map(|_| CoverageVector::new((0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let theta = random_weights(&mut r, m);
        let e = expected_coverage(&vectors, &theta).unwrap();
        for j in 0..n {
            let mean: f64 = vectors.iter().zip(&theta).map(|(v, t)| t * v.values()[j]).sum();
            worst = worst.max((e.values()[j] - mean).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn random_box(r: &mut ChaCha8Rng, grid: &StructuredGrid) -> ZoneMask {
    let len = grid.lengths();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for a in 0..3 {
        let x: f64 = r.random_range(0.0..len[a]);
        let y: f64 = r.random_range(0.0..len[a]);
        lo[a] = x.min(y);
        hi[a] = x.max(y);
    }
    hi[2] = len[2];
    lo[2] = 0.0;
    grid.box_mask(lo, hi).unwrap()
}

fn c8_constraints() -> Outcome {
    let mut r = rng(8);
    let mut sensors = 0;
    for case in 0..100 {
        let n = r.random_range(4..=14);
        let grid = StructuredGrid::new_2d(n, n, 0.1, 0.1).unwrap();
        let s = FlowScenario::single(synth_recirculating(&grid, r.random_range(-0.05..0.05)).unwrap(), 1e-4).unwrap();
        let dt = max_stable_dt(&s, &BoundarySpec::closed()).unwrap() * 0.5;
        let p = build_markov(&s, dt).unwrap();
        let qb = threshold(&tracking_matrix(&p, r.random_range(1..=30)), &SensorSpec::new(0.02).unwrap());
        let forbidden = random_box(&mut r, &grid);
        let occupied = random_box(&mut r, &grid).union(&random_box(&mut r, &grid)).unwrap();

        let open = coverage_vector(&volumetric_scale(&qb, &grid).unwrap());
        let sensing_only = ConstraintSet::occupied_zone(ZoneMask::empty(grid.n_states()), &occupied);
        let ignored = coverage_vector(&volumetric_scale(&apply_constraints(&qb, &sensing_only).unwrap(), &grid).unwrap());
        if let Some(j) = (0..grid.n_states()).find(|&j| ignored.values()[j] > open.values()[j]) {
            return outcome(false, format!("case {case}: ignoring rows raised coverage at {j}"));
        }

        let both = ConstraintSet::occupied_zone(forbidden.clone(), &occupied);
        let q = volumetric_scale(&apply_constraints(&qb, &both).unwrap(), &grid).unwrap();
        let plan = place_sensors(&[q], &[1.0], &PlacementOptions::sensors(5)).unwrap();
        if let Some(bad) = plan.sensors.iter().find(|s| forbidden.contains(s.state)) {
            return outcome(false, format!("case {case}: sensor in forbidden state {}", bad.state));
        }
        sensors += plan.sensors.len();
    }
    outcome(true, format!("100 runs, {sensors} sensors, none forbidden; ignored rows never raise coverage"))
}

const CONVERGE_CONFIG: &str = r#"
[grid]
dims = [24, 24, 1]
spacing = [0.125, 0.125, 0.1]

[scenarios]
kind = "vortex"
diffusivity = 1e-4
strength_scale = 0.02
cdf_points = [0.5]
distribution = { kind = "gaussian", mu = 0.5, sigma = 0.05 }

[operator]
dt = 1.0

[tracking]
steps = 60
eps_acc = 0.002

[placement]
sensors = 4
"#;

fn c9_convergence() -> Outcome {
    let cfg = RunConfig::parse(CONVERGE_CONFIG, ".").unwrap();
    let table = cmd_converge(&cfg, &[2, 3, 5, 7, 9]).unwrap();
    let errors: Vec<f64> = table.rows.iter().filter_map(|r| r.error).collect();
    let pass = errors.len() == 4 && errors.windows(2).all(|w| w[1] < w[0]) && table.rows[4].error.is_none();
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.4}")).collect();
    outcome(pass, format!("errors for M=2,3,5,7 vs 9: {}", shown.join(", ")))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pfsensor"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let text = format!(
        "{}\n[constraints]\nforbidden = [{{ lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 0.1] }}]\noccupied = [{{ lo = [0.5, 0.5, 0.0], hi = [2.5, 2.5, 0.1] }}]\n",
        CONVERGE_CONFIG
            .replace("cdf_points = [0.5]", "cdf_points = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]")
            .replace("dims = [24, 24, 1]", "dims = [16, 16, 1]")
            .replace("spacing = [0.125, 0.125, 0.1]", "spacing = [0.1875, 0.1875, 0.1]")
    );
    std::fs::write(&config, text).unwrap();
    let mut plans = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out = out.to_str().unwrap();
        let cfg = config.to_str().unwrap();
        for cmd in ["build", "place"] {
            if let Err(e) = run_cli(&[cmd, "--config", cfg, "--out", out]) {
                return outcome(false, format!("{cmd} failed: {e}"));
            }
        }
        plans.push(std::fs::read(Path::new(out).join("plan.json")).unwrap());
    }
    outcome(
        plans[0] == plans[1] && !plans[0].is_empty(),
        format!("two build+place runs, plan.json {} bytes each, identical: {}", plans[0].len(), plans[0] == plans[1]),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 quadrature expectations", Duration::from_secs(1), c1_table3),
        ("2 operator invariants", Duration::from_secs(30), c2_operator_invariants),
        ("3 mass conservation", Duration::from_secs(30), c3_mass_conservation),
        ("4 tracking row sums", Duration::from_secs(10), c4_tracking_row_sums),
        ("5 PDE vs Markov", Duration::from_secs(60), c5_pde_validation),
        ("6 greedy correctness", Duration::from_secs(30), c6_greedy),
        ("7 expectation linearity", Duration::from_secs(5), c7_linearity),
        ("8 constraint compliance", Duration::from_secs(30), c8_constraints),
        ("9 sample convergence", Duration::from_secs(120), c9_convergence),
        ("10 end-to-end determinism", Duration::from_secs(60), c10_determinism),
    ];
    println!("acceptance (seed {})", seed());
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
