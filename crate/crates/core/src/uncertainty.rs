//! Single uncertain parameter: distributions, inverse-CDF sample selection,
//! and probability weights from piecewise-linear interpolation.
//!
//! Each weight is `theta_i = integral of N_i(xi) * rho(xi)`, where `N_i` is the
//! hat function on the sample nodes. Beyond the first and last node the end
//! hats stay at 1 out to the support bounds, so the hats sum to 1 everywhere
//! on the support and the weights form a probability vector.

use std::f64::consts::SQRT_2;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Half-width, in standard deviations, of the integration support of a Gaussian.
pub const GAUSSIAN_SUPPORT_SIGMAS: f64 = 8.0;

/// Half-width, in bandwidths, added beyond the data range of a KDE.
pub const KDE_SUPPORT_BANDWIDTHS: f64 = 4.0;

/// Absolute tolerance of each weight integral.
pub const WEIGHT_QUAD_TOL: f64 = 1e-8;

/// Weights must be non-negative and sum to 1.
pub fn check_weights(weights: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!("weight {w} is negative or not finite")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Gaussian { mu: f64, sigma: f64 },
    Kde { data: Vec<f64>, bandwidth: f64 },
}

/// Density of the uncertain parameter, truncated to a finite support and
/// renormalized there.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    kind: Kind,
    lo: f64,
    hi: f64,
    /// Untruncated probability mass inside `[lo, hi]`.
    mass: f64,
    cdf_lo: f64,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Distribution {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("gaussian needs finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        let half = GAUSSIAN_SUPPORT_SIGMAS * sigma;
        Ok(Self::with_support(Kind::Gaussian { mu, sigma }, mu - half, mu + half))
    }

    fn with_support(kind: Kind, lo: f64, hi: f64) -> Self {
        let mut d = Self {
            kind,
            lo,
            hi,
            mass: 1.0,
            cdf_lo: 0.0,
        };
        d.cdf_lo = d.raw_cdf(lo);
        d.mass = d.raw_cdf(hi) - d.cdf_lo;
        d
    }

    /// `[lo, hi]` over which the density is integrated.
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match &self.kind {
            Kind::Kde { bandwidth, .. } => Some(*bandwidth),
            Kind::Gaussian { .. } => None,
        }
    }

    fn raw_pdf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { mu, sigma } => std_normal_pdf((x - mu) / sigma) / sigma,
            Kind::Kde { data, bandwidth } => {
                data.iter().map(|d| std_normal_pdf((x - d) / bandwidth)).sum::<f64>()
                    / (data.len() as f64 * bandwidth)
            }
        }
    }

    fn raw_cdf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            Kind::Kde { data, bandwidth } => {
                data.iter().map(|d| std_normal_cdf((x - d) / bandwidth)).sum::<f64>() / data.len() as f64
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            self.raw_pdf(x) / self.mass
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            0.0
        } else if x >= self.hi {
            1.0
        } else {
            ((self.raw_cdf(x) - self.cdf_lo) / self.mass).clamp(0.0, 1.0)
        }
    }

    /// Numerically integrated probability mass over the support.
    pub fn total_mass(&self) -> f64 {
        integrate(|x| self.pdf(x), self.lo, self.hi, 1e-12)
    }

    /// Quantile by bisection on the CDF. `0` and `1` map to the support bounds.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("cdf point {p} outside [0, 1]")));
        }
        if p == 0.0 {
            return Ok(self.lo);
        }
        if p == 1.0 {
            return Ok(self.hi);
        }
        let (mut a, mut b) = (self.lo, self.hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let f = self.cdf(mid);
            if (f - p).abs() <= 1e-13 || mid == a || mid == b {
                return Ok(mid);
            }
            if f < p {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Gaussian-kernel density estimate with Silverman's bandwidth
/// `1.06 * sd * n^(-1/5)`.
pub fn fit_kde(data: &[f64]) -> Result<Distribution> {
    if data.len() < 2 {
        return Err(Error::Fit(format!("KDE needs at least 2 points, got {}", data.len())));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Fit("KDE data contains non-finite values".into()));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Fit("KDE data has zero variance".into()));
    }
    let bandwidth = 1.06 * sd * n.powf(-0.2);
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let pad = KDE_SUPPORT_BANDWIDTHS * bandwidth;
    Ok(Distribution::with_support(
        Kind::Kde {
            data: data.to_vec(),
            bandwidth,
        },
        min - pad,
        max + pad,
    ))
}

/// Sample values `F^-1(p_i)` for strictly increasing cdf points.
pub fn icdf_samples(dist: &Distribution, cdf_points: &[f64]) -> Result<Vec<f64>> {
    if cdf_points.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(format!("cdf points must be strictly increasing: {cdf_points:?}")));
    }
    cdf_points.iter().map(|&p| dist.quantile(p)).collect()
}

/// Hat function `i` on `nodes`, held at 1 outside the node hull for the end
/// nodes.
pub fn basis(nodes: &[f64], i: usize, x: f64) -> f64 {
    let last = nodes.len() - 1;
    if (i == 0 && x <= nodes[0]) || (i == last && x >= nodes[last]) {
        return 1.0;
    }
    if i > 0 && x >= nodes[i - 1] && x <= nodes[i] {
        return (x - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
    }
    if i < last && x >= nodes[i] && x <= nodes[i + 1] {
        return (nodes[i + 1] - x) / (nodes[i + 1] - nodes[i]);
    }
    0.0
}

/// Probability weights of the sample nodes under `dist`.
pub fn basis_weights(samples: &[f64], dist: &Distribution) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::invalid("basis weights need at least 2 samples"));
    }
    if samples.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("samples must be strictly increasing"));
    }
    let (lo, hi) = dist.support();
    let slack = 1e-12 * (hi - lo);
    if samples[0] < lo - slack || samples[samples.len() - 1] > hi + slack {
        return Err(Error::invalid(format!(
            "samples [{}, {}] outside support [{lo}, {hi}]",
            samples[0],
            samples[samples.len() - 1]
        )));
    }
    let last = samples.len() - 1;
    let rho = |x: f64| dist.pdf(x);
    let mut weights = vec![0.0; samples.len()];
    if samples[0] > lo {
        weights[0] += integrate(rho, lo, samples[0], WEIGHT_QUAD_TOL * 0.1);
    }
    if samples[last] < hi {
        weights[last] += integrate(rho, samples[last], hi, WEIGHT_QUAD_TOL * 0.1);
    }
    for k in 0..last {
        let (a, b) = (samples[k], samples[k + 1]);
        let h = b - a;
        weights[k] += integrate(|x| (b - x) / h * rho(x), a, b, WEIGHT_QUAD_TOL * 0.1);
        weights[k + 1] += integrate(|x| (x - a) / h * rho(x), a, b, WEIGHT_QUAD_TOL * 0.1);
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("basis weights sum to {sum} before normalization")));
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(weights)
}

/// Sample nodes with their probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    samples: Vec<f64>,
    cdf_points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Samples at the given cdf points, weighted by hat-function integrals.
    /// A single point gets the whole probability mass.
    pub fn from_cdf_points(dist: &Distribution, cdf_points: &[f64]) -> Result<Self> {
        let samples = icdf_samples(dist, cdf_points)?;
        if samples.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("cdf points too close to resolve distinct samples"));
        }
        let weights = match samples.len() {
            1 => vec![1.0],
            _ => basis_weights(&samples, dist)?,
        };
        Ok(Self {
            samples,
            cdf_points: cdf_points.to_vec(),
            weights,
        })
    }

    /// Rule with explicit weights; cdf points are unknown and left empty.
    pub fn new(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() != weights.len() || samples.is_empty() {
            return Err(Error::invalid("need one weight per sample"));
        }
        check_weights(weights.iter().copied())?;
        Ok(Self {
            samples,
            cdf_points: Vec::new(),
            weights,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn cdf_points(&self) -> &[f64] {
        &self.cdf_points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `sum_i theta_i * v_i`.
pub fn expectation(rule: &QuadratureRule, values: &[f64]) -> Result<f64> {
    if values.len() != rule.len() {
        return Err(Error::invalid(format!(
            "{} values for {} samples",
            values.len(),
            rule.len()
        )));
    }
    Ok(rule.weights.iter().zip(values).map(|(w, v)| w * v).sum())
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 || (b - a).abs() < 1e-14 {
            return value;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(&f, a, b, abs_tol, 0)
}
