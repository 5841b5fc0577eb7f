//! Pearson system distributions parameterized by their first four moments.
//!
//! The standardized density (mean 0, variance 1) solves
//!
//! ```text
//! f'(x)/f(x) = −(x + a) / (b0 + b1 x + b2 x²)
//! ```
//!
//! with `β1 = γ²`, `β2 = κ` and `D = 10β2 − 12β1 − 18`:
//! `b0 = (4β2 − 3β1)/D`, `a = b1 = γ(β2 + 3)/D`, `b2 = (2β2 − 3β1 − 6)/D`.
//!
//! The log-density has a closed form for every type; the CDF is tabulated
//! numerically and inverted for sampling, which covers all types with a
//! single code path.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Nodes per side of the mean in the CDF table.
const NODES_PER_SIDE: usize = 2048;
/// Tails are cut where the log-density has dropped this much below its peak.
const LOG_DROP: f64 = 80.0;

/// Mean, standard deviation, skewness and (non-excess) kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonParams {
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl PearsonParams {
    pub fn new(mean: f64, std_dev: f64, skewness: f64, kurtosis: f64) -> Self {
        Self {
            mean,
            std_dev,
            skewness,
            kurtosis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mean, self.std_dev, self.skewness, self.kurtosis];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite Pearson parameters {self:?}")));
        }
        if self.std_dev <= 0.0 {
            return Err(Error::Input(format!("Pearson std_dev must be positive, got {}", self.std_dev)));
        }
        let b1 = self.skewness * self.skewness;
        if self.kurtosis <= b1 + 1.0 {
            return Err(Error::Input(format!(
                "Pearson moments violate kurtosis > skewness² + 1 ({} ≤ {})",
                self.kurtosis,
                b1 + 1.0
            )));
        }
        if (10.0 * self.kurtosis - 12.0 * b1 - 18.0).abs() < 1e-9 {
            return Err(Error::Input(format!(
                "Pearson moments on the degenerate line 10·kurtosis = 12·skewness² + 18 (kurtosis {}, skewness {})",
                self.kurtosis, self.skewness
            )));
        }
        Ok(())
    }
}

/// Pearson's classification of a moment pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PearsonType {
    /// Normal.
    Zero,
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

const TYPE_TOL: f64 = 1e-12;

/// Standardized ODE coefficients `(a, b0, b1, b2)`.
fn coefficients(skewness: f64, kurtosis: f64) -> (f64, f64, f64, f64) {
    let b1s = skewness * skewness;
    let d = 10.0 * kurtosis - 12.0 * b1s - 18.0;
    let b0 = (4.0 * kurtosis - 3.0 * b1s) / d;
    let a = skewness * (kurtosis + 3.0) / d;
    let b2 = (2.0 * kurtosis - 3.0 * b1s - 6.0) / d;
    (a, b0, a, b2)
}

/// Type from skewness and kurtosis via Pearson's κ = b1²/(4 b0 b2).
pub fn classify(skewness: f64, kurtosis: f64) -> PearsonType {
    let (_, b0, b1, b2) = coefficients(skewness, kurtosis);
    if skewness.abs() < TYPE_TOL {
        if (kurtosis - 3.0).abs() < TYPE_TOL {
            PearsonType::Zero
        } else if kurtosis < 3.0 {
            PearsonType::II
        } else {
            PearsonType::VII
        }
    } else if b2.abs() < TYPE_TOL {
        PearsonType::III
    } else {
        let kappa = b1 * b1 / (4.0 * b0 * b2);
        if kappa < 0.0 {
            PearsonType::I
        } else if (kappa - 1.0).abs() < TYPE_TOL {
            PearsonType::V
        } else if kappa < 1.0 {
            PearsonType::IV
        } else {
            PearsonType::VI
        }
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form unnormalized log-density of the standardized member.
#[derive(Debug, Clone, Copy)]
struct LogDensity {
    a: f64,
    b0: f64,
    b1: f64,
    b2: f64,
}

impl LogDensity {
    fn q(&self, x: f64) -> f64 {
        self.b0 + x * (self.b1 + x * self.b2)
    }

    fn eval(&self, x: f64) -> f64 {
        let Self { a, b0, b1, b2 } = *self;
        if b2 == 0.0 {
            if b1 == 0.0 {
                return -(x + a) * (x + a) / (2.0 * b0);
            }
            // ∫ (x + a)/(b0 + b1 x) dx
            return -(x / b1 + (a - b0 / b1) / b1 * (b0 + b1 * x).abs().ln());
        }
        let lin = 2.0 * b2 * x + b1;
        let disc = b1 * b1 - 4.0 * b0 * b2;
        let integral_inv_q = if disc < 0.0 {
            let s = (-disc).sqrt();
            2.0 / s * (lin / s).atan()
        } else if disc > 0.0 {
            let s = disc.sqrt();
            ((lin - s) / (lin + s)).abs().ln() / s
        } else {
            -2.0 / lin
        };
        -(self.q(x).abs().ln() / (2.0 * b2) + (a - b1 / (2.0 * b2)) * integral_inv_q)
    }

    /// Open interval around 0 on which `Q` keeps the sign of `b0`.
    fn support(&self) -> (f64, f64) {
        let Self { b0, b1, b2, .. } = *self;
        let mut roots = Vec::new();
        if b2 == 0.0 {
            if b1 != 0.0 {
                roots.push(-b0 / b1);
            }
        } else {
            let disc = b1 * b1 - 4.0 * b0 * b2;
            if disc >= 0.0 {
                let s = disc.sqrt();
                // numerically stable pair
                let t = -0.5 * (b1 + b1.signum() * s);
                if t != 0.0 {
                    roots.push(t / b2);
                    roots.push(b0 / t);
                } else {
                    roots.push(0.0);
                }
            }
        }
        let lo = roots.iter().copied().filter(|&r| r < 0.0).fold(f64::NEG_INFINITY, f64::max);
        let hi = roots.iter().copied().filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
        (lo, hi)
    }
}

/// A Pearson distribution with a tabulated CDF.
#[derive(Debug, Clone)]
pub struct Pearson {
    params: PearsonParams,
    kind: PearsonType,
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Normal,
    Table(CdfTable),
}

/// Standardized CDF table: node positions, (unnormalized) node densities and
/// cumulative cell masses normalized to 1.
#[derive(Debug, Clone)]
struct CdfTable {
    // kept for moment checks in tests
    #[allow(dead_code)]
    ld: LogDensity,
    #[allow(dead_code)]
    peak: f64,
    x: Vec<f64>,
    dens: Vec<f64>,
    cum: Vec<f64>,
}

impl Pearson {
    pub fn new(params: PearsonParams) -> Result<Self> {
        params.validate()?;
        let kind = classify(params.skewness, params.kurtosis);
        let inner = if kind == PearsonType::Zero {
            Inner::Normal
        } else {
            let (a, b0, b1, b2) = coefficients(params.skewness, params.kurtosis);
            Inner::Table(CdfTable::build(LogDensity { a, b0, b1, b2 })?)
        };
        Ok(Self { params, kind, inner })
    }

    pub fn params(&self) -> PearsonParams {
        self.params
    }

    pub fn pearson_type(&self) -> PearsonType {
        self.kind
    }

    /// Quantile of the standardized member, for `0 < q < 1`.
    pub fn standard_quantile(&self, q: f64) -> f64 {
        match &self.inner {
            Inner::Normal => {
                use statrs::distribution::{ContinuousCDF, Normal};
                Normal::new(0.0, 1.0).expect("valid").inverse_cdf(q)
            }
            Inner::Table(t) => t.quantile(q),
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        self.params.mean + self.params.std_dev * self.standard_quantile(q)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.params.mean) / self.params.std_dev;
        match &self.inner {
            Inner::Normal => std_normal_cdf(z),
            Inner::Table(t) => t.cdf(z),
        }
    }

    /// Support of the distribution (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match &self.inner {
            Inner::Normal => (f64::NEG_INFINITY, f64::INFINITY),
            Inner::Table(_) => {
                let (a, b0, b1, b2) = coefficients(self.params.skewness, self.params.kurtosis);
                let (lo, hi) = LogDensity { a, b0, b1, b2 }.support();
                (self.params.mean + self.params.std_dev * lo, self.params.mean + self.params.std_dev * hi)
            }
        }
    }

    /// Inverse-CDF draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                // open interval (0, 1)
                let u = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                self.quantile(u)
            })
            .collect()
    }
}

/// Draws from a Pearson member matching the four moments.
pub fn sample_pearson<R: Rng + ?Sized>(params: PearsonParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(Pearson::new(params)?.sample(n, rng))
}

impl CdfTable {
    fn build(ld: LogDensity) -> Result<Self> {
        let (lo, hi) = ld.support();
        let mode = (-ld.a).clamp(
            if lo.is_finite() { 0.5 * lo } else { f64::NEG_INFINITY },
            if hi.is_finite() { 0.5 * hi } else { f64::INFINITY },
        );
        let peak = ld.eval(0.0).max(ld.eval(mode));
        let f = |t: f64| {
            let v = (ld.eval(t) - peak).exp();
            if v.is_finite() {
                v
            } else {
                0.0
            }
        };
        let gl = GaussLegendre::new(5);
        // each side: nodes and cell masses outward from 0
        let mut sides = [1.0f64, -1.0].map(|sign| {
            let end = if sign > 0.0 { hi } else { -lo };
            let map = SideMap::choose(&ld, sign, end, peak);
            let m = NODES_PER_SIDE;
            let s: Vec<f64> = (0..=m).map(|k| map.param_end() * k as f64 / m as f64).collect();
            let nodes: Vec<f64> = s.iter().map(|&v| sign * map.x(v)).collect();
            let masses: Vec<f64> = s
                .windows(2)
                .map(|w| gl.integrate(w[0], w[1], |v| f(sign * map.x(v)) * map.dx(v)))
                .collect();
            (nodes, masses)
        });
        let (right, left) = {
            let [r, l] = &mut sides;
            (std::mem::take(r), std::mem::take(l))
        };
        let mut x: Vec<f64> = left.0.iter().rev().copied().collect();
        x.extend_from_slice(&right.0[1..]);
        let masses: Vec<f64> = left.1.iter().rev().chain(right.1.iter()).copied().collect();

        let mut cum = Vec::with_capacity(x.len());
        cum.push(0.0);
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cum.push(acc);
        }
        if !(acc.is_finite() && acc > 0.0) {
            return Err(Error::Input("Pearson density could not be normalized".into()));
        }
        cum.iter_mut().for_each(|c| *c /= acc);
        let dens = x.iter().map(|&t| f(t)).collect();
        Ok(Self { ld, peak, x, dens, cum })
    }

    fn cell_of_mass(&self, q: f64) -> usize {
        self.cum.partition_point(|&c| c < q).clamp(1, self.cum.len() - 1) - 1
    }

    /// Density on a cell, modeled as linear between its end values and
    /// rescaled to the cell's integrated mass. Returns `(f0, slope, scale)`.
    fn cell_model(&self, k: usize) -> Option<(f64, f64, f64)> {
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let (f0, f1) = (self.dens[k], self.dens[k + 1]);
        let h = x1 - x0;
        let linear = 0.5 * h * (f0 + f1);
        let mass = self.cum[k + 1] - self.cum[k];
        if linear > 0.0 && linear.is_finite() {
            Some((f0, (f1 - f0) / h, mass / linear))
        } else {
            None
        }
    }

    fn quantile(&self, q: f64) -> f64 {
        let k = self.cell_of_mass(q);
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let mass = self.cum[k + 1] - self.cum[k];
        let target = q - self.cum[k];
        if mass <= 0.0 {
            return x0;
        }
        let s = match self.cell_model(k) {
            Some((f0, slope, scale)) => {
                // scale·(f0 s + slope s²/2) = target
                let c = target / scale;
                let a = 0.5 * slope;
                let disc = (f0 * f0 + 4.0 * a * c).max(0.0);
                let den = f0 + disc.sqrt();
                if den > 0.0 {
                    2.0 * c / den
                } else {
                    (x1 - x0) * target / mass
                }
            }
            None => (x1 - x0) * target / mass,
        };
        (x0 + s).clamp(x0, x1)
    }

    fn cdf(&self, z: f64) -> f64 {
        let n = self.x.len();
        if z <= self.x[0] {
            return 0.0;
        }
        if z >= self.x[n - 1] {
            return 1.0;
        }
        let k = self.x.partition_point(|&t| t <= z) - 1;
        let s = z - self.x[k];
        let mass = self.cum[k + 1] - self.cum[k];
        let within = match self.cell_model(k) {
            Some((f0, slope, scale)) => scale * (f0 * s + 0.5 * slope * s * s),
            None => mass * s / (self.x[k + 1] - self.x[k]),
        };
        (self.cum[k] + within.clamp(0.0, mass)).min(1.0)
    }
}

/// Node placement on one side of the mean, as a map from a uniform
/// parameter to the distance from the mean.
#[derive(Debug, Clone, Copy)]
enum SideMap {
    /// `t = sinh(u)` for `u ∈ [0, asinh(cut)]`: fine near the mean,
    /// geometric in the tail.
    Sinh { cut: f64 },
    /// `t = end · sin θ` for `θ ∈ [0, π/2]`: clustered toward a support
    /// boundary where the density is still relevant.
    Sine { end: f64 },
}

impl SideMap {
    /// `end` is the distance to the support boundary (possibly infinite).
    fn choose(ld: &LogDensity, sign: f64, end: f64, peak: f64) -> Self {
        let dropped = |t: f64| ld.eval(sign * t) < peak - LOG_DROP;
        // walk out until the density is negligible or the boundary is reached
        let mut t = 1.0;
        while t < end && !dropped(t) && t < 1e12 {
            t *= 2.0;
        }
        if t >= end {
            if !dropped(0.999 * end) {
                return SideMap::Sine { end };
            }
            t = end;
        }
        let (mut lo, mut hi) = (0.5 * t, t);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if dropped(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        SideMap::Sinh { cut: hi }
    }

    fn param_end(&self) -> f64 {
        match *self {
            SideMap::Sinh { cut } => cut.asinh(),
            SideMap::Sine { .. } => std::f64::consts::FRAC_PI_2,
        }
    }

    fn x(&self, v: f64) -> f64 {
        match *self {
            SideMap::Sinh { .. } => v.sinh(),
            SideMap::Sine { end } => end * v.sin(),
        }
    }

    fn dx(&self, v: f64) -> f64 {
        match *self {
            SideMap::Sinh { .. } => v.cosh(),
            SideMap::Sine { end } => end * v.cos(),
        }
    }
}
