//! Gram matrices of kernel mean embeddings and the distances derived from
//! them.
//!
//! Entry `(i, ℓ)` is `⟨μ_i, μ_ℓ⟩ = E k(X, Y)` with `X ~ F_i`, `Y ~ F_ℓ`
//! independent. For analytic uniform mixtures it is integrated numerically
//! ([`gram_exact`]); for samples it is estimated with the unbiased
//! U-statistic ([`gram_estimated`]), whose diagonal skips the `j = l` terms.
//!
//! Everything the clustering needs follows from the matrix:
//!
//! ```text
//! MMD²(i, ℓ)          = K_ii + K_ℓℓ − 2 K_iℓ
//! ‖μ_i − mean_C μ‖²   = K_ii − (2/|C|) Σ_{l∈C} K_il + (1/|C|²) Σ_{l,m∈C} K_lm
//! ```

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionRecord, EmpiricalDistribution, MixtureComponent, Payload, UniformMixture};
use crate::error::{Error, Result};
use crate::kernels::{squared_norm, KernelSpec};
use crate::quadrature::GaussLegendre;

/// How a Gram matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramMode {
    Exact,
    Estimated,
}

impl GramMode {
    pub fn tag(self) -> u8 {
        match self {
            GramMode::Exact => 0,
            GramMode::Estimated => 1,
        }
    }
}

/// Symmetric `n × n` matrix of RKHS inner products, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    mode: GramMode,
    kernel: KernelSpec,
}

impl GramMatrix {
    /// Wraps raw values, symmetrizing them. Fails when the input is not
    /// square or is asymmetric beyond `1e-12` relative.
    pub fn from_values(n: usize, mut values: Vec<f64>, mode: GramMode, kernel: KernelSpec) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Input(format!(
                "expected {} Gram entries for n = {n}, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("Gram matrix contains non-finite entries".into()));
        }
        for i in 0..n {
            for l in i + 1..n {
                let (a, b) = (values[i * n + l], values[l * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Input(format!("Gram matrix is not symmetric at ({i}, {l})")));
                }
                let m = 0.5 * (a + b);
                values[i * n + l] = m;
                values[l * n + i] = m;
            }
        }
        Ok(Self { n, values, mode, kernel })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> GramMode {
        self.mode
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.values[i * self.n + l]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            Err(Error::IndexOutOfRange { index: i, len: self.n })
        } else {
            Ok(())
        }
    }

    /// Sub-matrix on the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<GramMatrix> {
        for &i in idx {
            self.check(i)?;
        }
        let m = idx.len();
        let values = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&l| (i, l)))
            .map(|(i, l)| self.get(i, l))
            .collect();
        Ok(GramMatrix {
            n: m,
            values,
            mode: self.mode,
            kernel: self.kernel,
        })
    }
}

/// Quadrature settings for [`gram_exact`].
///
/// Each double integral is reduced to one integral over `t = x − y`, split at
/// every kink of the integrand; `order` is the number of Gauss–Legendre nodes
/// per panel and `grading_levels` the number of dyadic panels refining
/// towards `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub order: usize,
    pub grading_levels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            order: 16,
            grading_levels: 14,
        }
    }
}

impl QuadratureConfig {
    pub fn doubled(self) -> Self {
        Self {
            order: 2 * self.order,
            grading_levels: self.grading_levels + 4,
        }
    }
}

/// Exact (quadrature) Gram matrix of analytic uniform mixtures.
pub fn gram_exact(sample: &[UniformMixture], kernel: KernelSpec, quad: QuadratureConfig) -> Result<GramMatrix> {
    kernel.validate()?;
    if quad.order == 0 {
        return Err(Error::Config("quadrature order must be at least 1".into()));
    }
    let rule = GaussLegendre::new(quad.order);
    let n = sample.len();
    let cells = fill_symmetric(n, |i, l| {
        let (a, b) = canonical_pair(&sample[i], &sample[l], cmp_mixtures);
        mixture_inner(a, b, kernel, &rule, quad.grading_levels)
    });
    GramMatrix::from_values(n, cells, GramMode::Exact, kernel)
}

/// [`gram_exact`] on records; every record must carry an analytic mixture.
pub fn gram_exact_records(records: &[DistributionRecord], kernel: KernelSpec, quad: QuadratureConfig) -> Result<GramMatrix> {
    let mixtures = records
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.payload {
            Payload::Mixture(m) => Ok(m.clone()),
            Payload::Empirical(_) => Err(Error::Mode(format!(
                "record {i} is an empirical sample; exact Gram needs analytic mixtures"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    gram_exact(&mixtures, kernel, quad)
}

/// Unbiased estimate of the Gram matrix from samples.
///
/// Off-diagonal: `(1/(N_i N_ℓ)) Σ_j Σ_l k(X_ij, X_ℓl)`.
/// Diagonal: `(1/(N_i(N_i − 1))) Σ_{j≠l} k(X_ij, X_il)`.
pub fn gram_estimated(sample: &[EmpiricalDistribution], kernel: KernelSpec) -> Result<GramMatrix> {
    kernel.validate()?;
    let dim = sample.first().map_or(1, EmpiricalDistribution::dim);
    for (i, s) in sample.iter().enumerate() {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: s.dim() });
        }
        if s.len() < 2 {
            return Err(Error::Input(format!(
                "record {i} has {} observation(s); the unbiased diagonal needs at least 2",
                s.len()
            )));
        }
    }
    let features: Vec<NormFeatures> = sample.iter().map(|s| NormFeatures::new(s, kernel)).collect();
    let n = sample.len();
    let cells = fill_symmetric(n, |i, l| {
        if i == l {
            let s = &sample[i];
            let m = s.len() as f64;
            let profile = 2.0 * within_profile_sum(s, kernel) / (m * (m - 1.0));
            profile + features[i].diagonal_term(kernel)
        } else {
            let (a, b) = canonical_pair(&sample[i], &sample[l], cmp_samples);
            let profile = cross_profile_sum(a, b, kernel) / (a.len() as f64 * b.len() as f64);
            profile + features[i].cross_term(&features[l], kernel)
        }
    });
    GramMatrix::from_values(n, cells, GramMode::Estimated, kernel)
}

/// [`gram_estimated`] on records; every record must carry a sample.
pub fn gram_estimated_records(records: &[DistributionRecord], kernel: KernelSpec) -> Result<GramMatrix> {
    let samples = records
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.payload {
            Payload::Empirical(e) => Ok(e.clone()),
            Payload::Mixture(_) => Err(Error::Mode(format!(
                "record {i} is an analytic mixture; sample it first or use the exact Gram"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    gram_estimated(&samples, kernel)
}

/// `K_ii + K_ℓℓ − 2 K_iℓ`. May be slightly negative for estimated matrices.
pub fn mmd_squared(g: &GramMatrix, i: usize, l: usize) -> Result<f64> {
    g.check(i)?;
    g.check(l)?;
    if i == l {
        return Ok(0.0);
    }
    Ok(g.get(i, i) + g.get(l, l) - 2.0 * g.get(i, l))
}

/// `sqrt(max(MMD², 0))`.
pub fn mmd_dist(g: &GramMatrix, i: usize, l: usize) -> Result<f64> {
    Ok(mmd_squared(g, i, l)?.max(0.0).sqrt())
}

/// `(1/|C|²) Σ_{l,m∈C} K_lm`, the squared norm of the cluster's mean embedding.
pub fn centroid_sq_norm(g: &GramMatrix, members: &[usize]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Input("cluster has no members".into()));
    }
    for &m in members {
        g.check(m)?;
    }
    let mut s = 0.0;
    for &a in members {
        let row = g.row(a);
        for &b in members {
            s += row[b];
        }
    }
    let c = members.len() as f64;
    Ok(s / (c * c))
}

/// Squared RKHS distance from `μ_i` to the mean embedding of `members`,
/// clamped at zero.
pub fn dist_sq_to_centroid(g: &GramMatrix, i: usize, members: &[usize]) -> Result<f64> {
    let norm = centroid_sq_norm(g, members)?;
    g.check(i)?;
    Ok(dist_sq_with_norm(g, i, members, norm))
}

/// Same as [`dist_sq_to_centroid`] with the cluster norm precomputed.
#[inline]
pub(crate) fn dist_sq_with_norm(g: &GramMatrix, i: usize, members: &[usize], centroid_norm: f64) -> f64 {
    let row = g.row(i);
    let cross: f64 = members.iter().map(|&l| row[l]).sum();
    (g.get(i, i) - 2.0 * cross / members.len() as f64 + centroid_norm).max(0.0)
}

/// Squared distance between the mean embeddings of two index sets.
pub fn centroid_dist_sq(g: &GramMatrix, a: &[usize], b: &[usize]) -> Result<f64> {
    let na = centroid_sq_norm(g, a)?;
    let nb = centroid_sq_norm(g, b)?;
    let mut cross = 0.0;
    for &x in a {
        let row = g.row(x);
        for &y in b {
            cross += row[y];
        }
    }
    let cross = cross / (a.len() as f64 * b.len() as f64);
    Ok((na + nb - 2.0 * cross).max(0.0))
}

/// Computes the upper triangle in parallel and mirrors it.
fn fill_symmetric(n: usize, cell: impl Fn(usize, usize) -> f64 + Sync) -> Vec<f64> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |l| (i, l))).collect();
    let computed: Vec<f64> = pairs.par_iter().map(|&(i, l)| cell(i, l)).collect();
    let mut values = vec![0.0; n * n];
    for (&(i, l), v) in pairs.iter().zip(computed) {
        values[i * n + l] = v;
        values[l * n + i] = v;
    }
    values
}

/// Orders two inputs by content so a cell's floating-point summation order
/// does not depend on which of the pair comes first in the sample.
fn canonical_pair<'a, T>(a: &'a T, b: &'a T, cmp: impl Fn(&T, &T) -> Ordering) -> (&'a T, &'a T) {
    if cmp(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

fn cmp_bits(a: &[f64], b: &[f64]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits())))
}

fn cmp_samples(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Ordering {
    cmp_bits(a.as_slice(), b.as_slice())
}

fn cmp_mixtures(a: &UniformMixture, b: &UniformMixture) -> Ordering {
    let flat = |m: &UniformMixture| -> Vec<f64> { m.components().iter().flat_map(|c| [c.w, c.a, c.b]).collect() };
    cmp_bits(&flat(a), &flat(b))
}

// ---------------------------------------------------------------------------
// Estimated Gram
// ---------------------------------------------------------------------------

/// Per-sample means of the norm features used by the modified Gaussian and
/// energy kernels.
struct NormFeatures {
    mean: f64,
    mean_sq: f64,
    n: f64,
}

impl NormFeatures {
    fn new(s: &EmpiricalDistribution, kernel: KernelSpec) -> Self {
        if !matches!(kernel, KernelSpec::ModifiedGaussian { .. } | KernelSpec::Energy { .. }) {
            return Self { mean: 0.0, mean_sq: 0.0, n: s.len() as f64 };
        }
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for row in s.rows() {
            let f = kernel.norm_feature(squared_norm(row));
            sum += f;
            sum_sq += f * f;
        }
        let n = s.len() as f64;
        Self { mean: sum / n, mean_sq: sum_sq / n, n }
    }

    fn cross_term(&self, other: &NormFeatures, kernel: KernelSpec) -> f64 {
        match kernel {
            KernelSpec::ModifiedGaussian { .. } => self.mean * other.mean,
            KernelSpec::Energy { .. } => 0.5 * (self.mean + other.mean),
            _ => 0.0,
        }
    }

    fn diagonal_term(&self, kernel: KernelSpec) -> f64 {
        match kernel {
            // Σ_{j≠l} φ_j φ_l / (N(N−1)) = (N² m² − N m₂) / (N(N−1))
            KernelSpec::ModifiedGaussian { .. } => {
                (self.n * self.mean * self.mean - self.mean_sq) * self.n / (self.n * (self.n - 1.0))
            }
            KernelSpec::Energy { .. } => self.mean,
            _ => 0.0,
        }
    }
}

/// Run `$body` with `$p` bound to a closure computing `kernel.profile`, so
/// the family match happens once per call instead of once per pair.
macro_rules! with_profile {
    ($kernel:expr, |$p:ident| $body:expr) => {
        match $kernel {
            KernelSpec::Gaussian { sigma } => {
                let s2 = 2.0 * sigma * sigma;
                let $p = move |d2: f64| (-d2 / s2).exp();
                $body
            }
            KernelSpec::Laplace { sigma } => {
                let $p = move |d2: f64| (-d2.sqrt() / sigma).exp();
                $body
            }
            KernelSpec::ModifiedGaussian { .. } => {
                let $p = move |d2: f64| if d2 > 1500.0 { 0.0 } else { (-0.5 * d2).exp() };
                $body
            }
            KernelSpec::Energy { alpha } if alpha == 0.5 => {
                let $p = move |d2: f64| -0.5 * d2.sqrt();
                $body
            }
            KernelSpec::Energy { alpha } if alpha == 0.25 => {
                let $p = move |d2: f64| -0.5 * d2.sqrt().sqrt();
                $body
            }
            k @ KernelSpec::Energy { .. } => {
                let $p = move |d2: f64| k.profile(d2);
                $body
            }
        }
    };
}

fn cross_profile_sum(a: &EmpiricalDistribution, b: &EmpiricalDistribution, kernel: KernelSpec) -> f64 {
    with_profile!(kernel, |prof| match a.dim() {
        1 => cross_sum_fixed::<1, _>(a.as_slice(), b.as_slice(), prof),
        2 => cross_sum_fixed::<2, _>(a.as_slice(), b.as_slice(), prof),
        3 => cross_sum_fixed::<3, _>(a.as_slice(), b.as_slice(), prof),
        _ => {
            let mut total = 0.0;
            for x in a.rows() {
                let mut acc = 0.0;
                for y in b.rows() {
                    acc += prof(crate::kernels::squared_distance(x, y));
                }
                total += acc;
            }
            total
        }
    })
}

#[inline(always)]
fn cross_sum_fixed<const P: usize, F: Fn(f64) -> f64>(a: &[f64], b: &[f64], prof: F) -> f64 {
    let mut total = 0.0;
    for x in a.chunks_exact(P) {
        let mut acc = 0.0;
        for y in b.chunks_exact(P) {
            let mut d2 = 0.0;
            for k in 0..P {
                let d = x[k] - y[k];
                d2 += d * d;
            }
            acc += prof(d2);
        }
        total += acc;
    }
    total
}

/// `Σ_{j<l} profile(‖x_j − x_l‖²)`.
fn within_profile_sum(s: &EmpiricalDistribution, kernel: KernelSpec) -> f64 {
    let p = s.dim();
    let data = s.as_slice();
    let n = s.len();
    with_profile!(kernel, |prof| {
        let mut total = 0.0;
        for j in 0..n {
            let x = &data[j * p..(j + 1) * p];
            let rest = &data[(j + 1) * p..];
            total += match p {
                1 => cross_sum_fixed::<1, _>(x, rest, prof),
                2 => cross_sum_fixed::<2, _>(x, rest, prof),
                3 => cross_sum_fixed::<3, _>(x, rest, prof),
                _ => rest
                    .chunks_exact(p)
                    .map(|y| prof(crate::kernels::squared_distance(x, y)))
                    .sum(),
            };
        }
        total
    })
}

// ---------------------------------------------------------------------------
// Exact Gram
// ---------------------------------------------------------------------------

fn mixture_inner(a: &UniformMixture, b: &UniformMixture, kernel: KernelSpec, rule: &GaussLegendre, levels: usize) -> f64 {
    let mut total = 0.0;
    for ca in a.components() {
        for cb in b.components() {
            total += ca.w * cb.w * uniform_pair_expectation(ca, cb, kernel, rule, levels);
        }
    }
    total
}

/// `E k(X, Y)` for `X ~ U(a.a, a.b)`, `Y ~ U(b.a, b.b)` independent.
fn uniform_pair_expectation(a: &MixtureComponent, b: &MixtureComponent, kernel: KernelSpec, rule: &GaussLegendre, levels: usize) -> f64 {
    let stationary = stationary_expectation(a.a, a.b, b.a, b.b, kernel, rule, levels);
    match kernel {
        KernelSpec::ModifiedGaussian { alpha } => {
            stationary + abs_power_mean(a.a, a.b, alpha) * abs_power_mean(b.a, b.b, alpha)
        }
        KernelSpec::Energy { alpha } => {
            stationary + 0.5 * (abs_power_mean(a.a, a.b, 2.0 * alpha) + abs_power_mean(b.a, b.b, 2.0 * alpha))
        }
        _ => stationary,
    }
}

/// `E|X|^e` for `X ~ U(a, b)`, from the antiderivative `sign(x)|x|^{e+1}/(e+1)`.
pub(crate) fn abs_power_mean(a: f64, b: f64, e: f64) -> f64 {
    let anti = |x: f64| x.signum() * x.abs().powf(e + 1.0) / (e + 1.0);
    (anti(b) - anti(a)) / (b - a)
}

/// `E g(X − Y)` where `g(t) = profile(t²)`, via `∫ g(t) w(t) dt / (L_x L_y)`
/// and `w(t) = |[a, b] ∩ [c + t, d + t]|`, which is piecewise linear.
fn stationary_expectation(a: f64, b: f64, c: f64, d: f64, kernel: KernelSpec, rule: &GaussLegendre, levels: usize) -> f64 {
    let (lo, hi) = (a - d, b - c);
    let overlap = |t: f64| (b.min(d + t) - a.max(c + t)).max(0.0);

    let mut cuts = vec![lo, hi, a - c, b - d];
    if lo < 0.0 && hi > 0.0 {
        cuts.push(0.0);
    }
    let (clip_lo, clip_hi) = match kernel.profile_cutoff() {
        Some(cut) => (lo.max(-cut), hi.min(cut)),
        None => (lo, hi),
    };
    if clip_lo >= clip_hi {
        return 0.0;
    }
    // dyadic ladder in |t| around the kernel's length scale (or the domain size)
    let (base, top_exp) = match kernel.length_scale() {
        Some(s) => (s, kernel.profile_cutoff().map_or(0.0, |c| (c / s).log2().ceil())),
        None => (lo.abs().max(hi.abs()), 0.0),
    };
    let mut k = -(levels as i32);
    while (k as f64) <= top_exp {
        let r = base * 2f64.powi(k);
        cuts.push(r);
        cuts.push(-r);
        k += 1;
    }
    cuts.retain(|&t| t >= clip_lo && t <= clip_hi);
    cuts.push(clip_lo);
    cuts.push(clip_hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        total += rule.integrate(t0, t1, |t| kernel.profile(t * t) * overlap(t));
    }
    total / ((b - a) * (d - c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(a: f64, b: f64) -> UniformMixture {
        UniformMixture::uniform(a, b).unwrap()
    }

    fn emp(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::univariate(v.to_vec()).unwrap()
    }

    /// Direct estimator with explicit double loops over `eval`.
    fn brute_estimate(s: &[EmpiricalDistribution], k: KernelSpec) -> Vec<f64> {
        let n = s.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let mut acc = 0.0;
                let mut count = 0.0;
                for (j, x) in s[i].rows().enumerate() {
                    for (m, y) in s[l].rows().enumerate() {
                        if i == l && j == m {
                            continue;
                        }
                        acc += k.eval(x, y).unwrap();
                        count += 1.0;
                    }
                }
                out[i * n + l] = acc / count;
            }
        }
        out
    }

    /// Closed form of E exp(−(X−Y)²/(2σ²)) for independent uniforms using
    /// the second antiderivative of the Gaussian.
    fn gaussian_pair_closed_form(a: f64, b: f64, c: f64, d: f64, sigma: f64) -> f64 {
        use statrs::function::erf::erf;
        // H(t) = ∫∫ exp(−t²/2σ²) = σ√(π/2)·t·erf(t/(σ√2)) + σ² exp(−t²/2σ²)
        let h = |t: f64| {
            sigma * (std::f64::consts::PI / 2.0).sqrt() * t * erf(t / (sigma * 2f64.sqrt()))
                + sigma * sigma * (-t * t / (2.0 * sigma * sigma)).exp()
        };
        let v = h(b - c) + h(a - d) - h(a - c) - h(b - d);
        v / ((b - a) * (d - c))
    }

    #[test]
    fn point_like_uniforms_approach_one() {
        let eps = 1e-3;
        let g = gram_exact(&[uni(5.0 - eps, 5.0 + eps), uni(5.0 - eps, 5.0 + eps)], KernelSpec::gaussian(1.0), QuadratureConfig::default()).unwrap();
        assert!((g.get(0, 1) - 1.0).abs() < eps * eps);
    }

    #[test]
    fn energy_half_closed_forms() {
        let quad = QuadratureConfig::default();
        let g = gram_exact(&[uni(0.0, 1.0), uni(0.0, 1.0), uni(2.0, 3.0)], KernelSpec::energy(0.5), quad).unwrap();
        // ½(E|X| + E|Y| − E|X−Y|) = ½(½ + ½ − ⅓)
        assert_relative_eq!(g.get(0, 1), 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(g.get(0, 0), 1.0 / 3.0, epsilon = 1e-12);
        // ½(½ + 5/2 − 2)
        assert_relative_eq!(g.get(0, 2), 0.5, epsilon = 1e-12);
        // E|X|=5/2, E|X−X'|=⅓ for the shifted copy: ½(5/2+5/2−⅓) = 7/3
        assert_relative_eq!(g.get(2, 2), 7.0 / 3.0, epsilon = 1e-12);
        // so MMD² = ⅓ + 7/3 − 1 = 5/3 = ∫(F−G)² = ∫₀¹t² + 1 + ∫₀¹(1−t)²
        assert_relative_eq!(mmd_squared(&g, 0, 2).unwrap(), 5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_half_shifted_overlap() {
        let g = gram_exact(&[uni(0.0, 1.0), uni(0.5, 1.5)], KernelSpec::energy(0.5), QuadratureConfig::default()).unwrap();
        // ∫(F−G)² = 1/24 + 1/8 + 1/24
        assert_relative_eq!(mmd_squared(&g, 0, 1).unwrap(), 5.0 / 24.0, epsilon = 1e-12);
        assert_relative_eq!(mmd_dist(&g, 0, 1).unwrap(), (5.0f64 / 24.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_matches_closed_form() {
        let quad = QuadratureConfig::default();
        let cases = [
            (0.0, 1.0, 0.5, 1.5, 1.0),
            (0.0, 200.0, 800.0, 1000.0, 60.0),
            (0.0, 200.0, 3.0, 450.0, 60.0),
            (0.0, 200.0, 3.0, 450.0, 5.0),
            (-3.0, 2.0, -1.0, 0.5, 0.1),
        ];
        for (a, b, c, d, s) in cases {
            let g = gram_exact(&[uni(a, b), uni(c, d)], KernelSpec::gaussian(s), quad).unwrap();
            let expected = gaussian_pair_closed_form(a, b, c, d, s);
            assert!(
                // the closed form itself cancels down to ~1e-16 absolute
                (g.get(0, 1) - expected).abs() <= 1e-10 * expected.abs() + 1e-15,
                "{a} {b} {c} {d} {s}: {} vs {expected}",
                g.get(0, 1)
            );
        }
    }

    #[test]
    fn doubled_nodes_agree_on_smooth_kernels() {
        let mixtures = vec![
            UniformMixture::two_component(0.3, (0.0, 200.0), (800.0, 1000.0)).unwrap(),
            uni(10.0, 300.0),
            UniformMixture::two_component(0.9, (5.0, 240.0), (700.0, 950.0)).unwrap(),
        ];
        for k in [KernelSpec::gaussian(70.0), KernelSpec::modified_gaussian(2.0), KernelSpec::gaussian(3.0)] {
            let base = gram_exact(&mixtures, k, QuadratureConfig::default()).unwrap();
            let fine = gram_exact(&mixtures, k, QuadratureConfig::default().doubled()).unwrap();
            for (x, y) in base.values().iter().zip(fine.values()) {
                assert!((x - y).abs() <= 1e-8 * y.abs(), "{k:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn abs_power_mean_crosses_zero() {
        assert_relative_eq!(abs_power_mean(-1.0, 1.0, 1.0), 0.5);
        assert_relative_eq!(abs_power_mean(-2.0, 1.0, 2.0), 1.0);
        assert_relative_eq!(abs_power_mean(2.0, 3.0, 1.0), 2.5);
    }

    #[test]
    fn estimated_examples() {
        let g = gram_estimated(&[emp(&[0.0, 0.0]), emp(&[0.0, 0.0])], KernelSpec::gaussian(1.0)).unwrap();
        assert_eq!(g.values(), &[1.0, 1.0, 1.0, 1.0]);

        let g = gram_estimated(&[emp(&[0.0, 1.0]), emp(&[0.0, 1.0])], KernelSpec::gaussian(1.0)).unwrap();
        let e = (-0.5f64).exp();
        assert_relative_eq!(g.get(0, 1), 0.25 * (2.0 + 2.0 * e), epsilon = 1e-15);
        assert_relative_eq!(g.get(0, 1), 0.803_265_329_856_316_7, epsilon = 1e-15);
        assert_relative_eq!(g.get(0, 0), e, epsilon = 1e-15);
        assert_eq!(g.mode(), GramMode::Estimated);
    }

    #[test]
    fn estimated_matches_brute_force_for_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [1usize, 2, 4] {
            let sample: Vec<EmpiricalDistribution> = (0..4)
                .map(|i| {
                    let n = 3 + i;
                    let v = (0..n * p).map(|_| rng.random_range(-3.0..3.0)).collect();
                    EmpiricalDistribution::new(v, p).unwrap()
                })
                .collect();
            for k in [KernelSpec::gaussian(1.3), KernelSpec::laplace(0.7), KernelSpec::modified_gaussian(2.5), KernelSpec::energy(0.3)] {
                let g = gram_estimated(&sample, k).unwrap();
                let brute = brute_estimate(&sample, k);
                for (x, y) in g.values().iter().zip(&brute) {
                    assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{k:?} p={p}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn estimated_requires_two_observations() {
        let err = gram_estimated(&[emp(&[0.0, 1.0]), emp(&[1.0])], KernelSpec::gaussian(1.0));
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn wrong_payload_is_a_mode_error() {
        let recs = vec![DistributionRecord::new(emp(&[0.0, 1.0]).into(), None)];
        assert!(matches!(gram_exact_records(&recs, KernelSpec::gaussian(1.0), QuadratureConfig::default()), Err(Error::Mode(_))));
        let recs = vec![DistributionRecord::new(uni(0.0, 1.0).into(), None)];
        assert!(matches!(gram_estimated_records(&recs, KernelSpec::gaussian(1.0)), Err(Error::Mode(_))));
    }

    #[test]
    fn empirical_energy_converges_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let u = uni(0.0, 1.0);
        let a = crate::distributions::sample_mixture(&u, n, &mut rng).unwrap();
        let b = crate::distributions::sample_mixture(&u, n, &mut rng).unwrap();
        let g = gram_estimated(&[a, b], KernelSpec::energy(0.5)).unwrap();
        // k(X,Y) = ½(X + Y − |X−Y|) = min(X, Y); Var(min) = 1/18, SE = sqrt(Var(E[min|X]) ·2/N)
        // E[min|X] = X − X²/2 has variance 1/45 - ... bounded by 1/18 anyway.
        let se = (1.0f64 / 18.0 / n as f64).sqrt() * 2.0;
        assert!((g.get(0, 1) - 1.0 / 3.0).abs() < 3.0 * se, "{}", g.get(0, 1));
    }

    #[test]
    fn dist_to_centroid_identities() {
        let g = gram_exact(&[uni(0.0, 1.0), uni(0.5, 1.5), uni(3.0, 4.0)], KernelSpec::gaussian(1.0), QuadratureConfig::default()).unwrap();
        assert!(dist_sq_to_centroid(&g, 1, &[1]).unwrap().abs() < 1e-15);
        let mid = dist_sq_to_centroid(&g, 0, &[0, 2]).unwrap();
        assert_relative_eq!(mid, 0.25 * mmd_squared(&g, 0, 2).unwrap(), epsilon = 1e-14);
        assert!(dist_sq_to_centroid(&g, 0, &[]).is_err());
        assert!(mmd_squared(&g, 0, 3).is_err());
    }

    #[test]
    fn mmd_dist_clamps_negative_estimates() {
        let g = GramMatrix::from_values(2, vec![1.0, 1.0 + 5e-10, 1.0 + 5e-10, 1.0], GramMode::Estimated, KernelSpec::gaussian(1.0)).unwrap();
        assert!(mmd_squared(&g, 0, 1).unwrap() < 0.0);
        assert_eq!(mmd_dist(&g, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn from_values_rejects_asymmetry() {
        let k = KernelSpec::gaussian(1.0);
        assert!(GramMatrix::from_values(2, vec![1.0, 0.5, 0.4, 1.0], GramMode::Exact, k).is_err());
        assert!(GramMatrix::from_values(2, vec![1.0, 0.5, 0.5], GramMode::Exact, k).is_err());
    }

    fn random_mixture(rng: &mut impl Rng) -> UniformMixture {
        let a = rng.random_range(-2.0..2.0);
        let len = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            uni(a, a + len)
        } else {
            let w = rng.random_range(0.1..0.9);
            let c = rng.random_range(-2.0..2.0);
            UniformMixture::two_component(w, (a, a + len), (c, c + rng.random_range(0.1..2.0))).unwrap()
        }
    }

    #[test]
    fn exact_gram_is_psd_and_mmd_is_a_pseudometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let kernels = [KernelSpec::gaussian(0.8), KernelSpec::laplace(1.5), KernelSpec::modified_gaussian(2.0), KernelSpec::energy(0.4)];
        for _ in 0..10 {
            let sample: Vec<_> = (0..6).map(|_| random_mixture(&mut rng)).collect();
            for k in kernels {
                let g = gram_exact(&sample, k, QuadratureConfig::default()).unwrap();
                let m = nalgebra::DMatrix::from_row_slice(6, 6, g.values());
                let min = m.clone().symmetric_eigen().eigenvalues.min();
                assert!(min >= -1e-8 * m.norm(), "{k:?}: {min}");
                for i in 0..6 {
                    for j in 0..6 {
                        let dij = mmd_dist(&g, i, j).unwrap();
                        assert!(mmd_squared(&g, i, j).unwrap() >= -1e-9);
                        assert_eq!(dij, mmd_dist(&g, j, i).unwrap());
                        for l in 0..6 {
                            let via = mmd_dist(&g, i, l).unwrap() + mmd_dist(&g, l, j).unwrap();
                            assert!(dij <= via + 1e-9, "{k:?} triangle");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn permuting_the_sample_permutes_the_matrix_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mixtures: Vec<_> = (0..5).map(|_| random_mixture(&mut rng)).collect();
        let samples: Vec<_> = (0..5)
            .map(|_| EmpiricalDistribution::new((0..40).map(|_| rng.random_range(-1.0..1.0)).collect(), 2).unwrap())
            .collect();
        let perm = [3usize, 0, 4, 2, 1];
        let k = KernelSpec::laplace(0.9);
        let g = gram_exact(&mixtures, k, QuadratureConfig::default()).unwrap();
        let gp = gram_exact(&perm.iter().map(|&i| mixtures[i].clone()).collect::<Vec<_>>(), k, QuadratureConfig::default()).unwrap();
        let h = gram_estimated(&samples, k).unwrap();
        let hp = gram_estimated(&perm.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>(), k).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                assert_eq!(gp.get(a, b).to_bits(), g.get(perm[a], perm[b]).to_bits());
                assert_eq!(hp.get(a, b).to_bits(), h.get(perm[a], perm[b]).to_bits());
            }
        }
    }

    /// Brute-force quadratic form for the centroid distance.
    fn centroid_oracle(g: &GramMatrix, i: usize, members: &[usize]) -> f64 {
        let c = members.len() as f64;
        let mut v = g.get(i, i);
        for &l in members {
            v -= 2.0 / c * g.get(i, l);
        }
        for &l in members {
            for &m in members {
                v += g.get(l, m) / (c * c);
            }
        }
        v
    }

    proptest! {
        #[test]
        fn centroid_distance_matches_quadratic_form(
            pts in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 5),
            i in 0usize..5,
            mask in 1u8..32,
        ) {
            let vals: Vec<f64> = (0..25).map(|c| {
                let (a, b) = (c / 5, c % 5);
                pts[a].iter().zip(&pts[b]).map(|(x, y)| x * y).sum()
            }).collect();
            let g = GramMatrix::from_values(5, vals, GramMode::Exact, KernelSpec::gaussian(1.0)).unwrap();
            let members: Vec<usize> = (0..5).filter(|b| mask & (1 << b) != 0).collect();
            let got = dist_sq_to_centroid(&g, i, &members).unwrap();
            let want = centroid_oracle(&g, i, &members).max(0.0);
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }

        #[test]
        fn energy_half_identity(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_mixture(&mut rng);
            let q = random_mixture(&mut rng);
            let g = gram_exact(&[p.clone(), q.clone()], KernelSpec::energy(0.5), QuadratureConfig::default()).unwrap();
            let l2 = crate::wasserstein::cdf_l2_squared(&p, &q);
            // with the ½ in the energy kernel, MMD² is half the energy distance 2∫(F−G)²
            prop_assert!((mmd_squared(&g, 0, 1).unwrap() - l2).abs() < 1e-9);
        }
    }
}
