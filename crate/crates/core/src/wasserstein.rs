//! Univariate α-Wasserstein distances through quantile functions.
//!
//! `W_α(P, Q) = (∫₀¹ |F_P⁻¹(q) − F_Q⁻¹(q)|^α dq)^{1/α}`, evaluated with the
//! midpoint rule on the grid `q_k = (k + ½)/m`. Empirical quantiles use the
//! `inf{t : F̂(t) ≥ q}` convention, so two samples of size `N` on a grid of
//! `m = N` reduce to the sorted-sample formula.

use rayon::prelude::*;

use crate::distributions::{mixture_cdf, mixture_quantile_unchecked, DistributionRecord, Payload, UniformMixture};
use crate::error::{Error, Result};

/// Default number of quantile levels.
pub const DEFAULT_GRID: usize = 1024;

/// Bisection tolerance (in `t`) for inverting mixture-mean CDFs.
pub const BISECTION_TOL: f64 = 1e-10;

/// Midpoint quantile levels `(k + ½)/m`.
pub fn quantile_levels(grid: usize) -> Vec<f64> {
    (0..grid).map(|k| (k as f64 + 0.5) / grid as f64).collect()
}

fn check_params(alpha: f64, grid: usize) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::Config(format!("Wasserstein order must be finite and ≥ 1, got {alpha}")));
    }
    if grid < 2 {
        return Err(Error::Config(format!("quantile grid must have at least 2 levels, got {grid}")));
    }
    Ok(())
}

/// A univariate law that can be evaluated through its CDF and quantile.
#[derive(Debug, Clone)]
pub(crate) enum Univariate {
    Mixture(UniformMixture),
    Sorted(Vec<f64>),
}

impl Univariate {
    pub(crate) fn from_record(record: &DistributionRecord) -> Result<Self> {
        match &record.payload {
            Payload::Mixture(m) => Ok(Univariate::Mixture(m.clone())),
            Payload::Empirical(e) => {
                if e.dim() != 1 {
                    return Err(Error::Unsupported(format!(
                        "Wasserstein distances are univariate; record has dimension {}",
                        e.dim()
                    )));
                }
                Ok(Univariate::Sorted(e.sorted_values()?))
            }
        }
    }

    fn cdf(&self, t: f64) -> f64 {
        match self {
            Univariate::Mixture(m) => mixture_cdf(m, t),
            Univariate::Sorted(v) => v.partition_point(|&x| x <= t) as f64 / v.len() as f64,
        }
    }

    fn quantile(&self, q: f64) -> f64 {
        match self {
            Univariate::Mixture(m) => mixture_quantile_unchecked(m, q),
            Univariate::Sorted(v) => {
                let n = v.len();
                let k = (q * n as f64).ceil() as usize;
                v[k.clamp(1, n) - 1]
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            Univariate::Mixture(m) => m.support(),
            Univariate::Sorted(v) => (v[0], v[v.len() - 1]),
        }
    }

    pub(crate) fn quantiles(&self, grid: usize) -> Vec<f64> {
        quantile_levels(grid).into_iter().map(|q| self.quantile(q)).collect()
    }
}

/// Quantile function of a univariate record on the midpoint grid.
pub fn quantile_function(record: &DistributionRecord, grid: usize) -> Result<Vec<f64>> {
    check_params(1.0, grid)?;
    Ok(Univariate::from_record(record)?.quantiles(grid))
}

/// Quantiles of the mixture mean `F̄ = (1/|C|) Σ F_c`, by bisection on `F̄`.
pub(crate) fn mixture_mean_quantiles(members: &[&Univariate], grid: usize) -> Vec<f64> {
    assert!(!members.is_empty());
    if members.len() == 1 {
        return members[0].quantiles(grid);
    }
    let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        let (a, b) = m.support();
        (lo.min(a), hi.max(b))
    });
    let inv = 1.0 / members.len() as f64;
    let cdf = |t: f64| members.iter().map(|m| m.cdf(t)).sum::<f64>() * inv;
    let mut out = Vec::with_capacity(grid);
    let mut left = lo;
    for q in quantile_levels(grid) {
        // smallest t with F̄(t) ≥ q; levels increase so the left end carries over
        let (mut a, mut b) = (left, hi);
        if cdf(a) >= q {
            out.push(a);
            continue;
        }
        while b - a > BISECTION_TOL * (1.0 + a.abs().max(b.abs())) {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if cdf(mid) >= q {
                b = mid;
            } else {
                a = mid;
            }
        }
        out.push(b);
        left = a;
    }
    out
}

/// `(mean_k |x_k − y_k|^α)^{1/α}` over two quantile vectors.
pub fn quantile_distance(x: &[f64], y: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let m = x.len() as f64;
    if alpha == 2.0 {
        (quantile_distance_sq(x, y)).sqrt()
    } else if alpha == 1.0 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / m
    } else {
        (x.iter().zip(y).map(|(a, b)| (a - b).abs().powf(alpha)).sum::<f64>() / m).powf(1.0 / alpha)
    }
}

/// Squared 2-Wasserstein distance on the grid.
#[inline]
pub(crate) fn quantile_distance_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// α-Wasserstein distance between two univariate records.
pub fn wasserstein(a: &DistributionRecord, b: &DistributionRecord, alpha: f64, grid: usize) -> Result<f64> {
    check_params(alpha, grid)?;
    let qa = Univariate::from_record(a)?.quantiles(grid);
    let qb = Univariate::from_record(b)?.quantiles(grid);
    Ok(quantile_distance(&qa, &qb, alpha))
}

/// α-Wasserstein distance from `a` to the mixture mean of `members`.
pub fn wasserstein_to_mixture_mean(a: &DistributionRecord, members: &[DistributionRecord], alpha: f64, grid: usize) -> Result<f64> {
    check_params(alpha, grid)?;
    if members.is_empty() {
        return Err(Error::Input("mixture mean of an empty member list".into()));
    }
    let qa = Univariate::from_record(a)?.quantiles(grid);
    let laws = members.iter().map(Univariate::from_record).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Univariate> = laws.iter().collect();
    Ok(quantile_distance(&qa, &mixture_mean_quantiles(&refs, grid), alpha))
}

/// `∫ (F_P − F_Q)² dt` for two uniform mixtures, integrated exactly over the
/// pieces on which both CDFs are linear.
pub fn cdf_l2_squared(p: &UniformMixture, q: &UniformMixture) -> f64 {
    let mut knots: Vec<f64> = p
        .components()
        .iter()
        .chain(q.components())
        .flat_map(|c| [c.a, c.b])
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
        .windows(2)
        .map(|w| {
            let (s, t) = (w[0], w[1]);
            let u = mixture_cdf(p, s) - mixture_cdf(q, s);
            let v = mixture_cdf(p, t) - mixture_cdf(q, t);
            (t - s) * (u * u + u * v + v * v) / 3.0
        })
        .sum()
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Input(format!("expected {} distances for n = {n}, got {}", n * n, values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Input(format!("distance matrix has nonzero diagonal at {i}")));
            }
            for l in 0..n {
                let v = values[i * n + l];
                if !(v >= 0.0 && v.is_finite()) || v != values[l * n + i] {
                    return Err(Error::Input(format!("distance matrix entry ({i}, {l}) is invalid or asymmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.values[i * self.n + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pairwise distances from quantile vectors, parallel over pairs.
pub(crate) fn pairwise_from_quantiles(quantiles: &[Vec<f64>], alpha: f64) -> DistanceMatrix {
    let n = quantiles.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |l| (i, l))).collect();
    let d: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, l)| quantile_distance(&quantiles[i], &quantiles[l], alpha))
        .collect();
    let mut values = vec![0.0; n * n];
    for (&(i, l), v) in pairs.iter().zip(d) {
        values[i * n + l] = v;
        values[l * n + i] = v;
    }
    DistanceMatrix { n, values }
}

/// Pairwise α-Wasserstein distances of univariate records.
pub fn wasserstein_matrix(records: &[DistributionRecord], alpha: f64, grid: usize) -> Result<DistanceMatrix> {
    check_params(alpha, grid)?;
    let quantiles = records
        .par_iter()
        .map(|r| Univariate::from_record(r).map(|u| u.quantiles(grid)))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_from_quantiles(&quantiles, alpha))
}
