//! Synthetic data generators.
//!
//! Two families:
//!
//! * univariate two-class uniform mixtures with a merging weight `λ`;
//! * bivariate Pearson-system samples whose four moments per variable are
//!   themselves drawn from Gaussian priors, with independent components or a
//!   Gaussian copula.
//!
//! Every generator is a pure function of its configuration and the RNG state.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionRecord, EmpiricalDistribution, UniformMixture};
use crate::error::{Error, Result};
use crate::pearson::{std_normal_cdf, Pearson, PearsonParams};

/// Two-class uniform-mixture model.
///
/// For `i = 1..n/2`, `f1 = U(4(i−1)+λ₁, 195+5i+λ₂)` and
/// `f2 = U(C0−5i−λ₃, D0−4i−λ₄)`; class 1 is `f1` and class 2 is
/// `λ·f1 + (1−λ)·f2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnivariateModelConfig {
    pub lambda: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_d0")]
    pub d0: f64,
}

fn default_n() -> usize {
    100
}
fn default_c0() -> f64 {
    805.0
}
fn default_d0() -> f64 {
    1004.0
}

impl UnivariateModelConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            n: default_n(),
            c0: default_c0(),
            d0: default_d0(),
        }
    }

    /// `C0 = 100`, `D0 = 600`.
    pub fn variation1(lambda: f64) -> Self {
        Self {
            c0: 100.0,
            d0: 600.0,
            ..Self::new(lambda)
        }
    }

    /// `C0 = 200`, `D0 = 600`.
    pub fn variation2(lambda: f64) -> Self {
        Self {
            c0: 200.0,
            d0: 600.0,
            ..Self::new(lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::Config(format!("n must be a positive even count, got {}", self.n)));
        }
        if !(self.c0.is_finite() && self.d0.is_finite()) {
            return Err(Error::Config("C0 and D0 must be finite".into()));
        }
        Ok(())
    }
}

/// Draws `λ₁..λ₄ ~ U(0, 4)` once, then builds all `n` records.
///
/// Records come class 1 first (`i = 1..n/2`), then class 2, labeled `"1"`
/// and `"2"`.
pub fn generate_univariate<R: Rng + ?Sized>(config: &UnivariateModelConfig, rng: &mut R) -> Result<Vec<DistributionRecord>> {
    config.validate()?;
    let offsets: [f64; 4] = std::array::from_fn(|_| 4.0 * rng.random::<f64>());
    univariate_with_offsets(config, offsets)
}

/// The deterministic part of [`generate_univariate`] for given `λ₁..λ₄`.
pub fn univariate_with_offsets(config: &UnivariateModelConfig, offsets: [f64; 4]) -> Result<Vec<DistributionRecord>> {
    config.validate()?;
    let [l1, l2, l3, l4] = offsets;
    let half = config.n / 2;
    let mut class1 = Vec::with_capacity(half);
    let mut class2 = Vec::with_capacity(half);
    for i in 1..=half {
        let fi = i as f64;
        let f1 = (4.0 * (fi - 1.0) + l1, 195.0 + 5.0 * fi + l2);
        let f2 = (config.c0 - 5.0 * fi - l3, config.d0 - 4.0 * fi - l4);
        for (name, (lo, hi)) in [("a < b", f1), ("c < d", f2)] {
            if lo >= hi {
                return Err(Error::Generation {
                    context: format!("mixture index i = {i}"),
                    reason: format!("interval ordering {name} violated: [{lo}, {hi}]"),
                });
            }
        }
        class1.push(DistributionRecord::labeled(UniformMixture::uniform(f1.0, f1.1)?, "1"));
        class2.push(DistributionRecord::labeled(
            UniformMixture::two_component(config.lambda, f1, f2)?,
            "2",
        ));
    }
    class1.extend(class2);
    Ok(class1)
}

/// `N(center, sd)` prior of one Pearson moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub center: f64,
    pub sd: f64,
}

const fn hp(center: f64, sd: f64) -> HyperParam {
    HyperParam { center, sd }
}

/// Priors of the four moments of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariablePrior {
    pub mean: HyperParam,
    pub std_dev: HyperParam,
    pub skewness: HyperParam,
    pub kurtosis: HyperParam,
}

impl VariablePrior {
    fn centers(&self) -> PearsonParams {
        PearsonParams::new(self.mean.center, self.std_dev.center, self.skewness.center, self.kurtosis.center)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PearsonParams {
        let mut g = |h: HyperParam| h.center + h.sd * rng.sample::<f64, _>(StandardNormal);
        let mean = g(self.mean);
        let std_dev = g(self.std_dev);
        let skewness = g(self.skewness);
        let kurtosis = g(self.kurtosis);
        PearsonParams::new(mean, std_dev, skewness, kurtosis)
    }

    /// Same prior with every hyperparameter standard deviation set to 0.
    pub fn degenerate(&self) -> Self {
        Self {
            mean: hp(self.mean.center, 0.0),
            std_dev: hp(self.std_dev.center, 0.0),
            skewness: hp(self.skewness.center, 0.0),
            kurtosis: hp(self.kurtosis.center, 0.0),
        }
    }
}

/// Bivariate Pearson model: one pair of variable priors per cluster,
/// optionally coupled by a Gaussian copula with correlation `ρ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateModelConfig {
    pub clusters: Vec<[VariablePrior; 2]>,
    /// One copula correlation per cluster; absent means independent columns.
    #[serde(default)]
    pub correlation: Option<Vec<f64>>,
    #[serde(default = "default_per_cluster")]
    pub n_per_cluster: usize,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default = "default_redraws")]
    pub max_redraws: usize,
}

fn default_per_cluster() -> usize {
    50
}
fn default_n_obs() -> usize {
    1000
}
fn default_redraws() -> usize {
    100
}

impl BivariateModelConfig {
    /// Three clusters with independent columns.
    pub fn table3() -> Self {
        let c1 = [
            VariablePrior { mean: hp(-4.8, 6.0), std_dev: hp(12.0, 1.2), skewness: hp(-0.05, 0.1), kurtosis: hp(3.10, 0.1) },
            VariablePrior { mean: hp(17.0, 12.0), std_dev: hp(6.0, 0.6), skewness: hp(0.0, 0.1), kurtosis: hp(2.95, 0.1) },
        ];
        let c2 = [
            VariablePrior { mean: hp(-4.8, 6.0), std_dev: hp(9.0, 1.2), skewness: hp(0.0, 0.1), kurtosis: hp(3.00, 0.1) },
            VariablePrior { mean: hp(-17.0, 12.0), std_dev: hp(4.6, 0.6), skewness: hp(0.0, 0.1), kurtosis: hp(3.00, 0.1) },
        ];
        let c3 = [
            VariablePrior { mean: hp(10.0, 6.0), std_dev: hp(6.0, 1.2), skewness: hp(0.10, 0.1), kurtosis: hp(2.95, 0.1) },
            VariablePrior { mean: hp(0.0, 12.0), std_dev: hp(3.3, 0.6), skewness: hp(-0.1, 0.1), kurtosis: hp(3.10, 0.1) },
        ];
        Self {
            clusters: vec![c1, c2, c3],
            correlation: None,
            n_per_cluster: default_per_cluster(),
            n_obs: default_n_obs(),
            max_redraws: default_redraws(),
        }
    }

    /// Two clusters with identical marginal priors and copula correlations
    /// `+0.9` and `−0.9`.
    pub fn table6() -> Self {
        let c = [
            VariablePrior { mean: hp(-4.8, 0.5), std_dev: hp(12.0, 1.2), skewness: hp(-0.05, 0.1), kurtosis: hp(3.10, 0.1) },
            VariablePrior { mean: hp(17.0, 1.0), std_dev: hp(6.0, 0.6), skewness: hp(0.0, 0.1), kurtosis: hp(2.95, 0.1) },
        ];
        Self {
            clusters: vec![c, c],
            correlation: Some(vec![0.9, -0.9]),
            n_per_cluster: default_per_cluster(),
            n_obs: default_n_obs(),
            max_redraws: default_redraws(),
        }
    }

    /// The prior centers of every variable of every cluster.
    pub fn centers(&self) -> Vec<PearsonParams> {
        self.clusters.iter().flat_map(|c| c.iter().map(VariablePrior::centers)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config("bivariate model needs at least one cluster".into()));
        }
        if self.n_per_cluster == 0 || self.n_obs < 2 {
            return Err(Error::Config("n_per_cluster must be ≥ 1 and n_obs ≥ 2".into()));
        }
        if self.max_redraws == 0 {
            return Err(Error::Config("max_redraws must be ≥ 1".into()));
        }
        for prior in self.clusters.iter().flatten() {
            let hs = [prior.mean, prior.std_dev, prior.skewness, prior.kurtosis];
            if hs.iter().any(|h| !h.center.is_finite() || !h.sd.is_finite() || h.sd < 0.0) {
                return Err(Error::Config(format!("invalid hyperparameters {prior:?}")));
            }
        }
        if let Some(rho) = &self.correlation {
            if rho.len() != self.clusters.len() {
                return Err(Error::Config(format!(
                    "{} correlations for {} clusters",
                    rho.len(),
                    self.clusters.len()
                )));
            }
            if let Some(r) = rho.iter().find(|r| !(r.abs() < 1.0)) {
                return Err(Error::Config(format!("copula correlation {r} must satisfy |ρ| < 1")));
            }
        }
        Ok(())
    }
}

/// Draw Pearson parameters from `prior`, redrawing infeasible sets.
fn draw_feasible<R: Rng + ?Sized>(prior: &VariablePrior, max_redraws: usize, context: &str, rng: &mut R) -> Result<Pearson> {
    let mut last = None;
    for _ in 0..max_redraws {
        let params = prior.draw(rng);
        match Pearson::new(params) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Generation {
        context: context.to_string(),
        reason: format!(
            "no feasible Pearson parameters in {max_redraws} draws (last: {})",
            last.map(|e| e.to_string()).unwrap_or_default()
        ),
    })
}

/// Generate every cluster in order; labels are `"1"`, `"2"`, ….
///
/// Per object: draw both variables' parameters (variable 1 first), then
/// `n_obs` observations. Without a copula each column is sampled in turn by
/// inverse CDF; with one, `(Y₁, Y₂) ~ N(0, [[1, ρ], [ρ, 1]])` is pushed
/// through `Φ` and the marginal quantiles.
pub fn generate_bivariate<R: Rng + ?Sized>(config: &BivariateModelConfig, rng: &mut R) -> Result<Vec<DistributionRecord>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.clusters.len() * config.n_per_cluster);
    for (j, priors) in config.clusters.iter().enumerate() {
        let rho = config.correlation.as_ref().map(|r| r[j]);
        for i in 0..config.n_per_cluster {
            let laws = [0, 1].map(|l| {
                let ctx = format!("cluster {} object {} variable {}", j + 1, i + 1, l + 1);
                draw_feasible(&priors[l], config.max_redraws, &ctx, rng)
            });
            let [x1, x2] = laws;
            let (x1, x2) = (x1?, x2?);
            let columns = match rho {
                None => [x1.sample(config.n_obs, rng), x2.sample(config.n_obs, rng)],
                Some(rho) => copula_columns(&x1, &x2, rho, config.n_obs, rng),
            };
            let data: Vec<f64> = columns[0].iter().zip(&columns[1]).flat_map(|(&a, &b)| [a, b]).collect();
            out.push(DistributionRecord::labeled(EmpiricalDistribution::new(data, 2)?, (j + 1).to_string()));
        }
    }
    Ok(out)
}

fn copula_columns<R: Rng + ?Sized>(x1: &Pearson, x2: &Pearson, rho: f64, n: usize, rng: &mut R) -> [Vec<f64>; 2] {
    let s = (1.0 - rho * rho).sqrt();
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let y2 = rho * z1 + s * z2;
        c1.push(x1.quantile(clamp_open(std_normal_cdf(z1))));
        c2.push(x2.quantile(clamp_open(std_normal_cdf(y2))));
    }
    [c1, c2]
}

/// Keep `Φ(y)` strictly inside (0, 1) so unbounded quantiles stay finite.
fn clamp_open(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// [`generate_bivariate`] for a model without copula correlation.
pub fn generate_bivariate_independent<R: Rng + ?Sized>(config: &BivariateModelConfig, rng: &mut R) -> Result<Vec<DistributionRecord>> {
    if config.correlation.is_some() {
        return Err(Error::Config("independent generator given copula correlations".into()));
    }
    generate_bivariate(config, rng)
}

/// [`generate_bivariate`] for a model with copula correlation.
pub fn generate_bivariate_dependent<R: Rng + ?Sized>(config: &BivariateModelConfig, rng: &mut R) -> Result<Vec<DistributionRecord>> {
    if config.correlation.is_none() {
        return Err(Error::Config("dependent generator needs one correlation per cluster".into()));
    }
    generate_bivariate(config, rng)
}
