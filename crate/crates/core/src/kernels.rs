//! Kernel families on ℝ^p and the median-dispersion bandwidth rule.
//!
//! Every kernel here splits into a part that depends only on the squared
//! distance `‖x − y‖²` (its *profile*) plus, for the modified Gaussian and
//! energy kernels, a part built from the norms `‖x‖`, `‖y‖`. The Gram
//! routines exploit that split; [`KernelSpec::eval`] is the plain closed form.

use serde::{Deserialize, Serialize};

use crate::distributions::{moments, DistributionRecord};
use crate::error::{Error, Result};

/// A kernel family together with its tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(−‖x−y‖² / (2σ²))`
    Gaussian { sigma: f64 },
    /// `exp(−‖x−y‖ / σ)`
    Laplace { sigma: f64 },
    /// `exp(−‖x−y‖²/2) + ‖x‖^α ‖y‖^α`, α ≥ 1.
    #[serde(rename = "mg")]
    ModifiedGaussian { alpha: f64 },
    /// `½(‖x‖^{2α} + ‖y‖^{2α} − ‖x−y‖^{2α})`, 0 < α < 1.
    Energy { alpha: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma }
    }

    pub fn laplace(sigma: f64) -> Self {
        KernelSpec::Laplace { sigma }
    }

    pub fn modified_gaussian(alpha: f64) -> Self {
        KernelSpec::ModifiedGaussian { alpha }
    }

    pub fn energy(alpha: f64) -> Self {
        KernelSpec::Energy { alpha }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } | KernelSpec::Laplace { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "{} bandwidth must be a positive finite number, got {sigma}",
                        self.family_name()
                    )));
                }
            }
            KernelSpec::ModifiedGaussian { alpha } => {
                if !(alpha.is_finite() && alpha >= 1.0) {
                    return Err(Error::Config(format!(
                        "modified Gaussian exponent must satisfy alpha >= 1, got {alpha}"
                    )));
                }
            }
            KernelSpec::Energy { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!(
                        "energy exponent must satisfy 0 < alpha < 1, got {alpha}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplace { .. } => "laplace",
            KernelSpec::ModifiedGaussian { .. } => "mg",
            KernelSpec::Energy { .. } => "energy",
        }
    }

    /// Numeric tag used by the binary matrix container.
    pub fn tag(&self) -> u8 {
        match self {
            KernelSpec::Gaussian { .. } => 0,
            KernelSpec::Laplace { .. } => 1,
            KernelSpec::ModifiedGaussian { .. } => 2,
            KernelSpec::Energy { .. } => 3,
        }
    }

    /// Short human-readable label such as `energy(0.5)`.
    pub fn label(&self) -> String {
        match *self {
            KernelSpec::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            KernelSpec::Laplace { sigma } => format!("laplace(sigma={sigma})"),
            KernelSpec::ModifiedGaussian { alpha } => format!("mg(alpha={alpha})"),
            KernelSpec::Energy { alpha } => format!("energy(alpha={alpha})"),
        }
    }

    /// Evaluates `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::Input("kernel arguments must have dimension >= 1".into()));
        }
        self.validate()?;
        Ok(self.eval_unchecked(x, y))
    }

    /// [`eval`](Self::eval) without argument or parameter checks.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2 = squared_distance(x, y);
        match *self {
            KernelSpec::Gaussian { .. } | KernelSpec::Laplace { .. } => self.profile(d2),
            KernelSpec::ModifiedGaussian { alpha } => {
                let nx = pow_of_square(squared_norm(x), 0.5 * alpha);
                let ny = pow_of_square(squared_norm(y), 0.5 * alpha);
                self.profile(d2) + nx * ny
            }
            KernelSpec::Energy { alpha } => {
                let nx = pow_of_square(squared_norm(x), alpha);
                let ny = pow_of_square(squared_norm(y), alpha);
                0.5 * (nx + ny - pow_of_square(d2, alpha))
            }
        }
    }

    /// The part of the kernel that depends only on `d2 = ‖x − y‖²`.
    ///
    /// For the energy kernel this is `−½ d2^α`; the norm terms are handled
    /// separately through [`norm_feature`](Self::norm_feature).
    #[inline]
    pub(crate) fn profile(&self, d2: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => (-d2 / (2.0 * sigma * sigma)).exp(),
            KernelSpec::Laplace { sigma } => (-d2.sqrt() / sigma).exp(),
            KernelSpec::ModifiedGaussian { .. } => {
                // exp underflows to exactly zero past this point
                if d2 > 1500.0 {
                    0.0
                } else {
                    (-0.5 * d2).exp()
                }
            }
            KernelSpec::Energy { alpha } => -0.5 * pow_of_square(d2, alpha),
        }
    }

    /// Norm feature entering the kernel: `‖x‖^α` (product form) for the
    /// modified Gaussian, `‖x‖^{2α}` (additive form) for the energy kernel.
    #[inline]
    pub(crate) fn norm_feature(&self, sq_norm: f64) -> f64 {
        match *self {
            KernelSpec::ModifiedGaussian { alpha } => pow_of_square(sq_norm, 0.5 * alpha),
            KernelSpec::Energy { alpha } => pow_of_square(sq_norm, alpha),
            _ => 0.0,
        }
    }

    /// Distance beyond which the profile is exactly zero in `f64`, if any.
    pub(crate) fn profile_cutoff(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { sigma } => Some(40.0 * sigma),
            KernelSpec::Laplace { sigma } => Some(750.0 * sigma),
            KernelSpec::ModifiedGaussian { .. } => Some(40.0),
            KernelSpec::Energy { .. } => None,
        }
    }

    /// Characteristic length of the profile, used to place quadrature panels.
    pub(crate) fn length_scale(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { sigma } | KernelSpec::Laplace { sigma } => Some(sigma),
            KernelSpec::ModifiedGaussian { .. } => Some(1.0),
            KernelSpec::Energy { .. } => None,
        }
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

/// `s^e` for `s ≥ 0`, with fast paths for the exponents used in practice.
#[inline]
pub(crate) fn pow_of_square(s: f64, e: f64) -> f64 {
    if e == 0.5 {
        s.sqrt()
    } else if e == 0.25 {
        s.sqrt().sqrt()
    } else if e == 1.0 {
        s
    } else if e == 1.5 {
        s * s.sqrt()
    } else {
        s.powf(e)
    }
}

/// A bandwidth that is either fixed or chosen from the data at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Auto(AutoTag),
}

/// The literal string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Bandwidth {
    pub const AUTO: Bandwidth = Bandwidth::Auto(AutoTag::Auto);
}

/// Kernel as written in configuration files, where Gaussian and Laplace
/// bandwidths may be `"auto"` (resolved with [`select_sigma_star`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelConfig {
    Gaussian { sigma: Bandwidth },
    Laplace { sigma: Bandwidth },
    #[serde(rename = "mg")]
    ModifiedGaussian { alpha: f64 },
    Energy { alpha: f64 },
}

impl KernelConfig {
    pub fn needs_sigma_star(&self) -> bool {
        matches!(
            self,
            KernelConfig::Gaussian { sigma: Bandwidth::Auto(_) }
                | KernelConfig::Laplace { sigma: Bandwidth::Auto(_) }
        )
    }

    /// Replaces `"auto"` bandwidths by `sigma_star`.
    pub fn resolve(&self, sigma_star: Option<f64>) -> Result<KernelSpec> {
        let pick = |b: Bandwidth| match b {
            Bandwidth::Fixed(s) => Ok(s),
            Bandwidth::Auto(_) => sigma_star.ok_or_else(|| {
                Error::Config("bandwidth \"auto\" needs a sample to compute sigma*".into())
            }),
        };
        let spec = match *self {
            KernelConfig::Gaussian { sigma } => KernelSpec::Gaussian { sigma: pick(sigma)? },
            KernelConfig::Laplace { sigma } => KernelSpec::Laplace { sigma: pick(sigma)? },
            KernelConfig::ModifiedGaussian { alpha } => KernelSpec::ModifiedGaussian { alpha },
            KernelConfig::Energy { alpha } => KernelSpec::Energy { alpha },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Label used in result tables, e.g. `gaussian(sigma*)`.
    pub fn label(&self) -> String {
        let bw = |b: &Bandwidth| match b {
            Bandwidth::Fixed(s) => format!("sigma={s}"),
            Bandwidth::Auto(_) => "sigma*".to_string(),
        };
        match self {
            KernelConfig::Gaussian { sigma } => format!("gaussian({})", bw(sigma)),
            KernelConfig::Laplace { sigma } => format!("laplace({})", bw(sigma)),
            KernelConfig::ModifiedGaussian { alpha } => format!("mg(alpha={alpha})"),
            KernelConfig::Energy { alpha } => format!("energy(alpha={alpha})"),
        }
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(spec: KernelSpec) -> Self {
        match spec {
            KernelSpec::Gaussian { sigma } => KernelConfig::Gaussian {
                sigma: Bandwidth::Fixed(sigma),
            },
            KernelSpec::Laplace { sigma } => KernelConfig::Laplace {
                sigma: Bandwidth::Fixed(sigma),
            },
            KernelSpec::ModifiedGaussian { alpha } => KernelConfig::ModifiedGaussian { alpha },
            KernelSpec::Energy { alpha } => KernelConfig::Energy { alpha },
        }
    }
}

/// Dispersion of one distribution: `sqrt(trace(Σ))`, the ordinary standard
/// deviation when `p = 1`.
pub fn dispersion(record: &DistributionRecord) -> Result<f64> {
    let (_, cov) = moments(record)?;
    let p = record.dim();
    let trace: f64 = (0..p).map(|k| cov[k * p + k]).sum();
    Ok(trace.max(0.0).sqrt())
}

/// Median of the per-distribution dispersions (the σ* bandwidth rule).
pub fn select_sigma_star(sample: &[DistributionRecord]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Input("sigma* needs a nonempty sample".into()));
    }
    let mut values = sample
        .iter()
        .enumerate()
        .map(|(i, r)| {
            dispersion(r).map_err(|e| Error::Input(format!("record {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&mut values))
}

/// Median with the midpoint convention for even lengths. Sorts in place.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
