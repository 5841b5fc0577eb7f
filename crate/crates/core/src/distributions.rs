//! Distributional data: empirical samples and analytic uniform mixtures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `N × p` sample stored row-major; each row is one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    data: Vec<f64>,
    dim: usize,
}

impl EmpiricalDistribution {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("sample dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Input("sample must contain at least one observation".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Input(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value in observation {}",
                pos / dim
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// Sorted copy of a univariate sample.
    pub(crate) fn sorted_values(&self) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(Error::Unsupported(format!(
                "quantile functions need univariate data, got p = {}",
                self.dim
            )));
        }
        let mut v = self.data.clone();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

/// One weighted uniform component `w · U(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub w: f64,
    pub a: f64,
    pub b: f64,
}

impl MixtureComponent {
    fn cdf(&self, t: f64) -> f64 {
        ((t - self.a) / (self.b - self.a)).clamp(0.0, 1.0)
    }
}

/// A finite mixture of univariate uniform distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct UniformMixture {
    components: Vec<MixtureComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureRepr> for UniformMixture {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        UniformMixture::new(r.components)
    }
}

impl From<UniformMixture> for MixtureRepr {
    fn from(m: UniformMixture) -> Self {
        MixtureRepr {
            components: m.components,
        }
    }
}

impl UniformMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Input("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.a.is_finite() && c.b.is_finite() && c.a < c.b) {
                return Err(Error::Input(format!(
                    "component {i}: need a < b, got U({}, {})",
                    c.a, c.b
                )));
            }
            if !(c.w > 0.0 && c.w <= 1.0) {
                return Err(Error::Input(format!(
                    "component {i}: weight {} outside (0, 1]",
                    c.w
                )));
            }
            total += c.w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent { w: 1.0, a, b }])
    }

    /// `w·U(a1,b1) + (1−w)·U(a2,b2)`, dropping a component whose weight is 0.
    pub fn two_component(w: f64, first: (f64, f64), second: (f64, f64)) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Input(format!("mixing weight {w} outside [0, 1]")));
        }
        let mut comps = Vec::with_capacity(2);
        if w > 0.0 {
            comps.push(MixtureComponent { w, a: first.0, b: first.1 });
        }
        if w < 1.0 {
            comps.push(MixtureComponent { w: 1.0 - w, a: second.0, b: second.1 });
        }
        Self::new(comps)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Smallest and largest support endpoints.
    pub fn support(&self) -> (f64, f64) {
        self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.a), hi.max(c.b))
        })
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.w * 0.5 * (c.a + c.b)).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        // E[(X − m)²] per component, avoids cancellation for large supports
        self.components
            .iter()
            .map(|c| {
                let (a, b) = (c.a - m, c.b - m);
                c.w * (a * a + a * b + b * b) / 3.0
            })
            .sum()
    }
}

/// `F(t) = Σ w_c · clamp((t − a_c)/(b_c − a_c), 0, 1)`.
pub fn mixture_cdf(m: &UniformMixture, t: f64) -> f64 {
    let f: f64 = m.components.iter().map(|c| c.w * c.cdf(t)).sum();
    f.clamp(0.0, 1.0)
}

/// Generalized inverse `inf{t : F(t) ≥ q}` for `0 < q < 1`.
pub fn mixture_quantile(m: &UniformMixture, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Input(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(mixture_quantile_unchecked(m, q))
}

pub(crate) fn mixture_quantile_unchecked(m: &UniformMixture, q: f64) -> f64 {
    let mut knots: Vec<f64> = m.components.iter().flat_map(|c| [c.a, c.b]).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    // F is linear between consecutive knots.
    let mut prev_t = knots[0];
    let mut prev_f = 0.0;
    for &t in &knots[1..] {
        let f = mixture_cdf(m, t);
        if f >= q {
            let frac = (q - prev_f) / (f - prev_f);
            return (prev_t + frac * (t - prev_t)).clamp(prev_t, t);
        }
        prev_t = t;
        prev_f = f;
    }
    prev_t
}

/// Draws `n` i.i.d. values: a component by weight, then a uniform on it.
pub fn sample_mixture<R: Rng + ?Sized>(m: &UniformMixture, n: usize, rng: &mut R) -> Result<EmpiricalDistribution> {
    if n == 0 {
        return Err(Error::Input("sample size must be at least 1".into()));
    }
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = m.components.last().expect("nonempty mixture");
            for c in &m.components {
                acc += c.w;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            chosen.a + (chosen.b - chosen.a) * rng.random::<f64>()
        })
        .collect();
    EmpiricalDistribution::univariate(values)
}

/// Either representation of one distributional datum.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Empirical(EmpiricalDistribution),
    Mixture(UniformMixture),
}

impl From<EmpiricalDistribution> for Payload {
    fn from(e: EmpiricalDistribution) -> Self {
        Payload::Empirical(e)
    }
}

impl From<UniformMixture> for Payload {
    fn from(m: UniformMixture) -> Self {
        Payload::Mixture(m)
    }
}

/// A distribution with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRecord {
    pub payload: Payload,
    pub label: Option<String>,
}

impl DistributionRecord {
    pub fn new(payload: Payload, label: Option<String>) -> Self {
        Self { payload, label }
    }

    pub fn labeled(payload: impl Into<Payload>, label: impl Into<String>) -> Self {
        Self::new(payload.into(), Some(label.into()))
    }

    pub fn dim(&self) -> usize {
        match &self.payload {
            Payload::Empirical(e) => e.dim(),
            Payload::Mixture(_) => 1,
        }
    }

    pub fn as_mixture(&self) -> Option<&UniformMixture> {
        match &self.payload {
            Payload::Mixture(m) => Some(m),
            Payload::Empirical(_) => None,
        }
    }

    pub fn as_empirical(&self) -> Option<&EmpiricalDistribution> {
        match &self.payload {
            Payload::Empirical(e) => Some(e),
            Payload::Mixture(_) => None,
        }
    }
}

/// Mean vector and row-major `p × p` covariance.
///
/// Empirical records use the unbiased `(N − 1)` denominator; mixtures use
/// their exact moments.
pub fn moments(record: &DistributionRecord) -> Result<(Vec<f64>, Vec<f64>)> {
    match &record.payload {
        Payload::Mixture(m) => Ok((vec![m.mean()], vec![m.variance()])),
        Payload::Empirical(e) => {
            let n = e.len();
            if n < 2 {
                return Err(Error::Input(format!(
                    "covariance needs at least 2 observations, got {n}"
                )));
            }
            let p = e.dim();
            let mut mean = vec![0.0; p];
            for row in e.rows() {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut cov = vec![0.0; p * p];
            for row in e.rows() {
                for a in 0..p {
                    let da = row[a] - mean[a];
                    for b in a..p {
                        cov[a * p + b] += da * (row[b] - mean[b]);
                    }
                }
            }
            for a in 0..p {
                for b in a..p {
                    let v = cov[a * p + b] / (n - 1) as f64;
                    cov[a * p + b] = v;
                    cov[b * p + a] = v;
                }
            }
            Ok((mean, cov))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn halves(a: (f64, f64), b: (f64, f64)) -> UniformMixture {
        UniformMixture::two_component(0.5, a, b).unwrap()
    }

    /// Bisection on the CDF for the smallest t with F(t) ≥ q.
    fn quantile_oracle(m: &UniformMixture, q: f64) -> f64 {
        let (mut lo, mut hi) = m.support();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mixture_cdf(m, mid) >= q {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(mixture_cdf(&UniformMixture::uniform(0.0, 1.0).unwrap(), 0.25), 0.25);
        assert_eq!(mixture_cdf(&halves((0.0, 1.0), (2.0, 3.0)), 1.5), 0.5);
        assert_eq!(mixture_cdf(&halves((0.0, 2.0), (1.0, 3.0)), 1.5), 0.5);
        let m = halves((0.0, 2.0), (1.0, 3.0));
        assert_eq!(mixture_cdf(&m, -1e300), 0.0);
        assert_eq!(mixture_cdf(&m, 1e300), 1.0);
    }

    #[test]
    fn quantile_examples() {
        let u = UniformMixture::uniform(3.0, 5.0).unwrap();
        assert_eq!(mixture_quantile(&u, 0.5).unwrap(), 4.0);
        let gap = halves((0.0, 1.0), (2.0, 3.0));
        assert_eq!(mixture_quantile(&gap, 0.5).unwrap(), 1.0);
        assert_eq!(mixture_quantile(&gap, 0.75).unwrap(), 2.5);
        assert!((quantile_oracle(&gap, 0.5) - 1.0).abs() < 1e-12);
        assert!((quantile_oracle(&gap, 0.75) - 2.5).abs() < 1e-12);
        // just above the gap level jumps to the next component
        assert!(mixture_quantile(&gap, 0.5 + 1e-9).unwrap() >= 2.0);
    }

    #[test]
    fn quantile_rejects_levels_outside_unit_interval() {
        let u = UniformMixture::uniform(0.0, 1.0).unwrap();
        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(mixture_quantile(&u, q), Err(Error::Input(_))));
        }
    }

    #[test]
    fn invalid_mixtures() {
        assert!(UniformMixture::uniform(1.0, 1.0).is_err());
        assert!(UniformMixture::new(vec![]).is_err());
        assert!(UniformMixture::new(vec![MixtureComponent { w: 0.6, a: 0.0, b: 1.0 }]).is_err());
        let json = r#"{"components":[{"w":0.5,"a":0,"b":1},{"w":0.5,"a":3,"b":2}]}"#;
        assert!(serde_json::from_str::<UniformMixture>(json).is_err());
    }

    #[test]
    fn mixture_json_round_trip() {
        let json = r#"{"components":[{"w":0.5,"a":0.0,"b":1.0},{"w":0.5,"a":2.0,"b":3.0}]}"#;
        let m: UniformMixture = serde_json::from_str(json).unwrap();
        assert_eq!(m, halves((0.0, 1.0), (2.0, 3.0)));
        assert_eq!(serde_json::to_string(&m).unwrap(), json);
    }

    #[test]
    fn sampling_uniform_mean_in_clt_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let s = sample_mixture(&UniformMixture::uniform(0.0, 1.0).unwrap(), n, &mut rng).unwrap();
        let mean = s.as_slice().iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 / (12.0 * n as f64).sqrt());
    }

    #[test]
    fn sampling_single_draw_lies_in_support() {
        let m = halves((0.0, 1.0), (2.0, 3.0));
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = sample_mixture(&m, 1, &mut rng).unwrap().as_slice()[0];
            assert!((0.0..=1.0).contains(&x) || (2.0..=3.0).contains(&x));
        }
    }

    #[test]
    fn sampling_component_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let s = sample_mixture(&halves((0.0, 1.0), (2.0, 3.0)), n, &mut rng).unwrap();
        let frac = s.as_slice().iter().filter(|&&x| x < 1.5).count() as f64 / n as f64;
        // binomial std error is 0.0016
        assert!((frac - 0.5).abs() < 0.006);
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = halves((0.0, 2.0), (1.0, 3.0));
        let a = sample_mixture(&m, 1000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_mixture(&m, 1000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(sample_mixture(&m, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn moment_examples() {
        let (m, v) = moments(&DistributionRecord::new(UniformMixture::uniform(2.0, 8.0).unwrap().into(), None)).unwrap();
        assert_relative_eq!(m[0], 5.0);
        assert_relative_eq!(v[0], 3.0, epsilon = 1e-14);

        let e = EmpiricalDistribution::univariate(vec![0.0, 2.0]).unwrap();
        let (m, v) = moments(&DistributionRecord::new(e.into(), None)).unwrap();
        assert_eq!((m[0], v[0]), (1.0, 2.0));

        // E[X²] = ½·(1/3) + ½·(19/3) = 10/3, variance = 10/3 − 9/4 = 13/12
        let mix = halves((0.0, 1.0), (2.0, 3.0));
        let (m, v) = moments(&DistributionRecord::new(mix.into(), None)).unwrap();
        assert_relative_eq!(m[0], 1.5);
        assert_relative_eq!(v[0], 13.0 / 12.0, epsilon = 1e-14);

        let single = EmpiricalDistribution::univariate(vec![1.0]).unwrap();
        assert!(moments(&DistributionRecord::new(single.into(), None)).is_err());
    }

    #[test]
    fn empirical_validation() {
        assert!(EmpiricalDistribution::new(vec![], 1).is_err());
        assert!(EmpiricalDistribution::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(EmpiricalDistribution::new(vec![1.0, f64::NAN], 1).is_err());
        assert!(EmpiricalDistribution::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let e = EmpiricalDistribution::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.row(1), &[3.0, 4.0]);
        assert_eq!(e.column(0), vec![1.0, 3.0]);
    }

    fn mixtures() -> impl Strategy<Value = UniformMixture> {
        proptest::collection::vec((0.05f64..1.0, -10.0f64..10.0, 0.01f64..5.0), 1..4).prop_map(|parts| {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let mut comps: Vec<MixtureComponent> = parts
                .iter()
                .map(|&(w, a, len)| MixtureComponent { w: w / total, a, b: a + len })
                .collect();
            let s: f64 = comps.iter().map(|c| c.w).sum();
            comps[0].w += 1.0 - s;
            UniformMixture::new(comps).unwrap()
        })
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf_on_increasing_segments(m in mixtures(), u in 0.0f64..1.0) {
            // pick a point strictly inside some component, where F is strictly increasing
            let c = m.components()[0];
            let t = c.a + (0.02 + 0.96 * u) * (c.b - c.a);
            let q = mixture_cdf(&m, t);
            prop_assume!(q > 0.0 && q < 1.0);
            let back = mixture_quantile(&m, q).unwrap();
            prop_assert!((back - t).abs() < 1e-9 * (1.0 + t.abs()), "t={} back={}", t, back);
        }

        #[test]
        fn quantile_reaches_level(m in mixtures(), q in 0.001f64..0.999) {
            let t = mixture_quantile(&m, q).unwrap();
            prop_assert!(mixture_cdf(&m, t) >= q - 1e-12);
            prop_assert!((t - quantile_oracle(&m, q)).abs() < 1e-9);
        }

        #[test]
        fn cdf_is_monotone(m in mixtures(), mut grid in proptest::collection::vec(-15.0f64..20.0, 2..50)) {
            grid.sort_by(f64::total_cmp);
            let f: Vec<f64> = grid.iter().map(|&t| mixture_cdf(&m, t)).collect();
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
