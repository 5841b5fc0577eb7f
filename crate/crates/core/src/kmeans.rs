//! Lloyd iteration over distributions with random restarts.
//!
//! Each restart starts from `K` distinct random items as singleton clusters,
//! then alternates nearest-representative assignment and representative
//! updates until the assignment no longer changes. The restart with the
//! lowest within-cluster sum of squares (WCSS) wins.
//!
//! The same engine runs in RKHS geometry (from a [`GramMatrix`]) and in
//! 2-Wasserstein geometry (from quantile functions); see [`Geometry`].

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionRecord;
use crate::error::{Error, Result};
use crate::geometry::{CentroidMode, Geometry, WassersteinGeometry};
use crate::gram::GramMatrix;
use crate::seeds::derive_seed;
use crate::wasserstein::DEFAULT_GRID;

/// Cluster assignment with the diagnostics of the restart that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub wcss: f64,
    pub n_iterations: usize,
    /// Seed of the restart's generator.
    pub seed: u64,
    /// WCSS after every sweep.
    pub wcss_trace: Vec<f64>,
    #[serde(default)]
    pub restart: usize,
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

impl Partition {
    /// Builds a partition from labels alone; run diagnostics are zeroed.
    pub fn from_labels(assignments: Vec<usize>, k: usize) -> Result<Self> {
        validate_labels(&assignments, k)?;
        Ok(Self {
            assignments,
            k,
            wcss: 0.0,
            n_iterations: 0,
            seed: 0,
            wcss_trace: Vec::new(),
            restart: 0,
            converged: true,
        })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Member indices of every cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        members_of(&self.assignments, self.k)
    }

    /// Cluster sizes.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

/// Checks that labels lie in `[0, k)` and every cluster is used.
pub fn validate_labels(assignments: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Input("a partition needs at least one cluster".into()));
    }
    let mut seen = vec![false; k];
    for (i, &a) in assignments.iter().enumerate() {
        if a >= k {
            return Err(Error::Input(format!("item {i} has cluster id {a} outside [0, {k})")));
        }
        seen[a] = true;
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::Input(format!("cluster {j} has no members")));
    }
    Ok(())
}

fn members_of(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        m[a].push(i);
    }
    m
}

/// How each restart picks its initial representatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `K` distinct items drawn uniformly.
    #[default]
    RandomPoints,
    /// k-means++ seeding from squared distances.
    PlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansOptions {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    #[serde(default)]
    pub init: Init,
}

impl KmeansOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            restarts: 10,
            seed: 0,
            max_iter: 100,
            init: Init::RandomPoints,
        }
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Config("restarts and max_iter must be at least 1".into()));
        }
        if self.k == 0 || self.k > n {
            return Err(Error::Input(format!("K = {} is not in [1, n = {n}]", self.k)));
        }
        Ok(())
    }
}

/// Best partition plus every restart, in restart order.
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub best: Partition,
    pub restarts: Vec<Partition>,
}

/// Runs all restarts in parallel and keeps the lowest WCSS (earliest restart
/// on ties).
pub fn lloyd<G: Geometry>(geo: &G, opts: &KmeansOptions) -> Result<KmeansOutcome> {
    opts.validate(geo.len())?;
    let runs: Vec<Partition> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(opts.seed, r as u64);
            let mut p = single_restart(geo, opts.k, opts.max_iter, seed, opts.init);
            p.restart = r;
            p
        })
        .collect();
    let mut best = 0;
    for (r, p) in runs.iter().enumerate() {
        if p.wcss < runs[best].wcss {
            best = r;
        }
    }
    Ok(KmeansOutcome {
        best: runs[best].clone(),
        restarts: runs,
    })
}

/// Kernel K-means on a Gram matrix.
pub fn kernel_kmeans(g: &GramMatrix, opts: &KmeansOptions) -> Result<Partition> {
    Ok(lloyd(g, opts)?.best)
}

/// K-means in 2-Wasserstein geometry on univariate records.
pub fn wasserstein_kmeans(sample: &[DistributionRecord], opts: &KmeansOptions, mode: CentroidMode) -> Result<Partition> {
    let geo = WassersteinGeometry::new(sample, DEFAULT_GRID, mode)?;
    Ok(lloyd(&geo, opts)?.best)
}

/// WCSS of an assignment: squared distances to the cluster representatives.
pub fn wcss<G: Geometry>(geo: &G, assignments: &[usize], k: usize) -> f64 {
    let clusters = members_of(assignments, k);
    clusters
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let c = geo.centroid(m);
            m.iter().map(|&i| geo.dist_sq_to_centroid(i, &c)).sum::<f64>()
        })
        .sum()
}

/// True when one more assignment sweep leaves the labels unchanged.
pub fn is_fixed_point<G: Geometry>(geo: &G, assignments: &[usize], k: usize) -> bool {
    let clusters = members_of(assignments, k);
    if clusters.iter().any(Vec::is_empty) {
        return false;
    }
    let centroids: Vec<G::Centroid> = clusters.iter().map(|m| geo.centroid(m)).collect();
    let (next, _) = assign(geo, &centroids);
    next == assignments
}

/// True when no sweep raised the WCSS by more than `tol`.
pub fn trace_nonincreasing(trace: &[f64], tol: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Nearest representative for every item; ties go to the lowest id.
fn assign<G: Geometry>(geo: &G, centroids: &[G::Centroid]) -> (Vec<usize>, Vec<f64>) {
    (0..geo.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = geo.dist_sq_to_centroid(i, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Refills empty clusters with the item farthest from its representative,
/// taken from clusters that keep at least one member.
fn repair_empty(labels: &mut [usize], dists: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in labels.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] >= 2 && pick.is_none_or(|p| dists[i] > dists[p]) {
                pick = Some(i);
            }
        }
        let i = pick.expect("K ≤ n leaves a cluster with two members");
        sizes[labels[i]] -= 1;
        labels[i] = j;
        sizes[j] = 1;
        dists[i] = 0.0;
    }
}

fn initial_centroids<G: Geometry>(geo: &G, k: usize, init: Init, rng: &mut ChaCha8Rng) -> Vec<G::Centroid> {
    let n = geo.len();
    let chosen: Vec<usize> = match init {
        Init::RandomPoints => index::sample(rng, n, k).into_vec(),
        Init::PlusPlus => {
            let mut chosen = vec![rng.random_range(0..n)];
            let mut d2: Vec<f64> = (0..n).map(|i| geo.dist_sq(i, chosen[0])).collect();
            while chosen.len() < k {
                let total: f64 = (0..n).filter(|i| !chosen.contains(i)).map(|i| d2[i]).sum();
                let next = if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = None;
                    for i in (0..n).filter(|i| !chosen.contains(i)) {
                        if d2[i] > 0.0 {
                            pick = Some(i);
                            u -= d2[i];
                            if u < 0.0 {
                                break;
                            }
                        }
                    }
                    pick.expect("positive mass")
                } else {
                    let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                    free[rng.random_range(0..free.len())]
                };
                chosen.push(next);
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(geo.dist_sq(i, next));
                }
            }
            chosen
        }
    };
    chosen.iter().map(|&i| geo.centroid(&[i])).collect()
}

fn single_restart<G: Geometry>(geo: &G, k: usize, max_iter: usize, seed: u64, init: Init) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = initial_centroids(geo, k, init, &mut rng);
    let (mut labels, mut dists) = assign(geo, &centroids);
    repair_empty(&mut labels, &mut dists, k);

    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        let clusters = members_of(&labels, k);
        let centroids: Vec<G::Centroid> = clusters.par_iter().map(|m| geo.centroid(m)).collect();
        let w: f64 = (0..labels.len())
            .map(|i| geo.dist_sq_to_centroid(i, &centroids[labels[i]]))
            .sum();
        trace.push(w);
        if trace.len() > max_iter {
            break;
        }
        let (mut next, mut d) = assign(geo, &centroids);
        repair_empty(&mut next, &mut d, k);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        log::warn!("K-means restart with seed {seed} stopped after {max_iter} iterations without converging");
    }
    Partition {
        assignments: labels,
        k,
        wcss: *trace.last().expect("at least one sweep"),
        n_iterations: trace.len(),
        seed,
        wcss_trace: trace,
        restart: 0,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::UniformMixture;
    use crate::gram::{gram_exact, GramMode, QuadratureConfig};
    use crate::kernels::KernelSpec;
    use approx::assert_relative_eq;

    fn two_groups() -> Vec<UniformMixture> {
        (0..5)
            .map(|_| UniformMixture::uniform(0.0, 1.0).unwrap())
            .chain((0..5).map(|_| UniformMixture::uniform(10.0, 11.0).unwrap()))
            .collect()
    }

    /// Minimum WCSS over every assignment of `n` items to `k` nonempty clusters.
    fn brute_force_optimum<G: Geometry>(geo: &G, k: usize) -> f64 {
        let n = geo.len();
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        loop {
            if (0..k).all(|j| labels.contains(&j)) {
                best = best.min(wcss(geo, &labels, k));
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                labels[pos] += 1;
                if labels[pos] < k {
                    break;
                }
                labels[pos] = 0;
                pos += 1;
            }
        }
    }

    fn random_gram(seed: u64, n: usize) -> GramMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let vals = (0..n * n)
            .map(|c| {
                let (a, b) = (c / n, c % n);
                let d2: f64 = pts[a].iter().zip(&pts[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / 2.0).exp()
            })
            .collect();
        GramMatrix::from_values(n, vals, GramMode::Exact, KernelSpec::gaussian(1.0)).unwrap()
    }

    #[test]
    fn single_cluster_is_total_scatter() {
        let g = random_gram(1, 7);
        let p = kernel_kmeans(&g, &KmeansOptions::new(1).restarts(3)).unwrap();
        let n = 7.0;
        let diag: f64 = (0..7).map(|i| g.get(i, i)).sum();
        let all: f64 = g.values().iter().sum();
        assert_relative_eq!(p.wcss, diag - all / n, epsilon = 1e-12);
        assert!(p.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn k_equals_n_has_zero_wcss() {
        let g = random_gram(2, 6);
        let p = kernel_kmeans(&g, &KmeansOptions::new(6)).unwrap();
        assert!(p.wcss.abs() < 1e-12);
        assert_eq!(p.sizes(), vec![1; 6]);
    }

    #[test]
    fn recovers_two_groups_for_any_seed() {
        let g = gram_exact(&two_groups(), KernelSpec::gaussian(1.0), QuadratureConfig::default()).unwrap();
        let opt = brute_force_optimum(&g, 2);
        for seed in 0..20 {
            let p = kernel_kmeans(&g, &KmeansOptions::new(2).seed(seed)).unwrap();
            assert_eq!(&p.assignments[..5], &[p.assignments[0]; 5]);
            assert_eq!(&p.assignments[5..], &[1 - p.assignments[0]; 5]);
            assert_relative_eq!(p.wcss, opt, epsilon = 1e-12);
        }
    }

    #[test]
    fn wasserstein_recovers_two_groups() {
        let recs: Vec<DistributionRecord> = two_groups().into_iter().map(|m| DistributionRecord::new(m.into(), None)).collect();
        for mode in [CentroidMode::QuantileMean, CentroidMode::MixtureMean] {
            let p = wasserstein_kmeans(&recs, &KmeansOptions::new(2).seed(3), mode).unwrap();
            assert!(p.wcss < 1e-12, "{mode:?}: {}", p.wcss);
            assert_ne!(p.assignments[0], p.assignments[9]);
        }
    }

    #[test]
    fn single_cluster_quantile_mean_is_average_quantile() {
        let recs: Vec<DistributionRecord> = [(0.0, 1.0), (2.0, 6.0)]
            .iter()
            .map(|&(a, b)| DistributionRecord::new(UniformMixture::uniform(a, b).unwrap().into(), None))
            .collect();
        let geo = WassersteinGeometry::new(&recs, DEFAULT_GRID, CentroidMode::QuantileMean).unwrap();
        let c = geo.centroid(&[0, 1]);
        for (k, v) in c.iter().enumerate() {
            let q = (k as f64 + 0.5) / DEFAULT_GRID as f64;
            assert_relative_eq!(*v, 0.5 * (q + 2.0 + 4.0 * q), epsilon = 1e-12);
        }
        let p = wasserstein_kmeans(&recs, &KmeansOptions::new(1), CentroidMode::QuantileMean).unwrap();
        assert_relative_eq!(p.wcss, geo.dist_sq_to_centroid(0, &c) + geo.dist_sq_to_centroid(1, &c));
    }

    #[test]
    fn traces_are_nonincreasing_and_end_at_fixed_points() {
        for seed in 0..20 {
            let g = random_gram(100 + seed, 30);
            let out = lloyd(&g, &KmeansOptions::new(4).restarts(8).seed(seed)).unwrap();
            for p in &out.restarts {
                assert!(trace_nonincreasing(&p.wcss_trace, 1e-9), "{:?}", p.wcss_trace);
                assert!(p.converged);
                assert!(is_fixed_point(&g, &p.assignments, 4));
                assert_relative_eq!(p.wcss, wcss(&g, &p.assignments, 4), epsilon = 1e-9);
                validate_labels(&p.assignments, 4).unwrap();
            }
            let min = out.restarts.iter().map(|p| p.wcss).fold(f64::INFINITY, f64::min);
            assert_eq!(out.best.wcss, min);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = random_gram(9, 25);
        let a = kernel_kmeans(&g, &KmeansOptions::new(3).restarts(5).seed(77)).unwrap();
        let b = kernel_kmeans(&g, &KmeansOptions::new(3).restarts(5).seed(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.wcss.to_bits(), b.wcss.to_bits());
    }

    #[test]
    fn more_restarts_never_hurt() {
        let g = random_gram(11, 20);
        let mut prev = f64::INFINITY;
        for r in [1, 2, 5, 10, 20] {
            let p = kernel_kmeans(&g, &KmeansOptions::new(3).restarts(r).seed(4)).unwrap();
            assert!(p.wcss <= prev);
            prev = p.wcss;
        }
    }

    fn random_mixtures(seed: u64, n: usize) -> Vec<UniformMixture> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = rng.random_range(0.0..10.0);
                let l = rng.random_range(0.5..3.0);
                if rng.random_bool(0.5) {
                    UniformMixture::uniform(a, a + l).unwrap()
                } else {
                    let c = rng.random_range(0.0..10.0);
                    let w = rng.random_range(0.1..0.9);
                    UniformMixture::two_component(w, (a, a + l), (c, c + rng.random_range(0.5..3.0))).unwrap()
                }
            })
            .collect()
    }

    #[test]
    fn small_instances_reach_the_global_optimum() {
        for (k, kernel) in [(2, KernelSpec::energy(0.5)), (3, KernelSpec::modified_gaussian(2.0)), (3, KernelSpec::laplace(1.5))] {
            let mut hits = 0;
            for seed in 0..100 {
                let g = gram_exact(&random_mixtures(1000 + seed, 8), kernel, QuadratureConfig::default()).unwrap();
                let p = kernel_kmeans(&g, &KmeansOptions::new(k).restarts(50).seed(seed)).unwrap();
                if p.wcss <= brute_force_optimum(&g, k) + 1e-9 {
                    hits += 1;
                }
            }
            assert!(hits >= 95, "{kernel:?} K={k}: {hits}");
        }
    }

    #[test]
    fn plus_plus_seeding_runs() {
        let g = gram_exact(&two_groups(), KernelSpec::gaussian(1.0), QuadratureConfig::default()).unwrap();
        let p = kernel_kmeans(&g, &KmeansOptions::new(2).init(Init::PlusPlus).restarts(3)).unwrap();
        assert_ne!(p.assignments[0], p.assignments[9]);
        let g = random_gram(5, 12);
        let p = kernel_kmeans(&g, &KmeansOptions::new(5).init(Init::PlusPlus)).unwrap();
        validate_labels(&p.assignments, 5).unwrap();
    }

    #[test]
    fn repair_moves_the_farthest_item() {
        let mut labels = vec![0, 0, 0, 1];
        let mut d = vec![0.1, 0.9, 0.5, 0.0];
        repair_empty(&mut labels, &mut d, 3);
        assert_eq!(labels, vec![0, 2, 0, 1]);
    }

    #[test]
    fn empty_clusters_are_repaired_with_duplicates() {
        // identical items make every initial representative coincide
        let g = GramMatrix::from_values(4, vec![1.0; 16], GramMode::Exact, KernelSpec::gaussian(1.0)).unwrap();
        let p = kernel_kmeans(&g, &KmeansOptions::new(3)).unwrap();
        validate_labels(&p.assignments, 3).unwrap();
        assert!(p.wcss.abs() < 1e-12);
    }

    #[test]
    fn invalid_options() {
        let g = random_gram(3, 4);
        assert!(matches!(kernel_kmeans(&g, &KmeansOptions::new(5)), Err(Error::Input(_))));
        assert!(matches!(kernel_kmeans(&g, &KmeansOptions::new(2).restarts(0)), Err(Error::Config(_))));
    }

    #[test]
    fn partition_json_uses_capital_k() {
        let p = Partition::from_labels(vec![0, 1, 1], 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"K\":2"));
        assert!(Partition::from_labels(vec![0, 0], 2).is_err());
    }
}
