//! Agreement with known labels (accuracy, adjusted Rand index) and internal
//! validity indices (Caliński–Harabasz, silhouette, Davies–Bouldin*) used to
//! pick the number of clusters.
//!
//! Internal indices work over any [`Geometry`]; cluster representatives are
//! mixture means, so under a Gram matrix every quantity is a quadratic form
//! in the Gram entries.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::kmeans::{validate_labels, Partition};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    if a == 0 {
        return Err(Error::Input("cannot score an empty labelling".into()));
    }
    Ok(())
}

/// Maps arbitrary labels to `0..m` in order of first appearance.
pub fn encode_labels<T: Eq + Hash + Clone>(labels: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut index: HashMap<T, usize> = HashMap::new();
    let mut names = Vec::new();
    let codes = labels
        .iter()
        .map(|l| {
            *index.entry(l.clone()).or_insert_with(|| {
                names.push(l.clone());
                names.len() - 1
            })
        })
        .collect();
    (codes, names)
}

/// Contingency table `n[r][c]` between two labellings (codes from
/// [`encode_labels`]).
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<u64>>> {
    check_lengths(pred.len(), truth.len())?;
    let (p, _) = encode_labels(pred);
    let (t, _) = encode_labels(truth);
    let rows = p.iter().max().map_or(0, |m| m + 1);
    let cols = t.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; cols]; rows];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok(table)
}

/// Fraction of items correctly placed under the best injective mapping of
/// clusters to classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let m = table.len().max(table[0].len());
    let mut cost = vec![vec![0.0; m]; m];
    for (r, row) in table.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            cost[r][c] = -(v as f64);
        }
    }
    let assignment = hungarian(&cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < table.len() && c < table[0].len())
        .map(|(r, &c)| table[r][c])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Minimum-cost perfect matching on a square matrix: `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials on rows (u) and columns (v), 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        result[col_owner[j] - 1] = j - 1;
    }
    result
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index; 0 when the denominator vanishes.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as u64;
    let sum_cells: f64 = table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_rows: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..table[0].len()).map(|c| comb2(table.iter().map(|r| r[c]).sum())).sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((sum_cells - expected) / denom)
}

/// An internal index value; `degenerate` marks conventional infinities
/// (zero within-cluster scatter, coincident centroids).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexValue {
    pub value: f64,
    pub degenerate: bool,
}

impl IndexValue {
    fn finite(value: f64) -> Self {
        Self { value, degenerate: false }
    }

    fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            degenerate: true,
        }
    }
}

fn clusters_of<G: Geometry>(geo: &G, part: &Partition) -> Result<Vec<Vec<usize>>> {
    check_lengths(geo.len(), part.len())?;
    validate_labels(&part.assignments, part.k)?;
    Ok(part.clusters())
}

/// `CH = (B/W)·(n−K)/(K−1)`.
pub fn calinski_harabasz<G: Geometry>(geo: &G, part: &Partition) -> Result<IndexValue> {
    let clusters = clusters_of(geo, part)?;
    let (n, k) = (geo.len(), part.k);
    if k < 2 {
        return Ok(IndexValue::infinite());
    }
    if n <= k {
        return Err(Error::Input(format!("Caliński–Harabasz needs n > K (n = {n}, K = {k})")));
    }
    let all: Vec<usize> = (0..n).collect();
    let grand = geo.centroid(&all);
    let (mut b, mut w) = (0.0, 0.0);
    for m in &clusters {
        let c = geo.centroid(m);
        b += m.len() as f64 * geo.centroid_dist_sq(&c, &grand);
        w += m.iter().map(|&i| geo.dist_sq_to_centroid(i, &c)).sum::<f64>();
    }
    if w <= 0.0 {
        return Ok(IndexValue::infinite());
    }
    Ok(IndexValue::finite(b / w * (n - k) as f64 / (k - 1) as f64))
}

/// Per-item silhouette `(b − a)/max(a, b)`; items alone in their cluster get 0.
pub fn silhouette_values<G: Geometry>(geo: &G, part: &Partition) -> Result<Vec<f64>> {
    let clusters = clusters_of(geo, part)?;
    if part.k < 2 {
        return Err(Error::Input("silhouette needs at least two clusters".into()));
    }
    let labels = &part.assignments;
    Ok((0..geo.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if clusters[own].len() < 2 {
                return 0.0;
            }
            let mean_to = |m: &[usize]| m.iter().map(|&l| geo.dist_sq(i, l).sqrt()).sum::<f64>();
            let a = mean_to(&clusters[own]) / (clusters[own].len() - 1) as f64;
            let b = clusters
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != own)
                .map(|(_, m)| mean_to(m) / m.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let top = a.max(b);
            if top > 0.0 {
                (b - a) / top
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean silhouette.
pub fn silhouette<G: Geometry>(geo: &G, part: &Partition) -> Result<IndexValue> {
    let v = silhouette_values(geo, part)?;
    Ok(IndexValue::finite(v.iter().sum::<f64>() / v.len() as f64))
}

/// `(1/K) Σ_j max_{ℓ≠j}(S_j + S_ℓ) / max_{ℓ≠j} d(F̄_j, F̄_ℓ)` where `S_j` is
/// the mean distance of cluster `j` to its centroid.
pub fn davies_bouldin_star<G: Geometry>(geo: &G, part: &Partition) -> Result<IndexValue> {
    let clusters = clusters_of(geo, part)?;
    let k = part.k;
    if k < 2 {
        return Err(Error::Input("Davies–Bouldin* needs at least two clusters".into()));
    }
    let centroids: Vec<G::Centroid> = clusters.iter().map(|m| geo.centroid(m)).collect();
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|&i| geo.dist_sq_to_centroid(i, c).sqrt()).sum::<f64>() / m.len() as f64)
        .collect();
    let mut total = 0.0;
    for j in 0..k {
        let mut num = f64::NEG_INFINITY;
        let mut den = f64::NEG_INFINITY;
        for l in (0..k).filter(|&l| l != j) {
            num = num.max(scatter[j] + scatter[l]);
            den = den.max(geo.centroid_dist_sq(&centroids[j], &centroids[l]).sqrt());
        }
        if den <= 0.0 {
            return Ok(IndexValue::infinite());
        }
        total += num / den;
    }
    Ok(IndexValue::finite(total / k as f64))
}

/// Internal index used to choose `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "CH", alias = "ch")]
    CalinskiHarabasz,
    #[serde(rename = "Sil", alias = "sil", alias = "silhouette")]
    Silhouette,
    #[serde(rename = "DBstar", alias = "dbstar", alias = "db*")]
    DaviesBouldinStar,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::CalinskiHarabasz, Criterion::Silhouette, Criterion::DaviesBouldinStar];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::CalinskiHarabasz => "CH",
            Criterion::Silhouette => "Sil",
            Criterion::DaviesBouldinStar => "DBstar",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Criterion::DaviesBouldinStar)
    }

    pub fn score<G: Geometry>(self, geo: &G, part: &Partition) -> Result<IndexValue> {
        match self {
            Criterion::CalinskiHarabasz => calinski_harabasz(geo, part),
            Criterion::Silhouette => silhouette(geo, part),
            Criterion::DaviesBouldinStar => davies_bouldin_star(geo, part),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ch" | "calinski-harabasz" => Ok(Criterion::CalinskiHarabasz),
            "sil" | "silhouette" => Ok(Criterion::Silhouette),
            "dbstar" | "db*" | "davies-bouldin*" => Ok(Criterion::DaviesBouldinStar),
            _ => Err(Error::Config(format!("unknown criterion '{s}' (expected CH, Sil or DBstar)"))),
        }
    }
}

/// Outcome of a `K` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub criterion: Criterion,
    pub chosen: usize,
    /// `(K, score)` in the order of the requested range.
    pub scores: Vec<(usize, IndexValue)>,
}

/// Index of the best score; ties go to the earliest (smallest `K` when the
/// range is increasing).
pub fn best_of(criterion: Criterion, scores: &[(usize, IndexValue)]) -> usize {
    let mut best = 0;
    for (idx, (k, s)) in scores.iter().enumerate() {
        let (bk, bs) = scores[best];
        let better = if criterion.higher_is_better() {
            s.value > bs.value
        } else {
            s.value < bs.value
        };
        if better || (s.value == bs.value && *k < bk) {
            best = idx;
        }
    }
    best
}

/// Clusters for every `K` in `k_range` (in parallel) and returns the `K` with
/// the best index.
pub fn select_k<G, F>(geo: &G, runner: F, k_range: &[usize], criterion: Criterion) -> Result<KSelection>
where
    G: Geometry,
    F: Fn(usize) -> Result<Partition> + Sync,
{
    if k_range.is_empty() {
        return Err(Error::Config("empty K range".into()));
    }
    let n = geo.len();
    if let Some(&k) = k_range.iter().find(|&&k| k < 2 || k + 1 > n) {
        return Err(Error::Config(format!("K = {k} is outside [2, n − 1] for n = {n}")));
    }
    let scores = k_range
        .par_iter()
        .map(|&k| {
            let p = runner(k)?;
            Ok((k, criterion.score(geo, &p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = scores[best_of(criterion, &scores)].0;
    Ok(KSelection { criterion, chosen, scores })
}

/// One line of a score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub replication: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub criterion: String,
    pub value: f64,
    pub degenerate: bool,
    pub chosen: bool,
}

impl KSelection {
    pub fn rows(&self, replication: usize) -> Vec<ScoreRow> {
        self.scores
            .iter()
            .map(|(k, s)| ScoreRow {
                replication,
                k: *k,
                criterion: self.criterion.name().to_string(),
                value: s.value,
                degenerate: s.degenerate,
                chosen: *k == self.chosen,
            })
            .collect()
    }
}
