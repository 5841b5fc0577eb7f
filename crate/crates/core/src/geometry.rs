//! Distances between distributions and cluster representatives.
//!
//! Both K-means and the internal validity indices only need four
//! quantities: point-to-point distances, a representative for a set of
//! points, point-to-representative and representative-to-representative
//! distances. [`Geometry`] abstracts them over the RKHS (Gram) and the
//! quantile-function (Wasserstein) settings.

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionRecord;
use crate::error::{Error, Result};
use crate::gram::{dist_sq_with_norm, GramMatrix};
use crate::wasserstein::{mixture_mean_quantiles, pairwise_from_quantiles, quantile_distance_sq, DistanceMatrix, Univariate, DEFAULT_GRID};

/// Squared-distance geometry over `len()` indexed items.
pub trait Geometry: Sync {
    type Centroid: Send + Sync;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Squared distance between items `i` and `l`, never negative.
    fn dist_sq(&self, i: usize, l: usize) -> f64;

    /// Representative of a nonempty index set.
    fn centroid(&self, members: &[usize]) -> Self::Centroid;

    fn dist_sq_to_centroid(&self, i: usize, c: &Self::Centroid) -> f64;

    fn centroid_dist_sq(&self, a: &Self::Centroid, b: &Self::Centroid) -> f64;
}

/// Mean embedding of a cluster, kept implicitly as its member list and its
/// squared RKHS norm.
#[derive(Debug, Clone)]
pub struct GramCentroid {
    members: Vec<usize>,
    norm: f64,
}

impl Geometry for GramMatrix {
    type Centroid = GramCentroid;

    fn len(&self) -> usize {
        self.n()
    }

    fn dist_sq(&self, i: usize, l: usize) -> f64 {
        if i == l {
            0.0
        } else {
            (self.get(i, i) + self.get(l, l) - 2.0 * self.get(i, l)).max(0.0)
        }
    }

    fn centroid(&self, members: &[usize]) -> GramCentroid {
        let mut s = 0.0;
        for &a in members {
            let row = self.row(a);
            for &b in members {
                s += row[b];
            }
        }
        let c = members.len() as f64;
        GramCentroid {
            members: members.to_vec(),
            norm: s / (c * c),
        }
    }

    fn dist_sq_to_centroid(&self, i: usize, c: &GramCentroid) -> f64 {
        dist_sq_with_norm(self, i, &c.members, c.norm)
    }

    fn centroid_dist_sq(&self, a: &GramCentroid, b: &GramCentroid) -> f64 {
        let mut cross = 0.0;
        for &x in &a.members {
            let row = self.row(x);
            for &y in &b.members {
                cross += row[y];
            }
        }
        let cross = cross / (a.members.len() as f64 * b.members.len() as f64);
        (a.norm + b.norm - 2.0 * cross).max(0.0)
    }
}

/// How a cluster of univariate laws is summarized in 2-Wasserstein space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidMode {
    /// Pointwise average of the members' quantile functions (the W₂
    /// barycenter on the line).
    #[default]
    QuantileMean,
    /// The mixture `(1/|C|) Σ F_c`, whose quantile is found by bisection.
    MixtureMean,
}

/// 2-Wasserstein geometry of univariate records, evaluated on a shared
/// midpoint quantile grid.
#[derive(Debug, Clone)]
pub struct WassersteinGeometry {
    laws: Vec<Univariate>,
    quantiles: Vec<Vec<f64>>,
    grid: usize,
    mode: CentroidMode,
}

impl WassersteinGeometry {
    pub fn new(records: &[DistributionRecord], grid: usize, mode: CentroidMode) -> Result<Self> {
        if grid < 2 {
            return Err(Error::Config(format!("quantile grid must have at least 2 levels, got {grid}")));
        }
        let laws = records.iter().map(Univariate::from_record).collect::<Result<Vec<_>>>()?;
        let quantiles = laws.iter().map(|u| u.quantiles(grid)).collect();
        Ok(Self { laws, quantiles, grid, mode })
    }

    pub fn with_defaults(records: &[DistributionRecord]) -> Result<Self> {
        Self::new(records, DEFAULT_GRID, CentroidMode::default())
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn mode(&self) -> CentroidMode {
        self.mode
    }

    /// Same data with another centroid mode.
    pub fn with_mode(mut self, mode: CentroidMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn quantiles(&self, i: usize) -> &[f64] {
        &self.quantiles[i]
    }

    /// Pairwise 2-Wasserstein distances.
    pub fn pairwise(&self) -> DistanceMatrix {
        pairwise_from_quantiles(&self.quantiles, 2.0)
    }
}

impl Geometry for WassersteinGeometry {
    type Centroid = Vec<f64>;

    fn len(&self) -> usize {
        self.laws.len()
    }

    fn dist_sq(&self, i: usize, l: usize) -> f64 {
        quantile_distance_sq(&self.quantiles[i], &self.quantiles[l])
    }

    fn centroid(&self, members: &[usize]) -> Vec<f64> {
        match self.mode {
            CentroidMode::QuantileMean => {
                let mut acc = vec![0.0; self.grid];
                for &m in members {
                    for (a, q) in acc.iter_mut().zip(&self.quantiles[m]) {
                        *a += q;
                    }
                }
                let inv = 1.0 / members.len() as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                acc
            }
            CentroidMode::MixtureMean => {
                let refs: Vec<&Univariate> = members.iter().map(|&m| &self.laws[m]).collect();
                mixture_mean_quantiles(&refs, self.grid)
            }
        }
    }

    fn dist_sq_to_centroid(&self, i: usize, c: &Vec<f64>) -> f64 {
        quantile_distance_sq(&self.quantiles[i], c)
    }

    fn centroid_dist_sq(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        quantile_distance_sq(a, b)
    }
}

/// Either supported geometry behind one type.
#[derive(Debug, Clone)]
pub enum GeometryHandle {
    Gram(GramMatrix),
    Wasserstein(WassersteinGeometry),
}

#[derive(Debug, Clone)]
pub enum HandleCentroid {
    Gram(GramCentroid),
    Wasserstein(Vec<f64>),
}

impl Geometry for GeometryHandle {
    type Centroid = HandleCentroid;

    fn len(&self) -> usize {
        match self {
            GeometryHandle::Gram(g) => g.n(),
            GeometryHandle::Wasserstein(w) => w.len(),
        }
    }

    fn dist_sq(&self, i: usize, l: usize) -> f64 {
        match self {
            GeometryHandle::Gram(g) => Geometry::dist_sq(g, i, l),
            GeometryHandle::Wasserstein(w) => w.dist_sq(i, l),
        }
    }

    fn centroid(&self, members: &[usize]) -> HandleCentroid {
        match self {
            GeometryHandle::Gram(g) => HandleCentroid::Gram(g.centroid(members)),
            GeometryHandle::Wasserstein(w) => HandleCentroid::Wasserstein(w.centroid(members)),
        }
    }

    fn dist_sq_to_centroid(&self, i: usize, c: &HandleCentroid) -> f64 {
        match (self, c) {
            (GeometryHandle::Gram(g), HandleCentroid::Gram(c)) => g.dist_sq_to_centroid(i, c),
            (GeometryHandle::Wasserstein(w), HandleCentroid::Wasserstein(c)) => w.dist_sq_to_centroid(i, c),
            _ => unreachable!("centroid from a different geometry"),
        }
    }

    fn centroid_dist_sq(&self, a: &HandleCentroid, b: &HandleCentroid) -> f64 {
        match (self, a, b) {
            (GeometryHandle::Gram(g), HandleCentroid::Gram(a), HandleCentroid::Gram(b)) => g.centroid_dist_sq(a, b),
            (GeometryHandle::Wasserstein(w), HandleCentroid::Wasserstein(a), HandleCentroid::Wasserstein(b)) => {
                w.centroid_dist_sq(a, b)
            }
            _ => unreachable!("centroid from a different geometry"),
        }
    }
}
