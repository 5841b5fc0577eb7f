//! Monte Carlo orchestration: data generation, Gram caching, clustering,
//! scoring and aggregation into result tables.
//!
//! Seeds: replication `r` uses `derive_seed(master, r)`; within it, data for
//! parameter `p` uses stream `2p` and clustering for method `m` uses stream
//! `m` of stream `2p + 1`. Any replication can be rerun in isolation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionRecord, EmpiricalDistribution, Payload};
use crate::error::{Error, Result};
use crate::geometry::{CentroidMode, Geometry, GeometryHandle, WassersteinGeometry};
use crate::gram::{gram_estimated_records, gram_exact_records, GramMatrix, QuadratureConfig};
use crate::io;
use crate::kernels::{select_sigma_star, Bandwidth, KernelConfig, KernelSpec};
use crate::kmeans::{is_fixed_point, lloyd, trace_nonincreasing, KmeansOptions, Partition};
use crate::sar::{ingest_dataset, SarFeatureConfig};
use crate::seeds::{derive_seed, stream_rng};
use crate::simgen::{generate_bivariate, generate_univariate, BivariateModelConfig, UnivariateModelConfig};
use crate::validity::{accuracy, adjusted_rand_index, best_of, encode_labels, Criterion, IndexValue};
use crate::wasserstein::DEFAULT_GRID;

/// Named uniform-mixture model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnivariatePreset {
    #[default]
    Default,
    Variation1,
    Variation2,
}

impl UnivariatePreset {
    pub fn config(self, lambda: f64) -> UnivariateModelConfig {
        match self {
            UnivariatePreset::Default => UnivariateModelConfig::new(lambda),
            UnivariatePreset::Variation1 => UnivariateModelConfig::variation1(lambda),
            UnivariatePreset::Variation2 => UnivariateModelConfig::variation2(lambda),
        }
    }
}

/// Named Pearson model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BivariatePreset {
    Table3,
    Table6,
}

impl BivariatePreset {
    pub fn config(self) -> BivariateModelConfig {
        match self {
            BivariatePreset::Table3 => BivariateModelConfig::table3(),
            BivariatePreset::Table6 => BivariateModelConfig::table6(),
        }
    }
}

/// Where the distributions of one replication come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// One table row per `λ`.
    Univariate {
        #[serde(default)]
        preset: UnivariatePreset,
        lambdas: Vec<f64>,
        #[serde(default)]
        n: Option<usize>,
    },
    Bivariate {
        preset: BivariatePreset,
        /// Full model override; the preset only names the row.
        #[serde(default)]
        model: Option<BivariateModelConfig>,
        #[serde(default)]
        n_per_cluster: Option<usize>,
        #[serde(default)]
        n_obs: Option<usize>,
        /// Keep only these columns (e.g. `[0]` for the first component).
        #[serde(default)]
        columns: Option<Vec<usize>>,
    },
    /// One table row per group of class directories.
    Sar {
        root: PathBuf,
        groups: Vec<Vec<String>>,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default)]
        features: SarFeatureConfig,
    },
    /// Fixed data; replications only vary the clustering seeds.
    Manifest { path: PathBuf },
}

fn default_per_class() -> usize {
    100
}

impl Source {
    /// Row labels, one per parameter value.
    pub fn params(&self) -> Vec<String> {
        match self {
            Source::Univariate { lambdas, .. } => lambdas.iter().map(|l| format!("lambda={l}")).collect(),
            Source::Bivariate { preset, columns, .. } => {
                let name = serde_json::to_value(preset).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                match columns {
                    Some(c) => vec![format!("{name}[{}]", c.iter().map(usize::to_string).collect::<Vec<_>>().join(","))],
                    None => vec![name],
                }
            }
            Source::Sar { groups, .. } => groups.iter().map(|g| g.join(",")).collect(),
            Source::Manifest { path } => vec![path.display().to_string()],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Source::Univariate { preset, lambdas, n } => {
                if lambdas.is_empty() {
                    return Err(Error::Config("univariate source needs at least one lambda".into()));
                }
                for &l in lambdas {
                    let mut c = preset.config(l);
                    if let Some(n) = n {
                        c.n = *n;
                    }
                    c.validate()?;
                }
            }
            Source::Bivariate { columns, .. } => {
                self.bivariate_model()?.validate()?;
                if let Some(c) = columns {
                    if c.is_empty() || c.iter().any(|&k| k > 1) {
                        return Err(Error::Config(format!("columns {c:?} must be a nonempty subset of [0, 1]")));
                    }
                }
            }
            Source::Sar { groups, per_class, features, .. } => {
                features.validate()?;
                if groups.is_empty() || groups.iter().any(|g| g.len() < 2) || *per_class == 0 {
                    return Err(Error::Config("SAR source needs groups of ≥ 2 classes and per_class ≥ 1".into()));
                }
            }
            Source::Manifest { .. } => {}
        }
        Ok(())
    }

    fn bivariate_model(&self) -> Result<BivariateModelConfig> {
        let Source::Bivariate { preset, model, n_per_cluster, n_obs, .. } = self else {
            return Err(Error::Config("not a bivariate source".into()));
        };
        let mut m = model.clone().unwrap_or_else(|| preset.config());
        if let Some(v) = n_per_cluster {
            m.n_per_cluster = *v;
        }
        if let Some(v) = n_obs {
            m.n_obs = *v;
        }
        Ok(m)
    }

    /// Records for parameter `p` drawn with `seed`.
    pub fn generate(&self, p: usize, seed: u64) -> Result<Vec<DistributionRecord>> {
        match self {
            Source::Univariate { preset, lambdas, n } => {
                let mut c = preset.config(lambdas[p]);
                if let Some(n) = n {
                    c.n = *n;
                }
                generate_univariate(&c, &mut stream_rng(seed, 0))
            }
            Source::Bivariate { columns, .. } => {
                let recs = generate_bivariate(&self.bivariate_model()?, &mut stream_rng(seed, 0))?;
                match columns {
                    Some(cols) => recs.iter().map(|r| select_columns(r, cols)).collect(),
                    None => Ok(recs),
                }
            }
            Source::Sar { root, groups, per_class, features } => {
                Ok(ingest_dataset(root, &groups[p], *per_class, seed, features)?.0)
            }
            Source::Manifest { path } => Ok(io::read_manifest(path)?.records),
        }
    }
}

/// Project an empirical record onto some of its columns.
pub fn select_columns(r: &DistributionRecord, cols: &[usize]) -> Result<DistributionRecord> {
    let e = r
        .as_empirical()
        .ok_or_else(|| Error::Unsupported("column selection needs empirical records".into()))?;
    if let Some(&k) = cols.iter().find(|&&k| k >= e.dim()) {
        return Err(Error::DimensionMismatch {
            expected: e.dim(),
            actual: k + 1,
        });
    }
    let data = e.rows().flat_map(|row| cols.iter().map(move |&k| row[k])).collect();
    Ok(DistributionRecord::new(
        EmpiricalDistribution::new(data, cols.len())?.into(),
        r.label.clone(),
    ))
}

/// A clustering method: kernel K-means or 2-Wasserstein K-means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kernel(KernelConfig),
    Wasserstein,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Kernel(k) => k.label(),
            Method::Wasserstein => "2-W".to_string(),
        }
    }

    /// 2-W, Gaussian σ*, Laplace σ*, MG α ∈ {2, 3}, energy α ∈ {¼, ½, ¾}.
    pub fn standard_set(with_wasserstein: bool) -> Vec<Method> {
        let mut m = Vec::new();
        if with_wasserstein {
            m.push(Method::Wasserstein);
        }
        m.extend(
            [
                KernelConfig::Gaussian { sigma: Bandwidth::AUTO },
                KernelConfig::Laplace { sigma: Bandwidth::AUTO },
                KernelConfig::ModifiedGaussian { alpha: 2.0 },
                KernelConfig::ModifiedGaussian { alpha: 3.0 },
                KernelConfig::Energy { alpha: 0.25 },
                KernelConfig::Energy { alpha: 0.5 },
                KernelConfig::Energy { alpha: 0.75 },
            ]
            .map(Method::Kernel),
        );
        m
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// `wasserstein` (or `2-w`), `family:param` such as `gaussian:auto`,
    /// `laplace:12.5`, `mg:3`, `energy:0.5`, or a JSON kernel object.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(Method::Kernel(serde_json::from_str(s).map_err(|e| Error::Config(format!("kernel '{s}': {e}")))?));
        }
        let lower = s.to_ascii_lowercase();
        if lower == "wasserstein" || lower == "2-w" {
            return Ok(Method::Wasserstein);
        }
        let (family, param) = lower
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("method '{s}' is not 'wasserstein' or 'family:param'")))?;
        let bandwidth = || -> Result<Bandwidth> {
            if param == "auto" {
                Ok(Bandwidth::AUTO)
            } else {
                number(param).map(Bandwidth::Fixed)
            }
        };
        let k = match family {
            "gaussian" => KernelConfig::Gaussian { sigma: bandwidth()? },
            "laplace" => KernelConfig::Laplace { sigma: bandwidth()? },
            "mg" => KernelConfig::ModifiedGaussian { alpha: number(param)? },
            "energy" => KernelConfig::Energy { alpha: number(param)? },
            _ => return Err(Error::Config(format!("unknown kernel family '{family}'"))),
        };
        Ok(Method::Kernel(k))
    }
}

fn number(v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("'{v}' is not a number")))
}

/// Settings for choosing `K` with internal indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionConfig {
    #[serde(default = "default_k_range")]
    pub k_range: Vec<usize>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
}

fn default_k_range() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}

impl Default for KSelectionConfig {
    fn default() -> Self {
        Self {
            k_range: default_k_range(),
            criteria: default_criteria(),
        }
    }
}

/// Declarative description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub source: Source,
    pub methods: Vec<Method>,
    /// Number of clusters; defaults to the number of distinct labels.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default = "default_grid")]
    pub wasserstein_grid: usize,
    #[serde(default)]
    pub centroid_mode: CentroidMode,
    #[serde(default)]
    pub k_selection: Option<KSelectionConfig>,
    /// Directory for Gram matrices keyed by content hash.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// A run fails when more than this fraction of replications fail.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

fn default_restarts() -> usize {
    10
}
fn default_replications() -> usize {
    20
}
fn default_max_iter() -> usize {
    100
}
fn default_grid() -> usize {
    DEFAULT_GRID
}
fn default_failure_fraction() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn new(source: Source, methods: Vec<Method>) -> Self {
        Self {
            name: String::new(),
            source,
            methods,
            k: None,
            restarts: default_restarts(),
            replications: default_replications(),
            seed: 0,
            max_iter: default_max_iter(),
            quadrature: QuadratureConfig::default(),
            wasserstein_grid: default_grid(),
            centroid_mode: CentroidMode::default(),
            k_selection: None,
            cache_dir: None,
            out: None,
            max_failure_fraction: default_failure_fraction(),
        }
    }

    /// Built-in experiments: `table1`, `table2` (variation 1), `variation2`,
    /// `table4` (three Pearson clusters), `table5` (its first component),
    /// `table7` (copula model). Replication counts are desk-scale (20; 10 for
    /// the Pearson models); the published runs used 100.
    pub fn preset(name: &str) -> Result<Self> {
        let lambdas: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let uni = |preset| Source::Univariate { preset, lambdas: lambdas.clone(), n: None };
        let bi = |preset, columns| Source::Bivariate { preset, model: None, n_per_cluster: None, n_obs: None, columns };
        let mut cfg = match name {
            "table1" => Self::new(uni(UnivariatePreset::Default), Method::standard_set(true)),
            "table2" | "variation1" => Self::new(uni(UnivariatePreset::Variation1), Method::standard_set(true)),
            "variation2" => Self::new(uni(UnivariatePreset::Variation2), Method::standard_set(true)),
            "table4" | "table3" => Self::new(bi(BivariatePreset::Table3, None), Method::standard_set(false)),
            "table5" => Self::new(bi(BivariatePreset::Table3, Some(vec![0])), Method::standard_set(true)),
            "table7" | "table6" => Self::new(bi(BivariatePreset::Table6, None), Method::standard_set(false)),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (table1, table2, variation2, table4, table5, table7)"
                )))
            }
        };
        if matches!(cfg.source, Source::Bivariate { .. }) {
            cfg.restarts = 50;
            cfg.replications = 10;
        }
        cfg.name = name.to_string();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Config("replications, restarts and max_iter must be ≥ 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config("max_failure_fraction must lie in [0, 1]".into()));
        }
        if self.wasserstein_grid < 2 {
            return Err(Error::Config("wasserstein_grid must be ≥ 2".into()));
        }
        for m in &self.methods {
            if let Method::Kernel(k) = m {
                // validates families and fixed parameters
                k.resolve(Some(1.0))?;
            }
        }
        if let Some(ks) = &self.k_selection {
            if ks.k_range.is_empty() || ks.k_range.iter().any(|&k| k < 2) || ks.criteria.is_empty() {
                return Err(Error::Config("k_selection needs K values ≥ 2 and at least one criterion".into()));
            }
        }
        self.source.validate()
    }

    fn rep_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

/// Gram matrices cached on disk under their content key.
#[derive(Debug, Clone)]
pub struct GramCache {
    dir: PathBuf,
}

impl GramCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Hash of the records, kernel and quadrature settings.
    pub fn key(records_digest: &str, kernel: &KernelSpec, quad: &QuadratureConfig) -> String {
        let spec = serde_json::json!({ "records": records_digest, "kernel": kernel, "quadrature": quad });
        io::sha256_hex(spec.to_string().as_bytes())
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.dgrm"))
    }

    pub fn get_or_compute(&self, records: &[DistributionRecord], kernel: KernelSpec, quad: QuadratureConfig) -> Result<GramMatrix> {
        let digest = io::records_digest(records);
        let path = self.path_for(&Self::key(&digest, &kernel, &quad));
        if path.exists() {
            if let Ok((io::StoredMatrix::Gram(g), _)) = io::read_matrix(&path) {
                if g.n() == records.len() && g.kernel() == kernel {
                    return Ok(g);
                }
            }
            log::warn!("ignoring unreadable cache entry {}", path.display());
        }
        let g = compute_gram(records, kernel, quad)?;
        // unique temporary name, then rename, so parallel writers never
        // expose a partial file
        let tmp = self.dir.join(format!(".{}.{}.tmp", digest, std::process::id()));
        io::write_gram(&tmp, &g, None, Some(digest))?;
        let _ = std::fs::rename(io::sidecar_path(&tmp), io::sidecar_path(&path));
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(g)
    }
}

/// Exact Gram for mixtures, the unbiased estimate for samples.
pub fn compute_gram(records: &[DistributionRecord], kernel: KernelSpec, quad: QuadratureConfig) -> Result<GramMatrix> {
    let mixtures = records.iter().filter(|r| matches!(r.payload, Payload::Mixture(_))).count();
    match mixtures {
        0 => gram_estimated_records(records, kernel),
        m if m == records.len() => gram_exact_records(records, kernel, quad),
        _ => Err(Error::Input("cannot mix analytic and empirical records in one Gram matrix".into())),
    }
}

/// Everything a run needs to build a method's geometry for one data set.
struct Prepared<'a> {
    records: &'a [DistributionRecord],
    sigma_star: Option<f64>,
}

impl<'a> Prepared<'a> {
    fn new(records: &'a [DistributionRecord], methods: &[Method]) -> Result<Self> {
        let needs = methods.iter().any(|m| matches!(m, Method::Kernel(k) if k.needs_sigma_star()));
        let sigma_star = if needs { Some(select_sigma_star(records)?) } else { None };
        Ok(Self { records, sigma_star })
    }

    fn geometry(&self, method: &Method, cfg: &ExperimentConfig, cache: Option<&GramCache>) -> Result<GeometryHandle> {
        match method {
            Method::Kernel(k) => {
                let spec = k.resolve(self.sigma_star)?;
                let g = match cache {
                    Some(c) => c.get_or_compute(self.records, spec, cfg.quadrature)?,
                    None => compute_gram(self.records, spec, cfg.quadrature)?,
                };
                Ok(GeometryHandle::Gram(g))
            }
            Method::Wasserstein => Ok(GeometryHandle::Wasserstein(WassersteinGeometry::new(
                self.records,
                cfg.wasserstein_grid,
                cfg.centroid_mode,
            )?)),
        }
    }
}

fn truth_labels(records: &[DistributionRecord]) -> Result<Vec<usize>> {
    let labels: Vec<&str> = records
        .iter()
        .map(|r| r.label.as_deref().ok_or_else(|| Error::Input("accuracy needs labeled records".into())))
        .collect::<Result<_>>()?;
    Ok(encode_labels(&labels).0)
}

/// Score of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub param: String,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub ari: f64,
    pub wcss: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Every restart's WCSS trace was nonincreasing (within 1e-9).
    pub traces_nonincreasing: bool,
    /// One more assignment sweep leaves the best partition unchanged.
    pub fixed_point: bool,
}

/// A replication excluded from the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub seed: u64,
    pub param: String,
    pub error: String,
}

/// Mean accuracy and ARI of one method at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub param: String,
    pub method: String,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
    pub mean_ari: f64,
    pub se_ari: f64,
    pub replications: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, param: &str, method: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.param == param && r.method == method)
    }

    /// Accuracy laid out like the published tables: one line per parameter,
    /// one column per method.
    pub fn wide_accuracy(&self) -> String {
        let mut params: Vec<&str> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !params.contains(&r.param.as_str()) {
                params.push(&r.param);
            }
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let mut out = format!("param,{}\n", methods.join(","));
        for p in params {
            let cells: Vec<String> = methods
                .iter()
                .map(|m| self.get(p, m).map(|r| format!("{:.4}", r.mean_accuracy)).unwrap_or_default())
                .collect();
            out.push_str(&format!("{p},{}\n", cells.join(",")));
        }
        out
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregate per-replication outcomes; rows follow `params × methods` order.
pub fn aggregate(outcomes: &[ReplicationOutcome], failures: &[FailureRecord], params: &[String], methods: &[String]) -> ResultTable {
    let mut rows = Vec::new();
    for p in params {
        let failed = failures.iter().filter(|f| &f.param == p).count();
        for m in methods {
            let mut sel: Vec<&ReplicationOutcome> = outcomes.iter().filter(|o| &o.param == p && &o.method == m).collect();
            sel.sort_by_key(|o| o.replication);
            let acc: Vec<f64> = sel.iter().map(|o| o.accuracy).collect();
            let ari: Vec<f64> = sel.iter().map(|o| o.ari).collect();
            let (mean_accuracy, se_accuracy) = mean_se(&acc);
            let (mean_ari, se_ari) = mean_se(&ari);
            rows.push(ResultRow {
                param: p.clone(),
                method: m.clone(),
                mean_accuracy,
                se_accuracy,
                mean_ari,
                se_ari,
                replications: sel.len(),
                failed,
            });
        }
    }
    ResultTable { rows }
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub table: ResultTable,
    pub outcomes: Vec<ReplicationOutcome>,
    pub failures: Vec<FailureRecord>,
}

/// Either all methods' results for one (replication, parameter), or why the
/// data could not be produced.
type CellResult<T> = std::result::Result<Vec<T>, FailureRecord>;

/// Run `cell` for every (replication, parameter) in parallel. Configuration
/// errors abort; other errors become failure records.
fn for_each_cell<T, F>(cfg: &ExperimentConfig, cell: F) -> Result<(Vec<T>, Vec<FailureRecord>)>
where
    T: Send,
    F: Fn(usize, usize, u64) -> Result<Vec<T>> + Sync,
{
    let params = cfg.source.params();
    let cells: Vec<(usize, usize)> = (0..cfg.replications).flat_map(|r| (0..params.len()).map(move |p| (r, p))).collect();
    let results: Vec<Result<CellResult<T>>> = cells
        .par_iter()
        .map(|&(r, p)| {
            let seed = cfg.rep_seed(r);
            match cell(r, p, seed) {
                Ok(v) => Ok(Ok(v)),
                Err(e) if e.is_config() => Err(e),
                Err(e) => {
                    log::warn!("replication {r} ({}) failed with seed {seed}: {e}", params[p]);
                    Ok(Err(FailureRecord {
                        replication: r,
                        seed,
                        param: params[p].clone(),
                        error: e.to_string(),
                    }))
                }
            }
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res? {
            Ok(v) => ok.extend(v),
            Err(f) => failures.push(f),
        }
    }
    Ok((ok, failures))
}

fn check_failures(cfg: &ExperimentConfig, failures: &[FailureRecord]) -> Result<()> {
    let limit = (cfg.max_failure_fraction * cfg.replications as f64).floor() as usize;
    for p in cfg.source.params() {
        let failed = failures.iter().filter(|f| f.param == p).count();
        if failed > limit {
            return Err(Error::ExcessFailures {
                param: p,
                failed,
                total: cfg.replications,
                limit,
            });
        }
    }
    Ok(())
}

fn kmeans_options(cfg: &ExperimentConfig, k: usize, seed: u64) -> KmeansOptions {
    KmeansOptions::new(k).restarts(cfg.restarts).seed(seed).max_iter(cfg.max_iter)
}

/// Data and clustering seeds of one cell.
fn cell_seeds(rep_seed: u64, p: usize) -> (u64, u64) {
    (derive_seed(rep_seed, 2 * p as u64), derive_seed(rep_seed, 2 * p as u64 + 1))
}

/// Cluster every replication with every method and score against the
/// labels. Artifacts go to `cfg.out` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let params = cfg.source.params();
    let cache = cfg.cache_dir.as_ref().map(GramCache::new);
    if let Some(d) = &cfg.cache_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let (mut outcomes, mut failures) = for_each_cell(cfg, |r, p, seed| {
        let (data_seed, cluster_seed) = cell_seeds(seed, p);
        let records = cfg.source.generate(p, data_seed)?;
        let truth = truth_labels(&records)?;
        let k = cfg.k.unwrap_or_else(|| truth.iter().max().map_or(1, |m| m + 1));
        let prepared = Prepared::new(&records, &cfg.methods)?;
        cfg.methods
            .iter()
            .enumerate()
            .map(|(m, method)| {
                let geo = prepared.geometry(method, cfg, cache.as_ref())?;
                let run = lloyd(&geo, &kmeans_options(cfg, k, derive_seed(cluster_seed, m as u64)))?;
                let part = &run.best;
                Ok(ReplicationOutcome {
                    replication: r,
                    seed,
                    param: params[p].clone(),
                    method: method.label(),
                    k,
                    accuracy: accuracy(&part.assignments, &truth)?,
                    ari: adjusted_rand_index(&part.assignments, &truth)?,
                    wcss: part.wcss,
                    n_iterations: part.n_iterations,
                    converged: part.converged,
                    traces_nonincreasing: run.restarts.iter().all(|p| trace_nonincreasing(&p.wcss_trace, 1e-9)),
                    fixed_point: is_fixed_point(&geo, &part.assignments, k),
                })
            })
            .collect()
    })?;
    outcomes.sort_by_key(|o| (o.replication, params.iter().position(|p| *p == o.param)));
    failures.sort_by_key(|f| (f.replication, params.iter().position(|p| *p == f.param)));
    let methods: Vec<String> = cfg.methods.iter().map(Method::label).collect();
    let table = aggregate(&outcomes, &failures, &params, &methods);
    let report = ExperimentReport { table, outcomes, failures };
    if let Some(out) = &cfg.out {
        write_report(out, cfg, &report)?;
    }
    check_failures(cfg, &report.failures)?;
    Ok(report)
}

/// Write `config.json`, `replications.{json,csv}`, `failures.json`,
/// `results.{json,csv}` and `accuracy_table.csv`.
pub fn write_report(out: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_json(&out.join("config.json"), cfg)?;
    io::write_json(&out.join("replications.json"), &report.outcomes)?;
    io::write_csv_rows(&out.join("replications.csv"), &report.outcomes)?;
    io::write_json(&out.join("failures.json"), &report.failures)?;
    io::write_json(&out.join("results.json"), &report.table)?;
    io::write_csv_rows(&out.join("results.csv"), &report.table.rows)?;
    std::fs::write(out.join("accuracy_table.csv"), report.table.wide_accuracy()).map_err(|e| Error::io(out, e))
}

/// Recompute the table of a finished run from its per-replication files.
pub fn report_from_dir(dir: &Path) -> Result<ResultTable> {
    let cfg: ExperimentConfig = io::read_json(&dir.join("config.json"))?;
    let outcomes: Vec<ReplicationOutcome> = io::read_json(&dir.join("replications.json"))?;
    let failures: Vec<FailureRecord> = io::read_json(&dir.join("failures.json"))?;
    let methods: Vec<String> = cfg.methods.iter().map(Method::label).collect();
    Ok(aggregate(&outcomes, &failures, &cfg.source.params(), &methods))
}

/// Index values of one (replication, parameter, method, criterion) sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub replication: usize,
    pub seed: u64,
    pub param: String,
    pub method: String,
    pub criterion: Criterion,
    pub chosen: usize,
    pub scores: Vec<(usize, IndexValue)>,
}

/// Fraction of replications in which `K` won.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub param: String,
    pub method: String,
    pub criterion: Criterion,
    #[serde(rename = "K")]
    pub k: usize,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelectionReport {
    pub proportions: Vec<ProportionRow>,
    pub outcomes: Vec<SelectionOutcome>,
    pub failures: Vec<FailureRecord>,
}

impl KSelectionReport {
    pub fn proportion(&self, param: &str, method: &str, criterion: Criterion, k: usize) -> Option<f64> {
        self.proportions
            .iter()
            .find(|r| r.param == param && r.method == method && r.criterion == criterion && r.k == k)
            .map(|r| r.proportion)
    }
}

/// Score every `K` of the range with every criterion and tabulate how often
/// each `K` wins. Partitions for a given `K` are shared across criteria.
pub fn run_k_selection(cfg: &ExperimentConfig) -> Result<KSelectionReport> {
    cfg.validate()?;
    let ks = cfg.k_selection.clone().unwrap_or_default();
    let params = cfg.source.params();
    let cache = cfg.cache_dir.as_ref().map(GramCache::new);
    let (mut outcomes, failures) = for_each_cell(cfg, |r, p, seed| {
        let (data_seed, cluster_seed) = cell_seeds(seed, p);
        let records = cfg.source.generate(p, data_seed)?;
        let prepared = Prepared::new(&records, &cfg.methods)?;
        let mut out = Vec::new();
        for (m, method) in cfg.methods.iter().enumerate() {
            let geo = prepared.geometry(method, cfg, cache.as_ref())?;
            let mseed = derive_seed(cluster_seed, m as u64);
            let parts = select_k_partitions(&geo, cfg, &ks.k_range, mseed)?;
            for &criterion in &ks.criteria {
                let scores = parts
                    .iter()
                    .map(|(k, part)| Ok((*k, criterion.score(&geo, part)?)))
                    .collect::<Result<Vec<_>>>()?;
                out.push(SelectionOutcome {
                    replication: r,
                    seed,
                    param: params[p].clone(),
                    method: method.label(),
                    criterion,
                    chosen: scores[best_of(criterion, &scores)].0,
                    scores,
                });
            }
        }
        Ok(out)
    })?;
    outcomes.sort_by_key(|o| (o.replication, params.iter().position(|p| *p == o.param)));
    let mut proportions = Vec::new();
    for p in &params {
        for method in &cfg.methods {
            let label = method.label();
            for &criterion in &ks.criteria {
                let sel: Vec<&SelectionOutcome> = outcomes
                    .iter()
                    .filter(|o| &o.param == p && o.method == label && o.criterion == criterion)
                    .collect();
                for &k in &ks.k_range {
                    let count = sel.iter().filter(|o| o.chosen == k).count();
                    proportions.push(ProportionRow {
                        param: p.clone(),
                        method: label.clone(),
                        criterion,
                        k,
                        count,
                        proportion: if sel.is_empty() { f64::NAN } else { count as f64 / sel.len() as f64 },
                    });
                }
            }
        }
    }
    let report = KSelectionReport {
        proportions,
        outcomes,
        failures,
    };
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        io::write_json(&out.join("config.json"), cfg)?;
        io::write_json(&out.join("k_selection.json"), &report.outcomes)?;
        io::write_csv_rows(&out.join("k_proportions.csv"), &report.proportions)?;
        io::write_json(&out.join("failures.json"), &report.failures)?;
    }
    check_failures(cfg, &report.failures)?;
    Ok(report)
}

/// Best-of-restarts partition for each `K`, `K` in parallel.
pub fn select_k_partitions<G: Geometry>(geo: &G, cfg: &ExperimentConfig, k_range: &[usize], seed: u64) -> Result<Vec<(usize, Partition)>> {
    k_range
        .par_iter()
        .map(|&k| Ok((k, lloyd(geo, &kmeans_options(cfg, k, derive_seed(seed, k as u64)))?.best)))
        .collect()
}

/// Build a geometry for `method` on fixed records (used by the CLI).
pub fn geometry_for(records: &[DistributionRecord], method: &Method, cfg: &ExperimentConfig) -> Result<GeometryHandle> {
    Prepared::new(records, std::slice::from_ref(method))?.geometry(method, cfg, None)
}

/// Per-parameter failure counts.
pub fn failure_counts(failures: &[FailureRecord]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for f in failures {
        *m.entry(f.param.clone()).or_insert(0) += 1;
    }
    m
}
