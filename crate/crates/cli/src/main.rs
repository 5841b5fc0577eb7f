//! `distkm` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 too many
//! failed replications.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use distkm::error::{Error, Result};
use distkm::experiment::{
    compute_gram, geometry_for, report_from_dir, run_experiment, run_k_selection, select_k_partitions, BivariatePreset,
    ExperimentConfig, Method, Source, UnivariatePreset,
};
use distkm::geometry::{Geometry, GeometryHandle};
use distkm::io::{self, StoredMatrix};
use distkm::kernels::select_sigma_star;
use distkm::kmeans::{lloyd, KmeansOptions};
use distkm::sar::{ingest_dataset, SarFeatureConfig};
use distkm::validity::{accuracy, adjusted_rand_index, best_of, encode_labels, Criterion, KSelection};
use distkm::wasserstein::wasserstein_matrix;

#[derive(Parser)]
#[command(name = "distkm", version, about = "Kernel K-means for samples of probability distributions")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one data set from a generator and write it as a manifest.
    Simulate(SimulateArgs),
    /// Turn PNG images into empirical distributions.
    SarExtract(SarArgs),
    /// Compute a Gram matrix (or 2-Wasserstein distances) for a manifest.
    Gram(GramArgs),
    /// Run K-means on a Gram matrix or a manifest.
    Cluster(ClusterArgs),
    /// Accuracy and ARI of a partition against manifest labels.
    Score(ScoreArgs),
    /// Choose K with CH, silhouette or DB*.
    SelectK(SelectKArgs),
    /// Run a full Monte Carlo experiment.
    Run(RunArgs),
    /// Rebuild the result tables of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// default, variation1, variation2, table3 or table6.
    #[arg(long, default_value = "default")]
    model: String,
    /// Mixing weight of the univariate models.
    #[arg(long)]
    lambda: Option<f64>,
    /// Distributions in the univariate models.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_per_cluster: Option<usize>,
    /// Observations per bivariate sample.
    #[arg(long)]
    n_obs: Option<usize>,
}

#[derive(Args)]
struct SarArgs {
    /// Directory with one subdirectory of PNG files per class.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Add the gradient-norm coordinate (100 gray levels, 200 filter levels).
    #[arg(long)]
    bivariate: bool,
    #[arg(long)]
    intensity_levels: Option<u32>,
    #[arg(long)]
    filter_levels: Option<u32>,
    #[arg(long)]
    pixel_cap: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `wasserstein`, `gaussian:auto`, `laplace:2.5`, `mg:3`, `energy:0.5` or a JSON kernel.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct GramArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Also write the matrix as CSV next to the binary file.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct KmeansArgs {
    #[arg(short = 'k', long)]
    k: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Precomputed Gram matrix.
    #[arg(long)]
    gram: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kmeans: KmeansArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// `partition.json` written by `cluster`.
    #[arg(long)]
    partition: PathBuf,
    /// Manifest whose labels are the truth.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SelectKArgs {
    #[arg(long)]
    gram: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kmeans: KmeansArgs,
    /// Experiment preset for a Monte Carlo K-selection run.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    k_range: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<String>>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// table1, table2, variation2, table4, table5 or table7.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    kmeans: KmeansArgs,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of `run`.
    dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let common = Common {
        seed: cli.seed,
        out: cli.out,
        config: cli.config,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&common, a),
        Command::SarExtract(a) => sar_extract(&common, a),
        Command::Gram(a) => gram(&common, a),
        Command::Cluster(a) => cluster(&common, a),
        Command::Score(a) => score(&common, a),
        Command::SelectK(a) => select_k(&common, a),
        Command::Run(a) => run(&common, a),
        Command::Report(a) => report(&common, a),
    }
}

struct Common {
    seed: Option<u64>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
}

impl Common {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))
    }

    fn config_value(&self) -> Result<Map<String, Value>> {
        match &self.config {
            None => Ok(Map::new()),
            Some(p) => match io::read_json::<Value>(p).map_err(config_err)? {
                Value::Object(m) => Ok(m),
                _ => Err(Error::Config(format!("{}: expected a JSON object", p.display()))),
            },
        }
    }
}

/// Unreadable or malformed configuration files are configuration errors.
fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Layer `base`, the config file and set flags, then parse.
fn experiment_config(common: &Common, base: Map<String, Value>, flags: Vec<(&str, Option<Value>)>) -> Result<ExperimentConfig> {
    let mut merged = base;
    merged.extend(common.config_value()?);
    for (key, value) in flags {
        if let Some(v) = value {
            merged.insert(key.to_string(), v);
        }
    }
    if let Some(s) = common.seed {
        merged.insert("seed".into(), json!(s));
    }
    if let Some(o) = &common.out {
        merged.insert("out".into(), json!(o));
    }
    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn kmeans_flags(k: &KmeansArgs) -> Vec<(&'static str, Option<Value>)> {
    vec![
        ("k", k.k.map(|v| json!(v))),
        ("restarts", k.restarts.map(|v| json!(v))),
        ("max_iter", k.max_iter.map(|v| json!(v))),
    ]
}

fn data_flags(d: &DataArgs) -> Result<Vec<(&'static str, Option<Value>)>> {
    let method = d.method.as_deref().map(str::parse::<Method>).transpose()?;
    Ok(vec![
        ("source", d.manifest.as_ref().map(|p| json!({"kind": "manifest", "path": p}))),
        ("methods", method.map(|m| json!([m]))),
    ])
}

fn simulate(common: &Common, a: SimulateArgs) -> Result<()> {
    let mut source = match &common.config {
        Some(p) => io::read_json::<Source>(p).map_err(config_err)?,
        None => match a.model.as_str() {
            "default" | "variation1" | "variation2" => {
                let preset: UnivariatePreset = serde_json::from_value(json!(a.model))?;
                let lambda = a.lambda.ok_or_else(|| Error::Config("--lambda is required for univariate models".into()))?;
                Source::Univariate { preset, lambdas: vec![lambda], n: None }
            }
            "table3" | "table6" => Source::Bivariate {
                preset: serde_json::from_value::<BivariatePreset>(json!(a.model))?,
                model: None,
                n_per_cluster: None,
                n_obs: None,
                columns: None,
            },
            other => return Err(Error::Config(format!("unknown model '{other}'"))),
        },
    };
    match &mut source {
        Source::Univariate { lambdas, n, .. } => {
            if let Some(l) = a.lambda {
                *lambdas = vec![l];
            }
            if a.n.is_some() {
                *n = a.n;
            }
            if lambdas.len() != 1 {
                return Err(Error::Config("simulate draws one data set: give exactly one lambda".into()));
            }
        }
        Source::Bivariate { n_per_cluster, n_obs, .. } => {
            if a.n_per_cluster.is_some() {
                *n_per_cluster = a.n_per_cluster;
            }
            if a.n_obs.is_some() {
                *n_obs = a.n_obs;
            }
        }
        _ => return Err(Error::Config("simulate needs a univariate or bivariate source".into())),
    }
    let out = common.out()?;
    let seed = common.seed.unwrap_or(0);
    let records = source.generate(0, seed)?;
    let path = io::write_manifest(out, &records, Some(json!({ "source": source, "seed": seed })))?;
    println!("{}", path.display());
    Ok(())
}

fn sar_extract(common: &Common, a: SarArgs) -> Result<()> {
    let mut features = match &common.config {
        Some(p) => io::read_json::<SarFeatureConfig>(p).map_err(config_err)?,
        None if a.bivariate => SarFeatureConfig::bivariate(),
        None => SarFeatureConfig::univariate(),
    };
    if a.bivariate {
        features.include_derivative = true;
    }
    if let Some(v) = a.intensity_levels {
        features.intensity_levels = v;
    }
    if let Some(v) = a.filter_levels {
        features.filter_levels = v;
    }
    if a.pixel_cap.is_some() {
        features.pixel_cap = a.pixel_cap;
    }
    features.validate()?;
    let out = common.out()?;
    let seed = common.seed.unwrap_or(0);
    let (records, files) = ingest_dataset(&a.root, &a.classes, a.per_class, seed, &features)?;
    let provenance = json!({
        "root": a.root, "classes": a.classes, "per_class": a.per_class,
        "seed": seed, "features": features, "files": files,
    });
    let path = io::write_manifest(out, &records, Some(provenance))?;
    io::write_csv_rows(&out.join("files.csv"), &files)?;
    println!("{}", path.display());
    Ok(())
}

/// Configuration for commands that act on one manifest and one method.
fn single_config(common: &Common, data: &DataArgs, kmeans: Option<&KmeansArgs>) -> Result<ExperimentConfig> {
    let mut flags = data_flags(data)?;
    if let Some(k) = kmeans {
        flags.extend(kmeans_flags(k));
    }
    let mut cfg = experiment_config(common, Map::new(), flags)?;
    if cfg.methods.len() != 1 {
        return Err(Error::Config("exactly one method is needed (--method)".into()));
    }
    // `out` names a file or directory of this command, not a run directory
    cfg.out = None;
    Ok(cfg)
}

fn manifest_path(cfg: &ExperimentConfig) -> Result<&Path> {
    match &cfg.source {
        Source::Manifest { path } => Ok(path),
        _ => Err(Error::Config("a manifest is required (--manifest)".into())),
    }
}

fn gram(common: &Common, a: GramArgs) -> Result<()> {
    let cfg = single_config(common, &a.data, None)?;
    let loaded = io::read_manifest(manifest_path(&cfg)?)?;
    let out = common.out()?;
    let digest = Some(io::records_digest(&loaded.records));
    let (n, values) = match cfg.methods[0] {
        Method::Kernel(k) => {
            let sigma = if k.needs_sigma_star() { Some(select_sigma_star(&loaded.records)?) } else { None };
            let g = compute_gram(&loaded.records, k.resolve(sigma)?, cfg.quadrature)?;
            io::write_gram(out, &g, Some(loaded.manifest_sha256), digest)?;
            (g.n(), g.values().to_vec())
        }
        Method::Wasserstein => {
            let d = wasserstein_matrix(&loaded.records, 2.0, cfg.wasserstein_grid)?;
            io::write_distance(out, &d, 2.0, cfg.wasserstein_grid, Some(loaded.manifest_sha256), digest)?;
            (d.n(), d.values().to_vec())
        }
    };
    if a.csv {
        io::write_matrix_csv(&out.with_extension("csv"), n, &values)?;
    }
    println!("{}", out.display());
    Ok(())
}

/// Geometry from `--gram` or from `--manifest` + `--method`, with the
/// manifest's records when one was given.
fn load_geometry(
    common: &Common,
    gram_path: Option<&Path>,
    data: &DataArgs,
    kmeans: &KmeansArgs,
) -> Result<(GeometryHandle, ExperimentConfig, Option<io::LoadedManifest>)> {
    if let Some(gp) = gram_path {
        if data.method.is_some() {
            return Err(Error::Config("--method does not apply to a precomputed --gram".into()));
        }
        // only the K-means settings matter here; source and method are placeholders
        let mut base = Map::new();
        base.insert("source".into(), json!({"kind": "manifest", "path": gp}));
        base.insert("methods".into(), json!(["wasserstein"]));
        let mut cfg = experiment_config(common, base, kmeans_flags(kmeans))?;
        cfg.out = None;
        let loaded = match &data.manifest {
            Some(m) => Some(io::read_manifest(m)?),
            None => None,
        };
        let geo = match io::read_matrix(gp)?.0 {
            StoredMatrix::Gram(g) => GeometryHandle::Gram(g),
            StoredMatrix::Distance(_) => {
                return Err(Error::Unsupported(
                    "distance matrices carry no centroids; use --manifest with --method wasserstein".into(),
                ))
            }
        };
        if let Some(l) = &loaded {
            if l.records.len() != geo.len() {
                return Err(Error::DimensionMismatch {
                    expected: geo.len(),
                    actual: l.records.len(),
                });
            }
        }
        Ok((geo, cfg, loaded))
    } else {
        let cfg = single_config(common, data, Some(kmeans))?;
        let loaded = io::read_manifest(manifest_path(&cfg)?)?;
        let geo = geometry_for(&loaded.records, &cfg.methods[0], &cfg)?;
        Ok((geo, cfg, Some(loaded)))
    }
}

fn distinct_labels(loaded: Option<&io::LoadedManifest>) -> Option<usize> {
    let l = loaded?;
    let labels: Option<Vec<&str>> = l.records.iter().map(|r| r.label.as_deref()).collect();
    Some(encode_labels(&labels?).1.len())
}

fn cluster(common: &Common, a: ClusterArgs) -> Result<()> {
    let (geo, cfg, loaded) = load_geometry(common, a.gram.as_deref(), &a.data, &a.kmeans)?;
    let k = cfg
        .k
        .or_else(|| distinct_labels(loaded.as_ref()))
        .ok_or_else(|| Error::Config("-k is required when the data are unlabeled".into()))?;
    let opts = KmeansOptions::new(k).restarts(cfg.restarts).seed(cfg.seed).max_iter(cfg.max_iter);
    let outcome = lloyd(&geo, &opts)?;
    let best = &outcome.best;
    if let Some(out) = &common.out {
        io::write_partition(&out.join("partition.json"), best)?;
        io::write_json(&out.join("restarts.json"), &outcome.restarts)?;
        let labels: Vec<Option<String>> = match &loaded {
            Some(l) => l.records.iter().map(|r| r.label.clone()).collect(),
            None => vec![None; best.len()],
        };
        let paths = loaded.as_ref().map(|l| l.paths.as_slice());
        io::write_assignments_csv(&out.join("assignments.csv"), best, &labels, paths)?;
    }
    print_json(&json!({
        "K": best.k, "wcss": best.wcss, "sizes": best.sizes(),
        "restart": best.restart, "n_iterations": best.n_iterations, "converged": best.converged,
    }))
}

fn score(common: &Common, a: ScoreArgs) -> Result<()> {
    let part = io::read_partition(&a.partition)?;
    let loaded = io::read_manifest(&a.manifest)?;
    let labels: Vec<&str> = loaded
        .records
        .iter()
        .map(|r| r.label.as_deref().ok_or_else(|| Error::Input("every manifest entry needs a label".into())))
        .collect::<Result<_>>()?;
    let truth = encode_labels(&labels).0;
    let result = json!({
        "n": truth.len(), "K": part.k,
        "accuracy": accuracy(&part.assignments, &truth)?,
        "ari": adjusted_rand_index(&part.assignments, &truth)?,
    });
    if let Some(out) = &common.out {
        io::write_json(out, &result)?;
    }
    print_json(&result)
}

fn criteria(names: &Option<Vec<String>>) -> Result<Option<Vec<Criterion>>> {
    names.as_ref().map(|v| v.iter().map(|s| s.parse()).collect()).transpose()
}

fn select_k(common: &Common, a: SelectKArgs) -> Result<()> {
    let crit = criteria(&a.criteria)?;
    if a.gram.is_none() && a.data.manifest.is_none() {
        // Monte Carlo mode
        let base = match &a.preset {
            Some(p) => match serde_json::to_value(ExperimentConfig::preset(p)?)? {
                Value::Object(m) => m,
                _ => unreachable!(),
            },
            None => Map::new(),
        };
        let mut flags = kmeans_flags(&a.kmeans);
        flags.push(("replications", a.replications.map(|v| json!(v))));
        if let Some(m) = &a.data.method {
            flags.push(("methods", Some(json!([m.parse::<Method>()?]))));
        }
        let mut cfg = experiment_config(common, base, flags)?;
        let mut ks = cfg.k_selection.clone().unwrap_or_default();
        if let Some(r) = &a.k_range {
            ks.k_range = r.clone();
        }
        if let Some(c) = crit {
            ks.criteria = c;
        }
        cfg.k_selection = Some(ks);
        cfg.validate()?;
        let rep = run_k_selection(&cfg)?;
        println!("param,method,criterion,K,proportion");
        for r in &rep.proportions {
            println!("{},{},{},{},{:.2}", r.param, r.method, r.criterion.name(), r.k, r.proportion);
        }
        return Ok(());
    }
    let (geo, cfg, _) = load_geometry(common, a.gram.as_deref(), &a.data, &a.kmeans)?;
    let ks = cfg.k_selection.clone().unwrap_or_default();
    let k_range = a.k_range.unwrap_or(ks.k_range);
    let criteria = crit.unwrap_or(ks.criteria);
    let parts = select_k_partitions(&geo, &cfg, &k_range, cfg.seed)?;
    let mut selections = Vec::new();
    for c in criteria {
        let scores = parts
            .iter()
            .map(|(k, p)| Ok((*k, c.score(&geo, p)?)))
            .collect::<Result<Vec<_>>>()?;
        let chosen = scores[best_of(c, &scores)].0;
        selections.push(KSelection { criterion: c, chosen, scores });
    }
    if let Some(out) = &common.out {
        let rows: Vec<_> = selections.iter().flat_map(|s| s.rows(0)).collect();
        std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        io::write_scores(&out.join("scores.csv"), &out.join("scores.json"), &rows)?;
    }
    for s in &selections {
        println!("{}: K = {}", s.criterion.name(), s.chosen);
    }
    Ok(())
}

fn run(common: &Common, a: RunArgs) -> Result<()> {
    let base = match &a.preset {
        Some(p) => match serde_json::to_value(ExperimentConfig::preset(p)?)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        },
        None if common.config.is_none() => return Err(Error::Config("give --preset or --config".into())),
        None => Map::new(),
    };
    let mut flags = kmeans_flags(&a.kmeans);
    flags.push(("replications", a.replications.map(|v| json!(v))));
    flags.push(("cache_dir", a.cache_dir.as_ref().map(|v| json!(v))));
    let cfg = experiment_config(common, base, flags)?;
    let rep = run_experiment(&cfg)?;
    print!("{}", rep.table.wide_accuracy());
    if !rep.failures.is_empty() {
        eprintln!("{} replication(s) failed; see failures.json", rep.failures.len());
    }
    Ok(())
}

fn report(common: &Common, a: ReportArgs) -> Result<()> {
    let table = report_from_dir(&a.dir)?;
    let out = common.out.clone().unwrap_or_else(|| a.dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    io::write_csv_rows(&out.join("results.csv"), &table.rows)?;
    std::fs::write(out.join("accuracy_table.csv"), table.wide_accuracy()).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    print!("{}", table.wide_accuracy());
    Ok(())
}
