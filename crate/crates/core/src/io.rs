//! On-disk formats.
//!
//! * distribution manifest: `manifest.json` listing `{path, label}` entries,
//!   each pointing to a headerless numeric CSV (one observation per row) or
//!   a mixture JSON `{"components": [{"w", "a", "b"}, …], "label": …}`;
//! * matrix container: 16-byte header (`DGRM`, `u32` n, `u8` mode, `u8`
//!   kernel tag, 6 zero bytes) then `n²` little-endian `f64`, row-major,
//!   with a JSON sidecar carrying the full kernel and the input digest;
//! * partitions as JSON, assignments and score rows as CSV/JSON.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::{DistributionRecord, EmpiricalDistribution, MixtureComponent, Payload, UniformMixture};
use crate::error::{Error, Result};
use crate::gram::{GramMatrix, GramMode};
use crate::kernels::KernelSpec;
use crate::kmeans::Partition;
use crate::validity::ScoreRow;
use crate::wasserstein::DistanceMatrix;

/// File name used for manifests written by this crate.
pub const MANIFEST_NAME: &str = "manifest.json";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Digest of record contents, independent of file layout.
pub fn records_digest(records: &[DistributionRecord]) -> String {
    let mut h = Sha256::new();
    h.update((records.len() as u64).to_le_bytes());
    for r in records {
        match &r.label {
            Some(l) => {
                h.update([1u8]);
                h.update((l.len() as u64).to_le_bytes());
                h.update(l.as_bytes());
            }
            None => h.update([0u8]),
        }
        match &r.payload {
            Payload::Empirical(e) => {
                h.update([0u8]);
                h.update((e.dim() as u64).to_le_bytes());
                h.update((e.len() as u64).to_le_bytes());
                for v in e.as_slice() {
                    h.update(v.to_le_bytes());
                }
            }
            Payload::Mixture(m) => {
                h.update([1u8]);
                h.update((m.components().len() as u64).to_le_bytes());
                for c in m.components() {
                    for v in [c.w, c.a, c.b] {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
    }
    format!("{:x}", h.finalize())
}

// ---------------------------------------------------------------- samples

/// Numeric CSV, one observation per row. A first row that does not parse
/// as numbers is taken as a header.
pub fn read_sample_csv(path: &Path) -> Result<EmpiricalDistribution> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut data = Vec::new();
    let mut dim = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("row {}: {e}", row + 1))),
        };
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(path, format!("row {} has {} columns, expected {d}", row + 1, values.len())))
            }
            _ => {}
        }
        data.extend(values);
    }
    let dim = dim.ok_or_else(|| Error::format(path, "no observations"))?;
    EmpiricalDistribution::new(data, dim).map_err(|e| Error::format(path, e.to_string()))
}

/// Headerless CSV with shortest round-trip float formatting.
pub fn write_sample_csv(path: &Path, sample: &EmpiricalDistribution) -> Result<()> {
    let mut out = String::with_capacity(sample.len() * 12 * sample.dim());
    for row in sample.rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    components: Vec<MixtureComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

pub fn read_mixture_json(path: &Path) -> Result<(UniformMixture, Option<String>)> {
    let f: MixtureFile = read_json(path)?;
    let m = UniformMixture::new(f.components).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, f.label))
}

pub fn write_mixture_json(path: &Path, m: &UniformMixture, label: Option<&str>) -> Result<()> {
    write_json(
        path,
        &MixtureFile {
            components: m.components().to_vec(),
            label: label.map(str::to_string),
        },
    )
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory, or absolute.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Free-form description of how the data were produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Records read through a manifest, with the digest of the manifest file.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub records: Vec<DistributionRecord>,
    pub paths: Vec<PathBuf>,
    pub manifest_sha256: String,
    pub provenance: Option<serde_json::Value>,
}

/// Load every record of a manifest. `.json` entries are mixtures, anything
/// else a CSV sample; a label in the manifest overrides one in the file.
pub fn read_manifest(path: &Path) -> Result<LoadedManifest> {
    let bytes = read_bytes(path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::with_capacity(manifest.entries.len());
    let mut paths = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let p = base.join(&entry.path);
        let is_json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let record = if is_json {
            let (m, label) = read_mixture_json(&p)?;
            DistributionRecord::new(m.into(), entry.label.clone().or(label))
        } else {
            DistributionRecord::new(read_sample_csv(&p)?.into(), entry.label.clone())
        };
        records.push(record);
        paths.push(entry.path.clone());
    }
    Ok(LoadedManifest {
        records,
        paths,
        manifest_sha256: sha256_hex(&bytes),
        provenance: manifest.provenance,
    })
}

/// Write records as `data/rec_#####.{csv,json}` under `dir` plus
/// `dir/manifest.json`; returns the manifest path.
pub fn write_manifest(dir: &Path, records: &[DistributionRecord], provenance: Option<serde_json::Value>) -> Result<PathBuf> {
    let width = records.len().saturating_sub(1).to_string().len().max(5);
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let rel = match &r.payload {
            Payload::Empirical(e) => {
                let rel = PathBuf::from(format!("data/rec_{i:0width$}.csv"));
                write_sample_csv(&dir.join(&rel), e)?;
                rel
            }
            Payload::Mixture(m) => {
                let rel = PathBuf::from(format!("data/rec_{i:0width$}.json"));
                write_mixture_json(&dir.join(&rel), m, r.label.as_deref())?;
                rel
            }
        };
        entries.push(ManifestEntry {
            path: rel,
            label: r.label.clone(),
        });
    }
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &Manifest { entries, provenance })?;
    Ok(path)
}

// ---------------------------------------------------------------- matrices

const MAGIC: &[u8; 4] = b"DGRM";
const HEADER_LEN: usize = 16;
/// Mode byte of a 2-Wasserstein distance matrix.
pub const MODE_WASS: u8 = 2;
/// Kernel byte when no kernel applies.
pub const NO_KERNEL: u8 = 255;

/// What a stored matrix contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Exact,
    Estimated,
    Wass,
}

impl MatrixKind {
    fn byte(self) -> u8 {
        match self {
            MatrixKind::Exact => GramMode::Exact.tag(),
            MatrixKind::Estimated => GramMode::Estimated.tag(),
            MatrixKind::Wass => MODE_WASS,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(MatrixKind::Exact),
            1 => Some(MatrixKind::Estimated),
            MODE_WASS => Some(MatrixKind::Wass),
            _ => None,
        }
    }
}

impl From<GramMode> for MatrixKind {
    fn from(m: GramMode) -> Self {
        match m {
            GramMode::Exact => MatrixKind::Exact,
            GramMode::Estimated => MatrixKind::Estimated,
        }
    }
}

/// JSON stored next to a matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub n: usize,
    pub mode: MatrixKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    /// Wasserstein order and quantile grid, for `wass` matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_sha256: Option<String>,
}

/// A matrix read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Gram(GramMatrix),
    Distance(DistanceMatrix),
}

/// Sidecar path: the matrix path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serialize a matrix to the binary container.
pub fn encode_matrix(n: usize, values: &[f64], kind: MatrixKind, kernel_tag: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(kind.byte());
    out.push(kernel_tag);
    out.extend_from_slice(&[0u8; 6]);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse the binary container into `(n, kind, kernel tag, values)`.
pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<(usize, MatrixKind, u8, Vec<f64>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a DGRM matrix file"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let kind = MatrixKind::from_byte(bytes[8]).ok_or_else(|| Error::format(path, format!("unknown mode byte {}", bytes[8])))?;
    let tag = bytes[9];
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n * n {
        return Err(Error::format(path, format!("expected {} value bytes for n = {n}, found {}", 8 * n * n, body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((n, kind, tag, values))
}

/// Write a Gram matrix and its sidecar.
pub fn write_gram(path: &Path, g: &GramMatrix, manifest_sha256: Option<String>, content_sha256: Option<String>) -> Result<()> {
    write_bytes(path, &encode_matrix(g.n(), g.values(), g.mode().into(), g.kernel().tag()))?;
    write_json(
        &sidecar_path(path),
        &MatrixSidecar {
            n: g.n(),
            mode: g.mode().into(),
            kernel: Some(g.kernel()),
            alpha: None,
            grid: None,
            manifest_sha256,
            content_sha256,
        },
    )
}

/// Write a Wasserstein distance matrix and its sidecar.
pub fn write_distance(
    path: &Path,
    d: &DistanceMatrix,
    alpha: f64,
    grid: usize,
    manifest_sha256: Option<String>,
    content_sha256: Option<String>,
) -> Result<()> {
    write_bytes(path, &encode_matrix(d.n(), d.values(), MatrixKind::Wass, NO_KERNEL))?;
    write_json(
        &sidecar_path(path),
        &MatrixSidecar {
            n: d.n(),
            mode: MatrixKind::Wass,
            kernel: None,
            alpha: Some(alpha),
            grid: Some(grid),
            manifest_sha256,
            content_sha256,
        },
    )
}

/// Read a matrix file; Gram matrices need their sidecar for the kernel.
pub fn read_matrix(path: &Path) -> Result<(StoredMatrix, Option<MatrixSidecar>)> {
    let (n, kind, tag, values) = decode_matrix(path, &read_bytes(path)?)?;
    let side_path = sidecar_path(path);
    let sidecar: Option<MatrixSidecar> = if side_path.exists() { Some(read_json(&side_path)?) } else { None };
    if let Some(s) = &sidecar {
        if s.n != n || s.mode != kind {
            return Err(Error::format(&side_path, "sidecar does not match the matrix header"));
        }
    }
    let matrix = match kind {
        MatrixKind::Wass => StoredMatrix::Distance(DistanceMatrix::from_values(n, values)?),
        MatrixKind::Exact | MatrixKind::Estimated => {
            let kernel = sidecar
                .as_ref()
                .and_then(|s| s.kernel)
                .ok_or_else(|| Error::format(&side_path, "Gram sidecar with the kernel is missing"))?;
            if kernel.tag() != tag {
                return Err(Error::format(path, "kernel tag disagrees with sidecar"));
            }
            let mode = if kind == MatrixKind::Exact { GramMode::Exact } else { GramMode::Estimated };
            StoredMatrix::Gram(GramMatrix::from_values(n, values, mode, kernel)?)
        }
    };
    Ok((matrix, sidecar))
}

/// Square matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 20);
    for row in values.chunks(n.max(1)) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

// ---------------------------------------------------------------- results

pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    write_json(path, p)
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let p: Partition = read_json(path)?;
    crate::kmeans::validate_labels(&p.assignments, p.k).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(p)
}

#[derive(Serialize)]
struct AssignmentRow<'a> {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a Path>,
    label: Option<&'a str>,
    cluster: usize,
}

/// One row per item in manifest order: `index,path,label,cluster` (`path`
/// only when given).
pub fn write_assignments_csv(path: &Path, p: &Partition, labels: &[Option<String>], paths: Option<&[PathBuf]>) -> Result<()> {
    if labels.len() != p.len() || paths.is_some_and(|ps| ps.len() != p.len()) {
        return Err(Error::Input("labels/paths do not match the partition length".into()));
    }
    let rows = (0..p.len()).map(|i| AssignmentRow {
        index: i,
        path: paths.map(|ps| ps[i].as_path()),
        label: labels[i].as_deref(),
        cluster: p.assignments[i],
    });
    write_csv_rows(path, rows)
}

/// Serialize rows to CSV with a header.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deserialize CSV rows with a header.
pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rdr.deserialize().map(|r| r.map_err(|e| Error::format(path, e.to_string()))).collect()
}

pub fn write_scores(csv_path: &Path, json_path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_csv_rows(csv_path, rows)?;
    write_json(json_path, rows)
}
