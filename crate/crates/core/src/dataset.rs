//! Dataset manifests, CSV ingestion, standardisation and train/test splits.
//!
//! A dataset is two headerless CSV files (features `n × d`, labels `n × q`)
//! described by a TOML manifest:
//!
//! ```toml
//! name = "yeast-alpha"
//! features_path = "features.csv"   # relative to the manifest's directory
//! labels_path = "labels.csv"
//! n = 2465
//! d = 24
//! q = 18
//! checksum = "9f2c0e4b1a7d3c55"    # optional; recorded on first load
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IldlError, Result};
use crate::model::{InstanceMatrix, LabelDistributionMatrix};
use crate::noise::{self, NoiseConfig, NoiseDraw};

/// Row sums further than this from 1 are not rescaled by `renormalize_labels`.
pub const RENORMALIZE_MAX_DRIFT: f64 = 1e-3;

/// Random stream used for shuffling rows.
pub const STREAM_SPLIT: u64 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub features_path: PathBuf,
    pub labels_path: PathBuf,
    pub n: usize,
    pub d: usize,
    pub q: usize,
    /// Hex-encoded 64-bit checksum of the two data files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    /// Rescale label rows whose sums drift from 1 by rounding in the source
    /// files (at most `RENORMALIZE_MAX_DRIFT`).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub renormalize_labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionRecord>,
    /// Directory relative paths are resolved against; not serialised.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Provenance of a corrupted label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub source: String,
    pub pi: f64,
    pub seed: u64,
    /// Hex checksum of the corrupted label file alone.
    pub omega_checksum: String,
    pub total_flips: usize,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| IldlError::Parse {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| IldlError::Parse {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn features_file(&self) -> PathBuf {
        self.base_dir.join(&self.features_path)
    }

    pub fn labels_file(&self) -> PathBuf {
        self.base_dir.join(&self.labels_path)
    }

    /// Checksum of the current file contents.
    pub fn compute_checksum(&self) -> Result<u64> {
        let mut h = Sha256::new();
        h.update(fs::read(self.features_file())?);
        h.update(fs::read(self.labels_file())?);
        Ok(digest_u64(h))
    }
}

/// First 8 bytes of a SHA-256 digest, big-endian.
fn digest_u64(h: Sha256) -> u64 {
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_be_bytes(b)
}

pub fn checksum_bytes(bytes: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(bytes);
    digest_u64(h)
}

pub fn format_checksum(c: u64) -> String {
    format!("{c:016x}")
}

pub fn parse_checksum(s: &str) -> Result<u64> {
    u64::from_str_radix(s.trim(), 16).map_err(|_| IldlError::Parse {
        source_name: "manifest".into(),
        message: format!("checksum {s:?} is not a 64-bit hex value"),
    })
}

/// Reads a headerless numeric CSV file.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(&name, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&name, e))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(IldlError::Parse {
                    source_name: name,
                    message: format!("line {}: {} fields, expected {c}", i + 1, record.len()),
                })
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IldlError::Parse {
                source_name: name.clone(),
                message: format!("line {}, field {}: {field:?} is not a number", i + 1, j + 1),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| IldlError::Parse { source_name: name, message: "no data rows".into() })?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn csv_error(name: &str, e: csv::Error) -> IldlError {
    IldlError::Parse { source_name: name.to_string(), message: e.to_string() }
}

/// Headerless CSV text with shortest round-trip formatting.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

/// Loaded dataset before feature standardisation.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub x: InstanceMatrix,
    pub d: LabelDistributionMatrix,
    pub checksum: u64,
}

/// Loads and validates the files, enforcing the manifest shapes and checksum.
pub fn load_dataset_raw(manifest: &DatasetManifest) -> Result<RawDataset> {
    let checksum = manifest.compute_checksum()?;
    if let Some(expected) = &manifest.checksum {
        let expected = parse_checksum(expected)?;
        if expected != checksum {
            return Err(IldlError::ChecksumMismatch { name: manifest.name.clone(), expected, actual: checksum });
        }
    }
    let x = read_csv_matrix(&manifest.features_file())?;
    let mut d = read_csv_matrix(&manifest.labels_file())?;
    let check = |what: &str, got: (usize, usize), want: (usize, usize)| {
        if got != want {
            Err(IldlError::InvalidShape(format!(
                "{}: {what} file is {}x{}, manifest declares {}x{}",
                manifest.name, got.0, got.1, want.0, want.1
            )))
        } else {
            Ok(())
        }
    };
    check("features", x.shape(), (manifest.n, manifest.d))?;
    check("labels", d.shape(), (manifest.n, manifest.q))?;
    if manifest.renormalize_labels {
        for mut row in d.row_iter_mut() {
            let s: f64 = row.sum();
            if s.is_finite() && (s - 1.0).abs() <= RENORMALIZE_MAX_DRIFT && s > 0.0 {
                row /= s;
            }
        }
    }
    Ok(RawDataset { x: InstanceMatrix::new(x)?, d: LabelDistributionMatrix::new(d)?, checksum })
}

/// Loads the dataset with every feature z-scored over all rows.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<(InstanceMatrix, LabelDistributionMatrix)> {
    let raw = load_dataset_raw(manifest)?;
    let z = Standardizer::fit(&raw.x).apply(&raw.x)?;
    Ok((z, raw.d))
}

/// Loads the manifest at `path`, writing the checksum back on first load.
pub fn load_manifest_recording(path: &Path) -> Result<(DatasetManifest, RawDataset)> {
    let mut manifest = DatasetManifest::load(path)?;
    let raw = load_dataset_raw(&manifest)?;
    if manifest.checksum.is_none() {
        manifest.checksum = Some(format_checksum(raw.checksum));
        manifest.save(path)?;
    }
    Ok((manifest, raw))
}

/// Per-feature z-score parameters. Constant features are only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &InstanceMatrix) -> Self {
        let v = x.values();
        let n = v.nrows() as f64;
        let mut mean = Vec::with_capacity(v.ncols());
        let mut std = Vec::with_capacity(v.ncols());
        for col in v.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &InstanceMatrix) -> Result<InstanceMatrix> {
        if x.d() != self.mean.len() {
            return Err(IldlError::DimensionMismatch(format!(
                "standardizer fitted on {} features, data has {}",
                self.mean.len(),
                x.d()
            )));
        }
        let v = x.values();
        InstanceMatrix::new(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| (v[(i, j)] - self.mean[j]) / self.std[j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(IldlError::InvalidShape(format!("train fraction must lie in (0, 1), got {train_fraction}")));
        }
        Ok(Self { train_fraction, seed })
    }

    /// Shuffled row indices split at `floor(n * train_fraction)`.
    pub fn indices(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut noise::substream(self.seed, STREAM_SPLIT));
        let cut = (n as f64 * self.train_fraction).floor() as usize;
        let test = idx.split_off(cut);
        (idx, test)
    }
}

#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train: (InstanceMatrix, LabelDistributionMatrix),
    pub test: (InstanceMatrix, LabelDistributionMatrix),
}

pub fn split(x: &InstanceMatrix, d: &LabelDistributionMatrix, spec: &SplitSpec) -> Result<SplitData> {
    if x.n() != d.n() {
        return Err(IldlError::DimensionMismatch(format!("X has {} rows, D has {}", x.n(), d.n())));
    }
    let (train_idx, test_idx) = spec.indices(x.n());
    let train = (x.select_rows(&train_idx)?, d.select_rows(&train_idx)?);
    let test = (x.select_rows(&test_idx)?, d.select_rows(&test_idx)?);
    Ok(SplitData { train_idx, test_idx, train, test })
}

/// Corrupts the dataset behind `manifest` and writes a self-contained copy to
/// `out_dir`: `features.csv`, `omega.csv` and `manifest.toml`.
pub fn write_corrupted_dataset(
    manifest: &DatasetManifest,
    cfg: &NoiseConfig,
    out_dir: &Path,
) -> Result<(DatasetManifest, NoiseDraw)> {
    let raw = load_dataset_raw(manifest)?;
    let (omega, draw) = noise::corrupt(&raw.x, &raw.d, cfg)?;
    fs::create_dir_all(out_dir)?;
    let features_bytes = fs::read(manifest.features_file())?;
    fs::write(out_dir.join("features.csv"), &features_bytes)?;
    let omega_text = matrix_to_csv(omega.values());
    fs::write(out_dir.join("omega.csv"), &omega_text)?;

    let mut h = Sha256::new();
    h.update(&features_bytes);
    h.update(omega_text.as_bytes());
    let out = DatasetManifest {
        name: format!("{}-pi{}-seed{}", manifest.name, cfg.pi, cfg.seed),
        features_path: "features.csv".into(),
        labels_path: "omega.csv".into(),
        n: manifest.n,
        d: manifest.d,
        q: manifest.q,
        checksum: Some(format_checksum(digest_u64(h))),
        renormalize_labels: false,
        corruption: Some(CorruptionRecord {
            source: manifest.name.clone(),
            pi: cfg.pi,
            seed: cfg.seed,
            omega_checksum: format_checksum(checksum_bytes(omega_text.as_bytes())),
            total_flips: draw.total_flips(),
        }),
        base_dir: out_dir.to_path_buf(),
    };
    out.save(&out_dir.join("manifest.toml"))?;
    Ok((out, draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        let spec = SplitSpec::new(0.5, 3).unwrap();
        let (tr, te) = spec.indices(10);
        assert_eq!((tr.len(), te.len()), (5, 5));
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(spec.indices(10), (tr, te));
        assert_eq!(spec.indices(2465).0.len(), 1232);
        assert!(SplitSpec::new(1.0, 0).is_err());
        assert!(SplitSpec::new(0.0, 0).is_err());
    }

    #[test]
    fn checksum_format_round_trips() {
        let c = checksum_bytes(b"abc");
        // SHA-256("abc") begins ba7816bf8f01cfea.
        assert_eq!(format_checksum(c), "ba7816bf8f01cfea");
        assert_eq!(parse_checksum(&format_checksum(c)).unwrap(), c);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2.5e-17, 1e300, 0.0, 7.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv_matrix(&p, &m).unwrap();
        assert_eq!(read_csv_matrix(&p).unwrap(), m);
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let x = InstanceMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&x);
        let z = s.apply(&x).unwrap();
        assert_eq!(z.values().as_slice(), &[-1.0, 1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let (mut tr, te) = SplitSpec::new(frac, seed).unwrap().indices(n);
            prop_assert_eq!(tr.len(), (n as f64 * frac).floor() as usize);
            tr.extend(te);
            tr.sort_unstable();
            prop_assert_eq!(tr, (0..n).collect::<Vec<_>>());
        }
    }
}
