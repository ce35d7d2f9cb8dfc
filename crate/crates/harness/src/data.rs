//! Feature matrices on disk and synthetic blob datasets.
//!
//! Two on-disk formats are accepted. CSV has a header row and one point per
//! line; a column named `label` (if present) holds integer class labels and
//! every other column is a feature. The binary format is
//! `b"FKMX" | u32 version | u64 rows | u64 cols | rows·cols f64`, all little
//! endian, row-major. Binary files carry no labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use firal_core::numkit::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"FKMX";
pub const BINARY_VERSION: u32 = 1;
const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `1 + max label`, or `None` without labels.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes().unwrap_or(0)];
        for &y in self.labels.iter().flatten() {
            counts[y] += 1;
        }
        counts
    }
}

/// Picks the format from the extension: `.csv` is CSV, anything else is
/// binary.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if is_csv(path) {
        load_csv(path)
    } else {
        Ok(Dataset {
            features: load_binary(path)?,
            labels: None,
        })
    }
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    if is_csv(path) {
        save_csv(path, data)
    } else {
        save_binary(path, &data.features)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_col = headers.iter().position(|h| h.trim() == LABEL_COLUMN);
    let ncols = headers.len() - usize::from(label_col.is_some());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        // header is line 1
        let line = line + 2;
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if Some(j) == label_col {
                let y = field.parse::<usize>().map_err(|_| {
                    HarnessError::data(path, format!("line {line}: bad label `{field}`"))
                })?;
                labels.push(y);
            } else {
                let v = field.parse::<f64>().map_err(|_| {
                    HarnessError::data(path, format!("line {line}: bad number `{field}`"))
                })?;
                data.push(v);
            }
        }
    }
    let nrows = if ncols == 0 { 0 } else { data.len() / ncols };
    let features = Matrix::from_vec(nrows, ncols, data)
        .map_err(|e| HarnessError::data(path, e.to_string()))?;
    Ok(Dataset {
        features,
        labels: label_col.map(|_| labels),
    })
}

pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    if data.labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..data.len() {
        // `{}` on f64 prints the shortest string that parses back exactly
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => return HarnessError::io(path, io),
            _ => unreachable!("is_io_error checked"),
        }
    }
    HarnessError::data(path, e.to_string())
}

pub fn save_binary(path: &Path, m: &Matrix) -> Result<()> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| HarnessError::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&BINARY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_binary(path: &Path) -> Result<Matrix> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    let short = |_| HarnessError::data(path, "truncated header");
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != BINARY_MAGIC {
        return Err(HarnessError::data(path, "missing FKMX magic"));
    }
    r.read_exact(&mut u32b).map_err(short)?;
    let version = u32::from_le_bytes(u32b);
    if version != BINARY_VERSION {
        return Err(HarnessError::data(
            path,
            format!("unsupported version {version}"),
        ));
    }
    r.read_exact(&mut u64b).map_err(short)?;
    let rows = u64::from_le_bytes(u64b) as usize;
    r.read_exact(&mut u64b).map_err(short)?;
    let cols = u64::from_le_bytes(u64b) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| HarnessError::data(path, "shape overflows"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| HarnessError::io(path, e))?;
    if bytes.len() != count * 8 {
        return Err(HarnessError::data(
            path,
            format!(
                "expected {} payload bytes for {rows}x{cols}, found {}",
                count * 8,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| HarnessError::data(path, e.to_string()))
}

/// Integer labels, one per line (blank lines ignored).
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                HarnessError::data(path, format!("line {}: bad label `{}`", i + 1, l.trim()))
            })
        })
        .collect()
}

/// Gaussian blobs around unit-norm class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Size of the smallest class.
    pub points_per_class: usize,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
    /// Largest over smallest class count, exactly.
    pub imbalance: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 5,
            points_per_class: 100,
            spread: 0.4,
            imbalance: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(HarnessError::config(
                "synthetic.classes",
                "need at least 2 classes",
            ));
        }
        if self.dim == 0 {
            return Err(HarnessError::config("synthetic.dim", "must be at least 1"));
        }
        if self.points_per_class == 0 {
            return Err(HarnessError::config(
                "synthetic.points_per_class",
                "must be at least 1",
            ));
        }
        if !(self.spread >= 0.0 && self.spread <= 1.0) {
            return Err(HarnessError::config(
                "synthetic.spread",
                "must lie in [0, 1] so unit-norm means can sit 2·spread apart",
            ));
        }
        if self.imbalance == 0 {
            return Err(HarnessError::config(
                "synthetic.imbalance",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    /// Class sizes from `imbalance · m` down to `m`, geometrically spaced.
    pub fn class_counts(&self) -> Vec<usize> {
        let m = self.points_per_class;
        let r = self.imbalance as f64;
        let last = (self.classes - 1) as f64;
        (0..self.classes)
            .map(|k| {
                if k == 0 {
                    m * self.imbalance
                } else if k == self.classes - 1 {
                    m
                } else {
                    let f = r.powf((last - k as f64) / last);
                    ((m as f64 * f).round() as usize).clamp(m, m * self.imbalance)
                }
            })
            .collect()
    }
}

const MEAN_ATTEMPTS: usize = 10_000;

/// Draws unit-norm class means pairwise at least `2·spread` apart, then
/// Gaussian points around each. Points come out shuffled.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = draw_means(&mut rng, spec)?;
    let noise = Normal::new(0.0, spec.spread).expect("spread validated");
    let counts = spec.class_counts();
    let mut order: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    order.shuffle(&mut rng);
    let mut data = Vec::with_capacity(order.len() * spec.dim);
    for &k in &order {
        for &mu in &means[k] {
            data.push(mu + noise.sample(&mut rng));
        }
    }
    Ok(Dataset {
        features: Matrix::from_vec(order.len(), spec.dim, data).expect("shape by construction"),
        labels: Some(order),
    })
}

fn draw_means(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    let gap = 2.0 * spec.spread;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut attempts = 0;
    while means.len() < spec.classes {
        attempts += 1;
        if attempts > MEAN_ATTEMPTS {
            return Err(HarnessError::config(
                "synthetic.spread",
                format!(
                    "could not place {} unit-norm means {gap} apart in dimension {}",
                    spec.classes, spec.dim
                ),
            ));
        }
        let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let far = means.iter().all(|m| {
            m.iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= gap
        });
        if far {
            means.push(v);
        }
    }
    Ok(means)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            classes: 2,
            dim: 2,
            points_per_class: 10,
            ..Default::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
    }

    #[test]
    fn unit_ratio_gives_equal_counts() {
        let spec = SyntheticSpec {
            classes: 4,
            points_per_class: 7,
            ..Default::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap().class_counts(),
            vec![7; 4]
        );
    }

    #[test]
    fn imbalance_ratio_is_exact() {
        let spec = SyntheticSpec {
            classes: 3,
            points_per_class: 5,
            imbalance: 10,
            ..Default::default()
        };
        let counts = generate_synthetic(&spec).unwrap().class_counts();
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        assert_eq!(hi, 10 * lo);
        assert_eq!(counts, vec![50, 16, 5]);
    }

    #[test]
    fn impossible_separation_is_a_config_error() {
        // only ±1 exist in one dimension
        let spec = SyntheticSpec {
            classes: 3,
            dim: 1,
            spread: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn zero_spread_puts_points_on_means() {
        let spec = SyntheticSpec {
            spread: 0.0,
            points_per_class: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for i in 0..ds.len() {
            let n: f64 = ds.features.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
