//! Dataset ingestion: MNIST IDX parsing, binary digit selection, PCA to a few
//! components, stratified splitting, JSON persistence, and synthetic blobs.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Standardized PCA coordinates are multiplied by this many radians.
pub const DEFAULT_ANGLE_FACTOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// −1 or +1.
    pub label: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    All,
    Train,
    Test,
}

/// Principal axes of the pixel data plus the per-dimension scaling that turns
/// projections into angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// k rows of length 784, orthonormal.
    pub basis: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Covariance eigenvalues of the retained components, descending.
    pub explained_variance: Vec<f64>,
    /// Multipliers applied after projection: angle_factor / std of each component.
    pub scale: Vec<f64>,
    pub angle_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    pub split: SplitTag,
    pub samples: Vec<Sample>,
    pub pca: Option<PcaModel>,
    pub provenance: Provenance,
    /// Positions in `samples` forming the training split; empty when unsplit.
    #[serde(default)]
    pub train_indices: Vec<usize>,
}

pub fn digit_to_label(digit: u8, digits: (u8, u8)) -> Result<i8> {
    if digit == digits.0 {
        Ok(-1)
    } else if digit == digits.1 {
        Ok(1)
    } else {
        Err(Error::Domain(format!(
            "digit {digit} is not one of {digits:?}"
        )))
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                offset: 0,
                msg: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            msg: format!("truncated header while reading {what}"),
        })
}

/// Decode an IDX image file and its label file; either may be gzip-compressed.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Vec<RawImage>> {
    let images = maybe_gunzip(image_bytes)?;
    let labels = maybe_gunzip(label_bytes)?;

    let magic = read_u32(&images, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n_images = read_u32(&images, 4, "image count")? as usize;
    let rows = read_u32(&images, 8, "row count")? as usize;
    let cols = read_u32(&images, 12, "column count")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Format {
            offset: 8,
            msg: format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        });
    }
    let need = 16 + n_images * IMAGE_PIXELS;
    if images.len() < need {
        return Err(Error::Format {
            offset: images.len(),
            msg: format!("image data truncated: {} of {need} bytes", images.len()),
        });
    }

    let magic = read_u32(&labels, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n_labels = read_u32(&labels, 4, "label count")? as usize;
    if n_labels != n_images {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{n_labels} labels for {n_images} images"),
        });
    }
    if labels.len() < 8 + n_labels {
        return Err(Error::Format {
            offset: labels.len(),
            msg: format!(
                "label data truncated: {} of {} bytes",
                labels.len(),
                8 + n_labels
            ),
        });
    }

    Ok((0..n_images)
        .map(|i| RawImage {
            pixels: images[16 + i * IMAGE_PIXELS..16 + (i + 1) * IMAGE_PIXELS].to_vec(),
            label: labels[8 + i],
        })
        .collect())
}

/// Serialize images and labels in the IDX layout (uncompressed).
pub fn write_idx(images: &[RawImage]) -> Result<(Vec<u8>, Vec<u8>)> {
    let n = u32::try_from(images.len()).map_err(|_| Error::Domain("too many images".into()))?;
    let mut img = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    img.extend(IMAGE_MAGIC.to_be_bytes());
    img.extend(n.to_be_bytes());
    img.extend((IMAGE_SIDE as u32).to_be_bytes());
    img.extend((IMAGE_SIDE as u32).to_be_bytes());
    let mut lab = Vec::with_capacity(8 + images.len());
    lab.extend(LABEL_MAGIC.to_be_bytes());
    lab.extend(n.to_be_bytes());
    for im in images {
        if im.pixels.len() != IMAGE_PIXELS {
            return Err(Error::Shape(format!(
                "image with {} pixels",
                im.pixels.len()
            )));
        }
        img.extend(&im.pixels);
        lab.push(im.label);
    }
    Ok((img, lab))
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<Vec<RawImage>> {
    let a = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let b = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    parse_idx(&a, &b)
}

/// Random, class-balanced choice of `count` images showing either digit;
/// the first digit receives the extra image when `count` is odd. The result
/// keeps the input order.
pub fn select_binary_subset(
    images: &[RawImage],
    digits: (u8, u8),
    count: usize,
    seed: u64,
) -> Result<Vec<RawImage>> {
    if digits.0 == digits.1 {
        return Err(Error::Domain("the two digits must differ".into()));
    }
    let want = [count - count / 2, count / 2];
    let mut rng = seeded(seed);
    let mut chosen = BTreeSet::new();
    for (d, &k) in [digits.0, digits.1].iter().zip(&want) {
        let mut idx: Vec<usize> = (0..images.len())
            .filter(|&i| images[i].label == *d)
            .collect();
        if idx.len() < k {
            return Err(Error::Domain(format!(
                "need {k} images of digit {d}, found {}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        chosen.extend(idx.into_iter().take(k));
    }
    Ok(chosen.into_iter().map(|i| images[i].clone()).collect())
}

/// Plain principal components: basis rows are unit eigenvectors of the
/// sample covariance, largest eigenvalue first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub basis: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Top-k principal axes of `rows`. When there are fewer rows than columns the
/// eigenproblem is solved on the N×N Gram matrix and mapped back.
pub fn fit_pca(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Domain("PCA needs at least two rows".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA rows of unequal length".into()));
    }
    if k == 0 || k > d.min(n - 1) {
        return Err(Error::Domain(format!(
            "cannot keep {k} components of {n} rows in {d} dims"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let xc = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n < d {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let mut vals = Vec::with_capacity(k);
        let mut vecs = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let lam = eig.eigenvalues[i];
            if lam <= 0.0 {
                return Err(Error::Domain(format!(
                    "only {} non-zero components",
                    vals.len()
                )));
            }
            let v = xc.transpose() * eig.eigenvectors.column(i) / lam.sqrt();
            vals.push(lam / denom);
            vecs.push(v.iter().copied().collect());
        }
        (vals, vecs)
    } else {
        let cov = xc.transpose() * &xc / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        let vals = order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect();
        let vecs = order
            .iter()
            .take(k)
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (vals, vecs)
    };

    let top = values[0].abs().max(f64::MIN_POSITIVE);
    if let Some(pos) = values.iter().position(|&v| v <= 1e-12 * top) {
        return Err(Error::Domain(format!(
            "data has rank {pos}, cannot keep {k} components"
        )));
    }
    let basis = vectors.into_iter().map(fix_sign).collect();
    Ok(Pca {
        basis,
        mean,
        eigenvalues: values,
    })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Flip so the largest-magnitude entry (first on ties) is positive.
fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// basis · (row − mean)
pub fn project_raw(basis: &[Vec<f64>], mean: &[f64], row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != mean.len() {
        return Err(Error::Shape(format!(
            "row of length {}, mean of {}",
            row.len(),
            mean.len()
        )));
    }
    Ok(basis
        .iter()
        .map(|b| {
            b.iter()
                .zip(row)
                .zip(mean)
                .map(|((bi, x), m)| bi * (x - m))
                .sum()
        })
        .collect())
}

pub fn pixels_to_unit(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
}

/// Scaled features of one image under a fitted model.
pub fn project(model: &PcaModel, image: &RawImage) -> Result<Vec<f64>> {
    let raw = project_raw(&model.basis, &model.mean, &pixels_to_unit(&image.pixels))?;
    Ok(raw.iter().zip(&model.scale).map(|(v, s)| v * s).collect())
}

/// PCA on pixels/255 followed by per-component standardization to unit
/// variance, times `angle_factor` radians.
pub fn fit_pca_model(images: &[RawImage], k: usize, angle_factor: f64) -> Result<PcaModel> {
    let rows: Vec<Vec<f64>> = images.iter().map(|im| pixels_to_unit(&im.pixels)).collect();
    let pca = fit_pca(&rows, k)?;
    let scale = pca
        .eigenvalues
        .iter()
        .map(|v| angle_factor / v.sqrt())
        .collect();
    Ok(PcaModel {
        basis: pca.basis,
        mean: pca.mean,
        explained_variance: pca.eigenvalues,
        scale,
        angle_factor,
    })
}

/// Selection, PCA and labelling of a binary MNIST subset. Digit `digits.0`
/// maps to −1 and `digits.1` to +1.
pub fn prepare_mnist(
    images: &[RawImage],
    digits: (u8, u8),
    count: usize,
    components: usize,
    seed: u64,
    source: &str,
) -> Result<Dataset> {
    let chosen = select_binary_subset(images, digits, count, seed)?;
    let model = fit_pca_model(&chosen, components, DEFAULT_ANGLE_FACTOR)?;
    let samples = chosen
        .iter()
        .map(|im| {
            Ok(Sample {
                features: project(&model, im)?,
                label: digit_to_label(im.label, digits)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        schema_version: DATASET_SCHEMA_VERSION,
        split: SplitTag::All,
        samples,
        pca: Some(model),
        provenance: Provenance {
            source: source.to_string(),
            seed,
        },
        train_indices: Vec::new(),
    })
}

/// Label-stratified train indices: round(fraction·m_c) of each class, chosen
/// at random, returned in ascending order.
pub fn split_indices(samples: &[Sample], train_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Domain(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    for label in [-1i8, 1] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == label)
            .collect();
        let k = (train_fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut rng);
        train.extend(idx.into_iter().take(k));
    }
    train.sort_unstable();
    Ok(train)
}

pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut with = data.clone();
    with.train_indices = split_indices(&data.samples, train_fraction, seed)?;
    Ok((with.subset(SplitTag::Train)?, with.subset(SplitTag::Test)?))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let minus = self.samples.iter().filter(|s| s.label < 0).count();
        (minus, self.samples.len() - minus)
    }

    pub fn require_both_labels(&self) -> Result<()> {
        let (m, p) = self.class_counts();
        if m == 0 || p == 0 {
            return Err(Error::Domain(format!(
                "need both labels, found {m} negative and {p} positive"
            )));
        }
        Ok(())
    }

    /// The train or test part according to `train_indices`; `All` returns a copy.
    pub fn subset(&self, tag: SplitTag) -> Result<Dataset> {
        let train: BTreeSet<usize> = self.train_indices.iter().copied().collect();
        if train.iter().any(|&i| i >= self.samples.len()) {
            return Err(Error::Schema("train index out of range".into()));
        }
        let keep = |i: usize| match tag {
            SplitTag::All => true,
            SplitTag::Train => train.contains(&i),
            SplitTag::Test => !train.contains(&i),
        };
        Ok(Dataset {
            split: tag,
            samples: (0..self.samples.len())
                .filter(|&i| keep(i))
                .map(|i| self.samples[i].clone())
                .collect(),
            train_indices: Vec::new(),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Version {
                found: self.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let dim = self.feature_dim();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label != 1 && s.label != -1 {
                return Err(Error::Schema(format!("sample {i} has label {}", s.label)));
            }
            if s.features.len() != dim {
                return Err(Error::Schema(format!(
                    "sample {i} has {} features",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "sample {i} has a non-finite feature"
                )));
            }
        }
        let unique: BTreeSet<usize> = self.train_indices.iter().copied().collect();
        if unique.len() != self.train_indices.len()
            || unique.iter().any(|&i| i >= self.samples.len())
        {
            return Err(Error::Schema(
                "train_indices must be distinct and in range".into(),
            ));
        }
        Ok(())
    }
}

pub fn dataset_to_json(data: &Dataset) -> Result<String> {
    serde_json::to_string_pretty(data).map_err(|e| Error::Schema(e.to_string()))
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("not valid JSON: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if version != u64::from(DATASET_SCHEMA_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    let data: Dataset = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_json(data)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_json(&text)
}

/// Two isotropic unit-variance Gaussian blobs in `dim` dimensions whose means
/// sit at ∓separation/2 along the first axis. Negative class first.
pub fn synthetic_dataset_dim(
    n_per_class: usize,
    separation: f64,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Domain(format!(
            "separation {separation} must be finite and ≥ 0"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    let mut rng = seeded(seed);
    let mut samples = Vec::with_capacity(2 * n_per_class);
    for label in [-1i8, 1] {
        for _ in 0..n_per_class {
            let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            x[0] += f64::from(label) * separation / 2.0;
            samples.push(Sample { features: x, label });
        }
    }
    Ok(Dataset {
        schema_version: DATASET_SCHEMA_VERSION,
        split: SplitTag::All,
        samples,
        pca: None,
        provenance: Provenance {
            source: format!(
                "synthetic gaussian blobs, {n_per_class} per class, separation {separation}"
            ),
            seed,
        },
        train_indices: Vec::new(),
    })
}

pub fn synthetic_dataset(n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    synthetic_dataset_dim(n_per_class, separation, 5, seed)
}

/// Rows of `f1,…,fk,label` with label −1/+1; a non-numeric first row is
/// treated as a header.
pub fn import_csv<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format {
            offset: line,
            msg: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Format {
                    offset: line,
                    msg: format!("row {line}: {e}"),
                })
            }
        };
        if values.len() < 2 {
            return Err(Error::Format {
                offset: line,
                msg: format!("row {line} needs features and a label"),
            });
        }
        let (features, label) = values.split_at(values.len() - 1);
        let label = match label[0] {
            1.0 => 1,
            -1.0 => -1,
            l => {
                return Err(Error::Format {
                    offset: line,
                    msg: format!("row {line}: label {l} is not ±1"),
                })
            }
        };
        samples.push(Sample {
            features: features.to_vec(),
            label,
        });
    }
    let data = Dataset {
        schema_version: DATASET_SCHEMA_VERSION,
        split: SplitTag::All,
        samples,
        pca: None,
        provenance: Provenance {
            source: source.to_string(),
            seed: 0,
        },
        train_indices: Vec::new(),
    };
    data.validate()?;
    Ok(data)
}
