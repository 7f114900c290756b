//! Experiment runner: config handling, the six subcommands and the output
//! bundle (stamped JSON/CSV files plus a digest manifest).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, SplitTag};
use crate::dqc1::{plan_shots, Estimator};
use crate::embedder::{
    init_params_with_gain, Embedding, MlpParams, DEFAULT_LAYER_SIZES, DEFAULT_OUTPUT_GAIN,
};
use crate::error::{Error, Result};
use crate::featuremap::FeatureMapConfig;
use crate::metrics::{self, CheckpointStats};
use crate::nqe::{self, NqeTrainConfig};
use crate::pqc::{self, PqcParams, PqcTrainConfig};
use crate::rng::derive_seed;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const LOG_ENV: &str = "NQE_DQC1_LOG";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_OUTPUT_DIR: &str = "out";

const STAGE_SELECT: u64 = 0;
const STAGE_SPLIT: u64 = 1;
const STAGE_INIT: u64 = 2;
const STAGE_NQE: u64 = 3;
const STAGE_SEPARABILITY: u64 = 4;
const STAGE_PQC: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Gzipped or plain IDX files; relative paths resolve against the config file.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_digits")]
        digits: [u8; 2],
    },
    Synthetic {
        n_per_class: usize,
        separation: f64,
    },
    /// Five feature columns and a ±1 label column.
    Csv {
        path: PathBuf,
    },
}

fn default_digits() -> [u8; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Images drawn from the IDX files (ignored for other sources).
    pub count: usize,
    pub components: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic {
                n_per_class: 50,
                separation: 3.0,
            },
            count: 500,
            components: 5,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub layer_sizes: Vec<usize>,
    pub output_gain: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            output_gain: DEFAULT_OUTPUT_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparabilityConfig {
    /// Cross-class pairs per split.
    pub pairs: usize,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        Self { pairs: 20 }
    }
}

/// Stage seeds inside `nqe` and `pqc` are ignored; every stage derives its
/// own seed from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Relative to the working directory.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub feature_map: FeatureMapConfig,
    pub embedder: EmbedderConfig,
    pub nqe: NqeTrainConfig,
    pub pqc: PqcTrainConfig,
    pub separability: SeparabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            output_dir: None,
            data: DataConfig::default(),
            feature_map: FeatureMapConfig::default(),
            embedder: EmbedderConfig::default(),
            nqe: NqeTrainConfig::default(),
            pqc: PqcTrainConfig::default(),
            separability: SeparabilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub estimator: Option<EstimatorMode>,
    pub shots: Option<u64>,
}

/// A validated config plus the directory its relative data paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let exp = Self {
            config,
            base_dir: base_dir.into(),
        };
        exp.validate()?;
        Ok(exp)
    }

    /// Defaults when `path` is `None`; `--config` is the flag named on a missing file.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (mut config, base_dir) = match path {
            None => (ExperimentConfig::default(), PathBuf::from(".")),
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::MissingFile {
                        flag: "--config".into(),
                        path: p.to_path_buf(),
                    });
                }
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let config: ExperimentConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, base)
            }
        };
        apply_overrides(&mut config, overrides)?;
        Self::from_config(config, base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Version {
                found: c.schema_version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        c.feature_map
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        c.nqe.validate()?;
        c.pqc.validate()?;
        if c.separability.pairs == 0 {
            return Err(Error::Config("separability.pairs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&c.data.train_fraction) {
            return Err(Error::Config(format!(
                "train_fraction {}",
                c.data.train_fraction
            )));
        }
        let angles = c.feature_map.n_angles();
        match c.embedder.layer_sizes.as_slice() {
            [first, .., last] if *first == c.data.components && *last == angles => {}
            sizes => {
                return Err(Error::Config(format!(
                    "embedder layer_sizes {sizes:?} must run from {} inputs to {angles} outputs",
                    c.data.components
                )))
            }
        }
        match &c.data.source {
            DataSource::Mnist {
                images,
                labels,
                digits,
            } => {
                if digits[0] == digits[1] || digits.iter().any(|&d| d > 9) {
                    return Err(Error::Config(format!("digits {digits:?}")));
                }
                self.require_file("data.source.images", images)?;
                self.require_file("data.source.labels", labels)?;
            }
            DataSource::Synthetic {
                n_per_class,
                separation,
            } => {
                if *n_per_class == 0 || !separation.is_finite() {
                    return Err(Error::Config(
                        "synthetic source needs n_per_class > 0 and finite separation".into(),
                    ));
                }
                if c.data.components != 5 {
                    return Err(Error::Config("synthetic data has 5 features".into()));
                }
            }
            DataSource::Csv { path } => self.require_file("data.source.path", path)?,
        }
        Ok(())
    }

    fn require_file(&self, flag: &str, path: &Path) -> Result<()> {
        let p = self.resolve(path);
        if p.is_file() {
            Ok(())
        } else {
            Err(Error::MissingFile {
                flag: flag.into(),
                path: p,
            })
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.config
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// The config as recorded in outputs: everything except the output directory.
    pub fn snapshot(&self) -> ExperimentConfig {
        ExperimentConfig {
            output_dir: None,
            ..self.config.clone()
        }
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.snapshot()).expect("config serializes");
        sha256_hex(text.as_bytes())
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        derive_seed(self.config.seed, stage)
    }
}

pub fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(out) = &o.out {
        config.output_dir = Some(out.clone());
    }
    let mode = match (o.estimator, o.shots) {
        (None, None) => return Ok(()),
        (Some(EstimatorMode::Exact), Some(_)) => {
            return Err(Error::Config("--shots requires --estimator sampled".into()))
        }
        (Some(EstimatorMode::Exact), None) => Estimator::Exact,
        (_, Some(shots)) => Estimator::Sampled { shots },
        (Some(EstimatorMode::Sampled), None) => match config.nqe.estimator {
            s @ Estimator::Sampled { .. } => s,
            Estimator::Exact => Estimator::Sampled {
                shots: plan_shots(0.1, 0.05)?.shots,
            },
        },
    };
    mode.validate().map_err(|e| Error::Config(e.to_string()))?;
    config.nqe.estimator = mode;
    config.pqc.estimator = mode;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// JSON body with the master seed and config digest in front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub seed: u64,
    pub config_sha256: String,
    #[serde(flatten)]
    pub body: T,
}

/// Writes stamped files into one directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    seed: u64,
    digest: String,
}

impl Bundle {
    pub fn new(exp: &Experiment) -> Result<Self> {
        let dir = exp.output_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            seed: exp.seed(),
            digest: exp.digest(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        log::debug!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<()> {
        let stamped = Stamped {
            seed: self.seed,
            config_sha256: self.digest.clone(),
            body,
        };
        let mut text =
            serde_json::to_string_pretty(&stamped).map_err(|e| Error::Numeric(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Prepends a `# seed=… config_sha256=…` comment line.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        let text = format!("# seed={} config_sha256={}\n{body}", self.seed, self.digest);
        self.write(name, text.as_bytes())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(Error::MissingFile {
                flag: "--out".into(),
                path,
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stamped: Stamped<T> = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Ok(stamped.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    /// Keyed by path relative to the output directory, `/`-separated.
    pub files: BTreeMap<String, FileDigest>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path
            .strip_prefix(root)
            .map_or(true, |p| p != Path::new(MANIFEST_FILE))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn digest_files(dir: &Path) -> Result<BTreeMap<String, FileDigest>> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    let mut files = BTreeMap::new();
    for p in paths {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let rel = p.strip_prefix(dir).expect("inside output dir");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(
            key,
            FileDigest {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            },
        );
    }
    Ok(files)
}

/// Digests every file currently in the output directory.
pub fn write_manifest(exp: &Experiment, bundle: &Bundle) -> Result<RunManifest> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: exp.seed(),
        config_sha256: exp.digest(),
        config: exp.snapshot(),
        files: digest_files(&bundle.dir)?,
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numeric(e.to_string()))?;
    text.push('\n');
    bundle.write(MANIFEST_FILE, text.as_bytes())?;
    Ok(manifest)
}

/// Recomputes the digests and compares them with `manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    let actual = digest_files(dir)?;
    if actual != manifest.files {
        return Err(Error::Schema(format!(
            "digests in {} do not match the files",
            path.display()
        )));
    }
    Ok(manifest)
}

pub const DATASET_FILE: &str = "dataset.json";
pub const NQE_PARAMS_FILE: &str = "nqe_params.json";
pub const NQE_LOSS_FILE: &str = "nqe_loss.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRACE_DISTANCE_FILE: &str = "trace_distance.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn checkpoint_name(i: usize) -> String {
    format!("{CHECKPOINT_DIR}/checkpoint_{i:03}.json")
}

pub fn pqc_loss_name(mode: &str) -> String {
    format!("pqc_loss_{}.csv", mode.replace('-', "_"))
}

pub fn theta_name(mode: &str) -> String {
    format!("pqc_theta_{}.json", mode.replace('-', "_"))
}

pub fn predictions_name(mode: &str) -> String {
    format!("predictions_{}.csv", mode.replace('-', "_"))
}

pub fn classification_name(mode: &str) -> String {
    format!("classification_{}.json", mode.replace('-', "_"))
}

/// The dataset with its train/test assignment, ready to be written.
pub fn build_dataset(exp: &Experiment) -> Result<Dataset> {
    let c = &exp.config;
    let mut ds = match &c.data.source {
        DataSource::Mnist {
            images,
            labels,
            digits,
        } => {
            let (ip, lp) = (exp.resolve(images), exp.resolve(labels));
            let raw = data::load_idx_files(&ip, &lp)?;
            let source = format!(
                "mnist:{}+{}",
                images.file_name().unwrap_or_default().to_string_lossy(),
                labels.file_name().unwrap_or_default().to_string_lossy()
            );
            data::prepare_mnist(
                &raw,
                (digits[0], digits[1]),
                c.data.count,
                c.data.components,
                exp.stage_seed(STAGE_SELECT),
                &source,
            )?
        }
        DataSource::Synthetic {
            n_per_class,
            separation,
        } => data::synthetic_dataset(*n_per_class, *separation, exp.stage_seed(STAGE_SELECT))?,
        DataSource::Csv { path } => {
            let p = exp.resolve(path);
            let file = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            data::import_csv(file, &format!("csv:{name}"))?
        }
    };
    if ds.feature_dim() != c.data.components {
        return Err(Error::Shape(format!(
            "dataset has {} features, config expects {}",
            ds.feature_dim(),
            c.data.components
        )));
    }
    ds.require_both_labels()?;
    ds.provenance.seed = exp.seed();
    ds.train_indices = data::split_indices(
        &ds.samples,
        c.data.train_fraction,
        exp.stage_seed(STAGE_SPLIT),
    )?;
    ds.validate()?;
    Ok(ds)
}

pub fn cmd_prepare_data(exp: &Experiment) -> Result<Dataset> {
    let bundle = Bundle::new(exp)?;
    let ds = build_dataset(exp)?;
    let (m, p) = ds.class_counts();
    log::info!(
        "dataset: {} samples ({m} negative, {p} positive), {} for training",
        ds.len(),
        ds.train_indices.len()
    );
    bundle.write_json(DATASET_FILE, &ds)?;
    write_manifest(exp, &bundle)?;
    Ok(ds)
}

fn load_dataset(bundle: &Bundle) -> Result<Dataset> {
    let ds: Dataset = bundle.read_json(DATASET_FILE)?;
    ds.validate()?;
    Ok(ds)
}

pub fn nqe_config(exp: &Experiment) -> NqeTrainConfig {
    NqeTrainConfig {
        seed: exp.stage_seed(STAGE_NQE),
        ..exp.config.nqe.clone()
    }
}

pub fn pqc_config(exp: &Experiment) -> PqcTrainConfig {
    PqcTrainConfig {
        seed: exp.stage_seed(STAGE_PQC),
        ..exp.config.pqc.clone()
    }
}

pub fn initial_params(exp: &Experiment) -> Result<MlpParams> {
    let e = &exp.config.embedder;
    init_params_with_gain(&e.layer_sizes, exp.stage_seed(STAGE_INIT), e.output_gain)
}

pub fn cmd_train_nqe(exp: &Experiment) -> Result<nqe::NqeRun> {
    let bundle = Bundle::new(exp)?;
    let ds = load_dataset(&bundle)?;
    let train = ds.subset(SplitTag::Train)?;
    let started = std::time::Instant::now();
    let run = nqe::train_nqe(
        &train,
        &exp.config.feature_map,
        initial_params(exp)?,
        &nqe_config(exp),
    )?;
    log::info!(
        "nqe: {} iterations in {:.2}s, loss/pair {:.4} -> {:.4}",
        run.trace.records.len(),
        started.elapsed().as_secs_f64(),
        run.trace.records.first().map_or(f64::NAN, |r| r.loss),
        run.trace.records.last().map_or(f64::NAN, |r| r.loss)
    );
    bundle.write_json(NQE_PARAMS_FILE, &run.params)?;
    bundle.write_csv(NQE_LOSS_FILE, &nqe::trace_csv(&run.trace)?)?;
    let stale = bundle.path(CHECKPOINT_DIR);
    if stale.is_dir() {
        fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    for (i, p) in run.checkpoints.iter().enumerate() {
        bundle.write_json(&checkpoint_name(i), p)?;
    }
    write_manifest(exp, &bundle)?;
    Ok(run)
}

fn load_checkpoints(bundle: &Bundle) -> Result<Vec<MlpParams>> {
    let mut out = Vec::new();
    while bundle.path(&checkpoint_name(out.len())).is_file() {
        out.push(bundle.read_json(&checkpoint_name(out.len()))?);
    }
    if out.is_empty() {
        return Err(Error::MissingFile {
            flag: "--out".into(),
            path: bundle.path(&checkpoint_name(0)),
        });
    }
    Ok(out)
}

/// Per-split trace-distance statistics at every checkpoint.
pub fn separability(
    exp: &Experiment,
    ds: &Dataset,
    checkpoints: &[MlpParams],
) -> Result<Vec<(String, Vec<CheckpointStats>)>> {
    let root = exp.stage_seed(STAGE_SEPARABILITY);
    [SplitTag::Train, SplitTag::Test]
        .iter()
        .enumerate()
        .map(|(i, &tag)| {
            let part = ds.subset(tag)?;
            let pairs = metrics::sample_eval_pairs(
                &part.samples,
                exp.config.separability.pairs,
                derive_seed(root, i as u64),
            )?;
            let stats = metrics::eval_trace_distance_over_training(
                checkpoints,
                &pairs,
                &exp.config.feature_map,
            )?;
            let name = if tag == SplitTag::Train {
                "train"
            } else {
                "test"
            };
            Ok((name.to_string(), stats))
        })
        .collect()
}

pub fn cmd_eval_separability(exp: &Experiment) -> Result<Vec<(String, Vec<CheckpointStats>)>> {
    let bundle = Bundle::new(exp)?;
    let ds = load_dataset(&bundle)?;
    let checkpoints = load_checkpoints(&bundle)?;
    let rows = separability(exp, &ds, &checkpoints)?;
    for (split, stats) in &rows {
        if let (Some(a), Some(b)) = (stats.first(), stats.last()) {
            log::info!(
                "trace distance ({split}): {:.4} -> {:.4}",
                a.mean_trace_distance,
                b.mean_trace_distance
            );
        }
    }
    bundle.write_csv(TRACE_DISTANCE_FILE, &metrics::stats_csv(&rows)?)?;
    write_manifest(exp, &bundle)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingChoice {
    Nqe,
    RawZz,
    Both,
}

impl EmbeddingChoice {
    fn modes(self) -> &'static [&'static str] {
        match self {
            EmbeddingChoice::Nqe => &["nqe"],
            EmbeddingChoice::RawZz => &["raw-zz"],
            EmbeddingChoice::Both => &["nqe", "raw-zz"],
        }
    }
}

fn load_embedding(bundle: &Bundle, mode: &str) -> Result<Embedding> {
    match mode {
        "raw-zz" => Ok(Embedding::RawZz),
        _ => Ok(Embedding::Nqe(bundle.read_json(NQE_PARAMS_FILE)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqcResult {
    pub embedding_mode: String,
    pub theta: PqcParams,
    /// Batch loss recorded at the last iteration.
    pub final_batch_loss: f64,
    /// Loss of the trained angles over the whole training split.
    pub final_train_loss: f64,
}

pub fn cmd_train_pqc(exp: &Experiment, choice: EmbeddingChoice) -> Result<Vec<PqcResult>> {
    let bundle = Bundle::new(exp)?;
    let train = load_dataset(&bundle)?.subset(SplitTag::Train)?;
    let mut results = Vec::new();
    for &mode in choice.modes() {
        let embedding = load_embedding(&bundle, mode)?;
        let states = pqc::embed_samples(&embedding, &train.samples, &exp.config.feature_map)?;
        let run = pqc::train_pqc(&states, &pqc_config(exp))?;
        let result = PqcResult {
            embedding_mode: mode.into(),
            theta: run.params,
            final_batch_loss: run.trace.last().map_or(f64::NAN, |r| r.loss),
            final_train_loss: pqc::pqc_loss(&run.params, &states)?,
        };
        log::info!(
            "pqc ({mode}): final training loss {:.4}",
            result.final_train_loss
        );
        bundle.write_csv(&pqc_loss_name(mode), &pqc::trace_csv(&run.trace, mode)?)?;
        bundle.write_json(&theta_name(mode), &result)?;
        results.push(result);
    }
    write_manifest(exp, &bundle)?;
    Ok(results)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl Confusion {
    fn add(&mut self, truth: i8, predicted: i8) {
        match (truth > 0, predicted > 0) {
            (true, true) => self.true_positive += 1,
            (false, false) => self.true_negative += 1,
            (false, true) => self.false_positive += 1,
            (true, false) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positive + self.true_negative) as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub embedding_mode: String,
    pub n_samples: usize,
    /// Over every sample in the dataset.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: Confusion,
}

pub fn cmd_classify(
    exp: &Experiment,
    choice: EmbeddingChoice,
) -> Result<Vec<ClassificationSummary>> {
    let bundle = Bundle::new(exp)?;
    let ds = load_dataset(&bundle)?;
    let train: std::collections::BTreeSet<usize> = ds.train_indices.iter().copied().collect();
    let mut out = Vec::new();
    for &mode in choice.modes() {
        let embedding = load_embedding(&bundle, mode)?;
        let theta: PqcResult = bundle.read_json(&theta_name(mode))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
        w.write_record(["index", "split", "f", "predicted_label", "true_label"])
            .map_err(wrap)?;
        let (mut all, mut tr, mut te) = (
            Confusion::default(),
            Confusion::default(),
            Confusion::default(),
        );
        for (i, s) in ds.samples.iter().enumerate() {
            let state = embedding.state(&exp.config.feature_map, &s.features)?;
            let c = pqc::classify(&theta.theta, &state)?;
            let is_train = train.contains(&i);
            all.add(s.label, c.predicted_label);
            let part = if is_train { &mut tr } else { &mut te };
            part.add(s.label, c.predicted_label);
            w.write_record([
                i.to_string(),
                if is_train { "train" } else { "test" }.to_string(),
                c.f.to_string(),
                c.predicted_label.to_string(),
                s.label.to_string(),
            ])
            .map_err(wrap)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let summary = ClassificationSummary {
            embedding_mode: mode.into(),
            n_samples: ds.len(),
            accuracy: all.accuracy(),
            train_accuracy: tr.accuracy(),
            test_accuracy: te.accuracy(),
            confusion: all,
        };
        log::info!("classify ({mode}): accuracy {:.3}", summary.accuracy);
        bundle.write_csv(&predictions_name(mode), &body)?;
        bundle.write_json(&classification_name(mode), &summary)?;
        out.push(summary);
    }
    write_manifest(exp, &bundle)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSeparability {
    pub split: String,
    pub initial_mean_trace_distance: f64,
    pub final_mean_trace_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub nqe_initial_loss: f64,
    pub nqe_final_loss: f64,
    pub separability: Vec<SplitSeparability>,
    pub pqc: Vec<PqcResult>,
    pub classification: Vec<ClassificationSummary>,
}

/// Every stage in order, then `summary.json` and the manifest.
pub fn cmd_reproduce(exp: &Experiment) -> Result<RunSummary> {
    cmd_prepare_data(exp)?;
    let run = cmd_train_nqe(exp)?;
    let sep = cmd_eval_separability(exp)?;
    let pqc = cmd_train_pqc(exp, EmbeddingChoice::Both)?;
    let classification = cmd_classify(exp, EmbeddingChoice::Both)?;
    let records = &run.trace.records;
    let summary = RunSummary {
        nqe_initial_loss: records.first().map_or(f64::NAN, |r| r.loss),
        nqe_final_loss: records.last().map_or(f64::NAN, |r| r.loss),
        separability: sep
            .iter()
            .map(|(split, stats)| SplitSeparability {
                split: split.clone(),
                initial_mean_trace_distance: stats
                    .first()
                    .map_or(f64::NAN, |s| s.mean_trace_distance),
                final_mean_trace_distance: stats.last().map_or(f64::NAN, |s| s.mean_trace_distance),
            })
            .collect(),
        pqc,
        classification,
    };
    let bundle = Bundle::new(exp)?;
    bundle.write_json(SUMMARY_FILE, &summary)?;
    write_manifest(exp, &bundle)?;
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(
    name = "nqe-dqc1",
    version,
    about = "Neural quantum embedding experiments with DQC1 fidelity estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; built-in synthetic defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub estimator: Option<EstimatorMode>,
    /// Shots per expectation value; implies the sampled estimator.
    #[arg(long, global = true)]
    pub shots: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate the dataset and write dataset.json.
    PrepareData,
    /// Train the embedding network on the training split.
    TrainNqe,
    /// Trace distance between class pairs at every checkpoint.
    EvalSeparability,
    /// Train the classifier circuit on the training split.
    TrainPqc {
        #[arg(long, value_enum, default_value = "both")]
        embedding: EmbeddingChoice,
    },
    /// Predict every sample and summarise accuracy.
    Classify {
        #[arg(long, value_enum, default_value = "both")]
        embedding: EmbeddingChoice,
    },
    /// All stages in order.
    Reproduce,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            estimator: self.estimator,
            shots: self.shots,
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let exp = Experiment::load(cli.config.as_deref(), &cli.overrides())?;
    match cli.command {
        Command::PrepareData => cmd_prepare_data(&exp).map(drop),
        Command::TrainNqe => cmd_train_nqe(&exp).map(drop),
        Command::EvalSeparability => cmd_eval_separability(&exp).map(drop),
        Command::TrainPqc { embedding } => cmd_train_pqc(&exp, embedding).map(drop),
        Command::Classify { embedding } => cmd_classify(&exp, embedding).map(drop),
        Command::Reproduce => cmd_reproduce(&exp).map(drop),
    }?;
    log::info!("outputs in {}", exp.output_dir().display());
    Ok(())
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(dir: &Path) -> Experiment {
        let mut c = ExperimentConfig::default();
        c.output_dir = Some(dir.to_path_buf());
        c.data.source = DataSource::Synthetic {
            n_per_class: 12,
            separation: 3.0,
        };
        c.nqe.iterations = 3;
        c.pqc.iterations = 3;
        c.separability.pairs = 4;
        Experiment::from_config(c, ".").unwrap()
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let exp = Experiment::from_config(ExperimentConfig::default(), ".").unwrap();
        let text = serde_json::to_string(&exp.config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, exp.config);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.nqe, NqeTrainConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 7}"#).is_err());
    }

    #[test]
    fn digest_ignores_output_dir_only() {
        let a = Experiment::from_config(ExperimentConfig::default(), ".").unwrap();
        let mut c = a.config.clone();
        c.output_dir = Some("elsewhere".into());
        let b = Experiment::from_config(c.clone(), ".").unwrap();
        assert_eq!(a.digest(), b.digest());
        c.seed = 1;
        assert_ne!(
            a.digest(),
            Experiment::from_config(c, ".").unwrap().digest()
        );
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        let o = Overrides {
            seed: Some(9),
            out: Some("x".into()),
            estimator: Some(EstimatorMode::Sampled),
            shots: None,
        };
        apply_overrides(&mut c, &o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.output_dir, Some(PathBuf::from("x")));
        assert_eq!(c.nqe.estimator, Estimator::Sampled { shots: 738 });
        assert_eq!(c.pqc.estimator, c.nqe.estimator);
        apply_overrides(
            &mut c,
            &Overrides {
                shots: Some(50),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.pqc.estimator, Estimator::Sampled { shots: 50 });
        let bad = Overrides {
            estimator: Some(EstimatorMode::Exact),
            shots: Some(5),
            ..Default::default()
        };
        assert!(matches!(
            apply_overrides(&mut c, &bad),
            Err(Error::Config(_))
        ));
        assert!(apply_overrides(
            &mut c,
            &Overrides {
                shots: Some(0),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn missing_files_name_the_flag() {
        let err = Experiment::load(
            Some(Path::new("/nonexistent/cfg.json")),
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("--config"));
        assert_eq!(err.exit_code(), 2);
        let mut c = ExperimentConfig::default();
        c.data.source = DataSource::Mnist {
            images: "missing-images.gz".into(),
            labels: "missing-labels.gz".into(),
            digits: [0, 1],
        };
        let err = Experiment::from_config(c, "/nonexistent").unwrap_err();
        assert!(err.to_string().contains("data.source.images"), "{err}");
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let mut c = ExperimentConfig::default();
        c.embedder.layer_sizes = vec![5, 8, 4];
        assert!(matches!(
            Experiment::from_config(c, "."),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stages_write_stamped_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let exp = quick(dir.path());
        let summary = cmd_reproduce(&exp).unwrap();
        assert_eq!(summary.classification.len(), 2);
        assert_eq!(summary.pqc.len(), 2);
        let manifest = verify_manifest(dir.path()).unwrap();
        assert_eq!(
            manifest
                .files
                .keys()
                .filter(|k| k.starts_with("checkpoints/"))
                .count(),
            4
        );
        for name in [
            NQE_LOSS_FILE,
            TRACE_DISTANCE_FILE,
            "pqc_loss_nqe.csv",
            "pqc_loss_raw_zz.csv",
            "predictions_nqe.csv",
        ] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(
                text.starts_with(&format!("# seed=0 config_sha256={}\n", exp.digest())),
                "{name}"
            );
        }
        let loss = fs::read_to_string(dir.path().join(NQE_LOSS_FILE)).unwrap();
        assert_eq!(loss.lines().count(), 2 + 3);
        let preds = fs::read_to_string(dir.path().join("predictions_raw_zz.csv")).unwrap();
        assert_eq!(preds.lines().count(), 2 + 24);
        let params: MlpParams = Bundle::new(&exp)
            .unwrap()
            .read_json(NQE_PARAMS_FILE)
            .unwrap();
        assert_eq!(params.layer_sizes, exp.config.embedder.layer_sizes);
        fs::write(dir.path().join(NQE_LOSS_FILE), "tampered").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }

    #[test]
    fn later_stages_need_earlier_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let exp = quick(dir.path());
        assert!(matches!(
            cmd_train_nqe(&exp),
            Err(Error::MissingFile { .. })
        ));
        cmd_prepare_data(&exp).unwrap();
        assert!(matches!(
            cmd_eval_separability(&exp),
            Err(Error::MissingFile { .. })
        ));
        cmd_train_pqc(&exp, EmbeddingChoice::RawZz).unwrap();
        assert!(matches!(
            cmd_classify(&exp, EmbeddingChoice::Nqe),
            Err(Error::MissingFile { .. })
        ));
    }
}
