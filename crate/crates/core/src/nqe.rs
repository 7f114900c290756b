//! Training the embedding network so that same-class images land on
//! overlapping states and different-class images on orthogonal ones.
//!
//! Per pair the loss is (Re hs − t)² with t = (1 + yᵢyⱼ)/2, where hs is the
//! normalized trace the DQC1 probe reports. Angle gradients come from central
//! differences of the exact Re hs and are pushed through the network by
//! backpropagation.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::dqc1::{estimate, hs_real, Estimator};
use crate::embedder::{backward_masked, forward, EmbedderGradient, MlpParams};
use crate::error::{Error, Result};
use crate::featuremap::{FeatureAngles, FeatureMapConfig};
use crate::rng::{derive_seed, seeded};

/// Step of the central differences on Re hs.
pub const FD_STEP: f64 = 1e-5;
/// Each batch holds at least this many same-label and different-label pairs
/// (capped at half the batch).
pub const MIN_PAIRS_PER_KIND: usize = 3;
const MAX_BATCH_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NqeTrainConfig {
    pub iterations: usize,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub estimator: Estimator,
    /// Chain the estimated (rather than exact) overlap into the gradient.
    pub sampled_gradient: bool,
    /// `frozen_layers[l]` keeps layer l fixed.
    pub frozen_layers: Vec<bool>,
    pub seed: u64,
}

impl Default for NqeTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            batch_pairs: 10,
            learning_rate: 0.03,
            optimizer: Optimizer::default(),
            estimator: Estimator::Exact,
            sampled_gradient: false,
            frozen_layers: Vec::new(),
            seed: 0,
        }
    }
}

impl NqeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_pairs == 0 {
            return Err(Error::Config(
                "iterations and batch_pairs must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::Config(
                    "Adam needs β₁, β₂ in [0, 1) and ε > 0".into(),
                ));
            }
        }
        self.estimator
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub xi: Vec<f64>,
    pub xj: Vec<f64>,
    pub yi: i8,
    pub yj: i8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<PairSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqeRecord {
    /// 1-based.
    pub iteration: usize,
    /// Batch loss divided by the number of pairs.
    pub loss: f64,
    pub mean_hs_same: f64,
    pub mean_hs_diff: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NqeTrace {
    pub records: Vec<NqeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NqeRun {
    pub params: MlpParams,
    pub trace: NqeTrace,
    /// Parameters before the first update and after every update.
    pub checkpoints: Vec<MlpParams>,
}

pub fn target(yi: i8, yj: i8) -> f64 {
    (1.0 + f64::from(yi) * f64::from(yj)) / 2.0
}

pub fn pair_loss(hs_real: f64, yi: i8, yj: i8) -> f64 {
    (hs_real - target(yi, yj)).powi(2)
}

/// Σ pair_loss over the batch with exact overlaps.
pub fn batch_loss(params: &MlpParams, batch: &PairBatch, cfg: &FeatureMapConfig) -> Result<f64> {
    params.check_for(cfg)?;
    let mut total = 0.0;
    for p in &batch.pairs {
        let hs = hs_real(cfg, &forward(params, &p.xi)?, &forward(params, &p.xj)?)?;
        total += pair_loss(hs, p.yi, p.yj);
    }
    Ok(total)
}

/// Central-difference gradient of Re hs with respect to both angle vectors.
pub fn hs_grad_wrt_angles(
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
    cfg: &FeatureMapConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = FD_STEP;
    let diff = |a: &FeatureAngles, b: &FeatureAngles, first: bool, k: usize| -> Result<f64> {
        let (ap, bp, am, bm) = if first {
            (
                a.with_offset(k, h),
                b.clone(),
                a.with_offset(k, -h),
                b.clone(),
            )
        } else {
            (
                a.clone(),
                b.with_offset(k, h),
                a.clone(),
                b.with_offset(k, -h),
            )
        };
        Ok((hs_real(cfg, &ap, &bp)? - hs_real(cfg, &am, &bm)?) / (2.0 * h))
    };
    let n = cfg.n_angles();
    let g1 = (0..n)
        .map(|k| diff(phi1, phi2, true, k))
        .collect::<Result<Vec<_>>>()?;
    let g2 = (0..n)
        .map(|k| diff(phi1, phi2, false, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((g1, g2))
}

/// Partials of pair_loss with respect to φ₁ and φ₂.
pub fn loss_grad_wrt_angles(
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
    yi: i8,
    yj: i8,
    cfg: &FeatureMapConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hs = hs_real(cfg, phi1, phi2)?;
    chained_grad(phi1, phi2, 2.0 * (hs - target(yi, yj)), cfg)
}

fn chained_grad(
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
    factor: f64,
    cfg: &FeatureMapConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (g1, g2) = hs_grad_wrt_angles(phi1, phi2, cfg)?;
    Ok((
        g1.iter().map(|v| factor * v).collect(),
        g2.iter().map(|v| factor * v).collect(),
    ))
}

/// Gradient of `batch_loss` with respect to every network parameter,
/// accumulated in pair order.
pub fn batch_gradient(
    params: &MlpParams,
    batch: &PairBatch,
    cfg: &FeatureMapConfig,
    frozen: &[bool],
) -> Result<EmbedderGradient> {
    params.check_for(cfg)?;
    let mut total = EmbedderGradient::zeros_like(params);
    for p in &batch.pairs {
        let (phi_i, phi_j) = (forward(params, &p.xi)?, forward(params, &p.xj)?);
        let (gi, gj) = loss_grad_wrt_angles(&phi_i, &phi_j, p.yi, p.yj, cfg)?;
        total.add_assign(&backward_masked(params, &p.xi, &gi, frozen)?);
        total.add_assign(&backward_masked(params, &p.xj, &gj, frozen)?);
    }
    Ok(total)
}

/// Ordered pairs drawn uniformly with replacement; whole batches are redrawn
/// until both pair kinds reach their quota.
pub fn sample_pairs<R: Rng>(samples: &[Sample], n_pairs: usize, rng: &mut R) -> Result<PairBatch> {
    let has = |l: i8| samples.iter().any(|s| s.label == l);
    if !has(1) || !has(-1) {
        return Err(Error::Domain("pair sampling needs both labels".into()));
    }
    let quota = MIN_PAIRS_PER_KIND.min(n_pairs / 2);
    for _ in 0..MAX_BATCH_DRAWS {
        let pairs: Vec<PairSample> = (0..n_pairs)
            .map(|_| {
                let a = &samples[rng.random_range(0..samples.len())];
                let b = &samples[rng.random_range(0..samples.len())];
                PairSample {
                    xi: a.features.clone(),
                    xj: b.features.clone(),
                    yi: a.label,
                    yj: b.label,
                }
            })
            .collect();
        let same = pairs.iter().filter(|p| p.yi == p.yj).count();
        if same >= quota && n_pairs - same >= quota {
            return Ok(PairBatch { pairs });
        }
    }
    Err(Error::Numeric(
        "could not draw a label-balanced batch".into(),
    ))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn step(opt: Optimizer, state: &mut AdamState, lr: f64, params: &mut [f64], grad: &[f64]) {
    match opt {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            for i in 0..params.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let mhat = state.m[i] / c1;
                let vhat = state.v[i] / c2;
                params[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Train on every sample of `data`; deterministic for a fixed `cfg.seed`.
pub fn train_nqe(
    data: &Dataset,
    fm: &FeatureMapConfig,
    init: MlpParams,
    cfg: &NqeTrainConfig,
) -> Result<NqeRun> {
    cfg.validate()?;
    fm.validate()?;
    init.check_for(fm)?;
    data.require_both_labels()?;
    if data.feature_dim() != init.input_size() {
        return Err(Error::Shape(format!(
            "{} features for a network with {} inputs",
            data.feature_dim(),
            init.input_size()
        )));
    }

    let mut params = init;
    let mut rng = seeded(derive_seed(cfg.seed, 0));
    let shot_root = derive_seed(cfg.seed, 1);
    let mut adam = AdamState {
        m: vec![0.0; params.n_params()],
        v: vec![0.0; params.n_params()],
        t: 0,
    };
    let mut checkpoints = vec![params.clone()];
    let mut trace = NqeTrace::default();
    let start = Instant::now();

    for it in 0..cfg.iterations {
        let batch = sample_pairs(&data.samples, cfg.batch_pairs, &mut rng)?;
        let mut loss = 0.0;
        let (mut same, mut diff) = (Vec::new(), Vec::new());
        let mut grad = EmbedderGradient::zeros_like(&params);
        for (k, p) in batch.pairs.iter().enumerate() {
            let phi_i = forward(&params, &p.xi)?;
            let phi_j = forward(&params, &p.xj)?;
            let shot_seed = derive_seed(shot_root, (it * cfg.batch_pairs + k) as u64);
            let hs_est = estimate(fm, &phi_i, &phi_j, cfg.estimator, shot_seed)?.expectation_z;
            loss += pair_loss(hs_est, p.yi, p.yj);
            if p.yi == p.yj {
                same.push(hs_est);
            } else {
                diff.push(hs_est);
            }
            let hs_for_grad = match cfg.estimator {
                Estimator::Sampled { .. } if !cfg.sampled_gradient => hs_real(fm, &phi_i, &phi_j)?,
                _ => hs_est,
            };
            let factor = 2.0 * (hs_for_grad - target(p.yi, p.yj));
            let (gi, gj) = chained_grad(&phi_i, &phi_j, factor, fm)?;
            grad.add_assign(&backward_masked(&params, &p.xi, &gi, &cfg.frozen_layers)?);
            grad.add_assign(&backward_masked(&params, &p.xj, &gj, &cfg.frozen_layers)?);
        }

        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        trace.records.push(NqeRecord {
            iteration: it + 1,
            loss: loss / cfg.batch_pairs as f64,
            mean_hs_same: mean(&same),
            mean_hs_diff: mean(&diff),
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!(
            "nqe iteration {} loss/pair {:.6}",
            it + 1,
            loss / cfg.batch_pairs as f64
        );

        let mut flat = params.to_flat();
        step(
            cfg.optimizer,
            &mut adam,
            cfg.learning_rate,
            &mut flat,
            &grad.to_flat(),
        );
        params.set_flat(&flat)?;
        params.validate()?;
        checkpoints.push(params.clone());
    }

    Ok(NqeRun {
        params,
        trace,
        checkpoints,
    })
}

/// `iteration,loss,mean_hs_same,mean_hs_diff`, one row per iteration.
pub fn trace_csv(trace: &NqeTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
    w.write_record(["iteration", "loss", "mean_hs_same", "mean_hs_diff"])
        .map_err(wrap)?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            r.loss.to_string(),
            r.mean_hs_same.to_string(),
            r.mean_hs_diff.to_string(),
        ])
        .map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}
