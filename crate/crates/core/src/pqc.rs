//! Four-angle, two-CNOT classifier circuit on the three encoding qubits,
//! read out as ⟨σz⟩ on qubit 3 and trained with the parameter-shift rule.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::dqc1::Estimator;
use crate::embedder::Embedding;
use crate::error::{Error, Result};
use crate::featuremap::FeatureMapConfig;
use crate::qmath::{gates, matmul, ComplexMatrix, StateVector};
use crate::rng::{derive_seed, seeded};

pub const PQC_QUBITS: usize = 3;
pub const N_THETA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqcParams {
    pub theta: [f64; N_THETA],
}

impl PqcParams {
    pub fn new(theta: [f64; N_THETA]) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("non-finite circuit angle".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros() -> Self {
        Self {
            theta: [0.0; N_THETA],
        }
    }

    fn shifted(&self, k: usize, delta: f64) -> Self {
        let mut t = self.theta;
        t[k] += delta;
        Self { theta: t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqcTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub estimator: Estimator,
    pub seed: u64,
}

impl Default for PqcTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            batch_size: 10,
            learning_rate: 0.2,
            estimator: Estimator::Exact,
            seed: 0,
        }
    }
}

impl PqcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "iterations and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        self.estimator
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    pub f: f64,
    pub predicted_label: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub state: StateVector,
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqcRecord {
    /// 1-based.
    pub iteration: usize,
    /// Batch loss at the parameters used in this iteration.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqcRun {
    pub params: PqcParams,
    pub trace: Vec<PqcRecord>,
}

/// Layer k applies Ry(θ_{2k−1}) to qubit 2 and Ry(θ_{2k}) to qubit 3, then
/// CNOT 2 → 3; layer 1 acts first.
pub fn pqc_circuit(params: &PqcParams) -> ComplexMatrix {
    let n = PQC_QUBITS;
    let cnot = gates::cnot(2, 3, n);
    let mut u = ComplexMatrix::identity(1 << n);
    for layer in 0..2 {
        let r2 = gates::embed(&gates::ry(params.theta[2 * layer]), 2, n);
        let r3 = gates::embed(&gates::ry(params.theta[2 * layer + 1]), 3, n);
        for g in [&r2, &r3, &cnot] {
            u = matmul(g, &u).expect("8x8 matrices");
        }
    }
    u
}

pub fn sign_label(f: f64) -> i8 {
    if f >= 0.0 {
        1
    } else {
        -1
    }
}

fn z3_expectation(u: &ComplexMatrix, state: &StateVector) -> Result<f64> {
    if state.n_qubits() != PQC_QUBITS {
        return Err(Error::Shape(format!(
            "classifier takes {PQC_QUBITS}-qubit states, got {}",
            state.n_qubits()
        )));
    }
    let out = u.apply(state.amplitudes())?;
    // ⟨σz⟩ on the last qubit: + for even basis indices, − for odd.
    let f: f64 = out
        .iter()
        .enumerate()
        .map(|(b, a)| {
            if b & 1 == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum();
    Ok(f.clamp(-1.0, 1.0))
}

/// f = ⟨ψ|U†(θ) (I⊗I⊗σz) U(θ)|ψ⟩ and its sign (0 counts as +1).
pub fn classify(params: &PqcParams, state: &StateVector) -> Result<ClassifierOutput> {
    let f = z3_expectation(&pqc_circuit(params), state)?;
    Ok(ClassifierOutput {
        f,
        predicted_label: sign_label(f),
    })
}

fn loss_with(
    params: &PqcParams,
    batch: &[LabeledState],
    estimator: Estimator,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let u = pqc_circuit(params);
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let f = estimator.observe(z3_expectation(&u, &s.state)?, derive_seed(seed, i as u64))?;
        total += 0.5 * (1.0 - f * f64::from(s.label));
    }
    Ok(total / batch.len() as f64)
}

/// L = mean ½(1 − fᵢyᵢ)
pub fn pqc_loss(params: &PqcParams, batch: &[LabeledState]) -> Result<f64> {
    loss_with(params, batch, Estimator::Exact, 0)
}

fn shift_grad_with(
    params: &PqcParams,
    batch: &[LabeledState],
    estimator: Estimator,
    seed: u64,
) -> Result<[f64; N_THETA]> {
    let mut g = [0.0; N_THETA];
    for (k, gk) in g.iter_mut().enumerate() {
        let plus = loss_with(
            &params.shifted(k, FRAC_PI_2),
            batch,
            estimator,
            derive_seed(seed, 2 * k as u64),
        )?;
        let minus = loss_with(
            &params.shifted(k, -FRAC_PI_2),
            batch,
            estimator,
            derive_seed(seed, 2 * k as u64 + 1),
        )?;
        *gk = (plus - minus) / 2.0;
    }
    Ok(g)
}

/// ∂L/∂θₖ = [L(θₖ + π/2) − L(θₖ − π/2)]/2
pub fn parameter_shift_grad(params: &PqcParams, batch: &[LabeledState]) -> Result<[f64; N_THETA]> {
    shift_grad_with(params, batch, Estimator::Exact, 0)
}

pub fn embed_samples(
    embedding: &Embedding,
    samples: &[Sample],
    cfg: &FeatureMapConfig,
) -> Result<Vec<LabeledState>> {
    samples
        .iter()
        .map(|s| {
            Ok(LabeledState {
                state: embedding.state(cfg, &s.features)?,
                label: s.label,
            })
        })
        .collect()
}

/// Gradient descent from θ = 0 on random batches drawn with replacement.
pub fn train_pqc(data: &[LabeledState], cfg: &PqcTrainConfig) -> Result<PqcRun> {
    cfg.validate()?;
    if !data.iter().any(|s| s.label > 0) || !data.iter().any(|s| s.label < 0) {
        return Err(Error::Domain(
            "classifier training needs both labels".into(),
        ));
    }
    let mut rng = seeded(derive_seed(cfg.seed, 0));
    let shot_root = derive_seed(cfg.seed, 1);
    let mut params = PqcParams::zeros();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch: Vec<LabeledState> = (0..cfg.batch_size)
            .map(|_| data[rng.random_range(0..data.len())].clone())
            .collect();
        let it_seed = derive_seed(shot_root, it as u64);
        let loss = loss_with(&params, &batch, cfg.estimator, derive_seed(it_seed, 0))?;
        let grad = shift_grad_with(&params, &batch, cfg.estimator, derive_seed(it_seed, 1))?;
        trace.push(PqcRecord {
            iteration: it + 1,
            loss,
        });
        log::debug!("pqc iteration {} loss {:.6}", it + 1, loss);
        let mut theta = params.theta;
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= cfg.learning_rate * g;
        }
        params = PqcParams::new(theta)?;
    }
    Ok(PqcRun { params, trace })
}

pub fn evaluate_accuracy(params: &PqcParams, data: &[LabeledState]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    let u = pqc_circuit(params);
    let mut correct = 0usize;
    for s in data {
        if sign_label(z3_expectation(&u, &s.state)?) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// `iteration,loss,embedding_mode`
pub fn trace_csv(trace: &[PqcRecord], mode: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
    w.write_record(["iteration", "loss", "embedding_mode"])
        .map_err(wrap)?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.loss.to_string(),
            mode.to_string(),
        ])
        .map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}
