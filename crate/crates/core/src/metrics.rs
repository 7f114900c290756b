//! Separability diagnostics: class ensembles, trace distance, the empirical
//! risk lower bound, and a depolarizing channel for contractivity checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::embedder::{Embedding, MlpParams};
use crate::error::{Error, Result};
use crate::featuremap::FeatureMapConfig;
use crate::qmath::{hermitian_eigenvalues, ComplexMatrix, DensityMatrix};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnsembles {
    pub rho_plus: DensityMatrix,
    pub rho_minus: DensityMatrix,
    pub m_plus: usize,
    pub m_minus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepolarizingChannel {
    lambda: f64,
}

impl DepolarizingChannel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!(
                "depolarizing strength {lambda} outside [0, 1]"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Equal-weight mixtures of the embedded states of each class.
pub fn build_ensembles(
    embedding: &Embedding,
    samples: &[Sample],
    cfg: &FeatureMapConfig,
) -> Result<ClassEnsembles> {
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for s in samples {
        let state = embedding.state(cfg, &s.features)?;
        if s.label > 0 {
            plus.push(state);
        } else {
            minus.push(state);
        }
    }
    if plus.is_empty() || minus.is_empty() {
        return Err(Error::Domain("ensembles need both labels".into()));
    }
    Ok(ClassEnsembles {
        rho_plus: DensityMatrix::mixture(&plus)?,
        rho_minus: DensityMatrix::mixture(&minus)?,
        m_plus: plus.len(),
        m_minus: minus.len(),
    })
}

/// ½‖a − b‖₁ of Hermitian operators (not necessarily unit trace).
pub fn trace_norm_half(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "trace distance of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    // Canonical argument order keeps the result symmetric bit for bit.
    let key = |m: &ComplexMatrix| {
        m.data()
            .iter()
            .flat_map(|z| [z.re, z.im])
            .collect::<Vec<f64>>()
    };
    let ordered = key(a)
        .iter()
        .zip(key(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .is_none_or(|o| o.is_lt());
    let (a, b) = if ordered { (a, b) } else { (b, a) };
    let mut mags: Vec<f64> = hermitian_eigenvalues(&a.sub(b)?)?
        .iter()
        .map(|v| v.abs())
        .collect();
    mags.sort_by(f64::total_cmp);
    Ok(0.5 * mags.iter().sum::<f64>())
}

pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    Ok(trace_norm_half(a.matrix(), b.matrix())?.clamp(0.0, 1.0))
}

/// ½ − ½‖p⁺ρ⁺ − p⁻ρ⁻‖₁ with p± = m±/(m₊ + m₋).
pub fn risk_lower_bound(ens: &ClassEnsembles) -> Result<f64> {
    let total = (ens.m_plus + ens.m_minus) as f64;
    let pp = num_complex::Complex64::new(ens.m_plus as f64 / total, 0.0);
    let pm = num_complex::Complex64::new(ens.m_minus as f64 / total, 0.0);
    let d = trace_norm_half(
        &ens.rho_plus.matrix().scale(pp),
        &ens.rho_minus.matrix().scale(pm),
    )?;
    Ok(0.5 - d)
}

/// (1 − λ)ρ + λ I/2ⁿ
pub fn apply_depolarizing(ch: &DepolarizingChannel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let l = ch.lambda();
    let mixed = DensityMatrix::maximally_mixed(rho.n_qubits());
    let m = rho
        .matrix()
        .scale((1.0 - l).into())
        .add(&mixed.matrix().scale(l.into()))?;
    DensityMatrix::new(m)
}

/// One image of each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
}

/// `n` cross-class pairs drawn uniformly with replacement.
pub fn sample_eval_pairs(samples: &[Sample], n: usize, seed: u64) -> Result<Vec<EvalPair>> {
    let minus: Vec<&Sample> = samples.iter().filter(|s| s.label < 0).collect();
    let plus: Vec<&Sample> = samples.iter().filter(|s| s.label > 0).collect();
    if minus.is_empty() || plus.is_empty() {
        return Err(Error::Domain("evaluation pairs need both labels".into()));
    }
    let mut rng = seeded(seed);
    Ok((0..n)
        .map(|_| EvalPair {
            minus: minus[rng.random_range(0..minus.len())].features.clone(),
            plus: plus[rng.random_range(0..plus.len())].features.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub iteration: usize,
    pub mean_trace_distance: f64,
    /// Sample standard deviation (n − 1) over the pairs.
    pub std_trace_distance: f64,
}

/// Pure-state trace distance of each pair under `embedding`.
pub fn pair_trace_distances(
    embedding: &Embedding,
    pairs: &[EvalPair],
    cfg: &FeatureMapConfig,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            if p.minus.len() != p.plus.len() {
                return Err(Error::Domain("evaluation pair of unequal lengths".into()));
            }
            let a = embedding.state(cfg, &p.minus)?.projector();
            let b = embedding.state(cfg, &p.plus)?.projector();
            trace_distance(&a, &b)
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and spread of the pair distances at every checkpoint; checkpoint i
/// is reported as iteration i.
pub fn eval_trace_distance_over_training(
    checkpoints: &[MlpParams],
    pairs: &[EvalPair],
    cfg: &FeatureMapConfig,
) -> Result<Vec<CheckpointStats>> {
    if pairs.is_empty() {
        return Err(Error::Domain("no evaluation pairs".into()));
    }
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = pair_trace_distances(&Embedding::Nqe(p.clone()), pairs, cfg)?;
            let (mean, std) = mean_std(&d);
            Ok(CheckpointStats {
                iteration: i,
                mean_trace_distance: mean,
                std_trace_distance: std,
            })
        })
        .collect()
}

/// Rows of `iteration,mean_trace_distance,std_trace_distance,split`.
pub fn stats_csv(rows: &[(String, Vec<CheckpointStats>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
    w.write_record([
        "iteration",
        "mean_trace_distance",
        "std_trace_distance",
        "split",
    ])
    .map_err(wrap)?;
    for (split, stats) in rows {
        for s in stats {
            w.write_record([
                s.iteration.to_string(),
                s.mean_trace_distance.to_string(),
                s.std_trace_distance.to_string(),
                split.clone(),
            ])
            .map_err(wrap)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}
