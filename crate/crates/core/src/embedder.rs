//! The classical network g(x, w) that turns a PCA feature vector into feature
//! map angles: tanh hidden layers, then an affine output squashed by π·tanh so
//! every angle lies in (−π, π).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuremap::{embed_state, FeatureAngles, FeatureMapConfig};
use crate::qmath::StateVector;
use crate::rng::seeded;

/// 5 → 8 → 5: one tanh hidden layer between the PCA input and the five angles.
pub const DEFAULT_LAYER_SIZES: [usize; 3] = [5, 8, 5];

/// Output-layer weights start at this fraction of the 1/√fan_in bound, so the
/// initial embedding sits close to |+…+⟩ for every input.
pub const DEFAULT_OUTPUT_GAIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    /// `weights[l][out][in]`
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// Partials of a scalar loss, shape-congruent with `MlpParams`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderGradient {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Shape(format!(
            "network needs at least 2 layers, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {layer_sizes:?}")));
    }
    Ok(())
}

pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    init_params_with_gain(layer_sizes, seed, DEFAULT_OUTPUT_GAIN)
}

/// Weights ~ U(−a, a) with a = 1/√fan_in (times `output_gain` on the last
/// layer); biases zero.
pub fn init_params_with_gain(
    layer_sizes: &[usize],
    seed: u64,
    output_gain: f64,
) -> Result<MlpParams> {
    check_sizes(layer_sizes)?;
    let mut rng = seeded(seed);
    let n_layers = layer_sizes.len() - 1;
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for (l, pair) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut bound = 1.0 / (fan_in as f64).sqrt();
        if l == n_layers - 1 {
            bound *= output_gain;
        }
        let w: Vec<Vec<f64>> = (0..fan_out)
            .map(|_| {
                (0..fan_in)
                    .map(|_| rng.random_range(-1.0..1.0) * bound)
                    .collect()
            })
            .collect();
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|p| vec![vec![0.0; p[0]]; p[1]])
                .collect(),
            biases: layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        let n_layers = self.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::Shape(
                "layer count does not match layer_sizes".into(),
            ));
        }
        for (l, p) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].len() != p[1]
                || self.weights[l].iter().any(|row| row.len() != p[0])
                || self.biases[l].len() != p[1]
            {
                return Err(Error::Shape(format!("layer {l} does not chain as {p:?}")));
            }
        }
        if self
            .weights
            .iter()
            .flatten()
            .flatten()
            .chain(self.biases.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// The output must supply exactly 2n − 1 angles.
    pub fn check_for(&self, cfg: &FeatureMapConfig) -> Result<()> {
        self.validate()?;
        if self.output_size() != cfg.n_angles() {
            return Err(Error::Shape(format!(
                "network emits {} angles, feature map needs {}",
                self.output_size(),
                cfg.n_angles()
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Weights then biases, layer by layer, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().flatten());
            out.extend(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().flatten().chain(b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

impl EmbedderGradient {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let z = MlpParams::zeros(&params.layer_sizes).expect("validated sizes");
        Self {
            weights: z.weights,
            biases: z.biases,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self
            .weights
            .iter_mut()
            .flatten()
            .flatten()
            .zip(other.weights.iter().flatten().flatten())
        {
            *a += b;
        }
        for (a, b) in self
            .biases
            .iter_mut()
            .flatten()
            .zip(other.biases.iter().flatten())
        {
            *a += b;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().flatten());
            out.extend(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.to_flat().iter().all(|&v| v == 0.0)
    }
}

/// Pre-activations and activations of every layer for one input.
struct Trace {
    /// activations[0] is the input; activations[l + 1] is the output of layer l.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each layer (before tanh).
    pre: Vec<Vec<f64>>,
}

fn affine(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bi)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bi)
        .collect()
}

fn run(params: &MlpParams, x: &[f64]) -> Result<Trace> {
    if x.len() != params.input_size() {
        return Err(Error::Shape(format!(
            "input of length {} for a network expecting {}",
            x.len(),
            params.input_size()
        )));
    }
    let n_layers = params.weights.len();
    let mut activations = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let z = affine(&params.weights[l], &params.biases[l], &activations[l]);
        let a: Vec<f64> = if l + 1 == n_layers {
            z.iter().map(|v| PI * v.tanh()).collect()
        } else {
            z.iter().map(|v| v.tanh()).collect()
        };
        pre.push(z);
        activations.push(a);
    }
    Ok(Trace { activations, pre })
}

/// Raw network output (no feature-map shape check).
pub fn forward_raw(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(run(params, x)?
        .activations
        .pop()
        .expect("at least one layer"))
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<FeatureAngles> {
    FeatureAngles::new(forward_raw(params, x)?)
}

pub fn backward(params: &MlpParams, x: &[f64], upstream: &[f64]) -> Result<EmbedderGradient> {
    backward_masked(params, x, upstream, &[])
}

/// Backpropagation with optional frozen layers; `frozen[l] == true` leaves
/// layer l's weight and bias gradient exactly zero.
pub fn backward_masked(
    params: &MlpParams,
    x: &[f64],
    upstream: &[f64],
    frozen: &[bool],
) -> Result<EmbedderGradient> {
    if upstream.len() != params.output_size() {
        return Err(Error::Shape(format!(
            "upstream of length {} for {} outputs",
            upstream.len(),
            params.output_size()
        )));
    }
    let trace = run(params, x)?;
    let n_layers = params.weights.len();
    let mut grad = EmbedderGradient::zeros_like(params);

    // delta = dL/d(pre-activation) of the current layer.
    let mut delta: Vec<f64> = trace.pre[n_layers - 1]
        .iter()
        .zip(upstream)
        .map(|(z, u)| {
            let t = z.tanh();
            u * PI * (1.0 - t * t)
        })
        .collect();

    for l in (0..n_layers).rev() {
        let input = &trace.activations[l];
        if !frozen.get(l).copied().unwrap_or(false) {
            for (o, d) in delta.iter().enumerate() {
                grad.biases[l][o] = *d;
                for (i, a) in input.iter().enumerate() {
                    grad.weights[l][o][i] = d * a;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through W and the previous tanh.
        let w = &params.weights[l];
        delta = (0..input.len())
            .map(|i| {
                let back: f64 = delta.iter().enumerate().map(|(o, d)| d * w[o][i]).sum();
                back * (1.0 - input[i] * input[i])
            })
            .collect();
    }
    Ok(grad)
}

/// Source of the feature-map angles for a data point.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// PCA features used as the angles directly.
    RawZz,
    /// Angles produced by a trained network.
    Nqe(MlpParams),
}

impl Embedding {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Embedding::RawZz => "raw-zz",
            Embedding::Nqe(_) => "nqe",
        }
    }

    pub fn angles(&self, x: &[f64]) -> Result<FeatureAngles> {
        match self {
            Embedding::RawZz => FeatureAngles::new(x.to_vec()),
            Embedding::Nqe(p) => forward(p, x),
        }
    }

    pub fn state(&self, cfg: &FeatureMapConfig, x: &[f64]) -> Result<StateVector> {
        embed_state(cfg, &self.angles(x)?)
    }
}
