//! ZZ feature map V(φ) = {exp[i Σ_k φ_k Z_k + φ_{n+k} Z_k Z_{k+1}] H^⊗n}^M.
//!
//! The exponent is diagonal in the computational basis, so each layer is a
//! diagonal phase matrix times a Hadamard on every qubit. ZZ terms couple
//! open-chain neighbours (k, k+1) only, giving 2n−1 angles in total.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{gates, kron_all, matmul, matrix_exp_diagonal, ComplexMatrix, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMapConfig {
    pub n_qubits: usize,
    pub layers: usize,
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        Self {
            n_qubits: 3,
            layers: 1,
        }
    }
}

impl FeatureMapConfig {
    pub fn new(n_qubits: usize, layers: usize) -> Result<Self> {
        let cfg = Self { n_qubits, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 2 || self.n_qubits > 5 {
            return Err(Error::Domain(format!(
                "feature map needs 2..=5 qubits, got {}",
                self.n_qubits
            )));
        }
        if self.layers == 0 {
            return Err(Error::Domain("feature map needs at least one layer".into()));
        }
        Ok(())
    }

    /// Number of angles, 2n − 1.
    pub fn n_angles(&self) -> usize {
        2 * self.n_qubits - 1
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }
}

/// The 2n−1 angles driving the feature map: n single-Z coefficients followed
/// by n−1 nearest-neighbour ZZ coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureAngles(Vec<f64>);

impl FeatureAngles {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite feature angle".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(cfg: &FeatureMapConfig) -> Self {
        Self(vec![0.0; cfg.n_angles()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn with_offset(&self, index: usize, delta: f64) -> Self {
        let mut v = self.0.clone();
        v[index] += delta;
        Self(v)
    }

    fn check(&self, cfg: &FeatureMapConfig) -> Result<()> {
        if self.0.len() != cfg.n_angles() {
            return Err(Error::Shape(format!(
                "{} angles for a {}-qubit feature map (expected {})",
                self.0.len(),
                cfg.n_qubits,
                cfg.n_angles()
            )));
        }
        Ok(())
    }
}

/// Pauli-Z eigenvalue (+1 for bit 0, −1 for bit 1) of 1-based qubit `k` in basis index `b`.
#[inline]
pub fn z_eigenvalue(b: usize, k: usize, n: usize) -> f64 {
    if (b >> (n - k)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// θ_b(φ) = Σ_k φ_k z_k(b) + Σ_k φ_{n+k} z_k(b) z_{k+1}(b) for every basis index b.
pub fn diagonal_phases(cfg: &FeatureMapConfig, phi: &FeatureAngles) -> Result<Vec<f64>> {
    cfg.validate()?;
    phi.check(cfg)?;
    let n = cfg.n_qubits;
    let a = phi.values();
    Ok((0..cfg.dim())
        .map(|b| {
            let z: Vec<f64> = (1..=n).map(|k| z_eigenvalue(b, k, n)).collect();
            let single: f64 = (0..n).map(|k| a[k] * z[k]).sum();
            let pair: f64 = (0..n - 1).map(|k| a[n + k] * z[k] * z[k + 1]).sum();
            single + pair
        })
        .collect())
}

fn hadamard_all(n: usize) -> ComplexMatrix {
    kron_all(&vec![gates::hadamard(); n])
}

pub fn build_feature_map(cfg: &FeatureMapConfig, phi: &FeatureAngles) -> Result<ComplexMatrix> {
    let phases = diagonal_phases(cfg, phi)?;
    let layer = matmul(&matrix_exp_diagonal(&phases)?, &hadamard_all(cfg.n_qubits))?;
    let mut v = layer.clone();
    for _ in 1..cfg.layers {
        v = matmul(&layer, &v)?;
    }
    Ok(v)
}

/// |x⟩ = V(φ)|0…0⟩.
pub fn embed_state(cfg: &FeatureMapConfig, phi: &FeatureAngles) -> Result<StateVector> {
    let phases = diagonal_phases(cfg, phi)?;
    let dim = cfg.dim();
    let amp = 1.0 / (dim as f64).sqrt();
    // First layer on |0…0⟩ is a uniform superposition with phases e^{iθ_b}.
    let mut psi: Vec<Complex64> = phases
        .iter()
        .map(|&t| Complex64::from_polar(amp, t))
        .collect();
    if cfg.layers > 1 {
        let layer = matmul(&matrix_exp_diagonal(&phases)?, &hadamard_all(cfg.n_qubits))?;
        for _ in 1..cfg.layers {
            psi = layer.apply(&psi)?;
        }
    }
    StateVector::new(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{adjoint, normalized_trace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg3() -> FeatureMapConfig {
        FeatureMapConfig::default()
    }

    fn random_angles(rng: &mut ChaCha8Rng, cfg: &FeatureMapConfig) -> FeatureAngles {
        FeatureAngles::new(
            (0..cfg.n_angles())
                .map(|_| rng.random_range(-PI..PI))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_angles_give_hadamards() {
        let cfg = cfg3();
        let v = build_feature_map(&cfg, &FeatureAngles::zeros(&cfg)).unwrap();
        assert!(v.max_abs_diff(&hadamard_all(3)) < 1e-15);
    }

    #[test]
    fn unitary_for_random_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for layers in 1..=3 {
            let cfg = FeatureMapConfig::new(3, layers).unwrap();
            for _ in 0..10 {
                let v = build_feature_map(&cfg, &random_angles(&mut rng, &cfg)).unwrap();
                assert!(v.is_unitary(1e-10));
            }
        }
    }

    #[test]
    fn pi_on_first_qubit_is_global_sign() {
        let cfg = cfg3();
        let phi = FeatureAngles::new(vec![PI, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let v = build_feature_map(&cfg, &phi).unwrap();
        let v0 = build_feature_map(&cfg, &FeatureAngles::zeros(&cfg)).unwrap();
        let prod = matmul(&v, &adjoint(&v0)).unwrap();
        let minus_i = ComplexMatrix::identity(8).scale(Complex64::new(-1.0, 0.0));
        assert!(prod.max_abs_diff(&minus_i) < 1e-12);
    }

    #[test]
    fn angle_count_mismatch() {
        let cfg = cfg3();
        let phi = FeatureAngles::new(vec![0.0; 4]).unwrap();
        assert!(matches!(
            build_feature_map(&cfg, &phi),
            Err(Error::Shape(_))
        ));
        assert!(matches!(embed_state(&cfg, &phi), Err(Error::Shape(_))));
    }

    #[test]
    fn config_bounds() {
        assert!(FeatureMapConfig::new(1, 1).is_err());
        assert!(FeatureMapConfig::new(3, 0).is_err());
        assert!(FeatureMapConfig::new(6, 1).is_err());
    }

    #[test]
    fn embedded_state_moduli() {
        let cfg = cfg3();
        let s = embed_state(&cfg, &FeatureAngles::zeros(&cfg)).unwrap();
        for a in s.amplitudes() {
            assert!((a - Complex64::new(8f64.sqrt().recip(), 0.0)).norm() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let phi = random_angles(&mut rng, &cfg);
            let s = embed_state(&cfg, &phi).unwrap();
            let direct = build_feature_map(&cfg, &phi)
                .unwrap()
                .apply(StateVector::basis(3, 0).amplitudes())
                .unwrap();
            for (a, d) in s.amplitudes().iter().zip(&direct) {
                assert!((a.norm() - 8f64.sqrt().recip()).abs() < 1e-12);
                assert!((a - d).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn multilayer_state_matches_matrix() {
        let cfg = FeatureMapConfig::new(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let phi = random_angles(&mut rng, &cfg);
        let s = embed_state(&cfg, &phi).unwrap();
        let direct = build_feature_map(&cfg, &phi)
            .unwrap()
            .apply(StateVector::basis(3, 0).amplitudes())
            .unwrap();
        for (a, d) in s.amplitudes().iter().zip(&direct) {
            assert!((a - d).norm() < 1e-12);
        }
    }

    #[test]
    fn single_layer_overlap_closed_form() {
        let cfg = cfg3();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let p1 = random_angles(&mut rng, &cfg);
            let p2 = random_angles(&mut rng, &cfg);
            let v1 = build_feature_map(&cfg, &p1).unwrap();
            let v2 = build_feature_map(&cfg, &p2).unwrap();
            let prod = matmul(&v1, &adjoint(&v2)).unwrap();
            let direct = normalized_trace(&prod).unwrap();
            // Brute-force sum over basis states with explicit z-values.
            let mut closed = Complex64::new(0.0, 0.0);
            for b in 0..8usize {
                let z = |k: usize| if (b >> (3 - k)) & 1 == 0 { 1.0 } else { -1.0 };
                let theta = |a: &[f64]| {
                    a[0] * z(1)
                        + a[1] * z(2)
                        + a[2] * z(3)
                        + a[3] * z(1) * z(2)
                        + a[4] * z(2) * z(3)
                };
                closed += Complex64::from_polar(1.0, theta(p1.values()) - theta(p2.values()));
            }
            closed /= 8.0;
            assert!((direct - closed).norm() < 1e-12);
            // V1 V2† is diagonal for a single layer.
            for i in 0..8 {
                for j in 0..8 {
                    if i != j {
                        assert!(prod.get(i, j).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn two_pi_periodicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for layers in [1, 2] {
            let cfg = FeatureMapConfig::new(3, layers).unwrap();
            let phi = random_angles(&mut rng, &cfg);
            let v = build_feature_map(&cfg, &phi).unwrap();
            for k in 0..cfg.n_angles() {
                let shifted = build_feature_map(&cfg, &phi.with_offset(k, 2.0 * PI)).unwrap();
                assert!(v.max_abs_diff(&shifted) < 1e-10);
            }
        }
    }
}
