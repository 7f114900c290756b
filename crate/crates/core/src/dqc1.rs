//! One-clean-qubit estimation of the normalized Hilbert–Schmidt inner product
//! Tr[V(φ₁)V†(φ₂)]/2ⁿ.
//!
//! The probe is qubit 1 (most significant) of an (n+1)-qubit register that
//! starts in |0⟩⟨0| ⊗ I/2ⁿ. The sequence H₁ · V_c†(φ₂) · V_c(φ₁) · H₁, with
//! V_c = |0⟩⟨0|⊗I + |1⟩⟨1|⊗V, leaves ⟨σz⟩ on the probe equal to the real part
//! of the inner product and ⟨σy⟩ equal to minus its imaginary part.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuremap::{build_feature_map, FeatureAngles, FeatureMapConfig};
use crate::qmath::{
    adjoint, gates, kron, matmul, normalized_trace, ComplexMatrix, DensityMatrix, StateVector,
};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dqc1Outcome {
    pub expectation_z: f64,
    /// Only produced by the exact simulator.
    pub expectation_y: Option<f64>,
    /// 0 means exact mode.
    pub shots: u64,
    pub std_error: f64,
}

/// Shot budget for estimating a ±1-valued mean to within `epsilon` with
/// failure probability at most `failure_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotPlan {
    pub epsilon: f64,
    pub failure_prob: f64,
    pub shots: u64,
}

/// Tr(v1 · v2†) / dim.
pub fn hs_inner_exact(v1: &ComplexMatrix, v2: &ComplexMatrix) -> Result<Complex64> {
    if v1.rows() != v2.rows() || v1.cols() != v2.cols() {
        return Err(Error::Shape(format!(
            "inner product of {}x{} and {}x{}",
            v1.rows(),
            v1.cols(),
            v2.rows(),
            v2.cols()
        )));
    }
    normalized_trace(&matmul(v1, &adjoint(v2))?)
}

/// Re Tr[V(φ₁)V†(φ₂)]/2ⁿ straight from the feature-map matrices.
pub fn hs_real(cfg: &FeatureMapConfig, phi1: &FeatureAngles, phi2: &FeatureAngles) -> Result<f64> {
    let v1 = build_feature_map(cfg, phi1)?;
    let v2 = build_feature_map(cfg, phi2)?;
    Ok(hs_inner_exact(&v1, &v2)?.re)
}

/// |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ v
fn controlled(v: &ComplexMatrix) -> ComplexMatrix {
    let dim = v.rows();
    let mut out = ComplexMatrix::identity(2 * dim);
    for i in 0..dim {
        for j in 0..dim {
            out.set(dim + i, dim + j, v.get(i, j));
        }
    }
    out
}

/// The full (n+1)-qubit interferometer unitary, applied right to left.
pub fn build_dqc1_sequence(
    cfg: &FeatureMapConfig,
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
) -> Result<ComplexMatrix> {
    let n_total = cfg.n_qubits + 1;
    let h1 = gates::embed(&gates::hadamard(), 1, n_total);
    let vc1 = controlled(&build_feature_map(cfg, phi1)?);
    let vc2_dag = adjoint(&controlled(&build_feature_map(cfg, phi2)?));
    let mut u = matmul(&vc1, &h1)?;
    u = matmul(&vc2_dag, &u)?;
    matmul(&h1, &u)
}

/// |0⟩⟨0| ⊗ I/2ⁿ
pub fn initial_state(n_qubits: usize) -> DensityMatrix {
    let probe = StateVector::basis(1, 0).projector();
    let m = kron(
        probe.matrix(),
        DensityMatrix::maximally_mixed(n_qubits).matrix(),
    );
    DensityMatrix::from_matrix_unchecked(m).expect("power-of-two square")
}

/// Density-matrix evolution of the probe-qubit protocol.
pub fn dqc1_exact(
    cfg: &FeatureMapConfig,
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
) -> Result<Dqc1Outcome> {
    let u = build_dqc1_sequence(cfg, phi1, phi2)?;
    let rho = initial_state(cfg.n_qubits).evolve(&u)?;
    let n_total = cfg.n_qubits + 1;
    let z = rho.expectation(&gates::embed(&gates::pauli_z(), 1, n_total))?;
    let y = rho.expectation(&gates::embed(&gates::pauli_y(), 1, n_total))?;
    Ok(Dqc1Outcome {
        expectation_z: z.clamp(-1.0, 1.0),
        expectation_y: Some(y.clamp(-1.0, 1.0)),
        shots: 0,
        std_error: 0.0,
    })
}

/// Mean of `shots` independent ±1 outcomes with P(+1) = (1 + mean)/2.
pub(crate) fn sample_pm1(mean: f64, shots: u64, seed: u64) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::Domain("shots must be at least 1".into()));
    }
    let p_plus = ((1.0 + mean) / 2.0).clamp(0.0, 1.0);
    let mut rng = seeded(seed);
    let mut plus = 0u64;
    for _ in 0..shots {
        if rng.random::<f64>() < p_plus {
            plus += 1;
        }
    }
    let n = shots as f64;
    let m = (2.0 * plus as f64 - n) / n;
    // Unbiased sample variance of ±1 outcomes.
    let var = if shots > 1 {
        ((1.0 - m * m) * n / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((m, (var / n).sqrt()))
}

/// Shot-sampled probe measurement; deterministic for a fixed seed.
pub fn dqc1_sampled(
    cfg: &FeatureMapConfig,
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
    shots: u64,
    seed: u64,
) -> Result<Dqc1Outcome> {
    let exact = dqc1_exact(cfg, phi1, phi2)?;
    let (mean, std_error) = sample_pm1(exact.expectation_z, shots, seed)?;
    Ok(Dqc1Outcome {
        expectation_z: mean,
        expectation_y: None,
        shots,
        std_error,
    })
}

/// shots = ⌈2 ln(2/p) / ε²⌉, the Hoeffding bound for outcomes in [−1, 1].
pub fn plan_shots(epsilon: f64, failure_prob: f64) -> Result<ShotPlan> {
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 2]")));
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::Domain(format!(
            "failure probability {failure_prob} outside (0, 1)"
        )));
    }
    let raw = 2.0 * (2.0 / failure_prob).ln() / (epsilon * epsilon);
    // Guard against 737.9999999 style round-off pushing ceil down a step.
    let shots = (raw - 1e-9).ceil().max(1.0) as u64;
    Ok(ShotPlan {
        epsilon,
        failure_prob,
        shots,
    })
}

/// How probe expectations are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Exact,
    Sampled {
        shots: u64,
    },
}

impl Estimator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Estimator::Sampled { shots: 0 } => Err(Error::Domain(
                "sampled estimator needs at least 1 shot".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Replace the exact value `mean` of a ±1 observable by its shot estimate.
    pub fn observe(&self, mean: f64, seed: u64) -> Result<f64> {
        match *self {
            Estimator::Exact => Ok(mean),
            Estimator::Sampled { shots } => Ok(sample_pm1(mean, shots, seed)?.0),
        }
    }
}

/// Dispatch to `dqc1_exact` or `dqc1_sampled`.
pub fn estimate(
    cfg: &FeatureMapConfig,
    phi1: &FeatureAngles,
    phi2: &FeatureAngles,
    estimator: Estimator,
    seed: u64,
) -> Result<Dqc1Outcome> {
    match estimator {
        Estimator::Exact => dqc1_exact(cfg, phi1, phi2),
        Estimator::Sampled { shots } => dqc1_sampled(cfg, phi1, phi2, shots, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg() -> FeatureMapConfig {
        FeatureMapConfig::default()
    }

    fn angles(v: &[f64]) -> FeatureAngles {
        FeatureAngles::new(v.to_vec()).unwrap()
    }

    fn random_angles(rng: &mut ChaCha8Rng) -> FeatureAngles {
        angles(
            &(0..5)
                .map(|_| rng.random_range(-PI..PI))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn hs_inner_cases() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let u = build_feature_map(&c, &random_angles(&mut rng)).unwrap();
        assert!((hs_inner_exact(&u, &u).unwrap() - Complex64::new(1.0, 0.0)).norm() < 1e-12);

        let v0 = build_feature_map(&c, &FeatureAngles::zeros(&c)).unwrap();
        let vpi = build_feature_map(&c, &angles(&[PI, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((hs_inner_exact(&vpi, &v0).unwrap() + 1.0).norm() < 1e-12);
        let vhalf = build_feature_map(&c, &angles(&[PI / 2.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(hs_inner_exact(&vhalf, &v0).unwrap().norm() < 1e-12);

        assert!(hs_inner_exact(&v0, &ComplexMatrix::identity(4)).is_err());
    }

    #[test]
    fn sequence_is_unitary_and_trivial_on_equal_angles() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let phi = random_angles(&mut rng);
        let u = build_dqc1_sequence(&c, &phi, &random_angles(&mut rng)).unwrap();
        assert!(u.is_unitary(1e-10));
        let out = dqc1_exact(&c, &phi, &phi).unwrap();
        assert!((out.expectation_z - 1.0).abs() < 1e-12);
        assert!(out.expectation_y.unwrap().abs() < 1e-12);
    }

    #[test]
    fn exact_probe_matches_inner_product() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let p1 = random_angles(&mut rng);
            let p2 = random_angles(&mut rng);
            let hs = hs_inner_exact(
                &build_feature_map(&c, &p1).unwrap(),
                &build_feature_map(&c, &p2).unwrap(),
            )
            .unwrap();
            let out = dqc1_exact(&c, &p1, &p2).unwrap();
            assert!((out.expectation_z - hs.re).abs() < 1e-10);
            // Sign convention: the probe's ⟨σy⟩ reads out −Im.
            assert!((out.expectation_y.unwrap() + hs.im).abs() < 1e-10);
            assert_eq!(out.shots, 0);
            assert_eq!(out.std_error, 0.0);
        }
    }

    #[test]
    fn exact_pi_case() {
        let c = cfg();
        let out = dqc1_exact(
            &c,
            &angles(&[PI, 0.0, 0.0, 0.0, 0.0]),
            &FeatureAngles::zeros(&c),
        )
        .unwrap();
        assert!((out.expectation_z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_is_symmetric_in_real_part() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let p1 = random_angles(&mut rng);
            let p2 = random_angles(&mut rng);
            let a = dqc1_exact(&c, &p1, &p2).unwrap();
            let b = dqc1_exact(&c, &p2, &p1).unwrap();
            assert!((a.expectation_z - b.expectation_z).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_degenerate_and_deterministic() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let phi = random_angles(&mut rng);
        for shots in [1, 10, 1000] {
            let out = dqc1_sampled(&c, &phi, &phi, shots, 7).unwrap();
            assert_eq!(out.expectation_z, 1.0);
            assert_eq!(out.std_error, 0.0);
        }
        let other = random_angles(&mut rng);
        let a = dqc1_sampled(&c, &phi, &other, 500, 99).unwrap();
        let b = dqc1_sampled(&c, &phi, &other, 500, 99).unwrap();
        assert_eq!(a, b);
        assert!(dqc1_sampled(&c, &phi, &other, 0, 1).is_err());
    }

    #[test]
    fn sampled_zero_mean_concentrates() {
        let c = cfg();
        let p1 = angles(&[PI / 2.0, 0.0, 0.0, 0.0, 0.0]);
        let p0 = FeatureAngles::zeros(&c);
        for seed in 0..20 {
            let out = dqc1_sampled(&c, &p1, &p0, 10_000, seed).unwrap();
            assert!(
                out.expectation_z.abs() < 0.05,
                "seed {seed}: {}",
                out.expectation_z
            );
        }
    }

    #[test]
    fn std_error_shrinks_with_shots() {
        let c = cfg();
        let p1 = angles(&[0.4, -0.3, 0.2, 0.9, -1.1]);
        let p0 = FeatureAngles::zeros(&c);
        let small = dqc1_sampled(&c, &p1, &p0, 100, 3).unwrap();
        let large = dqc1_sampled(&c, &p1, &p0, 1_000_000, 3).unwrap();
        assert!(large.std_error < small.std_error);
    }

    #[test]
    fn sampled_is_unbiased() {
        let c = cfg();
        let p1 = angles(&[0.4, -0.3, 0.2, 0.9, -1.1]);
        let p0 = FeatureAngles::zeros(&c);
        let exact = dqc1_exact(&c, &p1, &p0).unwrap().expectation_z;
        let runs: Vec<Dqc1Outcome> = (0..100)
            .map(|s| dqc1_sampled(&c, &p1, &p0, 1000, s).unwrap())
            .collect();
        let mean = runs.iter().map(|o| o.expectation_z).sum::<f64>() / runs.len() as f64;
        let pooled =
            (runs.iter().map(|o| o.std_error.powi(2)).sum::<f64>()).sqrt() / runs.len() as f64;
        assert!(
            (mean - exact).abs() < 3.0 * pooled,
            "{mean} vs {exact} (se {pooled})"
        );
    }

    #[test]
    fn plan_shots_values() {
        assert_eq!(plan_shots(0.1, 0.05).unwrap().shots, 738);
        assert_eq!(plan_shots(2.0, 0.5).unwrap().shots, 1);
        for eps in [0.05, 0.1, 0.2, 0.4] {
            for p in [0.01, 0.05, 0.2] {
                let a = plan_shots(eps, p).unwrap().shots as f64;
                let b = plan_shots(eps / 2.0, p).unwrap().shots as f64;
                assert!(
                    (b / a - 4.0).abs() < 4.0 / a + 1e-9,
                    "{eps} {p}: {a} -> {b}"
                );
                assert!(b >= 2.0 * (2.0 / p).ln() / (eps * eps / 4.0) - 1e-9);
            }
        }
        assert!(plan_shots(0.0, 0.05).is_err());
        assert!(plan_shots(2.5, 0.05).is_err());
        assert!(plan_shots(0.1, 0.0).is_err());
        assert!(plan_shots(0.1, 1.0).is_err());
    }
}
