//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here works on row-major `ComplexMatrix` values of dimension at
//! most 2^5 (plus one probe qubit), so no sparsity or blocking is attempted.
//! Qubit 1 is the most significant bit of a basis index throughout the crate.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance on state-vector norms and density-matrix traces.
pub const NORM_TOL: f64 = 1e-10;
/// Entrywise tolerance accepted when checking Hermiticity of solver input.
pub const HERMITIAN_TOL: f64 = 1e-8;
/// Off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-12;
/// Hard cap on Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Most negative eigenvalue a density matrix may have.
pub const PSD_TOL: f64 = 1e-9;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested real rows; handy for Pauli literals in tests.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| Complex64::new(x, 0.0)))
            .collect();
        Self::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn diagonal(entries: &[Complex64]) -> Self {
        let dim = entries.len();
        let mut m = Self::zeros(dim, dim);
        for (i, &z) in entries.iter().enumerate() {
            m.data[i * dim + i] = z;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, z: Complex64) {
        self.data[r * self.cols + c] = z;
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn trace(&self) -> Result<Complex64> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self.get(i, i)).sum())
    }

    /// Frobenius norm sqrt(Tr(A†A)).
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (i..self.cols).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol)
            })
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.is_square()
            && matmul(&adjoint(self), self)
                .map(|p| p.max_abs_diff(&Self::identity(self.rows)) <= tol)
                .unwrap_or(false)
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = ComplexMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == ZERO {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Kronecker product with `a` as the leading (more significant) factor.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (p, q) = (b.rows, b.cols);
    let rows = a.rows * p;
    let cols = a.cols * q;
    let mut out = ComplexMatrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a.get(i, j);
            for k in 0..p {
                for l in 0..q {
                    out.data[(i * p + k) * cols + (j * q + l)] = aij * b.get(k, l);
                }
            }
        }
    }
    out
}

/// Kronecker product of a list, leftmost factor most significant.
pub fn kron_all(factors: &[ComplexMatrix]) -> ComplexMatrix {
    factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| kron(&acc, f))
}

pub fn adjoint(a: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.data[j * a.rows + i] = a.get(i, j).conj();
        }
    }
    out
}

/// Tr(a) / dim, where dim must be a power of two.
pub fn normalized_trace(a: &ComplexMatrix) -> Result<Complex64> {
    if !a.is_square() || !a.rows.is_power_of_two() {
        return Err(Error::Shape(format!(
            "normalized trace needs a square power-of-two matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    Ok(a.trace()? / a.rows as f64)
}

/// Diagonal unitary with entries e^{i·phase}.
pub fn matrix_exp_diagonal(diag_phases: &[f64]) -> Result<ComplexMatrix> {
    if !diag_phases.len().is_power_of_two() {
        return Err(Error::Shape(format!(
            "diagonal of length {} is not a power of two",
            diag_phases.len()
        )));
    }
    let entries: Vec<Complex64> = diag_phases
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    Ok(ComplexMatrix::diagonal(&entries))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
///
/// Cyclic complex Jacobi: each rotation zeroes one off-diagonal pair (p, q)
/// after a diagonal phase makes the pivot real. Sweeps stop once the
/// off-diagonal Frobenius norm drops below `JACOBI_TOL` (relative to the
/// matrix norm when that exceeds one).
pub fn hermitian_eigenvalues(a: &ComplexMatrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "eigenvalues of non-square {}x{} matrix",
            a.rows, a.cols
        )));
    }
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::Domain("matrix is not Hermitian".into()));
    }
    let n = a.rows;
    // Symmetrize so that round-off in the input cannot stall convergence.
    let mut m = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = (a.get(i, j) + a.get(j, i).conj()) * 0.5;
            m.set(i, j, v);
        }
        let d = m.get(i, i).re;
        m.set(i, i, Complex64::new(d, 0.0));
    }
    let scale = a.frobenius_norm().max(1.0);
    let off = |m: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m.get(i, j).norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&m) > JACOBI_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = m.get(p, p).re;
                let aqq = m.get(q, q).re;
                // apq = mag * e^{i·alpha}; rotate in the real plane after removing the phase.
                let phase = apq / mag;
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Columns p, q: A <- A J with J = [[c, s·phase], [-s·conj(phase), c]]
                let sp = phase * s;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, akp * c - akq * sp.conj());
                    m.set(k, q, akp * sp + akq * c);
                }
                // Rows p, q: A <- J† A
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, apk * c - aqk * sp);
                    m.set(q, k, apk * sp.conj() + aqk * c);
                }
                m.set(p, q, ZERO);
                m.set(q, p, ZERO);
                let dp = m.get(p, p).re;
                let dq = m.get(q, q).re;
                m.set(p, p, Complex64::new(dp, 0.0));
                m.set(q, q, Complex64::new(dq, 0.0));
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i).re).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}

/// Pure state over `n_qubits` with unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::Shape(format!(
                "state dimension {dim} is not a power of two"
            )));
        }
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Domain(format!("state norm² {norm} is not 1")));
        }
        Ok(Self {
            n_qubits: dim.trailing_zeros() as usize,
            amplitudes,
        })
    }

    /// Computational basis state |index⟩.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[index] = ONE;
        Self {
            n_qubits,
            amplitudes,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn evolve(&self, u: &ComplexMatrix) -> Result<Self> {
        Self::new(u.apply(&self.amplitudes)?)
    }

    pub fn projector(&self) -> DensityMatrix {
        let dim = self.amplitudes.len();
        let mut m = ComplexMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, self.amplitudes[i] * self.amplitudes[j].conj());
            }
        }
        DensityMatrix {
            n_qubits: self.n_qubits,
            matrix: m,
        }
    }
}

/// Mixed state: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates all density-matrix invariants, including PSD via the eigensolver.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let dm = Self::from_matrix_unchecked(matrix)?;
        dm.validate()?;
        Ok(dm)
    }

    /// Checks shape only. Callers that construct states by unitary evolution or
    /// convex mixing use this to skip the eigensolve.
    pub(crate) fn from_matrix_unchecked(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || !matrix.rows().is_power_of_two() {
            return Err(Error::Shape(format!(
                "density matrix must be square with power-of-two dimension, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(Self {
            n_qubits: matrix.rows().trailing_zeros() as usize,
            matrix,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.matrix.is_hermitian(NORM_TOL) {
            return Err(Error::Domain("density matrix is not Hermitian".into()));
        }
        let tr = self.matrix.trace()?;
        if (tr - ONE).norm() > NORM_TOL {
            return Err(Error::Domain(format!("density matrix trace {tr} is not 1")));
        }
        let min = hermitian_eigenvalues(&self.matrix)?[0];
        if min < -PSD_TOL {
            return Err(Error::Domain(format!(
                "density matrix has negative eigenvalue {min}"
            )));
        }
        Ok(())
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        Self {
            n_qubits,
            matrix: ComplexMatrix::identity(dim).scale(Complex64::new(1.0 / dim as f64, 0.0)),
        }
    }

    /// Equal-weight mixture of pure states.
    pub fn mixture(states: &[StateVector]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::Domain("mixture of zero states".into()))?;
        let dim = first.amplitudes.len();
        let w = 1.0 / states.len() as f64;
        let mut m = ComplexMatrix::zeros(dim, dim);
        for s in states {
            if s.amplitudes.len() != dim {
                return Err(Error::Shape(
                    "mixture of states with different dimensions".into(),
                ));
            }
            for i in 0..dim {
                let ai = s.amplitudes[i] * w;
                for j in 0..dim {
                    let cur = m.get(i, j);
                    m.set(i, j, cur + ai * s.amplitudes[j].conj());
                }
            }
        }
        Self::from_matrix_unchecked(m)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// U ρ U†
    pub fn evolve(&self, u: &ComplexMatrix) -> Result<Self> {
        let m = matmul(&matmul(u, &self.matrix)?, &adjoint(u))?;
        Self::from_matrix_unchecked(m)
    }

    /// Tr(O ρ), real part; `observable` is assumed Hermitian.
    pub fn expectation(&self, observable: &ComplexMatrix) -> Result<f64> {
        Ok(matmul(observable, &self.matrix)?.trace()?.re)
    }
}

/// Standard single-qubit gates.
pub mod gates {
    use super::*;

    pub fn hadamard() -> ComplexMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        ComplexMatrix::from_real_rows(&[&[h, h], &[h, -h]]).expect("static shape")
    }

    pub fn pauli_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).expect("static shape")
    }

    pub fn pauli_y() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, 2, vec![ZERO, -Complex64::i(), Complex64::i(), ZERO])
            .expect("static shape")
    }

    pub fn pauli_z() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).expect("static shape")
    }

    /// exp(-i θ Y / 2)
    pub fn ry(theta: f64) -> ComplexMatrix {
        let (s, c) = (theta / 2.0).sin_cos();
        ComplexMatrix::from_real_rows(&[&[c, -s], &[s, c]]).expect("static shape")
    }

    /// Single-qubit gate acting on `qubit` (1-based, 1 = most significant) of `n` qubits.
    pub fn embed(gate: &ComplexMatrix, qubit: usize, n: usize) -> ComplexMatrix {
        let factors: Vec<ComplexMatrix> = (1..=n)
            .map(|k| {
                if k == qubit {
                    gate.clone()
                } else {
                    ComplexMatrix::identity(2)
                }
            })
            .collect();
        kron_all(&factors)
    }

    /// CNOT on `n` qubits, 1-based control/target indices.
    pub fn cnot(control: usize, target: usize, n: usize) -> ComplexMatrix {
        let dim = 1 << n;
        let cbit = 1 << (n - control);
        let tbit = 1 << (n - target);
        let mut m = ComplexMatrix::zeros(dim, dim);
        for b in 0..dim {
            let out = if b & cbit != 0 { b ^ tbit } else { b };
            m.set(out, b, ONE);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::gates::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
        let data = (0..r * c)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_vec(r, c, data).unwrap()
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let a = random_matrix(rng, n, n);
        a.add(&adjoint(&a)).unwrap().scale(Complex64::new(0.5, 0.0))
    }

    /// exp(iH) through Gram-Schmidt of a random matrix is overkill; a product
    /// of random Ry/phase layers is unitary by construction.
    fn random_unitary(rng: &mut ChaCha8Rng, n_qubits: usize) -> ComplexMatrix {
        let dim = 1 << n_qubits;
        let mut u = ComplexMatrix::identity(dim);
        for _ in 0..3 {
            for q in 1..=n_qubits {
                u = matmul(&embed(&ry(rng.random_range(0.0..6.0)), q, n_qubits), &u).unwrap();
            }
            let phases: Vec<f64> = (0..dim).map(|_| rng.random_range(-PI..PI)).collect();
            u = matmul(&matrix_exp_diagonal(&phases).unwrap(), &u).unwrap();
            if n_qubits > 1 {
                u = matmul(&cnot(1, 2, n_qubits), &u).unwrap();
            }
        }
        u
    }

    #[test]
    fn matmul_identity_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 2, 2);
        assert_eq!(matmul(&ComplexMatrix::identity(2), &a).unwrap(), a);
        let xx = matmul(&pauli_x(), &pauli_x()).unwrap();
        assert_eq!(xx, ComplexMatrix::identity(2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 3, 3);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = ZERO;
                for k in 0..3 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error() {
        let a = ComplexMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn kron_cases() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), ComplexMatrix::identity(4));
        let zi = kron(&pauli_z(), &i2);
        let expected = ComplexMatrix::diagonal(&[ONE, ONE, -ONE, -ONE]);
        assert_eq!(zi, expected);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let [a, b, c, d] = std::array::from_fn(|_| random_matrix(&mut rng, 2, 2));
        let lhs = matmul(&kron(&a, &b), &kron(&c, &d)).unwrap();
        let rhs = kron(&matmul(&a, &c).unwrap(), &matmul(&b, &d).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn adjoint_cases() {
        let i4 = ComplexMatrix::identity(4);
        assert_eq!(adjoint(&i4), i4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 3, 2);
        assert_eq!(adjoint(&adjoint(&a)), a);
        let u = random_unitary(&mut rng, 3);
        let p = matmul(&adjoint(&u), &u).unwrap();
        assert!(p.max_abs_diff(&ComplexMatrix::identity(8)) < 1e-10);
    }

    #[test]
    fn normalized_trace_cases() {
        let i8 = ComplexMatrix::identity(8);
        assert!((normalized_trace(&i8).unwrap() - ONE).norm() < 1e-15);
        let zii = embed(&pauli_z(), 1, 3);
        assert!(normalized_trace(&zii).unwrap().norm() < 1e-15);
        // e^{iπZ} = -I, built directly from its diagonal.
        let e = matrix_exp_diagonal(&[PI, -PI]).unwrap();
        let m = kron(&e, &ComplexMatrix::identity(4));
        assert!((normalized_trace(&m).unwrap() + ONE).norm() < 1e-12);

        assert!(normalized_trace(&ComplexMatrix::identity(3)).is_err());
        assert!(normalized_trace(&ComplexMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn eigenvalues_known_spectra() {
        let d = ComplexMatrix::from_real_rows(&[&[0.25, 0.0], &[0.0, 0.75]]).unwrap();
        let e = hermitian_eigenvalues(&d).unwrap();
        assert!((e[0] - 0.25).abs() < 1e-9 && (e[1] - 0.75).abs() < 1e-9);
        let e = hermitian_eigenvalues(&pauli_x()).unwrap();
        assert!((e[0] + 1.0).abs() < 1e-9 && (e[1] - 1.0).abs() < 1e-9);
        let e = hermitian_eigenvalues(&pauli_y()).unwrap();
        assert!((e[0] + 1.0).abs() < 1e-9 && (e[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_trace_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [4, 8, 16] {
            let h = random_hermitian(&mut rng, n);
            let e = hermitian_eigenvalues(&h).unwrap();
            assert!(e.windows(2).all(|w| w[0] <= w[1]));
            let tr = h.trace().unwrap().re;
            let tr2 = matmul(&h, &h).unwrap().trace().unwrap().re;
            assert!((e.iter().sum::<f64>() - tr).abs() < 1e-9);
            assert!((e.iter().map(|x| x * x).sum::<f64>() - tr2).abs() < 1e-8);
        }
    }

    #[test]
    fn eigenvalues_reject_non_hermitian() {
        let a = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert!(matches!(hermitian_eigenvalues(&a), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_diagonal_cases() {
        assert_eq!(
            matrix_exp_diagonal(&[0.0; 4]).unwrap(),
            ComplexMatrix::identity(4)
        );
        let m = matrix_exp_diagonal(&[PI; 4]).unwrap();
        assert!(m.max_abs_diff(&ComplexMatrix::identity(4).scale(-ONE)) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phases: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let u = matrix_exp_diagonal(&phases).unwrap();
        let p = matmul(&u, &adjoint(&u)).unwrap();
        assert!(p.max_abs_diff(&ComplexMatrix::identity(8)) < 1e-12);
        assert!(matrix_exp_diagonal(&[0.0; 3]).is_err());
    }

    #[test]
    fn gates_are_unitary() {
        for g in [hadamard(), pauli_x(), pauli_y(), pauli_z(), ry(0.3)] {
            assert!(g.is_unitary(1e-12));
        }
        assert!(cnot(2, 3, 3).is_unitary(0.0));
        let cc = matmul(&cnot(2, 3, 3), &cnot(2, 3, 3)).unwrap();
        assert_eq!(cc, ComplexMatrix::identity(8));
    }

    #[test]
    fn density_matrix_invariants() {
        let plus = StateVector::new(vec![Complex64::new(0.5f64.sqrt(), 0.0); 2]).unwrap();
        let rho = plus.projector();
        rho.validate().unwrap();
        let mixed = DensityMatrix::mixture(&[plus, StateVector::basis(1, 0)]).unwrap();
        mixed.validate().unwrap();
        assert!(StateVector::new(vec![ONE, ONE]).is_err());
        let bad = ComplexMatrix::from_real_rows(&[&[1.5, 0.0], &[0.0, -0.5]]).unwrap();
        assert!(DensityMatrix::new(bad).is_err());
    }

    #[test]
    fn rejects_non_finite_entries() {
        let r = ComplexMatrix::from_vec(1, 1, vec![Complex64::new(f64::NAN, 0.0)]);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
