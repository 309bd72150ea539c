//! Dense-matrix oracle and small dense linear algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::operators::{OperatorSum, Pulse};
use crate::C64;

pub const DENSE_LIMIT: usize = 4096;

/// Exact dense matrix of an operator sum in the fixed basis order.
pub fn to_dense(op: &OperatorSum) -> Result<DMatrix<C64>> {
    let dim = op.spec().dim();
    if dim > DENSE_LIMIT {
        return Err(Error::DenseTooLarge { dim, limit: DENSE_LIMIT });
    }
    let mut m = DMatrix::zeros(dim, dim);
    for term in op.compiled() {
        for k in 0..dim as u64 {
            let (t, ph) = term.act(k);
            m[(t as usize, k as usize)] += ph;
        }
    }
    Ok(m)
}

/// Eigen-decomposition `H = V diag(E) V^dagger` of a Hermitian matrix.
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(h: &DMatrix<C64>) -> Self {
        let eig = h.clone().symmetric_eigen();
        HermitianEigen { values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    /// `exp(-i H t)`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let phases = DVector::from_iterator(self.values.len(), self.values.iter().map(|&e| C64::from_polar(1.0, -e * t)));
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |r, c| self.vectors[(r, c)] * phases[c]);
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i H t) psi`.
    pub fn evolve(&self, psi: &DVector<C64>, t: f64) -> DVector<C64> {
        let mut c = self.vectors.adjoint() * psi;
        for (i, e) in self.values.iter().enumerate() {
            c[i] *= C64::from_polar(1.0, -e * t);
        }
        &self.vectors * c
    }
}

pub fn expm_hermitian(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    HermitianEigen::new(h).propagator(t)
}

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// Apply a single-position matrix to a full-basis vector in place.
pub fn apply_local(spec: &LatticeSpec, pos: usize, m: &DMatrix<C64>, psi: &mut [C64]) {
    let d = spec.local_dim(pos);
    let stride = spec.stride(pos) as usize;
    let block = stride * d;
    let mut buf = vec![C64::new(0.0, 0.0); d];
    for base in (0..psi.len()).step_by(block) {
        for low in 0..stride {
            let at = |k: usize| base + low + k * stride;
            for (r, b) in buf.iter_mut().enumerate() {
                *b = (0..d).map(|c| m[(r, c)] * psi[at(c)]).sum();
            }
            for (k, b) in buf.iter().enumerate() {
                psi[at(k)] = *b;
            }
        }
    }
}

/// Dense unitary of a pulse on the full space.
pub fn pulse_matrix(spec: &LatticeSpec, pulse: &Pulse) -> Result<DMatrix<C64>> {
    let dim = spec.dim();
    if dim > DENSE_LIMIT {
        return Err(Error::DenseTooLarge { dim, limit: DENSE_LIMIT });
    }
    let mut u = DMatrix::<C64>::identity(dim, dim);
    for pos in pulse.positions(spec) {
        let m = pulse.local_unitary(spec, pos);
        for mut col in u.column_iter_mut() {
            apply_local(spec, pos, &m, col.as_mut_slice());
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, LatticeSpec};

    #[test]
    fn identity_to_identity() {
        let s = LatticeSpec::half(2, Boundary::Pbc).unwrap();
        let m = to_dense(&OperatorSum::identity(&s)).unwrap();
        assert_eq!(m, DMatrix::identity(16, 16));
    }

    #[test]
    fn rejects_large() {
        let s = LatticeSpec::half(7, Boundary::Pbc).unwrap();
        assert!(to_dense(&OperatorSum::identity(&s)).is_err());
    }

    #[test]
    fn pulse_matrix_conjugates_like_frame() {
        use crate::operators::{build_model, Couplings};
        let s = LatticeSpec::half(2, Boundary::Obc).unwrap();
        let m = build_model(&s, Couplings::new(1.0, 2.0, 0.3)).unwrap();
        let u = pulse_matrix(&s, &Pulse::TAU_X).unwrap();
        let lhs = u.adjoint() * to_dense(&m.h).unwrap() * &u;
        let rhs = to_dense(&m.h.frame(&[Pulse::TAU_X])).unwrap();
        assert!((lhs - rhs).iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn diagonal_propagator() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        let u = expm_hermitian(&h, std::f64::consts::FRAC_PI_2);
        assert!((u[(0, 0)] - C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((u[(1, 1)] - C64::new(0.0, 1.0)).norm() < 1e-14);
    }
}
