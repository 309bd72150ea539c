//! Monomial operator bases for a single site of dimension `d`.
//!
//! Every palette element acts as `P|k> = phase[k] |k + shift mod d>`. For `d = 2`
//! the elements are the Pauli matrices `I, X, Y, Z` written in the digit basis
//! where digit 1 is spin up, so `Z|0> = -|0>`. For `d >= 3` they are the Weyl
//! operators `X^a Z^b`. Both sets are orthogonal under the trace inner product
//! with norm `d`, and products of two elements are a phase times one element.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::C64;

#[derive(Clone, Debug)]
pub struct LocalOp {
    pub shift: usize,
    pub phases: Vec<C64>,
}

#[derive(Debug)]
pub struct Palette {
    d: usize,
    elems: Vec<LocalOp>,
    names: Vec<String>,
    /// `mul[a * n + b] = (c, phase)` with `P_a P_b = phase * P_c`.
    mul: Vec<(u8, C64)>,
    /// `dag[a] = (c, phase)` with `P_a^dagger = phase * P_c`.
    dag: Vec<(u8, C64)>,
    diagonal: Vec<bool>,
}

const MAX_DIM: usize = 16;

static PALETTES: [OnceLock<Palette>; MAX_DIM + 1] = [const { OnceLock::new() }; MAX_DIM + 1];

/// The shared palette for local dimension `d` (2 ..= 16).
pub fn palette(d: usize) -> &'static Palette {
    assert!((2..=MAX_DIM).contains(&d), "local dimension {d} unsupported");
    PALETTES[d].get_or_init(|| Palette::build(d))
}

impl Palette {
    fn build(d: usize) -> Palette {
        let (elems, names) = if d == 2 { pauli() } else { weyl(d) };
        let n = elems.len();
        let mut p = Palette {
            d,
            elems,
            names,
            mul: Vec::with_capacity(n * n),
            dag: Vec::with_capacity(n),
            diagonal: Vec::new(),
        };
        for a in 0..n {
            for b in 0..n {
                let prod = p.compose(a, b);
                let m = p.decompose_monomial(&prod).expect("palette not closed under products");
                p.mul.push(m);
            }
        }
        for a in 0..n {
            let e = &p.elems[a];
            // (P^dagger)|k+s> = conj(phase[k]) |k>, i.e. shift -s with phases conj(phase[k-(-s)])
            let s = (d - e.shift) % d;
            let phases = (0..d).map(|k| e.phases[(k + s) % d].conj()).collect();
            let m = p.decompose_monomial(&LocalOp { shift: s, phases }).expect("dagger outside palette");
            p.dag.push(m);
        }
        p.diagonal = p.elems.iter().map(|e| e.shift == 0).collect();
        p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elem(&self, a: u8) -> &LocalOp {
        &self.elems[a as usize]
    }

    pub fn name(&self, a: u8) -> &str {
        &self.names[a as usize]
    }

    pub fn label(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    pub fn is_diagonal(&self, a: u8) -> bool {
        self.diagonal[a as usize]
    }

    #[inline]
    pub fn mul(&self, a: u8, b: u8) -> (u8, C64) {
        self.mul[a as usize * self.elems.len() + b as usize]
    }

    #[inline]
    pub fn dagger(&self, a: u8) -> (u8, C64) {
        self.dag[a as usize]
    }

    fn compose(&self, a: usize, b: usize) -> LocalOp {
        let (pa, pb) = (&self.elems[a], &self.elems[b]);
        let d = self.d;
        let phases = (0..d).map(|k| pb.phases[k] * pa.phases[(k + pb.shift) % d]).collect();
        LocalOp { shift: (pa.shift + pb.shift) % d, phases }
    }

    /// Express a monomial as `phase * P_c`; `None` if it is not proportional to one element.
    fn decompose_monomial(&self, op: &LocalOp) -> Option<(u8, C64)> {
        for (c, e) in self.elems.iter().enumerate() {
            if e.shift != op.shift {
                continue;
            }
            let coeff: C64 =
                e.phases.iter().zip(&op.phases).map(|(x, y)| x.conj() * y).sum::<C64>() / self.d as f64;
            if coeff.norm() < 1e-12 {
                continue;
            }
            let ok = e.phases.iter().zip(&op.phases).all(|(x, y)| (coeff * x - y).norm() < 1e-10);
            return if ok { Some((c as u8, coeff)) } else { None };
        }
        None
    }

    pub fn matrix(&self, a: u8) -> DMatrix<C64> {
        let e = self.elem(a);
        let mut m = DMatrix::zeros(self.d, self.d);
        for k in 0..self.d {
            m[((k + e.shift) % self.d, k)] = e.phases[k];
        }
        m
    }

    /// Expand a dense `d x d` matrix, `c_P = tr(P^dagger M) / d`, dropping `|c| < tol`.
    pub fn decompose(&self, m: &DMatrix<C64>, tol: f64) -> Vec<(u8, C64)> {
        let d = self.d;
        assert_eq!(m.nrows(), d);
        let mut out = Vec::new();
        for (c, e) in self.elems.iter().enumerate() {
            let coeff: C64 =
                (0..d).map(|k| e.phases[k].conj() * m[((k + e.shift) % d, k)]).sum::<C64>() / d as f64;
            if coeff.norm() >= tol {
                out.push((c as u8, coeff));
            }
        }
        out
    }
}

fn pauli() -> (Vec<LocalOp>, Vec<String>) {
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let elems = vec![
        LocalOp { shift: 0, phases: vec![one, one] },
        LocalOp { shift: 1, phases: vec![one, one] },
        LocalOp { shift: 1, phases: vec![-i, i] },
        LocalOp { shift: 0, phases: vec![-one, one] },
    ];
    (elems, ["I", "X", "Y", "Z"].iter().map(|s| s.to_string()).collect())
}

fn weyl(d: usize) -> (Vec<LocalOp>, Vec<String>) {
    let mut elems = Vec::with_capacity(d * d);
    let mut names = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let phases = (0..d)
                .map(|k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * ((b * k) % d) as f64 / d as f64))
                .collect();
            elems.push(LocalOp { shift: a, phases });
            names.push(if a == 0 && b == 0 { "I".to_string() } else { format!("W{a}{b}") });
        }
    }
    (elems, names)
}

/// Spin-`S` ladder and z matrices in the digit basis (digit `k` has `m = k - S`).
pub mod spin {
    use super::*;

    /// `tau^+` with elements `sqrt(S(S+1) - m(m+1))`; `twice_s = 2S`.
    pub fn raising(twice_s: usize) -> DMatrix<C64> {
        let d = twice_s + 1;
        let s = twice_s as f64 / 2.0;
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d - 1 {
            let mz = k as f64 - s;
            m[(k + 1, k)] = C64::new((s * (s + 1.0) - mz * (mz + 1.0)).sqrt(), 0.0);
        }
        m
    }

    pub fn lowering(twice_s: usize) -> DMatrix<C64> {
        raising(twice_s).adjoint()
    }

    /// `tau^x = tau^+ + tau^-`.
    pub fn x(twice_s: usize) -> DMatrix<C64> {
        raising(twice_s) + lowering(twice_s)
    }

    /// Doubled magnetisation `2m` on the diagonal.
    pub fn z(twice_s: usize) -> DMatrix<C64> {
        let d = twice_s + 1;
        DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |k, _| {
            C64::new(2.0 * k as f64 - twice_s as f64, 0.0)
        }))
    }

    /// `exp(-i theta A)` for a Hermitian matrix `A`.
    pub fn expi(a: &DMatrix<C64>, theta: f64) -> DMatrix<C64> {
        let eig = a.clone().symmetric_eigen();
        let v = &eig.eigenvectors;
        let phases = nalgebra::DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -theta * l)),
        );
        v * DMatrix::from_diagonal(&phases) * v.adjoint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &DMatrix<C64>, b: &DMatrix<C64>) -> bool {
        (a - b).iter().all(|x| x.norm() < 1e-12)
    }

    #[test]
    fn pauli_products_match_matrices() {
        let p = palette(2);
        for a in 0..4u8 {
            for b in 0..4u8 {
                let (c, ph) = p.mul(a, b);
                assert!(close(&(p.matrix(a) * p.matrix(b)), &(p.matrix(c) * ph)));
            }
        }
    }

    #[test]
    fn physical_pauli_convention() {
        let p = palette(2);
        let z = p.matrix(p.label("Z").unwrap());
        assert_eq!(z[(0, 0)], C64::new(-1.0, 0.0));
        // [Z, X] = 2iY
        let (x, y) = (p.matrix(1), p.matrix(2));
        assert!(close(&(&z * &x - &x * &z), &(y * C64::new(0.0, 2.0))));
        // sigma^+ = (X + iY)/2 raises digit 0 to digit 1
        let sp = (p.matrix(1) + p.matrix(2) * C64::new(0.0, 1.0)) * C64::new(0.5, 0.0);
        assert!(close(&sp, &spin::raising(1)));
    }

    #[test]
    fn weyl_closed_and_daggers() {
        for d in [3usize, 4] {
            let p = palette(d);
            for a in 0..p.len() as u8 {
                let (c, ph) = p.dagger(a);
                assert!(close(&p.matrix(a).adjoint(), &(p.matrix(c) * ph)));
                for b in 0..p.len() as u8 {
                    let (c, ph) = p.mul(a, b);
                    assert!(close(&(p.matrix(a) * p.matrix(b)), &(p.matrix(c) * ph)));
                }
            }
        }
    }

    #[test]
    fn decompose_reconstructs() {
        let p = palette(3);
        let m = spin::raising(2) + spin::z(2) * C64::new(0.3, -0.1);
        let mut back = DMatrix::zeros(3, 3);
        for (a, c) in p.decompose(&m, 1e-14) {
            back += p.matrix(a) * c;
        }
        assert!(close(&back, &m));
    }

    #[test]
    fn spin_one_ladder() {
        let r = spin::raising(2);
        assert!((r[(1, 0)].re - 2f64.sqrt()).abs() < 1e-12);
        assert!((r[(2, 1)].re - 2f64.sqrt()).abs() < 1e-12);
    }
}
