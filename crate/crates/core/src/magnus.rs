//! Pulse protocols and their effective Hamiltonians.
//!
//! A protocol is a time-ordered list of segments. Each segment carries the
//! pulses applied (in time order) before free evolution under the lab
//! Hamiltonian; the pulses are undone right after, so the segment evolves with
//! the frame Hamiltonian `W^dagger H W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{expm_hermitian, op_norm, pulse_matrix, to_dense};
use crate::error::{Error, Result};
use crate::lattice::Boundary;
use crate::operators::{Model, OperatorSum, Pulse};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Simple,
    Full,
    Quench,
    Custom,
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub frame: OperatorSum,
    pub duration: f64,
    pub pulses: Vec<Pulse>,
}

#[derive(Clone, Debug)]
pub struct DriveProtocol {
    pub kind: ProtocolKind,
    pub segments: Vec<Segment>,
    /// The base step `T`.
    pub step: f64,
    /// Lab-frame Hamiltonian the segment frames are derived from.
    pub lab: OperatorSum,
}

impl DriveProtocol {
    pub fn custom(lab: &OperatorSum, segments: Vec<Segment>, step: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Protocol("no segments".into()));
        }
        if segments.iter().any(|s| !(s.duration > 0.0) || !s.duration.is_finite()) {
            return Err(Error::Protocol("segment durations must be positive".into()));
        }
        Ok(DriveProtocol { kind: ProtocolKind::Custom, segments, step, lab: lab.clone() })
    }

    /// Continuous evolution under `H`, sampled every `dt`.
    pub fn quench(h: &OperatorSum, dt: f64) -> Result<Self> {
        let seg = Segment { frame: h.clone(), duration: dt, pulses: vec![] };
        let mut p = Self::custom(h, vec![seg], dt)?;
        p.kind = ProtocolKind::Quench;
        Ok(p)
    }

    /// `T_F`, the sum of segment durations.
    pub fn period(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn frame_average(&self) -> OperatorSum {
        let tf = self.period();
        self.segments
            .iter()
            .fold(OperatorSum::zero(self.lab.spec()), |acc, s| acc.axpy(C64::new(s.duration / tf, 0.0), &s.frame))
    }

    /// Structured description: durations, pulses and frame dumps.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "T": self.step,
            "T_F": self.period(),
            "segments": self.segments.iter().map(|s| serde_json::json!({
                "duration": s.duration,
                "pulses": s.pulses,
                "frame": s.frame.dump(),
            })).collect::<Vec<_>>(),
        })
    }
}

fn check_k(model: &Model, t: f64) -> Result<f64> {
    let c = model.couplings;
    if c.k == 0.0 {
        return Err(Error::Protocol("K = 0 leaves the protocol undefined".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Protocol("T must be positive".into()));
    }
    Ok((c.j + c.k) / c.k)
}

fn segment(model: &Model, pulses: Vec<Pulse>, duration: f64) -> Segment {
    Segment { frame: model.h.frame(&pulses), duration, pulses }
}

/// Two-step protocol: a `T` step in the `P_z^dagger P_x^dagger` frame, then `(J+K)/K T` under `H`.
pub fn protocol_simple(model: &Model, t: f64) -> Result<DriveProtocol> {
    let r = check_k(model, t)?;
    let segments = vec![
        segment(model, vec![Pulse::TAU_Z.dag(), Pulse::TAU_X.dag()], t),
        segment(model, vec![], r * t),
    ];
    Ok(DriveProtocol { kind: ProtocolKind::Simple, segments, step: t, lab: model.h.clone() })
}

/// Eight-step time-symmetric protocol `H, H(1), H(2), H(3), H(3), H(2), H(1), H`.
///
/// Asserts the frame average is `J H_LGT` and the first-order term vanishes.
pub fn protocol_full(model: &Model, t: f64) -> Result<DriveProtocol> {
    let r = check_k(model, t)?;
    let spec = model.spec;
    if spec.boundary() == Boundary::Pbc && spec.sites() % 2 == 1 {
        return Err(Error::Protocol("odd-site pulses need an even ring or OBC".into()));
    }
    let u1 = vec![Pulse::TAU_Z, Pulse::TAU_X];
    let u2 = vec![Pulse::TAU_Z, Pulse::SIGMA_Z_ODD];
    let u3 = vec![Pulse::TAU_X, Pulse::SIGMA_Z_ODD];
    let half = [(vec![], r * t), (u1, t), (u2, r * t), (u3, t)];
    let segments: Vec<Segment> = half
        .iter()
        .chain(half.iter().rev())
        .map(|(p, d)| segment(model, p.clone(), *d))
        .collect();
    let p = DriveProtocol { kind: ProtocolKind::Full, segments, step: t, lab: model.h.clone() };

    let target = model.h_lgt.scale_re(model.couplings.j);
    let avg = p.frame_average();
    let scale = 1e-10 * (1.0 + model.h.max_abs());
    if !avg.approx_eq(&target, scale) {
        return Err(Error::Protocol("frame average differs from J H_LGT".into()));
    }
    let eff = effective_orders(&p, 1)?;
    if eff.reduced[1].max_abs() > scale {
        return Err(Error::Protocol("first-order term does not vanish".into()));
    }
    Ok(p)
}

/// `lambda_0 = K J (J+K) / (2 (2K+J)) T_F` of the two-step protocol.
pub fn lambda0(j: f64, k: f64, tf: f64) -> f64 {
    k * j * (j + k) / (2.0 * (2.0 * k + j)) * tf
}

/// Second-order prefactors of the eight-step protocol, per `T_F^2` with `T_F` the segment sum.
///
/// `Q2 / T_F^2 = a1 [HL,[HL,H1]] + a2 [H1,[HL,H1]] + b1 [H0,[HL,H0]] + b2 [H0,[H1,H0]]
///              + c1 [HL,[HL,H0]] + c2 [H1,[HL,H0]]`.
/// The `a`, `b` prefactors are the closed forms below; `c1`, `c2` are the
/// linear-in-`h` pieces, evaluated from the same nested sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecondOrder {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl SecondOrder {
    pub fn full(j: f64, k: f64, h: f64) -> Self {
        let q = j + 2.0 * k;
        // Closed forms quoted for a period of 8(2+J/K)T; the segment sum is half of that.
        let alpha1 = -(j + k) * j * j * k / (128.0 * q) + (j + k) * k * j.powi(3) / (768.0 * q * q);
        let alpha2 = 2.0 * (j + k).powi(2) * k * k * j / (768.0 * q * q);
        let beta1 = h * h * (j + k).powi(2) * k * k * j / (384.0 * q * q)
            * (1.0 / (k * (j + k)) + (1.0 / (k + j) - 1.0 / k).powi(2));
        let beta2 = -h * h * (j + k) * k * j / (768.0 * q * q);
        SecondOrder { alpha1: 4.0 * alpha1, alpha2: 4.0 * alpha2, beta1: 4.0 * beta1, beta2: 4.0 * beta2 }
    }

    /// Couplings of the second-order marble model, `lambda1 = T_F^2 (a1 + a2)`, `lambda2 = T_F^2 a2`.
    pub fn marble_couplings(&self, tf: f64) -> (f64, f64) {
        (tf * tf * (self.alpha1 + self.alpha2), tf * tf * self.alpha2)
    }
}

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    /// `V_m = Q^(m) / T_F^m`.
    pub reduced: Vec<OperatorSum>,
    pub period: f64,
}

impl EffectiveHamiltonian {
    /// `Q^(m)` including its `T_F^m` factor.
    pub fn order(&self, m: usize) -> OperatorSum {
        self.reduced[m].scale_re(self.period.powi(m as i32))
    }

    /// Sum of the selected orders.
    pub fn sum(&self, orders: &[usize]) -> Result<OperatorSum> {
        let spec = *self.reduced[0].spec();
        let mut acc = OperatorSum::zero(&spec);
        for &m in orders {
            if m >= self.reduced.len() {
                return Err(Error::Protocol(format!("order {m} was not computed")));
            }
            acc = &acc + &self.order(m);
        }
        acc.into_hermitian()
    }

    pub fn max_order(&self) -> usize {
        self.reduced.len() - 1
    }
}

/// Magnus orders up to `max_order <= 2` via graded BCH on normalised segments.
///
/// With `A_k = -i H_k t_k / T_F` and `exp(Z) = exp(A_n) ... exp(A_1)`, the graded
/// pieces `Z_1, Z_2, Z_3` give `Q^(m) = i T_F^m Z_{m+1}`.
pub fn effective_orders(p: &DriveProtocol, max_order: usize) -> Result<EffectiveHamiltonian> {
    if max_order > 2 {
        return Err(Error::Protocol("orders above 2 are not supported".into()));
    }
    let spec = *p.lab.spec();
    let tf = p.period();
    let minus_i = C64::new(0.0, -1.0);
    let mut z1 = OperatorSum::zero(&spec);
    let mut z2 = OperatorSum::zero(&spec);
    let mut z3 = OperatorSum::zero(&spec);
    for s in &p.segments {
        let x = s.frame.scale(minus_i * (s.duration / tf));
        if max_order >= 2 {
            let x_z1 = x.commutator(&z1);
            let term = &(&x.commutator(&z2).scale_re(0.5) + &x.commutator(&x_z1).scale_re(1.0 / 12.0))
                + &z1.commutator(&z1.commutator(&x)).scale_re(1.0 / 12.0);
            z3 = &z3 + &term;
            z2 = &z2 + &x_z1.scale_re(0.5);
        } else if max_order >= 1 {
            z2 = &z2 + &x.commutator(&z1).scale_re(0.5);
        }
        z1 = &z1 + &x;
    }
    let i = C64::new(0.0, 1.0);
    let mut reduced = vec![z1.scale(i).into_hermitian()?];
    if max_order >= 1 {
        reduced.push(z2.scale(i).into_hermitian()?);
    }
    if max_order >= 2 {
        reduced.push(z3.scale(i).into_hermitian()?);
    }
    Ok(EffectiveHamiltonian { reduced, period: tf })
}

/// Least-squares coefficients of `target` on `basis`, and the relative residual.
pub fn project(target: &OperatorSum, basis: &[OperatorSum]) -> (Vec<C64>, f64) {
    let n = basis.len();
    let inner = |a: &OperatorSum, b: &OperatorSum| -> C64 { a.terms().map(|(k, c)| c.conj() * b.coeff(k)).sum() };
    let gram = DMatrix::from_fn(n, n, |r, c| inner(&basis[r], &basis[c]));
    let rhs = DVector::from_fn(n, |r, _| inner(&basis[r], target));
    let coeffs = gram.svd(true, true).solve(&rhs, 1e-14).expect("SVD solve");
    let fit = basis
        .iter()
        .zip(coeffs.iter())
        .fold(OperatorSum::zero(target.spec()).with_tol(0.0), |acc, (b, c)| acc.axpy(*c, b));
    let resid = (target - &fit).norm() / target.norm().max(f64::MIN_POSITIVE);
    (coeffs.iter().cloned().collect(), resid)
}

/// The six nested commutators spanning the second order of the eight-step protocol.
pub fn second_order_basis(model: &Model) -> Vec<OperatorSum> {
    let (l, one, zero) = (&model.h_lgt, &model.h1, &model.h0);
    let l1 = l.commutator(one);
    let l0 = l.commutator(zero);
    vec![
        l.commutator(&l1),
        one.commutator(&l1),
        zero.commutator(&l0),
        zero.commutator(&one.commutator(zero)),
        l.commutator(&l0),
        one.commutator(&l0),
    ]
}

/// Dense one-period propagator in the lab frame: pulses, free evolution, inverse pulses.
pub fn dense_period(p: &DriveProtocol) -> Result<DMatrix<C64>> {
    let spec = *p.lab.spec();
    let h = to_dense(&p.lab)?;
    let eig = crate::dense::HermitianEigen::new(&h);
    let mut u = DMatrix::<C64>::identity(spec.dim(), spec.dim());
    for s in &p.segments {
        let mut w = DMatrix::<C64>::identity(spec.dim(), spec.dim());
        for pulse in &s.pulses {
            w = pulse_matrix(&spec, pulse)? * w;
        }
        u = w.adjoint() * eig.propagator(s.duration) * &w * u;
    }
    Ok(u)
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderCheck {
    pub steps: Vec<f64>,
    /// `distances[m][i]`: truncation at order `m`, step `steps[i]`.
    pub distances: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
}

/// Distance between the exact period propagator and `exp(-i sum_{k<=m} Q^(k) T_F)` over a ladder of `T`.
pub fn magnus_order_check<F>(build: F, steps: &[f64], max_order: usize) -> Result<OrderCheck>
where
    F: Fn(f64) -> Result<DriveProtocol>,
{
    if steps.len() < 2 {
        return Err(Error::Protocol("need at least two steps".into()));
    }
    let mut distances = vec![Vec::new(); max_order + 1];
    for &t in steps {
        let p = build(t)?;
        let exact = dense_period(&p)?;
        let eff = effective_orders(&p, max_order)?;
        let tf = p.period();
        for m in 0..=max_order {
            let orders: Vec<usize> = (0..=m).collect();
            let q = to_dense(&eff.sum(&orders)?)?;
            distances[m].push(op_norm(&(&exact - expm_hermitian(&q, tf))));
        }
    }
    let xs: Vec<f64> = steps.iter().map(|t| t.ln()).collect();
    let slopes = distances
        .iter()
        .map(|d| {
            let ys: Vec<f64> = d.iter().map(|v| v.max(1e-300).ln()).collect();
            crate::analysis::linear_fit(&xs, &ys).0
        })
        .collect();
    Ok(OrderCheck { steps: steps.to_vec(), distances, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::operators::{build_model, Couplings};

    fn model(l: usize, b: Boundary, h: f64) -> Model {
        build_model(&LatticeSpec::half(l, b).unwrap(), Couplings::new(1.0, 4.0, h)).unwrap()
    }

    #[test]
    fn simple_period_and_frames() {
        let m = model(3, Boundary::Obc, 0.5);
        let p = protocol_simple(&m, 0.1).unwrap();
        assert!((p.period() - 0.225).abs() < 1e-14);
        let want = &(&m.h_lgt - &m.h1.scale_re(5.0)) - &m.h0.scale_re(0.5);
        assert!(p.segments[0].frame.approx_eq(&want, 1e-12));
    }

    #[test]
    fn full_frames_and_weights() {
        let m = model(4, Boundary::Pbc, 0.5);
        let p = protocol_full(&m, 0.05).unwrap();
        assert_eq!(p.segments.len(), 8);
        assert!((p.period() - 4.0 * 2.25 * 0.05).abs() < 1e-14);
        let h2 = &(&m.h_lgt + &m.h1.scale_re(4.0)) - &m.h0.scale_re(0.5);
        assert!(p.segments[2].frame.approx_eq(&h2, 1e-12));
        let h3 = &(&m.h_lgt - &m.h1.scale_re(5.0)) + &m.h0.scale_re(0.5);
        assert!(p.segments[3].frame.approx_eq(&h3, 1e-12));
    }

    #[test]
    fn full_rejects_odd_ring() {
        let m = model(3, Boundary::Pbc, 0.5);
        assert!(protocol_full(&m, 0.05).is_err());
    }

    #[test]
    fn zero_k_rejected() {
        let s = LatticeSpec::half(2, Boundary::Obc).unwrap();
        let m = build_model(&s, Couplings::new(1.0, 0.0, 0.0)).unwrap();
        assert!(protocol_simple(&m, 0.1).is_err());
    }
}
