//! State-vector propagation on a (possibly truncated) product basis.
//!
//! Operators are compiled into CSR matrices over a sorted list of basis
//! indices. Small spaces are exponentiated densely; larger ones use a
//! Lanczos propagator with adaptive sub-steps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::HermitianEigen;
use crate::error::{Error, Result};
use crate::lattice::{charge_at, parse_pattern, z2_of_charge, Boundary, LatticeSpec, SectorConfig};
use crate::magnus::{DriveProtocol, EffectiveHamiltonian};
use crate::operators::{OperatorSum, Pulse};
use crate::series::TimeSeries;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const PAR_ROWS: usize = 8192;

// ---------------------------------------------------------------------------
// Basis

#[derive(Clone, Debug)]
pub struct Basis {
    spec: LatticeSpec,
    /// Sorted basis indices; `None` is the full product space.
    states: Option<Vec<u64>>,
}

impl Basis {
    pub fn full(spec: &LatticeSpec) -> Self {
        Basis { spec: *spec, states: None }
    }

    pub fn from_states(spec: &LatticeSpec, mut states: Vec<u64>) -> Result<Self> {
        states.sort_unstable();
        states.dedup();
        if states.is_empty() {
            return Err(Error::Evolution("empty basis".into()));
        }
        if *states.last().unwrap() >= spec.dim() as u64 {
            return Err(Error::OutsideBasis(*states.last().unwrap()));
        }
        Ok(Basis { spec: *spec, states: Some(states) })
    }

    /// States sharing the number of up matter spins with `state` and, under
    /// OBC, the spectator wrap link. Every model term and pulse preserves both.
    pub fn conserved(spec: &LatticeSpec, state: u64) -> Result<Self> {
        let l = spec.sites();
        let ups = (0..l).filter(|&j| spec.digit(state, spec.matter_pos(j)) == 1).count();
        let wrap = match spec.boundary() {
            Boundary::Obc => Some(spec.digit(state, spec.link_pos(l - 1))),
            Boundary::Pbc => None,
        };
        let mut states = Vec::new();
        let link_dim = spec.spin().dim();
        let free_links = if wrap.is_some() { l - 1 } else { l };
        let link_count = link_dim.pow(free_links as u32);
        let mut digits = vec![0usize; spec.positions()];
        for matter in 0u64..(1u64 << l) {
            if matter.count_ones() as usize != ups {
                continue;
            }
            for j in 0..l {
                digits[spec.matter_pos(j)] = ((matter >> j) & 1) as usize;
            }
            for mut code in 0..link_count {
                for j in 0..free_links {
                    digits[spec.link_pos(j)] = code % link_dim;
                    code /= link_dim;
                }
                if let Some(w) = wrap {
                    digits[spec.link_pos(l - 1)] = w;
                }
                states.push(spec.index_of(&digits));
            }
        }
        Self::from_states(spec, states)
    }

    /// Closure of `seeds` under repeated action of `ops`.
    pub fn reachable(spec: &LatticeSpec, seeds: &[u64], ops: &[&OperatorSum]) -> Result<Self> {
        let compiled: Vec<_> = ops.iter().flat_map(|o| o.compiled()).collect();
        let mut seen: std::collections::BTreeSet<u64> = seeds.iter().cloned().collect();
        let mut frontier: Vec<u64> = seeds.to_vec();
        while let Some(s) = frontier.pop() {
            for (u, _) in merged_images(&compiled, s) {
                if seen.insert(u) {
                    frontier.push(u);
                }
            }
        }
        Self::from_states(spec, seen.into_iter().collect())
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        match &self.states {
            Some(s) => s.len(),
            None => self.spec.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.states.is_none()
    }

    #[inline]
    pub fn state(&self, i: usize) -> u64 {
        match &self.states {
            Some(s) => s[i],
            None => i as u64,
        }
    }

    #[inline]
    pub fn index(&self, state: u64) -> Option<usize> {
        match &self.states {
            Some(s) => s.binary_search(&state).ok(),
            None => ((state as usize) < self.spec.dim()).then_some(state as usize),
        }
    }
}

// ---------------------------------------------------------------------------
// Sparse matrices

/// Images of one basis state under a sum of strings, with cancelling
/// contributions removed.
fn merged_images(terms: &[crate::operators::CompiledTerm], s: u64) -> Vec<(u64, C64)> {
    let mut out: Vec<(u64, C64)> = terms.iter().map(|t| t.act(s)).filter(|(_, ph)| *ph != ZERO).collect();
    out.sort_unstable_by_key(|x| x.0);
    let mut merged: Vec<(u64, C64)> = Vec::with_capacity(out.len());
    for (u, ph) in out {
        match merged.last_mut() {
            Some(last) if last.0 == u => last.1 += ph,
            _ => merged.push((u, ph)),
        }
    }
    merged.retain(|x| x.1.norm() > 1e-13);
    merged
}

/// Row-compressed matrix over a basis.
#[derive(Clone, Debug)]
pub struct SparseOp {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn build(op: &OperatorSum, basis: &Basis) -> Result<Self> {
        if op.spec() != basis.spec() {
            return Err(Error::Evolution("operator and basis lattices differ".into()));
        }
        let n = basis.len();
        let terms = op.compiled();
        let columns: Vec<Result<Vec<(u32, C64)>>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let mut out = Vec::new();
                for (u, ph) in merged_images(&terms, basis.state(c)) {
                    match basis.index(u) {
                        Some(r) => out.push((r as u32, ph)),
                        None => return Err(Error::OutsideBasis(u)),
                    }
                }
                Ok(out)
            })
            .collect();
        let mut triplets: Vec<(u32, u32, C64)> = Vec::new();
        for (c, col) in columns.into_iter().enumerate() {
            triplets.extend(col?.into_iter().map(|(r, v)| (r, c as u32, v)));
        }
        Ok(Self::from_triplets(n, triplets))
    }

    /// CSR assembly; repeated entries are summed.
    fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, C64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            cols.push(c);
            vals.push(v);
            row_ptr[r as usize + 1] = cols.len();
        }
        for i in 1..=n {
            row_ptr[i] = row_ptr[i].max(row_ptr[i - 1]);
        }
        SparseOp { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn row(&self, r: usize, x: &[C64]) -> C64 {
        let mut acc = ZERO;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.vals[k] * x[self.cols[k] as usize];
        }
        acc
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = self.row(r, x));
        } else {
            for (r, out) in y.iter_mut().enumerate() {
                *out = self.row(r, x);
            }
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k] as usize)] += self.vals[k];
            }
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Translation-symmetric block

/// Zero-momentum block of a ring basis under translation by `shift` sites.
///
/// Reduced amplitudes are `c_R = sqrt(n_R) psi_r` for a state constant on
/// each orbit `R` of size `n_R`.
#[derive(Clone, Debug)]
pub struct TranslationSector {
    basis: Arc<Basis>,
    shift: usize,
    reps: Vec<usize>,
    orbit: Vec<usize>,
    /// Reduced index of every parent basis index.
    owner: Vec<u32>,
}

fn translate(spec: &LatticeSpec, state: u64, shift: usize) -> u64 {
    let d = spec.digits(state);
    let p = d.len();
    let mut out = vec![0usize; p];
    for (i, v) in d.into_iter().enumerate() {
        out[(i + 2 * shift) % p] = v;
    }
    spec.index_of(&out)
}

impl TranslationSector {
    pub fn new(basis: Arc<Basis>, shift: usize) -> Result<Self> {
        let spec = *basis.spec();
        if spec.boundary() != Boundary::Pbc || shift == 0 || spec.sites() % shift != 0 {
            return Err(Error::Evolution(format!("translation by {shift} needs a ring whose length it divides")));
        }
        let n = basis.len();
        let mut owner = vec![u32::MAX; n];
        let (mut reps, mut orbit) = (Vec::new(), Vec::new());
        for i in 0..n {
            if owner[i] != u32::MAX {
                continue;
            }
            let r = reps.len() as u32;
            let mut s = basis.state(i);
            let mut size = 0;
            loop {
                let k = basis.index(s).ok_or(Error::OutsideBasis(s))?;
                if owner[k] == r {
                    break;
                }
                owner[k] = r;
                size += 1;
                s = translate(&spec, s, shift);
            }
            reps.push(i);
            orbit.push(size);
        }
        Ok(TranslationSector { basis, shift, reps, orbit, owner })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    /// Block of a translation-invariant operator.
    pub fn sparse(&self, op: &OperatorSum) -> Result<SparseOp> {
        let terms = op.compiled();
        let n = self.len();
        let columns: Vec<Result<Vec<(u32, C64)>>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let mut out = Vec::new();
                for (u, ph) in merged_images(&terms, self.basis.state(self.reps[c])) {
                    let k = self.basis.index(u).ok_or(Error::OutsideBasis(u))?;
                    let r = self.owner[k];
                    let w = (self.orbit[c] as f64 / self.orbit[r as usize] as f64).sqrt();
                    out.push((r, ph * w));
                }
                Ok(out)
            })
            .collect();
        let mut triplets = Vec::new();
        for (c, col) in columns.into_iter().enumerate() {
            triplets.extend(col?.into_iter().map(|(r, v)| (r, c as u32, v)));
        }
        Ok(SparseOp::from_triplets(n, triplets))
    }

    /// Reduced amplitudes; errors unless `psi` is constant on every orbit.
    pub fn reduce(&self, psi: &StateVector) -> Result<Vec<C64>> {
        if psi.basis.len() != self.basis.len() {
            return Err(Error::Evolution("state lives on another basis".into()));
        }
        let mut out = vec![ZERO; self.len()];
        for (k, a) in psi.amps.iter().enumerate() {
            let r = self.owner[k] as usize;
            if k == self.reps[r] {
                out[r] = a * (self.orbit[r] as f64).sqrt();
            }
        }
        for (k, a) in psi.amps.iter().enumerate() {
            let r = self.owner[k] as usize;
            if (a - psi.amps[self.reps[r]]).norm() > 1e-12 {
                return Err(Error::Evolution("state is not translation invariant".into()));
            }
        }
        Ok(out)
    }

    pub fn expand(&self, amps: &[C64]) -> StateVector {
        let full = (0..self.basis.len())
            .map(|k| {
                let r = self.owner[k] as usize;
                amps[r] / (self.orbit[r] as f64).sqrt()
            })
            .collect();
        StateVector { basis: self.basis.clone(), amps: full }
    }
}

/// Floquet run inside the zero-momentum block of `sector`.
pub fn run_floquet_symmetric(
    psi0: &StateVector,
    sector: &TranslationSector,
    p: &DriveProtocol,
    n_periods: usize,
    obs: &[Observable],
    stride: usize,
    opts: &EvolveOptions,
) -> Result<(TimeSeries, StateVector)> {
    if stride == 0 {
        return Err(Error::Evolution("stride must be at least 1".into()));
    }
    let mut segs = Vec::with_capacity(p.segments.len());
    for s in &p.segments {
        check_hermitian(&s.frame)?;
        segs.push((sector.sparse(&s.frame)?, s.duration));
    }
    let step = StepPropagator::Segments(segs, *opts);
    let measurer = Measurer::new(&psi0.basis, Some(dominant_sector(psi0)));
    let mut ts = TimeSeries::new(obs.iter().map(|o| o.name()).collect());
    let mut amps = sector.reduce(psi0)?;
    ts.push(0, 0.0, measurer.measure(&psi0.amps, obs)?);
    for l in 1..=n_periods {
        amps = step.step(&amps)?;
        if l % stride == 0 {
            let full = sector.expand(&amps);
            ts.push(l as u64, l as f64 * p.period(), measurer.measure(&full.amps, obs)?);
        }
    }
    ts.metadata = serde_json::json!({
        "dt": p.period(), "steps": n_periods, "stride": stride,
        "dim": sector.len(), "translation": sector.shift(), "protocol": p.describe(),
    });
    Ok((ts, sector.expand(&amps)))
}

// ---------------------------------------------------------------------------
// States

#[derive(Clone, Debug)]
pub struct StateVector {
    pub basis: Arc<Basis>,
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn product(basis: Arc<Basis>, state: u64) -> Result<Self> {
        let i = basis.index(state).ok_or(Error::OutsideBasis(state))?;
        let mut amps = vec![ZERO; basis.len()];
        amps[i] = C64::new(1.0, 0.0);
        Ok(StateVector { basis, amps })
    }

    /// Product state from an interleaved pattern on the basis it conserves.
    pub fn from_pattern(spec: &LatticeSpec, pattern: &str) -> Result<Self> {
        let s = parse_pattern(pattern, spec)?;
        Self::product(Arc::new(Basis::conserved(spec, s)?), s)
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amps)
    }

    fn with_amps(&self, amps: Vec<C64>) -> StateVector {
        StateVector { basis: self.basis.clone(), amps }
    }
}

pub fn apply_operator(psi: &StateVector, op: &OperatorSum) -> Result<StateVector> {
    let m = SparseOp::build(op, &psi.basis)?;
    Ok(psi.with_amps(m.apply(&psi.amps)))
}

fn apply_local(psi: &StateVector, pos: usize, m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let basis = &psi.basis;
    let spec = basis.spec();
    let stride = spec.stride(pos);
    let d = spec.local_dim(pos);
    let mut out = vec![ZERO; psi.amps.len()];
    for (b, &a) in psi.amps.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        let s = basis.state(b);
        let k = spec.digit(s, pos);
        for kp in 0..d {
            let c = m[(kp, k)];
            if c == ZERO {
                continue;
            }
            let t = s - k as u64 * stride + kp as u64 * stride;
            match basis.index(t) {
                Some(i) => out[i] += c * a,
                None if (c * a).norm() > 1e-12 => return Err(Error::OutsideBasis(t)),
                None => {}
            }
        }
    }
    Ok(out)
}

pub fn apply_pulse(psi: &StateVector, pulse: &Pulse) -> Result<StateVector> {
    let spec = *psi.basis.spec();
    let mut amps = psi.amps.clone();
    for pos in pulse.positions(&spec) {
        let m = pulse.local_unitary(&spec, pos);
        let cur = psi.with_amps(amps);
        amps = apply_local(&cur, pos, &m)?;
    }
    Ok(psi.with_amps(amps))
}

// ---------------------------------------------------------------------------
// Propagation

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveOptions {
    /// L2 truncation error budget per segment.
    pub tol: f64,
    /// Dense exponentiation at or below this dimension.
    pub dense_limit: usize,
    pub krylov_dim: usize,
    pub max_substeps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { tol: 1e-9, dense_limit: 1024, krylov_dim: 30, max_substeps: 1 << 20 }
    }
}

/// `exp(-i H t) v` by Lanczos with adaptive sub-steps.
pub fn krylov_expm(h: &SparseOp, v: &[C64], t: f64, opts: &EvolveOptions) -> Result<Vec<C64>> {
    let mut cur = v.to_vec();
    if t == 0.0 {
        return Ok(cur);
    }
    let total = t.abs();
    let sign = t.signum();
    let mut done = 0.0;
    let mut substeps = 0;
    let mut w = vec![ZERO; h.dim()];
    while done < total * (1.0 - 1e-15) {
        let beta0 = cur.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if beta0 == 0.0 {
            return Ok(cur);
        }
        let mut basis: Vec<Vec<C64>> = vec![cur.iter().map(|a| a / beta0).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut happy = false;
        for j in 0..opts.krylov_dim {
            h.apply_into(&basis[j], &mut w);
            let a: f64 = basis[j].iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum();
            alpha.push(a);
            for q in &basis {
                let c: C64 = q.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
            let b = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            beta.push(b);
            if b < 1e-13 * (1.0 + a.abs()) {
                happy = true;
                break;
            }
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let tri = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r.abs_diff(c) == 1 {
                beta[r.min(c)]
            } else {
                0.0
            }
        });
        let eig = tri.symmetric_eigen();
        let coeffs = |tau: f64| -> Vec<C64> {
            let z: Vec<C64> = (0..m)
                .map(|k| C64::from_polar(eig.eigenvectors[(0, k)], -sign * tau * eig.eigenvalues[k]))
                .collect();
            (0..m).map(|r| (0..m).map(|k| eig.eigenvectors[(r, k)] * z[k]).sum()).collect()
        };
        let mut tau = total - done;
        let c = loop {
            let c = coeffs(tau);
            let err = if happy { 0.0 } else { beta0 * beta[m - 1] * c[m - 1].norm() };
            if err <= opts.tol * tau / total || tau < total * 1e-12 {
                break c;
            }
            tau *= 0.5;
        };
        substeps += 1;
        if substeps > opts.max_substeps {
            return Err(Error::Evolution("Krylov sub-step cap reached".into()));
        }
        cur.iter_mut().for_each(|x| *x = ZERO);
        for (q, ck) in basis.iter().zip(&c) {
            let f = ck * beta0;
            for (x, qi) in cur.iter_mut().zip(q) {
                *x += f * qi;
            }
        }
        done += tau;
    }
    Ok(cur)
}

fn check_hermitian(h: &OperatorSum) -> Result<()> {
    if !h.is_hermitian(1e-10 * (1.0 + h.max_abs())) {
        return Err(Error::Evolution("Hamiltonian is not Hermitian".into()));
    }
    Ok(())
}

pub fn evolve_with(psi: &StateVector, h: &OperatorSum, duration: f64, opts: &EvolveOptions) -> Result<StateVector> {
    check_hermitian(h)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Evolution("tolerance must be positive".into()));
    }
    let m = SparseOp::build(h, &psi.basis)?;
    if m.dim() <= opts.dense_limit {
        let eig = HermitianEigen::new(&m.to_dense());
        let out = eig.evolve(&psi.to_dvector(), duration);
        return Ok(psi.with_amps(out.as_slice().to_vec()));
    }
    Ok(psi.with_amps(krylov_expm(&m, &psi.amps, duration, opts)?))
}

pub fn evolve(psi: &StateVector, h: &OperatorSum, duration: f64, tol: f64) -> Result<StateVector> {
    evolve_with(psi, h, duration, &EvolveOptions { tol, ..Default::default() })
}

/// One stroboscopic step, either a dense matrix or a list of sparse segments.
pub enum StepPropagator {
    Dense(DMatrix<C64>),
    Segments(Vec<(SparseOp, f64)>, EvolveOptions),
}

impl StepPropagator {
    pub fn new(segments: &[(&OperatorSum, f64)], basis: &Basis, opts: &EvolveOptions) -> Result<Self> {
        let mut sparse = Vec::with_capacity(segments.len());
        for (h, d) in segments {
            check_hermitian(h)?;
            sparse.push((SparseOp::build(h, basis)?, *d));
        }
        let n = basis.len();
        if n <= opts.dense_limit {
            let mut u = DMatrix::<C64>::identity(n, n);
            for (m, d) in &sparse {
                u = HermitianEigen::new(&m.to_dense()).propagator(*d) * u;
            }
            return Ok(StepPropagator::Dense(u));
        }
        Ok(StepPropagator::Segments(sparse, *opts))
    }

    pub fn for_protocol(p: &DriveProtocol, basis: &Basis, opts: &EvolveOptions) -> Result<Self> {
        let segs: Vec<(&OperatorSum, f64)> = p.segments.iter().map(|s| (&s.frame, s.duration)).collect();
        Self::new(&segs, basis, opts)
    }

    pub fn step(&self, amps: &[C64]) -> Result<Vec<C64>> {
        match self {
            StepPropagator::Dense(u) => Ok((u * DVector::from_column_slice(amps)).as_slice().to_vec()),
            StepPropagator::Segments(segs, opts) => {
                let mut v = amps.to_vec();
                for (m, d) in segs {
                    v = krylov_expm(m, &v, *d, opts)?;
                }
                Ok(v)
            }
        }
    }
}

/// One period in the lab frame: each segment applies its pulses, evolves under
/// the lab Hamiltonian and undoes the pulses.
pub fn lab_period(psi: &StateVector, p: &DriveProtocol, tol: f64) -> Result<StateVector> {
    let mut cur = psi.clone();
    for s in &p.segments {
        for pulse in &s.pulses {
            cur = apply_pulse(&cur, pulse)?;
        }
        cur = evolve(&cur, &p.lab, s.duration, tol)?;
        for pulse in s.pulses.iter().rev() {
            cur = apply_pulse(&cur, &pulse.dag())?;
        }
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Observables

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteKind {
    Gauss,
    Z2,
    Defect,
    Kink,
}

impl SiteKind {
    fn prefix(self) -> &'static str {
        match self {
            SiteKind::Gauss => "G",
            SiteKind::Z2 => "S",
            SiteKind::Defect => "nd",
            SiteKind::Kink => "nk",
        }
    }

    fn from_prefix(s: &str) -> Option<Self> {
        Some(match s {
            "G" => SiteKind::Gauss,
            "S" => SiteKind::Z2,
            "nd" => SiteKind::Defect,
            "nk" => SiteKind::Kink,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    Gauss,
    Z2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    Site(SiteKind, usize),
    Violation(ViolationKind),
    Norm,
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Site(k, j) => format!("{}_{j}", k.prefix()),
            Observable::Violation(ViolationKind::Gauss) => "violG".into(),
            Observable::Violation(ViolationKind::Z2) => "violS".into(),
            Observable::Norm => "norm".into(),
        }
    }
}

/// Expand names: `G`, `S`, `nd`, `nk` (all sites), `G_3` etc., `violG`, `violS`, `norm`.
pub fn parse_observables(names: &[String], l: usize) -> Result<Vec<Observable>> {
    let mut out = Vec::new();
    for name in names {
        let name = name.trim();
        match name {
            "violG" => out.push(Observable::Violation(ViolationKind::Gauss)),
            "violS" => out.push(Observable::Violation(ViolationKind::Z2)),
            "norm" => out.push(Observable::Norm),
            _ => {
                let (prefix, site) = match name.split_once('_') {
                    Some((p, s)) => {
                        let j: usize = s.parse().map_err(|_| Error::Parse(format!("bad observable {name}")))?;
                        (p, Some(j))
                    }
                    None => (name, None),
                };
                let kind = SiteKind::from_prefix(prefix).ok_or_else(|| Error::Parse(format!("unknown observable {name}")))?;
                match site {
                    Some(j) if j < l => out.push(Observable::Site(kind, j)),
                    Some(j) => return Err(Error::Parse(format!("site {j} out of range in {name}"))),
                    None => out.extend((0..l).map(|j| Observable::Site(kind, j))),
                }
            }
        }
    }
    Ok(out)
}

/// Diagonal measurement tables for one basis.
pub struct Measurer {
    l: usize,
    /// `charges[b * L + j]`.
    charges: Vec<i8>,
    ups: Vec<u64>,
    target: Option<SectorConfig>,
}

impl Measurer {
    pub fn new(basis: &Basis, target: Option<SectorConfig>) -> Self {
        let spec = basis.spec();
        let l = spec.sites();
        let n = basis.len();
        let mut charges = Vec::with_capacity(n * l);
        let mut ups = Vec::with_capacity(n);
        for b in 0..n {
            let s = basis.state(b);
            let mut mask = 0u64;
            for j in 0..l {
                charges.push(charge_at(s, j, spec) as i8);
                if spec.digit(s, spec.matter_pos(j)) == 1 {
                    mask |= 1 << j;
                }
            }
            ups.push(mask);
        }
        Measurer { l, charges, ups, target }
    }

    /// Site expectation values `<G_j>`, `<S_j>` and `<n^k_j>`; a kink is an up
    /// matter spin on a site with `g_j = 1`.
    fn site_sums(&self, amps: &[C64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.l;
        let (mut g, mut s, mut k) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
        for (b, a) in amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            for j in 0..l {
                let q = self.charges[b * l + j] as i32;
                g[j] += p * q as f64;
                s[j] += p * z2_of_charge(q) as f64;
                if self.ups[b] >> j & 1 == 1 && q == 1 {
                    k[j] += p;
                }
            }
        }
        (g, s, k)
    }

    pub fn measure(&self, amps: &[C64], obs: &[Observable]) -> Result<Vec<f64>> {
        let (g, s, k) = self.site_sums(amps);
        let norm2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        obs.iter()
            .map(|o| {
                Ok(match *o {
                    Observable::Site(SiteKind::Gauss, j) => g[j],
                    Observable::Site(SiteKind::Z2, j) => s[j],
                    Observable::Site(SiteKind::Defect, j) => (norm2 - g[j]) / 4.0,
                    Observable::Site(SiteKind::Kink, j) => k[j],
                    Observable::Violation(kind) => {
                        let t = self.target.as_ref().ok_or_else(|| Error::Evolution("violation needs a target sector".into()))?;
                        violation_from_sums(&g, &s, t, kind)
                    }
                    Observable::Norm => norm2.sqrt(),
                })
            })
            .collect()
    }
}

fn violation_from_sums(g: &[f64], s: &[f64], target: &SectorConfig, kind: ViolationKind) -> f64 {
    let l = g.len() as f64;
    match kind {
        ViolationKind::Gauss => g.iter().zip(&target.0).map(|(x, t)| (x - *t as f64).abs()).sum::<f64>() / l,
        ViolationKind::Z2 => s.iter().zip(&target.0).map(|(x, t)| (x - z2_of_charge(*t) as f64).abs()).sum::<f64>() / l,
    }
}

pub fn measure_site(psi: &StateVector, kind: SiteKind, j: usize) -> Result<f64> {
    if j >= psi.basis.spec().sites() {
        return Err(Error::Evolution(format!("site {j} out of range")));
    }
    Ok(Measurer::new(&psi.basis, None).measure(&psi.amps, &[Observable::Site(kind, j)])?[0])
}

pub fn violation_average(psi: &StateVector, target: &SectorConfig, kind: ViolationKind) -> Result<f64> {
    let m = Measurer::new(&psi.basis, Some(target.clone()));
    m.measure(&psi.amps, &[Observable::Violation(kind)]).map(|v| v[0])
}

/// Sector of the largest-weight basis state.
pub fn dominant_sector(psi: &StateVector) -> SectorConfig {
    let b = psi
        .amps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    crate::lattice::sector_of(psi.basis.state(b), psi.basis.spec())
}

// ---------------------------------------------------------------------------
// Runs

pub fn default_stride(n: usize) -> usize {
    (n / 2000).max(1)
}

/// Repeat `step` `n` times, recording at `0, stride, 2 stride, ...` with `t = l dt`.
pub fn run_steps(
    psi0: &StateVector,
    step: &StepPropagator,
    dt: f64,
    n: usize,
    obs: &[Observable],
    stride: usize,
) -> Result<(TimeSeries, StateVector)> {
    if stride == 0 {
        return Err(Error::Evolution("stride must be at least 1".into()));
    }
    let measurer = Measurer::new(&psi0.basis, Some(dominant_sector(psi0)));
    let mut ts = TimeSeries::new(obs.iter().map(|o| o.name()).collect());
    let mut amps = psi0.amps.clone();
    ts.push(0, 0.0, measurer.measure(&amps, obs)?);
    let powered = match step {
        StepPropagator::Dense(u) if stride > 1 && 2 * u.nrows() * ((usize::BITS - stride.leading_zeros()) as usize) < n => {
            Some(matrix_power(u, stride))
        }
        _ => None,
    };
    if let Some(us) = powered {
        for l in (stride..=n).step_by(stride) {
            amps = (&us * DVector::from_column_slice(&amps)).as_slice().to_vec();
            ts.push(l as u64, l as f64 * dt, measurer.measure(&amps, obs)?);
        }
        // trailing periods after the last sample
        for _ in (n / stride * stride)..n {
            amps = step.step(&amps)?;
        }
    } else {
        for l in 1..=n {
            amps = step.step(&amps)?;
            if l % stride == 0 {
                ts.push(l as u64, l as f64 * dt, measurer.measure(&amps, obs)?);
            }
        }
    }
    ts.metadata = serde_json::json!({ "dt": dt, "steps": n, "stride": stride, "dim": psi0.basis.len() });
    Ok((ts, psi0.with_amps(amps)))
}

fn matrix_power(u: &DMatrix<C64>, mut k: usize) -> DMatrix<C64> {
    let n = u.nrows();
    let mut acc = DMatrix::<C64>::identity(n, n);
    let mut base = u.clone();
    while k > 0 {
        if k & 1 == 1 {
            acc = &acc * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    acc
}

pub fn run_floquet(
    psi0: &StateVector,
    p: &DriveProtocol,
    n_periods: usize,
    obs: &[Observable],
    stride: usize,
    opts: &EvolveOptions,
) -> Result<(TimeSeries, StateVector)> {
    let step = StepPropagator::for_protocol(p, &psi0.basis, opts)?;
    let (mut ts, out) = run_steps(psi0, &step, p.period(), n_periods, obs, stride)?;
    ts.metadata["protocol"] = p.describe();
    Ok((ts, out))
}

/// Continuous evolution under the selected orders, sampled every `stride T_F`.
pub fn run_effective(
    psi0: &StateVector,
    eff: &EffectiveHamiltonian,
    orders: &[usize],
    t_max: f64,
    obs: &[Observable],
    stride: usize,
    opts: &EvolveOptions,
) -> Result<(TimeSeries, StateVector)> {
    let h = eff.sum(orders)?;
    let step = StepPropagator::new(&[(&h, eff.period)], &psi0.basis, opts)?;
    let n = (t_max / eff.period + 1e-9).floor() as usize;
    let (mut ts, out) = run_steps(psi0, &step, eff.period, n, obs, stride)?;
    ts.metadata["orders"] = serde_json::json!(orders);
    Ok((ts, out))
}
