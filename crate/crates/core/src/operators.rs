//! Sums of tensor-product strings over the site palettes, the model builders,
//! symmetry generators and ideal pulse conjugation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::palette::{palette, spin, LocalOp, Palette};
use crate::C64;

pub const DEFAULT_DROP_TOL: f64 = 1e-12;

/// One local label per storage position; label 0 is the identity.
pub type Key = Vec<u8>;

#[derive(Clone, Debug)]
pub struct OperatorSum {
    spec: LatticeSpec,
    terms: BTreeMap<Key, C64>,
    tol: f64,
    hermitian: bool,
}

impl OperatorSum {
    pub fn zero(spec: &LatticeSpec) -> Self {
        OperatorSum { spec: *spec, terms: BTreeMap::new(), tol: DEFAULT_DROP_TOL, hermitian: true }
    }

    pub fn identity(spec: &LatticeSpec) -> Self {
        let mut op = Self::zero(spec);
        op.terms.insert(vec![0; spec.positions()], C64::new(1.0, 0.0));
        op
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self.canonicalize();
        self
    }

    /// A single string with the given non-identity labels.
    pub fn from_labels(spec: &LatticeSpec, labels: &[(usize, u8)], coeff: C64) -> Self {
        let mut key = vec![0u8; spec.positions()];
        for &(p, a) in labels {
            key[p] = a;
        }
        let mut op = Self::zero(spec);
        op.hermitian = false;
        op.add_term(key, coeff);
        op
    }

    /// A dense local matrix on one position, expanded into palette labels.
    pub fn local(spec: &LatticeSpec, pos: usize, m: &DMatrix<C64>) -> Self {
        let pal = palette(spec.local_dim(pos));
        let mut op = Self::zero(spec);
        op.hermitian = false;
        for (a, c) in pal.decompose(m, DEFAULT_DROP_TOL) {
            let mut key = vec![0u8; spec.positions()];
            key[pos] = a;
            op.add_term(key, c);
        }
        op
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Key, &C64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, key: &[u8]) -> C64 {
        self.terms.get(key).copied().unwrap_or_default()
    }

    pub fn hermitian_flag(&self) -> bool {
        self.hermitian
    }

    fn add_term(&mut self, key: Key, c: C64) {
        let e = self.terms.entry(key).or_default();
        *e += c;
    }

    fn canonicalize(&mut self) {
        let tol = self.tol;
        self.terms.retain(|_, c| c.norm() >= tol);
    }

    fn from_map(spec: LatticeSpec, map: HashMap<Key, C64>, tol: f64) -> Self {
        let terms = map.into_iter().filter(|(_, c)| c.norm() >= tol).collect();
        OperatorSum { spec, terms, tol, hermitian: false }
    }

    fn check_spec(&self, other: &Self) {
        assert_eq!(self.spec, other.spec, "operator sums live on different lattices");
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.hermitian = self.hermitian && c.im == 0.0;
        out.canonicalize();
        out
    }

    pub fn scale_re(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: C64, other: &Self) -> Self {
        self.check_spec(other);
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), c * v);
        }
        out.hermitian = false;
        out.canonicalize();
        out
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zero(&self.spec);
        out.tol = self.tol;
        for (k, c) in &self.terms {
            let mut phase = c.conj();
            let key: Key = k
                .iter()
                .enumerate()
                .map(|(p, &a)| {
                    if a == 0 {
                        0
                    } else {
                        let (b, f) = palette(self.spec.local_dim(p)).dagger(a);
                        phase *= f;
                        b
                    }
                })
                .collect();
            out.add_term(key, phase);
        }
        out.hermitian = self.hermitian;
        out.canonicalize();
        out
    }

    /// Largest coefficient deviation of `A - A^dagger`.
    pub fn hermiticity_defect(&self) -> f64 {
        (self - &self.dagger()).max_abs()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() < tol
    }

    /// Set the Hermitian flag after verifying it.
    pub fn into_hermitian(mut self) -> Result<Self> {
        let defect = self.hermiticity_defect();
        if defect >= 1e-10 {
            return Err(Error::Operator(format!("operator is not Hermitian (defect {defect:e})")));
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Coefficient 2-norm, i.e. the Hilbert-Schmidt norm divided by `sqrt(dim)`.
    pub fn norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self - other).max_abs() < tol
    }

    pub fn is_diagonal(&self) -> bool {
        self.terms.keys().all(|k| {
            k.iter().enumerate().all(|(p, &a)| a == 0 || palette(self.spec.local_dim(p)).is_diagonal(a))
        })
    }

    fn palettes(&self) -> Vec<&'static Palette> {
        (0..self.spec.positions()).map(|p| palette(self.spec.local_dim(p))).collect()
    }

    fn indexed(&self) -> Vec<(&Key, C64, u128)> {
        self.terms.iter().map(|(k, c)| (k, *c, support(k))).collect()
    }

    pub fn product(&self, other: &Self) -> Self {
        self.check_spec(other);
        let pals = self.palettes();
        let (a, b) = (self.indexed(), other.indexed());
        let mut map: HashMap<Key, C64> = HashMap::new();
        let n = self.spec.positions();
        let mut key = vec![0u8; n];
        for &(ka, ca, ma) in &a {
            for &(kb, cb, mb) in &b {
                let mut ph = ca * cb;
                let overlap = ma & mb;
                for p in 0..n {
                    key[p] = if overlap >> p & 1 == 1 {
                        let (c, f) = pals[p].mul(ka[p], kb[p]);
                        ph *= f;
                        c
                    } else {
                        ka[p] | kb[p]
                    };
                }
                *map.entry(key.clone()).or_default() += ph;
            }
        }
        Self::from_map(self.spec, map, self.tol.min(other.tol))
    }

    /// `[A, B] = AB - BA`, skipping string pairs with disjoint support.
    pub fn commutator(&self, other: &Self) -> Self {
        self.check_spec(other);
        let pals = self.palettes();
        let (a, b) = (self.indexed(), other.indexed());
        let mut map: HashMap<Key, C64> = HashMap::new();
        let n = self.spec.positions();
        let mut key = vec![0u8; n];
        for &(ka, ca, ma) in &a {
            for &(kb, cb, mb) in &b {
                let overlap = ma & mb;
                if overlap == 0 {
                    continue;
                }
                let mut fab = C64::new(1.0, 0.0);
                let mut fba = C64::new(1.0, 0.0);
                for p in 0..n {
                    key[p] = if overlap >> p & 1 == 1 {
                        let (c1, f1) = pals[p].mul(ka[p], kb[p]);
                        let (c2, f2) = pals[p].mul(kb[p], ka[p]);
                        debug_assert_eq!(c1, c2);
                        fab *= f1;
                        fba *= f2;
                        c1
                    } else {
                        ka[p] | kb[p]
                    };
                }
                let diff = fab - fba;
                if diff.norm() < 1e-14 {
                    continue;
                }
                *map.entry(key.clone()).or_default() += ca * cb * diff;
            }
        }
        Self::from_map(self.spec, map, self.tol.min(other.tol))
    }

    /// `P^dagger A P` for an ideal pulse, expanded exactly on the palette.
    pub fn conjugate_by_pulse(&self, pulse: &Pulse) -> Self {
        let tables = pulse.conjugation_tables(&self.spec);
        let mut map: HashMap<Key, C64> = HashMap::new();
        for (k, c) in &self.terms {
            let mut partial: Vec<(Key, C64)> = vec![(k.clone(), *c)];
            for (p, table) in tables.iter().enumerate() {
                let Some(table) = table else { continue };
                let a = k[p];
                if a == 0 {
                    continue;
                }
                let images = &table[a as usize];
                let mut next = Vec::with_capacity(partial.len() * images.len());
                for (key, coeff) in &partial {
                    for &(b, f) in images {
                        let mut nk = key.clone();
                        nk[p] = b;
                        next.push((nk, coeff * f));
                    }
                }
                partial = next;
            }
            for (key, coeff) in partial {
                *map.entry(key).or_default() += coeff;
            }
        }
        let mut out = Self::from_map(self.spec, map, self.tol);
        out.hermitian = self.hermitian;
        out
    }

    /// Apply a pulse list in time order: the frame of `W = P_n ... P_1` is `W^dagger A W`.
    pub fn frame(&self, pulses: &[Pulse]) -> Self {
        pulses.iter().rev().fold(self.clone(), |acc, p| acc.conjugate_by_pulse(p))
    }

    pub fn key_label(&self, key: &[u8]) -> String {
        let pals = self.palettes();
        let parts: Vec<String> = key
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0)
            .map(|(p, &a)| format!("{}@{}", pals[p].name(a), p))
            .collect();
        if parts.is_empty() {
            "I".to_string()
        } else {
            parts.join(" ")
        }
    }

    /// One line per term, `coeff_re coeff_im label@pos ...`, sorted by key.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, c) in &self.terms {
            let _ = writeln!(s, "{:.15e} {:.15e} {}", c.re, c.im, self.key_label(k));
        }
        s
    }

    /// Parse the text produced by [`OperatorSum::dump`].
    pub fn parse_dump(spec: &LatticeSpec, text: &str) -> Result<Self> {
        let mut op = Self::zero(spec);
        op.hermitian = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let re: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse(line.into()))?;
            let im: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse(line.into()))?;
            let mut key = vec![0u8; spec.positions()];
            for tok in it {
                if tok == "I" {
                    continue;
                }
                let (name, pos) = tok.split_once('@').ok_or_else(|| Error::Parse(tok.into()))?;
                let pos: usize = pos.parse().map_err(|_| Error::Parse(tok.into()))?;
                if pos >= spec.positions() {
                    return Err(Error::Parse(format!("position {pos} out of range")));
                }
                key[pos] = palette(spec.local_dim(pos))
                    .label(name)
                    .ok_or_else(|| Error::Parse(format!("unknown label {name}")))?;
            }
            op.add_term(key, C64::new(re, im));
        }
        op.canonicalize();
        Ok(op)
    }

    /// Per-term actions for fast application to basis indices.
    pub fn compiled(&self) -> Vec<CompiledTerm> {
        let strides: Vec<u64> = (0..self.spec.positions()).map(|p| self.spec.stride(p)).collect();
        self.terms
            .iter()
            .map(|(k, c)| CompiledTerm {
                coeff: *c,
                factors: k
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0)
                    .map(|(p, &a)| {
                        let d = self.spec.local_dim(p);
                        (strides[p], d as u64, palette(d).elem(a))
                    })
                    .collect(),
            })
            .collect()
    }
}

fn support(key: &[u8]) -> u128 {
    key.iter().enumerate().fold(0u128, |m, (p, &a)| if a != 0 { m | 1 << p } else { m })
}

/// A single string acting on basis indices: `term |k> = phase |k'>`.
#[derive(Clone, Debug)]
pub struct CompiledTerm {
    pub coeff: C64,
    factors: Vec<(u64, u64, &'static LocalOp)>,
}

impl CompiledTerm {
    #[inline]
    pub fn act(&self, k: u64) -> (u64, C64) {
        let mut target = k;
        let mut phase = self.coeff;
        for &(stride, d, e) in &self.factors {
            let digit = (k / stride) % d;
            phase *= e.phases[digit as usize];
            let nd = (digit + e.shift as u64) % d;
            target = target - digit * stride + nd * stride;
        }
        (target, phase)
    }
}

impl Add for &OperatorSum {
    type Output = OperatorSum;
    fn add(self, rhs: &OperatorSum) -> OperatorSum {
        let mut out = self.axpy(C64::new(1.0, 0.0), rhs);
        out.hermitian = self.hermitian && rhs.hermitian;
        out
    }
}

impl Sub for &OperatorSum {
    type Output = OperatorSum;
    fn sub(self, rhs: &OperatorSum) -> OperatorSum {
        let mut out = self.axpy(C64::new(-1.0, 0.0), rhs);
        out.hermitian = self.hermitian && rhs.hermitian;
        out
    }
}

impl Neg for &OperatorSum {
    type Output = OperatorSum;
    fn neg(self) -> OperatorSum {
        self.scale_re(-1.0)
    }
}

impl Mul for &OperatorSum {
    type Output = OperatorSum;
    fn mul(self, rhs: &OperatorSum) -> OperatorSum {
        self.product(rhs)
    }
}

impl Mul<&OperatorSum> for f64 {
    type Output = OperatorSum;
    fn mul(self, rhs: &OperatorSum) -> OperatorSum {
        rhs.scale_re(self)
    }
}

impl Mul<&OperatorSum> for C64 {
    type Output = OperatorSum;
    fn mul(self, rhs: &OperatorSum) -> OperatorSum {
        rhs.scale(self)
    }
}

pub fn commutator(a: &OperatorSum, b: &OperatorSum) -> OperatorSum {
    a.commutator(b)
}

pub fn commutes_with(a: &OperatorSum, b: &OperatorSum, tol: f64) -> bool {
    a.commutator(b).max_abs() < tol
}

// ---------------------------------------------------------------------------
// Pulses

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PulseKind {
    /// `exp(-i pi/2 sum tau^z)` on the active links.
    TauZ,
    /// `exp(-i pi/2 sum tau^x)` on the active links.
    TauX,
    /// `exp(-i pi/2 sum sigma^z)` on odd matter sites.
    SigmaZOdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pulse {
    pub kind: PulseKind,
    pub dagger: bool,
}

impl Pulse {
    pub const TAU_Z: Pulse = Pulse { kind: PulseKind::TauZ, dagger: false };
    pub const TAU_X: Pulse = Pulse { kind: PulseKind::TauX, dagger: false };
    pub const SIGMA_Z_ODD: Pulse = Pulse { kind: PulseKind::SigmaZOdd, dagger: false };

    pub fn dag(self) -> Pulse {
        Pulse { dagger: !self.dagger, ..self }
    }

    /// Positions touched by the pulse. OBC leaves the spectator wrap link alone.
    pub fn positions(&self, spec: &LatticeSpec) -> Vec<usize> {
        let l = spec.sites();
        match self.kind {
            PulseKind::TauZ | PulseKind::TauX => spec.bonds().map(|j| spec.link_pos(j)).collect(),
            PulseKind::SigmaZOdd => (0..l).filter(|j| j % 2 == 1).map(|j| spec.matter_pos(j)).collect(),
        }
    }

    /// The single-site unitary at a touched position.
    pub fn local_unitary(&self, spec: &LatticeSpec, pos: usize) -> DMatrix<C64> {
        let twice = spec.local_dim(pos) - 1;
        let gen = match self.kind {
            PulseKind::TauZ | PulseKind::SigmaZOdd => spin::z(twice),
            PulseKind::TauX => spin::x(twice),
        };
        let u = spin::expi(&gen, std::f64::consts::FRAC_PI_2);
        if self.dagger {
            u.adjoint()
        } else {
            u
        }
    }

    /// Per position, the images `U^dagger P_a U` of every palette label.
    fn conjugation_tables(&self, spec: &LatticeSpec) -> Vec<Option<Vec<Vec<(u8, C64)>>>> {
        let mut tables = vec![None; spec.positions()];
        let mut cache: HashMap<usize, Vec<Vec<(u8, C64)>>> = HashMap::new();
        for p in self.positions(spec) {
            let d = spec.local_dim(p);
            let table = cache
                .entry(d)
                .or_insert_with(|| {
                    let pal = palette(d);
                    let u = self.local_unitary(spec, p);
                    (0..pal.len() as u8)
                        .map(|a| pal.decompose(&(u.adjoint() * pal.matrix(a) * &u), 1e-13))
                        .collect()
                })
                .clone();
            tables[p] = Some(table);
        }
        tables
    }
}

// ---------------------------------------------------------------------------
// Model and symmetry generators

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub h: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Couplings {
    pub fn new(j: f64, k: f64, h: f64) -> Self {
        Couplings { j, k, h, eps1: 1.0, eps2: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: LatticeSpec,
    pub couplings: Couplings,
    pub h_lgt: OperatorSum,
    pub h1: OperatorSum,
    pub h0: OperatorSum,
    pub h: OperatorSum,
}

fn prod3(a: &OperatorSum, b: &OperatorSum, c: &OperatorSum) -> OperatorSum {
    &(a * b) * c
}

/// `H = J H_LGT + K H_1 + h H_0` with the wrap bond dropped under OBC.
pub fn build_model(spec: &LatticeSpec, c: Couplings) -> Result<Model> {
    for (name, v) in [("J", c.j), ("K", c.k), ("h", c.h), ("eps1", c.eps1), ("eps2", c.eps2)] {
        if !v.is_finite() {
            return Err(Error::Operator(format!("coupling {name} is not finite")));
        }
    }
    let twice = spec.spin().twice() as usize;
    let (sp, sm, sz) = (spin::raising(1), spin::lowering(1), spin::z(1));
    let (tp, tx) = (spin::raising(twice), spin::x(twice));
    let mut h_lgt = OperatorSum::zero(spec);
    let mut h1 = OperatorSum::zero(spec);
    let mut h0 = OperatorSum::zero(spec);
    for j in spec.bonds() {
        let (mj, link, mk) = (spec.matter_pos(j), spec.link_pos(j), spec.matter_pos(j + 1));
        let hop = |t: &DMatrix<C64>| {
            prod3(
                &OperatorSum::local(spec, mj, &sp),
                &OperatorSum::local(spec, link, t),
                &OperatorSum::local(spec, mk, &sm),
            )
        };
        let a = hop(&tp);
        h_lgt = &(&h_lgt + &a) + &a.dagger();
        let b = hop(&tx);
        h1 = &(&h1 + &b) + &b.dagger();
        let x = OperatorSum::local(spec, link, &tx);
        let zx = &OperatorSum::local(spec, mj, &sz) * &x;
        let xz = &x * &OperatorSum::local(spec, mk, &sz);
        h0 = &(&(&h0 + &x) + &zx.scale_re(c.eps1)) + &xz.scale_re(c.eps2);
    }
    let h_lgt = h_lgt.into_hermitian()?;
    let h1 = h1.into_hermitian()?;
    let h0 = h0.into_hermitian()?;
    let h = (&(&h_lgt.scale_re(c.j) + &h1.scale_re(c.k)) + &h0.scale_re(c.h)).into_hermitian()?;
    Ok(Model { spec: *spec, couplings: c, h_lgt, h1, h0, h })
}

#[derive(Clone, Debug)]
pub struct Symmetries {
    pub gauss: Vec<OperatorSum>,
    pub z2: Vec<OperatorSum>,
    pub gauss_total: OperatorSum,
}

/// `G_j`, `S_j = i exp(-i pi G_j / 2)` and `sum_j G_j`.
pub fn build_symmetry_generators(spec: &LatticeSpec) -> Symmetries {
    let twice = spec.spin().twice() as usize;
    let tz = spin::z(twice);
    let sz = spin::z(1);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut gauss = Vec::new();
    let mut z2 = Vec::new();
    for j in 0..spec.sites() {
        let (r, l, m) = (spec.link_pos(j), spec.left_link_pos(j), spec.matter_pos(j));
        let g = &(&OperatorSum::local(spec, r, &tz) - &OperatorSum::local(spec, l, &tz))
            - &OperatorSum::local(spec, m, &sz);
        gauss.push(g.into_hermitian().expect("G_j is Hermitian"));
        let s = prod3(
            &OperatorSum::local(spec, r, &spin::expi(&tz, half_pi)),
            &OperatorSum::local(spec, l, &spin::expi(&tz, -half_pi)),
            &OperatorSum::local(spec, m, &spin::expi(&sz, -half_pi)),
        )
        .scale(C64::new(0.0, 1.0));
        z2.push(s.into_hermitian().expect("S_j is Hermitian"));
    }
    let gauss_total = gauss.iter().fold(OperatorSum::zero(spec), |acc, g| &acc + g);
    Symmetries { gauss, z2, gauss_total }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SymmetryReport {
    pub u1_local: bool,
    pub z2_local: bool,
    pub u1_global: bool,
}

pub fn symmetry_report(h: &OperatorSum, sym: &Symmetries, tol: f64) -> SymmetryReport {
    SymmetryReport {
        u1_local: sym.gauss.iter().all(|g| commutes_with(g, h, tol)),
        z2_local: sym.z2.iter().all(|s| commutes_with(s, h, tol)),
        u1_global: commutes_with(&sym.gauss_total, h, tol),
    }
}

/// Named local operators used by tests and the explicit first-order form.
pub fn site_op(spec: &LatticeSpec, pos: usize, which: &str) -> OperatorSum {
    let twice = spec.local_dim(pos) - 1;
    let m = match which {
        "+" => spin::raising(twice),
        "-" => spin::lowering(twice),
        "x" => spin::x(twice),
        "z" => spin::z(twice),
        _ => panic!("unknown site operator {which}"),
    };
    OperatorSum::local(spec, pos, &m)
}
