//! The reduced kink/defect ("marble") model.
//!
//! Each site carries one of three labels: vacuum `.`, kink `k` or defect `d`.
//! Reading along the chain, kinks and defects alternate. On the spin-1/2
//! lattice a defect is the local triple `(up, up, down)` (left link, matter,
//! right link) with `g = -3`, a kink is `(down, up, up)` and the two `g = 1`
//! triples with matter down are merged into one vacuum.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dense::HermitianEigen;
use crate::error::{Error, Result};
use crate::lattice::{charge_at, Boundary, GaugeSpin, LatticeSpec};
use crate::series::TimeSeries;
use crate::C64;

pub const VACUUM: u8 = 0;
pub const KINK: u8 = 1;
pub const DEFECT: u8 = 2;

const DENSE_QMM_LIMIT: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QmmConfig {
    pub labels: Vec<u8>,
    pub boundary: Boundary,
}

impl QmmConfig {
    pub fn parse(text: &str, boundary: Boundary) -> Result<Self> {
        let labels = text
            .trim()
            .chars()
            .map(|c| match c {
                '.' => Ok(VACUUM),
                'k' => Ok(KINK),
                'd' => Ok(DEFECT),
                _ => Err(Error::Qmm(format!("unknown label {c:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if labels.is_empty() {
            return Err(Error::Qmm("empty configuration".into()));
        }
        let c = QmmConfig { labels, boundary };
        if !c.is_valid() {
            return Err(Error::Qmm(format!("{c} breaks the kink/defect alternation")));
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&x| x == label).count()
    }

    /// Alternation along the chain; on a ring it must also close.
    pub fn is_valid(&self) -> bool {
        let seq: Vec<u8> = self.labels.iter().cloned().filter(|&x| x != VACUUM).collect();
        if self.labels.iter().any(|&x| x > DEFECT) || seq.windows(2).any(|w| w[0] == w[1]) {
            return false;
        }
        match self.boundary {
            Boundary::Obc => true,
            Boundary::Pbc => seq.is_empty() || (seq.len() % 2 == 0 && seq[0] != seq[seq.len() - 1]),
        }
    }
}

impl fmt::Display for QmmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &x in &self.labels {
            f.write_str(match x {
                VACUUM => ".",
                KINK => "k",
                _ => "d",
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QmmBasis {
    l: usize,
    boundary: Boundary,
    configs: Vec<QmmConfig>,
    index: HashMap<Vec<u8>, usize>,
}

impl QmmBasis {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn sites(&self) -> usize {
        self.l
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn configs(&self) -> &[QmmConfig] {
        &self.configs
    }

    pub fn index_of(&self, c: &QmmConfig) -> Option<usize> {
        self.index.get(&c.labels).copied()
    }

    fn bonds(&self) -> Vec<(usize, usize)> {
        let n = match self.boundary {
            Boundary::Pbc => self.l,
            Boundary::Obc => self.l - 1,
        };
        (0..n).map(|j| (j, (j + 1) % self.l)).collect()
    }

    fn triples(&self) -> Vec<[usize; 3]> {
        let n = match self.boundary {
            Boundary::Pbc if self.l >= 3 => self.l,
            Boundary::Pbc => 0,
            Boundary::Obc => self.l.saturating_sub(2),
        };
        (0..n).map(|j| [j, (j + 1) % self.l, (j + 2) % self.l]).collect()
    }
}

/// All alternating configurations with the given counts, in lexicographic order.
pub fn enumerate_qmm_basis(l: usize, n_defects: usize, n_kinks: usize, boundary: Boundary) -> Result<QmmBasis> {
    if l == 0 || l > 64 {
        return Err(Error::Qmm(format!("unsupported length {l}")));
    }
    let feasible = match boundary {
        Boundary::Obc => n_defects.abs_diff(n_kinks) <= 1,
        Boundary::Pbc => n_defects == n_kinks,
    };
    if !feasible || n_defects + n_kinks > l {
        return Err(Error::Qmm(format!("{n_defects} defects and {n_kinks} kinks cannot alternate on {boundary:?}")));
    }
    let n = n_defects + n_kinks;
    let mut starts = Vec::new();
    if n == 0 {
        starts.push(KINK);
    } else {
        if n_kinks >= n_defects {
            starts.push(KINK);
        }
        if n_defects >= n_kinks {
            starts.push(DEFECT);
        }
    }
    let mut configs = Vec::new();
    let mut pos: Vec<usize> = (0..n).collect();
    loop {
        for &first in &starts {
            let mut labels = vec![VACUUM; l];
            for (i, &p) in pos.iter().enumerate() {
                labels[p] = if i % 2 == 0 { first } else { KINK + DEFECT - first };
            }
            configs.push(QmmConfig { labels, boundary });
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                configs.sort();
                configs.dedup();
                let index = configs.iter().enumerate().map(|(i, c)| (c.labels.clone(), i)).collect();
                return Ok(QmmBasis { l, boundary, configs, index });
            }
            i -= 1;
            if pos[i] < l - n + i {
                pos[i] += 1;
                for k in i + 1..n {
                    pos[k] = pos[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn require_half(spec: &LatticeSpec) -> Result<()> {
    if spec.spin() != GaugeSpin::HALF {
        return Err(Error::Qmm("the marble model needs S = 1/2 links".into()));
    }
    Ok(())
}

/// Translate a lattice basis state in the `{-3, 1}` charge family.
pub fn map_full_to_qmm(state: u64, spec: &LatticeSpec) -> Result<QmmConfig> {
    require_half(spec)?;
    let labels = (0..spec.sites())
        .map(|j| match charge_at(state, j, spec) {
            -3 => Ok(DEFECT),
            1 if spec.digit(state, spec.matter_pos(j)) == 1 => Ok(KINK),
            1 => Ok(VACUUM),
            g => Err(Error::Qmm(format!("site {j} has charge {g}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    let c = QmmConfig { labels, boundary: spec.boundary() };
    if !c.is_valid() {
        return Err(Error::Qmm(format!("{c} breaks the alternation")));
    }
    Ok(c)
}

/// Lattice state of a configuration. The all-vacuum configuration has two
/// images; `vacuum_links_up` picks the one with every link up.
pub fn embed_qmm(c: &QmmConfig, spec: &LatticeSpec, vacuum_links_up: bool) -> Result<u64> {
    require_half(spec)?;
    if c.len() != spec.sites() {
        return Err(Error::Qmm("configuration length differs from the lattice".into()));
    }
    let first = c.labels.iter().find(|&&x| x != VACUUM);
    let wrap = match first {
        Some(&KINK) => 0,
        Some(_) => 1,
        None => vacuum_links_up as usize,
    };
    let mut digits = vec![0usize; spec.positions()];
    let mut link = wrap;
    for (j, &x) in c.labels.iter().enumerate() {
        let (matter, right) = match x {
            KINK => (1, 1),
            DEFECT => (1, 0),
            _ => (0, link),
        };
        if (x == KINK && link != 0) || (x == DEFECT && link != 1) {
            return Err(Error::Qmm(format!("{c} has no lattice image")));
        }
        digits[spec.matter_pos(j)] = matter;
        digits[spec.link_pos(j)] = right;
        link = right;
    }
    if link != wrap {
        return Err(Error::Qmm(format!("{c} does not close around the wrap link")));
    }
    Ok(spec.index_of(&digits))
}

/// Lattice images of every configuration, in basis order.
pub fn lattice_images(basis: &QmmBasis, spec: &LatticeSpec) -> Result<Vec<u64>> {
    basis.configs.iter().map(|c| embed_qmm(c, spec, false)).collect()
}

fn hop_matrix(basis: &QmmBasis, species: u8) -> DMatrix<C64> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for (b, c) in basis.configs.iter().enumerate() {
        for (i, j) in basis.bonds() {
            for (from, to) in [(i, j), (j, i)] {
                if c.labels[from] == species && c.labels[to] == VACUUM {
                    let mut t = c.labels.clone();
                    t.swap(from, to);
                    if let Some(&r) = basis.index.get(&t) {
                        m[(r, b)] += C64::new(1.0, 0.0);
                    }
                }
            }
        }
    }
    m
}

/// Kink hopping `sum_j k_{j+1}^dag k_j + h.c.`.
pub fn kink_hopping(basis: &QmmBasis) -> DMatrix<C64> {
    hop_matrix(basis, KINK)
}

/// Defect hopping `sum_j D_{j+1}^dag D_j + h.c.`.
pub fn defect_hopping(basis: &QmmBasis) -> DMatrix<C64> {
    hop_matrix(basis, DEFECT)
}

/// Kink-assisted defect hopping, equal to `i [H_k, H_d]`.
///
/// On three consecutive sites: `(d,k,.) -> (.,d,k)` with amplitude `-i` and
/// `(k,d,.) -> (.,k,d)` with amplitude `+i`, plus the reverse moves.
pub fn assisted_hopping(basis: &QmmBasis) -> DMatrix<C64> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    let i = C64::new(0.0, 1.0);
    for (b, c) in basis.configs.iter().enumerate() {
        for [a0, a1, a2] in basis.triples() {
            let here = [c.labels[a0], c.labels[a1], c.labels[a2]];
            let (next, amp) = match here {
                [DEFECT, KINK, VACUUM] => ([VACUUM, DEFECT, KINK], -i),
                [VACUUM, DEFECT, KINK] => ([DEFECT, KINK, VACUUM], i),
                [KINK, DEFECT, VACUUM] => ([VACUUM, KINK, DEFECT], i),
                [VACUUM, KINK, DEFECT] => ([KINK, DEFECT, VACUUM], -i),
                _ => continue,
            };
            let mut t = c.labels.clone();
            t[a0] = next[0];
            t[a1] = next[1];
            t[a2] = next[2];
            if let Some(&r) = basis.index.get(&t) {
                m[(r, b)] += amp;
            }
        }
    }
    m
}

fn comm(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QmmOrder {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct QmmCouplings {
    pub j: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Clone, Debug)]
pub struct QmmOperator {
    pub basis: Arc<QmmBasis>,
    pub matrix: DMatrix<C64>,
}

impl QmmOperator {
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }
}

/// `J H_k + lambda0 i[H_k, H_d]`, and for the second order additionally
/// `lambda1 [H_k,[H_k,H_d]] - lambda2 [H_d,[H_d,H_k]]`.
pub fn build_qmm_hamiltonian(basis: Arc<QmmBasis>, c: QmmCouplings, order: QmmOrder) -> Result<QmmOperator> {
    if basis.len() > DENSE_QMM_LIMIT {
        return Err(Error::Qmm(format!("dimension {} above the dense limit", basis.len())));
    }
    let hk = kink_hopping(&basis);
    let mut m = &hk * C64::new(c.j, 0.0);
    if c.lambda0 != 0.0 {
        m += assisted_hopping(&basis) * C64::new(c.lambda0, 0.0);
    }
    if order == QmmOrder::Second {
        let hd = defect_hopping(&basis);
        let kd = comm(&hk, &hd);
        m += comm(&hk, &kd) * C64::new(c.lambda1, 0.0);
        m -= comm(&hd, &(-kd)) * C64::new(c.lambda2, 0.0);
    }
    let op = QmmOperator { basis, matrix: m };
    if op.hermiticity_defect() > 1e-10 {
        return Err(Error::Qmm("reduced Hamiltonian is not Hermitian".into()));
    }
    Ok(op)
}

pub fn qmm_state(basis: &QmmBasis, c: &QmmConfig) -> Result<DVector<C64>> {
    let i = basis.index_of(c).ok_or_else(|| Error::Qmm(format!("{c} is not in the basis")))?;
    let mut v = DVector::zeros(basis.len());
    v[i] = C64::new(1.0, 0.0);
    Ok(v)
}

/// Per-site defect and kink occupations.
pub fn occupations(basis: &QmmBasis, psi: &DVector<C64>) -> (Vec<f64>, Vec<f64>) {
    let l = basis.l;
    let (mut nd, mut nk) = (vec![0.0; l], vec![0.0; l]);
    for (b, c) in basis.configs.iter().enumerate() {
        let p = psi[b].norm_sqr();
        for j in 0..l {
            match c.labels[j] {
                DEFECT => nd[j] += p,
                KINK => nk[j] += p,
                _ => {}
            }
        }
    }
    (nd, nk)
}

/// Exact evolution sampled at `t = l dt` for `l = 0, stride, ...` up to `n`.
/// Columns are `nd_j` then `nk_j`.
pub fn run_qmm(psi: &DVector<C64>, h: &QmmOperator, dt: f64, n: usize, stride: usize) -> Result<TimeSeries> {
    if stride == 0 {
        return Err(Error::Qmm("stride must be at least 1".into()));
    }
    let basis = &h.basis;
    let l = basis.l;
    let cols = (0..l).map(|j| format!("nd_{j}")).chain((0..l).map(|j| format!("nk_{j}"))).collect();
    let mut ts = TimeSeries::new(cols);
    let eig = HermitianEigen::new(&h.matrix);
    let coeff = eig.vectors.adjoint() * psi;
    for step in (0..=n).step_by(stride) {
        let t = step as f64 * dt;
        let mut c = coeff.clone();
        for (k, e) in eig.values.iter().enumerate() {
            c[k] *= C64::from_polar(1.0, -e * t);
        }
        let (nd, nk) = occupations(basis, &(&eig.vectors * c));
        ts.push(step as u64, t, nd.into_iter().chain(nk).collect());
    }
    ts.metadata = serde_json::json!({ "dt": dt, "steps": n, "stride": stride, "dim": basis.len() });
    Ok(ts)
}

/// Per-column largest absolute difference over aligned samples.
pub fn compare_qmm_full(full: &TimeSeries, reduced: &TimeSeries, columns: &[&str]) -> Result<Vec<f64>> {
    full.max_deviation(reduced, columns)
}
