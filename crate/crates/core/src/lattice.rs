//! Lattice geometry, the interleaved product basis and Gauss-law sectors.
//!
//! Storage always holds `L` matter sites and `L` links in ring order
//! `m0, l01, m1, l12, ..., m_{L-1}, l_{L-1,0}`. Position `2j` is matter site `j`,
//! position `2j+1` the link to its right. The basis index is mixed radix with
//! position 0 least significant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM_CAP: usize = 1 << 24;

/// Gauge-field spin, stored as `2S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaugeSpin(u8);

impl GaugeSpin {
    pub const HALF: GaugeSpin = GaugeSpin(1);
    pub const ONE: GaugeSpin = GaugeSpin(2);

    pub fn from_twice(twice: u8) -> Result<Self> {
        if twice == 0 || twice > 15 {
            return Err(Error::InvalidLattice(format!("2S = {twice} outside 1..=15")));
        }
        Ok(GaugeSpin(twice))
    }

    pub fn twice(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Local dimension `2S+1`.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }
}

impl TryFrom<f64> for GaugeSpin {
    type Error = Error;
    fn try_from(s: f64) -> Result<Self> {
        let twice = (2.0 * s).round();
        if (2.0 * s - twice).abs() > 1e-9 || twice < 1.0 {
            return Err(Error::InvalidLattice(format!("spin {s} is not a positive half-integer")));
        }
        GaugeSpin::from_twice(twice as u8)
    }
}

impl From<GaugeSpin> for f64 {
    fn from(s: GaugeSpin) -> f64 {
        s.value()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Pbc,
    Obc,
}

impl FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pbc" | "periodic" => Ok(Boundary::Pbc),
            "obc" | "open" => Ok(Boundary::Obc),
            _ => Err(Error::Parse(format!("unknown boundary {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct LatticeSpec {
    l: usize,
    spin: GaugeSpin,
    boundary: Boundary,
    dim: usize,
}

impl LatticeSpec {
    pub fn new(l: usize, spin: GaugeSpin, boundary: Boundary) -> Result<Self> {
        Self::with_cap(l, spin, boundary, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(l: usize, spin: GaugeSpin, boundary: Boundary, cap: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidLattice("L must be positive".into()));
        }
        if 2 * l > 128 {
            return Err(Error::InvalidLattice("at most 64 sites are supported".into()));
        }
        let mut dim: u128 = 1;
        for _ in 0..l {
            dim = dim.saturating_mul(2 * spin.dim() as u128);
        }
        if dim > cap as u128 {
            return Err(Error::DimensionCap { dim, cap });
        }
        Ok(LatticeSpec { l, spin, boundary, dim: dim as usize })
    }

    /// Spin-1/2 gauge links.
    pub fn half(l: usize, boundary: Boundary) -> Result<Self> {
        Self::new(l, GaugeSpin::HALF, boundary)
    }

    pub fn sites(&self) -> usize {
        self.l
    }

    pub fn spin(&self) -> GaugeSpin {
        self.spin
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> usize {
        2 * self.l
    }

    pub fn local_dim(&self, pos: usize) -> usize {
        if pos % 2 == 0 {
            2
        } else {
            self.spin.dim()
        }
    }

    pub fn is_qubit(&self) -> bool {
        self.spin == GaugeSpin::HALF
    }

    pub fn stride(&self, pos: usize) -> u64 {
        let mut s = 1u64;
        for p in 0..pos {
            s *= self.local_dim(p) as u64;
        }
        s
    }

    pub fn matter_pos(&self, j: usize) -> usize {
        2 * (j % self.l)
    }

    /// Position of the link `(j, j+1)`.
    pub fn link_pos(&self, j: usize) -> usize {
        2 * (j % self.l) + 1
    }

    /// Position of the link `(j-1, j)`; for site 0 this is the wrap link.
    pub fn left_link_pos(&self, j: usize) -> usize {
        self.link_pos((j + self.l - 1) % self.l)
    }

    /// Bonds `j` carrying Hamiltonian terms on `(j, j+1)`. OBC drops the wrap bond.
    pub fn bonds(&self) -> std::ops::Range<usize> {
        match self.boundary {
            Boundary::Pbc => 0..self.l,
            Boundary::Obc => 0..self.l - 1,
        }
    }

    pub fn digits(&self, index: u64) -> Vec<usize> {
        let mut rest = index;
        (0..self.positions())
            .map(|p| {
                let d = self.local_dim(p) as u64;
                let v = rest % d;
                rest /= d;
                v as usize
            })
            .collect()
    }

    pub fn index_of(&self, digits: &[usize]) -> u64 {
        let mut idx = 0u64;
        for p in (0..self.positions()).rev() {
            idx = idx * self.local_dim(p) as u64 + digits[p] as u64;
        }
        idx
    }

    pub fn digit(&self, index: u64, pos: usize) -> usize {
        ((index / self.stride(pos)) % self.local_dim(pos) as u64) as usize
    }

    /// Doubled magnetisation `2m` of a gauge digit.
    pub fn gauge_z(&self, digit: usize) -> i32 {
        2 * digit as i32 - self.spin.twice() as i32
    }

    pub fn matter_z(digit: usize) -> i32 {
        2 * digit as i32 - 1
    }
}

/// Gauss-law eigenvalue `g_j = tau_z(j,j+1) - tau_z(j-1,j) - sigma_z(j)` from digits.
pub fn charge_from_digits(spec: &LatticeSpec, digits: &[usize], j: usize) -> i32 {
    spec.gauge_z(digits[spec.link_pos(j)])
        - spec.gauge_z(digits[spec.left_link_pos(j)])
        - LatticeSpec::matter_z(digits[spec.matter_pos(j)])
}

pub fn charge_at(state: u64, j: usize, spec: &LatticeSpec) -> i32 {
    spec.gauge_z(spec.digit(state, spec.link_pos(j)))
        - spec.gauge_z(spec.digit(state, spec.left_link_pos(j)))
        - LatticeSpec::matter_z(spec.digit(state, spec.matter_pos(j)))
}

/// Eigenvalue of `i exp(-i pi g / 2)` for odd `g`: `+1` iff `g = 1 mod 4`.
pub fn z2_of_charge(g: i32) -> i32 {
    if g.rem_euclid(4) == 1 {
        1
    } else {
        -1
    }
}

pub fn z2_eigenvalue_at(state: u64, j: usize, spec: &LatticeSpec) -> i32 {
    z2_of_charge(charge_at(state, j, spec))
}

pub fn sector_of(state: u64, spec: &LatticeSpec) -> SectorConfig {
    let d = spec.digits(state);
    SectorConfig((0..spec.sites()).map(|j| charge_from_digits(spec, &d, j)).collect())
}

/// All basis states in `sector`, ascending. Links are fixed by the matter
/// configuration and the wrap link, so the search runs over `2^L (2S+1)` seeds.
pub fn enumerate_sector(spec: &LatticeSpec, sector: &SectorConfig) -> Result<Vec<u64>> {
    let l = spec.sites();
    if sector.0.len() != l {
        return Err(Error::InvalidSector(format!("{} charges for L = {l}", sector.0.len())));
    }
    let two_s = spec.spin().twice() as i32;
    let mut out = Vec::new();
    let mut digits = vec![0usize; spec.positions()];
    for matter in 0u64..(1u64 << l) {
        for wrap in 0..spec.spin().dim() {
            let mut tau = spec.gauge_z(wrap);
            let mut ok = true;
            for j in 0..l {
                let m = ((matter >> j) & 1) as usize;
                digits[spec.matter_pos(j)] = m;
                tau += sector.0[j] + LatticeSpec::matter_z(m);
                if tau.abs() > two_s || (tau + two_s) % 2 != 0 {
                    ok = false;
                    break;
                }
                digits[spec.link_pos(j)] = ((tau + two_s) / 2) as usize;
            }
            if ok && tau == spec.gauge_z(wrap) {
                out.push(spec.index_of(&digits));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn char_to_digit(ch: char, dim: usize) -> Option<usize> {
    match (dim, ch) {
        (2, 'd') => Some(0),
        (2, 'u') => Some(1),
        (3, '-') => Some(0),
        (3, '0') => Some(1),
        (3, '+') => Some(2),
        _ => None,
    }
}

fn digit_to_char(digit: usize, dim: usize) -> char {
    match dim {
        2 => ['d', 'u'][digit],
        3 => ['-', '0', '+'][digit],
        _ => '?',
    }
}

/// Parse an interleaved pattern `m0 l01 m1 l12 ...` into a basis index.
pub fn parse_pattern(text: &str, spec: &LatticeSpec) -> Result<u64> {
    let chars: Vec<char> = text.trim().chars().collect();
    if chars.len() != spec.positions() {
        return Err(Error::PatternLength { got: chars.len(), expected: spec.positions() });
    }
    let mut digits = Vec::with_capacity(chars.len());
    for (pos, &ch) in chars.iter().enumerate() {
        let dim = spec.local_dim(pos);
        digits.push(char_to_digit(ch, dim).ok_or(Error::PatternChar { ch, pos, dim })?);
    }
    Ok(spec.index_of(&digits))
}

pub fn render_pattern(state: u64, spec: &LatticeSpec) -> String {
    spec.digits(state)
        .iter()
        .enumerate()
        .map(|(p, &d)| digit_to_char(d, spec.local_dim(p)))
        .collect()
}

/// A charge configuration `(g_0, ..., g_{L-1})`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SectorConfig(pub Vec<i32>);

impl SectorConfig {
    pub fn uniform(l: usize, g: i32) -> Self {
        SectorConfig(vec![g; l])
    }

    /// Check parity and the `|g| <= 4S+1` bound.
    pub fn validate(&self, spin: GaugeSpin) -> Result<()> {
        let bound = 2 * spin.twice() as i32 + 1;
        for (j, &g) in self.0.iter().enumerate() {
            if g.rem_euclid(2) != 1 || g.abs() > bound {
                return Err(Error::InvalidSector(format!("g_{j} = {g} not odd within ±{bound}")));
            }
        }
        Ok(())
    }

    pub fn charges(&self) -> &[i32] {
        &self.0
    }
}

impl fmt::Display for SectorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|g| g.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for SectorConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|t| t.trim().parse::<i32>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(SectorConfig)
    }
}
