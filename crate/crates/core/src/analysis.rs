//! Lifetimes, power-law fits, segment spectra and early-time growth coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::C64;

/// `e^{-0.4}`, the default relative lifetime threshold.
pub fn default_threshold_factor() -> f64 {
    (-0.4f64).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Lifetime {
    Crossed { time: f64 },
    /// No crossing before the end of the record.
    Censored { t_max: f64 },
}

impl Lifetime {
    pub fn time(&self) -> Option<f64> {
        match self {
            Lifetime::Crossed { time } => Some(*time),
            Lifetime::Censored { .. } => None,
        }
    }
}

/// First downward crossing of `threshold`, linearly interpolated.
///
/// `threshold = None` uses `e^{-0.4}` times the first sample.
pub fn lifetime(times: &[f64], values: &[f64], threshold: Option<f64>) -> Result<Lifetime> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::Analysis("time and value columns must be non-empty and aligned".into()));
    }
    let init = values[0];
    let thr = threshold.unwrap_or(default_threshold_factor() * init);
    if !(thr > 0.0 && thr < init) {
        return Err(Error::Analysis(format!("threshold {thr} outside (0, {init})")));
    }
    for i in 1..values.len() {
        let (a, b) = (values[i - 1], values[i]);
        if a >= thr && b < thr {
            let f = (a - thr) / (a - b);
            return Ok(Lifetime::Crossed { time: times[i - 1] + f * (times[i] - times[i - 1]) });
        }
    }
    Ok(Lifetime::Censored { t_max: *times.last().unwrap() })
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub exponent: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    /// RMS of the log-log residuals.
    pub residual: f64,
    pub points: usize,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }
}

/// Fit `y = a x^b` on the points with `x` inside the closed window.
pub fn fit_power_law(xs: &[f64], ys: &[f64], window: (f64, f64)) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::Analysis("x and y lengths differ".into()));
    }
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (&x, &y) in xs.iter().zip(ys) {
        if x < window.0 || x > window.1 {
            continue;
        }
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::Analysis(format!("non-positive point ({x}, {y}) in window")));
        }
        lx.push(x.ln());
        ly.push(y.ln());
    }
    if lx.len() < 3 {
        return Err(Error::Analysis(format!("{} points in window, need 3", lx.len())));
    }
    let (b, a) = linear_fit(&lx, &ly);
    let rms = (lx.iter().zip(&ly).map(|(x, y)| (y - a - b * x).powi(2)).sum::<f64>() / lx.len() as f64).sqrt();
    Ok(FitResult { exponent: b, prefactor: a.exp(), window, residual: rms, points: lx.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyReport {
    pub segments: Vec<usize>,
    pub spectra: Vec<Vec<f64>>,
    /// Sorted sums of one level per segment.
    pub assembled: Vec<f64>,
    /// `(energy, multiplicity)` for every level shared by more than one state.
    pub degenerate: Vec<(f64, usize)>,
    pub tol: f64,
}

impl DegeneracyReport {
    pub fn same_spectrum(&self, other: &DegeneracyReport) -> bool {
        self.assembled.len() == other.assembled.len()
            && self.assembled.iter().zip(&other.assembled).all(|(a, b)| (a - b).abs() < self.tol.max(other.tol))
    }
}

/// Levels of a single particle hopping with amplitude `j` on an open chain of `d` sites.
pub fn chain_levels(d: usize, j: f64) -> Vec<f64> {
    let m = DMatrix::from_fn(d, d, |r, c| if r.abs_diff(c) == 1 { j } else { 0.0 });
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Group sorted values into `(value, multiplicity)` runs with neighbouring gaps below `tol`.
pub fn group_levels(sorted: &[f64], tol: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &e in sorted {
        match out.last_mut() {
            Some((_, n)) if e - last < tol => *n += 1,
            _ => out.push((e, 1)),
        }
        last = e;
    }
    out
}

pub fn segment_spectrum(segments: &[usize], j: f64, tol: f64) -> Result<DegeneracyReport> {
    if segments.iter().any(|&d| d == 0) {
        return Err(Error::Analysis("segment lengths must be at least 1".into()));
    }
    let spectra: Vec<Vec<f64>> = segments.iter().map(|&d| chain_levels(d, j)).collect();
    let mut assembled = vec![0.0];
    for s in &spectra {
        assembled = assembled.iter().flat_map(|a| s.iter().map(move |e| a + e)).collect();
    }
    assembled.sort_by(f64::total_cmp);
    let degenerate = group_levels(&assembled, tol).into_iter().filter(|g| g.1 > 1).collect();
    Ok(DegeneracyReport { segments: segments.to_vec(), spectra, assembled, degenerate, tol })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthPrediction {
    /// Coefficient of `T_F^4 t^2`.
    pub c1: f64,
    /// Coefficient of `T_F^5 t`.
    pub c2: f64,
    /// Number of other-sector eigenstates degenerate with a populated level and coupled to it.
    pub degenerate_dim: usize,
}

impl GrowthPrediction {
    /// Predicted change of the charge at time `t`.
    pub fn charge_change(&self, t: f64, tf: f64) -> f64 {
        self.c1 * tf.powi(4) * t * t + self.c2 * tf.powi(5) * t
    }
}

/// Early-time growth of a sector-diagonal charge under `Q0 + T_F^2 V2`.
///
/// `sector[b]` labels the block of basis state `b` (`Q0` must not couple
/// different labels); `charge[b]` is the charge value on that state.
pub fn quadratic_growth_coefficients(
    q0: &DMatrix<C64>,
    v2: &DMatrix<C64>,
    psi: &DVector<C64>,
    sector: &[usize],
    charge: &[f64],
    tol: f64,
) -> Result<GrowthPrediction> {
    let n = q0.nrows();
    if q0.ncols() != n || v2.shape() != (n, n) || psi.len() != n || sector.len() != n || charge.len() != n {
        return Err(Error::Analysis("dimension mismatch".into()));
    }
    let norm = psi.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Analysis("initial state not normalisable".into()));
    }
    let psi = psi / C64::new(norm, 0.0);
    for r in 0..n {
        for c in 0..n {
            if sector[r] != sector[c] && q0[(r, c)].norm() > 1e-12 {
                return Err(Error::Analysis("Q0 couples different sectors".into()));
            }
        }
    }
    let mut labels: Vec<usize> = sector.to_vec();
    labels.sort_unstable();
    labels.dedup();
    // eigenbasis of Q0 in the full space, blockwise
    let mut energies = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    let mut vecs = DMatrix::<C64>::zeros(n, n);
    let mut col = 0;
    for &lab in &labels {
        let idx: Vec<usize> = (0..n).filter(|&b| sector[b] == lab).collect();
        let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| q0[(idx[r], idx[c])]);
        let eig = block.symmetric_eigen();
        for k in 0..idx.len() {
            for (r, &b) in idx.iter().enumerate() {
                vecs[(b, col)] = eig.eigenvectors[(r, k)];
            }
            energies.push(eig.eigenvalues[k]);
            owner.push(idx[0]);
            col += 1;
        }
    }
    let lambda = vecs.adjoint() * &psi;
    let start: Vec<usize> = (0..n).filter(|&b| psi[b].norm() > 1e-14).collect();
    let home = sector[start[0]];
    if start.iter().any(|&b| sector[b] != home) {
        return Err(Error::Analysis("initial state spans several sectors".into()));
    }
    let alpha0 = charge[start[0]];
    let v_eig = vecs.adjoint() * v2 * &vecs;

    let populated: Vec<usize> = (0..n).filter(|&k| sector[owner[k]] == home && lambda[k].norm() > 1e-12).collect();
    let levels = {
        let mut e: Vec<f64> = populated.iter().map(|&k| energies[k]).collect();
        e.sort_by(f64::total_cmp);
        group_levels(&e, tol)
    };
    let (mut c1, mut c2, mut ddim) = (0.0, 0.0, 0);
    for (e0, _) in levels {
        let group: Vec<usize> = populated.iter().cloned().filter(|&k| (energies[k] - e0).abs() < tol).collect();
        for m in 0..n {
            if sector[owner[m]] == home {
                continue;
            }
            let amp: C64 = group.iter().map(|&k| lambda[k] * v_eig[(m, k)]).sum();
            let w = (charge[owner[m]] - alpha0) * amp.norm_sqr();
            if (energies[m] - e0).abs() < tol {
                c1 += w;
                if amp.norm() > 1e-12 {
                    ddim += 1;
                }
            } else {
                c2 += w;
            }
        }
    }
    Ok(GrowthPrediction { c1, c2, degenerate_dim: ddim })
}
