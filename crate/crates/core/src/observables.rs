//! Transport diagnostics: root-mean-square spreading, power-law fits and
//! localization lengths.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::PopulationSeries;
use crate::error::{Error, Result};
use crate::network::{hamiltonian, SiteNetwork};
use crate::theory;

/// Below this remaining population the spread is no longer defined.
pub const MIN_TRACE: f64 = 1e-9;
/// Plateau detection: the log-log slope over the window must stay below this.
pub const PLATEAU_SLOPE: f64 = 0.1;
/// Coherent observation time in units of 1/J.
pub const PLATEAU_HORIZON_J: f64 = 50.0;
/// A plateau this close to the uniform-spread value is a finite-size
/// saturation, not localization.
pub const SATURATION_FRACTION: f64 = 0.8;
/// τ is the first time r(t) reaches this fraction of the plateau.
pub const TAU_FRACTION: f64 = 0.9;

/// Root-mean-square displacement from `origin`, renormalized by the surviving
/// population so trapping and recombination do not read as transport.
///
/// The series stops at the first sample whose trace is below [`MIN_TRACE`].
pub fn msd_curve<P: PopulationSeries + ?Sized>(
    net: &SiteNetwork,
    series: &P,
    origin: usize,
) -> Result<Vec<(f64, f64)>> {
    let n = net.n_sites();
    if origin >= n {
        return Err(Error::invalid(format!("origin {origin} out of range for {n} sites")));
    }
    let d2: Vec<f64> = (0..n).map(|i| net.distance(i, origin).powi(2)).collect();
    let mut out = Vec::new();
    for (k, t) in series.sample_times().into_iter().enumerate() {
        let pops = series.populations_at(k);
        let trace: f64 = pops.iter().sum();
        if trace <= MIN_TRACE {
            break;
        }
        let m2: f64 = pops.iter().zip(&d2).map(|(p, r2)| p * r2).sum();
        out.push((t, (m2 / trace).max(0.0).sqrt()));
    }
    Ok(out)
}

/// Writes `time,r` rows.
pub fn write_msd_csv<W: Write>(series: &[(f64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "time,r")?;
    for (t, r) in series {
        writeln!(out, "{t},{r}")?;
    }
    Ok(())
}

/// Power law r(t) = coefficient · t^exponent fitted on a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub window: (f64, f64),
    /// RMS residual of the fit in log r.
    pub residual: f64,
    pub points: usize,
}

impl DiffusionFit {
    pub fn spread_at(&self, t: f64) -> f64 {
        self.coefficient * t.powf(self.exponent)
    }

    /// Local diffusion constant ½ d⟨r²⟩/dt = α r²/t of the fitted law at the
    /// window's geometric midpoint. Equals r²/2t for normal diffusion and
    /// vanishes on a localization plateau.
    pub fn diffusion_constant(&self) -> f64 {
        let t = (self.window.0 * self.window.1).sqrt();
        self.exponent * self.spread_at(t).powi(2) / t
    }
}

pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares fit of log r against log t over samples with t in `window`.
pub fn fit_diffusion(series: &[(f64, f64)], window: (f64, f64)) -> Result<DiffusionFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!("fit window ({lo}, {hi}) must satisfy 0 < lo < hi")));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= lo && *t <= hi)
        .copied()
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::invalid(format!(
            "{} points in window ({lo}, {hi}), need at least {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    if let Some((t, r)) = pts.iter().find(|(_, r)| !(*r > 0.0)) {
        return Err(Error::invalid(format!("non-positive spread r = {r} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, r)| r.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let m = xs.len() as f64;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(DiffusionFit {
        exponent: slope,
        coefficient: intercept.exp(),
        window,
        residual,
        points: pts.len(),
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Participation number 1/Σ|ψ_i|⁴ of a normalized vector.
pub fn participation_number(psi: &[f64]) -> f64 {
    let norm2: f64 = psi.iter().map(|x| x * x).sum();
    let p4: f64 = psi.iter().map(|x| x.powi(4)).sum();
    norm2 * norm2 / p4
}

/// Band-averaged participation number of the eigenvectors of `h` whose
/// indices (eigenvalues sorted ascending) fall in `band`.
pub fn ipr_localization(h: &DMatrix<f64>, band: Range<usize>) -> Result<f64> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::invalid("Hamiltonian must be square"));
    }
    if band.is_empty() || band.end > n {
        return Err(Error::invalid(format!(
            "eigenvalue band {band:?} is empty or exceeds {n} states"
        )));
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let count = band.len() as f64;
    let total: f64 = order[band]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            participation_number(&v).clamp(1.0, n as f64)
        })
        .sum();
    Ok(total / count)
}

/// Plateau search parameters and what the detector measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauDiagnostics {
    pub window: (f64, f64),
    pub slope: f64,
    pub slope_threshold: f64,
    /// RMS distance from the origin of a uniform spread over all sites.
    pub saturation: f64,
    pub saturation_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicLocalization {
    pub ell_dynamic: f64,
    pub tau: f64,
    /// True when no localization plateau was found; `ell_dynamic` is then n − 1.
    pub capped: bool,
    pub plateau: PlateauDiagnostics,
}

/// Number of time samples in the coherent run.
const DYNAMIC_SAMPLES: usize = 2000;

/// Coherent spreading from `origin` (no dephasing, sink or loss) up to
/// T = 50/J, with J the mean nearest-neighbour coupling.
///
/// The plateau value is the median of r(t) over [T/2, T], accepted when the
/// log-log slope of the running mean of r there is below 0.1 and the value is below 80 % of the
/// uniform-spread saturation. τ is the first time r reaches 90 % of it.
pub fn dynamic_localization(net: &SiteNetwork, origin: usize) -> Result<DynamicLocalization> {
    let n = net.n_sites();
    if origin >= n {
        return Err(Error::invalid(format!("origin {origin} out of range for {n} sites")));
    }
    let j = net.mean_neighbor_coupling();
    if !(j > 0.0) {
        return Err(Error::invalid("network has no nearest-neighbour coupling"));
    }
    let horizon = PLATEAU_HORIZON_J / j;
    let series = coherent_spread(net, origin, horizon, DYNAMIC_SAMPLES);

    let window = (0.5 * horizon, horizon);
    let in_window = |t: f64| t >= window.0 && t <= window.1;
    let plateau: Vec<(f64, f64)> = series.iter().filter(|(t, _)| in_window(*t)).copied().collect();
    // slope of the running time average, so beating between near-resonant
    // localized states does not read as spreading
    let mut acc = 0.0;
    let running: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .map(|(k, &(t, r))| {
            acc += r;
            (t, acc / (k + 1) as f64)
        })
        .filter(|(t, _)| in_window(*t))
        .collect();
    let xs: Vec<f64> = running.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = running.iter().map(|(_, r)| r.max(1e-300).ln()).collect();
    let (slope, _) = least_squares(&xs, &ys);
    let median = median(plateau.iter().map(|(_, r)| *r).collect());

    let saturation = ((0..n).map(|i| net.distance(i, origin).powi(2)).sum::<f64>() / n as f64).sqrt();
    let capped = !(slope < PLATEAU_SLOPE) || median >= SATURATION_FRACTION * saturation;
    let ell_dynamic = if capped { (n - 1) as f64 } else { median };
    let tau = series
        .iter()
        .find(|(_, r)| *r >= TAU_FRACTION * ell_dynamic)
        .map_or(horizon, |(t, _)| *t);
    Ok(DynamicLocalization {
        ell_dynamic,
        tau,
        capped,
        plateau: PlateauDiagnostics {
            window,
            slope,
            slope_threshold: PLATEAU_SLOPE,
            saturation,
            saturation_fraction: SATURATION_FRACTION,
        },
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Exact unitary spreading of |origin⟩ via the eigenbasis of H, sampled on
/// `samples` equal steps of (0, horizon].
pub fn coherent_spread(
    net: &SiteNetwork,
    origin: usize,
    horizon: f64,
    samples: usize,
) -> Vec<(f64, f64)> {
    let n = net.n_sites();
    let eig = SymmetricEigen::new(hamiltonian(net));
    let v = &eig.eigenvectors;
    // amplitudes of |origin⟩ in the eigenbasis
    let c: Vec<f64> = (0..n).map(|k| v[(origin, k)]).collect();
    let d2: Vec<f64> = (0..n).map(|i| net.distance(i, origin).powi(2)).collect();
    let mut psi = DVector::<C64>::zeros(n);
    (1..=samples)
        .map(|s| {
            let t = horizon * s as f64 / samples as f64;
            psi.fill(C64::new(0.0, 0.0));
            for k in 0..n {
                let phase = C64::from_polar(c[k], -eig.eigenvalues[k] * t);
                for i in 0..n {
                    psi[i] += phase * v[(i, k)];
                }
            }
            let m2: f64 = (0..n).map(|i| psi[i].norm_sqr() * d2[i]).sum();
            (t, m2.sqrt())
        })
        .collect()
}

/// Side-by-side localization lengths for one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEstimate {
    /// (J/Δω)² clamped to [1, n − 1].
    pub ell_theory: f64,
    /// Band-averaged participation number, in [1, n].
    pub ell_ipr: f64,
    pub ell_dynamic: f64,
    /// Time to reach the coherent plateau (ps).
    pub tau: f64,
    pub capped: bool,
    pub plateau: PlateauDiagnostics,
}

/// All three estimators for `net` with disorder scale `delta_omega`; the IPR
/// is averaged over the whole spectrum.
pub fn localization_estimate(
    net: &SiteNetwork,
    delta_omega: f64,
    origin: usize,
) -> Result<LocalizationEstimate> {
    let j = net.mean_neighbor_coupling();
    let ell_theory = theory::theory_localization(j, delta_omega, net.n_sites());
    let ell_ipr = ipr_localization(&hamiltonian(net), 0..net.n_sites())?;
    let dynamic = dynamic_localization(net, origin)?;
    Ok(LocalizationEstimate {
        ell_theory,
        ell_ipr,
        ell_dynamic: dynamic.ell_dynamic,
        tau: dynamic.tau,
        capped: dynamic.capped,
        plateau: dynamic.plateau,
    })
}

/// Decay constant of ρ₁₁(t) − ρ₁₁(∞) from a log-linear fit over samples with
/// t in `window`. `equilibrium` is the long-time population.
pub fn fit_relaxation_rate(
    series: &[(f64, f64)],
    equilibrium: f64,
    window: (f64, f64),
) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, p)| *t >= window.0 && *t <= window.1 && (p - equilibrium).abs() > 0.0)
        .map(|(t, p)| (*t, (p - equilibrium).abs().ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::invalid(format!(
            "{} usable points in relaxation window, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Ok(-least_squares(&xs, &ys).0)
}
