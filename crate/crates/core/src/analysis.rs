//! Spectrum post-processing: window averages, the nonlinear intensity
//! response, peak finding and least-squares fits of `(g, Δa)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::semiclassical::{spectrum_mb, BranchPolicy};
use crate::spectrum::{Model, ScanPoint, Spectrum};
use crate::steadystate::{spectrum_quantum, spectrum_single_excitation, PowerCalibration};
use crate::units::{mhz, to_mhz};

/// Cavity-detuning window in MHz, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lo: f64,
    pub hi: f64,
}

impl WindowSpec {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let w = Self { lo, hi };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("window needs lo < hi, got [{}, {}]", self.lo, self.hi)))
        }
    }

    pub fn contains_mhz(&self, delta_c_mhz: f64) -> bool {
        let eps = 1e-9 * (1.0 + delta_c_mhz.abs());
        delta_c_mhz >= self.lo - eps && delta_c_mhz <= self.hi + eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowAverage {
    /// fW
    pub mean: f64,
    /// fW
    pub stderr: f64,
    pub count: usize,
}

fn sd_or_zero(sd: f64) -> f64 {
    if sd.is_finite() {
        sd
    } else {
        0.0
    }
}

/// Unweighted mean of `power_out` inside the window. The standard error is
/// `sqrt(Σ sd²) / n`; missing deviations count as zero.
pub fn window_average(spectrum: &Spectrum, window: &WindowSpec) -> Result<WindowAverage> {
    window_average_weighted(spectrum, window, Weighting::Uniform)
}

/// As [`window_average`], optionally with inverse-variance weights. Points
/// without a positive deviation fall back to uniform weighting.
pub fn window_average_weighted(spectrum: &Spectrum, window: &WindowSpec, weighting: Weighting) -> Result<WindowAverage> {
    window.validate()?;
    let pts: Vec<_> = spectrum.points.iter().filter(|p| window.contains_mhz(to_mhz(p.delta_c))).collect();
    if pts.is_empty() {
        return Err(Error::EmptyWindow { lo: window.lo, hi: window.hi });
    }
    let n = pts.len() as f64;
    let all_weighted = pts.iter().all(|p| sd_or_zero(p.stderr) > 0.0);
    match weighting {
        Weighting::InverseVariance if all_weighted => {
            let w: Vec<f64> = pts.iter().map(|p| 1.0 / (p.stderr * p.stderr)).collect();
            let sw: f64 = w.iter().sum();
            let mean = pts.iter().zip(&w).map(|(p, w)| p.power_out * w).sum::<f64>() / sw;
            Ok(WindowAverage { mean, stderr: sw.sqrt().recip(), count: pts.len() })
        }
        _ => {
            let mean = pts.iter().map(|p| p.power_out).sum::<f64>() / n;
            let var: f64 = pts.iter().map(|p| sd_or_zero(p.stderr).powi(2)).sum();
            Ok(WindowAverage { mean, stderr: var.sqrt() / n, count: pts.len() })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearResponsePoint {
    /// pW
    pub p_in: f64,
    /// On-window mean minus off-window mean, fW.
    pub delta_power: f64,
    /// fW
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearResponse {
    pub points: Vec<NonlinearResponsePoint>,
    /// Least-squares slope of `ln Δ` against `ln p_in`.
    pub slope: f64,
    pub intercept: f64,
    /// Number of points with `Δ > 0` entering the slope.
    pub used: usize,
}

/// Straight-line least squares `y = a + b x`; returns `(b, a)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData(format!("line fit needs >= 2 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("line fit with identical abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Ok((b, my - b * mx))
}

/// Per-power window difference and its log-log slope.
pub fn nonlinear_response(spectra: &[Spectrum], on: &WindowSpec, off: &WindowSpec) -> Result<NonlinearResponse> {
    if spectra.len() < 3 {
        return Err(Error::InsufficientData(format!("nonlinear response needs >= 3 powers, got {}", spectra.len())));
    }
    let mut points = Vec::with_capacity(spectra.len());
    for s in spectra {
        let a = window_average(s, on)?;
        let b = window_average(s, off)?;
        points.push(NonlinearResponsePoint {
            p_in: s.p_in,
            delta_power: a.mean - b.mean,
            stderr: a.stderr.hypot(b.stderr),
        });
    }
    points.sort_by(|a, b| a.p_in.total_cmp(&b.p_in));
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for p in &points {
        if p.delta_power > 0.0 && p.p_in > 0.0 {
            lx.push(p.p_in.ln());
            ly.push(p.delta_power.ln());
        } else {
            log::warn!("excluding p_in = {} pW from the slope: difference {} fW", p.p_in, p.delta_power);
        }
    }
    let (slope, intercept) = linear_fit(&lx, &ly)?;
    Ok(NonlinearResponse { points, slope, intercept, used: lx.len() })
}

impl NonlinearResponse {
    /// CSV `p_in_pW, delta_fW, stderr_fW`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["p_in_pW", "delta_fW", "stderr_fW"])?;
        for p in &self.points {
            wr.write_record([p.p_in.to_string(), p.delta_power.to_string(), p.stderr.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub delta_c_mhz: f64,
    /// fW
    pub height: f64,
    /// fW
    pub prominence: f64,
}

/// Vertex of the parabola through three points.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2]);
    if d == 0.0 {
        return None;
    }
    let a = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / d;
    let b = (x[2].powi(2) * (y[0] - y[1]) + x[1].powi(2) * (y[2] - y[0]) + x[0].powi(2) * (y[1] - y[2])) / d;
    let c = (x[1] * x[2] * (x[1] - x[2]) * y[0] + x[2] * x[0] * (x[2] - x[0]) * y[1] + x[0] * x[1] * (x[0] - x[1]) * y[2]) / d;
    if a >= 0.0 {
        return None;
    }
    let xv = -b / (2.0 * a);
    Some((xv, c - b * b / (4.0 * a)))
}

/// Local maxima with at least `min_prominence`, refined by a three-point
/// parabola. Points are taken in order of increasing `Δc`.
pub fn find_peaks(spectrum: &Spectrum, min_prominence: f64) -> Vec<Peak> {
    let mut pts: Vec<(f64, f64)> = spectrum.points.iter().map(|p| (to_mhz(p.delta_c), p.power_out)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < 5 {
        return Vec::new();
    }
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = y.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if !(y[i] > y[i - 1]) {
            i += 1;
            continue;
        }
        // plateau: extend to its right edge
        let mut j = i;
        while j + 1 < n && y[j + 1] == y[i] {
            j += 1;
        }
        if j + 1 >= n || !(y[j + 1] < y[i]) {
            i = j + 1;
            continue;
        }
        let mut left_min = y[i];
        for k in (0..i).rev() {
            if y[k] > y[i] {
                break;
            }
            left_min = left_min.min(y[k]);
        }
        let mut right_min = y[i];
        for &v in &y[j + 1..] {
            if v > y[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        let prominence = y[i] - left_min.max(right_min);
        if prominence >= min_prominence && prominence > 0.0 {
            let mid = (i + j) / 2;
            let (x0, h0) = if i == j {
                parabola_vertex([pts[i - 1].0, pts[i].0, pts[i + 1].0], [y[i - 1], y[i], y[i + 1]])
                    .filter(|(xv, _)| *xv >= pts[i - 1].0 && *xv <= pts[i + 1].0)
                    .unwrap_or((pts[i].0, y[i]))
            } else {
                (0.5 * (pts[i].0 + pts[j].0), y[mid])
            };
            peaks.push(Peak { delta_c_mhz: x0, height: h0, prominence });
        }
        i = j + 1;
    }
    peaks
}

/// Coupling from the two normal-mode peak positions of a scan at fixed
/// atom–cavity detuning `δ` (all MHz): `g = ½ sqrt((Δc+ - Δc-)² - δ²)`.
pub fn coupling_from_normal_modes(lower_mhz: f64, upper_mhz: f64, atom_cavity_mhz: f64) -> Result<f64> {
    let split2 = (upper_mhz - lower_mhz).powi(2) - atom_cavity_mhz.powi(2);
    if !(split2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "normal-mode splitting {} MHz smaller than detuning {} MHz",
            upper_mhz - lower_mhz,
            atom_cavity_mhz
        )));
    }
    Ok(0.5 * split2.sqrt())
}

/// Settings of [`fit_g_delta`]. Grids are `(lo, hi, step)` in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub g_grid: (f64, f64, f64),
    pub delta_a_grid: (f64, f64, f64),
    /// Holds `Δa` at this value (MHz) and fits `g` alone.
    pub fixed_delta_a: Option<f64>,
    /// Refinement stops once the simplex is smaller than this, MHz.
    pub tolerance: f64,
    /// Evaluation budget of each refinement start.
    pub max_evaluations: usize,
    /// Number of best grid points refined.
    pub starts: usize,
    pub branch: BranchPolicy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            g_grid: (8.0, 16.0, 0.5),
            delta_a_grid: (-3.0, 3.0, 0.5),
            fixed_delta_a: None,
            tolerance: 1e-3,
            max_evaluations: 300,
            starts: 4,
            branch: BranchPolicy::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub g_mhz: f64,
    pub delta_a_mhz: f64,
    pub residual: f64,
}

/// Fit result, units MHz and fW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: Model,
    pub g_mhz: f64,
    pub delta_a_mhz: f64,
    pub offsets_fw: Vec<f64>,
    /// Sum of squared residuals, fW².
    pub residual: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub grid_size: usize,
    pub grid_best: GridPoint,
    /// Best objective after each refinement iteration of the winning start.
    pub refinement_trace: Vec<f64>,
}

struct Simplex {
    x: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
    evaluations: usize,
    converged: bool,
}

/// Nelder–Mead minimization from `x0` with initial edge `step`. The best
/// vertex never gets worse, so the trace is non-increasing.
fn nelder_mead(f: &(dyn Fn(&[f64]) -> f64 + Sync), x0: &[f64], step: f64, tol: f64, max_evals: usize) -> Simplex {
    let n = x0.len();
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    pts.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        pts.push((x, v));
    }
    let mut evals = n + 1;
    let mut trace = Vec::new();
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(pts[0].1);
        let size = pts[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < tol || evals >= max_evals {
            return Simplex { x: pts[0].0.clone(), value: pts[0].1, trace, evaluations: evals, converged: size < tol };
        }
        let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64).collect();
        let worst = pts[n].clone();
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < pts[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            evals += 1;
            pts[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (reflected, fr);
        } else {
            let (towards, fw) = if fr < worst.1 { (reflected.clone(), fr) } else { (worst.0.clone(), worst.1) };
            let contracted = combine(&centroid, &towards, 0.5);
            let fc = f(&contracted);
            evals += 1;
            if fc < fw {
                pts[n] = (contracted, fc);
            } else {
                let best = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    p.0 = combine(&best, &p.0, 0.5);
                    p.1 = f(&p.0);
                }
                evals += n;
            }
        }
    }
}

struct Objective<'a> {
    spectra: &'a [Spectrum],
    base: SystemParams,
    cal: PowerCalibration,
    model: Model,
    branch: BranchPolicy,
}

impl Objective<'_> {
    fn model_powers(&self, s: &Spectrum, g: f64, delta_a: f64) -> Result<Vec<f64>> {
        let scan: Vec<ScanPoint> = s.points.iter().map(|p| ScanPoint::new(delta_a, p.delta_c)).collect();
        let base = self.base.with_g(g);
        let m = match self.model {
            Model::Quantum => spectrum_quantum(&base, &scan, s.p_in, &self.cal)?,
            Model::SingleExcitation => spectrum_single_excitation(&base, &scan, s.p_in, &self.cal)?,
            Model::MaxwellBloch => spectrum_mb(&base, &scan, s.p_in, &self.cal, self.branch)?,
            Model::MonteCarlo => {
                return Err(Error::InvalidParameter("cannot fit with the Monte Carlo model".into()))
            }
        };
        if !m.gaps.is_empty() {
            return Err(Error::SolverFailure(format!("{} model points failed", m.gaps.len())));
        }
        Ok(m.points.iter().map(|p| p.power_out).collect())
    }

    /// Residual and the optimal non-negative offsets.
    fn eval(&self, g_mhz: f64, delta_a_mhz: f64) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut offsets = Vec::with_capacity(self.spectra.len());
        for s in self.spectra {
            let Ok(model) = self.model_powers(s, mhz(g_mhz), mhz(delta_a_mhz)) else {
                return (f64::INFINITY, Vec::new());
            };
            let diff: Vec<f64> = s.points.iter().zip(&model).map(|(p, m)| p.power_out - m).collect();
            let offset = (diff.iter().sum::<f64>() / diff.len() as f64).max(0.0);
            total += diff.iter().map(|d| (d - offset).powi(2)).sum::<f64>();
            offsets.push(offset);
        }
        (total, offsets)
    }
}

fn grid_axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    crate::spectrum::detuning_axis_mhz(lo, hi, step)
}

/// Least-squares fit of a common `(g, Δa)` and one non-negative additive
/// offset per spectrum. All spectra are vertical scans: the model is
/// evaluated at the fitted `Δa` and each point's `Δc`.
///
/// A full grid search is followed by Nelder–Mead refinement from the
/// `starts` best grid points; the objective never increases during
/// refinement. If the winning simplex does not shrink below the tolerance
/// within its evaluation budget the best point found is reported with
/// `converged = false`.
pub fn fit_g_delta(spectra: &[Spectrum], base: &SystemParams, cal: &PowerCalibration, model: Model, opts: &FitOptions) -> Result<FitReport> {
    if spectra.is_empty() || spectra.iter().any(|s| s.points.is_empty()) {
        return Err(Error::InsufficientData("fit needs non-empty spectra".into()));
    }
    base.validate()?;
    let obj = Objective { spectra, base: *base, cal: *cal, model, branch: opts.branch };
    let gs = grid_axis(opts.g_grid.0, opts.g_grid.1, opts.g_grid.2)?;
    let das = match opts.fixed_delta_a {
        Some(d) => vec![d],
        None => grid_axis(opts.delta_a_grid.0, opts.delta_a_grid.1, opts.delta_a_grid.2)?,
    };
    let grid: Vec<(f64, f64)> = gs.iter().flat_map(|&g| das.iter().map(move |&d| (g, d))).collect();
    let scored: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&(g, d)| (g, d, obj.eval(g, d).0))
        .collect();
    let best = scored
        .iter()
        .copied()
        .filter(|s| s.2.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::SolverFailure("every grid point failed".into()))?;
    let grid_best = GridPoint { g_mhz: best.0, delta_a_mhz: best.1, residual: best.2 };

    let fixed = opts.fixed_delta_a;
    let to_point = |x: &[f64]| (x[0], fixed.unwrap_or_else(|| x[1]));
    let f = |x: &[f64]| {
        let (g, d) = to_point(x);
        if g > 0.0 {
            obj.eval(g, d).0
        } else {
            f64::INFINITY
        }
    };
    let step = if fixed.is_some() { opts.g_grid.2 } else { opts.g_grid.2.min(opts.delta_a_grid.2) } / 2.0;
    let mut ranked: Vec<(f64, f64, f64)> = scored.iter().copied().filter(|s| s.2.is_finite()).collect();
    ranked.sort_by(|a, b| a.2.total_cmp(&b.2));
    ranked.truncate(opts.starts.max(1));
    let runs: Vec<Simplex> = ranked
        .par_iter()
        .map(|&(g, d, _)| {
            let x0: Vec<f64> = if fixed.is_some() { vec![g] } else { vec![g, d] };
            nelder_mead(&f, &x0, step, opts.tolerance, opts.max_evaluations)
        })
        .collect();
    let evaluations = grid.len() + runs.iter().map(|r| r.evaluations).sum::<usize>();
    let winner = runs.into_iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("at least one start");
    let converged = winner.converged;
    if !converged {
        log::warn!("fit refinement stopped after {} evaluations without converging", winner.evaluations);
    }
    let (g, d) = to_point(&winner.x);
    let trace = winner.trace;
    let (residual, offsets_fw) = obj.eval(g, d);
    Ok(FitReport {
        model,
        g_mhz: g,
        delta_a_mhz: d,
        offsets_fw,
        residual,
        converged,
        evaluations,
        grid_size: grid.len(),
        grid_best,
        refinement_trace: trace,
    })
}
