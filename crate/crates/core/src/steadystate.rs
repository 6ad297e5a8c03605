//! Lindblad steady states and transmission spectra.
//!
//! The master equation is
//!
//! ```text
//! dρ/dt = -i[H, ρ] + κ (2 a ρ a† - a†a ρ - ρ a†a) + γ (2 σ- ρ σ+ - σ+σ- ρ - ρ σ+σ-)
//! ```
//!
//! with `κ`, `γ` the field and polarization decay rates (half widths), so the
//! empty-cavity line has half width `κ` and the photon lifetime is `1/(2κ)`.
//!
//! Density matrices are vectorized row-major, `vec(ρ)[i D + j] = ρ_ij`. The
//! steady state is the normalized null vector of the Liouvillian. Because
//! every operator in the model is banded in the photon-number-major basis
//! (see [`crate::hilbert`]), the Liouvillian is banded as well and the solve
//! uses [`crate::banded`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};
use crate::hilbert::{basis_index, build_operators, hamiltonian_from, AtomLevel, OperatorMatrix, SystemParams};
use crate::spectrum::{Model, ScanPoint, Spectrum, SpectrumPoint};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Relative residual accepted for a steady state.
pub const STEADY_STATE_TOLERANCE: f64 = 1e-10;

/// Conversion between optical powers and intracavity photon numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerCalibration {
    /// Intracavity photons per pW of input power at empty-cavity resonance.
    pub photons_per_pw_in: f64,
    /// Transmitted power per intracavity photon, pW.
    pub pw_out_per_photon: f64,
    /// Detector dark counts expressed as an equivalent power, fW.
    pub dark_offset_fw: f64,
}

impl Default for PowerCalibration {
    fn default() -> Self {
        Self { photons_per_pw_in: 0.9, pw_out_per_photon: 1.0, dark_offset_fw: 0.5 }
    }
}

impl PowerCalibration {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.photons_per_pw_in, self.pw_out_per_photon, self.dark_offset_fw]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("calibration constants must be >= 0: {self:?}")))
        }
    }

    /// Transmitted power in fW for a mean intracavity photon number.
    pub fn power_out_fw(&self, n_photon: f64) -> f64 {
        self.pw_out_per_photon * n_photon * 1000.0
    }
}

/// Drive amplitude producing `photons_per_pw_in * p_in` photons in the
/// resonant empty cavity (`n = η²/κ²`).
pub fn drive_from_power(p_in: f64, kappa: f64, cal: &PowerCalibration) -> Result<f64> {
    if !(p_in >= 0.0) || !p_in.is_finite() {
        return Err(Error::InvalidParameter(format!("input power must be >= 0, got {p_in}")));
    }
    cal.validate()?;
    Ok(kappa * (cal.photons_per_pw_in * p_in).sqrt())
}

/// Sparse Liouvillian in the row-major vectorized basis.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    hilbert_dim: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

fn nonzeros(m: &OperatorMatrix) -> Vec<(usize, usize, Complex64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v.norm() != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

pub fn build_liouvillian(params: &SystemParams) -> Result<Liouvillian> {
    params.validate()?;
    let ops = build_operators(params.n_fock)?;
    let h = hamiltonian_from(&ops, params);
    let d = params.dim();
    let idx = |i: usize, j: usize| i * d + j;
    let mut entries = Vec::new();

    for (i, k, v) in nonzeros(&h) {
        // -i H ρ
        for j in 0..d {
            entries.push((idx(i, j), idx(k, j), -I * v));
        }
        // +i ρ H : (ρH)_{mj} = Σ ρ_{m i} H_{i k}, with (row, col) = (i, k)
        for m in 0..d {
            entries.push((idx(m, k), idx(m, i), I * v));
        }
    }

    for (c, rate) in [(&ops.a, params.kappa), (&ops.sigma_minus, params.gamma)] {
        let cn = nonzeros(c);
        for &(i, k, c1) in &cn {
            for &(j, l, c2) in &cn {
                entries.push((idx(i, j), idx(k, l), 2.0 * rate * c1 * c2.conj()));
            }
        }
        let cdc = c.adjoint() * c;
        for (i, k, v) in nonzeros(&cdc) {
            for j in 0..d {
                entries.push((idx(i, j), idx(k, j), -rate * v));
            }
            for m in 0..d {
                entries.push((idx(m, k), idx(m, i), -rate * v));
            }
        }
    }
    Ok(Liouvillian { hilbert_dim: d, entries })
}

impl Liouvillian {
    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    /// Superoperator dimension `D²`.
    pub fn dim(&self) -> usize {
        self.hilbert_dim * self.hilbert_dim
    }

    pub fn entries(&self) -> &[(usize, usize, Complex64)] {
        &self.entries
    }

    /// Largest `|row - col|` among the stored entries.
    pub fn bandwidth(&self) -> usize {
        self.entries.iter().map(|&(r, c, _)| r.abs_diff(c)).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// `L[ρ]` for a density matrix given as a `D × D` matrix.
    pub fn apply(&self, rho: &OperatorMatrix) -> OperatorMatrix {
        let d = self.hilbert_dim;
        let mut out = OperatorMatrix::zeros(d, d);
        for &(r, c, v) in &self.entries {
            out[(r / d, r % d)] += v * rho[(c / d, c % d)];
        }
        out
    }
}

/// `-i[H, ρ] + Σ_k r_k (2 c ρ c† - c†c ρ - ρ c†c)` evaluated with plain matrix
/// products.
pub fn lindblad_rhs(h: &OperatorMatrix, collapse: &[(&OperatorMatrix, f64)], rho: &OperatorMatrix) -> OperatorMatrix {
    let mut out = (h * rho - rho * h) * (-I);
    for &(c, rate) in collapse {
        let cd = c.adjoint();
        let cdc = &cd * c;
        out += (c * rho * &cd * Complex64::new(2.0, 0.0) - &cdc * rho - rho * &cdc) * Complex64::new(rate, 0.0);
    }
    out
}

/// Quantities of the driven atom–mode state used by spectra and forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldObservables {
    /// `<a†a>`
    pub n_photon: f64,
    /// `<σ+σ->`
    pub p_excited: f64,
    /// `<a† σ->`
    pub coherence: Complex64,
}

/// Quantum state of the truncated atom ⊗ mode system.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: OperatorMatrix,
    n_fock: usize,
}

impl DensityMatrix {
    pub fn from_matrix(rho: OperatorMatrix, n_fock: usize) -> Result<Self> {
        if rho.nrows() != 2 * n_fock || rho.ncols() != 2 * n_fock {
            return Err(Error::InvalidParameter(format!(
                "density matrix is {}x{}, expected {}",
                rho.nrows(),
                rho.ncols(),
                2 * n_fock
            )));
        }
        Ok(Self { rho, n_fock })
    }

    /// `|g,0><g,0|`
    pub fn ground(n_fock: usize) -> Self {
        let mut rho = OperatorMatrix::zeros(2 * n_fock, 2 * n_fock);
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        Self { rho, n_fock }
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.rho
    }

    pub fn n_fock(&self) -> usize {
        self.n_fock
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn expect(&self, op: &OperatorMatrix) -> Complex64 {
        (&self.rho * op).trace()
    }

    pub fn photon_number(&self) -> f64 {
        (0..self.n_fock)
            .map(|n| {
                let g = self.rho[(basis_index(AtomLevel::Ground, n), basis_index(AtomLevel::Ground, n))].re;
                let e = self.rho[(basis_index(AtomLevel::Excited, n), basis_index(AtomLevel::Excited, n))].re;
                n as f64 * (g + e)
            })
            .sum()
    }

    pub fn excitation(&self) -> f64 {
        (0..self.n_fock)
            .map(|n| self.rho[(basis_index(AtomLevel::Excited, n), basis_index(AtomLevel::Excited, n))].re)
            .sum()
    }

    /// `<a† σ->`
    pub fn coherence(&self) -> Complex64 {
        (0..self.n_fock - 1)
            .map(|n| {
                ((n + 1) as f64).sqrt()
                    * self.rho[(basis_index(AtomLevel::Excited, n), basis_index(AtomLevel::Ground, n + 1))]
            })
            .sum()
    }

    pub fn observables(&self) -> FieldObservables {
        FieldObservables {
            n_photon: self.photon_number(),
            p_excited: self.excitation(),
            coherence: self.coherence(),
        }
    }

    /// Largest entry of `|ρ - ρ†|`.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Hermitian to 1e-10, unit trace to 1e-10, eigenvalues >= -1e-8.
    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        let tr = self.trace();
        let min_ev = self.min_eigenvalue();
        if herm > 1e-10 || (tr - 1.0).norm() > 1e-10 || min_ev < -1e-8 {
            return Err(Error::SolverFailure(format!(
                "density matrix invariants violated: |ρ-ρ†| = {herm:e}, tr = {tr}, min eig = {min_ev:e}"
            )));
        }
        Ok(())
    }
}

fn residual_scale(p: &SystemParams) -> f64 {
    [p.kappa, p.gamma, p.g, p.delta_a.abs(), p.delta_c.abs(), p.eta]
        .into_iter()
        .fold(0.0, f64::max)
}

fn verify(liouv: &Liouvillian, params: &SystemParams, state: DensityMatrix) -> Result<DensityMatrix> {
    let res = liouv.apply(&state.rho).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = STEADY_STATE_TOLERANCE * residual_scale(params);
    if !(res <= tol) {
        return Err(Error::SolverFailure(format!(
            "residual {res:e} exceeds {tol:e}; Fock truncation too small or degenerate parameters"
        )));
    }
    Ok(state)
}

/// Steady state of the driven, damped Jaynes–Cummings model.
///
/// The trace-preservation identity makes the `ρ_00` equation redundant; it is
/// dropped and `ρ_00` is pinned to one, which leaves a banded non-singular
/// system. The result is renormalized to unit trace and checked against the
/// full Liouvillian.
pub fn steady_state(params: &SystemParams) -> Result<DensityMatrix> {
    let liouv = build_liouvillian(params)?;
    let d = liouv.hilbert_dim;
    let n = liouv.dim();
    let bw = liouv.bandwidth();

    let mut band = BandedMatrix::zeros(n - 1, bw, bw);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n - 1];
    for &(r, c, v) in &liouv.entries {
        if r == 0 {
            continue;
        }
        if c == 0 {
            rhs[r - 1] -= v;
        } else {
            band.add(r - 1, c - 1, v);
        }
    }
    let x = band.solve(rhs)?;

    let mut rho = OperatorMatrix::zeros(d, d);
    rho[(0, 0)] = Complex64::new(1.0, 0.0);
    for (k, v) in x.into_iter().enumerate() {
        rho[((k + 1) / d, (k + 1) % d)] = v;
    }
    let tr = rho.trace();
    if !(tr.norm() > 0.0) || !tr.re.is_finite() {
        return Err(Error::SolverFailure(format!("unnormalizable steady state (trace {tr})")));
    }
    rho /= tr;
    verify(&liouv, params, DensityMatrix { rho, n_fock: params.n_fock })
}

/// Reference steady-state solve: dense LU of the Liouvillian with its first
/// row replaced by the trace condition. `O(D⁶)`; meant for cross-checks.
pub fn steady_state_dense(params: &SystemParams) -> Result<DensityMatrix> {
    let liouv = build_liouvillian(params)?;
    let d = liouv.hilbert_dim;
    let mut m = liouv.to_dense();
    let n = m.nrows();
    m.row_mut(0).fill(Complex64::new(0.0, 0.0));
    for i in 0..d {
        m[(0, i * d + i)] = Complex64::new(1.0, 0.0);
    }
    let mut b = DVector::zeros(n);
    b[0] = Complex64::new(1.0, 0.0);
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SolverFailure("singular Liouvillian with trace row".into()))?;
    let rho = OperatorMatrix::from_fn(d, d, |i, j| x[i * d + j]);
    verify(&liouv, params, DensityMatrix { rho, n_fock: params.n_fock })
}

/// Transmitted power (fW) of the steady state; dark counts are not included.
pub fn transmission(params: &SystemParams, cal: &PowerCalibration) -> Result<f64> {
    Ok(cal.power_out_fw(steady_state(params)?.photon_number()))
}

/// Weak-drive cavity amplitude `α = η(γ - iΔa) / ((κ - iΔc)(γ - iΔa) + g²)`.
///
/// This is the steady state with at most one quantum of excitation, i.e. the
/// linear (coupled-oscillator) response.
pub fn single_excitation_amplitude(p: &SystemParams) -> Complex64 {
    let atom = Complex64::new(p.gamma, -p.delta_a);
    let cavity = Complex64::new(p.kappa, -p.delta_c);
    p.eta * atom / (cavity * atom + p.g * p.g)
}

/// Observables of the single-excitation model, with phases matching the
/// quantum model (`<a> = -iα`, `<σ-> = -i g <a> / (γ - iΔa)`).
pub fn single_excitation_observables(p: &SystemParams) -> FieldObservables {
    let field = -I * single_excitation_amplitude(p);
    let sigma = -I * p.g * field / Complex64::new(p.gamma, -p.delta_a);
    FieldObservables {
        n_photon: field.norm_sqr(),
        p_excited: sigma.norm_sqr(),
        coherence: field.conj() * sigma,
    }
}

fn evaluate_grid<F>(base: &SystemParams, scan: &[ScanPoint], p_in: f64, cal: &PowerCalibration, model: Model, eval: F) -> Result<Spectrum>
where
    F: Fn(&SystemParams) -> Result<FieldObservables> + Sync,
{
    if scan.is_empty() {
        return Err(Error::InvalidParameter("empty scan grid".into()));
    }
    let eta = drive_from_power(p_in, base.kappa, cal)?;
    let results: Vec<_> = scan
        .par_iter()
        .map(|sp| {
            let p = base.with_detunings(sp.delta_a, sp.delta_c).with_eta(eta);
            (sp, eval(&p))
        })
        .collect();
    let mut spectrum = Spectrum::new(p_in, model);
    for (sp, res) in results {
        match res {
            Ok(obs) => spectrum.points.push(SpectrumPoint {
                delta_c: sp.delta_c,
                delta_a: sp.delta_a,
                power_out: cal.power_out_fw(obs.n_photon),
                stderr: 0.0,
                n_photon: obs.n_photon,
                p_excited: obs.p_excited,
            }),
            Err(e) => {
                log::warn!("{} point (Δa, Δc) = ({:.4}, {:.4}) rad/us failed: {e}", model, sp.delta_a, sp.delta_c);
                spectrum.gaps.push(*sp);
            }
        }
    }
    Ok(spectrum)
}

/// Full quantum spectrum: one steady-state solve per scan point. The drive is
/// set from `p_in` through the calibration; failures become gaps.
pub fn spectrum_quantum(base: &SystemParams, scan: &[ScanPoint], p_in: f64, cal: &PowerCalibration) -> Result<Spectrum> {
    base.validate()?;
    evaluate_grid(base, scan, p_in, cal, Model::Quantum, |p| Ok(steady_state(p)?.observables()))
}

/// Spectrum of the model restricted to a single quantum of excitation.
pub fn spectrum_single_excitation(base: &SystemParams, scan: &[ScanPoint], p_in: f64, cal: &PowerCalibration) -> Result<Spectrum> {
    base.validate()?;
    evaluate_grid(base, scan, p_in, cal, Model::SingleExcitation, |p| Ok(single_excitation_observables(p)))
}
