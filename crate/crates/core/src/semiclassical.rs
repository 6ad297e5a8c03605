//! Maxwell–Bloch (optical bistability) steady states.
//!
//! Mean-field equations for a two-level atom coupled to a classical cavity
//! field, with the same half-width rates as the quantum model:
//!
//! ```text
//! dα/dt  = -(κ - iΔc) α + g σ + η
//! dσ/dt  = -(γ - iΔa) σ + g α σz
//! dσz/dt = -2γ (σz + 1) - 2g (α σ* + α* σ)
//! ```
//!
//! Eliminating `σ` and `σz` gives `σz = -1 / (1 + x/n_s)` with
//! `x = |α|²` and saturation photon number `n_s = (γ² + Δa²) / (2g²)`, and a
//! cubic state equation for `x`. Its real non-negative roots are found as
//! companion-matrix eigenvalues, polished by Newton steps, and each root is
//! mapped back to `(α, σ, σz)`. A root lies on a stable branch when the input
//! curve `η²(x)` is increasing there.

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::spectrum::{Model, ScanPoint, Spectrum, SpectrumPoint};
use crate::steadystate::{drive_from_power, PowerCalibration};

/// Residual below which a reconstructed root is kept, relative to the
/// largest rate.
const ROOT_FILTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellBlochState {
    /// Field amplitude, √photons.
    pub alpha: Complex64,
    /// Atomic polarization.
    pub sigma: Complex64,
    /// Inversion in [-1, 1].
    pub sigma_z: f64,
    pub stable: bool,
}

impl MaxwellBlochState {
    pub fn photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    /// Excited-state population `(1 + σz) / 2`.
    pub fn excitation(&self) -> f64 {
        0.5 * (1.0 + self.sigma_z)
    }
}

/// Absolute residuals of the three steady-state equations.
pub fn mb_residuals(p: &SystemParams, s: &MaxwellBlochState) -> [f64; 3] {
    let cavity = Complex64::new(p.kappa, -p.delta_c);
    let atom = Complex64::new(p.gamma, -p.delta_a);
    let r1 = -cavity * s.alpha + p.g * s.sigma + p.eta;
    let r2 = -atom * s.sigma + p.g * s.alpha * s.sigma_z;
    let r3 = -2.0 * p.gamma * (s.sigma_z + 1.0)
        - 2.0 * p.g * (s.alpha * s.sigma.conj() + s.alpha.conj() * s.sigma).re;
    [r1.norm(), r2.norm(), r3.abs()]
}

fn rate_scale(p: &SystemParams) -> f64 {
    [p.kappa, p.gamma, p.g, p.eta].into_iter().fold(0.0, f64::max)
}

struct StateEquation {
    n_sat: f64,
    /// `A² + B² = q2 x² + q1 x + q0`
    q: [f64; 3],
    eta_sq: f64,
}

impl StateEquation {
    fn new(p: &SystemParams) -> Self {
        let atom_sq = p.gamma * p.gamma + p.delta_a * p.delta_a;
        let n_sat = atom_sq / (2.0 * p.g * p.g);
        // A(x) = κ x + (κ n_s + γ/2),  B(x) = -Δc x + (-Δc n_s + Δa/2)
        let (a1, a0) = (p.kappa, p.kappa * n_sat + 0.5 * p.gamma);
        let (b1, b0) = (-p.delta_c, -p.delta_c * n_sat + 0.5 * p.delta_a);
        let q = [a0 * a0 + b0 * b0, 2.0 * (a1 * a0 + b1 * b0), a1 * a1 + b1 * b1];
        Self { n_sat, q, eta_sq: p.eta * p.eta }
    }

    fn quad(&self, x: f64) -> (f64, f64) {
        let [q0, q1, q2] = self.q;
        (q2 * x * x + q1 * x + q0, 2.0 * q2 * x + q1)
    }

    /// Cubic coefficients `[c0, c1, c2, c3]` of `x Q(x) - η² (x + n_s)²`.
    fn cubic(&self) -> [f64; 4] {
        let [q0, q1, q2] = self.q;
        let (e, n) = (self.eta_sq, self.n_sat);
        [-e * n * n, q0 - 2.0 * e * n, q1 - e, q2]
    }

    fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let [c0, c1, c2, c3] = self.cubic();
        (((c3 * x + c2) * x + c1) * x + c0, (3.0 * c3 * x + 2.0 * c2) * x + c1)
    }

    /// Sign of `d(η²)/dx` along the input curve `η²(x) = x Q(x) / (x + n_s)²`.
    fn input_slope(&self, x: f64) -> f64 {
        let (q, dq) = self.quad(x);
        let n = self.n_sat;
        (q + x * dq) * (x + n) - 2.0 * x * q
    }

    fn real_roots(&self) -> Vec<f64> {
        let [c0, c1, c2, c3] = self.cubic();
        let companion = Matrix3::new(
            0.0, 0.0, -c0 / c3, //
            1.0, 0.0, -c1 / c3, //
            0.0, 1.0, -c2 / c3,
        );
        let mut roots: Vec<f64> = companion
            .complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
            .map(|z| self.polish(z.re))
            .filter(|x| *x >= -1e-14)
            .map(|x| x.max(0.0))
            .collect();
        roots.sort_by(|a, b| a.total_cmp(b));
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
        roots
    }

    fn polish(&self, mut x: f64) -> f64 {
        for _ in 0..50 {
            let (f, df) = self.value_and_slope(x);
            if df == 0.0 {
                break;
            }
            let step = f / df;
            x -= step;
            if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

fn reconstruct(p: &SystemParams, eq: &StateEquation, x: f64) -> MaxwellBlochState {
    let cavity = Complex64::new(p.kappa, -p.delta_c);
    let atom = Complex64::new(p.gamma, -p.delta_a);
    let sigma_z = -1.0 / (1.0 + x / eq.n_sat);
    let alpha = p.eta / (cavity - p.g * p.g * sigma_z / atom);
    let sigma = p.g * alpha * sigma_z / atom;
    MaxwellBlochState { alpha, sigma, sigma_z, stable: eq.input_slope(x) > 0.0 }
}

/// All physical steady states, ordered by increasing photon number.
pub fn mb_steady_states(p: &SystemParams) -> Result<Vec<MaxwellBlochState>> {
    p.validate()?;
    let cavity = Complex64::new(p.kappa, -p.delta_c);
    if p.g == 0.0 {
        return Ok(vec![MaxwellBlochState {
            alpha: p.eta / cavity,
            sigma: Complex64::new(0.0, 0.0),
            sigma_z: -1.0,
            stable: true,
        }]);
    }
    let eq = StateEquation::new(p);
    let scale = rate_scale(p);
    let mut worst = f64::INFINITY;
    let mut states = Vec::new();
    for x in eq.real_roots() {
        let s = reconstruct(p, &eq, x);
        let res = mb_residuals(p, &s).into_iter().fold(0.0, f64::max);
        if res <= ROOT_FILTER * scale && s.sigma.norm() <= 1.0 + 1e-12 && s.sigma_z.abs() <= 1.0 {
            states.push(s);
        } else {
            worst = worst.min(res);
        }
    }
    if states.is_empty() {
        return Err(Error::RootFinding {
            reason: format!("no physical Maxwell-Bloch root for {p:?}"),
            residual: worst,
        });
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchPolicy {
    /// Weak-field branch.
    #[default]
    Lower,
    /// Strong-field branch.
    Upper,
    /// Hysteresis along the scan order: stay on the stable branch closest to
    /// the previous point, starting from the lower branch.
    Follow,
}

fn pick(states: &[MaxwellBlochState], policy: BranchPolicy, previous: Option<f64>) -> Option<MaxwellBlochState> {
    let stable: Vec<_> = states.iter().filter(|s| s.stable).copied().collect();
    match policy {
        BranchPolicy::Lower => stable.first().copied(),
        BranchPolicy::Upper => stable.last().copied(),
        BranchPolicy::Follow => match previous {
            None => stable.first().copied(),
            Some(x) => stable.into_iter().min_by(|a, b| {
                (a.photon_number() - x).abs().total_cmp(&(b.photon_number() - x).abs())
            }),
        },
    }
}

/// Maxwell–Bloch transmission spectrum on the selected branch. Points where
/// the branch does not exist are recorded as gaps.
pub fn spectrum_mb(
    base: &SystemParams,
    scan: &[ScanPoint],
    p_in: f64,
    cal: &PowerCalibration,
    policy: BranchPolicy,
) -> Result<Spectrum> {
    base.validate()?;
    if scan.is_empty() {
        return Err(Error::InvalidParameter("empty scan grid".into()));
    }
    let eta = drive_from_power(p_in, base.kappa, cal)?;
    let mut spectrum = Spectrum::new(p_in, Model::MaxwellBloch);
    let mut previous = None;
    for sp in scan {
        let p = base.with_detunings(sp.delta_a, sp.delta_c).with_eta(eta);
        let chosen = mb_steady_states(&p).map(|states| pick(&states, policy, previous));
        match chosen {
            Ok(Some(s)) => {
                previous = Some(s.photon_number());
                spectrum.points.push(SpectrumPoint {
                    delta_c: sp.delta_c,
                    delta_a: sp.delta_a,
                    power_out: cal.power_out_fw(s.photon_number()),
                    stderr: 0.0,
                    n_photon: s.photon_number(),
                    p_excited: s.excitation(),
                });
            }
            Ok(None) => spectrum.gaps.push(*sp),
            Err(e) => {
                log::warn!("maxwell-bloch point failed: {e}");
                spectrum.gaps.push(*sp);
            }
        }
    }
    Ok(spectrum)
}
