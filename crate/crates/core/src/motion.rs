//! Classical center-of-mass motion of the trapped atom.
//!
//! Positions are in um with `z` along the cavity axis, velocities in um/us and
//! energies in hbar rad/us, so that forces are in hbar rad/us per um and the
//! mass is [`RB85_MASS_OVER_HBAR`]. The probe mode and the trap mode are
//! standing waves with slightly different wavelengths whose antinodes coincide
//! at `z = 0`; away from the center the trap wells drift off the probe
//! antinodes.
//!
//! The internal state is slaved to the position: at every step the steady
//! state for the local coupling and Stark shift supplies the dipole force,
//! the friction coefficient and the momentum diffusion.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::spectrum::Model;
use crate::steadystate::{single_excitation_observables, steady_state, FieldObservables};
use crate::units::{mhz, to_mhz, RB85_MASS_OVER_HBAR};

/// Trap power at which the Stark shift calibration is anchored, nW.
pub const STARK_CALIBRATION_POWER_NW: f64 = 170.0;
/// Peak Stark shift at [`STARK_CALIBRATION_POWER_NW`], MHz.
pub const STARK_CALIBRATION_MHZ: f64 = 35.0;
/// Boltzmann constant over hbar, rad/us per uK.
pub const KB_OVER_HBAR_PER_UK: f64 = 1.380_649e-23 / 1.054_571_817e-34 * 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    /// um
    pub lambda_probe: f64,
    /// um
    pub lambda_trap: f64,
    /// um
    pub waist_probe: f64,
    /// um
    pub waist_trap: f64,
    /// Peak Stark shift of the atomic transition, rad/us.
    pub stark_max: f64,
    /// Peak ground-state trap depth, hbar rad/us.
    pub trap_depth: f64,
}

impl Default for TrapGeometry {
    fn default() -> Self {
        Self::from_trap_power(STARK_CALIBRATION_POWER_NW)
    }
}

impl TrapGeometry {
    /// Geometry for a given trap laser power. Stark shift and depth scale
    /// linearly with power; the depth equals the peak Stark shift.
    pub fn from_trap_power(power_nw: f64) -> Self {
        let stark = mhz(STARK_CALIBRATION_MHZ) * power_nw / STARK_CALIBRATION_POWER_NW;
        Self {
            lambda_probe: 0.7802,
            lambda_trap: 0.7853,
            waist_probe: 29.0,
            waist_trap: 29.0,
            stark_max: stark,
            trap_depth: stark,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.lambda_probe, self.lambda_trap, self.waist_probe, self.waist_trap]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !pos {
            return Err(Error::InvalidParameter(format!("wavelengths and waists must be > 0: {self:?}")));
        }
        if self.lambda_probe == self.lambda_trap {
            return Err(Error::InvalidParameter("probe and trap wavelengths must differ".into()));
        }
        if !(self.stark_max >= 0.0 && self.trap_depth >= 0.0) || !self.stark_max.is_finite() || !self.trap_depth.is_finite() {
            return Err(Error::InvalidParameter(format!("stark_max and trap_depth must be >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn k_probe(&self) -> f64 {
        TAU / self.lambda_probe
    }

    pub fn k_trap(&self) -> f64 {
        TAU / self.lambda_trap
    }

    /// Center of the `k`-th trap well on the axis.
    pub fn well_position(&self, k: i64) -> f64 {
        k as f64 * self.lambda_trap / 2.0
    }

    /// Small-oscillation frequency along the axis at the central well, rad/us.
    pub fn axial_frequency(&self, mass: f64) -> f64 {
        (2.0 * self.trap_depth * self.k_trap().powi(2) / mass).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    /// um
    pub r: Vector3<f64>,
    /// um/us
    pub v: Vector3<f64>,
    /// us
    pub t: f64,
}

impl AtomState {
    pub fn at_rest(r: Vector3<f64>) -> Self {
        Self { r, v: Vector3::zeros(), t: 0.0 }
    }

    pub fn momentum(&self, mass: f64) -> Vector3<f64> {
        self.v * mass
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|x| x.is_finite()) && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalCouplingSnapshot {
    /// rad/us
    pub g_local: f64,
    /// rad/us
    pub stark_local: f64,
    /// Local trap depth (potential energy is its negative), hbar rad/us.
    pub trap_potential_local: f64,
}

/// `g0 |cos(k_p z)| exp(-(x² + y²)/w_p²)`
pub fn coupling_at(r: &Vector3<f64>, geom: &TrapGeometry, g0: f64) -> f64 {
    let rho2 = r.x * r.x + r.y * r.y;
    g0 * (geom.k_probe() * r.z).cos().abs() * (-rho2 / geom.waist_probe.powi(2)).exp()
}

/// Gradient of [`coupling_at`].
pub fn coupling_gradient(r: &Vector3<f64>, geom: &TrapGeometry, g0: f64) -> Vector3<f64> {
    let k = geom.k_probe();
    let w2 = geom.waist_probe.powi(2);
    let env = (-(r.x * r.x + r.y * r.y) / w2).exp();
    let c = (k * r.z).cos();
    let s = (k * r.z).sin();
    let axial = c.abs();
    Vector3::new(
        g0 * axial * env * (-2.0 * r.x / w2),
        g0 * axial * env * (-2.0 * r.y / w2),
        -g0 * env * k * s * c.signum(),
    )
}

fn trap_profile(r: &Vector3<f64>, geom: &TrapGeometry) -> f64 {
    let rho2 = r.x * r.x + r.y * r.y;
    (geom.k_trap() * r.z).cos().powi(2) * (-2.0 * rho2 / geom.waist_trap.powi(2)).exp()
}

fn trap_profile_gradient(r: &Vector3<f64>, geom: &TrapGeometry) -> Vector3<f64> {
    let k = geom.k_trap();
    let w2 = geom.waist_trap.powi(2);
    let env = (-2.0 * (r.x * r.x + r.y * r.y) / w2).exp();
    let c2 = (k * r.z).cos().powi(2);
    Vector3::new(
        c2 * env * (-4.0 * r.x / w2),
        c2 * env * (-4.0 * r.y / w2),
        -k * (2.0 * k * r.z).sin() * env,
    )
}

/// `(trap_potential_local, stark_local)`; both follow the trap intensity.
pub fn trap_fields_at(r: &Vector3<f64>, geom: &TrapGeometry) -> (f64, f64) {
    let f = trap_profile(r, geom);
    (geom.trap_depth * f, geom.stark_max * f)
}

pub fn snapshot_at(r: &Vector3<f64>, geom: &TrapGeometry, g0: f64) -> LocalCouplingSnapshot {
    let (depth, stark) = trap_fields_at(r, geom);
    LocalCouplingSnapshot { g_local: coupling_at(r, geom, g0), stark_local: stark, trap_potential_local: depth }
}

/// `base` with the local coupling and the Stark-shifted atomic detuning
/// `Δa - stark_local`. `base.delta_a` is measured from the unshifted atom.
pub fn local_system_params(base: &SystemParams, snap: &LocalCouplingSnapshot) -> SystemParams {
    SystemParams { g: snap.g_local, delta_a: base.delta_a - snap.stark_local, ..*base }
}

/// Internal-state quantities entering the forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalField {
    pub n_photon: f64,
    pub p_excited: f64,
    /// `2 Re<a†σ->`
    pub dipole: f64,
    /// `∂(2 Re<a†σ->)/∂Δa`
    pub dipole_slope: f64,
}

impl LocalField {
    pub const DARK: LocalField = LocalField { n_photon: 0.0, p_excited: 0.0, dipole: 0.0, dipole_slope: 0.0 };
}

/// Source of the steady internal state at a given local coupling and Stark
/// shift. Implementations are pure.
pub trait FieldProvider: Sync {
    fn field(&self, g_local: f64, stark_local: f64) -> Result<LocalField>;
}

fn observe(model: Model, p: &SystemParams) -> Result<FieldObservables> {
    match model {
        Model::Quantum => Ok(steady_state(p)?.observables()),
        Model::SingleExcitation => Ok(single_excitation_observables(p)),
        other => Err(Error::InvalidParameter(format!("model {other} cannot drive the atomic motion"))),
    }
}

/// Solves the steady state at every call.
#[derive(Debug, Clone)]
pub struct DirectProvider {
    /// Drive and detunings; `delta_a` is measured from the unshifted atom.
    pub bare: SystemParams,
    pub model: Model,
}

impl DirectProvider {
    pub fn new(bare: SystemParams, model: Model) -> Result<Self> {
        bare.validate()?;
        observe(model, &bare)?;
        Ok(Self { bare, model })
    }
}

impl FieldProvider for DirectProvider {
    fn field(&self, g_local: f64, stark_local: f64) -> Result<LocalField> {
        let snap = LocalCouplingSnapshot { g_local, stark_local, trap_potential_local: 0.0 };
        let p = local_system_params(&self.bare, &snap);
        let obs = observe(self.model, &p)?;
        let h = 1e-4 * p.kappa.max(p.gamma);
        let up = observe(self.model, &p.with_detunings(p.delta_a + h, p.delta_c))?;
        let down = observe(self.model, &p.with_detunings(p.delta_a - h, p.delta_c))?;
        Ok(LocalField {
            n_photon: obs.n_photon,
            p_excited: obs.p_excited,
            dipole: 2.0 * obs.coherence.re,
            dipole_slope: (up.coherence.re - down.coherence.re) / h,
        })
    }
}

/// Bilinear interpolation of precomputed steady states on a regular
/// `(g_local, stark_local)` grid. The detuning slope is the stark-direction
/// derivative with opposite sign, since the Stark shift enters only through
/// `Δa - stark_local`.
#[derive(Debug, Clone)]
pub struct TabulatedProvider {
    g_max: f64,
    stark_max: f64,
    ng: usize,
    ns: usize,
    /// `[n_photon, p_excited, dipole]` per node, g-major.
    nodes: Vec<[f64; 3]>,
}

impl TabulatedProvider {
    pub fn build(bare: &SystemParams, model: Model, g_max: f64, stark_max: f64, ng: usize, ns: usize) -> Result<Self> {
        bare.validate()?;
        if ng < 2 || ns < 2 || !(g_max > 0.0) || !(stark_max >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "table needs >= 2 nodes per axis and g_max > 0 (ng = {ng}, ns = {ns}, g_max = {g_max})"
            )));
        }
        let step_g = g_max / (ng - 1) as f64;
        let step_s = stark_max / (ns - 1) as f64;
        let nodes = (0..ng * ns)
            .into_par_iter()
            .map(|idx| {
                let snap = LocalCouplingSnapshot {
                    g_local: (idx / ns) as f64 * step_g,
                    stark_local: (idx % ns) as f64 * step_s,
                    trap_potential_local: 0.0,
                };
                let obs = observe(model, &local_system_params(bare, &snap))?;
                Ok([obs.n_photon, obs.p_excited, 2.0 * obs.coherence.re])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { g_max, stark_max, ng, ns, nodes })
    }

    fn locate(x: f64, max: f64, n: usize) -> (usize, f64) {
        if max <= 0.0 {
            return (0, 0.0);
        }
        let u = (x / max).clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }
}

impl FieldProvider for TabulatedProvider {
    fn field(&self, g_local: f64, stark_local: f64) -> Result<LocalField> {
        let (i, fg) = Self::locate(g_local, self.g_max, self.ng);
        let (j, fs) = Self::locate(stark_local, self.stark_max, self.ns);
        let at = |a: usize, b: usize| self.nodes[a * self.ns + b];
        let (n00, n01, n10, n11) = (at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1));
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let lo = n00[k] + (n01[k] - n00[k]) * fs;
            let hi = n10[k] + (n11[k] - n10[k]) * fs;
            *o = lo + (hi - lo) * fg;
        }
        let slope = if self.stark_max > 0.0 {
            let ds = self.stark_max / (self.ns - 1) as f64;
            let lo = n01[2] - n00[2];
            let hi = n11[2] - n10[2];
            -(lo + (hi - lo) * fg) / ds
        } else {
            0.0
        };
        Ok(LocalField { n_photon: out[0], p_excited: out[1], dipole: out[2], dipole_slope: slope })
    }
}

/// Everything the motion needs besides the field provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub geometry: TrapGeometry,
    /// Peak coupling at a probe antinode on the axis, rad/us.
    pub g0: f64,
    /// Atomic polarization decay, rad/us.
    pub gamma: f64,
    /// us/um^2
    pub mass: f64,
    /// Scale factor on the spontaneous-emission recoil diffusion.
    pub recoil_diffusion: f64,
    /// Scale factor on the axial dipole-force fluctuation diffusion.
    pub dipole_diffusion: f64,
    /// Velocity-dependent dipole force on or off.
    pub friction: bool,
    /// Half-size of the simulation box, um.
    pub box_half: [f64; 3],
}

impl MotionModel {
    pub fn new(geometry: TrapGeometry, g0: f64, gamma: f64) -> Self {
        Self {
            geometry,
            g0,
            gamma,
            mass: RB85_MASS_OVER_HBAR,
            recoil_diffusion: 1.0,
            dipole_diffusion: 1.0,
            friction: true,
            box_half: [3.0 * geometry.waist_trap, 3.0 * geometry.waist_trap, 200.0 * geometry.lambda_trap],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let ok = self.g0 >= 0.0
            && self.gamma > 0.0
            && self.mass > 0.0
            && self.recoil_diffusion >= 0.0
            && self.dipole_diffusion >= 0.0
            && self.box_half.iter().all(|b| *b > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid motion model {self:?}")))
        }
    }

    /// Largest time step resolving the axial trap oscillation, us.
    pub fn max_time_step(&self) -> f64 {
        let w = self.geometry.axial_frequency(self.mass);
        if w > 0.0 {
            0.1 / w
        } else {
            0.1
        }
    }

    pub fn in_box(&self, r: &Vector3<f64>) -> bool {
        r.iter().zip(self.box_half).all(|(x, b)| x.abs() <= b)
    }

    /// Kinetic plus trap potential energy, hbar rad/us.
    pub fn energy(&self, s: &AtomState) -> f64 {
        let (depth, _) = trap_fields_at(&s.r, &self.geometry);
        0.5 * self.mass * s.v.norm_squared() - depth
    }

    /// Bound to the trap and inside the box.
    pub fn is_trapped(&self, s: &AtomState) -> bool {
        self.in_box(&s.r) && self.energy(s) < 0.0
    }

    pub fn evaluate<P: FieldProvider + ?Sized>(&self, r: &Vector3<f64>, provider: &P) -> Result<Evaluated> {
        let snapshot = snapshot_at(r, &self.geometry, self.g0);
        let field = provider.field(snapshot.g_local, snapshot.stark_local)?;
        Ok(Evaluated { terms: forces_at(r, self, &field), field, snapshot })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceTerms {
    /// Trap plus mean dipole force.
    pub conservative: Vector3<f64>,
    /// `F = -β v`
    pub friction: Matrix3<f64>,
    /// Momentum diffusion, `d<p_i p_j>/dt = 2 D_ij`.
    pub diffusion: Matrix3<f64>,
}

/// Forces on an atom at `r` with the internal state summarized by `field`.
///
/// The mean force is `-∇U_trap - ∇g 2Re<a†σ-> - ∇stark <σ+σ->`. Friction is
/// the Doppler response of the axial dipole force, `β_zz = -k ∂F_z/∂Δa`.
/// Diffusion is isotropic spontaneous-emission recoil `k² 2γ P_e` plus an
/// axial dipole fluctuation term `(∂_z g)² P_e / γ`.
pub fn forces_at(r: &Vector3<f64>, model: &MotionModel, field: &LocalField) -> ForceTerms {
    let geom = &model.geometry;
    let grad_g = coupling_gradient(r, geom, model.g0);
    let grad_profile = trap_profile_gradient(r, geom);
    let conservative = grad_profile * geom.trap_depth
        - grad_g * field.dipole
        - grad_profile * (geom.stark_max * field.p_excited);

    let mut friction = Matrix3::zeros();
    if model.friction {
        // ∂F_z/∂Δa = -∂_z g ∂dipole/∂Δa
        friction[(2, 2)] = geom.k_probe() * grad_g.z * field.dipole_slope;
    }

    let pe = field.p_excited.max(0.0);
    let recoil = model.recoil_diffusion * geom.k_probe().powi(2) * 2.0 * model.gamma * pe;
    let mut diffusion = Matrix3::from_diagonal_element(recoil);
    diffusion[(2, 2)] += model.dipole_diffusion * grad_g.z * grad_g.z * pe / model.gamma;
    ForceTerms { conservative, friction, diffusion }
}

/// Forces and field at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluated {
    pub terms: ForceTerms,
    pub field: LocalField,
    pub snapshot: LocalCouplingSnapshot,
}

fn diffusion_kick<R: Rng + ?Sized>(d: &Matrix3<f64>, dt: f64, rng: &mut R) -> Vector3<f64> {
    let diagonal = d[(0, 1)] == 0.0 && d[(0, 2)] == 0.0 && d[(1, 2)] == 0.0;
    if diagonal {
        if d[(0, 0)] == 0.0 && d[(1, 1)] == 0.0 && d[(2, 2)] == 0.0 {
            return Vector3::zeros();
        }
        let mut out = Vector3::zeros();
        for i in 0..3 {
            let xi: f64 = StandardNormal.sample(rng);
            out[i] = (2.0 * d[(i, i)].max(0.0) * dt).sqrt() * xi;
        }
        return out;
    }
    let eig = d.symmetric_eigen();
    let mut out = Vector3::zeros();
    for i in 0..3 {
        let xi: f64 = StandardNormal.sample(rng);
        out += eig.eigenvectors.column(i) * ((2.0 * eig.eigenvalues[i].max(0.0) * dt).sqrt() * xi);
    }
    out
}

/// Velocity-Verlet step with linear friction and an additive momentum kick.
/// `here` must be the evaluation at `state.r`; the evaluation at the new
/// position is returned for reuse.
pub fn advance<P, R>(
    state: &AtomState,
    here: &Evaluated,
    dt: f64,
    model: &MotionModel,
    provider: &P,
    rng: &mut R,
) -> Result<(AtomState, Evaluated)>
where
    P: FieldProvider + ?Sized,
    R: Rng + ?Sized,
{
    let m = model.mass;
    let accel = |e: &Evaluated, v: &Vector3<f64>| (e.terms.conservative - e.terms.friction * v) / m;
    let v_half = state.v + accel(here, &state.v) * (0.5 * dt);
    let r = state.r + v_half * dt;
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::Divergence { t: state.t, reason: format!("non-finite position {r:?}") });
    }
    let next = model.evaluate(&r, provider)?;
    let v = v_half + accel(&next, &v_half) * (0.5 * dt) + diffusion_kick(&next.terms.diffusion, dt, rng) / m;
    let out = AtomState { r, v, t: state.t + dt };
    if !out.is_finite() {
        return Err(Error::Divergence { t: state.t, reason: format!("non-finite state {out:?}") });
    }
    Ok((out, next))
}

/// One integrator step from scratch.
pub fn langevin_step<P, R>(state: &AtomState, dt: f64, model: &MotionModel, provider: &P, rng: &mut R) -> Result<AtomState>
where
    P: FieldProvider + ?Sized,
    R: Rng + ?Sized,
{
    let here = model.evaluate(&state.r, provider)?;
    Ok(advance(state, &here, dt, model, provider, rng)?.0)
}

/// Initial conditions of a trapped atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Injection {
    /// Wells `-well_spread ..= well_spread` around the center are equally likely.
    pub well_spread: u32,
    /// Gaussian spread of the axial offset from the well center, um.
    pub axial_sigma: f64,
    /// Gaussian spread of each transverse coordinate, um.
    pub transverse_sigma: f64,
    /// Temperature of the Maxwell velocity distribution, uK.
    pub temperature_uk: f64,
}

impl Default for Injection {
    fn default() -> Self {
        Self { well_spread: 120, axial_sigma: 0.03, transverse_sigma: 8.0, temperature_uk: 300.0 }
    }
}

impl Injection {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.axial_sigma, self.transverse_sigma, self.temperature_uk]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("injection spreads must be >= 0: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, geom: &TrapGeometry, mass: f64, rng: &mut R) -> AtomState {
        let spread = self.well_spread as i64;
        let well = rng.random_range(-spread..=spread);
        let gauss = |sigma: f64, rng: &mut R| -> f64 {
            if sigma > 0.0 {
                Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        };
        let z = geom.well_position(well) + gauss(self.axial_sigma, rng);
        let x = gauss(self.transverse_sigma, rng);
        let y = gauss(self.transverse_sigma, rng);
        let sigma_v = (self.temperature_uk * KB_OVER_HBAR_PER_UK / mass).sqrt();
        let v = Vector3::new(gauss(sigma_v, rng), gauss(sigma_v, rng), gauss(sigma_v, rng));
        AtomState { r: Vector3::new(x, y, z), v, t: 0.0 }
    }
}

/// Writes `t_us, x_um, y_um, z_um, vx, vy, vz, g_local_MHz` rows.
pub fn write_trajectory_csv<W: Write>(w: W, model: &MotionModel, states: &[AtomState]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t_us", "x_um", "y_um", "z_um", "vx", "vy", "vz", "g_local_MHz"])?;
    for s in states {
        let g = coupling_at(&s.r, &model.geometry, model.g0);
        let row = [s.t, s.r.x, s.r.y, s.r.z, s.v.x, s.v.y, s.v.z, to_mhz(g)];
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
