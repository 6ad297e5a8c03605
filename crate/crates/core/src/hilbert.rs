//! Truncated atom ⊗ mode Hilbert space and the Jaynes–Cummings ladder.
//!
//! Basis states are ordered by photon number first, atom level second:
//! `|g,0>, |e,0>, |g,1>, |e,1>, ...`, i.e. index `2 n + s` with `s = 0` for the
//! ground and `s = 1` for the excited level. Every operator used here only
//! connects states whose indices differ by at most two, which keeps the
//! Liouvillian banded (see [`crate::steadystate`]).
//!
//! The Hamiltonian is written in the frame rotating at the drive frequency
//! `omega_L`:
//!
//! ```text
//! H = -Δc a†a - Δa σ+σ- + g (a†σ- + a σ+) + η (a + a†)
//! ```
//!
//! with `Δa = ω_L - ω_a` and `Δc = ω_L - ω_c`. In this frame the energy of a
//! lab-frame level with `m` excitations and frequency `ω` is `ω - m ω_L`; see
//! [`rotating_frame_energy`]. Setting `ω_L = 0` gives `ω_a = -Δa`,
//! `ω_c = -Δc`, which is how the detuning-parameterized helpers map onto the
//! lab-frame ladder.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type OperatorMatrix = DMatrix<Complex64>;

/// Physics configuration of one steady-state solve. Rates in rad/us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Atom–cavity coupling.
    pub g: f64,
    /// Cavity field decay rate (half width).
    pub kappa: f64,
    /// Atomic polarization decay rate (half width).
    pub gamma: f64,
    /// Atom detuning `ω_L - ω_a`.
    pub delta_a: f64,
    /// Cavity detuning `ω_L - ω_c`.
    pub delta_c: f64,
    /// Coherent cavity drive amplitude.
    pub eta: f64,
    /// Number of retained photon-number states `|0> .. |n_fock - 1>`.
    pub n_fock: usize,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.g, self.kappa, self.gamma, self.delta_a, self.delta_c, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(format!("non-finite value in {self:?}")));
        }
        if self.kappa <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "decay rates must be positive (kappa = {}, gamma = {})",
                self.kappa, self.gamma
            )));
        }
        if self.g < 0.0 || self.eta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "coupling and drive must be non-negative (g = {}, eta = {})",
                self.g, self.eta
            )));
        }
        if self.n_fock < 2 {
            return Err(Error::InvalidParameter(format!("n_fock = {} < 2", self.n_fock)));
        }
        Ok(())
    }

    /// Basis dimension `2 n_fock`.
    pub fn dim(&self) -> usize {
        2 * self.n_fock
    }

    pub fn with_detunings(mut self, delta_a: f64, delta_c: f64) -> Self {
        self.delta_a = delta_a;
        self.delta_c = delta_c;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_n_fock(mut self, n_fock: usize) -> Self {
        self.n_fock = n_fock;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomLevel {
    Ground,
    Excited,
}

/// Index of `|level, n>` in the ordered basis.
#[inline]
pub fn basis_index(level: AtomLevel, n: usize) -> usize {
    2 * n + matches!(level, AtomLevel::Excited) as usize
}

/// Ladder and projector operators on the truncated space.
#[derive(Debug, Clone)]
pub struct Operators {
    pub a: OperatorMatrix,
    pub a_dagger: OperatorMatrix,
    pub sigma_minus: OperatorMatrix,
    pub sigma_plus: OperatorMatrix,
    /// `a†a`
    pub number: OperatorMatrix,
    /// `σ+σ-`
    pub excitation: OperatorMatrix,
}

pub fn build_operators(n_fock: usize) -> Result<Operators> {
    if n_fock < 2 {
        return Err(Error::InvalidParameter(format!("n_fock = {n_fock} < 2")));
    }
    let dim = 2 * n_fock;
    let mut a = OperatorMatrix::zeros(dim, dim);
    let mut sigma_minus = OperatorMatrix::zeros(dim, dim);
    for n in 0..n_fock {
        for level in [AtomLevel::Ground, AtomLevel::Excited] {
            if n > 0 {
                a[(basis_index(level, n - 1), basis_index(level, n))] =
                    Complex64::new((n as f64).sqrt(), 0.0);
            }
        }
        sigma_minus[(basis_index(AtomLevel::Ground, n), basis_index(AtomLevel::Excited, n))] =
            Complex64::new(1.0, 0.0);
    }
    let a_dagger = a.adjoint();
    let sigma_plus = sigma_minus.adjoint();
    let number = &a_dagger * &a;
    let excitation = &sigma_plus * &sigma_minus;
    Ok(Operators { a, a_dagger, sigma_minus, sigma_plus, number, excitation })
}

/// Driven Jaynes–Cummings Hamiltonian in the laser-rotating frame.
pub fn build_hamiltonian(params: &SystemParams) -> Result<OperatorMatrix> {
    params.validate()?;
    let ops = build_operators(params.n_fock)?;
    Ok(hamiltonian_from(&ops, params))
}

pub(crate) fn hamiltonian_from(ops: &Operators, p: &SystemParams) -> OperatorMatrix {
    let c = |x: f64| Complex64::new(x, 0.0);
    &ops.number * c(-p.delta_c)
        + &ops.excitation * c(-p.delta_a)
        + (&ops.a_dagger * &ops.sigma_minus + &ops.a * &ops.sigma_plus) * c(p.g)
        + (&ops.a + &ops.a_dagger) * c(p.eta)
}

/// Largest entry modulus of a complex matrix.
pub fn max_abs_entry(m: &OperatorMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Eigenvalues (ascending) of the undriven Hamiltonian restricted to the
/// block with `excitations` quanta. The block is truncated at the Fock
/// boundary, so the top block may contain a single state.
pub fn excitation_block_eigenvalues(params: &SystemParams, excitations: usize) -> Result<Vec<f64>> {
    let p = params.with_eta(0.0);
    let h = build_hamiltonian(&p)?;
    let mut idx = Vec::with_capacity(2);
    if excitations < p.n_fock {
        idx.push(basis_index(AtomLevel::Ground, excitations));
    }
    if excitations >= 1 && excitations - 1 < p.n_fock {
        idx.push(basis_index(AtomLevel::Excited, excitations - 1));
    }
    if idx.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no {excitations}-excitation states with n_fock = {}",
            p.n_fock
        )));
    }
    let block = OperatorMatrix::from_fn(idx.len(), idx.len(), |i, j| h[(idx[i], idx[j])]);
    let mut ev: Vec<f64> = block.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Minus => -1.0,
            Branch::Plus => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Minus => "minus",
            Branch::Plus => "plus",
        }
    }
}

/// A dressed level `|n+1, ∓>` of the coupled ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedLevel {
    pub n: usize,
    pub branch: Branch,
    pub omega: f64,
}

/// Lab-frame frequencies `(ω_{n+1,-}, ω_{n+1,+})` of the `(n+1)`-excitation
/// doublet.
pub fn dressed_frequencies(omega_a: f64, omega_c: f64, g: f64, n: usize) -> (f64, f64) {
    let centre = n as f64 * omega_c + 0.5 * (omega_a + omega_c);
    let half = 0.5 * dressed_splitting(omega_a - omega_c, g, n);
    (centre - half, centre + half)
}

/// `ω_{n+1,+} - ω_{n+1,-} = sqrt(4 g² (n+1) + (ω_a - ω_c)²)`.
pub fn dressed_splitting(delta_ac: f64, g: f64, n: usize) -> f64 {
    (4.0 * g * g * (n as f64 + 1.0) + delta_ac * delta_ac).sqrt()
}

/// Both dressed levels of every manifold `n = 0 ..= n_max`.
pub fn dressed_ladder(omega_a: f64, omega_c: f64, g: f64, n_max: usize) -> Vec<DressedLevel> {
    (0..=n_max)
        .flat_map(|n| {
            let (lo, hi) = dressed_frequencies(omega_a, omega_c, g, n);
            [
                DressedLevel { n, branch: Branch::Minus, omega: lo },
                DressedLevel { n, branch: Branch::Plus, omega: hi },
            ]
        })
        .collect()
}

/// Energy in the frame rotating at `omega_laser` of a lab-frame level with
/// `excitations` quanta.
#[inline]
pub fn rotating_frame_energy(omega_lab: f64, excitations: usize, omega_laser: f64) -> f64 {
    omega_lab - excitations as f64 * omega_laser
}

/// Dressed frequencies expressed through the detunings, i.e. the rotating
/// frame energies of the `(n+1)` doublet (laser frequency taken as zero).
pub fn dressed_frequencies_rotating(delta_a: f64, delta_c: f64, g: f64, n: usize) -> (f64, f64) {
    dressed_frequencies(-delta_a, -delta_c, g, n)
}

/// Cavity detunings at which `(n+1) ω_L = ω_{n+1,∓}` for a fixed atom–cavity
/// detuning `delta_ac = ω_a - ω_c`. Returned as `(minus, plus)`.
pub fn multiphoton_resonance_detunings(g: f64, delta_ac: f64, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "n = 0 is the normal-mode doublet; use dressed_frequencies".into(),
        ));
    }
    let m = 2.0 * (n as f64 + 1.0);
    let root = dressed_splitting(delta_ac, g, n);
    Ok((delta_ac / m - root / m, delta_ac / m + root / m))
}

/// Resonance loci of the `(n+1)` manifold along a scan at fixed atom detuning
/// `delta_a` (vertical line in the `(Δa, Δc)` plane).
///
/// Along such a line the atom–cavity detuning is `Δc - Δa`, so the condition
/// is solved self-consistently by iterating [`multiphoton_resonance_detunings`].
/// The map contracts with factor at most `1/(n+1)`, so this converges for
/// every `n >= 1`.
pub fn multiphoton_resonance_at_atom_detuning(g: f64, delta_a: f64, n: usize) -> Result<(f64, f64)> {
    let solve = |branch: Branch| -> Result<f64> {
        let mut dc = branch.sign() * g;
        for _ in 0..500 {
            let (lo, hi) = multiphoton_resonance_detunings(g, dc - delta_a, n)?;
            let next = if branch == Branch::Minus { lo } else { hi };
            if (next - dc).abs() <= 1e-15 * (1.0 + next.abs()) {
                return Ok(next);
            }
            dc = next;
        }
        Ok(dc)
    };
    Ok((solve(Branch::Minus)?, solve(Branch::Plus)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz;
    use approx::assert_relative_eq;

    fn params(n_fock: usize) -> SystemParams {
        SystemParams {
            g: mhz(11.2),
            kappa: mhz(1.25),
            gamma: mhz(3.0),
            delta_a: 0.0,
            delta_c: 0.0,
            eta: 0.0,
            n_fock,
        }
    }

    #[test]
    fn annihilation_operator_entries() {
        let ops = build_operators(2).unwrap();
        let nonzero: Vec<_> = ops
            .a
            .iter()
            .enumerate()
            .filter(|(_, v)| v.norm() > 0.0)
            .map(|(k, v)| (k % 4, k / 4, v.re))
            .collect();
        // one entry per atomic sector, each <0|a|1> = 1
        assert_eq!(nonzero, vec![(0, 2, 1.0), (1, 3, 1.0)]);

        let ops = build_operators(4).unwrap();
        for level in [AtomLevel::Ground, AtomLevel::Excited] {
            let v = ops.a[(basis_index(level, 2), basis_index(level, 3))];
            assert_relative_eq!(v.re, 1.732_050_8, epsilon = 1e-7);
        }
    }

    #[test]
    fn number_operator_spectrum() {
        let ops = build_operators(3).unwrap();
        let mut d: Vec<f64> = ops.number.diagonal().iter().map(|v| v.re).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        for (got, want) in d.iter().zip([0.0, 0.0, 1.0, 1.0, 2.0, 2.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(ops.number.iter().zip(0..).all(|(v, k)| k % 7 == 0 || v.norm() == 0.0));
    }

    #[test]
    fn rejects_tiny_truncation() {
        assert!(build_operators(1).is_err());
        assert!(build_hamiltonian(&params(1)).is_err());
    }

    #[test]
    fn decoupled_hamiltonian_is_diagonal() {
        let p = SystemParams { g: 0.0, delta_a: 0.7, delta_c: -1.3, ..params(4) };
        let h = build_hamiltonian(&p).unwrap();
        for i in 0..p.dim() {
            for j in 0..p.dim() {
                let expected = if i == j {
                    let (n, e) = ((i / 2) as f64, (i % 2) as f64);
                    -p.delta_c * n - p.delta_a * e
                } else {
                    0.0
                };
                assert!((h[(i, j)] - Complex64::new(expected, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn two_fock_resonant_spectrum_contains_vacuum_rabi_pair() {
        let p = params(2);
        let h = build_hamiltonian(&p).unwrap();
        let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        // blocks: {|g0>} -> 0, {|g1>,|e0>} -> ±g, {|e1>} -> 0 at zero detuning
        let expected = [-p.g, 0.0, 0.0, p.g];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let p = SystemParams { delta_a: 0.3, delta_c: -2.0, eta: 4.0, ..params(6) };
        let h = build_hamiltonian(&p).unwrap();
        let err = (&h - h.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12);
    }

    #[test]
    fn vacuum_rabi_doublet() {
        let (lo, hi) = dressed_frequencies(100.0, 100.0, 7.0, 0);
        assert_relative_eq!(lo, 93.0);
        assert_relative_eq!(hi, 107.0);
    }

    #[test]
    fn decoupled_ladder_reduces_to_bare_levels() {
        let (wa, wc) = (3.0, 5.0);
        for n in 0..4 {
            let (lo, hi) = dressed_frequencies(wa, wc, 0.0, n);
            assert_relative_eq!(lo, n as f64 * wc + wa, epsilon = 1e-12);
            assert_relative_eq!(hi, (n as f64 + 1.0) * wc, epsilon = 1e-12);
        }
    }

    #[test]
    fn observed_normal_modes() {
        // normal modes in the rotating frame with ω_a - ω_c = -2π·10.5 MHz:
        // (n+1) ω_L = ω_{1,∓} solved for Δc at fixed ω_a - ω_c
        let g = mhz(11.2);
        let dac = mhz(-10.5);
        let half = 0.5 * dressed_splitting(dac, g, 0);
        let lo = 0.5 * dac - half;
        let hi = 0.5 * dac + half;
        assert!((crate::units::to_mhz(lo) + 17.6).abs() < 0.05);
        assert!((crate::units::to_mhz(hi) - 7.1).abs() < 0.05);
    }

    #[test]
    fn two_photon_line_on_diagonal_scan() {
        let (lo, _) = multiphoton_resonance_detunings(mhz(11.2), mhz(-10.5), 1).unwrap();
        assert!((crate::units::to_mhz(lo) + 11.0).abs() < 0.05, "{}", crate::units::to_mhz(lo));
    }

    #[test]
    fn multiphoton_loci_on_atomic_resonance() {
        let g = mhz(11.5);
        for n in 1..=5 {
            let (lo, hi) = multiphoton_resonance_at_atom_detuning(g, 0.0, n).unwrap();
            let expected = g / (n as f64).sqrt();
            assert_relative_eq!(lo, -expected, max_relative = 1e-9);
            assert_relative_eq!(hi, expected, max_relative = 1e-9);
        }
        assert!(multiphoton_resonance_detunings(g, 0.0, 0).is_err());
    }

    #[test]
    fn block_eigenvalues_follow_dressed_ladder() {
        let p = SystemParams { delta_a: mhz(2.0), delta_c: mhz(-5.0), ..params(6) };
        for m in 1..p.n_fock {
            let ev = excitation_block_eigenvalues(&p, m).unwrap();
            let (lo, hi) = dressed_frequencies_rotating(p.delta_a, p.delta_c, p.g, m - 1);
            assert_relative_eq!(ev[0], lo, max_relative = 1e-9);
            assert_relative_eq!(ev[1], hi, max_relative = 1e-9);
        }
    }

    #[test]
    fn rotating_frame_shift() {
        let (wl, wa, wc, g) = (50.0, 48.0, 53.0, 4.0);
        let (lo, hi) = dressed_frequencies(wa, wc, g, 2);
        let (rlo, rhi) = dressed_frequencies_rotating(wl - wa, wl - wc, g, 2);
        assert_relative_eq!(rotating_frame_energy(lo, 3, wl), rlo, epsilon = 1e-12);
        assert_relative_eq!(rotating_frame_energy(hi, 3, wl), rhi, epsilon = 1e-12);
    }
}
