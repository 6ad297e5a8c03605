//! Run configuration: TOML files, named presets and `key=value` overrides.
//!
//! All frequencies in a configuration are ordinary frequencies in MHz,
//! input powers in pW and times in us.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{FitOptions, WindowSpec, Weighting};
use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::motion::{Injection, MotionModel, TrapGeometry};
use crate::protocol::{MonteCarloSetup, MotionSetup, ProtocolConfig};
use crate::semiclassical::BranchPolicy;
use crate::spectrum::{diagonal_scan, vertical_scan, Model, ScanPoint};
use crate::steadystate::PowerCalibration;
use crate::units::mhz;

/// Shipped parameter sets.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("montecarlo", include_str!("../presets/montecarlo.toml")),
];

pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset '{name}', expected one of {names:?}"))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub g_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub n_fock: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { g_mhz: 11.5, kappa_mhz: 1.25, gamma_mhz: 3.0, n_fock: 6 }
    }
}

impl PhysicsConfig {
    /// Undriven parameters with zero detunings, rad/us.
    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            g: mhz(self.g_mhz),
            kappa: mhz(self.kappa_mhz),
            gamma: mhz(self.gamma_mhz),
            delta_a: 0.0,
            delta_c: 0.0,
            eta: 0.0,
            n_fock: self.n_fock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    /// Fixed atom–cavity detuning.
    Diagonal,
    /// Fixed atom detuning.
    #[default]
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub kind: ScanKind,
    /// `ω_a - ω_c` of a diagonal scan.
    pub atom_cavity_mhz: f64,
    /// `Δa` of a vertical scan.
    pub delta_a_mhz: f64,
    /// Cavity detuning axis.
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { kind: ScanKind::Vertical, atom_cavity_mhz: -10.5, delta_a_mhz: 1.0, lo: -25.0, hi: 5.0, step: 0.25 }
    }
}

impl ScanConfig {
    /// Point of the scan line at cavity detuning `delta_c` (rad/us).
    pub fn point_at(&self, delta_c: f64) -> ScanPoint {
        match self.kind {
            ScanKind::Diagonal => ScanPoint::new(delta_c - mhz(self.atom_cavity_mhz), delta_c),
            ScanKind::Vertical => ScanPoint::new(mhz(self.delta_a_mhz), delta_c),
        }
    }

    pub fn points(&self) -> Result<Vec<ScanPoint>> {
        match self.kind {
            ScanKind::Diagonal => diagonal_scan(self.atom_cavity_mhz, self.lo, self.hi, self.step),
            ScanKind::Vertical => vertical_scan(self.delta_a_mhz, self.lo, self.hi, self.step),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DressedAxis {
    /// Grid over `ω_a - ω_c`.
    AtomCavity,
    /// Grid over `Δa`; loci solved self-consistently.
    #[default]
    AtomDetuning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DressedConfig {
    pub n_max: usize,
    pub axis: DressedAxis,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for DressedConfig {
    fn default() -> Self {
        Self { n_max: 4, axis: DressedAxis::AtomDetuning, lo: -20.0, hi: 20.0, step: 1.0 }
    }
}

/// Measurement protocol in configuration units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub check_duration_us: f64,
    pub check_power_pw: f64,
    pub check_delta_c_mhz: f64,
    pub probe_duration_us: f64,
    pub probe_power_pw: f64,
    pub n_repetitions: u32,
    pub g_min_fraction: f64,
    pub detector_efficiency: f64,
    pub min_intervals: u32,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            check_duration_us: p.check_duration,
            check_power_pw: p.check_power,
            check_delta_c_mhz: 0.0,
            probe_duration_us: p.probe_duration,
            probe_power_pw: p.probe_power,
            n_repetitions: p.n_repetitions,
            g_min_fraction: p.g_min_fraction,
            detector_efficiency: p.detector_efficiency,
            min_intervals: p.min_intervals,
        }
    }
}

impl ProtocolSection {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            check_duration: self.check_duration_us,
            check_power: self.check_power_pw,
            check_delta_c: mhz(self.check_delta_c_mhz),
            probe_duration: self.probe_duration_us,
            probe_power: self.probe_power_pw,
            n_repetitions: self.n_repetitions,
            g_min_fraction: self.g_min_fraction,
            detector_efficiency: self.detector_efficiency,
            min_intervals: self.min_intervals,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_events: usize,
    /// `false` keeps the atom fixed with coupling `physics.g_mhz`.
    pub motion: bool,
    /// Peak coupling at an antinode.
    pub g0_mhz: f64,
    pub trap_power_nw: f64,
    /// Mean Stark shift of a trapped atom; scan `Δa` values are relative to it.
    pub stark_reference_mhz: f64,
    /// Integration step in us; `None` picks the largest stable step.
    pub dt_us: Option<f64>,
    /// `[ng, ns]` interpolation nodes; `None` solves at every step.
    pub table: Option<[usize; 2]>,
    pub friction: bool,
    pub recoil_diffusion: f64,
    pub dipole_diffusion: f64,
    pub injection: Injection,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_events: 200,
            motion: false,
            g0_mhz: 16.0,
            trap_power_nw: 170.0,
            stark_reference_mhz: 29.0,
            dt_us: None,
            table: Some([33, 71]),
            friction: true,
            recoil_diffusion: 1.0,
            dipole_diffusion: 1.0,
            injection: Injection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Spectrum CSV files, one per input power.
    pub inputs: Vec<PathBuf>,
    pub on_window: WindowSpec,
    pub off_window: WindowSpec,
    pub weighting: Weighting,
    pub fit: bool,
    pub fit_model: Model,
    pub fit_options: FitOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            on_window: WindowSpec { lo: -15.0, hi: -10.0 },
            off_window: WindowSpec { lo: -25.0, hi: -20.0 },
            weighting: Weighting::Uniform,
            fit: true,
            fit_model: Model::Quantum,
            fit_options: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    /// Input powers, pW; one spectrum per entry.
    pub powers: Vec<f64>,
    pub branch: BranchPolicy,
    pub seed: u64,
    /// Worker threads; `None` defers to the environment.
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub physics: PhysicsConfig,
    pub calibration: PowerCalibration,
    pub scan: ScanConfig,
    pub dressed: DressedConfig,
    pub protocol: ProtocolSection,
    pub montecarlo: MonteCarloConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::Quantum,
            powers: vec![0.5],
            branch: BranchPolicy::Lower,
            seed: 1,
            workers: None,
            out: PathBuf::from("out"),
            physics: PhysicsConfig::default(),
            calibration: PowerCalibration::default(),
            scan: ScanConfig::default(),
            dressed: DressedConfig::default(),
            protocol: ProtocolSection::default(),
            montecarlo: MonteCarloConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds a configuration from layered TOML sources and `key=value`
    /// overrides; later layers win.
    pub fn layered(sources: &[&str], overrides: &[String]) -> Result<Self> {
        let mut merged = toml::Table::new();
        for src in sources {
            let t: toml::Table = src.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            merge(&mut merged, t);
        }
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.physics;
        for (n, v) in [("physics.g_mhz", p.g_mhz), ("physics.kappa_mhz", p.kappa_mhz), ("physics.gamma_mhz", p.gamma_mhz)] {
            finite(n, v)?;
        }
        self.system_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.calibration.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.powers.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("powers must be finite and >= 0: {:?}", self.powers)));
        }
        let s = &self.scan;
        for (n, v) in [("scan.atom_cavity_mhz", s.atom_cavity_mhz), ("scan.delta_a_mhz", s.delta_a_mhz)] {
            finite(n, v)?;
        }
        s.points().map_err(|e| Error::Config(format!("scan: {e}")))?;
        let d = &self.dressed;
        crate::spectrum::detuning_axis_mhz(d.lo, d.hi, d.step).map_err(|e| Error::Config(format!("dressed: {e}")))?;
        if d.n_max == 0 {
            return Err(Error::Config("dressed.n_max must be >= 1".into()));
        }
        self.protocol.protocol().validate().map_err(|e| Error::Config(format!("protocol: {e}")))?;
        let m = &self.montecarlo;
        for (n, v) in [
            ("montecarlo.g0_mhz", m.g0_mhz),
            ("montecarlo.trap_power_nw", m.trap_power_nw),
            ("montecarlo.stark_reference_mhz", m.stark_reference_mhz),
        ] {
            finite(n, v)?;
        }
        if let Some(dt) = m.dt_us {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("montecarlo.dt_us must be > 0, got {dt}")));
            }
        }
        if let Some([ng, ns]) = m.table {
            if ng < 2 || ns < 2 {
                return Err(Error::Config("montecarlo.table needs >= 2 nodes per axis".into()));
            }
        }
        m.injection.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.analysis.on_window.validate().map_err(|e| Error::Config(format!("analysis.on_window: {e}")))?;
        self.analysis.off_window.validate().map_err(|e| Error::Config(format!("analysis.off_window: {e}")))?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn system_params(&self) -> SystemParams {
        self.physics.system_params()
    }

    pub fn motion_model(&self) -> MotionModel {
        let m = &self.montecarlo;
        let mut model = MotionModel::new(TrapGeometry::from_trap_power(m.trap_power_nw), mhz(m.g0_mhz), mhz(self.physics.gamma_mhz));
        model.friction = m.friction;
        model.recoil_diffusion = m.recoil_diffusion;
        model.dipole_diffusion = m.dipole_diffusion;
        model
    }

    /// Monte Carlo setup; checks sit on the scan line at the check cavity
    /// detuning.
    pub fn monte_carlo_setup(&self) -> Result<MonteCarloSetup> {
        let scan = self.scan.points()?;
        let protocol = self.protocol.protocol();
        let check_points = vec![self.scan.point_at(protocol.check_delta_c); scan.len()];
        let m = &self.montecarlo;
        let motion = m.motion.then(|| MotionSetup {
            model: self.motion_model(),
            injection: m.injection,
            stark_reference: mhz(m.stark_reference_mhz),
            dt: m.dt_us,
            table: m.table.map(|[a, b]| (a, b)),
        });
        Ok(MonteCarloSetup {
            base: self.system_params(),
            model: self.model,
            cal: self.calibration,
            protocol,
            scan,
            check_points,
            g0: mhz(m.g0_mhz),
            n_events: m.n_events,
            master_seed: self.seed,
            motion,
        })
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override '{key}': '{p}' is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, src) in PRESETS {
            let cfg = RunConfig::layered(&[src], &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn overrides_win_and_are_typed() {
        let cfg = RunConfig::layered(
            &[preset_source("fig3").unwrap()],
            &["physics.g_mhz=9.5".into(), "model=single-excitation".into(), "powers=[1.0, 2.0]".into(), "montecarlo.injection.well_spread=4".into()],
        )
        .unwrap();
        assert_eq!(cfg.physics.g_mhz, 9.5);
        assert_eq!(cfg.model, Model::SingleExcitation);
        assert_eq!(cfg.powers, vec![1.0, 2.0]);
        assert_eq!(cfg.montecarlo.injection.well_spread, 4);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = RunConfig::layered(&["[physics]\ng_mhz = \"x\"\n"], &[]).unwrap_err().to_string();
        assert!(err.contains("g_mhz"), "{err}");
        let err = RunConfig::layered(&["[physics]\ng_mhs = 1.0\n"], &[]).unwrap_err().to_string();
        assert!(err.contains("g_mhs"), "{err}");
        let err = RunConfig::layered(&[], &["scan.step=0".into()]).unwrap_err().to_string();
        assert!(err.contains("scan"), "{err}");
        assert!(RunConfig::layered(&[], &["nonsense".into()]).is_err());
        assert!(preset_source("fig9").is_err());
    }
}
