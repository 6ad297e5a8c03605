//! Check/probe measurement protocol and its Monte Carlo emulation.
//!
//! A trapping event alternates check intervals (cavity resonant with the
//! probe laser, low power) and probe intervals (at the scan coordinate),
//! starting and ending with a check. Transmitted photons are detected with
//! Poisson statistics on top of a dark-count floor. A probe interval is kept
//! when both neighbouring checks show the strong transmission suppression of
//! a well-coupled atom.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::motion::{advance, AtomState, DirectProvider, FieldProvider, Injection, MotionModel, TabulatedProvider};
use crate::seeding::{task_rng, task_seed};
use crate::spectrum::{Model, ScanPoint, Spectrum, SpectrumPoint};
use crate::steadystate::{drive_from_power, single_excitation_observables, steady_state, PowerCalibration};
use crate::units::{to_mhz, HC};

/// Probe wavelength used for the photon energy, m.
pub const PROBE_WAVELENGTH_M: f64 = 780.2e-9;

/// Detected photons per fW per us at unit efficiency.
pub fn counts_per_fw_us(wavelength_m: f64) -> f64 {
    1e-15 / (HC / wavelength_m) * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// us
    pub check_duration: f64,
    /// pW
    pub check_power: f64,
    /// Cavity detuning during checks, rad/us.
    pub check_delta_c: f64,
    /// us
    pub probe_duration: f64,
    /// pW
    pub probe_power: f64,
    pub n_repetitions: u32,
    /// Post-selection coupling threshold as a fraction of `g0`.
    pub g_min_fraction: f64,
    pub detector_efficiency: f64,
    /// Minimum number of intervals with the atom present.
    pub min_intervals: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            check_duration: 500.0,
            check_power: 0.3,
            check_delta_c: 0.0,
            probe_duration: 100.0,
            probe_power: 1.5,
            n_repetitions: 20,
            g_min_fraction: 0.6,
            detector_efficiency: 1.0,
            min_intervals: 3,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let durations = self.check_duration > 0.0 && self.probe_duration > 0.0;
        let powers = self.check_power >= 0.0 && self.probe_power >= 0.0;
        let frac = self.g_min_fraction > 0.0 && self.g_min_fraction <= 1.0;
        let eff = self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0;
        if durations && powers && frac && eff && self.check_delta_c.is_finite() && self.n_repetitions >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid protocol {self:?}")))
        }
    }

    fn rate(&self) -> f64 {
        counts_per_fw_us(PROBE_WAVELENGTH_M) * self.detector_efficiency
    }

    /// Mean counts for a transmitted power (fW) over `duration` (us), dark
    /// counts included.
    pub fn expected_counts(&self, power_out: f64, duration: f64, cal: &PowerCalibration) -> f64 {
        (power_out + cal.dark_offset_fw) * duration * self.rate()
    }

    /// Detected power (fW) for a count, dark counts still included.
    pub fn counts_to_power(&self, counts: u64, duration: f64) -> f64 {
        counts as f64 / (duration * self.rate())
    }
}

/// Poisson photon counts for a transmitted power over an interval.
pub fn detect_counts<R: Rng + ?Sized>(power_out: f64, duration: f64, cfg: &ProtocolConfig, cal: &PowerCalibration, rng: &mut R) -> u64 {
    let mean = cfg.expected_counts(power_out.max(0.0), duration, cal);
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Check,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub kind: IntervalKind,
    pub delta_a_mhz: f64,
    pub delta_c_mhz: f64,
    /// us
    pub duration: f64,
    pub counts: u64,
    /// Time-averaged coupling during the interval, MHz.
    pub mean_g_mhz: f64,
    /// Time-averaged Stark shift during the interval, MHz.
    pub mean_stark_mhz: f64,
    /// Time-averaged transmitted power without dark counts, fW.
    pub true_power_fw: f64,
    /// The atom left the trap during this interval.
    pub escaped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accepted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingEventRecord {
    pub event_id: u64,
    pub seed: u64,
    pub intervals: Vec<IntervalRecord>,
    /// Time until escape, or the full sequence length, us.
    pub survival_time: f64,
    /// Too short, or aborted.
    pub rejected: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub abort_reason: Option<String>,
}

/// Outcome of simulating one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalOutcome {
    pub mean_n_photon: f64,
    pub mean_g: f64,
    pub mean_stark: f64,
    pub escaped: bool,
}

/// What the atom does during an interval.
pub trait AtomDynamics {
    fn run_interval<R: Rng + ?Sized>(&mut self, kind: IntervalKind, duration: f64, rng: &mut R) -> Result<IntervalOutcome>;
}

/// Immobile atom with a fixed coupling: the photon number per interval kind
/// is a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedAtom {
    pub g: f64,
    pub stark: f64,
    pub check_n_photon: f64,
    pub probe_n_photon: f64,
}

impl AtomDynamics for FixedAtom {
    fn run_interval<R: Rng + ?Sized>(&mut self, kind: IntervalKind, _duration: f64, _rng: &mut R) -> Result<IntervalOutcome> {
        let n = match kind {
            IntervalKind::Check => self.check_n_photon,
            IntervalKind::Probe => self.probe_n_photon,
        };
        Ok(IntervalOutcome { mean_n_photon: n, mean_g: self.g, mean_stark: self.stark, escaped: false })
    }
}

/// Langevin-moving atom. After an escape the cavity is empty for the rest
/// of the interval.
pub struct MovingAtom<'a> {
    pub model: &'a MotionModel,
    pub check: &'a dyn FieldProvider,
    pub probe: &'a dyn FieldProvider,
    pub dt: f64,
    pub state: AtomState,
    escaped: bool,
}

impl<'a> MovingAtom<'a> {
    pub fn new(model: &'a MotionModel, check: &'a dyn FieldProvider, probe: &'a dyn FieldProvider, dt: f64, state: AtomState) -> Self {
        let escaped = !model.is_trapped(&state);
        Self { model, check, probe, dt, state, escaped }
    }

    pub fn escaped(&self) -> bool {
        self.escaped
    }
}

impl AtomDynamics for MovingAtom<'_> {
    fn run_interval<R: Rng + ?Sized>(&mut self, kind: IntervalKind, duration: f64, rng: &mut R) -> Result<IntervalOutcome> {
        let provider = match kind {
            IntervalKind::Check => self.check,
            IntervalKind::Probe => self.probe,
        };
        let empty = provider.field(0.0, 0.0)?.n_photon;
        if self.escaped {
            return Ok(IntervalOutcome { mean_n_photon: empty, mean_g: 0.0, mean_stark: 0.0, escaped: true });
        }
        let steps = (duration / self.dt).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        let mut here = self.model.evaluate(&self.state.r, provider)?;
        let (mut sum_n, mut sum_g, mut sum_s) = (0.0, 0.0, 0.0);
        let mut escaped_at = None;
        for k in 0..steps {
            sum_n += here.field.n_photon;
            sum_g += here.snapshot.g_local;
            sum_s += here.snapshot.stark_local;
            let (next, eval) = advance(&self.state, &here, dt, self.model, provider, rng)?;
            self.state = next;
            here = eval;
            if !self.model.is_trapped(&self.state) {
                escaped_at = Some(k + 1);
                break;
            }
        }
        let done = escaped_at.unwrap_or(steps);
        let rest = (steps - done) as f64;
        if escaped_at.is_some() {
            self.escaped = true;
        }
        Ok(IntervalOutcome {
            mean_n_photon: (sum_n + rest * empty) / steps as f64,
            mean_g: sum_g / steps as f64,
            mean_stark: sum_s / steps as f64,
            escaped: self.escaped,
        })
    }
}

/// Runs the check/probe sequence until the repetitions are exhausted or the
/// atom escapes.
#[allow(clippy::too_many_arguments)]
pub fn run_trapping_event<D: AtomDynamics>(
    event_id: u64,
    seed: u64,
    dynamics: &mut D,
    check_point: ScanPoint,
    probe_point: ScanPoint,
    cfg: &ProtocolConfig,
    cal: &PowerCalibration,
    rng: &mut ChaCha8Rng,
) -> TrappingEventRecord {
    let mut intervals = Vec::with_capacity(2 * cfg.n_repetitions as usize + 1);
    let mut elapsed = 0.0;
    let mut abort_reason = None;
    let total = 2 * cfg.n_repetitions as usize + 1;
    let mut present = 0usize;
    for idx in 0..total {
        let (kind, point, duration) = if idx % 2 == 0 {
            (IntervalKind::Check, check_point, cfg.check_duration)
        } else {
            (IntervalKind::Probe, probe_point, cfg.probe_duration)
        };
        let out = match dynamics.run_interval(kind, duration, rng) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("event {event_id}: {e}");
                abort_reason = Some(e.to_string());
                break;
            }
        };
        let true_power = cal.power_out_fw(out.mean_n_photon);
        intervals.push(IntervalRecord {
            kind,
            delta_a_mhz: to_mhz(point.delta_a),
            delta_c_mhz: to_mhz(point.delta_c),
            duration,
            counts: detect_counts(true_power, duration, cfg, cal, rng),
            mean_g_mhz: to_mhz(out.mean_g),
            mean_stark_mhz: to_mhz(out.mean_stark),
            true_power_fw: true_power,
            escaped: out.escaped,
            accepted: None,
        });
        elapsed += duration;
        if out.escaped {
            break;
        }
        present += 1;
    }
    TrappingEventRecord {
        event_id,
        seed,
        intervals,
        survival_time: elapsed,
        rejected: abort_reason.is_some() || present < cfg.min_intervals as usize,
        abort_reason,
    }
}

/// Count threshold of a check interval: expected counts with an atom at
/// `g_min` plus twice the shot noise.
pub fn check_threshold(base: &SystemParams, check_point: ScanPoint, g_min: f64, cfg: &ProtocolConfig, cal: &PowerCalibration) -> Result<f64> {
    let eta = drive_from_power(cfg.check_power, base.kappa, cal)?;
    let p = base.with_g(g_min).with_detunings(check_point.delta_a, check_point.delta_c).with_eta(eta);
    let mean = cfg.expected_counts(cal.power_out_fw(single_excitation_observables(&p).n_photon), cfg.check_duration, cal);
    Ok(mean + 2.0 * mean.sqrt())
}

/// Accepted probe intervals as `(event index, interval index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelection {
    pub accepted: Vec<(usize, usize)>,
    pub total_probes: usize,
}

impl PostSelection {
    pub fn survival_fraction(&self) -> f64 {
        if self.total_probes == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / self.total_probes as f64
        }
    }
}

/// Keeps probe intervals whose enclosing check intervals both stay at or
/// below `threshold` counts.
pub fn postselect(events: &[TrappingEventRecord], threshold: f64) -> PostSelection {
    let mut accepted = Vec::new();
    let mut total = 0;
    for (e, ev) in events.iter().enumerate() {
        for (i, iv) in ev.intervals.iter().enumerate() {
            if iv.kind != IntervalKind::Probe {
                continue;
            }
            total += 1;
            if ev.rejected || i == 0 {
                continue;
            }
            let good = |j: usize| {
                ev.intervals
                    .get(j)
                    .is_some_and(|c| c.kind == IntervalKind::Check && (c.counts as f64) <= threshold)
            };
            if good(i - 1) && good(i + 1) {
                accepted.push((e, i));
            }
        }
    }
    PostSelection { accepted, total_probes: total }
}

/// Writes the accepted flags into the event records.
pub fn mark_accepted(events: &mut [TrappingEventRecord], selection: &PostSelection) {
    for ev in events.iter_mut() {
        for iv in ev.intervals.iter_mut().filter(|iv| iv.kind == IntervalKind::Probe) {
            iv.accepted = Some(false);
        }
    }
    for &(e, i) in &selection.accepted {
        events[e].intervals[i].accepted = Some(true);
    }
}

/// Mean detected power minus the dark offset, and the standard deviation
/// over intervals (`NaN` for a single interval), per scan coordinate.
pub fn aggregate_spectrum(
    events: &[TrappingEventRecord],
    selection: &PostSelection,
    cfg: &ProtocolConfig,
    cal: &PowerCalibration,
    p_in: f64,
) -> Spectrum {
    let mut groups: HashMap<(u64, u64), Vec<f64>> = HashMap::new();
    let mut order = Vec::new();
    for &(e, i) in &selection.accepted {
        let iv = &events[e].intervals[i];
        let key = (iv.delta_a_mhz.to_bits(), iv.delta_c_mhz.to_bits());
        let entry = groups.entry(key).or_insert_with(|| {
            order.push((iv.delta_a_mhz, iv.delta_c_mhz));
            Vec::new()
        });
        entry.push(cfg.counts_to_power(iv.counts, iv.duration) - cal.dark_offset_fw);
    }
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut spectrum = Spectrum::new(p_in, Model::MonteCarlo);
    for (da, dc) in order {
        let v = &groups[&(da.to_bits(), dc.to_bits())];
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        spectrum.points.push(SpectrumPoint {
            delta_c: crate::units::mhz(dc),
            delta_a: crate::units::mhz(da),
            power_out: mean,
            stderr: sd,
            n_photon: if cal.pw_out_per_photon > 0.0 { mean / cal.power_out_fw(1.0) } else { f64::NAN },
            p_excited: f64::NAN,
        });
    }
    spectrum
}

/// Moving-atom part of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSetup {
    pub model: MotionModel,
    pub injection: Injection,
    /// Mean Stark shift of a trapped atom; scan detunings are measured from
    /// the atom shifted by this amount.
    pub stark_reference: f64,
    /// Integration step, us; `None` selects the largest stable step.
    pub dt: Option<f64>,
    /// `(g, stark)` table nodes; `None` solves the steady state at every step.
    pub table: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSetup {
    /// Decay rates, Fock truncation and, for a fixed atom, the coupling.
    pub base: SystemParams,
    pub model: Model,
    pub cal: PowerCalibration,
    pub protocol: ProtocolConfig,
    /// Probe coordinates; event `i` probes `scan[i % scan.len()]`.
    pub scan: Vec<ScanPoint>,
    /// Check coordinate for each probe coordinate.
    pub check_points: Vec<ScanPoint>,
    /// Peak coupling that defines the post-selection threshold.
    pub g0: f64,
    pub n_events: usize,
    pub master_seed: u64,
    /// `None` keeps the atom fixed with coupling `base.g`.
    pub motion: Option<MotionSetup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub events: Vec<TrappingEventRecord>,
    pub selection: PostSelection,
    pub spectrum: Spectrum,
    pub threshold: f64,
}

impl MonteCarloRun {
    /// Mean coupling and Stark shift (MHz) over the accepted probe intervals.
    pub fn accepted_means(&self) -> Option<(f64, f64)> {
        let n = self.selection.accepted.len();
        if n == 0 {
            return None;
        }
        let (g, s) = self.selection.accepted.iter().fold((0.0, 0.0), |(g, s), &(e, i)| {
            let iv = &self.events[e].intervals[i];
            (g + iv.mean_g_mhz, s + iv.mean_stark_mhz)
        });
        Some((g / n as f64, s / n as f64))
    }

    /// One JSON object per event.
    pub fn write_event_log<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn key(p: &SystemParams) -> [u64; 3] {
    [p.delta_a.to_bits(), p.delta_c.to_bits(), p.eta.to_bits()]
}

enum Providers {
    Fixed(HashMap<[u64; 3], f64>),
    Moving(HashMap<[u64; 3], Box<dyn FieldProvider>>),
}

fn observe_n(model: Model, p: &SystemParams) -> Result<f64> {
    match model {
        Model::Quantum => Ok(steady_state(p)?.photon_number()),
        Model::SingleExcitation => Ok(single_excitation_observables(p).n_photon),
        other => Err(Error::InvalidParameter(format!("model {other} is not available for trapping events"))),
    }
}

/// Simulates `n_events` trapping events in parallel, post-selects and
/// aggregates. Every event draws from its own stream seeded by
/// `(master_seed, event index)`, so the result does not depend on the
/// number of worker threads.
pub fn run_monte_carlo(setup: &MonteCarloSetup) -> Result<MonteCarloRun> {
    setup.base.validate()?;
    setup.cal.validate()?;
    setup.protocol.validate()?;
    if setup.scan.is_empty() || setup.scan.len() != setup.check_points.len() {
        return Err(Error::InvalidParameter("scan and check coordinates must be non-empty and paired".into()));
    }
    let cfg = &setup.protocol;
    let eta_check = drive_from_power(cfg.check_power, setup.base.kappa, &setup.cal)?;
    let eta_probe = drive_from_power(cfg.probe_power, setup.base.kappa, &setup.cal)?;
    let check_params = |i: usize| {
        let c = setup.check_points[i];
        setup.base.with_detunings(c.delta_a, c.delta_c).with_eta(eta_check)
    };
    let probe_params = |i: usize| {
        let s = setup.scan[i];
        setup.base.with_detunings(s.delta_a, s.delta_c).with_eta(eta_probe)
    };
    let mut needed: Vec<SystemParams> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for i in 0..setup.scan.len() {
        for p in [check_params(i), probe_params(i)] {
            if seen.insert(key(&p)) {
                needed.push(p);
            }
        }
    }

    let providers = match &setup.motion {
        None => {
            let values = needed
                .par_iter()
                .map(|p| Ok((key(p), observe_n(setup.model, p)?)))
                .collect::<Result<Vec<_>>>()?;
            Providers::Fixed(values.into_iter().collect())
        }
        Some(m) => {
            m.model.validate()?;
            m.injection.validate()?;
            let built = needed
                .iter()
                .map(|p| {
                    let bare = SystemParams { delta_a: p.delta_a + m.stark_reference, g: m.model.g0, ..*p };
                    let provider: Box<dyn FieldProvider> = match m.table {
                        Some((ng, ns)) => Box::new(TabulatedProvider::build(
                            &bare,
                            setup.model,
                            m.model.g0,
                            m.model.geometry.stark_max,
                            ng,
                            ns,
                        )?),
                        None => Box::new(DirectProvider::new(bare, setup.model)?),
                    };
                    Ok((key(p), provider))
                })
                .collect::<Result<Vec<_>>>()?;
            Providers::Moving(built.into_iter().collect())
        }
    };

    let events: Vec<TrappingEventRecord> = (0..setup.n_events)
        .into_par_iter()
        .map(|idx| {
            let point = idx % setup.scan.len();
            let seed = task_seed(setup.master_seed, idx as u64);
            let mut rng = task_rng(setup.master_seed, idx as u64);
            let (cp, pp) = (check_params(point), probe_params(point));
            match &providers {
                Providers::Fixed(n) => {
                    let mut atom = FixedAtom { g: setup.base.g, stark: 0.0, check_n_photon: n[&key(&cp)], probe_n_photon: n[&key(&pp)] };
                    run_trapping_event(idx as u64, seed, &mut atom, setup.check_points[point], setup.scan[point], cfg, &setup.cal, &mut rng)
                }
                Providers::Moving(map) => {
                    let m = setup.motion.as_ref().expect("moving providers imply a motion setup");
                    let start = m.injection.sample(&m.model.geometry, m.model.mass, &mut rng);
                    let dt = m.dt.unwrap_or_else(|| m.model.max_time_step());
                    let mut atom = MovingAtom::new(&m.model, map[&key(&cp)].as_ref(), map[&key(&pp)].as_ref(), dt, start);
                    run_trapping_event(idx as u64, seed, &mut atom, setup.check_points[point], setup.scan[point], cfg, &setup.cal, &mut rng)
                }
            }
        })
        .collect();

    let mut threshold = f64::INFINITY;
    for cp in &setup.check_points {
        threshold = threshold.min(check_threshold(&setup.base, *cp, cfg.g_min_fraction * setup.g0, cfg, &setup.cal)?);
    }
    let selection = postselect(&events, threshold);
    let mut events = events;
    mark_accepted(&mut events, &selection);
    let spectrum = aggregate_spectrum(&events, &selection, cfg, &setup.cal, cfg.probe_power);
    Ok(MonteCarloRun { events, selection, spectrum, threshold })
}

/// Starting point helper for tests and tools: an atom at rest at a well
/// center.
pub fn atom_at_well(model: &MotionModel, well: i64) -> AtomState {
    AtomState::at_rest(Vector3::new(0.0, 0.0, model.geometry.well_position(well)))
}
