//! Command implementations behind the `sim` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{fit_g_delta, nonlinear_response, window_average_weighted, FitReport, NonlinearResponse};
use crate::config::{DressedAxis, RunConfig};
use crate::error::{Error, Result};
use crate::hilbert::{dressed_frequencies, multiphoton_resonance_at_atom_detuning, multiphoton_resonance_detunings, Branch};
use crate::protocol::{run_monte_carlo, MonteCarloRun};
use crate::semiclassical::spectrum_mb;
use crate::spectrum::{detuning_axis_mhz, Model, Spectrum};
use crate::steadystate::{spectrum_quantum, spectrum_single_excitation};
use crate::units::{mhz, to_mhz};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const EMPTY: i32 = 4;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Schema(_) => exit::CONFIG,
        Error::SolverFailure(_) | Error::RootFinding { .. } | Error::Divergence { .. } => exit::SOLVER,
        Error::EmptyWindow { .. } | Error::InsufficientData(_) => exit::EMPTY,
        Error::Io(_) => exit::OTHER,
    }
}

/// One dressed level and its multiphoton resonance locus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DressedRow {
    /// Grid value: `Δa` or `ω_a - ω_c` depending on the axis, MHz.
    pub axis_mhz: f64,
    /// Manifold index; the level holds `n + 1` excitations.
    pub n: usize,
    pub branch: Branch,
    /// Atom–cavity detuning at the resonance, MHz.
    pub atom_cavity_mhz: f64,
    /// `ω_{n+1,∓} - (n+1) ω_c`, MHz.
    pub level_mhz: f64,
    /// Cavity detuning of the `(n+1)`-photon resonance, MHz.
    pub resonance_delta_c_mhz: f64,
}

/// Dressed levels of manifolds `n = 1 ..= n_max` on both branches for
/// every grid value.
pub fn cmd_dressed(cfg: &RunConfig) -> Result<Vec<DressedRow>> {
    let d = &cfg.dressed;
    let g = mhz(cfg.physics.g_mhz);
    let mut rows = Vec::new();
    for x in detuning_axis_mhz(d.lo, d.hi, d.step)? {
        for n in 1..=d.n_max {
            let loci = match d.axis {
                DressedAxis::AtomCavity => {
                    let (lo, hi) = multiphoton_resonance_detunings(g, mhz(x), n)?;
                    [(mhz(x), lo), (mhz(x), hi)]
                }
                DressedAxis::AtomDetuning => {
                    let (lo, hi) = multiphoton_resonance_at_atom_detuning(g, mhz(x), n)?;
                    [(lo - mhz(x), lo), (hi - mhz(x), hi)]
                }
            };
            for (branch, (dac, dc)) in [Branch::Minus, Branch::Plus].into_iter().zip(loci) {
                let (lo, hi) = dressed_frequencies(dac, 0.0, g, n);
                let level = if branch == Branch::Minus { lo } else { hi };
                rows.push(DressedRow {
                    axis_mhz: x,
                    n,
                    branch,
                    atom_cavity_mhz: to_mhz(dac),
                    level_mhz: to_mhz(level),
                    resonance_delta_c_mhz: to_mhz(dc),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_dressed_csv<W: Write>(rows: &[DressedRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// One spectrum per configured power.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Vec<Spectrum>> {
    let scan = cfg.scan.points()?;
    let base = cfg.system_params();
    if cfg.powers.is_empty() {
        return Err(Error::InsufficientData("no input powers configured".into()));
    }
    cfg.powers
        .iter()
        .map(|&p| {
            let s = match cfg.model {
                Model::Quantum => spectrum_quantum(&base, &scan, p, &cfg.calibration),
                Model::SingleExcitation => spectrum_single_excitation(&base, &scan, p, &cfg.calibration),
                Model::MaxwellBloch => spectrum_mb(&base, &scan, p, &cfg.calibration, cfg.branch),
                Model::MonteCarlo => Err(Error::Config("use the montecarlo command for model montecarlo".into())),
            }?;
            for gap in &s.gaps {
                log::warn!("p_in {p} pW: no solution at Δa = {:.3}, Δc = {:.3} MHz", to_mhz(gap.delta_a), to_mhz(gap.delta_c));
            }
            Ok(s)
        })
        .collect()
}

pub fn spectrum_file_name(s: &Spectrum) -> String {
    format!("spectrum_{}_{}pW.csv", s.model.tag(), s.p_in)
}

pub fn cmd_montecarlo(cfg: &RunConfig) -> Result<MonteCarloRun> {
    let setup = cfg.monte_carlo_setup()?;
    if setup.n_events == 0 {
        return Err(Error::InsufficientData("zero trapping events requested".into()));
    }
    let run = run_monte_carlo(&setup)?;
    for ev in run.events.iter().filter(|e| e.abort_reason.is_some()) {
        log::warn!("event {} aborted: {}", ev.event_id, ev.abort_reason.as_deref().unwrap_or(""));
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub n_events: usize,
    pub rejected_events: usize,
    pub accepted_probes: usize,
    pub total_probes: usize,
    pub survival_fraction: f64,
    pub threshold_counts: f64,
    pub accepted_mean_g_mhz: Option<f64>,
    pub accepted_mean_stark_mhz: Option<f64>,
}

impl MonteCarloSummary {
    pub fn of(run: &MonteCarloRun) -> Self {
        let means = run.accepted_means();
        Self {
            n_events: run.events.len(),
            rejected_events: run.events.iter().filter(|e| e.rejected).count(),
            accepted_probes: run.selection.accepted.len(),
            total_probes: run.selection.total_probes,
            survival_fraction: run.selection.survival_fraction(),
            threshold_counts: run.threshold,
            accepted_mean_g_mhz: means.map(|m| m.0),
            accepted_mean_stark_mhz: means.map(|m| m.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub p_in: f64,
    pub on_mean: f64,
    pub on_stderr: f64,
    pub off_mean: f64,
    pub off_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub windows: Vec<WindowRow>,
    pub response: Option<NonlinearResponse>,
    pub fit: Option<FitReport>,
}

pub fn load_spectra(paths: &[PathBuf]) -> Result<Vec<Spectrum>> {
    paths
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            Spectrum::read_csv(f).map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("{}: {m}", p.display())),
                other => other,
            })
        })
        .collect()
}

/// Window averages for every spectrum, the nonlinear response when there
/// are at least three powers, and optionally the `(g, Δa)` fit.
pub fn cmd_analyze(cfg: &RunConfig, spectra: &[Spectrum]) -> Result<AnalysisOutput> {
    let a = &cfg.analysis;
    if spectra.is_empty() {
        return Err(Error::InsufficientData("no input spectra".into()));
    }
    let mut windows = Vec::with_capacity(spectra.len());
    for s in spectra {
        let on = window_average_weighted(s, &a.on_window, a.weighting)?;
        let off = window_average_weighted(s, &a.off_window, a.weighting)?;
        windows.push(WindowRow { p_in: s.p_in, on_mean: on.mean, on_stderr: on.stderr, off_mean: off.mean, off_stderr: off.stderr });
    }
    let response = if spectra.len() >= 3 {
        Some(nonlinear_response(spectra, &a.on_window, &a.off_window)?)
    } else {
        log::info!("fewer than three powers: skipping the nonlinear response");
        None
    };
    let fit = if a.fit {
        Some(fit_g_delta(spectra, &cfg.system_params(), &cfg.calibration, a.fit_model, &a.fit_options)?)
    } else {
        None
    };
    Ok(AnalysisOutput { windows, response, fit })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every artifact of an analysis into `dir`.
pub fn write_analysis(out: &AnalysisOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    {
        let mut wr = csv::Writer::from_writer(create(dir, "windows.csv")?);
        for r in &out.windows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        written.push(dir.join("windows.csv"));
    }
    if let Some(r) = &out.response {
        r.write_csv(create(dir, "response.csv")?)?;
        let side = serde_json::json!({ "slope": r.slope, "intercept": r.intercept, "used": r.used });
        serde_json::to_writer_pretty(create(dir, "response.json")?, &side)?;
        written.extend([dir.join("response.csv"), dir.join("response.json")]);
    }
    if let Some(f) = &out.fit {
        serde_json::to_writer_pretty(create(dir, "fit.json")?, f)?;
        written.push(dir.join("fit.json"));
    }
    Ok(written)
}

pub fn write_spectra(spectra: &[Spectrum], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for s in spectra {
        let name = spectrum_file_name(s);
        let mut w = create(dir, &name)?;
        s.write_csv(&mut w)?;
        w.flush()?;
        written.push(dir.join(name));
    }
    Ok(written)
}

pub fn write_montecarlo(run: &MonteCarloRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut w = create(dir, "events.jsonl")?;
    run.write_event_log(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "montecarlo_spectrum.csv")?;
    run.spectrum.write_csv(&mut w)?;
    w.flush()?;
    serde_json::to_writer_pretty(create(dir, "montecarlo_summary.json")?, &MonteCarloSummary::of(run))?;
    Ok(["events.jsonl", "montecarlo_spectrum.csv", "montecarlo_summary.json"].iter().map(|n| dir.join(n)).collect())
}
