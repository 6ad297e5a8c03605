use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqed::cli::{self, exit, exit_code};
use cqed::config::{preset_source, RunConfig};
use cqed::{Error, Model, Result};

/// Environment variable holding the default worker count.
const WORKERS_ENV: &str = "CQED_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "sim", version, about = "Single-atom cavity QED spectroscopy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file, applied after the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shipped parameter set: fig2, fig3, fig4 or montecarlo.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a configuration value, e.g. `--set physics.g_mhz=12`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config, then $CQED_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// quantum, single-excitation or maxwell-bloch.
    #[arg(long, global = true)]
    model: Option<Model>,
    /// Input powers in pW, replacing the configured list.
    #[arg(long, global = true, num_args = 1..)]
    power: Vec<f64>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dressed-state ladder and multiphoton resonance loci.
    Dressed,
    /// Fixed-atom transmission spectra.
    Spectrum,
    /// Trapping events with the check/probe protocol.
    Montecarlo,
    /// Window averages, nonlinear response and (g, Δa) fit.
    Analyze {
        /// Spectrum CSV files; replaces `analysis.inputs`.
        inputs: Vec<PathBuf>,
    },
}

fn build_config(args: &Cli) -> Result<RunConfig> {
    let mut sources: Vec<String> = Vec::new();
    if let Some(p) = &args.preset {
        sources.push(preset_source(p)?.to_string());
    }
    if let Some(path) = &args.config {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        sources.push(src);
    }
    let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
    let mut cfg = RunConfig::layered(&refs, &args.set)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if cfg.workers.is_none() {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let w = v.parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={v} is not a worker count")))?;
            cfg.workers = Some(w);
        }
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if !args.power.is_empty() {
        cfg.powers = args.power.clone();
    }
    if let Command::Analyze { inputs } = &args.command {
        if !inputs.is_empty() {
            cfg.analysis.inputs = inputs.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Cli, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.out;
    match &args.command {
        Command::Dressed => {
            let rows = cli::cmd_dressed(cfg)?;
            std::fs::create_dir_all(dir)?;
            let path = dir.join("dressed.csv");
            cli::write_dressed_csv(&rows, std::fs::File::create(&path)?)?;
            Ok(vec![path])
        }
        Command::Spectrum => {
            let spectra = cli::cmd_spectrum(cfg)?;
            if spectra.iter().all(|s| s.is_empty()) {
                return Err(Error::InsufficientData("every scan point failed".into()));
            }
            cli::write_spectra(&spectra, dir)
        }
        Command::Montecarlo => {
            let run = cli::cmd_montecarlo(cfg)?;
            let summary = cli::MonteCarloSummary::of(&run);
            log::info!(
                "{} events, survival {:.3}, {} accepted probes",
                summary.n_events,
                summary.survival_fraction,
                summary.accepted_probes
            );
            let written = cli::write_montecarlo(&run, dir)?;
            if run.spectrum.is_empty() {
                return Err(Error::InsufficientData("no probe interval survived post-selection".into()));
            }
            Ok(written)
        }
        Command::Analyze { .. } => {
            let spectra = cli::load_spectra(&cfg.analysis.inputs)?;
            let out = cli::cmd_analyze(cfg, &spectra)?;
            if let Some(r) = &out.response {
                log::info!("log-log slope {:.3} from {} powers", r.slope, r.used);
            }
            if let Some(f) = &out.fit {
                log::info!("fit g = {:.3} MHz, Δa = {:.3} MHz, converged {}", f.g_mhz, f.delta_a_mhz, f.converged);
            }
            cli::write_analysis(&out, dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Cli::parse();
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    if args.print_config {
        return match cfg.to_toml() {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                log::error!("{e}");
                ExitCode::from(exit::CONFIG as u8)
            }
        };
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            log::error!("thread pool: {e}");
            return ExitCode::from(exit::OTHER as u8);
        }
    };
    match pool.install(|| run(&args, &cfg)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::from(exit::SUCCESS as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
