use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgs_core::config::{parse_config, RunConfig};
use qgs_core::detection::with_workers;
use qgs_core::spectral::{Spectrum, SpectrumKind};
use qgs_core::workflow::{self, GhostFlags, OutputFile};
use qgs_core::{Error, Result};

/// Quantum ghost spectroscopy noise simulator.
#[derive(Debug, Parser)]
#[command(name = "qgs", version)]
struct Cli {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the simulation. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// CAR against pump power density, with the exponential tail fit.
    CarSweep,
    /// Ghost spectrum at one pump power density.
    Ghost {
        /// Pump power density in mW/mm².
        #[arg(long)]
        power: f64,
        /// Subtract the shifted-window histogram pixel by pixel.
        #[arg(long)]
        subtract: bool,
        /// Express the spectrum on the bucket-arm wavelength axis.
        #[arg(long)]
        map_axis: bool,
    },
    /// Accidental-coincidence spectrum and noise regime at one pump power density.
    NoiseSpectrum {
        #[arg(long)]
        power: f64,
        /// Also write the joint spectral density.
        #[arg(long)]
        export_jsd: bool,
    },
    /// Resolving power of two-peak spectra against separation and noise fraction.
    ResolveSweep,
    /// Fit Gaussians to a `wavelength_nm,value` CSV spectrum.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        peaks: u8,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_all(dir: &Path, files: &[OutputFile]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in files {
        let path = dir.join(&f.name);
        fs::write(&path, &f.contents)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let files = match &cli.command {
        Command::CarSweep => with_workers(cli.workers, || workflow::car_sweep(&cfg))?,
        Command::Ghost {
            power,
            subtract,
            map_axis,
        } => {
            let flags = GhostFlags {
                power_density_mw_mm2: *power,
                subtract: *subtract,
                map_axis: *map_axis,
            };
            with_workers(cli.workers, || workflow::ghost(&cfg, flags))?
        }
        Command::NoiseSpectrum { power, export_jsd } => {
            with_workers(cli.workers, || workflow::noise(&cfg, *power, *export_jsd))?
        }
        Command::ResolveSweep => with_workers(cli.workers, || workflow::resolve_sweep(&cfg))?,
        Command::Fit { input, peaks } => {
            let file = fs::File::open(input)?;
            let spectrum = Spectrum::from_csv(BufReader::new(file), SpectrumKind::Counts)?;
            workflow::fit(&spectrum, *peaks as usize, &cfg.fit_settings())
        }
    }?;
    write_all(&cli.out, &files)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.family().exit_code() as u8
}
