use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypercut_core::harness::{
    describe_table, exit_code, parse_grid, parse_list_arg, profile_csv, run_brownian_mixing, run_geodesic_cutoff,
    run_nu_table, run_spectrum_bound, CutoffReport, ExperimentConfig, ExperimentKind,
};
use hypercut_core::spectral::{density_profile, load_spectrum};
use hypercut_core::{Error, Result};

/// Cutoff experiments for the geodesic flow and Brownian motion on hyperbolic surfaces.
#[derive(Parser)]
#[command(name = "hypercut", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TV-to-uniform curves of the geodesic process from small balls.
    GeodesicCutoff(ConfigArgs),
    /// Brownian TV curve compared with the geodesic one at matched δ.
    Brownian(ConfigArgs),
    /// Table of the spherical-mean multiplier ν_t(λ).
    Nu {
        #[arg(long)]
        d: u32,
        /// Comma list or start:stop:count.
        #[arg(long)]
        lambda_grid: String,
        #[arg(long)]
        t_grid: String,
        #[arg(long, default_value_t = 1e-11)]
        tol: f64,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Spectrum table tools.
    Spectrum {
        #[command(subcommand)]
        command: SpectrumCommand,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum SpectrumCommand {
    /// Validate a table and print its summary.
    Check {
        #[arg(long)]
        table: PathBuf,
    },
    /// Density profile ln N(s)/ln V against 1 − s.
    Profile {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "0.05:0.95:19")]
        s_grid: String,
    },
    /// TV upper-bound curves and their crossing times.
    Tvbound {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        delta: String,
        #[arg(long)]
        t_grid: String,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Squared coefficients of the start density, one per table row.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long, default_value = "0.25,0.5,0.75")]
        eps: String,
        /// Write `<output>.csv` (bound curves) and `<output>.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn grid(spec: &str) -> Result<Vec<f64>> {
    parse_grid(spec).map_err(Error::Domain)
}

fn finish_cutoff(report: CutoffReport, output: Option<&Path>) -> Result<ExitCode> {
    print!("{}", report.summary());
    if let Some(path) = output {
        report.write(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GeodesicCutoff(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            if cfg.kind != ExperimentKind::GeodesicCutoff {
                return Err(Error::Domain(format!("{} is not a geodesic-cutoff config", args.config.display())));
            }
            finish_cutoff(run_geodesic_cutoff(&cfg)?, cfg.output_path.as_deref())
        }
        Command::Brownian(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            if cfg.kind != ExperimentKind::BrownianMixing {
                return Err(Error::Domain(format!("{} is not a brownian-mixing config", args.config.display())));
            }
            finish_cutoff(run_brownian_mixing(&cfg)?, cfg.output_path.as_deref())
        }
        Command::Nu { d, lambda_grid, t_grid, tol, output } => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::NuTable);
            cfg.dim = d;
            cfg.lambda_grid = grid(&lambda_grid)?;
            cfg.t_grid = grid(&t_grid)?;
            cfg.tol = tol;
            let table = run_nu_table(&cfg)?;
            match output {
                Some(p) => std::fs::write(p, table.to_csv())?,
                None => print!("{}", table.to_csv()),
            }
            if table.all_ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("some rows failed the reality, contraction or accuracy checks");
                Ok(ExitCode::from(2))
            }
        }
        Command::Spectrum { command } => match command {
            SpectrumCommand::Check { table } => {
                print!("{}", describe_table(&load_spectrum(&table)?));
                Ok(ExitCode::SUCCESS)
            }
            SpectrumCommand::Profile { table, s_grid } => {
                let t = load_spectrum(&table)?;
                print!("{}", profile_csv(&density_profile(&t, &grid(&s_grid)?)));
                Ok(ExitCode::SUCCESS)
            }
            SpectrumCommand::Tvbound { table, delta, t_grid, c, coeffs, eps, output } => {
                let t = load_spectrum(&table)?;
                let mut cfg = ExperimentConfig::new(ExperimentKind::SpectrumBound);
                cfg.delta_list = parse_list_arg(&delta)?;
                cfg.t_grid = grid(&t_grid)?;
                cfg.bound_c = c;
                cfg.coeffs = coeffs;
                cfg.eps_levels = parse_list_arg(&eps)?;
                let report = run_spectrum_bound(&cfg, &t)?;
                print!("{}", report.summary());
                if let Some(p) = output {
                    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                        std::fs::create_dir_all(dir)?;
                    }
                    std::fs::write(p.with_extension("csv"), report.bounds_csv())?;
                    std::fs::write(p.with_extension("json"), report.to_json()?)?;
                }
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
