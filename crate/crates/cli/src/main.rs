use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mechmix::harness::{self, preset, run_single, run_sweep, ExperimentConfig};
use mechmix::recovery::{calibrate_two_point, default_lambda_grid, recover, Lambda, SmoothingConfig};
use mechmix::{io, selftest, Error};

#[derive(Parser, Debug)]
#[command(name = "mechmix", version, about = "Simulate, recover and diagnose mechanism-mixing trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (table2, table3_scheme1, table3_scheme2, table5, table7, table9, fig4, ks_violation, calibration).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, fallback: &str) -> mechmix::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::from_file(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => preset(fallback)?,
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = o.display().to_string();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Smoothing {
    None,
    Window,
    Tv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one run per seed and write trajectory, encoding and basis files.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Recover mixing weights from a trajectory or encoding CSV and a basis file.
    Recover {
        /// CSV with `zhat_*` (preferred) or `z_*` columns.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "window")]
        smoothing: Smoothing,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Fixed TV penalty; omitted means GCV.
        #[arg(long)]
        lambda: Option<f64>,
        /// Two-point calibration from the trajectory file's first and last `alpha_*` rows.
        #[arg(long)]
        calibrate_from: Option<PathBuf>,
    },
    /// Run the full pipeline with bound and KS checks and write the diagnostics report.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sweep one config field and write per-run and aggregated CSVs.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Config field to vary; defaults to the config's `sweep_axis`.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Pointwise error-bound protocol over the noise and perturbation sweeps.
    ValidateBounds {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Check the fast numerical routines against slow reference implementations.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Runtime(Error),
    Acceptance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            // Malformed configs are usage errors.
            ExitCode::from(if matches!(e.root(), Error::Config(_)) { 1 } else { 2 })
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    if cfg.output.is_empty() {
        PathBuf::from("out")
    } else {
        PathBuf::from(&cfg.output)
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Generate { cfg } => {
            let cfg = cfg.load("table2")?;
            let dir = out_dir(&cfg);
            for &seed in &cfg.seeds {
                let out = run_single(&ExperimentConfig { output: String::new(), ..cfg.clone() }, seed)?;
                let pre = harness::run_prefix(&cfg, seed);
                let traj = dir.join(format!("{pre}_trajectory.csv"));
                io::write_trajectory(&traj, &out.bundle, &[("perturbation_norm", cfg.perturbation_norm.to_string()), ("config", cfg.name.clone())])?;
                io::write_encoded(&dir.join(format!("{pre}_encoded.csv")), &out.encoded)?;
                io::write_basis(&dir.join(format!("{pre}_basis.txt")), &out.basis)?;
                println!("{}", traj.display());
            }
            Ok(())
        }
        Command::Recover { input, basis, output, smoothing, window, lambda, calibrate_from } => {
            let encoded = io::read_representation(&input)?;
            let basis = io::read_basis(&basis)?;
            let sc = match smoothing {
                Smoothing::None => SmoothingConfig::None,
                Smoothing::Window => SmoothingConfig::Window(window),
                Smoothing::Tv => SmoothingConfig::Tv { lambda: lambda.map_or(Lambda::Gcv, Lambda::Fixed), grid: default_lambda_grid() },
            };
            let mut r = recover(&encoded, &basis, &sc)?;
            if let Some(path) = calibrate_from {
                let (_, _, alphas) = io::read_trajectory(&path)?;
                let pick = |a: &[f64]| basis.domains.iter().map(|&k| a.get(k).copied().unwrap_or(0.0)).collect::<Vec<_>>();
                let (first, last) = match (alphas.first(), alphas.last()) {
                    (Some(f), Some(l)) => (pick(f), pick(l)),
                    _ => return Err(Error::InvalidInput("calibration file has no rows".into()).into()),
                };
                r = calibrate_two_point(&r, &first, &last)?;
            }
            io::write_recovery(&output, &r)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            println!("{}", output.display());
            Ok(())
        }
        Command::Diagnose { cfg } => {
            let cfg = cfg.load("table2")?;
            let dir = out_dir(&cfg);
            let cfg = ExperimentConfig { bound_check: true, ks_check: true, output: String::new(), ..cfg };
            for &seed in &cfg.seeds {
                let out = run_single(&cfg, seed)?;
                let path = dir.join(format!("{}_diagnostics.txt", harness::run_prefix(&cfg, seed)));
                std::fs::create_dir_all(&dir).map_err(Error::from)?;
                std::fs::write(&path, out.diagnostics.to_key_value()).map_err(Error::from)?;
                println!("seed {seed}");
                print!("{}", out.diagnostics.to_key_value());
            }
            Ok(())
        }
        Command::Sweep { cfg, axis, values } => {
            let mut cfg = cfg.load("table3_scheme1")?;
            if cfg.output.is_empty() {
                cfg.output = "out".into();
            }
            let axis = axis.unwrap_or_else(|| cfg.sweep_axis.clone());
            let values = values.unwrap_or_else(|| cfg.sweep_values.clone());
            if axis.is_empty() || values.is_empty() {
                return Err(Error::Config("sweep needs an axis and values (flags or config)".into()).into());
            }
            let result = run_sweep(&cfg, &axis, &values)?;
            let (h, rows) = result.summary_csv();
            println!("{}", h.join(","));
            for r in rows {
                println!("{}", r.join(","));
            }
            println!("written to {}", Path::new(&cfg.output).display());
            Ok(())
        }
        Command::ValidateBounds { cfg } => {
            let explicit = cfg.config.is_some() || cfg.preset.is_some();
            let base = cfg.load("fig4")?;
            let schemes: Vec<(String, Vec<f64>)> = if explicit && !base.sweep_axis.is_empty() {
                vec![(base.sweep_axis.clone(), base.sweep_values.clone())]
            } else if explicit {
                vec![("noise_sigma".into(), vec![base.noise_sigma])]
            } else {
                let s2 = preset("table3_scheme2")?;
                vec![(base.sweep_axis.clone(), base.sweep_values.clone()), (s2.sweep_axis, s2.sweep_values)]
            };
            let mut total = 0;
            for (axis, values) in &schemes {
                let (v, n) = harness::validate_bounds(&base, axis, values)?;
                println!("{axis}: {n} points, {v} above bound");
                total += v;
            }
            println!("violations: {total}");
            if total > 0 {
                return Err(Failure::Acceptance(format!("{total} bound violations")));
            }
            Ok(())
        }
        Command::Selftest { seed } => {
            let checks = selftest::run_all(seed)?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Acceptance(format!("{failed} oracle checks failed")));
            }
            Ok(())
        }
    }
}
