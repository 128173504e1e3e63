use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use murkwater::config::ExperimentConfig;
use murkwater::estimator::AutoEstimator;
use murkwater::harness::{self, BackscatterSource, Method, ReconstructOptions};
use murkwater::Error;

#[derive(Parser)]
#[command(
    name = "murk",
    version,
    about = "Backscatter-aware photometric stereo in scattering media"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (flat `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set medium.c=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimatorArgs {
    /// Blocks per image side for candidate selection.
    #[arg(long)]
    blocks: Option<usize>,
    /// RANSAC hypotheses.
    #[arg(long = "ransac-iters")]
    ransac_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stack with ground truth.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Tabulate B(Z), D(Z), E(Z) and B(∞) for chosen pixels.
    SaturationCurve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pixel as `u,v`. Repeatable; defaults to the centre and a corner.
        #[arg(long, value_parser = parse_pixel)]
        pixel: Vec<(usize, usize)>,
    },
    /// Reconstruction error of every method over a parameter grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        /// Methods to run (comma separated); all by default.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Normals, albedo and height from a stack directory.
    Reconstruct {
        /// Stack directory written by `simulate` (or laid out the same way).
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, value_enum, default_value_t = BackscatterArg::Auto)]
        method: BackscatterArg,
        /// Canvas stack for `--method calibrated`.
        #[arg(long)]
        canvas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Single-image backscatter removal and contrast stretch.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Sensor noise as a fraction of full scale, if known.
        #[arg(long)]
        noise: Option<f64>,
        /// Seed for RANSAC sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackscatterArg {
    /// Constrained RANSAC on the stack itself.
    Auto,
    /// Lookup from a canvas stack (`--canvas`).
    Calibrated,
    /// The stack's saturated backscatter maps.
    Saturated,
    /// The stack's true backscatter maps.
    Oracle,
    /// No compensation.
    None,
    /// Pairwise differencing.
    Pairwise,
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (u, v) = s.split_once(',').ok_or("expected u,v")?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(u)?, p(v)?))
}

fn load_config(
    args: &ConfigArgs,
    est: Option<&EstimatorArgs>,
) -> murkwater::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(e) = est {
        if let Some(b) = e.blocks {
            cfg.blocks = b;
        }
        if let Some(n) = e.ransac_iters {
            cfg.ransac_iters = n;
        }
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> murkwater::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn run(command: Command) -> murkwater::Result<()> {
    match command {
        Command::Simulate { config } => {
            let cfg = load_config(&config, None)?;
            let side = harness::write_simulation(&cfg, &cfg.output)?;
            println!("{}", side.config_hash);
        }
        Command::SaturationCurve { config, pixel } => {
            let cfg = load_config(&config, None)?;
            let pixels = if pixel.is_empty() {
                vec![(cfg.sensor_width / 2, cfg.sensor_height / 2), (0, 0)]
            } else {
                pixel
            };
            let (rows, summary) = harness::saturation_curve(&cfg, &pixels)?;
            create_dir(&cfg.output)?;
            let hash = cfg.hash();
            harness::write_saturation_csv(&cfg.output.join("saturation_curve.csv"), &rows, &hash)?;
            harness::write_saturation_summary(
                &cfg.output.join("saturation_summary.csv"),
                &summary,
                &hash,
            )?;
            println!("{hash}");
        }
        Command::Sweep {
            config,
            estimator,
            methods,
        } => {
            let cfg = load_config(&config, Some(&estimator))?;
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
                    .iter()
                    .map(|m| {
                        Method::from_name(m)
                            .ok_or_else(|| Error::Config(format!("unknown method {m:?}")))
                    })
                    .collect::<murkwater::Result<Vec<_>>>()?
            };
            let rows = harness::sweep(&cfg, &methods)?;
            create_dir(&cfg.output)?;
            harness::write_error_csv(&cfg.output.join("sweep.csv"), &rows)?;
            println!("{}", cfg.hash());
        }
        Command::Reconstruct {
            stack,
            method,
            canvas,
            out,
            estimator,
        } => {
            let backscatter = match (method, canvas) {
                (BackscatterArg::Calibrated, Some(dir)) => BackscatterSource::Canvas(dir),
                (BackscatterArg::Calibrated, None) => {
                    return Err(Error::Config("--method calibrated needs --canvas".into()));
                }
                (_, Some(_)) => {
                    return Err(Error::Config(
                        "--canvas only applies to --method calibrated".into(),
                    ))
                }
                (BackscatterArg::Auto, None) => BackscatterSource::Automatic,
                (BackscatterArg::Saturated, None) => BackscatterSource::Saturated,
                (BackscatterArg::Oracle, None) => BackscatterSource::Truth,
                (BackscatterArg::None, None) => BackscatterSource::None,
                (BackscatterArg::Pairwise, None) => BackscatterSource::Pairwise,
            };
            let opts = ReconstructOptions {
                backscatter,
                blocks: estimator.blocks,
                ransac_iters: estimator.ransac_iters,
            };
            let report = harness::reconstruct(&stack, &opts, &out)?;
            match report.error {
                Some(e) => println!(
                    "{} {} {} {}",
                    report.config_hash, report.method, e.mean_deg, e.rmse_deg
                ),
                None => println!("{} {}", report.config_hash, report.method),
            }
        }
        Command::Restore {
            input,
            output,
            noise,
            seed,
            estimator,
        } => {
            let mut est = AutoEstimator {
                seed,
                ..AutoEstimator::default()
            };
            if let Some(b) = estimator.blocks {
                est.blocks = b;
            }
            if let Some(n) = estimator.ransac_iters {
                est.iterations = n;
            }
            let (_, maxval) = murkwater::io::read_pgm(&input)?;
            if let Some(sigma) = noise {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!(
                        "noise {sigma} must be a finite fraction >= 0"
                    )));
                }
                est.noise_std = Some(sigma * maxval as f64);
            }
            let outcome = harness::restore_file(&input, &output, &est)?;
            println!("{} {}", outcome.input_std, outcome.restored_std);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
