//! `bdcp`: simulate bivariate dynamic contagion processes, check their
//! stability, compute stationary moments and intensity Laplace transforms,
//! and verify the closed forms against Monte Carlo ensembles.

mod config;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bdcp::analysis::{sample_intensity_ensemble, verify, Algorithm, VerifyConfig};
use bdcp::laplace::{limiting_laplace, limiting_laplace_finite, solve_l, SolverConfig};
use bdcp::simulate::{
    simulate_cluster_stream, simulate_thinning_stream, write_intensity_csv, EventHistory,
};
use bdcp::stationarity::moment_report;
use clap::{Parser, Subcommand};
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Model(bdcp::Error),
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<bdcp::Error> for CliError {
    fn from(e: bdcp::Error) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    /// 1: validation/configuration failure, 2: stability required but
    /// violated, 3: convergence failure.
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(bdcp::Error::NonStationary { .. }) => 2,
            CliError::Model(bdcp::Error::Convergence(_)) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bdcp",
    version,
    about = "Bivariate dynamic contagion processes: simulation, stability, moments, transforms",
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads (default: CONTAGION_THREADS, then all logical cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model file and print the stability diagnostics
    Check {
        /// TOML run configuration
        #[arg(long)]
        config: PathBuf,
        /// Emit the validation report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Closed-form stationary moments (requires stability)
    Moments {
        #[arg(long)]
        config: PathBuf,
        /// Directory for moments.json (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Laplace transforms of the limiting intensity law (CSV)
    Laplace {
        #[arg(long)]
        config: PathBuf,
        /// Transform argument for component 1 (with --v2, overrides the panel)
        #[arg(long)]
        v1: Option<f64>,
        /// Transform argument for component 2
        #[arg(long)]
        v2: Option<f64>,
        /// Fixed truncation depth (overrides the config block)
        #[arg(long)]
        n: Option<usize>,
        /// Convergence tolerance for the truncation iteration
        #[arg(long)]
        tol: Option<f64>,
        /// Directory for laplace.csv (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump the solved l-functions for the first panel point
        /// (requires a fixed --n) to this file
        #[arg(long)]
        dump_grid: Option<PathBuf>,
    },
    /// Simulate event paths (CSV per path)
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Number of independent paths (overrides the config block)
        #[arg(long)]
        paths: Option<usize>,
        /// Top-level seed; path i draws from stream i
        #[arg(long)]
        seed: Option<u64>,
        /// Path generator: thinning | cluster
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Cluster truncation depth
        #[arg(long)]
        generations: Option<usize>,
        /// Output directory (stdout allowed only for a single path)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write intensity traces on a uniform grid with this many points
        #[arg(long)]
        intensity_points: Option<usize>,
    },
    /// Monte Carlo verification of the closed forms (requires stability)
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Directory for verify.json (text report always goes to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump the raw intensity samples as samples.csv for plotting
        #[arg(long)]
        dump_samples: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{e}");
                    std::process::exit(1);
                }
            }
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("CONTAGION_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            std::process::exit(1);
        }
    }

    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Check { config, json } => {
            let cfg = RunConfig::load(&config)?;
            let report = cfg.model.validate()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                println!("parameters: ok (hash {})", cfg.model.hash_id());
                println!("spectral radius: {}", report.spectral_radius);
                println!(
                    "stability condition (radius < 1): {}",
                    if report.c2_ok { "satisfied" } else { "violated" }
                );
                for m in &report.messages {
                    println!("  note: {m}");
                }
            }
            Ok(0)
        }

        Command::Moments { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let report = moment_report(&cfg.model)?;
            let rendered = serde_json::to_string_pretty(&report).unwrap();
            match resolve_out(out, &cfg) {
                Some(dir) => {
                    let mut f = out_file(&dir, "moments.json")?;
                    writeln!(f, "{rendered}")?;
                    println!("wrote {}", dir.join("moments.json").display());
                }
                None => println!("{rendered}"),
            }
            Ok(0)
        }

        Command::Laplace { config, v1, v2, n, tol, out, dump_grid } => {
            let cfg = RunConfig::load(&config)?;
            let block = cfg.laplace.clone().ok_or_else(|| {
                CliError::Config("the laplace subcommand needs a [laplace] block".into())
            })?;
            let panel: Vec<(f64, f64)> = match (v1, v2) {
                (Some(a), Some(b)) => vec![(a, b)],
                (None, None) => block.v_panel.clone(),
                _ => {
                    return Err(CliError::Config(
                        "--v1 and --v2 must be given together".into(),
                    ))
                }
            };
            if panel.is_empty() {
                return Err(CliError::Config(
                    "no transform arguments: set [laplace].v_panel or pass --v1/--v2".into(),
                ));
            }
            let fixed_n = n.or(block.n);
            let tol = tol.unwrap_or(block.tol);
            let solver = SolverConfig::default();

            let mut rows = String::from("v1,v2,n,value,error_estimate,n_used\n");
            for &(a, b) in &panel {
                match fixed_n {
                    Some(depth) => {
                        let r = limiting_laplace_finite(&cfg.model, a, b, depth, &solver)?;
                        rows.push_str(&format!(
                            "{a},{b},{depth},{},{},{depth}\n",
                            r.value, r.error_estimate
                        ));
                    }
                    None => {
                        let r = limiting_laplace(&cfg.model, a, b, tol, &solver)?;
                        rows.push_str(&format!(
                            "{a},{b},{},{},{},{}\n",
                            r.n_used, r.value, r.error_estimate, r.n_used
                        ));
                    }
                }
            }
            match resolve_out(out, &cfg) {
                Some(dir) => {
                    let mut f = out_file(&dir, "laplace.csv")?;
                    write!(f, "{rows}")?;
                    println!("wrote {}", dir.join("laplace.csv").display());
                }
                None => print!("{rows}"),
            }

            if let Some(path) = dump_grid {
                let depth = fixed_n.ok_or_else(|| {
                    CliError::Config("--dump-grid needs a fixed truncation depth (--n)".into())
                })?;
                let (a, b) = panel[0];
                let m = 2 * depth;
                let v: Vec<f64> =
                    (0..m).map(|i| if i % 2 == 0 { a } else { b }).collect();
                let horizon = (1.0f64.max(a.max(b)) / solver.tail_tol).ln()
                    / cfg.model.delta_min()
                    + 2.0 / cfg.model.delta_min();
                let grid = solver.grid(&cfg.model, horizon)?;
                let solved = solve_l(&cfg.model, &v, &grid)?;
                let mut f = BufWriter::new(File::create(&path)?);
                solved.write_csv(&mut f)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }

        Command::Simulate {
            config,
            paths,
            seed,
            algorithm,
            horizon,
            generations,
            out,
            intensity_points,
        } => {
            let cfg = RunConfig::load(&config)?;
            let block = cfg.simulate.clone().ok_or_else(|| {
                CliError::Config("the simulate subcommand needs a [simulate] block".into())
            })?;
            let paths = paths.unwrap_or(block.paths).max(1);
            let seed = seed.unwrap_or(block.seed);
            let horizon = horizon.unwrap_or(block.horizon);
            let generations = generations.unwrap_or(block.generations);
            let algorithm = algorithm.unwrap_or_else(|| block.algorithm.clone());
            let intensity_points = intensity_points.or(block.intensity_points);

            let simulate_one = |path: u64| -> Result<EventHistory, CliError> {
                Ok(match algorithm.as_str() {
                    "thinning" => simulate_thinning_stream(&cfg.model, horizon, seed, path)?,
                    "cluster" => {
                        simulate_cluster_stream(&cfg.model, horizon, generations, seed, path)?
                    }
                    other => {
                        return Err(CliError::Config(format!(
                            "unknown algorithm '{other}' (expected thinning or cluster)"
                        )))
                    }
                })
            };

            let dir = resolve_out(out, &cfg);
            if dir.is_none() && (paths > 1 || intensity_points.is_some()) {
                return Err(CliError::Config(
                    "writing multiple paths or intensity traces needs --out".into(),
                ));
            }
            for path in 0..paths {
                let history = simulate_one(path as u64)?;
                match &dir {
                    Some(dir) => {
                        let mut f = out_file(dir, &format!("events_{path:04}.csv"))?;
                        history.write_csv(&mut f)?;
                        if let Some(points) = intensity_points {
                            let step = horizon / points.max(2) as f64;
                            let times: Vec<f64> =
                                (0..=points).map(|i| (i as f64 * step).min(horizon)).collect();
                            let f = out_file(dir, &format!("intensity_{path:04}.csv"))?;
                            write_intensity_csv(&history, &cfg.model, &times, f)?;
                        }
                    }
                    None => {
                        let stdout = std::io::stdout();
                        history.write_csv(stdout.lock())?;
                    }
                }
            }
            if let Some(dir) = &dir {
                println!("wrote {paths} path(s) to {}", dir.display());
            }
            Ok(0)
        }

        Command::Verify { config, out, dump_samples } => {
            let cfg = RunConfig::load(&config)?;
            let block = cfg.verify.clone().ok_or_else(|| {
                CliError::Config("the verify subcommand needs a [verify] block".into())
            })?;
            let vcfg = VerifyConfig {
                n_paths: block.paths,
                horizon: block.horizon,
                burn_in: block.burn_in,
                v_panel: block.v_panel,
                z_band: block.z_band,
                seed: block.seed,
                laplace_tol: 1e-9,
            };
            let report = verify(&cfg.model, &vcfg)?;
            print!("{}", report.render_text());
            let dir = resolve_out(out, &cfg);
            if let Some(dir) = &dir {
                let mut f = out_file(dir, "verify.json")?;
                writeln!(f, "{}", serde_json::to_string_pretty(&report).unwrap())?;
                println!("wrote {}", dir.join("verify.json").display());
            }
            if report.nonstationary {
                return Err(CliError::Model(bdcp::Error::NonStationary {
                    radius: report.spectral_radius,
                }));
            }
            if dump_samples {
                let dir = dir.ok_or_else(|| {
                    CliError::Config("--dump-samples needs an output directory".into())
                })?;
                // same seed and streams as the verification run, so these are
                // exactly the samples behind the report
                let samples = sample_intensity_ensemble(
                    &cfg.model,
                    Algorithm::Thinning,
                    report.n_paths,
                    report.horizon,
                    vcfg.seed,
                )?;
                let mut f = out_file(&dir, "samples.csv")?;
                writeln!(f, "lambda1,lambda2")?;
                for (a, b) in samples {
                    writeln!(f, "{a},{b}")?;
                }
                println!("wrote {}", dir.join("samples.csv").display());
            }
            Ok(if report.overall_pass { 0 } else { 1 })
        }
    }
}

/// CLI --out wins, then the config's [output].dir.
fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig) -> Option<PathBuf> {
    flag.or_else(|| {
        cfg.output.as_ref().and_then(|o| o.dir.as_ref()).map(PathBuf::from)
    })
}
