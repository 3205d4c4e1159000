//! Pipeline orchestration: densities, trajectory generation, feasibility
//! checks, retrospective acquisition, reconstruction, scoring and plots.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

mod plot;
mod study;
mod tensors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use num_complex::Complex64;
use sparkling2d_core::constraints::{is_feasible, ConstraintSet};
use sparkling2d_core::density::{
    log_spectrum_density, loupe_lite_learn, spectrum_density, vds_density, LoupeLiteParams,
    VdsParams,
};
use sparkling2d_core::error::Error;
use sparkling2d_core::io::{load_run_config, RunConfig};
use sparkling2d_core::metrics::{auto_mask, quality_report};
use sparkling2d_core::nufft::{NonUniformPlan, NufftMode};
use sparkling2d_core::phantom;
use sparkling2d_core::recon::{
    coil_kspace, cs_reconstruct, estimate_sensitivities, lambda_grid, lambda_search, ReconConfig,
    SensitivityMaps,
};
use sparkling2d_core::sparkling::{generate, sample_dwell_points, InitKind, SparklingConfig};
use sparkling2d_core::wavelet::WaveletConfig;

#[derive(Parser)]
#[command(
    name = "sparkling2d",
    about = "Hardware-constrained 2D k-space trajectory design and CS reconstruction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a target sampling density.
    Density {
        #[command(subcommand)]
        method: DensityCmd,
    },
    /// Trajectory optimization.
    Sparkling {
        #[command(subcommand)]
        action: SparklingCmd,
    },
    /// Trajectory inspection.
    Traj {
        #[command(subcommand)]
        action: TrajCmd,
    },
    /// Simulate k-space acquisition of an image along a trajectory.
    Acquire(AcquireArgs),
    /// Image reconstruction.
    Recon {
        #[command(subcommand)]
        action: ReconCmd,
    },
    /// Score a reconstruction against a reference image.
    Score(ScoreArgs),
    /// Retrospective studies.
    Study {
        #[command(subcommand)]
        action: StudyCmd,
    },
    /// Render densities, trajectories or images to PNG.
    Plot {
        #[command(subcommand)]
        what: PlotCmd,
    },
    /// Generate phantom test images.
    Phantom(PhantomArgs),
}

#[derive(Subcommand)]
enum DensityCmd {
    /// Radially decaying parametric density.
    Vds {
        #[arg(long, default_value_t = 320)]
        n: usize,
        #[arg(long, default_value_t = 0.25)]
        cutoff: f64,
        #[arg(long, default_value_t = 2.0)]
        decay: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Average magnitude spectrum of a dataset.
    Spectrum {
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Average log-spectrum of a dataset.
    LogSpectrum {
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Learned probability map under a sparsity budget.
    LoupeLite {
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Fraction of k-space kept (γ = 1/R).
        #[arg(long, default_value_t = 0.4)]
        sparsity: f64,
        #[arg(long, default_value_t = 20.0)]
        slope: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum SparklingCmd {
    /// Optimize a trajectory for a target density.
    Generate {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrajCmd {
    /// Print the feasibility report; nonzero exit on violation.
    Check {
        trajectory: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Relative tolerance on the speed/acceleration ratios.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Args)]
struct AcquireArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulated coil count (Gaussian sensitivities when > 1).
    #[arg(long, default_value_t = 1)]
    coils: usize,
    /// Evaluate the exact non-uniform DFT instead of gridding.
    #[arg(long)]
    exact: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum ReconCmd {
    /// Compressed-sensing reconstruction (FISTA over wavelet coefficients).
    Cs(ReconArgs),
    /// Density-compensated adjoint (zero-filled baseline).
    Adjoint(ReconArgs),
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    kspace: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Regularization weight, or `search` for the SSIM-maximizing sweep.
    #[arg(long, default_value = "1e-3")]
    lambda: String,
    /// Reference image (required when --lambda search).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write the iteration log (iter, objective, time) as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    exact: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// `auto` or a path to an f64 mask tensor (nonzero = scored).
    #[arg(long, default_value = "auto")]
    mask: String,
}

#[derive(Subcommand)]
enum StudyCmd {
    /// Retrospective study over manifest slices and density methods.
    Retro {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Record wall-clock times (off by default so output bytes are
        /// reproducible).
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Subcommand)]
enum PlotCmd {
    Density {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    Traj {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    Image {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 320)]
    n: usize,
    /// `shepp-logan` or `random`.
    #[arg(long, default_value = "shepp-logan")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. }
                | Error::ProjectionFailed { .. }
                | Error::DegenerateGeometry(_) => 3,
                _ => 2,
            })
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => load_run_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Density { method } => {
            let (grid, out) = match method {
                DensityCmd::Vds { n, cutoff, decay, output } => {
                    (vds_density(n, VdsParams::new(cutoff, decay)?)?, output)
                }
                DensityCmd::Spectrum { images, output } => {
                    (spectrum_density(&load_images(&images)?)?, output)
                }
                DensityCmd::LogSpectrum { images, output } => {
                    (log_spectrum_density(&load_images(&images)?)?, output)
                }
                DensityCmd::LoupeLite {
                    images,
                    sparsity,
                    slope,
                    epochs,
                    step_size,
                    seed,
                    output,
                } => {
                    let params = LoupeLiteParams::new(sparsity, slope, epochs, step_size, seed)?;
                    let (grid, log) = loupe_lite_learn(&load_images(&images)?, &params)?;
                    eprintln!(
                        "loupe-lite: loss {:.6e} -> {:.6e} over {} epochs",
                        log.losses.first().unwrap(),
                        log.losses.last().unwrap(),
                        log.losses.len() - 1
                    );
                    (grid, output)
                }
            };
            tensors::write_density(&out, &grid)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Sparkling { action } => match action {
            SparklingCmd::Generate { density, config, output } => {
                let cfg = load_config(&config)?;
                let rho = tensors::read_density(&density)?;
                if rho.n() != cfg.hardware.n {
                    return Err(Error::ShapeMismatch(format!(
                        "density grid side {} does not match configured n = {}",
                        rho.n(),
                        cfg.hardware.n
                    )));
                }
                let spec = cfg.trajectory_spec()?;
                let q = ConstraintSet::from_hardware(&cfg.hardware)?.with_center_anchors(&spec);
                let sp = &cfg.sparkling;
                let init = match sp.init.as_str() {
                    "radial" => InitKind::RadialInOut,
                    "golden" => InitKind::GoldenAngleRadial,
                    other => {
                        if let Some(path) = other.strip_prefix("file:") {
                            InitKind::Given(
                                tensors::read_trajectory(
                                    &PathBuf::from(path),
                                    &spec,
                                )?
                                .points,
                            )
                        } else {
                            return Err(Error::Config(format!("unknown init kind {other:?}")));
                        }
                    }
                };
                let sp_cfg = SparklingConfig {
                    n_levels: sp.n_levels,
                    iters_per_level: sp.iters_per_level,
                    step_factor: sp.step_factor,
                    step_decay: sp.step_decay,
                    init,
                    seed: sp.seed,
                    proj_tol: sp.proj_tol,
                    proj_max_iter: sp.proj_max_iter,
                };
                let (traj, report) = generate(&rho, &spec, &q, &sp_cfg)?;
                tensors::write_trajectory(&output, &traj)?;
                eprintln!(
                    "objective {:.6e} -> {:.6e}; nearest-neighbor distance CV {:.3}; R = {:.3}",
                    report.f_init,
                    report.f_final,
                    report.nn_cv,
                    spec.acceleration_factor()
                );
                Ok(ExitCode::SUCCESS)
            }
        },

        Command::Traj { action } => match action {
            TrajCmd::Check { trajectory, config, tol } => {
                let cfg = load_config(&config)?;
                let spec = cfg.trajectory_spec()?;
                let traj = tensors::read_trajectory(&trajectory, &spec)?;
                let q = ConstraintSet::from_hardware(&cfg.hardware)?;
                let report = is_feasible(&traj, &q, tol)?;
                println!(
                    "max speed ratio {:.6} at shot {} step {}",
                    report.max_speed_ratio, report.worst_speed.0, report.worst_speed.1
                );
                println!(
                    "max accel ratio {:.6} at shot {} step {}",
                    report.max_accel_ratio, report.worst_accel.0, report.worst_accel.1
                );
                println!("feasible: {}", report.feasible);
                if report.feasible {
                    Ok(ExitCode::SUCCESS)
                } else {
                    Ok(ExitCode::from(2))
                }
            }
        },

        Command::Acquire(args) => {
            let cfg = load_config(&args.config)?;
            let spec = cfg.trajectory_spec()?;
            let traj = tensors::read_trajectory(&args.traj, &spec)?;
            let image = tensors::read_image_complex(&args.image)?;
            let n = cfg.hardware.n;
            if image.nrows() != n {
                return Err(Error::ShapeMismatch(format!(
                    "image side {} does not match configured n = {n}",
                    image.nrows()
                )));
            }
            let plan = build_plan(&traj, &cfg, args.exact)?;
            let maps = if args.coils > 1 {
                SensitivityMaps { maps: phantom::coil_maps(n, args.coils) }
            } else {
                SensitivityMaps::unit(n)
            };
            let kspace = coil_kspace(&image, &maps, &plan)?;
            tensors::write_kspace(&args.output, &kspace)?;
            eprintln!("{} coils x {} samples", kspace.len(), plan.len());
            Ok(ExitCode::SUCCESS)
        }

        Command::Recon { action } => {
            let (args, adjoint_only) = match action {
                ReconCmd::Cs(a) => (a, false),
                ReconCmd::Adjoint(a) => (a, true),
            };
            let cfg = load_config(&args.config)?;
            let spec = cfg.trajectory_spec()?;
            let traj = tensors::read_trajectory(&args.traj, &spec)?;
            let kspace = tensors::read_kspace(&args.kspace)?;
            let plan = build_plan(&traj, &cfg, args.exact)?;
            if kspace.is_empty() || kspace[0].len() != plan.len() {
                return Err(Error::ShapeMismatch(format!(
                    "k-space has {} samples per coil, trajectory implies {}",
                    kspace.first().map(|c| c.len()).unwrap_or(0),
                    plan.len()
                )));
            }
            let n = cfg.hardware.n;
            let maps = if kspace.len() > 1 {
                estimate_sensitivities(&kspace, &plan, cfg.recon.center_fraction)?
            } else {
                SensitivityMaps::unit(n)
            };
            if adjoint_only {
                let weights = sparkling2d_core::nufft::pipe_weights(&plan, 10)?;
                let mut acc = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
                for (coil, map) in kspace.iter().zip(maps.maps.iter()) {
                    let img = plan.adjoint(coil, Some(&weights))?;
                    for ((a, v), m) in acc.iter_mut().zip(img.iter()).zip(map.iter()) {
                        *a += v * m.conj();
                    }
                }
                tensors::write_complex_image(&args.output, &acc)?;
                return Ok(ExitCode::SUCCESS);
            }
            let base = ReconConfig {
                lambda: 0.0,
                max_iter: cfg.recon.max_iter,
                tol: cfg.recon.tol,
                wavelet: WaveletConfig::sym8(cfg.recon.wavelet_scales),
                dc_precondition: cfg.recon.dc_precondition,
                monotone: true,
            };
            let (image, log) = if args.lambda == "search" {
                let ref_path = args.reference.as_ref().ok_or_else(|| {
                    Error::Config("--lambda search needs --reference".into())
                })?;
                let reference = tensors::read_image_magnitude(ref_path)?;
                let grid = lambda_grid(1e-4, 1.0, 7)?;
                let res = lambda_search(&kspace, &plan, &maps, &base, &reference, &grid)?;
                eprintln!("lambda search: best {} (ssim {:.4})", res.best_lambda, res.best_ssim);
                for row in &res.table {
                    eprintln!(
                        "  lambda {:.3e}: ssim {}",
                        row.lambda,
                        row.ssim.map(|s| format!("{s:.4}")).unwrap_or_else(|| "failed".into())
                    );
                }
                let best = ReconConfig { lambda: res.best_lambda, ..base };
                cs_reconstruct(&kspace, &plan, &maps, &best)?
            } else {
                let lambda: f64 = args
                    .lambda
                    .parse()
                    .map_err(|_| Error::Config(format!("bad lambda {:?}", args.lambda)))?;
                let reccfg = ReconConfig { lambda, ..base };
                cs_reconstruct(&kspace, &plan, &maps, &reccfg)?
            };
            if let Some(log_path) = &args.log {
                let mut csv = String::from("iter,objective\n");
                for (i, obj) in log.objectives.iter().enumerate() {
                    csv.push_str(&format!("{i},{obj:.12e}\n"));
                }
                std::fs::write(log_path, csv)?;
            }
            eprintln!(
                "{} iterations, objective {:.6e} -> {:.6e}, converged: {}",
                log.iterations,
                log.objectives.first().unwrap(),
                log.objectives.last().unwrap(),
                log.converged
            );
            tensors::write_complex_image(&args.output, &image)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Score(args) => {
            let reference = tensors::read_image_magnitude(&args.reference)?;
            let test = tensors::read_image_magnitude(&args.test)?;
            let mask = match args.mask.as_str() {
                "auto" => auto_mask(&reference),
                path => {
                    let m = tensors::read_image_magnitude(std::path::Path::new(path))?;
                    m.mapv(|v| v != 0.0)
                }
            };
            let report = quality_report(&reference, &test, &mask)?;
            println!(
                "{}",
                serde_json::to_string(&report).map_err(|e| Error::Format(e.to_string()))?
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Study { action } => match action {
            StudyCmd::Retro { manifest, output, timing } => {
                let mut m = study::StudyManifest::load(&manifest)?;
                if let Some(out) = output {
                    m.out_dir = Some(out);
                }
                let out_dir = m
                    .out_dir
                    .clone()
                    .ok_or_else(|| Error::Config("no output directory (use -o)".into()))?;
                std::fs::create_dir_all(&out_dir)?;
                let results = study::run_retrospective(&m, timing)?;
                std::fs::write(out_dir.join("results.csv"), study::results_csv(&results))?;
                std::fs::write(out_dir.join("summary.csv"), study::summary_csv(&results))?;
                for s in &results.summaries {
                    println!(
                        "{}: median SSIM {:.4} [{:.4}, {:.4}], median PSNR {:.2} dB",
                        s.method, s.median_ssim, s.q1_ssim, s.q3_ssim, s.median_psnr
                    );
                }
                if results.failures > 0 {
                    let mut errs = String::new();
                    for r in results.rows.iter().filter(|r| r.error.is_some()) {
                        errs.push_str(&format!(
                            "slice {} method {}: {}\n",
                            r.slice_id,
                            r.method,
                            r.error.as_ref().unwrap()
                        ));
                    }
                    std::fs::write(out_dir.join("errors.txt"), errs)?;
                    eprintln!("{} slice reconstructions failed", results.failures);
                    return Ok(ExitCode::from(3));
                }
                Ok(ExitCode::SUCCESS)
            }
        },

        Command::Plot { what } => {
            match what {
                PlotCmd::Density { input, output } => {
                    let d = tensors::read_density(&input)?;
                    plot::heatmap(d.values(), 0.25, &output)?;
                }
                PlotCmd::Traj { input, output } => {
                    let points = tensors::read_trajectory_points(&input)?;
                    plot::trajectory(&points, &output)?;
                }
                PlotCmd::Image { input, output } => {
                    let img = tensors::read_image_magnitude(&input)?;
                    plot::heatmap(&img, 1.0, &output)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Phantom(args) => {
            let img = match args.kind.as_str() {
                "shepp-logan" => phantom::shepp_logan(args.n),
                "random" => phantom::random_phantom(args.n, args.seed),
                other => return Err(Error::Config(format!("unknown phantom kind {other:?}"))),
            };
            tensors::write_real_image(&args.output, &img)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<Array2<f64>>, Error> {
    paths.iter().map(|p| tensors::read_image_magnitude(p)).collect()
}

/// Dwell-resolution plan for a trajectory under the run configuration.
fn build_plan(
    traj: &sparkling2d_core::types::Trajectory,
    cfg: &RunConfig,
    exact: bool,
) -> Result<NonUniformPlan, Error> {
    let os = cfg.hardware.oversampling();
    let dwell = sample_dwell_points(traj, os)?;
    let locations: Vec<[f64; 2]> = dwell
        .outer_iter()
        .flat_map(|shot| shot.outer_iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>())
        .collect();
    let mode = if exact { NufftMode::Exact } else { NufftMode::gridded_default() };
    NonUniformPlan::new(locations, cfg.hardware.n, mode)
}
