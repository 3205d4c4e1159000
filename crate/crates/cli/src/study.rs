//! The retrospective-study harness: simulate undersampled acquisition of
//! every manifest slice over every density method, reconstruct, score and
//! summarize.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use sparkling2d_core::constraints::ConstraintSet;
use sparkling2d_core::density::{
    log_spectrum_density, loupe_lite_learn, spectrum_density, vds_density, LoupeLiteParams,
    VdsParams,
};
use sparkling2d_core::error::{Error, Result};
use sparkling2d_core::io::{apply_config_key, RunConfig};
use sparkling2d_core::metrics::{auto_mask, psnr, ssim};
use sparkling2d_core::nufft::{NonUniformPlan, NufftMode};
use sparkling2d_core::phantom::coil_maps;
use sparkling2d_core::recon::{
    coil_kspace, cs_reconstruct, estimate_sensitivities, lambda_grid, lambda_search, ReconConfig,
    SensitivityMaps,
};
use sparkling2d_core::sparkling::{generate, sample_dwell_points, InitKind, SparklingConfig};
use sparkling2d_core::types::{DensityGrid, Trajectory};
use sparkling2d_core::wavelet::WaveletConfig;

use crate::tensors::read_image_magnitude;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMethod {
    Vds,
    Spectrum,
    LogSpectrum,
    LoupeLite,
}

impl DensityMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vds" => Ok(DensityMethod::Vds),
            "spectrum" => Ok(DensityMethod::Spectrum),
            "log-spectrum" => Ok(DensityMethod::LogSpectrum),
            "loupe-lite" => Ok(DensityMethod::LoupeLite),
            other => Err(Error::Config(format!("unknown density method {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DensityMethod::Vds => "vds",
            DensityMethod::Spectrum => "spectrum",
            DensityMethod::LogSpectrum => "log-spectrum",
            DensityMethod::LoupeLite => "loupe-lite",
        }
    }
}

#[derive(Debug, Clone)]
pub enum LambdaChoice {
    Fixed(f64),
    Search { count: usize },
}

#[derive(Debug, Clone)]
pub struct StudyManifest {
    pub slices: Vec<(PathBuf, String)>,
    pub methods: Vec<DensityMethod>,
    pub config: RunConfig,
    pub vds: VdsParams,
    pub loupe_sparsity: Option<f64>,
    pub loupe_slope: f64,
    pub loupe_epochs: usize,
    pub loupe_step: f64,
    pub coils: usize,
    pub lambda: LambdaChoice,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub exact_nufft: bool,
}

impl StudyManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut m = StudyManifest {
            slices: Vec::new(),
            methods: vec![DensityMethod::Vds],
            config: RunConfig::default(),
            vds: VdsParams::new(0.25, 2.0)?,
            loupe_sparsity: None,
            loupe_slope: 20.0,
            loupe_epochs: 100,
            loupe_step: 1.0,
            coils: 1,
            lambda: LambdaChoice::Fixed(1e-3),
            workers: 0,
            out_dir: None,
            exact_nufft: false,
        };
        for raw in text.lines() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Format(format!("expected `key = value`, got {line:?}")))?;
            match key {
                "slice" => {
                    let (file, tag) = match value.split_once(',') {
                        Some((f, t)) => (f.trim(), t.trim().to_string()),
                        None => (value, String::new()),
                    };
                    m.slices.push((base.join(file), tag));
                }
                "density_methods" => {
                    m.methods = value
                        .split(',')
                        .map(|s| DensityMethod::parse(s.trim()))
                        .collect::<Result<_>>()?;
                }
                "vds_cutoff" => m.vds = VdsParams::new(value_num(key, value)?, m.vds.decay)?,
                "vds_decay" => m.vds = VdsParams::new(m.vds.cutoff, value_num(key, value)?)?,
                "loupe_sparsity" => m.loupe_sparsity = Some(value_num(key, value)?),
                "loupe_slope" => m.loupe_slope = value_num(key, value)?,
                "loupe_epochs" => m.loupe_epochs = value_num(key, value)? as usize,
                "loupe_step" => m.loupe_step = value_num(key, value)?,
                "coils" => m.coils = value_num(key, value)? as usize,
                "workers" => m.workers = value_num(key, value)? as usize,
                "exact_nufft" => m.exact_nufft = value == "true" || value == "1",
                "lambda" => {
                    m.lambda = if value == "search" {
                        LambdaChoice::Search { count: 7 }
                    } else {
                        LambdaChoice::Fixed(value_num(key, value)?)
                    }
                }
                "lambda_count" => {
                    if let LambdaChoice::Search { .. } = m.lambda {
                        m.lambda = LambdaChoice::Search { count: value_num(key, value)? as usize };
                    }
                }
                "out_dir" => m.out_dir = Some(base.join(value)),
                other => apply_config_key(&mut m.config, other, value)?,
            }
        }
        m.config.validate()?;
        if m.slices.is_empty() {
            return Err(Error::Config("manifest lists no slices".into()));
        }
        if m.coils < 1 {
            return Err(Error::Config("coils must be >= 1".into()));
        }
        Ok(m)
    }

    /// All referenced inputs must exist before any compute starts.
    pub fn validate_inputs(&self) -> Result<()> {
        for (path, _) in &self.slices {
            if !path.is_file() {
                return Err(Error::Config(format!("slice file missing: {}", path.display())));
            }
        }
        Ok(())
    }
}

fn value_num(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse value {v:?}")))
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub slice_id: usize,
    pub tag: String,
    pub method: &'static str,
    pub r_factor: f64,
    pub lambda: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub recon_iters: usize,
    pub wall_ms: u128,
    pub error: Option<String>,
}

pub struct StudyResults {
    pub rows: Vec<StudyRow>,
    pub summaries: Vec<MethodSummary>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: &'static str,
    pub median_ssim: f64,
    pub q1_ssim: f64,
    pub q3_ssim: f64,
    pub median_psnr: f64,
    pub q1_psnr: f64,
    pub q3_psnr: f64,
}

fn quartiles(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| -> f64 {
        let pos = f * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        values[lo] * (1.0 - frac) + values[hi] * frac
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Run the full study. Deterministic given the manifest and seed; wall
/// times are recorded only when `timing` is set so default output is
/// byte-reproducible.
pub fn run_retrospective(manifest: &StudyManifest, timing: bool) -> Result<StudyResults> {
    manifest.validate_inputs()?;
    let cfg = &manifest.config;
    let spec = cfg.trajectory_spec()?;
    let n = cfg.hardware.n;
    let os = cfg.hardware.oversampling();
    let r_factor = spec.acceleration_factor();

    let images: Vec<Array2<f64>> = manifest
        .slices
        .iter()
        .map(|(path, _)| {
            let img = read_image_magnitude(path)?;
            if img.nrows() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{}: image side {} does not match configured n = {n}",
                    path.display(),
                    img.nrows()
                )));
            }
            Ok(img)
        })
        .collect::<Result<_>>()?;

    // densities and trajectories once per method
    let gamma_default = 1.0 / r_factor;
    let mut prepared: Vec<(&'static str, Trajectory)> = Vec::new();
    for method in &manifest.methods {
        let density: DensityGrid = match method {
            DensityMethod::Vds => vds_density(n, manifest.vds)?,
            DensityMethod::Spectrum => spectrum_density(&images)?,
            DensityMethod::LogSpectrum => log_spectrum_density(&images)?,
            DensityMethod::LoupeLite => {
                let gamma = manifest.loupe_sparsity.unwrap_or(gamma_default);
                let params = LoupeLiteParams::new(
                    gamma,
                    manifest.loupe_slope,
                    manifest.loupe_epochs,
                    manifest.loupe_step,
                    cfg.sparkling.seed,
                )?;
                loupe_lite_learn(&images, &params)?.0
            }
        };
        let q = ConstraintSet::from_hardware(&cfg.hardware)?.with_center_anchors(&spec);
        let sp_cfg = SparklingConfig {
            n_levels: cfg.sparkling.n_levels,
            iters_per_level: cfg.sparkling.iters_per_level,
            step_factor: cfg.sparkling.step_factor,
            step_decay: cfg.sparkling.step_decay,
            init: match cfg.sparkling.init.as_str() {
                "radial" => InitKind::RadialInOut,
                _ => InitKind::GoldenAngleRadial,
            },
            seed: cfg.sparkling.seed,
            proj_tol: cfg.sparkling.proj_tol,
            proj_max_iter: cfg.sparkling.proj_max_iter,
        };
        let (traj, _) = generate(&density, &spec, &q, &sp_cfg)?;
        prepared.push((method.name(), traj));
    }

    let mode = if manifest.exact_nufft {
        NufftMode::Exact
    } else {
        NufftMode::gridded_default()
    };
    let maps_template = if manifest.coils > 1 {
        Some(SensitivityMaps { maps: coil_maps(n, manifest.coils) })
    } else {
        None
    };

    let tasks: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|s| (0..prepared.len()).map(move |m| (s, m)))
        .collect();

    let run_task = |&(slice_id, mi): &(usize, usize)| -> StudyRow {
        let started = Instant::now();
        let (method, traj) = &prepared[mi];
        let tag = manifest.slices[slice_id].1.clone();
        let reference = &images[slice_id];
        let mut row = StudyRow {
            slice_id,
            tag,
            method,
            r_factor,
            lambda: f64::NAN,
            ssim: f64::NAN,
            psnr: f64::NAN,
            recon_iters: 0,
            wall_ms: 0,
            error: None,
        };
        let outcome = (|| -> Result<(f64, f64, f64, usize)> {
            let dwell = sample_dwell_points(traj, os)?;
            let locations: Vec<[f64; 2]> = dwell
                .outer_iter()
                .flat_map(|shot| {
                    shot.outer_iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>()
                })
                .collect();
            let plan = NonUniformPlan::new(locations, n, mode)?;
            let complex_ref = reference.mapv(|v| Complex64::new(v, 0.0));
            let (kspace, maps) = match &maps_template {
                Some(true_maps) => {
                    let y = coil_kspace(&complex_ref, true_maps, &plan)?;
                    let est = estimate_sensitivities(&y, &plan, cfg.recon.center_fraction)?;
                    (y, est)
                }
                None => (vec![plan.forward(&complex_ref)?], SensitivityMaps::unit(n)),
            };
            let base = ReconConfig {
                lambda: 0.0,
                max_iter: cfg.recon.max_iter,
                tol: cfg.recon.tol,
                wavelet: WaveletConfig::sym8(cfg.recon.wavelet_scales),
                dc_precondition: cfg.recon.dc_precondition,
                monotone: true,
            };
            match &manifest.lambda {
                LambdaChoice::Fixed(lambda) => {
                    let recon_cfg = ReconConfig { lambda: *lambda, ..base };
                    let (img, log) = cs_reconstruct(&kspace, &plan, &maps, &recon_cfg)?;
                    let mag = img.mapv(|v| v.norm());
                    let mask = auto_mask(reference);
                    Ok((
                        *lambda,
                        ssim(reference, &mag, &mask)?,
                        psnr(reference, &mag, &mask)?,
                        log.iterations,
                    ))
                }
                LambdaChoice::Search { count } => {
                    let grid = lambda_grid(1e-4, 1.0, *count)?;
                    let res = lambda_search(&kspace, &plan, &maps, &base, reference, &grid)?;
                    let best = res
                        .table
                        .iter()
                        .find(|r| r.lambda == res.best_lambda)
                        .expect("best lambda row exists");
                    Ok((res.best_lambda, res.best_ssim, best.psnr.unwrap(), best.iterations))
                }
            }
        })();
        match outcome {
            Ok((lambda, ssim, psnr, iters)) => {
                row.lambda = lambda;
                row.ssim = ssim;
                row.psnr = psnr;
                row.recon_iters = iters;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        if timing {
            row.wall_ms = started.elapsed().as_millis();
        }
        row
    };

    let mut rows: Vec<StudyRow> = if manifest.workers == 1 {
        tasks.iter().map(run_task).collect()
    } else if manifest.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(manifest.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(run_task).collect())
    } else {
        tasks.par_iter().map(run_task).collect()
    };
    rows.sort_by(|a, b| (a.slice_id, a.method).cmp(&(b.slice_id, b.method)));

    let mut summaries = Vec::new();
    for method in &manifest.methods {
        let ssims: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method.name() && r.error.is_none())
            .map(|r| r.ssim)
            .collect();
        let psnrs: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method.name() && r.error.is_none())
            .map(|r| r.psnr)
            .collect();
        if ssims.is_empty() {
            continue;
        }
        let (q1s, meds, q3s) = quartiles(ssims);
        let (q1p, medp, q3p) = quartiles(psnrs);
        summaries.push(MethodSummary {
            method: method.name(),
            median_ssim: meds,
            q1_ssim: q1s,
            q3_ssim: q3s,
            median_psnr: medp,
            q1_psnr: q1p,
            q3_psnr: q3p,
        });
    }
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(StudyResults { rows, summaries, failures })
}

pub fn results_csv(results: &StudyResults) -> String {
    let mut out = String::from(
        "slice_id,density_method,R,lambda,ssim,psnr,recon_iters,wall_ms\n",
    );
    for r in &results.rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6e},{:.6},{:.4},{},{}",
            r.slice_id, r.method, r.r_factor, r.lambda, r.ssim, r.psnr, r.recon_iters, r.wall_ms
        );
    }
    out
}

pub fn summary_csv(results: &StudyResults) -> String {
    let mut out = String::from(
        "density_method,median_ssim,q1_ssim,q3_ssim,median_psnr,q1_psnr,q3_psnr\n",
    );
    for s in &results.summaries {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4}",
            s.method, s.median_ssim, s.q1_ssim, s.q3_ssim, s.median_psnr, s.q1_psnr, s.q3_psnr
        );
    }
    out
}
