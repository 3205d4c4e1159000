//! Domain types shared by every stage of the pipeline: scanner hardware
//! limits, trajectory geometry, gradient waveforms and gridded sampling
//! densities.
//!
//! All trajectory optimization happens in the normalized k-space
//! Ω = [-1,1]²; physical units (mT/m, T/m/s) only appear when converting
//! to and from gradient waveforms.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Scanner hardware limits and imaging geometry.
///
/// `gamma` is the reduced gyromagnetic ratio in MHz/T (42.57 for proton),
/// i.e. the value that directly multiplies gradient area to give cycles/m.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HardwareConfig {
    /// Maximum gradient amplitude, mT/m.
    pub g_max: f64,
    /// Maximum slew rate, T/m/s.
    pub s_max: f64,
    /// Gradient raster time, µs.
    pub raster_dt: f64,
    /// ADC dwell time, µs.
    pub dwell_dt: f64,
    /// Reduced gyromagnetic ratio, MHz/T.
    pub gamma: f64,
    /// Image matrix size (pixels per side).
    pub n: usize,
    /// Field of view, m (per side).
    pub fov: f64,
}

impl HardwareConfig {
    /// Paper-scale scanner defaults: N=320, FOV=0.23 m, Gmax=40 mT/m,
    /// Smax=180 T/m/s, Δt=10 µs, δt=2 µs, proton γ.
    pub fn default_scanner() -> Self {
        HardwareConfig {
            g_max: 40.0,
            s_max: 180.0,
            raster_dt: 10.0,
            dwell_dt: 2.0,
            gamma: 42.57,
            n: 320,
            fov: 0.23,
        }
    }

    /// Validate invariants. Must be called after manual construction;
    /// all loaders call it on your behalf.
    pub fn validate(&self) -> Result<()> {
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::Config(format!("g_max must be > 0, got {}", self.g_max)));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::Config(format!("s_max must be > 0, got {}", self.s_max)));
        }
        if !(self.raster_dt > 0.0 && self.raster_dt.is_finite()) {
            return Err(Error::Config(format!("raster_dt must be > 0, got {}", self.raster_dt)));
        }
        if !(self.dwell_dt > 0.0 && self.dwell_dt.is_finite()) {
            return Err(Error::Config(format!("dwell_dt must be > 0, got {}", self.dwell_dt)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.n < 8 {
            return Err(Error::Config(format!("matrix size n must be >= 8, got {}", self.n)));
        }
        if !(self.fov > 0.0 && self.fov.is_finite()) {
            return Err(Error::Config(format!("fov must be > 0, got {}", self.fov)));
        }
        let ratio = self.raster_dt / self.dwell_dt;
        let os = ratio.round();
        if os < 1.0 || (ratio - os).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "raster_dt ({} µs) must be an integer multiple of dwell_dt ({} µs)",
                self.raster_dt, self.dwell_dt
            )));
        }
        Ok(())
    }

    /// Dwell-time oversampling factor os = Δt/δt.
    pub fn oversampling(&self) -> usize {
        (self.raster_dt / self.dwell_dt).round() as usize
    }

    /// Edge of k-space, 1/m: K_max = N / (2·FOV).
    pub fn k_max(&self) -> f64 {
        self.n as f64 / (2.0 * self.fov)
    }

    /// Maximum displacement between consecutive normalized samples,
    /// α·Δt = (γ·G_max / K_max)·Δt (dimensionless).
    pub fn speed_bound_per_step(&self) -> f64 {
        let gamma_hz = self.gamma * 1e6;
        let g_t_per_m = self.g_max * 1e-3;
        let dt_s = self.raster_dt * 1e-6;
        gamma_hz * g_t_per_m / self.k_max() * dt_s
    }

    /// Maximum second difference of normalized samples,
    /// β·Δt² = (γ·S_max / K_max)·Δt² (dimensionless).
    pub fn accel_bound_per_step(&self) -> f64 {
        let gamma_hz = self.gamma * 1e6;
        let dt_s = self.raster_dt * 1e-6;
        gamma_hz * self.s_max / self.k_max() * dt_s * dt_s
    }
}

/// Shot-count and sample-count budget of a sampling pattern.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectorySpec {
    /// Number of shots Nc.
    pub n_shots: usize,
    /// Raster-time samples per shot Ns.
    pub n_samples: usize,
    pub hardware: HardwareConfig,
}

impl TrajectorySpec {
    pub fn new(n_shots: usize, n_samples: usize, hardware: HardwareConfig) -> Result<Self> {
        hardware.validate()?;
        if n_shots < 1 {
            return Err(Error::Config("n_shots must be >= 1".into()));
        }
        if n_samples < 3 {
            return Err(Error::Config(format!(
                "n_samples must be >= 3 (second differences must exist), got {n_samples}"
            )));
        }
        Ok(TrajectorySpec { n_shots, n_samples, hardware })
    }

    /// Acceleration factor R = N² / (Nc · Ns · os).
    pub fn acceleration_factor(&self) -> f64 {
        let n = self.hardware.n as f64;
        let os = self.hardware.oversampling() as f64;
        n * n / (self.n_shots as f64 * self.n_samples as f64 * os)
    }

    /// Total raster-time sample count Nc·Ns.
    pub fn total_samples(&self) -> usize {
        self.n_shots * self.n_samples
    }
}

/// A multi-shot sampling pattern in normalized k-space.
///
/// `points` has shape [n_shots][n_samples][2]; every coordinate lies in
/// [-1, 1].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Array3<f64>,
    pub spec: TrajectorySpec,
}

impl Trajectory {
    pub fn new(points: Array3<f64>, spec: TrajectorySpec) -> Result<Self> {
        let shape = points.shape();
        if shape != [spec.n_shots, spec.n_samples, 2] {
            return Err(Error::ShapeMismatch(format!(
                "trajectory shape {:?} does not match spec [{}, {}, 2]",
                shape, spec.n_shots, spec.n_samples
            )));
        }
        for &v in points.iter() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "trajectory coordinate {v} outside normalized k-space [-1, 1]"
                )));
            }
        }
        Ok(Trajectory { points, spec })
    }

    /// All sample locations flattened to a point list [Nc·Ns][2].
    pub fn flat_points(&self) -> Vec<[f64; 2]> {
        self.points
            .outer_iter()
            .flat_map(|shot| {
                shot.outer_iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Physical gradient waveform derived from a trajectory.
///
/// `g` holds per-step gradient amplitudes in mT/m, shape
/// [n_shots][n_samples-1][2]; `slew` holds per-step slew rates in T/m/s,
/// shape [n_shots][n_samples-2][2].
#[derive(Debug, Clone)]
pub struct GradientWaveform {
    pub g: Array3<f64>,
    pub slew: Array3<f64>,
}

/// First and second finite differences of the trajectory, scaled to
/// physical units: G = Δk·K_max / (γ·Δt).
pub fn trajectory_to_waveform(t: &Trajectory) -> GradientWaveform {
    let hw = &t.spec.hardware;
    let k_max = hw.k_max();
    let gamma_hz = hw.gamma * 1e6;
    let dt_s = hw.raster_dt * 1e-6;
    // normalized step -> T/m, then mT/m
    let to_mt_per_m = k_max / (gamma_hz * dt_s) * 1e3;

    let (nc, ns, _) = t.points.dim();
    let mut g = Array3::zeros((nc, ns - 1, 2));
    for i in 0..nc {
        for m in 0..ns - 1 {
            for a in 0..2 {
                g[[i, m, a]] = (t.points[[i, m + 1, a]] - t.points[[i, m, a]]) * to_mt_per_m;
            }
        }
    }
    let mut slew = Array3::zeros((nc, ns - 2, 2));
    for i in 0..nc {
        for m in 0..ns - 2 {
            for a in 0..2 {
                slew[[i, m, a]] = (g[[i, m + 1, a]] - g[[i, m, a]]) * 1e-3 / dt_s;
            }
        }
    }
    GradientWaveform { g, slew }
}

/// Integrate a waveform back to a normalized trajectory, given each shot's
/// starting point. Inverse of [`trajectory_to_waveform`].
pub fn waveform_to_trajectory(
    w: &GradientWaveform,
    starts: &[[f64; 2]],
    spec: &TrajectorySpec,
) -> Result<Trajectory> {
    let (nc, nsm1, _) = w.g.dim();
    if nc != spec.n_shots || nsm1 + 1 != spec.n_samples || starts.len() != nc {
        return Err(Error::ShapeMismatch("waveform shape does not match spec".into()));
    }
    let hw = &spec.hardware;
    let step_per_mt = hw.gamma * 1e6 * 1e-3 * (hw.raster_dt * 1e-6) / hw.k_max();
    let mut points = Array3::zeros((nc, spec.n_samples, 2));
    for i in 0..nc {
        points[[i, 0, 0]] = starts[i][0];
        points[[i, 0, 1]] = starts[i][1];
        for m in 0..nsm1 {
            for a in 0..2 {
                points[[i, m + 1, a]] = points[[i, m, a]] + w.g[[i, m, a]] * step_per_mt;
            }
        }
    }
    Trajectory::new(points, spec.clone())
}

/// A discretized target sampling density: nonnegative N×N grid summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    values: Array2<f64>,
}

impl DensityGrid {
    /// Wrap an already-normalized grid, validating invariants.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "density grid must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let mut sum = 0.0;
        for &v in values.iter() {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("density grid entry {v} is negative or NaN")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "density grid sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(DensityGrid { values })
    }

    /// Normalize nonnegative weights to sum 1 and wrap.
    pub fn from_unnormalized(mut weights: Array2<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for &v in weights.iter() {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("density weight {v} is negative or NaN")));
            }
            sum += v;
        }
        if !(sum > 0.0) {
            return Err(Error::DegenerateGeometry("density weights sum to zero".into()));
        }
        weights.mapv_inplace(|v| v / sum);
        // One more pass: make the normalization exact within f64 summation.
        let s2: f64 = weights.iter().sum();
        weights.mapv_inplace(|v| v / s2);
        Ok(DensityGrid { values: weights })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Shannon entropy −Σ p ln p (nats), skipping zero cells.
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Coordinate of the center of cell (row, col) in Ω = [-1,1]².
    /// Row index maps to the y axis, column to x.
    pub fn cell_center(n: usize, row: usize, col: usize) -> [f64; 2] {
        let h = 2.0 / n as f64;
        [-1.0 + (col as f64 + 0.5) * h, -1.0 + (row as f64 + 0.5) * h]
    }
}
