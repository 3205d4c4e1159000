//! Non-uniform Fourier operators between an n×n image and samples at
//! arbitrary normalized k-space locations, plus Pipe-style density
//! compensation weights.
//!
//! Coordinate convention: a normalized location component k ∈ [-1,1] maps
//! to frequency index k·(n/2); pixels are indexed symmetrically around the
//! image center (rows ↔ y, columns ↔ x). The forward operator is
//!
//! ```text
//! s(k) = Σ_{r,c} x[r,c] · exp(-iπ (k_x·(c - n/2) + k_y·(r - n/2)))
//! ```
//!
//! so samples at exact grid frequencies reproduce the centered DFT.
//! `Exact` mode evaluates these sums directly (O(P·n²), the reference
//! path); `Gridded` mode runs Kaiser–Bessel gridding on an oversampled
//! FFT grid, built as an exact numerical transpose pair so the adjoint
//! identity holds to machine precision regardless of kernel quality.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::fft2_inplace;

/// Operator evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NufftMode {
    /// Direct non-uniform DFT sums. Reference implementation.
    Exact,
    /// Kaiser–Bessel gridding. `width` counts original-grid cells covered
    /// by the kernel; `osf` is the oversampled-grid factor.
    Gridded { width: usize, osf: usize },
}

impl NufftMode {
    pub fn gridded_default() -> Self {
        NufftMode::Gridded { width: 4, osf: 2 }
    }
}

/// Per-sample density compensation weights.
#[derive(Debug, Clone)]
pub struct DcWeights {
    pub w: Vec<f64>,
}

impl DcWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        for &v in &w {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("density weight {v} must be finite and >= 0")));
            }
        }
        Ok(DcWeights { w })
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

struct Kernel {
    /// Half-width in fine-grid units.
    half_width: f64,
    beta: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(width: usize, osf: usize) -> Self {
        let taps = (width * osf) as f64;
        let sigma = osf as f64;
        // Beatty et al. choice for minimal aliasing amplitude
        let beta = std::f64::consts::PI
            * ((taps / sigma).powi(2) * (sigma - 0.5).powi(2) - 0.8).sqrt();
        Kernel { half_width: taps / 2.0, beta, i0_beta: bessel_i0(beta) }
    }

    fn eval(&self, t: f64) -> f64 {
        let u = t / self.half_width;
        let arg = 1.0 - u * u;
        if arg <= 0.0 {
            return 0.0;
        }
        bessel_i0(self.beta * arg.sqrt()) / self.i0_beta
    }

    /// Continuous Fourier transform at angular frequency `nu`
    /// (radians per fine-grid unit).
    fn spectrum(&self, nu: f64) -> f64 {
        let t = self.half_width;
        let d = self.beta * self.beta - (t * nu) * (t * nu);
        let s = if d > 0.0 {
            let r = d.sqrt();
            r.sinh() / r
        } else if d < 0.0 {
            let r = (-d).sqrt();
            r.sin() / r
        } else {
            1.0
        };
        2.0 * t * s / self.i0_beta
    }
}

struct GriddedTables {
    taps: usize,
    /// Fine-grid side m = osf·n.
    m: usize,
    /// Per-axis, per-sample first tap index (can be negative; wrap mod m).
    base: Vec<[i64; 2]>,
    /// Per-sample kernel weights, `taps` per axis: [x taps..., y taps...].
    weights: Vec<f64>,
    /// Separable deapodization factors per centered pixel index.
    deapod: Vec<f64>,
}

/// Precomputed transform geometry for a fixed set of sample locations.
pub struct NonUniformPlan {
    locations: Vec<[f64; 2]>,
    n: usize,
    mode: NufftMode,
    gridded: Option<GriddedTables>,
}

impl NonUniformPlan {
    pub fn new(locations: Vec<[f64; 2]>, n: usize, mode: NufftMode) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::Config("plan needs at least one sample location".into()));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::Config(format!("image side must be even and >= 2, got {n}")));
        }
        for p in &locations {
            if !(p[0].is_finite() && p[1].is_finite()) || p[0].abs() > 1.0 || p[1].abs() > 1.0 {
                return Err(Error::Config(format!(
                    "sample location ({}, {}) outside normalized k-space",
                    p[0], p[1]
                )));
            }
        }
        let gridded = match mode {
            NufftMode::Exact => None,
            NufftMode::Gridded { width, osf } => {
                if width < 2 || osf < 2 {
                    return Err(Error::Config(
                        "gridded mode needs kernel width >= 2 and oversampling >= 2".into(),
                    ));
                }
                Some(Self::build_tables(&locations, n, width, osf))
            }
        };
        Ok(NonUniformPlan { locations, n, mode, gridded })
    }

    fn build_tables(locations: &[[f64; 2]], n: usize, width: usize, osf: usize) -> GriddedTables {
        let kernel = Kernel::new(width, osf);
        let m = osf * n;
        let taps = width * osf;
        let t = kernel.half_width;
        let mut base = Vec::with_capacity(locations.len());
        let mut weights = Vec::with_capacity(locations.len() * 2 * taps);
        for p in locations {
            let mut b = [0i64; 2];
            for (axis, &k) in p.iter().enumerate() {
                let pos = k * m as f64 / 2.0; // fractional fine-grid frequency
                let first = (pos - t).floor() as i64 + 1;
                b[axis] = first;
                for j in 0..taps {
                    weights.push(kernel.eval((first + j as i64) as f64 - pos));
                }
            }
            base.push(b);
        }
        let deapod = (0..n)
            .map(|i| {
                let u = i as f64 - n as f64 / 2.0;
                let nu = 2.0 * std::f64::consts::PI * u / m as f64;
                1.0 / kernel.spectrum(nu)
            })
            .collect();
        GriddedTables { taps, m, base, weights, deapod }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> NufftMode {
        self.mode
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }

    /// Image → samples.
    pub fn forward(&self, image: &Array2<Complex64>) -> Result<Vec<Complex64>> {
        if image.dim() != (self.n, self.n) {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} does not match plan side {}",
                image.dim(),
                self.n
            )));
        }
        match self.mode {
            NufftMode::Exact => Ok(self.forward_exact(image)),
            NufftMode::Gridded { .. } => Ok(self.forward_gridded(image)),
        }
    }

    /// Samples → image: exact conjugate transpose of [`Self::forward`].
    /// Optional weights multiply the samples before the adjoint.
    pub fn adjoint(
        &self,
        samples: &[Complex64],
        weights: Option<&DcWeights>,
    ) -> Result<Array2<Complex64>> {
        if samples.len() != self.locations.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a plan of {} locations",
                samples.len(),
                self.locations.len()
            )));
        }
        if let Some(w) = weights {
            if w.w.len() != samples.len() {
                return Err(Error::ShapeMismatch("weights length mismatch".into()));
            }
        }
        let weighted: Vec<Complex64> = match weights {
            Some(w) => samples.iter().zip(w.w.iter()).map(|(s, &w)| s * w).collect(),
            None => samples.to_vec(),
        };
        match self.mode {
            NufftMode::Exact => Ok(self.adjoint_exact(&weighted)),
            NufftMode::Gridded { .. } => Ok(self.adjoint_gridded(&weighted)),
        }
    }

    fn forward_exact(&self, image: &Array2<Complex64>) -> Vec<Complex64> {
        let n = self.n;
        let half = n as f64 / 2.0;
        self.locations
            .par_iter()
            .map(|&[kx, ky]| {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    let v = r as f64 - half;
                    let py = -std::f64::consts::PI * ky * v;
                    let ey = Complex64::new(py.cos(), py.sin());
                    // phase recurrence along the row
                    let px0 = -std::f64::consts::PI * kx * (-half);
                    let step = -std::f64::consts::PI * kx;
                    let mut ex = Complex64::new(px0.cos(), px0.sin());
                    let estep = Complex64::new(step.cos(), step.sin());
                    let mut row_acc = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        row_acc += image[[r, c]] * ex;
                        ex *= estep;
                    }
                    acc += row_acc * ey;
                }
                acc
            })
            .collect()
    }

    fn adjoint_exact(&self, samples: &[Complex64]) -> Array2<Complex64> {
        let n = self.n;
        let half = n as f64 / 2.0;
        let rows: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let v = r as f64 - half;
                let mut row = vec![Complex64::new(0.0, 0.0); n];
                for (q, &[kx, ky]) in self.locations.iter().enumerate() {
                    let py = std::f64::consts::PI * ky * v;
                    let sy = samples[q] * Complex64::new(py.cos(), py.sin());
                    let px0 = std::f64::consts::PI * kx * (-half);
                    let step = std::f64::consts::PI * kx;
                    let mut ex = Complex64::new(px0.cos(), px0.sin());
                    let estep = Complex64::new(step.cos(), step.sin());
                    for item in row.iter_mut() {
                        *item += sy * ex;
                        ex *= estep;
                    }
                }
                row
            })
            .collect();
        let mut out = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        for (r, row) in rows.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                out[[r, c]] = v;
            }
        }
        out
    }

    fn forward_gridded(&self, image: &Array2<Complex64>) -> Vec<Complex64> {
        let tab = self.gridded.as_ref().unwrap();
        let n = self.n;
        let m = tab.m;
        // deapodize and embed centered pixels into the fine grid
        let mut fine = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
        for r in 0..n {
            let v = r as i64 - (n / 2) as i64;
            let rr = v.rem_euclid(m as i64) as usize;
            for c in 0..n {
                let u = c as i64 - (n / 2) as i64;
                let cc = u.rem_euclid(m as i64) as usize;
                fine[[rr, cc]] = image[[r, c]] * (tab.deapod[r] * tab.deapod[c]);
            }
        }
        fft2_inplace(&mut fine, false);
        let taps = tab.taps;
        (0..self.locations.len())
            .into_par_iter()
            .map(|q| {
                let bx = tab.base[q][0];
                let by = tab.base[q][1];
                let wx = &tab.weights[q * 2 * taps..q * 2 * taps + taps];
                let wy = &tab.weights[q * 2 * taps + taps..(q + 1) * 2 * taps];
                let mut acc = Complex64::new(0.0, 0.0);
                for (jy, &wyv) in wy.iter().enumerate() {
                    let row = (by + jy as i64).rem_euclid(m as i64) as usize;
                    let mut row_acc = Complex64::new(0.0, 0.0);
                    for (jx, &wxv) in wx.iter().enumerate() {
                        let col = (bx + jx as i64).rem_euclid(m as i64) as usize;
                        row_acc += fine[[row, col]] * wxv;
                    }
                    acc += row_acc * wyv;
                }
                acc
            })
            .collect()
    }

    fn adjoint_gridded(&self, samples: &[Complex64]) -> Array2<Complex64> {
        let tab = self.gridded.as_ref().unwrap();
        let n = self.n;
        let m = tab.m;
        let taps = tab.taps;
        let mut fine = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
        for (q, &s) in samples.iter().enumerate() {
            let bx = tab.base[q][0];
            let by = tab.base[q][1];
            let wx = &tab.weights[q * 2 * taps..q * 2 * taps + taps];
            let wy = &tab.weights[q * 2 * taps + taps..(q + 1) * 2 * taps];
            for (jy, &wyv) in wy.iter().enumerate() {
                let row = (by + jy as i64).rem_euclid(m as i64) as usize;
                let sy = s * wyv;
                for (jx, &wxv) in wx.iter().enumerate() {
                    let col = (bx + jx as i64).rem_euclid(m as i64) as usize;
                    fine[[row, col]] += sy * wxv;
                }
            }
        }
        fft2_inplace(&mut fine, true); // unnormalized inverse = transpose of forward FFT
        let mut out = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        for r in 0..n {
            let v = r as i64 - (n / 2) as i64;
            let rr = v.rem_euclid(m as i64) as usize;
            for c in 0..n {
                let u = c as i64 - (n / 2) as i64;
                let cc = u.rem_euclid(m as i64) as usize;
                out[[r, c]] = fine[[rr, cc]] * (tab.deapod[r] * tab.deapod[c]);
            }
        }
        out
    }
}

/// Pipe–Menon density compensation: iterate w ← w / (G w) where G
/// spreads the weights onto the oversampled grid with the gridding kernel
/// and interpolates back at each sample.
pub fn pipe_weights(plan: &NonUniformPlan, n_iter: usize) -> Result<DcWeights> {
    if n_iter < 1 {
        return Err(Error::Config("pipe_weights needs n_iter >= 1".into()));
    }
    let tables;
    let tab = match &plan.gridded {
        Some(t) => t,
        None => {
            // exact-mode plans still use the default gridding kernel here
            tables = NonUniformPlan::build_tables(&plan.locations, plan.n, 4, 2);
            &tables
        }
    };
    let p = plan.locations.len();
    let mut w = vec![1.0_f64; p];
    for _ in 0..n_iter {
        let gw = apply_kernel_normal(tab, &w);
        let max = gw.iter().cloned().fold(0.0_f64, f64::max);
        if !(max > 0.0) {
            return Err(Error::DegenerateGeometry(
                "kernel-smoothed sample density is identically zero".into(),
            ));
        }
        let eps = 1e-12 * max;
        for (wi, &gi) in w.iter_mut().zip(gw.iter()) {
            *wi /= gi.max(eps);
        }
    }
    DcWeights::new(w)
}

/// Residual ‖G w − 1‖∞ of a Pipe iterate; exposed for convergence checks.
pub fn pipe_residual(plan: &NonUniformPlan, w: &DcWeights) -> Result<f64> {
    let tables;
    let tab = match &plan.gridded {
        Some(t) => t,
        None => {
            tables = NonUniformPlan::build_tables(&plan.locations, plan.n, 4, 2);
            &tables
        }
    };
    let gw = apply_kernel_normal(tab, &w.w);
    Ok(gw.iter().map(|&g| (g - 1.0).abs()).fold(0.0_f64, f64::max))
}

fn apply_kernel_normal(tab: &GriddedTables, w: &[f64]) -> Vec<f64> {
    let m = tab.m;
    let taps = tab.taps;
    let mut grid = vec![0.0_f64; m * m];
    for (q, &wq) in w.iter().enumerate() {
        let bx = tab.base[q][0];
        let by = tab.base[q][1];
        let wx = &tab.weights[q * 2 * taps..q * 2 * taps + taps];
        let wy = &tab.weights[q * 2 * taps + taps..(q + 1) * 2 * taps];
        for (jy, &wyv) in wy.iter().enumerate() {
            let row = (by + jy as i64).rem_euclid(m as i64) as usize;
            let sy = wq * wyv;
            for (jx, &wxv) in wx.iter().enumerate() {
                let col = (bx + jx as i64).rem_euclid(m as i64) as usize;
                grid[row * m + col] += sy * wxv;
            }
        }
    }
    (0..w.len())
        .into_par_iter()
        .map(|q| {
            let bx = tab.base[q][0];
            let by = tab.base[q][1];
            let wx = &tab.weights[q * 2 * taps..q * 2 * taps + taps];
            let wy = &tab.weights[q * 2 * taps + taps..(q + 1) * 2 * taps];
            let mut acc = 0.0;
            for (jy, &wyv) in wy.iter().enumerate() {
                let row = (by + jy as i64).rem_euclid(m as i64) as usize;
                let mut row_acc = 0.0;
                for (jx, &wxv) in wx.iter().enumerate() {
                    let col = (bx + jx as i64).rem_euclid(m as i64) as usize;
                    row_acc += grid[row * m + col] * wxv;
                }
                acc += row_acc * wyv;
            }
            acc
        })
        .collect()
}
