//! Image-quality scoring (masked SSIM and PSNR) and the binned
//! total-variation distance between a sample point set and a target
//! density.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::DensityGrid;

/// SSIM constants (standard published defaults).
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub ssim: f64,
    pub psnr: f64,
    /// Fraction of pixels inside the scored mask.
    pub mask_coverage: f64,
}

fn check_pair(x: &Array2<f64>, y: &Array2<f64>, mask: &Array2<bool>) -> Result<usize> {
    if x.dim() != y.dim() || x.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "image/mask shapes differ: {:?} vs {:?} vs {:?}",
            x.dim(),
            y.dim(),
            mask.dim()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptySelection("mask selects no pixels".into()));
    }
    Ok(count)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as isize - half;
        *v = (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Separable windowed mean with per-pixel renormalization at image borders
/// (the clipped window is an axis-aligned rectangle, so the normalizer
/// factors into a row term times a column term).
struct WindowedMean {
    taps: [f64; SSIM_WINDOW],
    axis_norm: Vec<f64>,
}

impl WindowedMean {
    fn new(n: usize) -> Self {
        let taps = gaussian_taps();
        let half = (SSIM_WINDOW / 2) as isize;
        let axis_norm = (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (t, &w) in taps.iter().enumerate() {
                    let j = i as isize + t as isize - half;
                    if j >= 0 && (j as usize) < n {
                        s += w;
                    }
                }
                s
            })
            .collect();
        WindowedMean { taps, axis_norm }
    }

    fn apply(&self, f: &Array2<f64>) -> Array2<f64> {
        let (rows, cols) = f.dim();
        let half = (SSIM_WINDOW / 2) as isize;
        let mut tmp = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let mut s = 0.0;
                for (t, &w) in self.taps.iter().enumerate() {
                    let j = c as isize + t as isize - half;
                    if j >= 0 && (j as usize) < cols {
                        s += w * f[[r, j as usize]];
                    }
                }
                tmp[[r, c]] = s;
            }
        }
        let mut out = Array2::zeros((rows, cols));
        for c in 0..cols {
            for r in 0..rows {
                let mut s = 0.0;
                for (t, &w) in self.taps.iter().enumerate() {
                    let j = r as isize + t as isize - half;
                    if j >= 0 && (j as usize) < rows {
                        s += w * tmp[[j as usize, c]];
                    }
                }
                out[[r, c]] = s / (self.axis_norm[r] * self.axis_norm[c]);
            }
        }
        out
    }
}

/// Mean local SSIM over windows whose centers lie in the mask.
///
/// The dynamic range is taken as the larger in-mask maximum of the two
/// images, which keeps the score symmetric and invariant to rescaling
/// both images by the same positive constant.
pub fn ssim(x: &Array2<f64>, y: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    check_pair(x, y, mask)?;
    let lx = masked_max(x, mask);
    let ly = masked_max(y, mask);
    let l = lx.max(ly);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);

    let wm = WindowedMean::new(x.nrows());
    let mu_x = wm.apply(x);
    let mu_y = wm.apply(y);
    let xx = wm.apply(&(x * x));
    let yy = wm.apply(&(y * y));
    let xy = wm.apply(&(x * y));

    let mut acc = 0.0;
    let mut count = 0usize;
    for ((r, c), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let mx = mu_x[[r, c]];
        let my = mu_y[[r, c]];
        let vx = xx[[r, c]] - mx * mx;
        let vy = yy[[r, c]] - my * my;
        let cov = xy[[r, c]] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        acc += s;
        count += 1;
    }
    Ok(acc / count as f64)
}

fn masked_max(x: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    x.iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Masked PSNR in dB: 10·log10(L² / MSE) with L the in-mask maximum of the
/// reference `x`. Returns +∞ when the images agree exactly on the mask.
pub fn psnr(x: &Array2<f64>, y: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let count = check_pair(x, y, mask)?;
    let l = masked_max(x, mask);
    let mut mse = 0.0;
    for ((r, c), &m) in mask.indexed_iter() {
        if m {
            let d = x[[r, c]] - y[[r, c]];
            mse += d * d;
        }
    }
    mse /= count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (l * l / mse).log10())
}

pub fn quality_report(x: &Array2<f64>, y: &Array2<f64>, mask: &Array2<bool>) -> Result<QualityReport> {
    let count = check_pair(x, y, mask)?;
    Ok(QualityReport {
        ssim: ssim(x, y, mask)?,
        psnr: psnr(x, y, mask)?,
        mask_coverage: count as f64 / (x.nrows() * x.ncols()) as f64,
    })
}

/// Object mask from a reference magnitude image: threshold at 10% of the
/// 99th percentile, then morphological closing with radius 2.
pub fn auto_mask(reference: &Array2<f64>) -> Array2<bool> {
    let mut sorted: Vec<f64> = reference.iter().cloned().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() as f64) * 0.99).floor() as usize;
    let p99 = sorted[idx.min(sorted.len() - 1)];
    let thr = 0.10 * p99;
    let raw = reference.mapv(|v| v > thr);
    erode(&dilate(&raw, 2), 2)
}

fn disk_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if dr * dr + dc * dc <= radius * radius {
                out.push((dr, dc));
            }
        }
    }
    out
}

fn dilate(mask: &Array2<bool>, radius: i64) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    let offs = disk_offsets(radius);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        offs.iter().any(|&(dr, dc)| {
            let rr = r as i64 + dr;
            let cc = c as i64 + dc;
            rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols
                && mask[[rr as usize, cc as usize]]
        })
    })
}

fn erode(mask: &Array2<bool>, radius: i64) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    let offs = disk_offsets(radius);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        offs.iter().all(|&(dr, dc)| {
            let rr = r as i64 + dr;
            let cc = c as i64 + dc;
            rr < 0 || cc < 0 || (rr as usize) >= rows || (cc as usize) >= cols
                || mask[[rr as usize, cc as usize]]
        })
    })
}

/// Binned total-variation distance between a point set and a density:
/// ½ Σ |hist(points) − downsample(ρ)| with both normalized to 1.
/// `bins` must divide the density grid side evenly.
pub fn density_tv_distance(points: &[[f64; 2]], rho: &DensityGrid, bins: usize) -> Result<f64> {
    let n = rho.n();
    if bins == 0 || n % bins != 0 {
        return Err(Error::Config(format!("bins {bins} must divide grid side {n}")));
    }
    if points.is_empty() {
        return Err(Error::EmptySelection("no points to histogram".into()));
    }
    let factor = n / bins;
    // sum-pool the density
    let mut target = Array2::<f64>::zeros((bins, bins));
    for ((r, c), &v) in rho.values().indexed_iter() {
        target[[r / factor, c / factor]] += v;
    }
    // histogram points; coordinates exactly at +1 fall into the last bin
    let mut hist = Array2::<f64>::zeros((bins, bins));
    let scale = bins as f64 / 2.0;
    for p in points {
        let c = (((p[0] + 1.0) * scale) as usize).min(bins - 1);
        let r = (((p[1] + 1.0) * scale) as usize).min(bins - 1);
        hist[[r, c]] += 1.0;
    }
    let total = points.len() as f64;
    let mut tv = 0.0;
    for (h, t) in hist.iter().zip(target.iter()) {
        tv += (h / total - t).abs();
    }
    Ok(0.5 * tv)
}
