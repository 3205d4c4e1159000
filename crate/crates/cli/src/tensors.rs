//! Shared helpers for moving arrays between tensor files and ndarray.

use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use sparkling2d_core::error::{Error, Result};
use sparkling2d_core::io::{self, Tensor, TensorData};
use sparkling2d_core::types::{DensityGrid, Trajectory, TrajectorySpec};

/// Read a magnitude image: accepts f64 [n][n] or c128 [n][n] (magnitude).
pub fn read_image_magnitude(path: &Path) -> Result<Array2<f64>> {
    let t = io::read_tensor(path)?;
    let (rows, cols) = square_shape(&t.shape, path)?;
    let values = match t.data {
        TensorData::F64(v) => v,
        TensorData::C128(v) => v.iter().map(|c| c.norm()).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: expected f64 or c128 image, found {:?}",
                path.display(),
                other.dtype()
            )))
        }
    };
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Read a complex image: accepts c128 [n][n] or f64 [n][n] (zero phase).
pub fn read_image_complex(path: &Path) -> Result<Array2<Complex64>> {
    let t = io::read_tensor(path)?;
    let (rows, cols) = square_shape(&t.shape, path)?;
    let values: Vec<Complex64> = match t.data {
        TensorData::F64(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        TensorData::C128(v) => v,
        other => {
            return Err(Error::Format(format!(
                "{}: expected f64 or c128 image, found {:?}",
                path.display(),
                other.dtype()
            )))
        }
    };
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn square_shape(shape: &[usize], path: &Path) -> Result<(usize, usize)> {
    match shape {
        [r, c] if r == c => Ok((*r, *c)),
        other => Err(Error::ShapeMismatch(format!(
            "{}: expected a square [n][n] tensor, got {other:?}",
            path.display()
        ))),
    }
}

pub fn read_density(path: &Path) -> Result<DensityGrid> {
    let img = read_image_magnitude(path)?;
    DensityGrid::new(img)
}

pub fn write_density(path: &Path, d: &DensityGrid) -> Result<()> {
    let n = d.n();
    let flat: Vec<f64> = d.values().iter().cloned().collect();
    io::write_f64(path, &flat, &[n, n])
}

/// Trajectory file: f64 [Nc][Ns][2].
pub fn read_trajectory(path: &Path, spec: &TrajectorySpec) -> Result<Trajectory> {
    let (values, shape) = io::read_f64(path)?;
    match shape.as_slice() {
        [nc, ns, 2] => {
            if *nc != spec.n_shots || *ns != spec.n_samples {
                return Err(Error::ShapeMismatch(format!(
                    "{}: trajectory is [{nc}][{ns}][2] but the configuration says [{}][{}][2]",
                    path.display(),
                    spec.n_shots,
                    spec.n_samples
                )));
            }
            let points = Array3::from_shape_vec((*nc, *ns, 2), values)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            Trajectory::new(points, spec.clone())
        }
        other => Err(Error::ShapeMismatch(format!(
            "{}: expected [Nc][Ns][2] trajectory, got {other:?}",
            path.display()
        ))),
    }
}

/// Read trajectory points without a spec (for plotting).
pub fn read_trajectory_points(path: &Path) -> Result<Array3<f64>> {
    let (values, shape) = io::read_f64(path)?;
    match shape.as_slice() {
        [nc, ns, 2] => Array3::from_shape_vec((*nc, *ns, 2), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string())),
        other => Err(Error::ShapeMismatch(format!(
            "{}: expected [Nc][Ns][2] trajectory, got {other:?}",
            path.display()
        ))),
    }
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let (nc, ns, _) = t.points.dim();
    let flat: Vec<f64> = t.points.iter().cloned().collect();
    io::write_f64(path, &flat, &[nc, ns, 2])
}

/// k-space data: c128 [L][P].
pub fn write_kspace(path: &Path, coils: &[Vec<Complex64>]) -> Result<()> {
    let l = coils.len();
    let p = coils.first().map(|c| c.len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(l * p);
    for coil in coils {
        flat.extend_from_slice(coil);
    }
    io::write_tensor(path, &Tensor::new(TensorData::C128(flat), vec![l, p])?)
}

pub fn read_kspace(path: &Path) -> Result<Vec<Vec<Complex64>>> {
    let t = io::read_tensor(path)?;
    let (l, p) = match t.shape.as_slice() {
        [l, p] => (*l, *p),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected [L][P] k-space, got {other:?}",
                path.display()
            )))
        }
    };
    match t.data {
        TensorData::C128(v) => Ok((0..l).map(|i| v[i * p..(i + 1) * p].to_vec()).collect()),
        other => Err(Error::Format(format!(
            "{}: expected c128 k-space, found {:?}",
            path.display(),
            other.dtype()
        ))),
    }
}

pub fn write_complex_image(path: &Path, img: &ndarray::Array2<Complex64>) -> Result<()> {
    let (r, c) = img.dim();
    let flat: Vec<Complex64> = img.iter().cloned().collect();
    io::write_tensor(path, &Tensor::new(TensorData::C128(flat), vec![r, c])?)
}

pub fn write_real_image(path: &Path, img: &Array2<f64>) -> Result<()> {
    let (r, c) = img.dim();
    let flat: Vec<f64> = img.iter().cloned().collect();
    io::write_f64(path, &flat, &[r, c])
}
