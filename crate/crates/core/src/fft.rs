//! Small 2D FFT helpers on top of rustfft. Transforms are unnormalized:
//! forward uses e^{-2πi/N}, inverse uses e^{+2πi/N} without the 1/N factor.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

pub fn fft2_inplace(data: &mut Array2<Complex64>, inverse: bool) {
    let (rows, cols) = data.dim();
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(cols)
    } else {
        planner.plan_fft_forward(cols)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(rows)
    } else {
        planner.plan_fft_forward(rows)
    };

    let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for mut row in data.rows_mut() {
        let slice = row.as_slice_mut().expect("row-major layout");
        row_fft.process_with_scratch(slice, &mut scratch);
    }

    let mut col_buf = vec![Complex64::new(0.0, 0.0); rows];
    let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for c in 0..cols {
        for r in 0..rows {
            col_buf[r] = data[[r, c]];
        }
        col_fft.process_with_scratch(&mut col_buf, &mut scratch);
        for r in 0..rows {
            data[[r, c]] = col_buf[r];
        }
    }
}

/// Swap quadrants so the DC bin moves from index 0 to index n/2 (even n).
pub fn fftshift2(data: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = data.dim();
    let mut out = Array2::from_elem((rows, cols), Complex64::new(0.0, 0.0));
    for r in 0..rows {
        for c in 0..cols {
            out[[(r + rows / 2) % rows, (c + cols / 2) % cols]] = data[[r, c]];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft2_matches_naive_dft() {
        let n = 8;
        let mut data = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        let mut s = 0.37_f64;
        for v in data.iter_mut() {
            s = (s * 131.0 + 0.17).fract();
            *v = Complex64::new(s, 1.0 - s);
        }
        let orig = data.clone();
        fft2_inplace(&mut data, false);
        for p in 0..n {
            for q in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let ph = -2.0 * std::f64::consts::PI
                            * ((p * r) as f64 + (q * c) as f64)
                            / n as f64;
                        acc += orig[[r, c]] * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                assert!((acc - data[[p, q]]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_scales_by_count() {
        let n = 16;
        let mut data = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        let mut s = 0.5_f64;
        for v in data.iter_mut() {
            s = (s * 53.0 + 0.29).fract();
            *v = Complex64::new(s, -s);
        }
        let orig = data.clone();
        fft2_inplace(&mut data, false);
        fft2_inplace(&mut data, true);
        let scale = (n * n) as f64;
        for (a, b) in orig.iter().zip(data.iter()) {
            assert!((a * scale - b).norm() < 1e-9);
        }
    }
}
