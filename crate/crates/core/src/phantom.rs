//! Analytic test images: the Shepp–Logan ellipse phantom, randomized
//! ellipse phantoms for study slices, and smooth synthetic coil
//! sensitivity maps. Everything here is deterministic given its inputs so
//! studies can run without external data.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (intensity, a, b, x0, y0, phi_degrees)
type Ellipse = (f64, f64, f64, f64, f64, f64);

/// Modified (high-contrast) Shepp–Logan ellipse set.
const SHEPP_LOGAN: [Ellipse; 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

fn render_ellipses(n: usize, ellipses: &[Ellipse]) -> Array2<f64> {
    let mut img = Array2::<f64>::zeros((n, n));
    let h = 2.0 / n as f64;
    for (val, a, b, x0, y0, phi_deg) in ellipses.iter().copied() {
        let phi = phi_deg.to_radians();
        let (sp, cp) = phi.sin_cos();
        for r in 0..n {
            let y = -1.0 + (r as f64 + 0.5) * h;
            for c in 0..n {
                let x = -1.0 + (c as f64 + 0.5) * h;
                let dx = x - x0;
                let dy = y - y0;
                let u = dx * cp + dy * sp;
                let v = -dx * sp + dy * cp;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    img[[r, c]] += val;
                }
            }
        }
    }
    img.mapv_inplace(|v| v.max(0.0));
    img
}

/// Shepp–Logan phantom sampled at cell centers of [-1,1]², values in [0,1].
pub fn shepp_logan(n: usize) -> Array2<f64> {
    render_ellipses(n, &SHEPP_LOGAN)
}

/// A randomized head-like ellipse phantom: an outer skull ellipse plus a
/// handful of interior structures. Deterministic given the seed.
pub fn random_phantom(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ellipses: Vec<Ellipse> = Vec::new();
    let outer_a = rng.random_range(0.60..0.75);
    let outer_b = rng.random_range(0.75..0.92);
    let tilt = rng.random_range(-10.0..10.0);
    ellipses.push((1.0, outer_a, outer_b, 0.0, 0.0, tilt));
    ellipses.push((-0.6, outer_a * 0.94, outer_b * 0.94, 0.0, -0.01, tilt));
    let k = rng.random_range(4..9);
    for _ in 0..k {
        let a = rng.random_range(0.03..0.30);
        let b = rng.random_range(0.03..0.30);
        let x0 = rng.random_range(-0.4..0.4);
        let y0 = rng.random_range(-0.5..0.5);
        let phi = rng.random_range(-90.0..90.0);
        let val = rng.random_range(-0.25..0.45);
        ellipses.push((val, a, b, x0, y0, phi));
    }
    let mut img = render_ellipses(n, &ellipses);
    let max = img.iter().cloned().fold(0.0_f64, f64::max);
    if max > 0.0 {
        img.mapv_inplace(|v| v / max);
    }
    img
}

/// Smooth complex coil sensitivities: Gaussian magnitude profiles centered
/// on a ring outside the FOV, with a mild linear phase per coil.
pub fn coil_maps(n: usize, n_coils: usize) -> Vec<Array2<Complex64>> {
    let h = 2.0 / n as f64;
    let sigma = 0.9_f64;
    (0..n_coils)
        .map(|l| {
            let theta = 2.0 * std::f64::consts::PI * l as f64 / n_coils as f64;
            let cx = 1.3 * theta.cos();
            let cy = 1.3 * theta.sin();
            // small per-coil linear phase
            let px = 0.6 * theta.cos();
            let py = 0.6 * theta.sin();
            Array2::from_shape_fn((n, n), |(r, c)| {
                let y = -1.0 + (r as f64 + 0.5) * h;
                let x = -1.0 + (c as f64 + 0.5) * h;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                let ph = px * x + py * y;
                Complex64::from_polar(mag, ph)
            })
        })
        .collect()
}
