//! Target sampling density constructors: the parametric radial
//! variable-density law, spectrum and log-spectrum dataset averages, and a
//! learned probability map under a sparsity budget ("LOUPE-lite").
//!
//! The learner keeps the published LOUPE structure — latent weights pushed
//! through a sigmoid with sample slope s, renormalized each step so the
//! mean probability meets the budget γ exactly — but replaces the deep
//! reconstruction network with the zero-filled inverse DFT of the
//! probability-weighted spectrum. That makes the training loss quadratic
//! in the probability map, with a closed-form gradient that backpropagates
//! analytically through the renormalization and the sigmoid.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, fftshift2};
use crate::types::DensityGrid;

/// Radial variable-density parameters: flat inside the cutoff radius,
/// power-law decay outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdsParams {
    /// Fraction of the k-space radius kept flat, in (0, 1].
    pub cutoff: f64,
    /// Decay exponent ≥ 0.
    pub decay: f64,
}

impl VdsParams {
    pub fn new(cutoff: f64, decay: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::Config(format!("cutoff must be in (0, 1], got {cutoff}")));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::Config(format!("decay must be >= 0, got {decay}")));
        }
        Ok(VdsParams { cutoff, decay })
    }
}

/// Radially decaying density evaluated at cell centers of Ω = [-1,1]²:
/// weight 1 for ‖x‖ < C, (C/‖x‖)^D beyond (corner cells with ‖x‖ > 1
/// included), then normalized to sum 1.
pub fn vds_density(n: usize, p: VdsParams) -> Result<DensityGrid> {
    if n < 8 {
        return Err(Error::Config(format!("grid side must be >= 8, got {n}")));
    }
    let mut w = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let [x, y] = DensityGrid::cell_center(n, r, c);
            let radius = (x * x + y * y).sqrt();
            w[[r, c]] = if radius < p.cutoff {
                1.0
            } else {
                (p.cutoff / radius).powf(p.decay)
            };
        }
    }
    DensityGrid::from_unnormalized(w)
}

/// Centered magnitude spectrum |DFT| of a real image.
fn magnitude_spectrum(image: &Array2<f64>) -> Array2<f64> {
    let mut buf = image.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut buf, false);
    fftshift2(&buf).mapv(|v| v.norm())
}

fn check_images(images: &[Array2<f64>]) -> Result<usize> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptySelection("no images supplied".into()))?;
    let n = first.nrows();
    if first.ncols() != n {
        return Err(Error::ShapeMismatch("images must be square".into()));
    }
    for img in images {
        if img.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "image shape {:?} differs from first image {:?}",
                img.dim(),
                (n, n)
            )));
        }
    }
    Ok(n)
}

fn normalize_min_subtracted(mut v: Array2<f64>) -> Result<DensityGrid> {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    v.mapv_inplace(|x| x - min);
    DensityGrid::from_unnormalized(v)
}

/// Average magnitude spectrum of the dataset, min-subtracted and
/// normalized to a density.
pub fn spectrum_density(images: &[Array2<f64>]) -> Result<DensityGrid> {
    let n = check_images(images)?;
    let mut acc = Array2::zeros((n, n));
    for img in images {
        acc = acc + magnitude_spectrum(img);
    }
    acc.mapv_inplace(|v| v / images.len() as f64);
    normalize_min_subtracted(acc)
}

/// Like [`spectrum_density`] but averaging log(ε + |DFT|), which flattens
/// the heavy low-frequency peak. ε floors the log at 1e-12 of each
/// image's spectral maximum.
pub fn log_spectrum_density(images: &[Array2<f64>]) -> Result<DensityGrid> {
    let n = check_images(images)?;
    let mut acc = Array2::zeros((n, n));
    for img in images {
        let spec = magnitude_spectrum(img);
        let max = spec.iter().cloned().fold(0.0_f64, f64::max);
        let eps = if max > 0.0 { 1e-12 * max } else { 1.0 };
        acc = acc + spec.mapv(|v| (eps + v).ln());
    }
    acc.mapv_inplace(|v| v / images.len() as f64);
    normalize_min_subtracted(acc)
}

/// LOUPE-lite hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoupeLiteParams {
    /// Fraction of k-space kept, γ = 1/R, in (0, 1).
    pub target_sparsity: f64,
    /// Sigmoid sample slope s.
    pub slope: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl LoupeLiteParams {
    pub fn new(target_sparsity: f64, slope: f64, epochs: usize, step_size: f64, seed: u64) -> Result<Self> {
        if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
            return Err(Error::Config(format!(
                "target_sparsity must be in (0, 1), got {target_sparsity}"
            )));
        }
        if !(slope > 0.0) {
            return Err(Error::Config(format!("slope must be > 0, got {slope}")));
        }
        if epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be > 0, got {step_size}")));
        }
        Ok(LoupeLiteParams { target_sparsity, slope, epochs, step_size, seed })
    }

    /// Paper-style defaults: slope 20, γ from the acceleration factor.
    pub fn for_budget(target_sparsity: f64) -> Result<Self> {
        Self::new(target_sparsity, 20.0, 100, 1.0, 0)
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone)]
pub struct LoupeLiteLog {
    pub losses: Vec<f64>,
    /// max |mean(P) − γ| observed across all epochs.
    pub max_budget_error: f64,
}

/// LOUPE renormalization: scale probabilities down when the mean exceeds
/// the budget, otherwise scale the complement, so mean(P) = γ exactly
/// while P stays in [0, 1].
fn rescale(p_raw: &[f64], gamma: f64, out: &mut [f64]) {
    let mean = p_raw.iter().sum::<f64>() / p_raw.len() as f64;
    if mean >= gamma {
        let c = gamma / mean;
        for (o, &p) in out.iter_mut().zip(p_raw.iter()) {
            *o = c * p;
        }
    } else {
        let d = (1.0 - gamma) / (1.0 - mean);
        for (o, &p) in out.iter_mut().zip(p_raw.iter()) {
            *o = 1.0 - d * (1.0 - p);
        }
    }
}

/// Backpropagate dL/dP through the renormalization to dL/dP_raw.
fn rescale_backward(p_raw: &[f64], grad_p: &[f64], gamma: f64, grad_raw: &mut [f64]) {
    let m = p_raw.len() as f64;
    let mean = p_raw.iter().sum::<f64>() / m;
    if mean >= gamma {
        let c = gamma / mean;
        let dot: f64 = grad_p.iter().zip(p_raw.iter()).map(|(g, p)| g * p).sum();
        let lump = gamma / (mean * mean) / m * dot;
        for (gr, &g) in grad_raw.iter_mut().zip(grad_p.iter()) {
            *gr = c * g - lump;
        }
    } else {
        let d = (1.0 - gamma) / (1.0 - mean);
        let dot: f64 = grad_p.iter().zip(p_raw.iter()).map(|(g, p)| g * (1.0 - p)).sum();
        let lump = (1.0 - gamma) / ((1.0 - mean) * (1.0 - mean)) / m * dot;
        for (gr, &g) in grad_raw.iter_mut().zip(grad_p.iter()) {
            *gr = d * g - lump;
        }
    }
}

/// Internal learner state, exposed for gradient verification.
pub struct LoupeLiteModel {
    /// Centered per-cell spectral energy Σ_j |X_j|².
    energy: Vec<f64>,
    n: usize,
    n_images: usize,
    gamma: f64,
    slope: f64,
    pub w: Vec<f64>,
}

impl LoupeLiteModel {
    pub fn new(images: &[Array2<f64>], p: &LoupeLiteParams) -> Result<Self> {
        let n = check_images(images)?;
        let mut energy = vec![0.0; n * n];
        for img in images {
            for v in img.iter() {
                if !v.is_finite() {
                    return Err(Error::Config("image contains non-finite values".into()));
                }
            }
            let spec = magnitude_spectrum(img);
            for (e, &s) in energy.iter_mut().zip(spec.iter()) {
                *e += s * s;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let w = (0..n * n).map(|_| rng.random_range(-0.5 / p.slope..0.5 / p.slope)).collect();
        Ok(LoupeLiteModel {
            energy,
            n,
            n_images: images.len(),
            gamma: p.target_sparsity,
            slope: p.slope,
            w,
        })
    }

    /// Probability map P = rescale(sigmoid(s·w)).
    pub fn probability(&self) -> Vec<f64> {
        let p_raw: Vec<f64> = self.w.iter().map(|&w| sigmoid(self.slope * w)).collect();
        let mut p = vec![0.0; p_raw.len()];
        rescale(&p_raw, self.gamma, &mut p);
        p
    }

    /// Mean squared reconstruction error of the expected-value relaxation
    /// x̂ = IDFT(P ⊙ DFT(x)). By Parseval this is
    /// Σ_cells (P−1)²·E / (J·n⁴) with E the dataset spectral energy.
    pub fn loss(&self) -> f64 {
        let p = self.probability();
        let scale = 1.0 / (self.n_images as f64 * (self.n as f64).powi(4));
        p.iter()
            .zip(self.energy.iter())
            .map(|(&pv, &e)| (pv - 1.0) * (pv - 1.0) * e)
            .sum::<f64>()
            * scale
    }

    /// Analytic gradient of [`Self::loss`] with respect to the latent w.
    pub fn gradient(&self) -> Vec<f64> {
        let p_raw: Vec<f64> = self.w.iter().map(|&w| sigmoid(self.slope * w)).collect();
        let mut p = vec![0.0; p_raw.len()];
        rescale(&p_raw, self.gamma, &mut p);
        let scale = 2.0 / (self.n_images as f64 * (self.n as f64).powi(4));
        let grad_p: Vec<f64> = p
            .iter()
            .zip(self.energy.iter())
            .map(|(&pv, &e)| scale * (pv - 1.0) * e)
            .collect();
        let mut grad_raw = vec![0.0; p.len()];
        rescale_backward(&p_raw, &grad_p, self.gamma, &mut grad_raw);
        grad_raw
            .iter()
            .zip(p_raw.iter())
            .map(|(&g, &pr)| g * self.slope * pr * (1.0 - pr))
            .collect()
    }

    pub fn budget_error(&self) -> f64 {
        let p = self.probability();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        (mean - self.gamma).abs()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Learn a sampling density by gradient descent on the latent weights.
pub fn loupe_lite_learn(
    images: &[Array2<f64>],
    p: &LoupeLiteParams,
) -> Result<(DensityGrid, LoupeLiteLog)> {
    let mut model = LoupeLiteModel::new(images, p)?;
    let mut losses = Vec::with_capacity(p.epochs + 1);
    let mut max_budget_error = model.budget_error();
    losses.push(model.loss());
    if !losses[0].is_finite() {
        return Err(Error::Diverged { epoch: 0, detail: format!("initial loss {}", losses[0]) });
    }
    for epoch in 1..=p.epochs {
        let grad = model.gradient();
        for (w, g) in model.w.iter_mut().zip(grad.iter()) {
            *w -= p.step_size * g;
        }
        let loss = model.loss();
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("loss {loss}") });
        }
        losses.push(loss);
        max_budget_error = max_budget_error.max(model.budget_error());
    }
    let prob = model.probability();
    let grid = DensityGrid::from_unnormalized(Array2::from_shape_vec(
        (model.n, model.n),
        prob,
    ).expect("probability vector has n² entries"))?;
    Ok((grid, LoupeLiteLog { losses, max_budget_error }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::random_phantom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_images(count: usize, n: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0)))
            .collect()
    }

    #[test]
    fn vds_zero_decay_is_uniform() {
        let d = vds_density(16, VdsParams::new(0.3, 0.0).unwrap()).unwrap();
        let expect = 1.0 / 256.0;
        for &v in d.values().iter() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn vds_full_cutoff_matches_hand_oracle() {
        // independent evaluation on an 8x8 grid: cells with radius <= 1
        // weigh 1, the four corner neighborhoods decay as (1/r)^D
        let n = 8;
        let p = VdsParams::new(1.0, 2.0).unwrap();
        let d = vds_density(n, p).unwrap();
        let h = 2.0 / n as f64;
        let mut expected = Vec::new();
        let mut total = 0.0;
        for r in 0..n {
            for c in 0..n {
                let x = -1.0 + (c as f64 + 0.5) * h;
                let y = -1.0 + (r as f64 + 0.5) * h;
                let radius = (x * x + y * y).sqrt();
                let w = if radius < 1.0 { 1.0 } else { (1.0 / radius).powi(2) };
                expected.push(w);
                total += w;
            }
        }
        for (got, want) in d.values().iter().zip(expected.iter()) {
            assert!((got - want / total).abs() < 1e-12);
        }
        // corners are strictly below the flat interior value
        let interior = d.values()[[n / 2, n / 2]];
        assert!(d.values()[[0, 0]] < interior);
    }

    #[test]
    fn vds_paper_params_flat_inside_cutoff() {
        let n = 320;
        let p = VdsParams::new(0.25, 2.0).unwrap();
        let d = vds_density(n, p).unwrap();
        // every cell strictly inside the cutoff carries the same mass κ
        let mut inside = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let [x, y] = DensityGrid::cell_center(n, r, c);
                if (x * x + y * y).sqrt() < 0.25 {
                    inside.push(d.values()[[r, c]]);
                }
            }
        }
        let kappa = inside[0];
        let mass: f64 = inside.iter().sum();
        assert!((mass - kappa * inside.len() as f64).abs() < 1e-12);
        assert!(inside.iter().all(|&v| (v - kappa).abs() < 1e-18));
    }

    #[test]
    fn vds_has_dihedral_symmetry() {
        let n = 16;
        let d = vds_density(n, VdsParams::new(0.25, 3.0).unwrap()).unwrap();
        let v = d.values();
        for r in 0..n {
            for c in 0..n {
                let m = n - 1;
                assert_eq!(v[[r, c]], v[[m - r, c]]);
                assert_eq!(v[[r, c]], v[[r, m - c]]);
                assert_eq!(v[[r, c]], v[[c, r]]);
            }
        }
    }

    #[test]
    fn spectrum_constant_image_is_center_delta() {
        let n = 16;
        let images = vec![Array2::from_elem((n, n), 0.7)];
        let d = spectrum_density(&images).unwrap();
        assert!((d.values()[[n / 2, n / 2]] - 1.0).abs() < 1e-9);
        for ((r, c), &v) in d.values().indexed_iter() {
            if (r, c) != (n / 2, n / 2) {
                assert!(v < 1e-9, "cell ({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn spectrum_sums_to_one_with_zero_min() {
        let images = random_images(3, 16, 2);
        let d = spectrum_density(&images).unwrap();
        let sum: f64 = d.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let min = d.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
    }

    #[test]
    fn spectrum_matches_brute_force_dft() {
        let n = 16;
        let images = random_images(2, n, 3);
        let d = spectrum_density(&images).unwrap();
        // independent O(n^4) DFT oracle with explicit centering
        let mut avg = Array2::<f64>::zeros((n, n));
        for img in &images {
            for pr in 0..n {
                for pc in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for r in 0..n {
                        for c in 0..n {
                            let ph = -2.0 * std::f64::consts::PI
                                * (((pr as isize - (n / 2) as isize) * r as isize) as f64
                                    + ((pc as isize - (n / 2) as isize) * c as isize) as f64)
                                / n as f64;
                            acc += Complex64::new(ph.cos(), ph.sin()) * img[[r, c]];
                        }
                    }
                    avg[[pr, pc]] += acc.norm() / images.len() as f64;
                }
            }
        }
        let min = avg.iter().cloned().fold(f64::INFINITY, f64::min);
        avg.mapv_inplace(|v| v - min);
        let total: f64 = avg.iter().sum();
        for (got, want) in d.values().iter().zip(avg.iter()) {
            assert!((got - want / total).abs() < 1e-9, "{got} vs {}", want / total);
        }
    }

    #[test]
    fn spectrum_invariant_under_dataset_duplication() {
        let images = random_images(2, 16, 4);
        let doubled: Vec<_> = images.iter().chain(images.iter()).cloned().collect();
        let a = spectrum_density(&images).unwrap();
        let b = spectrum_density(&doubled).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn log_spectrum_constant_image_still_delta_dominated() {
        let n = 16;
        let images = vec![Array2::from_elem((n, n), 0.7)];
        let d = log_spectrum_density(&images).unwrap();
        assert!(d.values()[[n / 2, n / 2]] > 0.99);
    }

    #[test]
    fn log_spectrum_matches_brute_force() {
        let n = 16;
        let images = random_images(2, n, 5);
        let d = log_spectrum_density(&images).unwrap();
        let mut avg = Array2::<f64>::zeros((n, n));
        for img in &images {
            let spec = magnitude_spectrum(img);
            let max = spec.iter().cloned().fold(0.0_f64, f64::max);
            let eps = 1e-12 * max;
            for (a, &s) in avg.iter_mut().zip(spec.iter()) {
                *a += (eps + s).ln() / images.len() as f64;
            }
        }
        let min = avg.iter().cloned().fold(f64::INFINITY, f64::min);
        avg.mapv_inplace(|v| v - min);
        let total: f64 = avg.iter().sum();
        for (got, want) in d.values().iter().zip(avg.iter()) {
            assert!((got - want / total).abs() < 1e-9);
        }
    }

    #[test]
    fn log_spectrum_has_higher_entropy_on_phantoms() {
        let images: Vec<_> = (0..20).map(|s| random_phantom(32, s)).collect();
        let sb = spectrum_density(&images).unwrap();
        let lsb = log_spectrum_density(&images).unwrap();
        assert!(
            lsb.entropy() > sb.entropy(),
            "log-spectrum entropy {} should exceed spectrum entropy {}",
            lsb.entropy(),
            sb.entropy()
        );
    }

    #[test]
    fn empty_image_list_rejected() {
        assert!(spectrum_density(&[]).is_err());
        assert!(log_spectrum_density(&[]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let images = vec![Array2::zeros((16, 16)), Array2::zeros((8, 8))];
        assert!(spectrum_density(&images).is_err());
    }

    #[test]
    fn loupe_rescale_meets_budget_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for gamma in [0.1, 0.4, 0.9] {
            let p_raw: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut p = vec![0.0; 256];
            rescale(&p_raw, gamma, &mut p);
            let mean = p.iter().sum::<f64>() / 256.0;
            assert!((mean - gamma).abs() < 1e-12);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn loupe_near_full_budget_is_uniform_with_tiny_loss() {
        let images = random_images(3, 16, 7);
        let p = LoupeLiteParams::new(0.999, 20.0, 20, 1.0, 1).unwrap();
        let (d, log) = loupe_lite_learn(&images, &p).unwrap();
        let uniform = 1.0 / 256.0;
        for &v in d.values().iter() {
            assert!((v - uniform).abs() < 0.01 * uniform, "cell {v} vs uniform {uniform}");
        }
        assert!(*log.losses.last().unwrap() < 1e-4);
    }

    #[test]
    fn loupe_delta_image_drives_probabilities_uniform() {
        // delta image has a flat spectrum: loss = variance of P, so descent
        // contracts P toward the uniform budget value
        let n = 16;
        let mut img = Array2::zeros((n, n));
        img[[0, 0]] = 1.0;
        let p = LoupeLiteParams::new(0.4, 20.0, 400, 50.0, 2).unwrap();
        let model0 = LoupeLiteModel::new(&[img.clone()], &p).unwrap();
        let dev0 = model0
            .probability()
            .iter()
            .map(|v| (v - 0.4).abs())
            .fold(0.0_f64, f64::max);
        let (d, _) = loupe_lite_learn(&[img], &p).unwrap();
        let uniform = 1.0 / (n * n) as f64;
        let dev_final = d
            .values()
            .iter()
            .map(|v| (v - uniform).abs() / uniform * 0.4)
            .fold(0.0_f64, f64::max);
        assert!(
            dev_final < 0.2 * dev0,
            "probabilities did not contract toward uniform: {dev_final} vs initial {dev0}"
        );
    }

    #[test]
    fn loupe_gradient_matches_finite_differences() {
        let images = random_images(2, 16, 8);
        let p = LoupeLiteParams::new(0.4, 20.0, 1, 1.0, 3).unwrap();
        let mut model = LoupeLiteModel::new(&images, &p).unwrap();
        let grad = model.gradient();
        let gmax = grad.iter().map(|g| g.abs()).fold(0.0_f64, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..20 {
            let idx = rng.random_range(0..model.w.len());
            let orig = model.w[idx];
            model.w[idx] = orig + h;
            let lp = model.loss();
            model.w[idx] = orig - h;
            let lm = model.loss();
            model.w[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / gmax.max(1e-12);
            assert!(
                rel <= 1e-5,
                "coordinate {idx}: analytic {} vs fd {fd}, rel {rel}",
                grad[idx]
            );
        }
    }

    #[test]
    fn loupe_loss_decreases_monotonically() {
        let images = random_images(3, 16, 10);
        let p = LoupeLiteParams::new(0.4, 20.0, 60, 0.5, 4).unwrap();
        let (_, log) = loupe_lite_learn(&images, &p).unwrap();
        for w in log.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
        assert!(log.max_budget_error < 1e-12);
    }

    #[test]
    fn loupe_non_finite_image_diverges_with_epoch() {
        let mut img = Array2::zeros((16, 16));
        img[[3, 3]] = f64::NAN;
        let p = LoupeLiteParams::new(0.4, 20.0, 5, 1.0, 0).unwrap();
        assert!(loupe_lite_learn(&[img], &p).is_err());
    }
}
