//! Self-calibrating compressed-sensing reconstruction.
//!
//! Solves the synthesis formulation over wavelet coefficients z,
//!
//! ```text
//! ẑ = argmin ½ Σ_ℓ ‖W^½ (F_Ω S_ℓ Ψ* z − y_ℓ)‖² + λ‖z‖₁,   x̂ = Ψ* ẑ
//! ```
//!
//! with FISTA (optionally monotone), complex soft-thresholding, a power
//! iteration for the Lipschitz constant, and sensitivity maps estimated
//! from the density-compensated adjoint of the k-space center. The
//! optional diagonal weighting W (Pipe density compensation) accelerates
//! convergence without changing the λ=0 minimizer in the consistent case.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics;
use crate::nufft::{pipe_weights, DcWeights, NonUniformPlan};
use crate::wavelet::{analyze2, synthesize2, WaveletConfig};

/// Per-coil complex sensitivity maps, root-sum-of-squares normalized on
/// the support.
#[derive(Debug, Clone)]
pub struct SensitivityMaps {
    pub maps: Vec<Array2<Complex64>>,
}

impl SensitivityMaps {
    /// Identity maps for single-coil reconstruction.
    pub fn unit(n: usize) -> Self {
        SensitivityMaps { maps: vec![Array2::from_elem((n, n), Complex64::new(1.0, 0.0))] }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }
}

/// Estimate sensitivity maps from the k-space center: select samples with
/// ‖k‖ ≤ `center_fraction`, run the density-compensated adjoint per coil
/// on that subset, and normalize voxelwise by the root sum of squares.
pub fn estimate_sensitivities(
    kspace: &[Vec<Complex64>],
    plan: &NonUniformPlan,
    center_fraction: f64,
) -> Result<SensitivityMaps> {
    if !(center_fraction > 0.0 && center_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "center_fraction must be in (0, 1], got {center_fraction}"
        )));
    }
    if kspace.is_empty() {
        return Err(Error::EmptySelection("no coil data".into()));
    }
    let p = plan.len();
    for coil in kspace {
        if coil.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "coil has {} samples, plan has {p}",
                coil.len()
            )));
        }
    }
    let selected: Vec<usize> = plan
        .locations()
        .iter()
        .enumerate()
        .filter(|(_, loc)| (loc[0] * loc[0] + loc[1] * loc[1]).sqrt() <= center_fraction)
        .map(|(q, _)| q)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no samples within center radius {center_fraction}"
        )));
    }
    let center_locs: Vec<[f64; 2]> = selected.iter().map(|&q| plan.locations()[q]).collect();
    let center_plan = NonUniformPlan::new(center_locs, plan.n(), plan.mode())?;
    let weights = pipe_weights(&center_plan, 10)?;

    let low_res: Vec<Array2<Complex64>> = kspace
        .iter()
        .map(|coil| {
            let subset: Vec<Complex64> = selected.iter().map(|&q| coil[q]).collect();
            center_plan.adjoint(&subset, Some(&weights))
        })
        .collect::<Result<_>>()?;

    let n = plan.n();
    let mut rss = Array2::<f64>::zeros((n, n));
    for img in &low_res {
        for (acc, v) in rss.iter_mut().zip(img.iter()) {
            *acc += v.norm_sqr();
        }
    }
    rss.mapv_inplace(f64::sqrt);
    let max_rss = rss.iter().cloned().fold(0.0_f64, f64::max);
    if !(max_rss > 0.0) {
        return Err(Error::DegenerateGeometry("k-space center carries no signal".into()));
    }
    let eps = 1e-12 * max_rss;
    let maps = low_res
        .into_iter()
        .map(|img| {
            Array2::from_shape_fn((n, n), |idx| img[idx] / rss[idx].max(eps))
        })
        .collect();
    Ok(SensitivityMaps { maps })
}

#[derive(Debug, Clone)]
pub struct ReconConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    pub wavelet: WaveletConfig,
    pub dc_precondition: bool,
    /// Monotone FISTA (objective never increases).
    pub monotone: bool,
}

impl ReconConfig {
    pub fn new(lambda: f64) -> Self {
        ReconConfig {
            lambda,
            max_iter: 200,
            tol: 1e-6,
            wavelet: WaveletConfig::sym8(4),
            dc_precondition: true,
            monotone: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconLog {
    /// Objective after every iteration (index 0 is the initial value).
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lipschitz: f64,
}

/// Complex soft-thresholding: magnitude shrinkage preserving phase.
pub fn soft_threshold(v: Complex64, tau: f64) -> Complex64 {
    let mag = v.norm();
    if mag <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((mag - tau) / mag)
    }
}

/// Simulate per-coil acquisition: y_ℓ = F(S_ℓ ⊙ x).
pub fn coil_kspace(
    image: &Array2<Complex64>,
    maps: &SensitivityMaps,
    plan: &NonUniformPlan,
) -> Result<Vec<Vec<Complex64>>> {
    maps.maps
        .iter()
        .map(|s| {
            let weighted = Array2::from_shape_fn(image.raw_dim(), |idx| image[idx] * s[idx]);
            plan.forward(&weighted)
        })
        .collect()
}

struct Operator<'a> {
    plan: &'a NonUniformPlan,
    maps: &'a SensitivityMaps,
    wavelet: WaveletConfig,
    weights: Option<DcWeights>,
}

impl Operator<'_> {
    /// Per-coil residuals F S_ℓ Ψ* z − y_ℓ.
    fn residuals(&self, z: &Array2<Complex64>, y: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        let x = synthesize2(z, &self.wavelet)?;
        self.maps
            .maps
            .iter()
            .zip(y.iter())
            .map(|(s, yl)| {
                let weighted = Array2::from_shape_fn(x.raw_dim(), |idx| x[idx] * s[idx]);
                let mut r = self.plan.forward(&weighted)?;
                for (ri, yi) in r.iter_mut().zip(yl.iter()) {
                    *ri -= yi;
                }
                Ok(r)
            })
            .collect()
    }

    fn data_term(&self, residuals: &[Vec<Complex64>]) -> f64 {
        let mut acc = 0.0;
        for r in residuals {
            match &self.weights {
                Some(w) => {
                    for (ri, &wi) in r.iter().zip(w.w.iter()) {
                        acc += wi * ri.norm_sqr();
                    }
                }
                None => {
                    for ri in r {
                        acc += ri.norm_sqr();
                    }
                }
            }
        }
        0.5 * acc
    }

    /// Ψ Σ_ℓ conj(S_ℓ) ⊙ F^H (W r_ℓ).
    fn gradient(&self, residuals: &[Vec<Complex64>]) -> Result<Array2<Complex64>> {
        let n = self.plan.n();
        let mut acc = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        for (r, s) in residuals.iter().zip(self.maps.maps.iter()) {
            let back = self.plan.adjoint(r, self.weights.as_ref())?;
            for ((a, b), m) in acc.iter_mut().zip(back.iter()).zip(s.iter()) {
                *a += b * m.conj();
            }
        }
        analyze2(&acc, &self.wavelet)
    }

    /// Normal operator z ↦ Ψ A^H W A Ψ* z (for the power iteration).
    fn normal_apply(&self, z: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        let x = synthesize2(z, &self.wavelet)?;
        let n = self.plan.n();
        let mut acc = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        for s in &self.maps.maps {
            let weighted = Array2::from_shape_fn(x.raw_dim(), |idx| x[idx] * s[idx]);
            let fw = self.plan.forward(&weighted)?;
            let back = self.plan.adjoint(&fw, self.weights.as_ref())?;
            for ((a, b), m) in acc.iter_mut().zip(back.iter()).zip(s.iter()) {
                *a += b * m.conj();
            }
        }
        analyze2(&acc, &self.wavelet)
    }

    /// Largest-eigenvalue estimate of the normal operator.
    fn power_iteration(&self, iters: usize, seed: u64) -> Result<f64> {
        let n = self.plan.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let mut lambda = 0.0;
        for _ in 0..iters {
            let norm = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateGeometry("power iteration collapsed".into()));
            }
            b.mapv_inplace(|v| v / norm);
            let next = self.normal_apply(&b)?;
            lambda = b
                .iter()
                .zip(next.iter())
                .map(|(a, c)| (a.conj() * c).re)
                .sum::<f64>();
            b = next;
        }
        Ok(lambda)
    }
}

/// FISTA over wavelet coefficients; returns the combined image Ψ*ẑ and
/// the iteration log.
pub fn cs_reconstruct(
    kspace: &[Vec<Complex64>],
    plan: &NonUniformPlan,
    maps: &SensitivityMaps,
    cfg: &ReconConfig,
) -> Result<(Array2<Complex64>, ReconLog)> {
    cfg.validate()?;
    let n = plan.n();
    cfg.wavelet.check_size(n)?;
    if kspace.len() != maps.n_coils() {
        return Err(Error::ShapeMismatch(format!(
            "{} coils of data vs {} sensitivity maps",
            kspace.len(),
            maps.n_coils()
        )));
    }
    for coil in kspace {
        if coil.len() != plan.len() {
            return Err(Error::ShapeMismatch("k-space length mismatch".into()));
        }
    }
    let weights = if cfg.dc_precondition {
        Some(pipe_weights(plan, 10)?)
    } else {
        None
    };
    let op = Operator { plan, maps, wavelet: cfg.wavelet, weights };

    // 5% headroom over the power-iteration estimate
    let lipschitz = 1.05 * op.power_iteration(20, 0x5eed)?;
    if !(lipschitz > 0.0) {
        return Err(Error::DegenerateGeometry("operator norm estimate is zero".into()));
    }
    let tau = 1.0 / lipschitz;

    let objective = |op: &Operator, z: &Array2<Complex64>| -> Result<f64> {
        let r = op.residuals(z, kspace)?;
        let l1: f64 = z.iter().map(|v| v.norm()).sum();
        Ok(op.data_term(&r) + cfg.lambda * l1)
    };

    let mut z_x = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    let mut z_y = z_x.clone();
    let mut t = 1.0_f64;
    let mut obj_x = objective(&op, &z_x)?;
    let mut objectives = vec![obj_x];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        let residuals = op.residuals(&z_y, kspace)?;
        let grad = op.gradient(&residuals)?;
        let cand = Array2::from_shape_fn((n, n), |idx| {
            soft_threshold(z_y[idx] - grad[idx] * tau, tau * cfg.lambda)
        });
        let obj_cand = objective(&op, &cand)?;
        if !obj_cand.is_finite() {
            return Err(Error::Diverged {
                epoch: iterations,
                detail: format!("objective {obj_cand}"),
            });
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (z_next, obj_next) = if cfg.monotone && obj_cand > obj_x {
            (z_x.clone(), obj_x)
        } else {
            (cand.clone(), obj_cand)
        };
        // momentum extrapolation (monotone variant keeps the candidate in
        // the extrapolation even when it was rejected as the new iterate)
        let y_next = Array2::from_shape_fn((n, n), |idx| {
            z_next[idx]
                + (cand[idx] - z_next[idx]) * (t / t_next)
                + (z_next[idx] - z_x[idx]) * ((t - 1.0) / t_next)
        });
        z_x = z_next;
        z_y = y_next;
        t = t_next;
        iterations += 1;
        let prev = *objectives.last().unwrap();
        objectives.push(obj_next);
        obj_x = obj_next;
        if (prev - obj_next).abs() <= cfg.tol * obj_next.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let image = synthesize2(&z_x, &cfg.wavelet)?;
    Ok((image, ReconLog { objectives, iterations, converged, lipschitz }))
}

/// One row of the λ-search table.
#[derive(Debug, Clone)]
pub struct LambdaScore {
    pub lambda: f64,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    pub best_ssim: f64,
    pub table: Vec<LambdaScore>,
}

/// Log-spaced λ grid over [lo, hi].
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Config("lambda grid needs at least 2 points".into()));
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("bad lambda range [{lo}, {hi}]")));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Reconstruct at every λ of the grid, score masked SSIM against the
/// reference magnitude image, and return the argmax plus the full table.
/// Per-λ failures are recorded without aborting the sweep.
pub fn lambda_search(
    kspace: &[Vec<Complex64>],
    plan: &NonUniformPlan,
    maps: &SensitivityMaps,
    base: &ReconConfig,
    reference: &Array2<f64>,
    lambdas: &[f64],
) -> Result<LambdaSearch> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    let mask = metrics::auto_mask(reference);
    let table: Vec<LambdaScore> = lambdas
        .par_iter()
        .map(|&lambda| {
            let cfg = ReconConfig { lambda, ..base.clone() };
            match cs_reconstruct(kspace, plan, maps, &cfg) {
                Ok((img, log)) => {
                    let mag = img.mapv(|v| v.norm());
                    match (
                        metrics::ssim(reference, &mag, &mask),
                        metrics::psnr(reference, &mag, &mask),
                    ) {
                        (Ok(s), Ok(p)) => LambdaScore {
                            lambda,
                            ssim: Some(s),
                            psnr: Some(p),
                            iterations: log.iterations,
                            error: None,
                        },
                        (s, p) => LambdaScore {
                            lambda,
                            ssim: None,
                            psnr: None,
                            iterations: log.iterations,
                            error: Some(format!("scoring failed: {s:?} {p:?}")),
                        },
                    }
                }
                Err(e) => LambdaScore {
                    lambda,
                    ssim: None,
                    psnr: None,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = table
        .iter()
        .filter(|row| row.ssim.is_some())
        .max_by(|a, b| a.ssim.unwrap().partial_cmp(&b.ssim.unwrap()).unwrap())
        .ok_or_else(|| Error::Diverged {
            epoch: 0,
            detail: "every lambda in the sweep failed".into(),
        })?;
    Ok(LambdaSearch { best_lambda: best.lambda, best_ssim: best.ssim.unwrap(), table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nufft::NufftMode;
    use crate::phantom::{coil_maps, shepp_logan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_locations(n: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for p in 0..n {
            for q in 0..n {
                out.push([
                    2.0 * (q as f64 - n as f64 / 2.0) / n as f64,
                    2.0 * (p as f64 - n as f64 / 2.0) / n as f64,
                ]);
            }
        }
        out
    }

    fn random_locations(p: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn soft_threshold_formula() {
        let cases = [
            Complex64::new(3.0, 4.0),
            Complex64::new(-0.3, 0.1),
            Complex64::new(0.0, 0.0),
            Complex64::new(1e-8, -1e-8),
        ];
        for v in cases {
            for tau in [0.0, 0.5, 2.0, 10.0] {
                let got = soft_threshold(v, tau);
                let mag = v.norm();
                if mag <= tau {
                    assert_eq!(got, Complex64::new(0.0, 0.0));
                } else {
                    let want = v / mag * (mag - tau);
                    assert!((got - want).norm() < 1e-15);
                    // phase preserved
                    assert!((got.arg() - v.arg()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_maps_single_coil() {
        let m = SensitivityMaps::unit(16);
        assert_eq!(m.n_coils(), 1);
        assert!(m.maps[0].iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() == 0.0));
    }

    #[test]
    fn single_coil_estimated_map_has_unit_magnitude() {
        let n = 32;
        let img = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(random_locations(600, 1), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = estimate_sensitivities(&[y], &plan, 0.25).unwrap();
        // RSS of a single coil is its magnitude, so the map is unit-modulus
        for v in maps.maps[0].iter() {
            assert!((v.norm() - 1.0).abs() < 1e-9, "map magnitude {}", v.norm());
        }
    }

    #[test]
    fn two_identical_coils_split_evenly() {
        let n = 32;
        let img = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(random_locations(600, 2), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = estimate_sensitivities(&[y.clone(), y], &plan, 0.25).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in maps.maps[0].iter().zip(maps.maps[1].iter()) {
            assert!((a - b).norm() < 1e-12);
            assert!((a.norm() - inv_sqrt2).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_coil_maps_recovered() {
        let n = 32;
        let phantom = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let true_maps = SensitivityMaps { maps: coil_maps(n, 4) };
        let plan = NonUniformPlan::new(random_locations(3000, 3), n, NufftMode::Exact).unwrap();
        let kspace = coil_kspace(&phantom, &true_maps, &plan).unwrap();
        let est = estimate_sensitivities(&kspace, &plan, 0.35).unwrap();
        // compare magnitudes on the phantom support against the
        // RSS-normalized ground truth
        let mut rss = Array2::<f64>::zeros((n, n));
        for m in &true_maps.maps {
            for (acc, v) in rss.iter_mut().zip(m.iter()) {
                *acc += v.norm_sqr();
            }
        }
        rss.mapv_inplace(f64::sqrt);
        for (est_map, true_map) in est.maps.iter().zip(true_maps.maps.iter()) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for ((r, c), t) in true_map.indexed_iter() {
                if phantom[[r, c]].norm() > 0.3 {
                    xs.push(t.norm() / rss[[r, c]]);
                    ys.push(est_map[[r, c]].norm());
                }
            }
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let mut cov = 0.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for (x, y) in xs.iter().zip(ys.iter()) {
                cov += (x - mx) * (y - my);
                vx += (x - mx) * (x - mx);
                vy += (y - my) * (y - my);
            }
            let corr = cov / (vx.sqrt() * vy.sqrt());
            assert!(corr > 0.95, "coil map correlation {corr}");
        }
    }

    #[test]
    fn lambda_zero_full_grid_recovers_image() {
        let n = 32;
        let img = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(grid_locations(n), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = SensitivityMaps::unit(n);
        let cfg = ReconConfig {
            lambda: 0.0,
            tol: 1e-14,
            max_iter: 100,
            dc_precondition: false,
            wavelet: WaveletConfig::sym8(3),
            monotone: true,
        };
        let (recon, log) = cs_reconstruct(&[y], &plan, &maps, &cfg).unwrap();
        let num: f64 = recon.iter().zip(img.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = img.iter().map(|v| v.norm_sqr()).sum();
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-6, "relative recovery error {rel} after {} iters", log.iterations);
    }

    #[test]
    fn huge_lambda_gives_zero_image() {
        let n = 16;
        let img = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(random_locations(120, 5), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = SensitivityMaps::unit(n);
        // λ ≥ 2‖Ψ F^H y‖∞ kills everything in the first prox
        let back = plan.adjoint(&y, None).unwrap();
        let z0 = analyze2(&back, &WaveletConfig::sym8(2)).unwrap();
        let lmax = z0.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        let cfg = ReconConfig {
            lambda: 2.0 * lmax,
            dc_precondition: false,
            wavelet: WaveletConfig::sym8(2),
            ..ReconConfig::new(0.0)
        };
        let (recon, _) = cs_reconstruct(&[y], &plan, &maps, &cfg).unwrap();
        assert!(recon.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn objective_monotone_and_decreasing() {
        let n = 32;
        let img = shepp_logan(n).mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(random_locations(400, 6), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = SensitivityMaps::unit(n);
        let cfg = ReconConfig {
            lambda: 1e-3,
            max_iter: 60,
            tol: 1e-14,
            wavelet: WaveletConfig::sym8(3),
            ..ReconConfig::new(0.0)
        };
        let (_, log) = cs_reconstruct(&[y], &plan, &maps, &cfg).unwrap();
        assert!(log.objectives.last().unwrap() < log.objectives.first().unwrap());
        for w in log.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn normal_operator_is_psd_and_power_iteration_accurate() {
        let n = 16;
        let plan = NonUniformPlan::new(random_locations(100, 7), n, NufftMode::Exact).unwrap();
        let maps = SensitivityMaps::unit(n);
        let op = Operator {
            plan: &plan,
            maps: &maps,
            wavelet: WaveletConfig::sym8(2),
            weights: None,
        };
        // PSD: ⟨z, Bz⟩ = ‖A Ψ* z‖² ≥ 0 and real
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let z = Array2::from_shape_fn((n, n), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let bz = op.normal_apply(&z).unwrap();
            let quad: Complex64 = z.iter().zip(bz.iter()).map(|(a, b)| a.conj() * b).sum();
            assert!(quad.im.abs() < 1e-9 * quad.re.abs().max(1.0));
            assert!(quad.re >= -1e-9);
        }
        // brute force: many power steps on the dense matrix
        let dim = n * n;
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
        for j in 0..dim {
            let mut e = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
            e[[j / n, j % n]] = Complex64::new(1.0, 0.0);
            let col = op.normal_apply(&e).unwrap();
            for (i, v) in col.iter().enumerate() {
                dense[i][j] = *v;
            }
        }
        let mut b = vec![Complex64::new(1.0, 0.5); dim];
        let mut brute = 0.0;
        for _ in 0..2000 {
            let norm = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            for v in b.iter_mut() {
                *v /= norm;
            }
            let next: Vec<Complex64> = dense
                .iter()
                .map(|row| row.iter().zip(b.iter()).map(|(m, x)| m * x).sum())
                .collect();
            brute = b.iter().zip(next.iter()).map(|(a, c)| (a.conj() * c).re).sum();
            b = next;
        }
        let est = op.power_iteration(20, 0x5eed).unwrap();
        let rel = (est - brute).abs() / brute;
        assert!(rel <= 0.05, "power iteration {est} vs brute {brute}, rel {rel}");
    }

    #[test]
    fn lambda_grid_spans_range() {
        let g = lambda_grid(1e-4, 1.0, 7).unwrap();
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-4).abs() < 1e-12);
        assert!((g[6] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(lambda_grid(1e-4, 1.0, 1).is_err());
    }

    #[test]
    fn lambda_search_single_value_returns_it() {
        let n = 16;
        let ref_img = shepp_logan(n);
        let img = ref_img.mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(random_locations(150, 9), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = SensitivityMaps::unit(n);
        let base = ReconConfig {
            max_iter: 30,
            wavelet: WaveletConfig::sym8(2),
            ..ReconConfig::new(0.0)
        };
        let res = lambda_search(&[y], &plan, &maps, &base, &ref_img, &[3e-3]).unwrap();
        assert_eq!(res.best_lambda, 3e-3);
        assert_eq!(res.table.len(), 1);
    }

    #[test]
    fn lambda_search_noiseless_full_sampling_prefers_smallest() {
        let n = 16;
        let ref_img = shepp_logan(n);
        let img = ref_img.mapv(|v| Complex64::new(v, 0.0));
        let plan = NonUniformPlan::new(grid_locations(n), n, NufftMode::Exact).unwrap();
        let y = plan.forward(&img).unwrap();
        let maps = SensitivityMaps::unit(n);
        let base = ReconConfig {
            max_iter: 60,
            tol: 1e-12,
            dc_precondition: false,
            wavelet: WaveletConfig::sym8(2),
            ..ReconConfig::new(0.0)
        };
        let grid = lambda_grid(1e-4, 1.0, 4).unwrap();
        let res = lambda_search(&[y], &plan, &maps, &base, &ref_img, &grid).unwrap();
        assert_eq!(res.best_lambda, grid[0], "table: {:?}", res.table);
    }
}
