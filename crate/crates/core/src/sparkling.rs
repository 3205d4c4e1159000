//! Multi-shot trajectory optimization: make the empirical sample
//! distribution match a target density while every shot stays inside the
//! hardware constraint set.
//!
//! The objective is an attraction–repulsion functional over the p = Nc·Ns
//! sample points,
//!
//! ```text
//! F(K) = (1/p) Σ_i Φ(k_i) − (1/2p²) Σ_{i≠j} ‖k_i − k_j‖,
//! Φ(y) = Σ_cells ρ[g]·‖y − x_g‖,
//! ```
//!
//! minimized by projected gradient descent with backtracking across a
//! coarse-to-fine multiresolution schedule. Φ is precomputed on the
//! density grid by FFT convolution; during optimization both the value
//! and the gradient of the attraction term come from the same bilinear
//! interpolant of that grid, so the analytic gradient is the exact
//! derivative of the objective actually evaluated. Repulsion is exact
//! O(p²) up to [`BH_THRESHOLD`] points and switches to a Barnes–Hut
//! quadtree (opening angle 0.5) beyond.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constraints::{project_points, Anchor, ConstraintSet};
use crate::error::{Error, Result};
use crate::fft::fft2_inplace;
use crate::types::{DensityGrid, Trajectory, TrajectorySpec};

/// Above this many points the repulsion sums use the quadtree.
pub const BH_THRESHOLD: usize = 32768;

const BH_THETA: f64 = 0.5;

/// Trajectory initialization for the optimizer.
#[derive(Debug, Clone)]
pub enum InitKind {
    /// Equally spaced in-out spokes through the k-space origin.
    RadialInOut,
    /// Golden-angle increment between consecutive spokes.
    GoldenAngleRadial,
    /// Caller-supplied points [n_shots][n_samples][2].
    Given(Array3<f64>),
}

#[derive(Debug, Clone)]
pub struct SparklingConfig {
    pub n_levels: usize,
    pub iters_per_level: usize,
    /// η₀ = step_factor · step_bound / ‖∇F(K₀)‖∞ at each level.
    pub step_factor: f64,
    /// Per-iteration decay: η_i = η₀ / (1 + decay·i).
    pub step_decay: f64,
    pub init: InitKind,
    pub seed: u64,
    pub proj_tol: f64,
    pub proj_max_iter: usize,
}

impl Default for SparklingConfig {
    fn default() -> Self {
        SparklingConfig {
            n_levels: 4,
            iters_per_level: 60,
            step_factor: 0.1,
            step_decay: 0.0,
            init: InitKind::GoldenAngleRadial,
            seed: 0,
            proj_tol: 1e-8,
            proj_max_iter: 5000,
        }
    }
}

/// Φ and ∇Φ sampled on a 3×-refined copy of the density's cell-center
/// grid, extended by one coarse cell ring so the interpolation hull
/// strictly contains Ω. The odd refinement factor puts every coarse cell
/// center exactly on a fine-grid center, so one convolution serves both
/// the refined interpolant and the exact coarse-grid field values.
pub struct AttractionField {
    n: usize,
    /// Fine cells per coarse cell.
    refine: usize,
    phi: Array2<f64>,
    gx: Array2<f64>,
    gy: Array2<f64>,
}

const FIELD_REFINE: usize = 3;

/// Precompute the attraction potential and its gradient by convolving the
/// density with ‖·‖ and the unit-vector kernel on a zero-padded FFT grid.
pub fn attraction_field(rho: &DensityGrid) -> AttractionField {
    attraction_field_smoothed(rho, 0.0)
}

/// Attraction field with the distance kernel smoothed to √(d² + ε²),
/// ε in coarse-cell units. The optimizer uses a small ε so the
/// potential's cone tips (sharp for peaked densities) do not stall the
/// line search; ε = 0 is the exact kernel.
pub fn attraction_field_smoothed(rho: &DensityGrid, eps_cells: f64) -> AttractionField {
    let n = rho.n();
    let refine = FIELD_REFINE;
    let nf = refine * (n + 2);
    let m = 2 * nf;
    let hf = 2.0 / (n * refine) as f64;
    let eps_fine = eps_cells * refine as f64;

    // density mass at fine index refine·g + refine + refine/2 per axis
    let offset = refine + refine / 2;
    let mut rho_pad = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
    for ((r, c), &v) in rho.values().indexed_iter() {
        rho_pad[[refine * r + offset, refine * c + offset]] = Complex64::new(v, 0.0);
    }
    fft2_inplace(&mut rho_pad, false);

    let max_off = nf as i64 - 1;
    let scale = 1.0 / (m * m) as f64;
    let mut field = |component: usize| -> Array2<f64> {
        let mut kernel = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
        for dr in -max_off..=max_off {
            for dc in -max_off..=max_off {
                let rr = dr.rem_euclid(m as i64) as usize;
                let cc = dc.rem_euclid(m as i64) as usize;
                let norm = ((dr * dr + dc * dc) as f64 + eps_fine * eps_fine).sqrt();
                kernel[[rr, cc]] = Complex64::new(
                    match component {
                        0 => norm * hf,
                        1 => {
                            if norm > 0.0 {
                                dc as f64 / norm
                            } else {
                                0.0
                            }
                        }
                        _ => {
                            if norm > 0.0 {
                                dr as f64 / norm
                            } else {
                                0.0
                            }
                        }
                    },
                    0.0,
                );
            }
        }
        fft2_inplace(&mut kernel, false);
        let mut prod = Array2::from_shape_fn((m, m), |i| kernel[i] * rho_pad[i]);
        fft2_inplace(&mut prod, true);
        Array2::from_shape_fn((nf, nf), |(r, c)| prod[[r, c]].re * scale)
    };
    let phi = field(0);
    let gx = field(1);
    let gy = field(2);
    AttractionField { n, refine, phi, gx, gy }
}

impl AttractionField {
    pub fn n(&self) -> usize {
        self.n
    }

    /// ∇Φ values on the density's own n×n cell-center grid
    /// (x and y components).
    pub fn grad_grids(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.n;
        let refine = self.refine;
        let offset = refine + refine / 2;
        let sub = |g: &Array2<f64>| {
            Array2::from_shape_fn((n, n), |(r, c)| g[[refine * r + offset, refine * c + offset]])
        };
        (sub(&self.gx), sub(&self.gy))
    }

    fn fine_h(&self) -> f64 {
        2.0 / (self.n * self.refine) as f64
    }

    /// Continuous cell coordinates of a point on the fine grid, clamped
    /// to its hull; returns (row0, col0, frac_row, frac_col).
    fn locate(&self, p: [f64; 2]) -> (usize, usize, f64, f64) {
        let nf = self.refine * (self.n + 2);
        let hf = self.fine_h();
        // fine centers sit at -1 + (i - refine + 0.5)·hf
        let shift = self.refine as f64 - 0.5;
        let cx = ((p[0] + 1.0) / hf + shift).clamp(0.0, (nf - 1) as f64);
        let cy = ((p[1] + 1.0) / hf + shift).clamp(0.0, (nf - 1) as f64);
        let c0 = (cx.floor() as usize).min(nf - 2);
        let r0 = (cy.floor() as usize).min(nf - 2);
        let fx = (cx - c0 as f64).clamp(0.0, 1.0);
        let fy = (cy - r0 as f64).clamp(0.0, 1.0);
        (r0, c0, fy, fx)
    }

    /// Bilinear interpolation of the precomputed ∇Φ grid.
    pub fn grad_at(&self, p: [f64; 2]) -> [f64; 2] {
        let (r0, c0, fy, fx) = self.locate(p);
        let lerp = |g: &Array2<f64>| {
            (1.0 - fy) * ((1.0 - fx) * g[[r0, c0]] + fx * g[[r0, c0 + 1]])
                + fy * ((1.0 - fx) * g[[r0 + 1, c0]] + fx * g[[r0 + 1, c0 + 1]])
        };
        [lerp(&self.gx), lerp(&self.gy)]
    }

    /// Bilinear interpolation of the potential grid.
    pub fn phi_at(&self, p: [f64; 2]) -> f64 {
        let (r0, c0, fy, fx) = self.locate(p);
        (1.0 - fy) * ((1.0 - fx) * self.phi[[r0, c0]] + fx * self.phi[[r0, c0 + 1]])
            + fy * ((1.0 - fx) * self.phi[[r0 + 1, c0]] + fx * self.phi[[r0 + 1, c0 + 1]])
    }

    /// Exact spatial derivative of the bilinear patch behind
    /// [`Self::phi_at`]; this is the attraction gradient used by the
    /// optimizer so that value and gradient stay mutually consistent.
    fn patch_grad_at(&self, p: [f64; 2]) -> [f64; 2] {
        let (r0, c0, fy, fx) = self.locate(p);
        let hf = self.fine_h();
        let inv_h = 1.0 / hf;
        let p00 = self.phi[[r0, c0]];
        let p01 = self.phi[[r0, c0 + 1]];
        let p10 = self.phi[[r0 + 1, c0]];
        let p11 = self.phi[[r0 + 1, c0 + 1]];
        // zero beyond the extended hull, where the clamped interpolant is
        // constant
        let margin = (self.refine as f64 - 0.5) * hf;
        let interior_x = p[0] > -1.0 - margin && p[0] < 1.0 + margin;
        let interior_y = p[1] > -1.0 - margin && p[1] < 1.0 + margin;
        let dx = if interior_x {
            ((1.0 - fy) * (p01 - p00) + fy * (p11 - p10)) * inv_h
        } else {
            0.0
        };
        let dy = if interior_y {
            ((1.0 - fx) * (p10 - p00) + fx * (p11 - p01)) * inv_h
        } else {
            0.0
        };
        [dx, dy]
    }
}

/// One objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub attraction: f64,
    pub repulsion: f64,
    pub gradient: Array3<f64>,
    /// Point pairs closer than 1e-12 (candidates for a jittered restart).
    pub coincident_pairs: usize,
}

/// F(K) and ∇F(K) over all shots jointly, with the exact pairwise
/// repulsion (subgradient 0 at coincident points).
pub fn objective_and_gradient(points: &Array3<f64>, field: &AttractionField) -> ObjectiveEval {
    objective_and_gradient_smoothed(points, field, 0.0)
}

/// Like [`objective_and_gradient`] but with the repulsion kernel smoothed
/// to √(d² + ε²). The optimizer descends on this surrogate (ε tied to the
/// step bound) because the exact kernel's curvature blows up as samples
/// crowd together; ε = 0 recovers the exact objective.
pub fn objective_and_gradient_smoothed(
    points: &Array3<f64>,
    field: &AttractionField,
    eps: f64,
) -> ObjectiveEval {
    let (nc, ns, _) = points.dim();
    let p = nc * ns;
    let flat: Vec<[f64; 2]> = iter_points(points);
    let inv_p = 1.0 / p as f64;
    let inv_p2 = inv_p * inv_p;

    let mut attraction = 0.0;
    let mut grad = vec![[0.0_f64; 2]; p];
    for (i, pt) in flat.iter().enumerate() {
        attraction += field.phi_at(*pt) * inv_p;
        let g = field.patch_grad_at(*pt);
        grad[i][0] = g[0] * inv_p;
        grad[i][1] = g[1] * inv_p;
    }

    let eps2 = eps * eps;
    let (rep_sum, rep_grad, coincident) = if p <= BH_THRESHOLD {
        repulsion_exact(&flat, eps2)
    } else {
        repulsion_barnes_hut(&flat, eps2)
    };
    let repulsion = 0.5 * rep_sum * inv_p2;
    for (g, rg) in grad.iter_mut().zip(rep_grad.iter()) {
        g[0] -= rg[0] * inv_p2;
        g[1] -= rg[1] * inv_p2;
    }

    let mut gradient = Array3::zeros((nc, ns, 2));
    for i in 0..nc {
        for m in 0..ns {
            gradient[[i, m, 0]] = grad[i * ns + m][0];
            gradient[[i, m, 1]] = grad[i * ns + m][1];
        }
    }
    ObjectiveEval {
        value: attraction - repulsion,
        attraction,
        repulsion,
        gradient,
        coincident_pairs: coincident,
    }
}

/// F(K) only, exact repulsion.
pub fn objective_value(points: &Array3<f64>, field: &AttractionField) -> f64 {
    objective_value_smoothed(points, field, 0.0)
}

/// Value-only pass of the smoothed objective (backtracking line search).
pub fn objective_value_smoothed(points: &Array3<f64>, field: &AttractionField, eps: f64) -> f64 {
    let (nc, ns, _) = points.dim();
    let p = nc * ns;
    let flat = iter_points(points);
    let inv_p = 1.0 / p as f64;
    let attraction: f64 = flat.iter().map(|pt| field.phi_at(*pt)).sum::<f64>() * inv_p;
    let eps2 = eps * eps;
    let rep_sum = if p <= BH_THRESHOLD {
        repulsion_value_exact(&flat, eps2)
    } else {
        repulsion_value_barnes_hut(&flat, eps2)
    };
    attraction - 0.5 * rep_sum * inv_p * inv_p
}

fn iter_points(points: &Array3<f64>) -> Vec<[f64; 2]> {
    let (nc, ns, _) = points.dim();
    let mut flat = Vec::with_capacity(nc * ns);
    for i in 0..nc {
        for m in 0..ns {
            flat.push([points[[i, m, 0]], points[[i, m, 1]]]);
        }
    }
    flat
}

/// Ordered-pair distance sum, per-point repulsion gradients and the
/// coincident-pair count, in fixed-chunk parallel passes so the result is
/// deterministic for any thread count.
fn repulsion_exact(flat: &[[f64; 2]], eps2: f64) -> (f64, Vec<[f64; 2]>, usize) {
    let p = flat.len();
    let chunk = 256;
    let results: Vec<(f64, Vec<[f64; 2]>, usize)> = (0..p.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| {
            let start = ci * chunk;
            let end = (start + chunk).min(p);
            let mut sum = 0.0;
            let mut grads = vec![[0.0_f64; 2]; end - start];
            let mut coincident = 0usize;
            for i in start..end {
                let pi = flat[i];
                let mut gx = 0.0;
                let mut gy = 0.0;
                for (j, pj) in flat.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let dx = pi[0] - pj[0];
                    let dy = pi[1] - pj[1];
                    let d2 = dx * dx + dy * dy;
                    let d = (d2 + eps2).sqrt();
                    sum += d;
                    if d > 1e-12 {
                        gx += dx / d;
                        gy += dy / d;
                    }
                    if d2.sqrt() <= 1e-12 && j > i {
                        coincident += 1;
                    }
                }
                grads[i - start] = [gx, gy];
            }
            (sum, grads, coincident)
        })
        .collect();
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(p);
    let mut coincident = 0;
    for (s, g, c) in results {
        sum += s;
        grad.extend(g);
        coincident += c;
    }
    (sum, grad, coincident)
}

fn repulsion_value_exact(flat: &[[f64; 2]], eps2: f64) -> f64 {
    let p = flat.len();
    let chunk = 256;
    let partials: Vec<f64> = (0..p.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| {
            let start = ci * chunk;
            let end = (start + chunk).min(p);
            let mut sum = 0.0;
            for i in start..end {
                let pi = flat[i];
                for (j, pj) in flat.iter().enumerate() {
                    if j != i {
                        let dx = pi[0] - pj[0];
                        let dy = pi[1] - pj[1];
                        sum += (dx * dx + dy * dy + eps2).sqrt();
                    }
                }
            }
            sum
        })
        .collect();
    partials.iter().sum()
}

// ---------------------------------------------------------------------
// Barnes–Hut quadtree for large point counts.
// ---------------------------------------------------------------------

struct BhNode {
    cx: f64,
    cy: f64,
    half: f64,
    count: f64,
    sum: [f64; 2],
    children: [i32; 4],
    point: Option<[f64; 2]>,
}

struct QuadTree {
    nodes: Vec<BhNode>,
}

impl QuadTree {
    fn build(points: &[[f64; 2]]) -> Self {
        let mut tree = QuadTree {
            nodes: vec![BhNode {
                cx: 0.0,
                cy: 0.0,
                half: 1.0 + 1e-9,
                count: 0.0,
                sum: [0.0, 0.0],
                children: [-1; 4],
                point: None,
            }],
        };
        for &p in points {
            tree.insert(0, p, 0);
        }
        tree
    }

    fn quadrant(&self, node: usize, p: [f64; 2]) -> usize {
        let n = &self.nodes[node];
        (if p[0] >= n.cx { 1 } else { 0 }) + (if p[1] >= n.cy { 2 } else { 0 })
    }

    fn child_center(&self, node: usize, q: usize) -> (f64, f64, f64) {
        let n = &self.nodes[node];
        let h = n.half / 2.0;
        let cx = n.cx + if q & 1 == 1 { h } else { -h };
        let cy = n.cy + if q & 2 == 2 { h } else { -h };
        (cx, cy, h)
    }

    fn insert(&mut self, node: usize, p: [f64; 2], depth: usize) {
        self.nodes[node].count += 1.0;
        self.nodes[node].sum[0] += p[0];
        self.nodes[node].sum[1] += p[1];
        if self.nodes[node].count == 1.0 {
            self.nodes[node].point = Some(p);
            return;
        }
        // split a former leaf; past the depth cap points accumulate here
        if depth > 40 {
            return;
        }
        if let Some(existing) = self.nodes[node].point.take() {
            let q = self.quadrant(node, existing);
            let child = self.ensure_child(node, q);
            // re-insert without double counting the aggregate
            self.insert_aggregate_only(child, existing, depth + 1);
        }
        let q = self.quadrant(node, p);
        let child = self.ensure_child(node, q);
        self.insert_aggregate_only(child, p, depth + 1);
    }

    fn insert_aggregate_only(&mut self, node: usize, p: [f64; 2], depth: usize) {
        self.insert(node, p, depth);
    }

    fn ensure_child(&mut self, node: usize, q: usize) -> usize {
        if self.nodes[node].children[q] >= 0 {
            return self.nodes[node].children[q] as usize;
        }
        let (cx, cy, h) = self.child_center(node, q);
        self.nodes.push(BhNode {
            cx,
            cy,
            half: h,
            count: 0.0,
            sum: [0.0, 0.0],
            children: [-1; 4],
            point: None,
        });
        let idx = self.nodes.len() - 1;
        self.nodes[node].children[q] = idx as i32;
        idx
    }

    /// Σ_j ‖y − k_j‖ and Σ_j (y − k_j)/‖y − k_j‖ over all stored points,
    /// approximating well-separated cells by their centroid.
    fn accumulate(&self, node: usize, y: [f64; 2], eps2: f64, sum: &mut f64, grad: &mut [f64; 2]) {
        let n = &self.nodes[node];
        if n.count == 0.0 {
            return;
        }
        let comx = n.sum[0] / n.count;
        let comy = n.sum[1] / n.count;
        let dx = y[0] - comx;
        let dy = y[1] - comy;
        let d = (dx * dx + dy * dy + eps2).sqrt();
        let is_leaf = n.point.is_some() && n.count == 1.0;
        if is_leaf || (2.0 * n.half) / d.max(1e-300) < BH_THETA {
            if d > 1e-12 {
                *sum += n.count * d;
                grad[0] += n.count * dx / d;
                grad[1] += n.count * dy / d;
            }
            return;
        }
        let children = n.children;
        let mut visited = false;
        for c in children {
            if c >= 0 {
                visited = true;
                self.accumulate(c as usize, y, eps2, sum, grad);
            }
        }
        // depth-capped bucket: treat as centroid cluster
        if !visited && d > 1e-12 {
            *sum += n.count * d;
            grad[0] += n.count * dx / d;
            grad[1] += n.count * dy / d;
        }
    }
}

fn repulsion_barnes_hut(flat: &[[f64; 2]], eps2: f64) -> (f64, Vec<[f64; 2]>, usize) {
    let tree = QuadTree::build(flat);
    let per_point: Vec<(f64, [f64; 2])> = flat
        .par_iter()
        .map(|&pt| {
            let mut sum = 0.0;
            let mut grad = [0.0, 0.0];
            tree.accumulate(0, pt, eps2, &mut sum, &mut grad);
            (sum, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(flat.len());
    for (s, g) in per_point {
        total += s;
        grads.push(g);
    }
    (total, grads, 0)
}

fn repulsion_value_barnes_hut(flat: &[[f64; 2]], eps2: f64) -> f64 {
    let tree = QuadTree::build(flat);
    let partials: Vec<f64> = flat
        .par_iter()
        .map(|&pt| {
            let mut sum = 0.0;
            let mut grad = [0.0, 0.0];
            tree.accumulate(0, pt, eps2, &mut sum, &mut grad);
            sum
        })
        .collect();
    partials.iter().sum()
}

// ---------------------------------------------------------------------
// Initialization and resampling.
// ---------------------------------------------------------------------

/// Build the initial spokes: straight in-out lines through the origin, one
/// per shot, spanning the full normalized k-space.
pub fn init_trajectory(kind: &InitKind, spec: &TrajectorySpec) -> Result<Array3<f64>> {
    let nc = spec.n_shots;
    let ns = spec.n_samples;
    match kind {
        InitKind::Given(points) => {
            if points.dim() != (nc, ns, 2) {
                return Err(Error::ShapeMismatch(format!(
                    "given init {:?} does not match spec [{nc}, {ns}, 2]",
                    points.dim()
                )));
            }
            Ok(points.clone())
        }
        InitKind::RadialInOut | InitKind::GoldenAngleRadial => {
            let golden = matches!(kind, InitKind::GoldenAngleRadial);
            let mut pts = Array3::zeros((nc, ns, 2));
            let mid = ns / 2;
            for i in 0..nc {
                let theta = if golden {
                    let inc = std::f64::consts::PI * (5.0_f64.sqrt() - 1.0) / 2.0;
                    (i as f64 * inc) % std::f64::consts::PI
                } else {
                    std::f64::consts::PI * i as f64 / nc as f64
                };
                let (sin, cos) = theta.sin_cos();
                for m in 0..ns {
                    // parameter hits 0 exactly at the anchored middle sample
                    let s = (m as f64 - mid as f64) / (ns - 1 - mid).max(mid) as f64;
                    pts[[i, m, 0]] = s * cos;
                    pts[[i, m, 1]] = s * sin;
                }
            }
            Ok(pts)
        }
    }
}

/// Keep every `factor`-th sample of each shot.
fn decimate(points: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (nc, ns, _) = points.dim();
    let ns_c = ns / factor;
    Array3::from_shape_fn((nc, ns_c, 2), |(i, m, ax)| points[[i, m * factor, ax]])
}

/// Double the per-shot sample count by midpoint interpolation.
fn upsample(points: &Array3<f64>) -> Array3<f64> {
    let (nc, ns, _) = points.dim();
    let mut out = Array3::zeros((nc, 2 * ns, 2));
    for i in 0..nc {
        for m in 0..ns {
            for ax in 0..2 {
                out[[i, 2 * m, ax]] = points[[i, m, ax]];
                out[[i, 2 * m + 1, ax]] = if m + 1 < ns {
                    0.5 * (points[[i, m, ax]] + points[[i, m + 1, ax]])
                } else {
                    points[[i, m, ax]]
                };
            }
        }
    }
    out
}

/// Expand raster samples to dwell-time resolution by linear interpolation
/// (`os` points per raster interval). The last raster interval is
/// extrapolated (gradient held) and clamped into Ω.
pub fn sample_dwell_points(t: &Trajectory, os: usize) -> Result<Array3<f64>> {
    if os < 1 {
        return Err(Error::Config("oversampling factor must be >= 1".into()));
    }
    let (nc, ns, _) = t.points.dim();
    let total = ns * os;
    let mut out = Array3::zeros((nc, total, 2));
    for i in 0..nc {
        for q in 0..total {
            let f = q as f64 / os as f64;
            let i0 = f.floor() as usize;
            for ax in 0..2 {
                let v = if i0 + 1 < ns {
                    let frac = f - i0 as f64;
                    t.points[[i, i0, ax]] * (1.0 - frac) + t.points[[i, i0 + 1, ax]] * frac
                } else {
                    let over = f - (ns - 1) as f64;
                    let last = t.points[[i, ns - 1, ax]];
                    let slope = last - t.points[[i, ns - 2, ax]];
                    (last + over * slope).clamp(-1.0, 1.0)
                };
                out[[i, q, ax]] = v;
            }
        }
    }
    Ok(out)
}

/// Coefficient of variation of nearest-neighbor distances (local
/// uniformity diagnostic reported by the CLI, not asserted anywhere).
pub fn nearest_neighbor_cv(points: &Array3<f64>) -> f64 {
    let flat = iter_points(points);
    let p = flat.len();
    if p < 2 {
        return 0.0;
    }
    let nn: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..p {
                if i != j {
                    let dx = flat[i][0] - flat[j][0];
                    let dy = flat[i][1] - flat[j][1];
                    best = best.min(dx * dx + dy * dy);
                }
            }
            best.sqrt()
        })
        .collect();
    let mean = nn.iter().sum::<f64>() / p as f64;
    let var = nn.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / p as f64;
    var.sqrt() / mean
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    /// F of the projected initialization at full resolution.
    pub f_init: f64,
    pub f_final: f64,
    /// Objective after every accepted iteration, per level.
    pub trace: Vec<Vec<f64>>,
    pub nn_cv: f64,
    pub jitter_restarts: usize,
}

/// Run the full multiresolution optimization: K̂ = S(ρ, Q, K₀).
pub fn generate(
    rho: &DensityGrid,
    spec: &TrajectorySpec,
    q: &ConstraintSet,
    cfg: &SparklingConfig,
) -> Result<(Trajectory, GenerateReport)> {
    if cfg.n_levels < 1 || cfg.iters_per_level < 1 {
        return Err(Error::Config("n_levels and iters_per_level must be >= 1".into()));
    }
    let coarsest = 1usize << (cfg.n_levels - 1);
    if spec.n_samples % coarsest != 0 {
        return Err(Error::Config(format!(
            "n_samples {} must be divisible by 2^(n_levels-1) = {coarsest}",
            spec.n_samples
        )));
    }
    // keep every iterate inside Ω so the result is a valid trajectory
    let q_gen = if q.box_half_width.is_some() {
        q.clone()
    } else {
        q.clone().with_box(1.0)
    };

    // the optimizer descends on a smoothed surrogate (half-cell rounding
    // of the attraction cone tips, ε-smoothed repulsion); reported
    // objectives use the exact functional
    let field_exact = attraction_field(rho);
    let field = attraction_field_smoothed(rho, 1.0);
    let init_full = init_trajectory(&cfg.init, spec)?;
    let (k0_full, _) =
        project_points(&init_full, &q_gen, cfg.proj_max_iter, cfg.proj_tol, None)?;
    let f_init = objective_value(&k0_full, &field_exact);
    let eps = 1e-2 * q.step_bound;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jitter_restarts = 0usize;
    let mut trace = Vec::with_capacity(cfg.n_levels);
    let mut points = decimate(&k0_full, coarsest);

    for level in 0..cfg.n_levels {
        let factor = (1usize << (cfg.n_levels - 1 - level)) as f64;
        let q_level = level_constraints(&q_gen, spec, factor as usize);
        let mut warm = Vec::new();
        let (proj, _) =
            project_points(&points, &q_level, cfg.proj_max_iter, cfg.proj_tol, Some(&mut warm))?;
        points = proj;

        let mut escapes = 0usize;
        let mut level_trace = Vec::with_capacity(cfg.iters_per_level);
        let eval = objective_and_gradient_smoothed(&points, &field, eps);
        if !eval.value.is_finite() {
            return Err(Error::Diverged { epoch: level, detail: "non-finite objective".into() });
        }
        let grad_inf = eval
            .gradient
            .iter()
            .map(|g| g.abs())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let eta0 = cfg.step_factor * q_level.step_bound / grad_inf;
        let mut eta_state = eta0;
        let mut f_current = eval.value;
        let mut grad = eval.gradient;
        let mut coincident = eval.coincident_pairs;
        level_trace.push(f_current);

        for it in 0..cfg.iters_per_level {
            let p_total = points.len() / 2;
            if coincident * 100 > p_total * (p_total - 1) / 2 {
                // too many coincident pairs: jitter and re-project
                for v in points.iter_mut() {
                    *v += rng.random_range(-1e-9..1e-9);
                }
                let (proj, _) = project_points(
                    &points,
                    &q_level,
                    cfg.proj_max_iter,
                    cfg.proj_tol,
                    Some(&mut warm),
                )?;
                points = proj;
                jitter_restarts += 1;
            }
            // start from the last accepted step, allowing regrowth
            let mut eta = (2.0 * eta_state).min(eta0) / (1.0 + cfg.step_decay * it as f64);
            let mut accepted = false;
            for _ in 0..20 {
                let candidate = Array3::from_shape_fn(points.raw_dim(), |idx| {
                    points[idx] - eta * grad[idx]
                });
                let (projected, _) = project_points(
                    &candidate,
                    &q_level,
                    cfg.proj_max_iter,
                    cfg.proj_tol,
                    Some(&mut warm),
                )?;
                let f_cand = objective_value_smoothed(&projected, &field, eps);
                if !f_cand.is_finite() {
                    return Err(Error::Diverged {
                        epoch: it,
                        detail: format!("objective became {f_cand} at level {level}"),
                    });
                }
                if f_cand < f_current {
                    points = projected;
                    f_current = f_cand;
                    eta_state = eta;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                // line search pinned at a kink of the surrogate: jitter
                // below the grid scale, re-project and continue
                if escapes >= 3 {
                    break;
                }
                escapes += 1;
                jitter_restarts += 1;
                let h = 2.0 / field.n as f64;
                for v in points.iter_mut() {
                    *v += rng.random_range(-0.25 * h..0.25 * h);
                }
                let (proj, _) = project_points(
                    &points,
                    &q_level,
                    cfg.proj_max_iter,
                    cfg.proj_tol,
                    Some(&mut warm),
                )?;
                points = proj;
                f_current = objective_value_smoothed(&points, &field, eps);
                eta_state = eta0;
            }
            level_trace.push(f_current);
            let eval = objective_and_gradient_smoothed(&points, &field, eps);
            grad = eval.gradient;
            coincident = eval.coincident_pairs;
        }
        trace.push(level_trace);
        if level + 1 < cfg.n_levels {
            points = upsample(&points);
        }
    }

    let (final_points, _) = project_points(&points, &q_gen, cfg.proj_max_iter, cfg.proj_tol, None)?;
    let f_final = objective_value(&final_points, &field_exact);
    let nn_cv = nearest_neighbor_cv(&final_points);
    let trajectory = Trajectory::new(final_points, spec.clone())?;
    Ok((
        trajectory,
        GenerateReport { f_init, f_final, trace, nn_cv, jitter_restarts },
    ))
}

/// Constraint set for a decimated level: coarser raster time scales the
/// step bound linearly and the acceleration bound quadratically; anchor
/// sample indices shrink by the decimation factor.
fn level_constraints(q: &ConstraintSet, spec: &TrajectorySpec, factor: usize) -> ConstraintSet {
    let ns_level = spec.n_samples / factor;
    ConstraintSet {
        step_bound: q.step_bound * factor as f64,
        accel_bound: q.accel_bound * (factor * factor) as f64,
        anchors: q
            .anchors
            .iter()
            .map(|a| Anchor {
                shot: a.shot,
                sample: (a.sample / factor).min(ns_level - 1),
                point: a.point,
            })
            .collect(),
        box_half_width: q.box_half_width,
    }
}
