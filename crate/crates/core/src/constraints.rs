//! The hardware constraint set (per-step speed bound, per-step
//! acceleration bound, optional affine anchor pins, optional box) and the
//! Euclidean projection onto it.
//!
//! Projection solves, independently per shot,
//!
//! ```text
//! min ½‖k − z‖²  s.t. ‖(D₁k)_m‖ ≤ a, ‖(D₂k)_m‖ ≤ b, k[anchor] = c, k ∈ box
//! ```
//!
//! by accelerated proximal ascent on the dual: the ball constraints are
//! dualized (their conjugates are norm terms whose prox is a shrinkage
//! implemented as projection onto L2 balls), while anchors and the box
//! stay in the primal where their projection is elementwise. The dual
//! gradient is Lipschitz with constant ≤ ‖D₁‖² + ‖D₂‖² ≤ 20, which fixes
//! the dual step size.

use ndarray::Array3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{HardwareConfig, Trajectory, TrajectorySpec};

/// Pin sample `sample` of shot `shot` to a fixed k-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub shot: usize,
    pub sample: usize,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// Per-step displacement bound α·Δt (normalized units).
    pub step_bound: f64,
    /// Per-step second-difference bound β·Δt² (normalized units).
    pub accel_bound: f64,
    pub anchors: Vec<Anchor>,
    /// Containment half-width; `Some(1.0)` keeps iterates inside Ω.
    pub box_half_width: Option<f64>,
}

impl ConstraintSet {
    pub fn new(step_bound: f64, accel_bound: f64) -> Result<Self> {
        if !(step_bound > 0.0 && step_bound.is_finite()) {
            return Err(Error::Config(format!("step_bound must be > 0, got {step_bound}")));
        }
        if !(accel_bound > 0.0 && accel_bound.is_finite()) {
            return Err(Error::Config(format!("accel_bound must be > 0, got {accel_bound}")));
        }
        Ok(ConstraintSet { step_bound, accel_bound, anchors: Vec::new(), box_half_width: None })
    }

    pub fn from_hardware(hw: &HardwareConfig) -> Result<Self> {
        hw.validate()?;
        Self::new(hw.speed_bound_per_step(), hw.accel_bound_per_step())
    }

    /// Pin the middle sample of every shot to the k-space origin
    /// (symmetric in-out shots with the echo at center).
    pub fn with_center_anchors(mut self, spec: &TrajectorySpec) -> Self {
        let mid = spec.n_samples / 2;
        self.anchors = (0..spec.n_shots)
            .map(|shot| Anchor { shot, sample: mid, point: [0.0, 0.0] })
            .collect();
        self
    }

    pub fn with_box(mut self, half_width: f64) -> Self {
        self.box_half_width = Some(half_width);
        self
    }

    fn check_anchor_indices(&self, n_shots: usize, n_samples: usize) -> Result<()> {
        for a in &self.anchors {
            if a.shot >= n_shots || a.sample >= n_samples {
                return Err(Error::Config(format!(
                    "anchor ({}, {}) outside trajectory [{n_shots}, {n_samples}]",
                    a.shot, a.sample
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub max_speed_ratio: f64,
    pub max_accel_ratio: f64,
    /// (shot, step) attaining the worst speed ratio.
    pub worst_speed: (usize, usize),
    /// (shot, step) attaining the worst acceleration ratio.
    pub worst_accel: (usize, usize),
    pub max_anchor_dev: f64,
    pub max_box_excess: f64,
}

/// Check every per-step bound, anchor and box constraint.
///
/// Feasible iff every speed and acceleration ratio is ≤ 1+tol, anchors
/// hold to tol, and (when a box is set) no coordinate exceeds it by tol.
pub fn is_feasible(t: &Trajectory, q: &ConstraintSet, tol: f64) -> Result<FeasibilityReport> {
    let (nc, ns, _) = t.points.dim();
    q.check_anchor_indices(nc, ns)?;
    let mut max_speed = 0.0_f64;
    let mut max_accel = 0.0_f64;
    let mut worst_speed = (0, 0);
    let mut worst_accel = (0, 0);
    for i in 0..nc {
        for m in 0..ns - 1 {
            let dx = t.points[[i, m + 1, 0]] - t.points[[i, m, 0]];
            let dy = t.points[[i, m + 1, 1]] - t.points[[i, m, 1]];
            let ratio = (dx * dx + dy * dy).sqrt() / q.step_bound;
            if ratio > max_speed {
                max_speed = ratio;
                worst_speed = (i, m);
            }
        }
        for m in 0..ns - 2 {
            let dx = t.points[[i, m + 2, 0]] - 2.0 * t.points[[i, m + 1, 0]] + t.points[[i, m, 0]];
            let dy = t.points[[i, m + 2, 1]] - 2.0 * t.points[[i, m + 1, 1]] + t.points[[i, m, 1]];
            let ratio = (dx * dx + dy * dy).sqrt() / q.accel_bound;
            if ratio > max_accel {
                max_accel = ratio;
                worst_accel = (i, m);
            }
        }
    }
    let mut max_anchor_dev = 0.0_f64;
    for a in &q.anchors {
        let dx = t.points[[a.shot, a.sample, 0]] - a.point[0];
        let dy = t.points[[a.shot, a.sample, 1]] - a.point[1];
        max_anchor_dev = max_anchor_dev.max((dx * dx + dy * dy).sqrt());
    }
    let mut max_box_excess = 0.0_f64;
    if let Some(h) = q.box_half_width {
        for &v in t.points.iter() {
            max_box_excess = max_box_excess.max(v.abs() - h);
        }
        max_box_excess = max_box_excess.max(0.0);
    }
    let feasible = max_speed <= 1.0 + tol
        && max_accel <= 1.0 + tol
        && max_anchor_dev <= tol
        && max_box_excess <= tol;
    Ok(FeasibilityReport {
        feasible,
        max_speed_ratio: max_speed,
        max_accel_ratio: max_accel,
        worst_speed,
        worst_accel,
        max_anchor_dev,
        max_box_excess,
    })
}

#[derive(Debug, Clone)]
pub struct ProjectionInfo {
    pub iterations: usize,
    /// Worst relative constraint violation of the returned point.
    pub max_rel_violation: f64,
    /// Duality-gap certificate for ½‖out − z‖².
    pub certificate_gap: f64,
    pub distance_sq: f64,
}

/// Dual variables of one shot's projection, reusable as a warm start.
#[derive(Debug, Clone, Default)]
pub(crate) struct DualState {
    lam1: Vec<f64>,
    lam2: Vec<f64>,
}

/// Euclidean projection of a trajectory onto the constraint set.
///
/// Shots project independently (and in parallel). Returns the projected
/// trajectory and convergence diagnostics; if `z` is already feasible the
/// output equals `z`.
pub fn project(
    z: &Trajectory,
    q: &ConstraintSet,
    max_iter: usize,
    tol: f64,
) -> Result<(Trajectory, ProjectionInfo)> {
    let (points, info) = project_points(&z.points, q, max_iter, tol, None)?;
    let t = Trajectory::new(points, z.spec.clone())?;
    Ok((t, info))
}

/// Points-level projection; `warm` carries per-shot dual states across
/// repeated projections of nearby inputs.
pub(crate) fn project_points(
    z: &Array3<f64>,
    q: &ConstraintSet,
    max_iter: usize,
    tol: f64,
    warm: Option<&mut Vec<DualState>>,
) -> Result<(Array3<f64>, ProjectionInfo)> {
    let (nc, ns, _) = z.dim();
    q.check_anchor_indices(nc, ns)?;
    let mut states: Vec<DualState> = match &warm {
        Some(w) if w.len() == nc => (*w).clone(),
        _ => vec![DualState::default(); nc],
    };

    let shots: Vec<(Vec<f64>, ShotOutcome, DualState)> = (0..nc)
        .into_par_iter()
        .map(|i| {
            let mut zi = Vec::with_capacity(2 * ns);
            for m in 0..ns {
                zi.push(z[[i, m, 0]]);
                zi.push(z[[i, m, 1]]);
            }
            let anchors: Vec<(usize, [f64; 2])> = q
                .anchors
                .iter()
                .filter(|a| a.shot == i)
                .map(|a| (a.sample, a.point))
                .collect();
            let mut state = states[i].clone();
            let outcome = project_shot(&zi, ns, q, &anchors, max_iter, tol, &mut state);
            (zi, outcome, state)
        })
        .collect();

    let mut out = Array3::zeros((nc, ns, 2));
    let mut info = ProjectionInfo {
        iterations: 0,
        max_rel_violation: 0.0,
        certificate_gap: 0.0,
        distance_sq: 0.0,
    };
    let mut failed: Option<f64> = None;
    for (i, (zi, outcome, state)) in shots.into_iter().enumerate() {
        for m in 0..ns {
            out[[i, m, 0]] = outcome.k[2 * m];
            out[[i, m, 1]] = outcome.k[2 * m + 1];
        }
        info.iterations = info.iterations.max(outcome.iterations);
        info.max_rel_violation = info.max_rel_violation.max(outcome.rel_violation);
        info.certificate_gap = info.certificate_gap.max(outcome.gap);
        info.distance_sq += zi
            .iter()
            .zip(outcome.k.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        if !outcome.converged {
            failed = Some(failed.unwrap_or(0.0).max(outcome.rel_violation));
        }
        states[i] = state;
    }
    if let Some(w) = warm {
        *w = states;
    }
    if let Some(residual) = failed {
        return Err(Error::ProjectionFailed {
            iterations: max_iter,
            residual,
            best: out.iter().cloned().collect(),
        });
    }
    Ok((out, info))
}

struct ShotOutcome {
    k: Vec<f64>,
    iterations: usize,
    rel_violation: f64,
    gap: f64,
    converged: bool,
}

/// k̂(λ) = P_C(z − D₁ᵀλ₁ − D₂ᵀλ₂) with C the anchor/box set.
fn primal_point(
    z: &[f64],
    ns: usize,
    lam1: &[f64],
    lam2: &[f64],
    anchors: &[(usize, [f64; 2])],
    box_half: Option<f64>,
    k: &mut [f64],
) {
    k.copy_from_slice(z);
    // k -= D1^T lam1 : (D1^T λ)[j] = λ[j-1] − λ[j]
    for m in 0..ns - 1 {
        for ax in 0..2 {
            let l = lam1[2 * m + ax];
            k[2 * m + ax] += l;
            k[2 * (m + 1) + ax] -= l;
        }
    }
    // k -= D2^T lam2 : μ[m] contributes (+1, −2, +1) at samples m, m+1, m+2
    for m in 0..ns - 2 {
        for ax in 0..2 {
            let l = lam2[2 * m + ax];
            k[2 * m + ax] -= l;
            k[2 * (m + 1) + ax] += 2.0 * l;
            k[2 * (m + 2) + ax] -= l;
        }
    }
    if let Some(h) = box_half {
        for v in k.iter_mut() {
            *v = v.clamp(-h, h);
        }
    }
    for &(s, p) in anchors {
        k[2 * s] = p[0];
        k[2 * s + 1] = p[1];
    }
}

fn diff1(k: &[f64], ns: usize, d: &mut [f64]) {
    for m in 0..ns - 1 {
        d[2 * m] = k[2 * (m + 1)] - k[2 * m];
        d[2 * m + 1] = k[2 * (m + 1) + 1] - k[2 * m + 1];
    }
}

fn diff2(k: &[f64], ns: usize, d: &mut [f64]) {
    for m in 0..ns - 2 {
        d[2 * m] = k[2 * m] - 2.0 * k[2 * (m + 1)] + k[2 * (m + 2)];
        d[2 * m + 1] = k[2 * m + 1] - 2.0 * k[2 * (m + 1) + 1] + k[2 * (m + 2) + 1];
    }
}

fn max_rel_violation(d1: &[f64], d2: &[f64], a: f64, b: f64) -> f64 {
    let mut worst = 0.0_f64;
    for m in 0..d1.len() / 2 {
        let n = (d1[2 * m] * d1[2 * m] + d1[2 * m + 1] * d1[2 * m + 1]).sqrt();
        worst = worst.max((n - a) / a);
    }
    for m in 0..d2.len() / 2 {
        let n = (d2[2 * m] * d2[2 * m] + d2[2 * m + 1] * d2[2 * m + 1]).sqrt();
        worst = worst.max((n - b) / b);
    }
    worst.max(0.0)
}

#[allow(clippy::too_many_arguments)]
fn project_shot(
    z: &[f64],
    ns: usize,
    q: &ConstraintSet,
    anchors: &[(usize, [f64; 2])],
    max_iter: usize,
    tol: f64,
    state: &mut DualState,
) -> ShotOutcome {
    let a = q.step_bound;
    let b = q.accel_bound;
    let n1 = 2 * (ns - 1);
    let n2 = 2 * (ns - 2);
    if state.lam1.len() != n1 || state.lam2.len() != n2 {
        state.lam1 = vec![0.0; n1];
        state.lam2 = vec![0.0; n2];
    }
    // step size from the dual Lipschitz bound ‖D₁‖² + ‖D₂‖² ≤ 4 + 16
    let tau = 1.0 / 20.0;

    let mut lam1 = state.lam1.clone();
    let mut lam2 = state.lam2.clone();
    let mut lam1_prev = lam1.clone();
    let mut lam2_prev = lam2.clone();
    let mut y1 = lam1.clone();
    let mut y2 = lam2.clone();
    let mut t_momentum = 1.0_f64;

    let mut k = vec![0.0; 2 * ns];
    let mut d1 = vec![0.0; n1];
    let mut d2 = vec![0.0; n2];

    let mut best = ShotOutcome {
        k: z.to_vec(),
        iterations: 0,
        rel_violation: f64::INFINITY,
        gap: f64::INFINITY,
        converged: false,
    };

    for iter in 0..max_iter {
        // ascent step from the momentum point
        primal_point(z, ns, &y1, &y2, anchors, q.box_half_width, &mut k);
        diff1(&k, ns, &mut d1);
        diff2(&k, ns, &mut d2);
        lam1_prev.copy_from_slice(&lam1);
        lam2_prev.copy_from_slice(&lam2);
        for m in 0..ns - 1 {
            let vx = y1[2 * m] + tau * d1[2 * m];
            let vy = y1[2 * m + 1] + tau * d1[2 * m + 1];
            let norm = (vx * vx + vy * vy).sqrt();
            let shrink = if norm > tau * a { 1.0 - tau * a / norm } else { 0.0 };
            lam1[2 * m] = vx * shrink;
            lam1[2 * m + 1] = vy * shrink;
        }
        for m in 0..ns - 2 {
            let vx = y2[2 * m] + tau * d2[2 * m];
            let vy = y2[2 * m + 1] + tau * d2[2 * m + 1];
            let norm = (vx * vx + vy * vy).sqrt();
            let shrink = if norm > tau * b { 1.0 - tau * b / norm } else { 0.0 };
            lam2[2 * m] = vx * shrink;
            lam2[2 * m + 1] = vy * shrink;
        }
        // adaptive restart: drop momentum when it opposes progress
        let mut restart_dot = 0.0;
        for j in 0..n1 {
            restart_dot += (y1[j] - lam1[j]) * (lam1[j] - lam1_prev[j]);
        }
        for j in 0..n2 {
            restart_dot += (y2[j] - lam2[j]) * (lam2[j] - lam2_prev[j]);
        }
        if restart_dot > 0.0 {
            t_momentum = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_momentum * t_momentum).sqrt());
        let beta = (t_momentum - 1.0) / t_next;
        for j in 0..n1 {
            y1[j] = lam1[j] + beta * (lam1[j] - lam1_prev[j]);
        }
        for j in 0..n2 {
            y2[j] = lam2[j] + beta * (lam2[j] - lam2_prev[j]);
        }
        t_momentum = t_next;

        // candidate output at the actual dual iterate
        primal_point(z, ns, &lam1, &lam2, anchors, q.box_half_width, &mut k);
        diff1(&k, ns, &mut d1);
        diff2(&k, ns, &mut d2);
        let violation = max_rel_violation(&d1, &d2, a, b);
        // gap = f(k̂) − q(λ) = aΣ‖λ1‖ + bΣ‖λ2‖ − ⟨λ, Dk̂⟩
        let mut gap = 0.0;
        for m in 0..ns - 1 {
            let ln = (lam1[2 * m] * lam1[2 * m] + lam1[2 * m + 1] * lam1[2 * m + 1]).sqrt();
            gap += a * ln - (lam1[2 * m] * d1[2 * m] + lam1[2 * m + 1] * d1[2 * m + 1]);
        }
        for m in 0..ns - 2 {
            let ln = (lam2[2 * m] * lam2[2 * m] + lam2[2 * m + 1] * lam2[2 * m + 1]).sqrt();
            gap += b * ln - (lam2[2 * m] * d2[2 * m] + lam2[2 * m + 1] * d2[2 * m + 1]);
        }
        let dist_sq: f64 = z.iter().zip(k.iter()).map(|(u, v)| (u - v) * (u - v)).sum();

        if violation < best.rel_violation
            || (violation <= best.rel_violation && gap < best.gap)
        {
            best.k.copy_from_slice(&k);
            best.rel_violation = violation;
            best.gap = gap;
            best.iterations = iter + 1;
        }
        if violation <= 0.5 * tol && gap.abs() <= tol * (1.0 + 0.5 * dist_sq) {
            best.converged = true;
            best.k.copy_from_slice(&k);
            best.rel_violation = violation;
            best.gap = gap;
            best.iterations = iter + 1;
            break;
        }
    }
    state.lam1.copy_from_slice(&lam1);
    state.lam2.copy_from_slice(&lam2);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::HardwareConfig;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(nc: usize, ns: usize) -> TrajectorySpec {
        TrajectorySpec::new(nc, ns, HardwareConfig::default_scanner()).unwrap()
    }

    fn feasible_random_trajectory(nc: usize, ns: usize, seed: u64, q: &ConstraintSet) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Array3::zeros((nc, ns, 2));
        for i in 0..nc {
            let mut x = rng.random_range(-0.3..0.3);
            let mut y = rng.random_range(-0.3..0.3);
            for m in 0..ns {
                pts[[i, m, 0]] = x;
                pts[[i, m, 1]] = y;
                // random walk with tiny steps, well inside both bounds
                x += rng.random_range(-0.2..0.2) * q.step_bound.min(q.accel_bound);
                y += rng.random_range(-0.2..0.2) * q.step_bound.min(q.accel_bound);
            }
        }
        Trajectory::new(pts, spec(nc, ns)).unwrap()
    }

    #[test]
    fn constant_trajectory_is_feasible_with_zero_ratios() {
        let q = ConstraintSet::from_hardware(&HardwareConfig::default_scanner()).unwrap();
        let t = Trajectory::new(Array3::from_elem((2, 8, 2), 0.1), spec(2, 8)).unwrap();
        let rep = is_feasible(&t, &q, 0.0).unwrap();
        assert!(rep.feasible);
        assert_eq!(rep.max_speed_ratio, 0.0);
        assert_eq!(rep.max_accel_ratio, 0.0);
    }

    #[test]
    fn boundary_step_feasible_at_tol_zero() {
        // power-of-two bound so k·a is exact in f64
        let a = 0.015625;
        let q = ConstraintSet::new(a, 1.0).unwrap();
        let ns = 6;
        let mut pts = Array3::zeros((1, ns, 2));
        for m in 0..ns {
            pts[[0, m, 0]] = m as f64 * a;
        }
        let t = Trajectory::new(pts.clone(), spec(1, ns)).unwrap();
        let rep = is_feasible(&t, &q, 0.0).unwrap();
        assert!(rep.feasible, "exact boundary should pass at tol 0: {rep:?}");
        assert_eq!(rep.max_speed_ratio, 1.0);

        pts.mapv_inplace(|v| v * 1.01);
        let t = Trajectory::new(pts, spec(1, ns)).unwrap();
        assert!(!is_feasible(&t, &q, 0.0).unwrap().feasible);
    }

    #[test]
    fn paper_radial_spoke_is_feasible() {
        // corner-to-corner spoke in Ns=512 steps: step 2√2/511 << α·Δt
        let hw = HardwareConfig::default_scanner();
        let q = ConstraintSet::from_hardware(&hw).unwrap();
        let ns = 512;
        let mut pts = Array3::zeros((1, ns, 2));
        for m in 0..ns {
            let s = -1.0 + 2.0 * m as f64 / (ns - 1) as f64;
            pts[[0, m, 0]] = s;
            pts[[0, m, 1]] = s;
        }
        let t = Trajectory::new(pts, spec(1, ns)).unwrap();
        let rep = is_feasible(&t, &q, 0.0).unwrap();
        assert!(rep.feasible);
        let step = 2.0 * std::f64::consts::SQRT_2 / 511.0;
        let expected = step / hw.speed_bound_per_step();
        assert!((rep.max_speed_ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn feasible_input_projects_to_itself() {
        let q = ConstraintSet::from_hardware(&HardwareConfig::default_scanner()).unwrap();
        let t = feasible_random_trajectory(3, 20, 42, &q);
        assert!(is_feasible(&t, &q, 0.0).unwrap().feasible);
        let (p, info) = project(&t, &q, 5000, 1e-8).unwrap();
        let err = t
            .points
            .iter()
            .zip(p.points.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err <= 1e-9, "feasible input moved by {err}");
        assert_eq!(info.iterations, 1);
    }

    #[test]
    fn collinear_overspeed_shrinks_to_bound() {
        let a = 0.01;
        let q = ConstraintSet::new(a, 10.0 * a).unwrap();
        let mut pts = Array3::zeros((1, 3, 2));
        pts[[0, 0, 0]] = -2.0 * a;
        pts[[0, 2, 0]] = 2.0 * a;
        let t = Trajectory::new(pts, spec(1, 3)).unwrap();
        let (p, _) = project(&t, &q, 5000, 1e-10).unwrap();
        assert!((p.points[[0, 0, 0]] + a).abs() < 1e-7, "left point {}", p.points[[0, 0, 0]]);
        assert!(p.points[[0, 1, 0]].abs() < 1e-9, "midpoint {}", p.points[[0, 1, 0]]);
        assert!((p.points[[0, 2, 0]] - a).abs() < 1e-7);
        for m in 0..3 {
            assert!(p.points[[0, m, 1]].abs() < 1e-12);
        }
    }

    #[test]
    fn idempotence() {
        let q = ConstraintSet::new(0.02, 0.004).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Array3::zeros((2, 12, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let t = Trajectory::new(pts, spec(2, 12)).unwrap();
        let (p1, _) = project(&t, &q, 50000, 1e-9).unwrap();
        let (p2, _) = project(&p1, &q, 50000, 1e-9).unwrap();
        let err = p1
            .points
            .iter()
            .zip(p2.points.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err <= 1e-8, "projection not idempotent: {err}");
    }

    #[test]
    fn non_expansive_on_random_pairs() {
        let q = ConstraintSet::new(0.05, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut za = Array3::zeros((1, 8, 2));
            let mut zb = Array3::zeros((1, 8, 2));
            for v in za.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
            for v in zb.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
            let ta = Trajectory::new(za.clone(), spec(1, 8)).unwrap();
            let tb = Trajectory::new(zb.clone(), spec(1, 8)).unwrap();
            let (pa, _) = project(&ta, &q, 50000, 1e-9).unwrap();
            let (pb, _) = project(&tb, &q, 50000, 1e-9).unwrap();
            let din: f64 = za.iter().zip(zb.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let dout: f64 =
                pa.points.iter().zip(pb.points.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(
                dout.sqrt() <= din.sqrt() * (1.0 + 1e-6),
                "expansion: {} > {}",
                dout.sqrt(),
                din.sqrt()
            );
        }
    }

    #[test]
    fn projection_is_feasible_at_tight_tol() {
        let q = ConstraintSet::new(0.03, 0.006).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts = Array3::zeros((3, 16, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(-0.9..0.9);
        }
        let t = Trajectory::new(pts, spec(3, 16)).unwrap();
        let (p, info) = project(&t, &q, 50000, 1e-8).unwrap();
        assert!(is_feasible(&p, &q, 1e-6).unwrap().feasible);
        assert!(info.certificate_gap <= 1e-8 * (1.0 + 0.5 * info.distance_sq));
    }

    #[test]
    fn shots_project_independently() {
        let q = ConstraintSet::new(0.02, 0.004).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut pts = Array3::zeros((3, 10, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
        let joint = Trajectory::new(pts.clone(), spec(3, 10)).unwrap();
        let (pj, _) = project(&joint, &q, 50000, 1e-9).unwrap();
        for i in 0..3 {
            let mut single = Array3::zeros((1, 10, 2));
            for m in 0..10 {
                single[[0, m, 0]] = pts[[i, m, 0]];
                single[[0, m, 1]] = pts[[i, m, 1]];
            }
            let ts = Trajectory::new(single, spec(1, 10)).unwrap();
            let (ps, _) = project(&ts, &q, 50000, 1e-9).unwrap();
            for m in 0..10 {
                for ax in 0..2 {
                    assert_eq!(pj.points[[i, m, ax]], ps.points[[0, m, ax]]);
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Brute-force interior-point oracle for small shots.
    // Path-following Newton on ½‖x−z‖² − μ Σ log(r² − ‖d‖²), entirely
    // independent of the dual machinery above.
    // ------------------------------------------------------------------

    struct OracleProblem {
        z: Vec<f64>,
        ns: usize,
        a: f64,
        b: f64,
        anchored: Vec<Option<[f64; 2]>>,
    }

    fn constraint_rows(ns: usize) -> Vec<(Vec<(usize, f64)>, bool)> {
        let mut rows = Vec::new();
        for m in 0..ns - 1 {
            rows.push((vec![(m, -1.0), (m + 1, 1.0)], true));
        }
        for m in 0..ns - 2 {
            rows.push((vec![(m, 1.0), (m + 1, -2.0), (m + 2, 1.0)], false));
        }
        rows
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            for r in col + 1..n {
                let f = a[r][col] / d;
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in r + 1..n {
                s -= a[r][c] * x[c];
            }
            x[r] = s / a[r][r];
        }
        x
    }

    fn oracle_project(p: &OracleProblem) -> Vec<f64> {
        let ns = p.ns;
        let dim = 2 * ns;
        let rows = constraint_rows(ns);
        // strictly interior start: collapse to a single point (all
        // differences zero), at the anchor if present
        let anchor_point = p.anchored.iter().flatten().next().copied().unwrap_or({
            let mut cx = 0.0;
            let mut cy = 0.0;
            for m in 0..ns {
                cx += p.z[2 * m] / ns as f64;
                cy += p.z[2 * m + 1] / ns as f64;
            }
            [cx, cy]
        });
        let mut x = vec![0.0; dim];
        for m in 0..ns {
            x[2 * m] = anchor_point[0];
            x[2 * m + 1] = anchor_point[1];
        }
        for (m, anc) in p.anchored.iter().enumerate() {
            if let Some(pt) = anc {
                x[2 * m] = pt[0];
                x[2 * m + 1] = pt[1];
            }
        }
        let slack = |x: &[f64], row: &[(usize, f64)], r: f64| -> f64 {
            let mut dx = 0.0;
            let mut dy = 0.0;
            for &(idx, c) in row {
                dx += c * x[2 * idx];
                dy += c * x[2 * idx + 1];
            }
            r * r - (dx * dx + dy * dy)
        };
        let mut mu = 1e-2;
        while mu > 1e-13 {
            for _ in 0..80 {
                // gradient and Hessian
                let mut grad = vec![0.0; dim];
                let mut hess = vec![vec![0.0; dim]; dim];
                for j in 0..dim {
                    grad[j] = x[j] - p.z[j];
                    hess[j][j] = 1.0;
                }
                for (row, is_speed) in &rows {
                    let r = if *is_speed { p.a } else { p.b };
                    let mut dx = 0.0;
                    let mut dy = 0.0;
                    for &(idx, c) in row {
                        dx += c * x[2 * idx];
                        dy += c * x[2 * idx + 1];
                    }
                    let cval = r * r - (dx * dx + dy * dy);
                    for &(i1, c1) in row {
                        grad[2 * i1] += mu * 2.0 * c1 * dx / cval;
                        grad[2 * i1 + 1] += mu * 2.0 * c1 * dy / cval;
                        for &(i2, c2) in row {
                            let f = mu * 2.0 * c1 * c2;
                            hess[2 * i1][2 * i2] += f / cval + f * 2.0 * dx * dx / (cval * cval);
                            hess[2 * i1 + 1][2 * i2 + 1] +=
                                f / cval + f * 2.0 * dy * dy / (cval * cval);
                            hess[2 * i1][2 * i2 + 1] += f * 2.0 * dx * dy / (cval * cval);
                            hess[2 * i1 + 1][2 * i2] += f * 2.0 * dx * dy / (cval * cval);
                        }
                    }
                }
                // pin anchored coordinates
                for (m, anc) in p.anchored.iter().enumerate() {
                    if anc.is_some() {
                        for ax in 0..2 {
                            let j = 2 * m + ax;
                            grad[j] = 0.0;
                            for c in 0..dim {
                                hess[j][c] = 0.0;
                                hess[c][j] = 0.0;
                            }
                            hess[j][j] = 1.0;
                        }
                    }
                }
                let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gn < 1e-12 {
                    break;
                }
                let step = solve_dense(hess, grad.clone());
                // backtrack to stay strictly interior
                let mut alpha = 1.0;
                'search: for _ in 0..60 {
                    let trial: Vec<f64> =
                        x.iter().zip(step.iter()).map(|(xi, si)| xi - alpha * si).collect();
                    for (row, is_speed) in &rows {
                        let r = if *is_speed { p.a } else { p.b };
                        if slack(&trial, row, r) <= 0.0 {
                            alpha *= 0.5;
                            continue 'search;
                        }
                    }
                    x = trial;
                    break;
                }
            }
            mu *= 0.1;
        }
        x
    }

    #[test]
    fn matches_interior_point_oracle_on_small_shots() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..5 {
            let ns = 5;
            let a = 0.05;
            let b = 0.02;
            let q = ConstraintSet::new(a, b).unwrap();
            let mut pts = Array3::zeros((1, ns, 2));
            for v in pts.iter_mut() {
                *v = rng.random_range(-0.4..0.4);
            }
            let t = Trajectory::new(pts.clone(), spec(1, ns)).unwrap();
            let (proj, _) = project(&t, &q, 50000, 1e-10).unwrap();
            let oracle = oracle_project(&OracleProblem {
                z: pts.iter().cloned().collect(),
                ns,
                a,
                b,
                anchored: vec![None; ns],
            });
            for m in 0..ns {
                for ax in 0..2 {
                    let got = proj.points[[0, m, ax]];
                    let want = oracle[2 * m + ax];
                    assert!(
                        (got - want).abs() <= 1e-5,
                        "trial {trial}: point {m} axis {ax}: {got} vs oracle {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn anchored_projection_matches_oracle() {
        // shifted feasible shot, midpoint pinned to the origin
        let ns = 5;
        let a = 0.05;
        let b = 0.02;
        let mut q = ConstraintSet::new(a, b).unwrap();
        q.anchors.push(Anchor { shot: 0, sample: 2, point: [0.0, 0.0] });
        let mut pts = Array3::zeros((1, ns, 2));
        for m in 0..ns {
            pts[[0, m, 0]] = 0.30 + 0.01 * m as f64;
            pts[[0, m, 1]] = 0.20 - 0.008 * m as f64;
        }
        let t = Trajectory::new(pts.clone(), spec(1, ns)).unwrap();
        let (proj, _) = project(&t, &q, 50000, 1e-10).unwrap();
        assert!(proj.points[[0, 2, 0]].abs() < 1e-9);
        assert!(proj.points[[0, 2, 1]].abs() < 1e-9);
        let mut anchored = vec![None; ns];
        anchored[2] = Some([0.0, 0.0]);
        let oracle = oracle_project(&OracleProblem {
            z: pts.iter().cloned().collect(),
            ns,
            a,
            b,
            anchored,
        });
        for m in 0..ns {
            for ax in 0..2 {
                let got = proj.points[[0, m, ax]];
                let want = oracle[2 * m + ax];
                assert!(
                    (got - want).abs() <= 1e-5,
                    "point {m} axis {ax}: {got} vs oracle {want}"
                );
            }
        }
    }

    #[test]
    fn box_keeps_points_inside_omega() {
        let q = ConstraintSet::new(0.5, 0.5).unwrap().with_box(1.0);
        let mut pts = Array3::zeros((1, 5, 2));
        for m in 0..5 {
            pts[[0, m, 0]] = 0.9 + 0.02 * m as f64; // near the edge
        }
        // input points stay in [-1,1] but with a box-projected z slightly
        // outside we exercise the clamp inside project_points
        let mut z = pts.clone();
        z[[0, 4, 0]] = 0.999;
        let t = Trajectory::new(z, spec(1, 5)).unwrap();
        let (p, _) = project(&t, &q, 10000, 1e-9).unwrap();
        for &v in p.points.iter() {
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn anchor_out_of_range_rejected() {
        let mut q = ConstraintSet::new(0.1, 0.1).unwrap();
        q.anchors.push(Anchor { shot: 0, sample: 99, point: [0.0, 0.0] });
        let t = Trajectory::new(Array3::zeros((1, 5, 2)), spec(1, 5)).unwrap();
        assert!(is_feasible(&t, &q, 0.0).is_err());
        assert!(project(&t, &q, 100, 1e-8).is_err());
    }
}
