//! Differentiable lane-heading loss over multimodal predictions.
//!
//! The forward value is the per-sample off-yaw measure scaled by a weight.
//! Gradients flow only through the predicted segment headings; the raster
//! heading field and the intersection/off-map indicator are piecewise
//! constant in position and are treated as stop-gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angular_difference, midpoint, segment_heading, signed_residual, to_global, Point2, Pose,
    Trajectory,
};
use crate::metrics::{off_yaw_sample, PredictionSet};
use crate::raster::{HeadingRaster, RasterQuery};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Threshold below which deviations are legal, degrees.
    pub alpha_deg: f64,
    /// Loss weight.
    pub scale: f64,
    /// Width of an optional linear ramp above alpha, degrees. 0 keeps the
    /// hard gate.
    pub smooth_gate_width_deg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_deg: 45.0,
            scale: 1.0,
            smooth_gate_width_deg: 0.0,
        }
    }
}

/// Per-point loss gradient for one mode. Index 0 is the fixed current
/// position and always carries a zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGradient {
    pub d_points: Vec<[f64; 2]>,
}

impl TrajectoryGradient {
    fn zeros(n: usize) -> Self {
        Self {
            d_points: vec![[0.0, 0.0]; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.d_points
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Gated per-segment value in radians and its derivative w.r.t. the
/// angular difference.
fn gate(delta_rad: f64, alpha_rad: f64, width_rad: f64) -> (f64, f64) {
    if width_rad == 0.0 {
        if delta_rad <= alpha_rad {
            (0.0, 0.0)
        } else {
            (delta_rad, 1.0)
        }
    } else {
        let s = ((delta_rad - alpha_rad) / width_rad).clamp(0.0, 1.0);
        let ds = if delta_rad > alpha_rad && delta_rad < alpha_rad + width_rad {
            1.0 / width_rad
        } else {
            0.0
        };
        (delta_rad * s, s + delta_rad * ds)
    }
}

/// Forward loss value. With the default hard gate this is numerically the
/// per-sample off-yaw measure times the scale.
pub fn yaw_loss(preds: &PredictionSet, raster: &HeadingRaster, cfg: &LossConfig) -> Result<f64> {
    if cfg.smooth_gate_width_deg == 0.0 {
        return Ok(cfg.scale * off_yaw_sample(preds, raster, cfg.alpha_deg)?);
    }
    let alpha_rad = cfg.alpha_deg.to_radians();
    let width_rad = cfg.smooth_gate_width_deg.to_radians();
    let m = preds.num_modes() as f64;
    let mut total = 0.0;
    for traj in &preds.trajectories {
        if traj.points.len() < 2 {
            return Err(Error::DegenerateTrajectory);
        }
        let n = traj.num_segments();
        let mut sum = 0.0;
        for i in 0..n {
            if let Some(term) = segment_term(traj, i, raster, &preds.ego, cfg.alpha_deg) {
                let (v, _) = gate(term.delta_rad, alpha_rad, width_rad);
                sum += v;
            }
        }
        total += sum / n as f64;
    }
    Ok(cfg.scale * total / m)
}

struct SegmentTerm {
    delta_rad: f64,
    /// Sign of the circular residual θ − θ_nl; zero exactly at 180°.
    residual_sign: f64,
    dx: f64,
    dy: f64,
}

fn segment_term(
    traj: &Trajectory,
    i: usize,
    raster: &HeadingRaster,
    ego: &Pose,
    _alpha_deg: f64,
) -> Option<SegmentTerm> {
    let a = traj.points[i];
    let b = traj.points[i + 1];
    let theta_local = segment_heading(a, b)?;
    let mid_global = ego.local_to_global(midpoint(a, b));
    let theta_nl = match raster.query(mid_global) {
        RasterQuery::Heading(h) => h,
        _ => return None,
    };
    let theta_global = to_global(theta_local, ego);
    let r = signed_residual(theta_global, theta_nl);
    let sign = if r == 180.0 {
        0.0
    } else if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    Some(SegmentTerm {
        delta_rad: angular_difference(theta_global, theta_nl).to_radians(),
        residual_sign: sign,
        dx: b.x - a.x,
        dy: b.y - a.y,
    })
}

/// Analytic gradient of `yaw_loss` w.r.t. every trajectory point of every
/// mode. Each point receives contributions from its two adjacent segments;
/// masked, stationary and under-threshold segments contribute nothing.
pub fn yaw_loss_grad(
    preds: &PredictionSet,
    raster: &HeadingRaster,
    cfg: &LossConfig,
) -> Result<Vec<TrajectoryGradient>> {
    let alpha_rad = cfg.alpha_deg.to_radians();
    let width_rad = cfg.smooth_gate_width_deg.to_radians();
    let m = preds.num_modes() as f64;
    let mut grads = Vec::with_capacity(preds.num_modes());
    for traj in &preds.trajectories {
        if traj.points.len() < 2 {
            return Err(Error::DegenerateTrajectory);
        }
        let n = traj.num_segments();
        let mut grad = TrajectoryGradient::zeros(traj.points.len());
        let weight = cfg.scale / (m * n as f64);
        for i in 0..n {
            let term = match segment_term(traj, i, raster, &preds.ego, cfg.alpha_deg) {
                Some(t) => t,
                None => continue,
            };
            let (_, dgate) = gate(term.delta_rad, alpha_rad, width_rad);
            if dgate == 0.0 || term.residual_sign == 0.0 {
                continue;
            }
            // θ = atan2(Δx, Δy); derivatives in radians per meter
            let denom = term.dx * term.dx + term.dy * term.dy;
            let dtheta_dx2 = term.dy / denom;
            let dtheta_dy2 = -term.dx / denom;
            let coeff = weight * dgate * term.residual_sign;
            grad.d_points[i + 1][0] += coeff * dtheta_dx2;
            grad.d_points[i + 1][1] += coeff * dtheta_dy2;
            grad.d_points[i][0] -= coeff * dtheta_dx2;
            grad.d_points[i][1] -= coeff * dtheta_dy2;
        }
        // the current position is observed, not predicted
        grad.d_points[0] = [0.0, 0.0];
        grads.push(grad);
    }
    Ok(grads)
}

/// Outcome for one checked coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckFailure {
    pub mode: usize,
    pub point: usize,
    pub axis: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub excluded_gate_boundary: usize,
    pub excluded_cell_boundary: usize,
    pub excluded_antipodal: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn excluded(&self) -> usize {
        self.excluded_gate_boundary + self.excluded_cell_boundary + self.excluded_antipodal
    }

    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Exclusion bands where the loss is not differentiable (or numerically
/// treacherous): the gate boundary, raster cell edges under the segment
/// midpoints, and the antipodal residual where the gradient sign flips.
pub const GATE_BAND_DEG: f64 = 0.5;
pub const CELL_BAND_M: f64 = 1e-3;
/// The sign flip at 180° only bites when a perturbation of size h can cross
/// it, so this band stays much narrower than the gate band.
pub const ANTIPODAL_BAND_DEG: f64 = 0.05;

/// Compares the analytic gradient against central finite differences of
/// the forward loss, coordinate by coordinate. Coordinates inside a
/// declared exclusion band are counted but not judged.
pub fn grad_check(
    preds: &PredictionSet,
    raster: &HeadingRaster,
    cfg: &LossConfig,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = yaw_loss_grad(preds, raster, cfg)?;
    let mut report = GradCheckReport::default();
    let mut work = preds.clone();
    for mode in 0..preds.num_modes() {
        for point in 1..preds.trajectories[mode].points.len() {
            match coordinate_exclusion(preds, mode, point, raster, cfg) {
                Some(Exclusion::GateBoundary) => {
                    report.excluded_gate_boundary += 1;
                    continue;
                }
                Some(Exclusion::CellBoundary) => {
                    report.excluded_cell_boundary += 1;
                    continue;
                }
                Some(Exclusion::Antipodal) => {
                    report.excluded_antipodal += 1;
                    continue;
                }
                None => {}
            }
            for axis in 0..2 {
                report.checked += 1;
                let orig = get_coord(&work.trajectories[mode].points[point], axis);
                set_coord(&mut work.trajectories[mode].points[point], axis, orig + h);
                let plus = yaw_loss(&work, raster, cfg)?;
                set_coord(&mut work.trajectories[mode].points[point], axis, orig - h);
                let minus = yaw_loss(&work, raster, cfg)?;
                set_coord(&mut work.trajectories[mode].points[point], axis, orig);
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[mode].d_points[point][axis];
                let abs_err = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
                report.max_abs_error = report.max_abs_error.max(abs_err);
                report.max_rel_error = report.max_rel_error.max(rel_err);
                if rel_err <= tolerance || abs_err <= 1e-10 {
                    report.passed += 1;
                } else {
                    report.failures.push(GradCheckFailure {
                        mode,
                        point,
                        axis,
                        analytic: a,
                        numeric,
                        rel_error: rel_err,
                    });
                }
            }
        }
    }
    Ok(report)
}

enum Exclusion {
    GateBoundary,
    CellBoundary,
    Antipodal,
}

/// A coordinate is excluded when either adjacent segment sits too close to
/// a non-smooth feature of the loss.
fn coordinate_exclusion(
    preds: &PredictionSet,
    mode: usize,
    point: usize,
    raster: &HeadingRaster,
    cfg: &LossConfig,
) -> Option<Exclusion> {
    let traj = &preds.trajectories[mode];
    let segs = [point.checked_sub(1), Some(point)];
    for seg in segs.into_iter().flatten() {
        if seg + 1 >= traj.points.len() {
            continue;
        }
        let a = traj.points[seg];
        let b = traj.points[seg + 1];
        let mid_local = midpoint(a, b);
        let mid_global = preds.ego.local_to_global(mid_local);
        // cell-edge proximity, measured in the raster's local frame
        let local = raster.spec.origin_pose.global_to_local(mid_global);
        let res = raster.spec.resolution;
        for (coord, offset) in [
            (local.x, raster.spec.left_m),
            (local.y, raster.spec.behind_m),
        ] {
            let frac = ((coord + offset) / res).rem_euclid(1.0);
            if (frac * res).min((1.0 - frac) * res) < CELL_BAND_M {
                return Some(Exclusion::CellBoundary);
            }
        }
        let term = match segment_term(traj, seg, raster, &preds.ego, cfg.alpha_deg) {
            Some(t) => t,
            None => continue,
        };
        let delta_deg = term.delta_rad.to_degrees();
        if (delta_deg - cfg.alpha_deg).abs() < GATE_BAND_DEG {
            return Some(Exclusion::GateBoundary);
        }
        if cfg.smooth_gate_width_deg > 0.0
            && (delta_deg - cfg.alpha_deg - cfg.smooth_gate_width_deg).abs() < GATE_BAND_DEG
        {
            return Some(Exclusion::GateBoundary);
        }
        if (180.0 - delta_deg).abs() < ANTIPODAL_BAND_DEG {
            return Some(Exclusion::Antipodal);
        }
    }
    None
}

fn get_coord(p: &Point2, axis: usize) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

fn set_coord(p: &mut Point2, axis: usize, v: f64) {
    if axis == 0 {
        p.x = v;
    } else {
        p.y = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub yaw: f64,
    pub anchor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub refined: PredictionSet,
    pub trace: Vec<TraceRow>,
}

/// Default initial line-search step, meters per unit gradient.
pub const REFINE_INITIAL_LR: f64 = 0.1;
const REFINE_MAX_HALVINGS: usize = 20;

fn anchor_terms(current: &PredictionSet, initial: &PredictionSet) -> (f64, Vec<TrajectoryGradient>) {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(current.num_modes());
    for (cur, init) in current.trajectories.iter().zip(&initial.trajectories) {
        let mut g = TrajectoryGradient::zeros(cur.points.len());
        for i in 1..cur.points.len() {
            let dx = cur.points[i].x - init.points[i].x;
            let dy = cur.points[i].y - init.points[i].y;
            sum += dx * dx + dy * dy;
            count += 1;
            g.d_points[i] = [2.0 * dx, 2.0 * dy];
        }
        grads.push(g);
    }
    let count = count.max(1) as f64;
    for g in &mut grads {
        for d in &mut g.d_points {
            d[0] /= count;
            d[1] /= count;
        }
    }
    (sum / count, grads)
}

/// Gradient descent with backtracking line search on
/// `yaw_loss + anchor_weight * mean squared displacement from the initial
/// trajectories`. Point 0 of every mode stays fixed.
pub fn refine(
    preds: &PredictionSet,
    raster: &HeadingRaster,
    cfg: &LossConfig,
    anchor_weight: f64,
    steps: usize,
    lr: f64,
) -> Result<RefineResult> {
    let initial = preds.clone();
    let mut current = preds.clone();
    let mut trace = Vec::with_capacity(steps + 1);

    let eval = |p: &PredictionSet| -> Result<(f64, f64, f64)> {
        let yaw = yaw_loss(p, raster, cfg)?;
        let (anchor, _) = anchor_terms(p, &initial);
        Ok((yaw + anchor_weight * anchor, yaw, anchor_weight * anchor))
    };

    let mut step_size = lr;
    let (mut total, yaw, anchor) = eval(&current)?;
    if !total.is_finite() {
        return Err(Error::DivergedRefinement { step: 0 });
    }
    trace.push(TraceRow {
        step: 0,
        total,
        yaw,
        anchor,
    });

    for step in 1..=steps {
        let yaw_grads = yaw_loss_grad(&current, raster, cfg)?;
        let (_, anchor_grads) = anchor_terms(&current, &initial);
        let mut grads = yaw_grads;
        for (g, ag) in grads.iter_mut().zip(&anchor_grads) {
            for (d, ad) in g.d_points.iter_mut().zip(&ag.d_points) {
                d[0] += anchor_weight * ad[0];
                d[1] += anchor_weight * ad[1];
            }
        }
        if grads.iter().all(|g| g.max_abs() == 0.0) {
            trace.push(TraceRow {
                step,
                total,
                yaw: trace.last().unwrap().yaw,
                anchor: trace.last().unwrap().anchor,
            });
            continue;
        }

        let mut accepted = false;
        for _ in 0..=REFINE_MAX_HALVINGS {
            let mut candidate = current.clone();
            for (traj, g) in candidate.trajectories.iter_mut().zip(&grads) {
                for (i, p) in traj.points.iter_mut().enumerate().skip(1) {
                    p.x -= step_size * g.d_points[i][0];
                    p.y -= step_size * g.d_points[i][1];
                }
            }
            let (cand_total, cand_yaw, cand_anchor) = eval(&candidate)?;
            if !cand_total.is_finite() {
                return Err(Error::DivergedRefinement { step });
            }
            if cand_total <= total {
                current = candidate;
                total = cand_total;
                trace.push(TraceRow {
                    step,
                    total,
                    yaw: cand_yaw,
                    anchor: cand_anchor,
                });
                accepted = true;
                // the step carries over and grows, so a run of easy
                // acceptances does not stay stuck at a timid step size
                step_size = (step_size * 2.0).min(lr * 1024.0);
                break;
            }
            step_size /= 2.0;
        }
        if !accepted {
            // stuck at a local plateau; record and stop
            let last = *trace.last().unwrap();
            trace.push(TraceRow { step, ..last });
            break;
        }
    }

    Ok(RefineResult {
        refined: current,
        trace,
    })
}
