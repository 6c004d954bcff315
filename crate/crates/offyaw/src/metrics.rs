//! The evaluation suite: off-yaw measure/rate, off-road rate, minADE_k,
//! minFDE_k, and miss rate at 2 m, over multimodal prediction sets.
//!
//! All aggregates are arithmetic means of per-sample values; off-yaw values
//! are reported in radians, angles everywhere else stay in degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angular_difference, clip_threshold, midpoint, segment_heading, to_global, Pose, Trajectory,
};
use crate::raster::{HeadingRaster, RasterQuery};
use crate::scene::{RegionKind, Scene};

/// One sample's multimodal prediction: m candidate local-frame trajectories
/// with mode probabilities, anchored at the ego pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Trajectory>,
    pub probabilities: Vec<f64>,
    pub ego: Pose,
}

impl PredictionSet {
    pub fn new(trajectories: Vec<Trajectory>, probabilities: Vec<f64>, ego: Pose) -> Result<Self> {
        let set = Self {
            trajectories,
            probabilities,
            ego,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::InvalidPredictionSet("no modes".into()));
        }
        if self.trajectories.len() != self.probabilities.len() {
            return Err(Error::InvalidPredictionSet(
                "mode/probability count mismatch".into(),
            ));
        }
        if self.probabilities.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidPredictionSet(
                "probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPredictionSet(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let len = self.trajectories[0].points.len();
        let dt = self.trajectories[0].dt;
        if self
            .trajectories
            .iter()
            .any(|t| t.points.len() != len || t.dt != dt)
        {
            return Err(Error::InvalidPredictionSet(
                "modes must share length and dt".into(),
            ));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.trajectories.len()
    }

    /// Mode indices sorted by probability descending, ties by mode index.
    /// Truncated (clamped) to k.
    pub fn top_k_modes(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.num_modes()).collect();
        order.sort_by(|a, b| {
            self.probabilities[*b]
                .partial_cmp(&self.probabilities[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.truncate(k.min(self.num_modes()));
        order
    }
}

/// Evaluation knobs; defaults follow the usual benchmark setup (45°
/// threshold, k in {1, 5, 10}, 2 m miss radius, 12-step horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub alpha_deg: f64,
    pub k_values: Vec<usize>,
    pub miss_threshold_m: f64,
    pub horizon_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha_deg: 45.0,
            k_values: vec![1, 5, 10],
            miss_threshold_m: 2.0,
            horizon_steps: 12,
        }
    }
}

/// Per-trajectory off-yaw breakdown. `mean_rad` is the reported measure;
/// `sum_deg` is the raw unnormalized segment sum kept as a debug field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffYawDetail {
    pub mean_rad: f64,
    pub sum_deg: f64,
    pub intersection_midpoints: usize,
    pub off_map_midpoints: usize,
    pub stationary_segments: usize,
}

/// Off-yaw measure of one trajectory against a heading raster: the mean
/// over segments of the threshold-clipped angular deviation of the segment
/// heading from the nearest-lane heading at the segment midpoint, in
/// radians. Segments whose midpoints fall in an intersection or off the
/// map, and stationary segments, contribute zero.
pub fn off_yaw_measure(
    traj: &Trajectory,
    raster: &HeadingRaster,
    ego: &Pose,
    alpha_deg: f64,
) -> Result<f64> {
    Ok(off_yaw_detail(traj, raster, ego, alpha_deg)?.mean_rad)
}

pub fn off_yaw_detail(
    traj: &Trajectory,
    raster: &HeadingRaster,
    ego: &Pose,
    alpha_deg: f64,
) -> Result<OffYawDetail> {
    if traj.points.len() < 2 {
        return Err(Error::DegenerateTrajectory);
    }
    let n = traj.num_segments();
    let mut detail = OffYawDetail::default();
    let mut sum_rad = 0.0;
    for i in 0..n {
        let a = traj.points[i];
        let b = traj.points[i + 1];
        let theta_local = match segment_heading(a, b) {
            Some(h) => h,
            None => {
                detail.stationary_segments += 1;
                continue;
            }
        };
        let mid_global = ego.local_to_global(midpoint(a, b));
        let theta_global = to_global(theta_local, ego);
        let theta_nl = match raster.query(mid_global) {
            RasterQuery::Heading(h) => h,
            RasterQuery::Intersection => {
                detail.intersection_midpoints += 1;
                continue;
            }
            RasterQuery::OffMap => {
                detail.off_map_midpoints += 1;
                continue;
            }
        };
        let clipped = clip_threshold(angular_difference(theta_global, theta_nl), alpha_deg);
        detail.sum_deg += clipped;
        sum_rad += clipped.to_radians();
    }
    detail.mean_rad = sum_rad / n as f64;
    Ok(detail)
}

/// Per-sample off-yaw: mean over the m modes of the per-trajectory measure.
pub fn off_yaw_sample(
    preds: &PredictionSet,
    raster: &HeadingRaster,
    alpha_deg: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    for traj in &preds.trajectories {
        sum += off_yaw_measure(traj, raster, &preds.ego, alpha_deg)?;
    }
    Ok(sum / preds.num_modes() as f64)
}

/// Dataset-level off-yaw rate: mean over samples of the per-sample value.
pub fn off_yaw_rate(samples: &[(&PredictionSet, &HeadingRaster)], alpha_deg: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum = 0.0;
    for (preds, raster) in samples {
        sum += off_yaw_sample(preds, raster, alpha_deg)?;
    }
    Ok(sum / samples.len() as f64)
}

fn check_gt(preds: &PredictionSet, gt: &Trajectory) -> Result<()> {
    if gt.points.len() != preds.trajectories[0].points.len() {
        return Err(Error::BatchShapeMismatch(format!(
            "ground truth has {} points, predictions have {}",
            gt.points.len(),
            preds.trajectories[0].points.len()
        )));
    }
    Ok(())
}

/// Mean pointwise displacement over prediction steps 1..n (step 0 is the
/// shared current position).
fn ade(pred: &Trajectory, gt: &Trajectory) -> f64 {
    let n = pred.num_segments();
    let sum: f64 = (1..=n)
        .map(|i| pred.points[i].distance(&gt.points[i]))
        .sum();
    sum / n as f64
}

fn fde(pred: &Trajectory, gt: &Trajectory) -> f64 {
    pred.points
        .last()
        .unwrap()
        .distance(gt.points.last().unwrap())
}

fn max_displacement(pred: &Trajectory, gt: &Trajectory) -> f64 {
    let n = pred.num_segments();
    (1..=n)
        .map(|i| pred.points[i].distance(&gt.points[i]))
        .fold(0.0, f64::max)
}

/// Minimum mean displacement over the k most probable modes. k larger than
/// the mode count clamps to the mode count.
pub fn min_ade_k(preds: &PredictionSet, gt: &Trajectory, k: usize) -> Result<f64> {
    check_gt(preds, gt)?;
    Ok(preds
        .top_k_modes(k)
        .iter()
        .map(|&m| ade(&preds.trajectories[m], gt))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum final-point displacement over the k most probable modes.
pub fn min_fde_k(preds: &PredictionSet, gt: &Trajectory, k: usize) -> Result<f64> {
    check_gt(preds, gt)?;
    Ok(preds
        .top_k_modes(k)
        .iter()
        .map(|&m| fde(&preds.trajectories[m], gt))
        .fold(f64::INFINITY, f64::min))
}

/// A sample is a hit when any top-k mode stays within `threshold` of the
/// ground truth at every prediction step (the nuScenes convention).
pub fn sample_hit(preds: &PredictionSet, gt: &Trajectory, k: usize, threshold: f64) -> Result<bool> {
    check_gt(preds, gt)?;
    Ok(preds
        .top_k_modes(k)
        .iter()
        .any(|&m| max_displacement(&preds.trajectories[m], gt) <= threshold))
}

/// Fraction of samples missed (no top-k mode within `threshold` at every
/// step).
pub fn miss_rate_k(
    batch: &[(&PredictionSet, &Trajectory)],
    k: usize,
    threshold: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut misses = 0usize;
    for (preds, gt) in batch {
        if !sample_hit(preds, gt, k, threshold)? {
            misses += 1;
        }
    }
    Ok(misses as f64 / batch.len() as f64)
}

/// Fraction of predicted points (all modes, steps 1..n, global frame)
/// outside every drivable region.
pub fn off_road_rate(preds: &PredictionSet, scene: &Scene) -> Result<f64> {
    if !scene.has_region(RegionKind::Drivable) {
        return Err(Error::MissingDrivableArea);
    }
    let mut total = 0usize;
    let mut off = 0usize;
    for traj in &preds.trajectories {
        for p in &traj.points[1..] {
            total += 1;
            if !scene.in_region(preds.ego.local_to_global(*p), RegionKind::Drivable) {
                off += 1;
            }
        }
    }
    Ok(off as f64 / total as f64)
}

/// Per-k displacement metrics for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub k_metrics: Vec<KMetrics>,
    pub off_road_rate: f64,
    pub off_yaw_rad: f64,
    /// Unnormalized sum over modes of per-trajectory means (debug).
    pub off_yaw_mode_sum_rad: f64,
    /// True when any mode has a strictly positive off-yaw measure.
    pub off_yaw_event: bool,
    pub intersection_midpoints: usize,
    pub off_map_midpoints: usize,
    pub stationary_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAggregate {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub k_metrics: Vec<KAggregate>,
    pub off_road_rate: f64,
    pub off_yaw_rate_rad: f64,
    /// Count-based alternative reading of the off-yaw rate (debug).
    pub off_yaw_event_fraction: f64,
    pub intersection_midpoints: usize,
    pub off_map_midpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub num_samples: usize,
    /// Set when a requested k exceeded the mode count and was clamped.
    pub k_clamped: bool,
    pub samples: Vec<SampleReport>,
    pub aggregate: Aggregate,
}

/// Evaluates every metric for an aligned batch. Sample order is fixed, so
/// the report is bit-reproducible for identical inputs.
pub fn evaluate_batch(
    samples: &[PredictionSet],
    gts: &[Trajectory],
    scenes: &[Scene],
    rasters: &[HeadingRaster],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = samples.len();
    if gts.len() != n || scenes.len() != n || rasters.len() != n {
        return Err(Error::BatchShapeMismatch(format!(
            "{} samples, {} ground truths, {} scenes, {} rasters",
            n,
            gts.len(),
            scenes.len(),
            rasters.len()
        )));
    }

    let mut k_clamped = false;
    let mut sample_reports = Vec::with_capacity(n);
    for i in 0..n {
        let preds = &samples[i];
        preds.validate()?;
        let mut k_metrics = Vec::with_capacity(config.k_values.len());
        for &k in &config.k_values {
            if k > preds.num_modes() {
                k_clamped = true;
            }
            k_metrics.push(KMetrics {
                k,
                min_ade: min_ade_k(preds, &gts[i], k)?,
                min_fde: min_fde_k(preds, &gts[i], k)?,
                hit: sample_hit(preds, &gts[i], k, config.miss_threshold_m)?,
            });
        }
        let mut mode_sum = 0.0;
        let mut event = false;
        let mut inter = 0usize;
        let mut off_map = 0usize;
        let mut stationary = 0usize;
        for traj in &preds.trajectories {
            let d = off_yaw_detail(traj, &rasters[i], &preds.ego, config.alpha_deg)?;
            mode_sum += d.mean_rad;
            event |= d.mean_rad > 0.0;
            inter += d.intersection_midpoints;
            off_map += d.off_map_midpoints;
            stationary += d.stationary_segments;
        }
        sample_reports.push(SampleReport {
            index: i,
            k_metrics,
            off_road_rate: off_road_rate(preds, &scenes[i])?,
            off_yaw_rad: mode_sum / preds.num_modes() as f64,
            off_yaw_mode_sum_rad: mode_sum,
            off_yaw_event: event,
            intersection_midpoints: inter,
            off_map_midpoints: off_map,
            stationary_segments: stationary,
        });
    }

    let mean = |f: &dyn Fn(&SampleReport) -> f64| {
        sample_reports.iter().map(|s| f(s)).sum::<f64>() / n as f64
    };
    let k_aggregates = config
        .k_values
        .iter()
        .enumerate()
        .map(|(ki, &k)| KAggregate {
            k,
            min_ade: mean(&|s| s.k_metrics[ki].min_ade),
            min_fde: mean(&|s| s.k_metrics[ki].min_fde),
            miss_rate: mean(&|s| if s.k_metrics[ki].hit { 0.0 } else { 1.0 }),
        })
        .collect();
    let aggregate = Aggregate {
        k_metrics: k_aggregates,
        off_road_rate: mean(&|s| s.off_road_rate),
        off_yaw_rate_rad: mean(&|s| s.off_yaw_rad),
        off_yaw_event_fraction: mean(&|s| if s.off_yaw_event { 1.0 } else { 0.0 }),
        intersection_midpoints: sample_reports.iter().map(|s| s.intersection_midpoints).sum(),
        off_map_midpoints: sample_reports.iter().map(|s| s.off_map_midpoints).sum(),
    };

    Ok(EvalReport {
        config: config.clone(),
        num_samples: n,
        k_clamped,
        samples: sample_reports,
        aggregate,
    })
}

impl EvalReport {
    /// Flat CSV: one row per sample, then one `aggregate` row. Miss-rate
    /// columns hold the per-sample miss indicator (1 = miss).
    pub fn to_csv(&self) -> String {
        let mut header = String::from("sample");
        for k in &self.config.k_values {
            header.push_str(&format!(",min_ade_{k},min_fde_{k},miss_{k}"));
        }
        header.push_str(
            ",off_road_rate,off_yaw_rad,off_yaw_event,intersection_midpoints,off_map_midpoints\n",
        );
        let mut out = header;
        for s in &self.samples {
            out.push_str(&s.index.to_string());
            for km in &s.k_metrics {
                out.push_str(&format!(
                    ",{},{},{}",
                    km.min_ade,
                    km.min_fde,
                    if km.hit { 0 } else { 1 }
                ));
            }
            out.push_str(&format!(
                ",{},{},{},{},{}\n",
                s.off_road_rate,
                s.off_yaw_rad,
                if s.off_yaw_event { 1 } else { 0 },
                s.intersection_midpoints,
                s.off_map_midpoints
            ));
        }
        out.push_str("aggregate");
        for ka in &self.aggregate.k_metrics {
            out.push_str(&format!(",{},{},{}", ka.min_ade, ka.min_fde, ka.miss_rate));
        }
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            self.aggregate.off_road_rate,
            self.aggregate.off_yaw_rate_rad,
            self.aggregate.off_yaw_event_fraction,
            self.aggregate.intersection_midpoints,
            self.aggregate.off_map_midpoints
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AngleDeg, Point2};
    use crate::raster::{rasterize, RasterSpec};
    use crate::scene::{synth_scene, SyntheticSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn identity_pose() -> Pose {
        Pose::new(Point2::new(0.0, 0.0), AngleDeg::new(0.0))
    }

    fn uniform_scene() -> (Scene, HeadingRaster) {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0],
            length_m: 200.0,
            lane_gap_m: 0.0,
        })
        .unwrap();
        let raster = rasterize(&scene, &RasterSpec::with_defaults(identity_pose())).unwrap();
        (scene, raster)
    }

    fn straight_traj(heading_deg: f64, steps: usize, step_m: f64) -> Trajectory {
        let h = heading_deg.to_radians();
        let points = (0..=steps)
            .map(|i| {
                let d = i as f64 * step_m;
                Point2::new(d * h.sin(), d * h.cos())
            })
            .collect();
        Trajectory::new(points, 0.5).unwrap()
    }

    // same midpoints as the forward path, every segment heading flipped
    fn reversed(traj: &Trajectory) -> Trajectory {
        let mut points = traj.points.clone();
        points.reverse();
        Trajectory::new(points, traj.dt).unwrap()
    }

    #[test]
    fn aligned_trajectory_scores_zero() {
        let (_, raster) = uniform_scene();
        let traj = straight_traj(0.0, 12, 2.0);
        let v = off_yaw_measure(&traj, &raster, &identity_pose(), 45.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn reversed_trajectory_scores_pi() {
        let (_, raster) = uniform_scene();
        let traj = reversed(&straight_traj(0.0, 12, 2.0));
        let v = off_yaw_measure(&traj, &raster, &identity_pose(), 45.0).unwrap();
        assert_relative_eq!(v, PI, epsilon = 1e-12);
    }

    #[test]
    fn thirty_degrees_is_under_threshold() {
        let (_, raster) = uniform_scene();
        let traj = straight_traj(30.0, 12, 2.0);
        let v = off_yaw_measure(&traj, &raster, &identity_pose(), 45.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn degenerate_trajectory_rejected() {
        let (_, raster) = uniform_scene();
        let traj = Trajectory {
            points: vec![Point2::new(0.0, 0.0)],
            dt: 0.5,
        };
        assert!(matches!(
            off_yaw_measure(&traj, &raster, &identity_pose(), 45.0),
            Err(Error::DegenerateTrajectory)
        ));
    }

    fn preds_with_modes(trajs: Vec<Trajectory>) -> PredictionSet {
        let m = trajs.len();
        PredictionSet::new(trajs, vec![1.0 / m as f64; m], identity_pose()).unwrap()
    }

    #[test]
    fn off_yaw_sample_is_mode_mean() {
        let (_, raster) = uniform_scene();
        let fwd = straight_traj(0.0, 12, 2.0);
        let rev = reversed(&fwd);
        let preds = preds_with_modes(vec![fwd.clone(), rev]);
        let v = off_yaw_sample(&preds, &raster, 45.0).unwrap();
        assert_relative_eq!(v, PI / 2.0, epsilon = 1e-12);
        // singleton equals the per-mode measure
        let solo = preds_with_modes(vec![fwd]);
        assert_eq!(off_yaw_sample(&solo, &raster, 45.0).unwrap(), 0.0);
    }

    #[test]
    fn off_yaw_rate_is_sample_mean() {
        let (_, raster) = uniform_scene();
        let fwd = preds_with_modes(vec![straight_traj(0.0, 12, 2.0)]);
        let rev = preds_with_modes(vec![reversed(&straight_traj(0.0, 12, 2.0))]);
        let one = off_yaw_rate(&[(&rev, &raster)], 45.0).unwrap();
        assert_relative_eq!(one, PI, epsilon = 1e-12);
        let both = off_yaw_rate(&[(&fwd, &raster), (&rev, &raster)], 45.0).unwrap();
        assert_relative_eq!(both, PI / 2.0, epsilon = 1e-12);
        assert!(matches!(off_yaw_rate(&[], 45.0), Err(Error::EmptyBatch)));
    }

    fn offset_traj(base: &Trajectory, dx: f64) -> Trajectory {
        Trajectory::new(
            base.points
                .iter()
                .map(|p| Point2::new(p.x + dx, p.y))
                .collect(),
            base.dt,
        )
        .unwrap()
    }

    #[test]
    fn min_ade_examples() {
        let gt = straight_traj(0.0, 12, 2.0);
        let exact = preds_with_modes(vec![gt.clone()]);
        assert_eq!(min_ade_k(&exact, &gt, 1).unwrap(), 0.0);

        let shifted = preds_with_modes(vec![offset_traj(&gt, 1.0)]);
        assert_relative_eq!(min_ade_k(&shifted, &gt, 1).unwrap(), 1.0, epsilon = 1e-12);

        // k=1 selects the most probable mode, not the best one
        let preds = PredictionSet::new(
            vec![offset_traj(&gt, 5.0), gt.clone()],
            vec![0.9, 0.1],
            identity_pose(),
        )
        .unwrap();
        assert_relative_eq!(min_ade_k(&preds, &gt, 1).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(min_ade_k(&preds, &gt, 2).unwrap(), 0.0);
    }

    #[test]
    fn min_fde_examples() {
        let gt = straight_traj(0.0, 12, 2.0);
        let exact = preds_with_modes(vec![gt.clone()]);
        assert_eq!(min_fde_k(&exact, &gt, 1).unwrap(), 0.0);
        let shifted = preds_with_modes(vec![offset_traj(&gt, 1.0)]);
        assert_relative_eq!(min_fde_k(&shifted, &gt, 1).unwrap(), 1.0, epsilon = 1e-12);

        // a mode that wanders but lands on the final gt point scores 0 FDE
        let mut wander = offset_traj(&gt, 3.0);
        *wander.points.last_mut().unwrap() = *gt.points.last().unwrap();
        let preds = preds_with_modes(vec![wander]);
        assert_eq!(min_fde_k(&preds, &gt, 1).unwrap(), 0.0);
    }

    #[test]
    fn miss_rate_examples() {
        let gt = straight_traj(0.0, 12, 2.0);
        let hit = preds_with_modes(vec![gt.clone()]);
        let miss = preds_with_modes(vec![offset_traj(&gt, 10.0)]);
        assert_eq!(miss_rate_k(&[(&hit, &gt)], 1, 2.0).unwrap(), 0.0);
        assert_eq!(miss_rate_k(&[(&miss, &gt)], 1, 2.0).unwrap(), 1.0);
        assert_relative_eq!(
            miss_rate_k(&[(&hit, &gt), (&miss, &gt)], 1, 2.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn off_road_rate_examples() {
        let (scene, _) = uniform_scene();
        let gt = straight_traj(0.0, 12, 2.0);
        let on = preds_with_modes(vec![gt.clone()]);
        assert_eq!(off_road_rate(&on, &scene).unwrap(), 0.0);
        let off = preds_with_modes(vec![offset_traj(&gt, 100.0)]);
        assert_eq!(off_road_rate(&off, &scene).unwrap(), 1.0);
        // 6 of 24 points off the road
        let mut half = offset_traj(&gt, 0.0);
        for p in half.points.iter_mut().skip(7) {
            p.x = 100.0;
        }
        let mixed = preds_with_modes(vec![half, gt.clone()]);
        assert_relative_eq!(off_road_rate(&mixed, &scene).unwrap(), 0.25);
    }

    #[test]
    fn off_road_requires_drivable_region() {
        let mut scene = uniform_scene().0;
        scene.regions.clear();
        let gt = straight_traj(0.0, 12, 2.0);
        let preds = preds_with_modes(vec![gt]);
        assert!(matches!(
            off_road_rate(&preds, &scene),
            Err(Error::MissingDrivableArea)
        ));
    }

    #[test]
    fn wrong_way_separation() {
        // the forward and reversed paths are indistinguishable to the
        // off-road rate but maximally separated by the off-yaw measure
        let (scene, raster) = uniform_scene();
        let fwd = straight_traj(0.0, 12, 2.0);
        let rev = reversed(&fwd);
        let fwd_preds = preds_with_modes(vec![fwd]);
        let rev_preds = preds_with_modes(vec![rev]);
        assert_eq!(off_road_rate(&fwd_preds, &scene).unwrap(), 0.0);
        assert_eq!(off_road_rate(&rev_preds, &scene).unwrap(), 0.0);
        assert_eq!(off_yaw_sample(&fwd_preds, &raster, 45.0).unwrap(), 0.0);
        assert_relative_eq!(
            off_yaw_sample(&rev_preds, &raster, 45.0).unwrap(),
            PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rotation_invariance_of_off_yaw() {
        // rotate the whole problem by rotating only the ego pose: lane
        // headings are regenerated to match
        for rot in [0.0, 37.0, 90.0, 211.5] {
            let scene = synth_scene(&SyntheticSpec::Straight {
                headings_deg: vec![rot],
                length_m: 200.0,
                lane_gap_m: 0.0,
            })
            .unwrap();
            // lanes above run along +y; rotate their geometry too
            let pose = Pose::new(Point2::new(0.0, 0.0), AngleDeg::new(rot));
            let mut scene = scene;
            for lane in &mut scene.lanes {
                for p in &mut lane.points {
                    *p = pose.local_to_global(*p);
                }
            }
            let raster = rasterize(&scene, &RasterSpec::with_defaults(pose)).unwrap();
            let traj = straight_traj(70.0, 12, 2.0);
            let v = off_yaw_measure(&traj, &raster, &pose, 45.0).unwrap();
            // 70° off the lane heading, up to the raster's 8-bit
            // quantization of the stored lane heading
            let stored = crate::raster::decode_heading(crate::raster::encode_heading(
                AngleDeg::new(rot),
            ))
            .unwrap();
            let expected = crate::geometry::clip_threshold(
                crate::geometry::angular_difference(AngleDeg::new(70.0 + rot), stored),
                45.0,
            )
            .to_radians();
            assert_relative_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluate_batch_aggregates_are_means() {
        let (scene, raster) = uniform_scene();
        let gt = straight_traj(0.0, 12, 2.0);
        let a = preds_with_modes(vec![gt.clone(), offset_traj(&gt, 1.0)]);
        let b = preds_with_modes(vec![offset_traj(&gt, 3.0)]);
        let config = EvalConfig {
            k_values: vec![1, 2],
            ..EvalConfig::default()
        };
        let report = evaluate_batch(
            &[a, b],
            &[gt.clone(), gt.clone()],
            &[scene.clone(), scene.clone()],
            &[raster.clone(), raster.clone()],
            &config,
        )
        .unwrap();
        assert!(report.k_clamped); // sample b has one mode, k=2 requested
        for (ki, ka) in report.aggregate.k_metrics.iter().enumerate() {
            let naive: f64 = report
                .samples
                .iter()
                .map(|s| s.k_metrics[ki].min_ade)
                .sum::<f64>()
                / report.samples.len() as f64;
            assert_eq!(ka.min_ade, naive);
        }
        // permuting sample order leaves aggregates unchanged
        let (scene2, raster2) = (scene.clone(), raster.clone());
        let report2 = evaluate_batch(
            &[
                preds_with_modes(vec![offset_traj(&gt, 3.0)]),
                preds_with_modes(vec![gt.clone(), offset_traj(&gt, 1.0)]),
            ],
            &[gt.clone(), gt.clone()],
            &[scene2.clone(), scene2],
            &[raster2.clone(), raster2],
            &config,
        )
        .unwrap();
        assert_eq!(report.aggregate, report2.aggregate);
    }

    #[test]
    fn evaluate_batch_shape_mismatch() {
        let (scene, raster) = uniform_scene();
        let gt = straight_traj(0.0, 12, 2.0);
        let preds = preds_with_modes(vec![gt.clone()]);
        let err = evaluate_batch(&[preds], &[], &[scene], &[raster], &EvalConfig::default());
        assert!(matches!(err, Err(Error::BatchShapeMismatch(_))));
    }

    #[test]
    fn metrics_non_increasing_in_k() {
        let gt = straight_traj(0.0, 12, 2.0);
        let preds = PredictionSet::new(
            vec![
                offset_traj(&gt, 4.0),
                offset_traj(&gt, 1.5),
                gt.clone(),
                offset_traj(&gt, 8.0),
            ],
            vec![0.4, 0.3, 0.2, 0.1],
            identity_pose(),
        )
        .unwrap();
        let mut prev_ade = f64::INFINITY;
        let mut prev_fde = f64::INFINITY;
        for k in 1..=5 {
            let a = min_ade_k(&preds, &gt, k).unwrap();
            let f = min_fde_k(&preds, &gt, k).unwrap();
            assert!(a <= prev_ade);
            assert!(f <= prev_fde);
            prev_ade = a;
            prev_fde = f;
        }
    }

    #[test]
    fn alpha_monotone_masking() {
        let (_, raster) = uniform_scene();
        let traj = straight_traj(120.0, 12, 2.0);
        let mut prev = f64::INFINITY;
        for alpha in [0.0, 30.0, 60.0, 90.0, 119.0, 150.0] {
            let v = off_yaw_measure(&traj, &raster, &identity_pose(), alpha).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn report_json_round_trip() {
        let (scene, raster) = uniform_scene();
        let gt = straight_traj(0.0, 12, 2.0);
        let preds = preds_with_modes(vec![gt.clone()]);
        let report =
            evaluate_batch(&[preds], &[gt], &[scene], &[raster], &EvalConfig::default()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert!(report.to_csv().lines().count() >= 3);
    }
}
