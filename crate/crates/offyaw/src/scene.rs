//! Vector scene model: lane polylines with ascribed headings, intersection
//! and drivable-area polygons, and a deterministic synthetic scene
//! generator used throughout the tests.
//!
//! `nearest_lane_heading` here is the brute-force linear scan; it doubles as
//! the oracle the raster module's spatial index is checked against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AngleDeg, Point2, Pose};

/// Maximum spacing between consecutive lane points, meters. Dense spacing
/// keeps the nearest-point query within raster resolution of the true
/// nearest-lane geometry.
pub const MAX_LANE_SPACING_M: f64 = 1.0;

/// A driving lane as a dense polyline. Headings are stored per point, not
/// derived from geometry, so map data can ascribe a legal direction of
/// travel independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePolyline {
    pub id: String,
    pub points: Vec<Point2>,
    pub headings_deg: Vec<AngleDeg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Intersection,
    Drivable,
}

/// A simple closed polygon, vertices in order (either winding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonRegion {
    pub kind: RegionKind,
    pub vertices: Vec<Point2>,
}

impl PolygonRegion {
    /// Boundary-inclusive even-odd point containment.
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        // boundary counts as inside
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(p, a, b) {
                return true;
            }
        }
        // even-odd ray cast toward +x
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if cross.abs() > 1e-9 {
        return false;
    }
    let dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
    let len_sq = a.distance_sq(&b);
    dot >= -1e-12 && dot <= len_sq + 1e-12
}

/// A full scene: lanes, regions, and the ego pose the local frame is
/// anchored to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub lanes: Vec<LanePolyline>,
    pub regions: Vec<PolygonRegion>,
    pub ego: Pose,
}

impl Scene {
    /// Heading of the L2-nearest lane point to `p`, brute-force over every
    /// lane point. Ties broken by (lane id, point index) lexicographic
    /// order.
    pub fn nearest_lane_heading(&self, p: Point2) -> Result<AngleDeg> {
        Ok(self.nearest_lane_point(p)?.2)
    }

    /// Nearest lane point with its identity: (lane index, point index,
    /// heading). Exposed so the indexed path can be checked for exact
    /// tie-break agreement.
    pub fn nearest_lane_point(&self, p: Point2) -> Result<(usize, usize, AngleDeg)> {
        let mut best: Option<(f64, &str, usize, usize)> = None;
        for (li, lane) in self.lanes.iter().enumerate() {
            for (pi, lp) in lane.points.iter().enumerate() {
                let d2 = p.distance_sq(lp);
                let better = match &best {
                    None => true,
                    Some((bd2, bid, bpi, _)) => {
                        d2 < *bd2
                            || (d2 == *bd2
                                && (lane.id.as_str(), pi) < (*bid, *bpi))
                    }
                };
                if better {
                    best = Some((d2, lane.id.as_str(), pi, li));
                }
            }
        }
        match best {
            Some((_, _, pi, li)) => Ok((li, pi, self.lanes[li].headings_deg[pi])),
            None => Err(Error::EmptyScene),
        }
    }

    /// True iff `p` lies inside (or on the boundary of) any region of the
    /// given kind.
    pub fn in_region(&self, p: Point2, kind: RegionKind) -> bool {
        self.regions
            .iter()
            .filter(|r| r.kind == kind)
            .any(|r| r.contains(p))
    }

    pub fn has_region(&self, kind: RegionKind) -> bool {
        self.regions.iter().any(|r| r.kind == kind)
    }

    pub fn total_lane_points(&self) -> usize {
        self.lanes.iter().map(|l| l.points.len()).sum()
    }
}

/// Parameters for the synthetic scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Parallel straight lanes along the heading-0 axis, lane `i` offset to
    /// x = i * lane_gap, each with its own ascribed heading. A drivable
    /// rectangle covers the road plus margin.
    Straight {
        headings_deg: Vec<f64>,
        length_m: f64,
        lane_gap_m: f64,
    },
    /// A single circular-arc lane starting at the origin heading 0 and
    /// curving right (center at (radius, 0)).
    Arc { radius_m: f64, span_deg: f64 },
    /// Two two-lane roads crossing at the origin with a square intersection
    /// polygon at the center and a cross-shaped drivable area.
    FourWay { leg_length_m: f64, lane_width_m: f64 },
}

/// Point spacing used by the generator; comfortably under
/// `MAX_LANE_SPACING_M`.
pub const SYNTH_SPACING_M: f64 = 0.5;

const DRIVABLE_MARGIN_M: f64 = 4.0;

/// Builds a deterministic scene from a spec. The ego pose is the identity
/// (origin, heading 0) so local and global frames coincide; callers that
/// want a nontrivial pose can overwrite `scene.ego`.
pub fn synth_scene(spec: &SyntheticSpec) -> Result<Scene> {
    match spec {
        SyntheticSpec::Straight {
            headings_deg,
            length_m,
            lane_gap_m,
        } => synth_straight(headings_deg, *length_m, *lane_gap_m),
        SyntheticSpec::Arc { radius_m, span_deg } => synth_arc(*radius_m, *span_deg),
        SyntheticSpec::FourWay {
            leg_length_m,
            lane_width_m,
        } => synth_four_way(*leg_length_m, *lane_width_m),
    }
}

fn identity_pose() -> Pose {
    Pose::new(Point2::new(0.0, 0.0), AngleDeg::new(0.0))
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64, kind: RegionKind) -> PolygonRegion {
    PolygonRegion {
        kind,
        vertices: vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ],
    }
}

fn synth_straight(headings_deg: &[f64], length_m: f64, lane_gap_m: f64) -> Result<Scene> {
    if headings_deg.is_empty() {
        return Err(Error::InvalidSpec("straight road needs >= 1 lane".into()));
    }
    if length_m <= 0.0 || lane_gap_m < 0.0 {
        return Err(Error::InvalidSpec("non-positive straight-road dims".into()));
    }
    let steps = (length_m / SYNTH_SPACING_M).ceil() as usize;
    let mut lanes = Vec::new();
    for (i, h) in headings_deg.iter().enumerate() {
        let x = i as f64 * lane_gap_m;
        let points: Vec<Point2> = (0..=steps)
            .map(|s| Point2::new(x, -length_m / 2.0 + s as f64 * SYNTH_SPACING_M))
            .collect();
        let headings = vec![AngleDeg::new(*h); points.len()];
        lanes.push(LanePolyline {
            id: format!("lane{i:03}"),
            points,
            headings_deg: headings,
        });
    }
    let x_max = (headings_deg.len() - 1) as f64 * lane_gap_m;
    let drivable = rect(
        -DRIVABLE_MARGIN_M,
        -length_m / 2.0 - DRIVABLE_MARGIN_M,
        x_max + DRIVABLE_MARGIN_M,
        length_m / 2.0 + DRIVABLE_MARGIN_M,
        RegionKind::Drivable,
    );
    Ok(Scene {
        lanes,
        regions: vec![drivable],
        ego: identity_pose(),
    })
}

fn synth_arc(radius_m: f64, span_deg: f64) -> Result<Scene> {
    if radius_m <= 0.0 || span_deg <= 0.0 || span_deg > 360.0 {
        return Err(Error::InvalidSpec("arc needs radius > 0, span in (0, 360]".into()));
    }
    let arc_len = radius_m * span_deg.to_radians();
    let steps = (arc_len / SYNTH_SPACING_M).ceil() as usize;
    let dphi = span_deg.to_radians() / steps as f64;
    let mut points = Vec::with_capacity(steps + 1);
    let mut headings = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let phi = s as f64 * dphi;
        // start at origin heading 0, turning right about (radius, 0)
        points.push(Point2::new(
            radius_m * (1.0 - phi.cos()),
            radius_m * phi.sin(),
        ));
        headings.push(AngleDeg::new(phi.to_degrees()));
    }
    // drivable: polygon band around the arc, inner and outer offsets
    let half_w = DRIVABLE_MARGIN_M;
    let mut verts = Vec::with_capacity(2 * (steps + 1));
    for s in 0..=steps {
        let phi = s as f64 * dphi;
        let r = radius_m + half_w;
        verts.push(Point2::new(radius_m - r * phi.cos(), r * phi.sin()));
    }
    for s in (0..=steps).rev() {
        let phi = s as f64 * dphi;
        let r = (radius_m - half_w).max(0.1);
        verts.push(Point2::new(radius_m - r * phi.cos(), r * phi.sin()));
    }
    let drivable = PolygonRegion {
        kind: RegionKind::Drivable,
        vertices: verts,
    };
    Ok(Scene {
        lanes: vec![LanePolyline {
            id: "arc000".into(),
            points,
            headings_deg: headings,
        }],
        regions: vec![drivable],
        ego: identity_pose(),
    })
}

fn synth_four_way(leg_length_m: f64, lane_width_m: f64) -> Result<Scene> {
    if leg_length_m <= 0.0 || lane_width_m <= 0.0 {
        return Err(Error::InvalidSpec("four-way needs positive dims".into()));
    }
    let l = leg_length_m;
    let w = lane_width_m;
    let half = w; // half-extent of the intersection square (two lanes wide)
    let steps = (l / SYNTH_SPACING_M).ceil() as usize;
    let line = |s: usize| -l + s as f64 * (2.0 * l) / (2 * steps) as f64;

    let mut lanes = Vec::new();
    // north-south road: lane at x=+w/2 heading 0 (northbound), x=-w/2
    // heading 180 (southbound)
    for (i, (x, h)) in [(w / 2.0, 0.0), (-w / 2.0, 180.0)].iter().enumerate() {
        let points: Vec<Point2> = (0..=2 * steps).map(|s| Point2::new(*x, line(s))).collect();
        lanes.push(LanePolyline {
            id: format!("ns{i:02}"),
            headings_deg: vec![AngleDeg::new(*h); points.len()],
            points,
        });
    }
    // east-west road: lane at y=-w/2 heading 90 (eastbound), y=+w/2
    // heading 270 (westbound)
    for (i, (y, h)) in [(-w / 2.0, 90.0), (w / 2.0, 270.0)].iter().enumerate() {
        let points: Vec<Point2> = (0..=2 * steps).map(|s| Point2::new(line(s), *y)).collect();
        lanes.push(LanePolyline {
            id: format!("ew{i:02}"),
            headings_deg: vec![AngleDeg::new(*h); points.len()],
            points,
        });
    }

    let intersection = rect(-half, -half, half, half, RegionKind::Intersection);
    let road_half = w + DRIVABLE_MARGIN_M / 2.0;
    let ns_drivable = rect(-road_half, -l, road_half, l, RegionKind::Drivable);
    let ew_drivable = rect(-l, -road_half, l, road_half, RegionKind::Drivable);
    Ok(Scene {
        lanes,
        regions: vec![intersection, ns_drivable, ew_drivable],
        ego: identity_pose(),
    })
}
