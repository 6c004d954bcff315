//! Frame conventions and per-segment primitives.
//!
//! All headings are clockwise degrees from the +y axis: 0° points along +y,
//! 90° along +x. In the agent-local frame, +y is forward and +x is lateral
//! right, with the current position at the origin.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Segments shorter than this are treated as stationary (no meaningful
/// heading).
pub const STATIONARY_EPS_M: f64 = 1e-6;

/// A 2-D point in meters. Which frame it lives in (local or global) is a
/// matter of context, not type. Serializes as an `[x, y]` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Serialize for Point2 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point2::new(x, y))
    }
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

/// An angle in degrees, normalized to [0, 360).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AngleDeg(f64);

impl AngleDeg {
    /// Normalizes any finite degree value into [0, 360).
    pub fn new(deg: f64) -> Self {
        let mut v = deg.rem_euclid(360.0);
        // rem_euclid can return exactly 360.0 when deg is a tiny negative.
        if v >= 360.0 {
            v = 0.0;
        }
        Self(v)
    }

    pub fn degrees(&self) -> f64 {
        self.0
    }

    pub fn radians(&self) -> f64 {
        self.0.to_radians()
    }
}

impl Serialize for AngleDeg {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AngleDeg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(AngleDeg::new(f64::deserialize(d)?))
    }
}

/// Global position and yaw of an agent. Serializes flat as
/// `{"x": .., "y": .., "heading_deg": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Point2,
    pub heading: AngleDeg,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    x: f64,
    y: f64,
    heading_deg: f64,
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose::new(Point2::new(r.x, r.y), AngleDeg::new(r.heading_deg))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            x: p.position.x,
            y: p.position.y,
            heading_deg: p.heading.degrees(),
        }
    }
}

impl Pose {
    pub fn new(position: Point2, heading: AngleDeg) -> Self {
        Self { position, heading }
    }

    /// Maps a point from this pose's local frame into the global frame.
    ///
    /// A local unit vector at heading θ is (sin θ, cos θ); rotating the frame
    /// by the pose heading h gives the matrix below, followed by translation.
    pub fn local_to_global(&self, p: Point2) -> Point2 {
        let h = self.heading.radians();
        let (sin_h, cos_h) = h.sin_cos();
        Point2::new(
            self.position.x + p.x * cos_h + p.y * sin_h,
            self.position.y - p.x * sin_h + p.y * cos_h,
        )
    }

    /// Maps a global point into this pose's local frame.
    pub fn global_to_local(&self, p: Point2) -> Point2 {
        let h = self.heading.radians();
        let (sin_h, cos_h) = h.sin_cos();
        let dx = p.x - self.position.x;
        let dy = p.y - self.position.y;
        Point2::new(dx * cos_h - dy * sin_h, dx * sin_h + dy * cos_h)
    }
}

/// An agent trajectory in the local frame. Index 0 is the current position,
/// conventionally (0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point2>,
    /// Seconds between consecutive points.
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateTrajectory);
        }
        Ok(Self { points, dt })
    }

    /// Number of predicted segments (points minus one).
    pub fn num_segments(&self) -> usize {
        self.points.len() - 1
    }
}

/// Arithmetic midpoint of two points.
pub fn midpoint(a: Point2, b: Point2) -> Point2 {
    Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
}

/// Heading of the directed segment a→b, or `None` when the segment is
/// shorter than `eps` (stationary; callers treat it as contributing zero).
pub fn segment_heading_eps(a: Point2, b: Point2, eps: f64) -> Option<AngleDeg> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    if dx * dx + dy * dy < eps * eps {
        return None;
    }
    // atan2(Δx, Δy): 0 along +y, clockwise positive, full quadrant coverage.
    Some(AngleDeg::new(dx.atan2(dy).to_degrees()))
}

/// Segment heading with the default stationary epsilon.
pub fn segment_heading(a: Point2, b: Point2) -> Option<AngleDeg> {
    segment_heading_eps(a, b, STATIONARY_EPS_M)
}

/// Rotates a local heading into the global frame of the given pose.
pub fn to_global(theta_local: AngleDeg, pose: &Pose) -> AngleDeg {
    AngleDeg::new(theta_local.degrees() + pose.heading.degrees())
}

/// Smallest absolute circular difference between two headings, in [0, 180].
pub fn angular_difference(theta: AngleDeg, theta_nl: AngleDeg) -> f64 {
    let d = (theta.degrees() - theta_nl.degrees()).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Signed circular residual θ − θ_nl wrapped to (−180, 180]. Its absolute
/// value equals `angular_difference`; its sign drives the loss gradient.
pub fn signed_residual(theta: AngleDeg, theta_nl: AngleDeg) -> f64 {
    let mut r = (theta.degrees() - theta_nl.degrees()).rem_euclid(360.0);
    if r > 180.0 {
        r -= 360.0;
    }
    r
}

/// Hard threshold gate: deviations at or below `alpha` are legal lane
/// changes or corrections and count as zero; larger deviations pass through
/// unshifted.
pub fn clip_threshold(delta: f64, alpha: f64) -> f64 {
    if delta <= alpha {
        0.0
    } else {
        delta
    }
}
