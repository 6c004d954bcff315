//! The secondary heading map: an 8-bit grid where each cell stores the
//! encoded heading of the L2-nearest lane point, with 0 reserved for cells
//! whose centers lie in an intersection region.
//!
//! Persistence is binary PGM (P5, maxval 255) plus a JSON sidecar carrying
//! the raster spec; the round-trip is bit-exact.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AngleDeg, Point2, Pose};
use crate::scene::{RegionKind, Scene};

/// Extents and resolution of a heading raster, anchored to the ego pose.
/// Defaults: 20 m behind, 80 m ahead, 50 m left and right, 0.2 m/px
/// (a 500x500 grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub origin_pose: Pose,
    pub behind_m: f64,
    pub ahead_m: f64,
    pub left_m: f64,
    pub right_m: f64,
    pub resolution: f64,
}

impl RasterSpec {
    pub fn with_defaults(origin_pose: Pose) -> Self {
        Self {
            origin_pose,
            behind_m: 20.0,
            ahead_m: 80.0,
            left_m: 50.0,
            right_m: 50.0,
            resolution: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.behind_m,
            self.ahead_m,
            self.left_m,
            self.right_m,
            self.resolution,
        ];
        if dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidRasterSpec(
                "extents and resolution must be positive and finite".into(),
            ));
        }
        for (name, span) in [
            ("width", self.left_m + self.right_m),
            ("height", self.behind_m + self.ahead_m),
        ] {
            let cells = span / self.resolution;
            if (cells - cells.round()).abs() > 1e-6 {
                return Err(Error::InvalidRasterSpec(format!(
                    "{name} span {span} is not an integer multiple of resolution {}",
                    self.resolution
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        ((self.left_m + self.right_m) / self.resolution).round() as usize
    }

    pub fn height(&self) -> usize {
        ((self.behind_m + self.ahead_m) / self.resolution).round() as usize
    }

    /// Center of cell (row, col) in the ego-local frame. Row 0 is the far-
    /// behind edge; +row is forward.
    pub fn cell_center_local(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            -self.left_m + (col as f64 + 0.5) * self.resolution,
            -self.behind_m + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell indices containing a local-frame point, or `None` off the grid.
    pub fn cell_of_local(&self, p: Point2) -> Option<(usize, usize)> {
        let col = ((p.x + self.left_m) / self.resolution).floor();
        let row = ((p.y + self.behind_m) / self.resolution).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        if row >= self.height() || col >= self.width() {
            return None;
        }
        Some((row, col))
    }
}

/// Maps a heading in [0, 360) to a grayscale value in [1, 255]; 0 stays
/// reserved for the intersection sentinel. Ties round half to even.
pub fn encode_heading(theta: AngleDeg) -> u8 {
    let g = 1.0 + (254.0 / 360.0 * theta.degrees()).round_ties_even();
    g.clamp(1.0, 255.0) as u8
}

/// Inverse of `encode_heading`, up to the ~1.417° bin width. `g = 0` is the
/// intersection sentinel and has no heading.
pub fn decode_heading(g: u8) -> Result<AngleDeg> {
    if g == 0 {
        return Err(Error::IntersectionSentinel);
    }
    Ok(AngleDeg::new((g - 1) as f64 * 360.0 / 254.0))
}

/// Result of a raster lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RasterQuery {
    Heading(AngleDeg),
    Intersection,
    OffMap,
}

/// The generated secondary map. Cells are row-major, row 0 at the far-
/// behind edge.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadingRaster {
    pub spec: RasterSpec,
    pub cells: Vec<u8>,
}

impl HeadingRaster {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.spec.width() + col]
    }

    /// Nearest-cell lookup for a global-frame point. No interpolation: the
    /// heading field is discontinuous at lane-equidistance boundaries and
    /// at the sentinel, and wraps at 254→1.
    pub fn query(&self, p_global: Point2) -> RasterQuery {
        let local = self.spec.origin_pose.global_to_local(p_global);
        match self.spec.cell_of_local(local) {
            None => RasterQuery::OffMap,
            Some((row, col)) => match self.get(row, col) {
                0 => RasterQuery::Intersection,
                g => RasterQuery::Heading(decode_heading(g).expect("g >= 1")),
            },
        }
    }

    /// Writes the cell grid as binary PGM and the spec as a JSON sidecar.
    pub fn save(&self, pgm_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(pgm_path)?;
        f.write_all(
            format!("P5\n{} {}\n255\n", self.spec.width(), self.spec.height()).as_bytes(),
        )?;
        f.write_all(&self.cells)?;
        std::fs::write(sidecar_path, serde_json::to_vec_pretty(&self.spec)?)?;
        Ok(())
    }

    pub fn load(pgm_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let spec: RasterSpec = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
        spec.validate()?;
        let mut bytes = Vec::new();
        std::fs::File::open(pgm_path)?.read_to_end(&mut bytes)?;
        let (w, h, cells) = parse_pgm(&bytes)?;
        if w != spec.width() || h != spec.height() {
            return Err(Error::MalformedPgm(format!(
                "PGM is {w}x{h} but sidecar spec implies {}x{}",
                spec.width(),
                spec.height()
            )));
        }
        Ok(Self { spec, cells })
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPgm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err(Error::MalformedPgm("missing P5 magic".into()));
    }
    let w: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::MalformedPgm("bad width".into()))?;
    let h: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::MalformedPgm("bad height".into()))?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::MalformedPgm("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::MalformedPgm(format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != w * h {
        return Err(Error::MalformedPgm(format!(
            "expected {} raster bytes, found {}",
            w * h,
            data.len()
        )));
    }
    Ok((w, h, data.to_vec()))
}

/// Uniform grid bucket index over the scene's lane points. Returns the same
/// nearest point (same float distances, same (lane id, point index)
/// tie-break) as `Scene::nearest_lane_point`.
pub struct LaneIndex<'a> {
    scene: &'a Scene,
    cell_size: f64,
    grid: HashMap<(i64, i64), Vec<(usize, usize)>>,
}

const INDEX_CELL_M: f64 = 5.0;

impl<'a> LaneIndex<'a> {
    pub fn build(scene: &'a Scene) -> Result<Self> {
        if scene.total_lane_points() == 0 {
            return Err(Error::EmptyScene);
        }
        let cell_size = INDEX_CELL_M;
        let mut grid: HashMap<(i64, i64), Vec<(usize, usize)>> = HashMap::new();
        for (li, lane) in scene.lanes.iter().enumerate() {
            for (pi, p) in lane.points.iter().enumerate() {
                grid.entry(Self::cell_key(*p, cell_size))
                    .or_default()
                    .push((li, pi));
            }
        }
        Ok(Self {
            scene,
            cell_size,
            grid,
        })
    }

    fn cell_key(p: Point2, cell_size: f64) -> (i64, i64) {
        (
            (p.x / cell_size).floor() as i64,
            (p.y / cell_size).floor() as i64,
        )
    }

    /// Expanding ring search. A ring at Chebyshev cell distance k can hold
    /// no point closer than (k-1)·cell_size, so the scan stops once that
    /// bound exceeds the best distance found.
    pub fn nearest(&self, p: Point2) -> (usize, usize, AngleDeg) {
        let (cx, cy) = Self::cell_key(p, self.cell_size);
        let mut best: Option<(f64, usize, usize)> = None;
        let mut k: i64 = 0;
        loop {
            if let Some((bd2, _, _)) = best {
                let ring_min = (k - 1).max(0) as f64 * self.cell_size;
                if ring_min * ring_min > bd2 {
                    break;
                }
            }
            let mut visited_any = false;
            self.for_ring(cx, cy, k, |cell| {
                if let Some(entries) = self.grid.get(&cell) {
                    visited_any = true;
                    for &(li, pi) in entries {
                        let d2 = p.distance_sq(&self.scene.lanes[li].points[pi]);
                        let better = match best {
                            None => true,
                            Some((bd2, bli, bpi)) => {
                                d2 < bd2
                                    || (d2 == bd2
                                        && (self.scene.lanes[li].id.as_str(), pi)
                                            < (self.scene.lanes[bli].id.as_str(), bpi))
                            }
                        };
                        if better {
                            best = Some((d2, li, pi));
                        }
                    }
                }
            });
            let _ = visited_any;
            k += 1;
            // safety stop: past every occupied cell
            if k > 2_000_000 {
                break;
            }
            if best.is_none() && k as f64 * self.cell_size > self.grid_extent() {
                // scan everything left rather than spiral forever
                for (&_cell, entries) in &self.grid {
                    for &(li, pi) in entries {
                        let d2 = p.distance_sq(&self.scene.lanes[li].points[pi]);
                        let better = match best {
                            None => true,
                            Some((bd2, bli, bpi)) => {
                                d2 < bd2
                                    || (d2 == bd2
                                        && (self.scene.lanes[li].id.as_str(), pi)
                                            < (self.scene.lanes[bli].id.as_str(), bpi))
                            }
                        };
                        if better {
                            best = Some((d2, li, pi));
                        }
                    }
                }
                break;
            }
        }
        let (_, li, pi) = best.expect("non-empty index");
        (li, pi, self.scene.lanes[li].headings_deg[pi])
    }

    pub fn nearest_heading(&self, p: Point2) -> AngleDeg {
        self.nearest(p).2
    }

    fn grid_extent(&self) -> f64 {
        let mut max_abs: i64 = 0;
        for (x, y) in self.grid.keys() {
            max_abs = max_abs.max(x.abs()).max(y.abs());
        }
        (max_abs as f64 + 2.0) * self.cell_size * 2.0
    }

    fn for_ring(&self, cx: i64, cy: i64, k: i64, mut f: impl FnMut((i64, i64))) {
        if k == 0 {
            f((cx, cy));
            return;
        }
        for dx in -k..=k {
            f((cx + dx, cy - k));
            f((cx + dx, cy + k));
        }
        for dy in (-k + 1)..k {
            f((cx - k, cy + dy));
            f((cx + k, cy + dy));
        }
    }
}

/// Builds the secondary map: each cell center is classified against the
/// intersection regions, otherwise assigned the encoded heading of its
/// nearest lane point. Rows are computed in parallel.
pub fn rasterize(scene: &Scene, spec: &RasterSpec) -> Result<HeadingRaster> {
    spec.validate()?;
    let index = LaneIndex::build(scene)?;
    let width = spec.width();
    let height = spec.height();
    let cells: Vec<u8> = (0..height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let index = &index;
            (0..width).map(move |col| {
                let center = spec.origin_pose.local_to_global(spec.cell_center_local(row, col));
                if scene.in_region(center, RegionKind::Intersection) {
                    0
                } else {
                    encode_heading(index.nearest_heading(center))
                }
            })
        })
        .collect();
    Ok(HeadingRaster { spec: *spec, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_difference;
    use crate::scene::{synth_scene, SyntheticSpec};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn identity_pose() -> Pose {
        Pose::new(Point2::new(0.0, 0.0), AngleDeg::new(0.0))
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_heading(AngleDeg::new(0.0)), 1);
        // 1 + round(254/360 * 180) = 1 + round(127.0) = 128
        assert_eq!(encode_heading(AngleDeg::new(180.0)), 128);
        // 1 + round(253.294) = 254
        assert_eq!(encode_heading(AngleDeg::new(359.0)), 254);
    }

    #[test]
    fn decode_examples() {
        assert_relative_eq!(decode_heading(1).unwrap().degrees(), 0.0);
        // 127 * 360 / 254 = 180.0 exactly
        assert_relative_eq!(decode_heading(128).unwrap().degrees(), 180.0);
        assert!(matches!(decode_heading(0), Err(Error::IntersectionSentinel)));
    }

    #[test]
    fn encode_monotone_and_surjective() {
        let mut prev = 0u8;
        let mut seen = [false; 256];
        let mut theta = 0.0;
        while theta < 360.0 {
            let g = encode_heading(AngleDeg::new(theta));
            assert!(g >= prev.max(1));
            seen[g as usize] = true;
            prev = g;
            theta += 0.01;
        }
        for g in 1..=255usize {
            assert!(seen[g], "grayscale {g} never produced");
        }
        assert!(!seen[0]);
    }

    #[test]
    fn round_trip_error_within_half_bin() {
        let bound = 360.0 / 254.0 / 2.0 + 1e-9;
        let mut theta = 0.0;
        while theta < 360.0 {
            let t = AngleDeg::new(theta);
            let rt = decode_heading(encode_heading(t)).unwrap();
            assert!(
                angular_difference(rt, t) <= bound,
                "theta {theta}: round-trip {} off by {}",
                rt.degrees(),
                angular_difference(rt, t)
            );
            theta += 0.01;
        }
    }

    fn small_spec() -> RasterSpec {
        RasterSpec {
            origin_pose: identity_pose(),
            behind_m: 10.0,
            ahead_m: 10.0,
            left_m: 10.0,
            right_m: 10.0,
            resolution: 0.5,
        }
    }

    #[test]
    fn spec_rejects_non_integer_grid() {
        let mut spec = small_spec();
        spec.resolution = 0.3;
        assert!(spec.validate().is_err());
        spec.resolution = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn uniform_scene_rasterizes_to_all_ones() {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0],
            length_m: 100.0,
            lane_gap_m: 0.0,
        })
        .unwrap();
        let raster = rasterize(&scene, &small_spec()).unwrap();
        assert!(raster.cells.iter().all(|&c| c == 1));
    }

    #[test]
    fn four_way_center_cells_are_sentinel() {
        let scene = synth_scene(&SyntheticSpec::FourWay {
            leg_length_m: 30.0,
            lane_width_m: 3.5,
        })
        .unwrap();
        let spec = small_spec();
        let raster = rasterize(&scene, &spec).unwrap();
        for row in 0..spec.height() {
            for col in 0..spec.width() {
                let c = spec.cell_center_local(row, col);
                let expected_sentinel = scene.in_region(c, RegionKind::Intersection);
                assert_eq!(raster.get(row, col) == 0, expected_sentinel);
            }
        }
        assert!(raster.cells.iter().any(|&c| c == 0));
    }

    #[test]
    fn raster_matches_brute_force_oracle() {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0, 180.0],
            length_m: 100.0,
            lane_gap_m: 3.5,
        })
        .unwrap();
        let spec = small_spec();
        let raster = rasterize(&scene, &spec).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10_000 {
            let row = rng.gen_range(0..spec.height());
            let col = rng.gen_range(0..spec.width());
            let center = spec.cell_center_local(row, col);
            let expected = encode_heading(scene.nearest_lane_heading(center).unwrap());
            assert_eq!(raster.get(row, col), expected);
        }
    }

    #[test]
    fn index_equals_oracle_small() {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0, 180.0],
            length_m: 50.0,
            lane_gap_m: 3.5,
        })
        .unwrap();
        let index = LaneIndex::build(&scene).unwrap();
        for p in [
            Point2::new(1.0, 0.0),
            Point2::new(1.75, 0.0),
            Point2::new(-40.0, 300.0),
        ] {
            let (li, pi, h) = index.nearest(p);
            let (oli, opi, oh) = scene.nearest_lane_point(p).unwrap();
            assert_eq!((li, pi), (oli, opi));
            assert_eq!(h.degrees(), oh.degrees());
        }
    }

    #[test]
    fn index_equals_oracle_randomized() {
        let scene = synth_scene(&SyntheticSpec::FourWay {
            leg_length_m: 80.0,
            lane_width_m: 3.5,
        })
        .unwrap();
        let index = LaneIndex::build(&scene).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10_000 {
            let p = Point2::new(rng.gen_range(-120.0..120.0), rng.gen_range(-120.0..120.0));
            let got = index.nearest(p);
            let want = scene.nearest_lane_point(p).unwrap();
            assert_eq!((got.0, got.1), (want.0, want.1), "query {p:?}");
        }
    }

    #[test]
    fn single_point_scene_always_returns_it() {
        let scene = Scene {
            lanes: vec![crate::scene::LanePolyline {
                id: "only".into(),
                points: vec![Point2::new(3.0, 4.0)],
                headings_deg: vec![AngleDeg::new(77.0)],
            }],
            regions: vec![],
            ego: identity_pose(),
        };
        let index = LaneIndex::build(&scene).unwrap();
        for p in [
            Point2::new(0.0, 0.0),
            Point2::new(1000.0, -1000.0),
            Point2::new(3.0, 4.0),
        ] {
            assert_eq!(index.nearest(p).2.degrees(), 77.0);
        }
    }

    #[test]
    fn query_uniform_scene() {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0],
            length_m: 100.0,
            lane_gap_m: 0.0,
        })
        .unwrap();
        let raster = rasterize(&scene, &RasterSpec::with_defaults(identity_pose())).unwrap();
        match raster.query(Point2::new(0.1, 0.1)) {
            RasterQuery::Heading(h) => assert_relative_eq!(h.degrees(), 0.0),
            other => panic!("expected heading, got {other:?}"),
        }
        assert_eq!(raster.query(Point2::new(0.0, 200.0)), RasterQuery::OffMap);
    }

    #[test]
    fn query_intersection_sentinel() {
        let scene = synth_scene(&SyntheticSpec::FourWay {
            leg_length_m: 30.0,
            lane_width_m: 3.5,
        })
        .unwrap();
        let raster = rasterize(&scene, &small_spec()).unwrap();
        assert_eq!(
            raster.query(Point2::new(0.0, 0.0)),
            RasterQuery::Intersection
        );
    }

    #[test]
    fn pgm_round_trip_bit_exact() {
        let scene = synth_scene(&SyntheticSpec::Straight {
            headings_deg: vec![0.0, 180.0],
            length_m: 60.0,
            lane_gap_m: 3.5,
        })
        .unwrap();
        let raster = rasterize(&scene, &small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pgm1 = dir.path().join("a.pgm");
        let json1 = dir.path().join("a.json");
        raster.save(&pgm1, &json1).unwrap();
        let loaded = HeadingRaster::load(&pgm1, &json1).unwrap();
        assert_eq!(loaded, raster);
        let pgm2 = dir.path().join("b.pgm");
        let json2 = dir.path().join("b.json");
        loaded.save(&pgm2, &json2).unwrap();
        assert_eq!(std::fs::read(&pgm1).unwrap(), std::fs::read(&pgm2).unwrap());
        assert_eq!(
            std::fs::read(&json1).unwrap(),
            std::fs::read(&json2).unwrap()
        );
    }
}
