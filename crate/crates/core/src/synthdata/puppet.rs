//! Articulated 2D puppet and its forward kinematics.
//!
//! Lengths are multiples of `scale`, the mid-hip to mid-shoulder distance.
//! The puppet faces the camera, so its left side appears on the image right.
//! Limb angles are measured from "hanging straight down" and grow away from
//! the body midline; a zero angle everywhere with zero lean is a standing pose
//! with the shoulders directly above the hips.

use std::f64::consts::PI;

use rand::Rng;

use crate::geometry::Point2;
use crate::topology::NUM_KEYPOINTS;
use crate::{Point, Pose};

pub const SHOULDER_HALF_WIDTH: f64 = 0.26;
pub const HIP_HALF_WIDTH: f64 = 0.17;
pub const NECK_LENGTH: f64 = 0.38;
pub const HEAD_RADIUS: f64 = 0.2;
pub const UPPER_ARM: f64 = 0.42;
pub const FOREARM: f64 = 0.38;
pub const THIGH: f64 = 0.5;
pub const SHIN: f64 = 0.45;

/// Angles of one limb: proximal joint, distal joint (relative to the
/// proximal segment), and hand or foot bend.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LimbAngles {
    pub upper: f64,
    pub lower: f64,
    pub end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuppetParams {
    /// Mid-hip position in image pixels.
    pub root: Point,
    /// Torso length in pixels.
    pub scale: f64,
    /// Clockwise lean of the torso axis.
    pub lean: f64,
    pub head_tilt: f64,
    /// Left then right.
    pub arms: [LimbAngles; 2],
    pub legs: [LimbAngles; 2],
    /// Per-sample brightness multiplier for the body colors.
    pub shade: f64,
    /// Seed of the background texture.
    pub texture_seed: u64,
}

/// Sampling ranges for [`sample_puppet`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PuppetRanges {
    pub scale: (f64, f64),
    pub lean: f64,
    pub head_tilt: f64,
    pub arm_upper: (f64, f64),
    pub arm_lower: (f64, f64),
    pub leg_upper: (f64, f64),
    pub leg_lower: (f64, f64),
    pub end: f64,
}

impl Default for PuppetRanges {
    fn default() -> Self {
        Self {
            scale: (22.0, 30.0),
            lean: 0.5,
            head_tilt: 0.3,
            arm_upper: (-0.3, 2.6),
            arm_lower: (-1.8, 1.8),
            leg_upper: (-0.25, 0.9),
            leg_lower: (-1.2, 0.4),
            end: 0.35,
        }
    }
}

impl PuppetParams {
    /// Standing pose with all joint angles zero.
    pub fn neutral(root: Point, scale: f64) -> Self {
        Self {
            root,
            scale,
            lean: 0.0,
            head_tilt: 0.0,
            arms: [LimbAngles::default(); 2],
            legs: [LimbAngles::default(); 2],
            shade: 1.0,
            texture_seed: 0,
        }
    }

    /// Body frame: unit "up" along the torso and unit "right" in the image.
    fn frame(&self) -> (Point, Point) {
        let (s, c) = self.lean.sin_cos();
        (Point2::new(s, -c), Point2::new(c, s))
    }

    /// Direction at `angle` from straight down, turning toward `side` (+1 = image right).
    fn limb_dir(&self, angle: f64, side: f64) -> Point {
        let (up, right) = self.frame();
        let (s, c) = angle.sin_cos();
        right * (s * side) + up * (-c)
    }

    pub fn head_center(&self) -> Point {
        let (up, right) = self.frame();
        let head_up = up * self.head_tilt.cos() + right * self.head_tilt.sin();
        self.mid_shoulder() + head_up * (NECK_LENGTH * self.scale)
    }

    pub fn mid_shoulder(&self) -> Point {
        let (up, _) = self.frame();
        self.root + up * self.scale
    }

    /// Forward kinematics for all 33 keypoints.
    pub fn keypoints(&self) -> [Point; NUM_KEYPOINTS] {
        let s = self.scale;
        let (_, right) = self.frame();
        let mut k = [Point2::zero(); NUM_KEYPOINTS];

        let shoulder = self.mid_shoulder();
        let head = self.head_center();
        let head_up = (head - shoulder) * (1.0 / (NECK_LENGTH * s));
        let head_right = Point2::new(-head_up.y, head_up.x);
        let face = |dx: f64, dy: f64| head + head_right * (dx * s) + head_up * (dy * s);
        k[0] = face(0.0, -0.02);
        // left eye inner, eye, outer; then right
        k[1] = face(0.045, 0.06);
        k[2] = face(0.08, 0.065);
        k[3] = face(0.115, 0.06);
        k[4] = face(-0.045, 0.06);
        k[5] = face(-0.08, 0.065);
        k[6] = face(-0.115, 0.06);
        k[7] = face(0.19, 0.02);
        k[8] = face(-0.19, 0.02);
        k[9] = face(0.055, -0.1);
        k[10] = face(-0.055, -0.1);

        for (i, side) in [(0usize, 1.0f64), (1, -1.0)] {
            let arm = self.arms[i];
            let sh = shoulder + right * (side * SHOULDER_HALF_WIDTH * s);
            let upper = self.limb_dir(arm.upper, side);
            let elbow = sh + upper * (UPPER_ARM * s);
            let lower = self.limb_dir(arm.upper + arm.lower, side);
            let wrist = elbow + lower * (FOREARM * s);
            let hand = self.limb_dir(arm.upper + arm.lower + arm.end, side);
            // palm faces the camera; the thumb sits on the body side of the hand
            let across = Point2::new(-hand.y, hand.x) * side;
            k[11 + i] = sh;
            k[13 + i] = elbow;
            k[15 + i] = wrist;
            k[17 + i] = wrist + hand * (0.13 * s) + across * (0.045 * s);
            k[19 + i] = wrist + hand * (0.15 * s) - across * (0.03 * s);
            k[21 + i] = wrist + hand * (0.06 * s) - across * (0.08 * s);

            let leg = self.legs[i];
            let hip = self.root + right * (side * HIP_HALF_WIDTH * s);
            let thigh = self.limb_dir(leg.upper, side);
            let knee = hip + thigh * (THIGH * s);
            let shin = self.limb_dir(leg.upper + leg.lower, side);
            let ankle = knee + shin * (SHIN * s);
            let foot = self.limb_dir(leg.upper + leg.lower + PI / 2.0 + leg.end, side);
            let heel = ankle + shin * (0.07 * s) - foot * (0.04 * s);
            k[23 + i] = hip;
            k[25 + i] = knee;
            k[27 + i] = ankle;
            k[29 + i] = heel;
            k[31 + i] = heel + foot * (0.2 * s);
        }
        k
    }

    pub fn pose(&self) -> Pose {
        Pose::from_points(self.keypoints()).expect("finite forward kinematics")
    }

    /// Smallest distance from any keypoint or the head outline to the canvas border.
    pub fn margin(&self, width: usize, height: usize) -> f64 {
        let head = self.head_center();
        let r = HEAD_RADIUS * self.scale;
        let head_box = [head + Point2::new(r, r), head - Point2::new(r, r)];
        self.keypoints()
            .iter()
            .chain(head_box.iter())
            .map(|p| p.x.min(p.y).min(width as f64 - p.x).min(height as f64 - p.y))
            .fold(f64::INFINITY, f64::min)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

/// Joint configuration and appearance, without placement.
pub fn sample_articulation<R: Rng + ?Sized>(rng: &mut R, ranges: &PuppetRanges) -> PuppetParams {
    let limb = |rng: &mut R, upper: (f64, f64), lower: (f64, f64)| LimbAngles {
        upper: uniform(rng, upper),
        lower: uniform(rng, lower),
        end: uniform(rng, (-ranges.end, ranges.end)),
    };
    let arms = [
        limb(rng, ranges.arm_upper, ranges.arm_lower),
        limb(rng, ranges.arm_upper, ranges.arm_lower),
    ];
    let legs = [
        limb(rng, ranges.leg_upper, ranges.leg_lower),
        limb(rng, ranges.leg_upper, ranges.leg_lower),
    ];
    PuppetParams {
        root: Point2::zero(),
        scale: uniform(rng, ranges.scale),
        lean: uniform(rng, (-ranges.lean, ranges.lean)),
        head_tilt: uniform(rng, (-ranges.head_tilt, ranges.head_tilt)),
        arms,
        legs,
        shade: uniform(rng, (0.8, 1.15)),
        texture_seed: rng.random(),
    }
}

/// Bounding box of the keypoints in `ids` plus the head outline.
fn extent(params: &PuppetParams, pts: &[Point], ids: std::ops::Range<usize>) -> (Point, Point) {
    let r = HEAD_RADIUS * params.scale;
    let head = params.head_center();
    let mut lo = Point2::new(head.x - r, head.y - r);
    let mut hi = Point2::new(head.x + r, head.y + r);
    for p in &pts[ids] {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

const PLACEMENT_MARGIN: f64 = 2.0;

/// Random puppet placed so the whole body lies inside a `width × height` canvas.
pub fn sample_puppet<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    ranges: &PuppetRanges,
) -> (PuppetParams, Pose) {
    loop {
        let mut params = sample_articulation(rng, ranges);
        let pts = params.keypoints();
        let (lo, hi) = extent(&params, &pts, 0..NUM_KEYPOINTS);
        let span = hi - lo;
        let free_x = width as f64 - 2.0 * PLACEMENT_MARGIN - span.x;
        let free_y = height as f64 - 2.0 * PLACEMENT_MARGIN - span.y;
        if free_x <= 0.0 || free_y <= 0.0 {
            continue;
        }
        let ox = PLACEMENT_MARGIN + rng.random_range(0.0..free_x) - lo.x;
        let oy = PLACEMENT_MARGIN + rng.random_range(0.0..free_y) - lo.y;
        params.root = Point2::new(ox, oy);
        return (params, params.pose());
    }
}

/// Random puppet whose head, arms and hips lie inside the canvas while at least
/// one leg keypoint falls below its bottom edge.
pub fn sample_upper_body_puppet<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    ranges: &PuppetRanges,
) -> (PuppetParams, Pose) {
    let (w, h) = (width as f64, height as f64);
    loop {
        let mut params = sample_articulation(rng, ranges);
        let pts = params.keypoints();
        let (lo, hi) = extent(&params, &pts, 0..25);
        let lowest_leg = pts[25..].iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let free_x = w - 2.0 * PLACEMENT_MARGIN - (hi.x - lo.x);
        let y_min = (PLACEMENT_MARGIN - lo.y).max(h + 1.0 - lowest_leg);
        let y_max = h - PLACEMENT_MARGIN - hi.y;
        if free_x <= 0.0 || y_min >= y_max {
            continue;
        }
        let ox = PLACEMENT_MARGIN + rng.random_range(0.0..free_x) - lo.x;
        let oy = rng.random_range(y_min..y_max);
        params.root = Point2::new(ox, oy);
        return (params, params.pose());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::estimate_rotation;
    use crate::topology::KeypointId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn neutral_pose_is_upright() {
        let p = PuppetParams::neutral(Point2::new(50.0, 60.0), 20.0).pose();
        let hip = p.mid_hip();
        let sh = p.mid_shoulder();
        assert!((hip.x - sh.x).abs() < 1e-12);
        assert!(sh.y < hip.y);
        assert!((hip.distance(sh) - 20.0).abs() < 1e-12);
        assert_eq!(estimate_rotation(&p).unwrap(), 0.0);
        // left side on the image right
        assert!(p.point(KeypointId::LEFT_SHOULDER).x > p.point(KeypointId::RIGHT_SHOULDER).x);
        assert!(p.point(KeypointId::LEFT_EYE).x > p.point(KeypointId::NOSE).x);
        // arms hang below the shoulders
        assert!(p.point(KeypointId::LEFT_WRIST).y > p.point(KeypointId::LEFT_ELBOW).y);
    }

    #[test]
    fn lean_rotates_torso() {
        let mut params = PuppetParams::neutral(Point2::new(50.0, 60.0), 20.0);
        params.lean = 0.3;
        let theta = estimate_rotation(&params.pose()).unwrap();
        assert!((theta + 0.3).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let ranges = PuppetRanges::default();
        let a = sample_puppet(&mut ChaCha8Rng::seed_from_u64(11), 128, 128, &ranges);
        let b = sample_puppet(&mut ChaCha8Rng::seed_from_u64(11), 128, 128, &ranges);
        assert_eq!(a, b);
    }

    #[test]
    fn samples_fit_canvas() {
        let ranges = PuppetRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let (params, pose) = sample_puppet(&mut rng, 128, 128, &ranges);
            assert!(params.margin(128, 128) > 0.0);
            for p in pose.points {
                assert!(p.x > 0.0 && p.y > 0.0 && p.x < 128.0 && p.y < 128.0);
            }
            assert!(pose.mid_hip().distance(pose.mid_shoulder()) > 0.0);
            assert!(pose.visibility.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn upper_body_samples_cut_legs() {
        let ranges = PuppetRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let (_, pose) = sample_upper_body_puppet(&mut rng, 128, 128, &ranges);
            for p in &pose.points[..25] {
                assert!(p.x > 0.0 && p.y > 0.0 && p.x < 128.0 && p.y < 128.0);
            }
            assert!(pose.points[25..].iter().any(|p| p.y > 128.0));
        }
    }
}
