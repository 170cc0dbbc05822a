//! Alignment geometry: poses, rotated square regions of interest, and the
//! similarity transforms between image and crop coordinates.
//!
//! Image coordinates have x to the right and y down. Every angle in this
//! module is measured counter-clockwise as seen on screen, so the rotation
//! matrix for angle `r` acting on y-down coordinates is
//! `[[cos r, sin r], [-sin r, cos r]]`. A region's rotation is the angle of
//! the crop window relative to the image axes; the crop's "up" direction in
//! the image is `(-sin r, -cos r)`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::{KeypointId, NUM_KEYPOINTS};

/// Padding applied around the body when building a region from a pose or detection.
pub const DEFAULT_PADDING: f64 = 1.25;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn chebyshev(self) -> T {
        self.x.abs().max(self.y.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise on screen by `angle` about the origin.
    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x + s * self.y, c * self.y - s * self.x)
    }

    pub fn cast<U: Scalar>(self) -> Point2<U> {
        Point2::new(U::c(self.x.as_f64()), U::c(self.y.as_f64()))
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

pub fn midpoint<T: Scalar>(a: Point2<T>, b: Point2<T>) -> Point2<T> {
    let half = T::c(0.5);
    Point2::new((a.x + b.x) * half, (a.y + b.y) * half)
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle<T: Scalar>(angle: T) -> T {
    let pi = T::c(PI);
    let two_pi = pi + pi;
    let mut a = angle % two_pi;
    if a <= -pi {
        a = a + two_pi;
    } else if a > pi {
        a = a - two_pi;
    }
    a
}

/// 33 keypoints with per-point visibility in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose<T> {
    pub points: [Point2<T>; NUM_KEYPOINTS],
    pub visibility: [T; NUM_KEYPOINTS],
}

impl<T: Scalar> Pose<T> {
    pub fn new(points: [Point2<T>; NUM_KEYPOINTS], visibility: [T; NUM_KEYPOINTS]) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegeneratePose("non-finite keypoint coordinate"));
        }
        if visibility.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::DegeneratePose("visibility outside [0, 1]"));
        }
        Ok(Self { points, visibility })
    }

    /// All points fully visible.
    pub fn from_points(points: [Point2<T>; NUM_KEYPOINTS]) -> Result<Self> {
        Self::new(points, [T::one(); NUM_KEYPOINTS])
    }

    pub fn from_slices(points: &[Point2<T>], visibility: &[T]) -> Result<Self> {
        let points: [Point2<T>; NUM_KEYPOINTS] = points
            .try_into()
            .map_err(|_| Error::DegeneratePose("expected 33 keypoints"))?;
        let visibility: [T; NUM_KEYPOINTS] = visibility
            .try_into()
            .map_err(|_| Error::DegeneratePose("expected 33 visibility values"))?;
        Self::new(points, visibility)
    }

    pub fn point(&self, id: KeypointId) -> Point2<T> {
        self.points[id.index()]
    }

    pub fn mid_hip(&self) -> Point2<T> {
        midpoint(self.point(KeypointId::LEFT_HIP), self.point(KeypointId::RIGHT_HIP))
    }

    pub fn mid_shoulder(&self) -> Point2<T> {
        midpoint(
            self.point(KeypointId::LEFT_SHOULDER),
            self.point(KeypointId::RIGHT_SHOULDER),
        )
    }

    pub fn map_points(&self, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        Self {
            points: self.points.map(f),
            visibility: self.visibility,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        Pose {
            points: self.points.map(Point2::cast),
            visibility: self.visibility.map(|v| U::c(v.as_f64())),
        }
    }
}

/// Rotated square region: `side` pixels wide, centered at `center`, crop
/// window rotated by `rotation` radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi<T> {
    pub center: Point2<T>,
    pub side: T,
    pub rotation: T,
}

impl<T: Scalar> Roi<T> {
    pub fn new(center: Point2<T>, side: T, rotation: T) -> Result<Self> {
        if !(side > T::zero()) || !side.is_finite() {
            return Err(Error::InvalidRoi(format!("side must be positive, got {side}")));
        }
        if !center.is_finite() || !rotation.is_finite() {
            return Err(Error::InvalidRoi("non-finite center or rotation".into()));
        }
        Ok(Self {
            center,
            side,
            rotation: normalize_angle(rotation),
        })
    }
}

/// Person-detector output: hip center, radius of the circle around the whole
/// body, and the incline of the hip-to-shoulder axis (positive = clockwise lean).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection<T> {
    pub mid_hip: Point2<T>,
    pub circle_radius: T,
    pub incline: T,
}

/// `p ↦ scale · R(rotation) · p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform<T> {
    pub rotation: T,
    pub scale: T,
    pub translation: Point2<T>,
}

impl<T: Scalar> SimilarityTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: T::zero(),
            scale: T::one(),
            translation: Point2::zero(),
        }
    }

    pub fn translation(dx: T, dy: T) -> Self {
        Self {
            translation: Point2::new(dx, dy),
            ..Self::identity()
        }
    }

    pub fn apply(&self, p: Point2<T>) -> Point2<T> {
        p.rotated(self.rotation) * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = T::one() / self.scale;
        Self {
            rotation: -self.rotation,
            scale: inv_scale,
            translation: self.translation.rotated(-self.rotation) * (-inv_scale),
        }
    }

    pub fn apply_inverse(&self, p: Point2<T>) -> Point2<T> {
        (p - self.translation).rotated(-self.rotation) * (T::one() / self.scale)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation + other.rotation,
            scale: self.scale * other.scale,
            translation: self.apply(other.translation),
        }
    }
}

/// Crop rotation that makes the mid-hip → mid-shoulder axis point straight up.
pub fn estimate_rotation<T: Scalar>(pose: &Pose<T>) -> Result<T> {
    let axis = pose.mid_shoulder() - pose.mid_hip();
    if !axis.is_finite() {
        return Err(Error::DegeneratePose("non-finite hips or shoulders"));
    }
    if axis.norm() == T::zero() {
        return Err(Error::DegeneratePose("mid-hip coincides with mid-shoulder"));
    }
    Ok(normalize_angle((-axis.x).atan2(-axis.y)))
}

/// Square region centered on the mid-hip, rotated upright, large enough that
/// every keypoint fits after padding.
pub fn pose_to_roi<T: Scalar>(pose: &Pose<T>, padding: T) -> Result<Roi<T>> {
    if !(padding >= T::one()) {
        return Err(Error::InvalidRoi(format!("padding must be >= 1, got {padding}")));
    }
    let rotation = estimate_rotation(pose)?;
    let center = pose.mid_hip();
    let reach = pose
        .points
        .iter()
        .map(|p| (*p - center).rotated(-rotation).chebyshev())
        .fold(T::zero(), T::max);
    Roi::new(center, padding * (reach + reach), rotation)
}

pub fn detection_to_roi<T: Scalar>(det: &Detection<T>, padding: T) -> Result<Roi<T>> {
    if !(det.circle_radius > T::zero()) || !det.circle_radius.is_finite() {
        return Err(Error::InvalidDetection(format!(
            "circle radius must be positive, got {}",
            det.circle_radius
        )));
    }
    if !det.mid_hip.is_finite() || !det.incline.is_finite() {
        return Err(Error::InvalidDetection("non-finite center or incline".into()));
    }
    Roi::new(det.mid_hip, T::c(2.0) * det.circle_radius * padding, -det.incline)
}

/// Maps crop pixel coordinates `[0, crop_size]²` into the image.
pub fn roi_to_transform<T: Scalar>(roi: &Roi<T>, crop_size: usize) -> SimilarityTransform<T> {
    let scale = roi.side / T::c(crop_size as f64);
    let half = T::c(crop_size as f64 * 0.5);
    let rotation = roi.rotation;
    let offset = Point2::new(half, half).rotated(rotation) * scale;
    SimilarityTransform {
        rotation,
        scale,
        translation: roi.center - offset,
    }
}

pub fn transform_pose<T: Scalar>(pose: &Pose<T>, t: &SimilarityTransform<T>) -> Pose<T> {
    pose.map_points(|p| t.apply(p))
}

/// Image-space pose expressed in crop-normalized `[0, 1]²` coordinates of `roi`.
pub fn pose_to_crop<T: Scalar>(pose: &Pose<T>, roi: &Roi<T>) -> Pose<T> {
    let t = roi_to_transform(roi, 1);
    pose.map_points(|p| t.apply_inverse(p))
}

/// Inverse of [`pose_to_crop`].
pub fn pose_from_crop<T: Scalar>(pose: &Pose<T>, roi: &Roi<T>) -> Pose<T> {
    let t = roi_to_transform(roi, 1);
    pose.map_points(|p| t.apply(p))
}

/// Random scale and shift perturbation of a region; rotation is untouched.
pub fn jitter_roi<T: Scalar, R: Rng + ?Sized>(roi: &Roi<T>, rng: &mut R, scale_frac: f64, shift_frac: f64) -> Roi<T> {
    let side = roi.side.as_f64();
    let mut uniform = |frac: f64| {
        if frac > 0.0 {
            rng.random_range(-frac..=frac)
        } else {
            0.0
        }
    };
    let factor = 1.0 + uniform(scale_frac);
    let dx = uniform(shift_frac) * side;
    let dy = uniform(shift_frac) * side;
    Roi {
        center: roi.center + Point2::new(T::c(dx), T::c(dy)),
        side: T::c(side * factor),
        rotation: roi.rotation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    /// Pose whose hips sit at `hip` and shoulders at `shoulder`; every other
    /// point duplicates the mid-hip.
    fn torso_pose(hip: Point2<f64>, shoulder: Point2<f64>) -> Pose<f64> {
        let mut pts = [hip; NUM_KEYPOINTS];
        pts[KeypointId::LEFT_HIP.index()] = hip + p(1.0, 0.0);
        pts[KeypointId::RIGHT_HIP.index()] = hip - p(1.0, 0.0);
        pts[KeypointId::LEFT_SHOULDER.index()] = shoulder + p(1.0, 0.0);
        pts[KeypointId::RIGHT_SHOULDER.index()] = shoulder - p(1.0, 0.0);
        Pose::from_points(pts).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
        let pts = std::array::from_fn(|_| p(rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0)));
        let mut pose = Pose::from_points(pts).unwrap();
        // keep the torso axis well away from zero length
        pose.points[KeypointId::LEFT_SHOULDER.index()] = pose.points[KeypointId::LEFT_HIP.index()] + p(3.0, -40.0);
        pose.points[KeypointId::RIGHT_SHOULDER.index()] = pose.points[KeypointId::RIGHT_HIP.index()] + p(-2.0, -35.0);
        pose
    }

    #[test]
    fn midpoint_examples() {
        assert_eq!(midpoint(p(0.0, 0.0), p(2.0, 4.0)), p(1.0, 2.0));
        assert_eq!(midpoint(p(3.5, 3.5), p(3.5, 3.5)), p(3.5, 3.5));
        assert_eq!(midpoint(p(-1.0, 3.0), p(1.0, -3.0)), p(0.0, 0.0));
    }

    #[test]
    fn rotation_examples() {
        let upright = torso_pose(p(5.0, 5.0), p(5.0, 1.0));
        assert_eq!(estimate_rotation(&upright).unwrap(), 0.0);

        let sideways = torso_pose(p(5.0, 5.0), p(9.0, 5.0));
        let theta = estimate_rotation(&sideways).unwrap();
        // oracle: angle between (4, 0) and the up vector (0, -1), counter-clockwise on screen
        let oracle = -(4.0f64.atan2(0.0));
        assert!((theta - oracle).abs() < 1e-12);
        assert!((theta + PI / 2.0).abs() < 1e-12);

        let upside_down = torso_pose(p(5.0, 5.0), p(5.0, 9.0));
        assert!((estimate_rotation(&upside_down).unwrap().abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pose_rejected() {
        let pose = torso_pose(p(5.0, 5.0), p(5.0, 5.0));
        assert!(matches!(estimate_rotation(&pose), Err(Error::DegeneratePose(_))));
        assert!(pose_to_roi(&pose, 1.25).is_err());
    }

    #[test]
    fn pose_to_roi_symmetric_vertical() {
        let d = 7.0;
        let hip = p(20.0, 30.0);
        let mut pose = torso_pose(hip, hip - p(0.0, d));
        // hips and shoulders lie within d of mid-hip; add the extremes
        pose.points[0] = hip - p(0.0, d);
        pose.points[32] = hip + p(0.0, d);
        for pt in pose.points.iter_mut().skip(1).take(10) {
            *pt = hip;
        }
        let roi = pose_to_roi(&pose, 1.0).unwrap();
        assert_eq!(roi.rotation, 0.0);
        assert!((roi.side - 2.0 * d).abs() < 1e-12);
        assert_eq!(roi.center, hip);
        let padded = pose_to_roi(&pose, 1.25).unwrap();
        assert!((padded.side - 2.5 * d).abs() < 1e-12);
    }

    #[test]
    fn padding_below_one_rejected() {
        let pose = torso_pose(p(5.0, 5.0), p(5.0, 1.0));
        assert!(pose_to_roi(&pose, 0.9).is_err());
    }

    #[test]
    fn detection_examples() {
        let det = Detection {
            mid_hip: p(10.0, 10.0),
            circle_radius: 5.0,
            incline: 0.0,
        };
        let roi = detection_to_roi(&det, 1.0).unwrap();
        assert_eq!(roi.center, p(10.0, 10.0));
        assert_eq!(roi.side, 10.0);
        assert_eq!(roi.rotation, 0.0);
        assert_eq!(detection_to_roi(&det, 1.25).unwrap().side, 12.5);

        let bad = Detection {
            circle_radius: 0.0,
            ..det
        };
        assert!(matches!(detection_to_roi(&bad, 1.0), Err(Error::InvalidDetection(_))));
    }

    #[test]
    fn detection_rotation_matches_pose_rotation() {
        // body leaning clockwise by π/4: axis direction (sin α, -cos α)
        let alpha = PI / 4.0;
        let hip = p(50.0, 50.0);
        let shoulder = hip + p(alpha.sin(), -alpha.cos()) * 30.0;
        let pose = torso_pose(hip, shoulder);
        let det = Detection {
            mid_hip: hip,
            circle_radius: 40.0,
            incline: alpha,
        };
        let from_det = detection_to_roi(&det, 1.25).unwrap().rotation;
        let from_pose = estimate_rotation(&pose).unwrap();
        assert!((from_det - from_pose).abs() < 1e-6);
    }

    #[test]
    fn transform_examples() {
        let roi = Roi::new(p(5.0, 5.0), 10.0, 0.0).unwrap();
        let t = roi_to_transform(&roi, 10);
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.apply(p(5.0, 5.0)), p(5.0, 5.0));
        assert_eq!(t.apply(p(0.0, 0.0)), p(0.0, 0.0));

        // rotation by π sends the (0,0) corner to the opposite corner; 2x2 rotation-matrix oracle
        let flipped = roi_to_transform(&Roi::new(p(5.0, 5.0), 10.0, PI).unwrap(), 10);
        let corner = flipped.apply(p(0.0, 0.0));
        let (s, c) = PI.sin_cos();
        let oracle = p(5.0 + (c * -5.0 + s * -5.0), 5.0 + (-s * -5.0 + c * -5.0));
        assert!((corner - oracle).norm() < 1e-12);
        assert!((corner - p(10.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn crop_up_axis_follows_rotation() {
        // crop rotated by -π/2 has its up direction pointing right in the image
        let roi = Roi::new(p(0.0, 0.0), 2.0, -PI / 2.0).unwrap();
        let t = roi_to_transform(&roi, 2);
        let up = t.apply(p(1.0, 0.0)) - t.apply(p(1.0, 1.0));
        assert!((up - p(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_pose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        assert_eq!(transform_pose(&pose, &SimilarityTransform::identity()), pose);

        let shifted = transform_pose(&pose, &SimilarityTransform::translation(3.0, -2.0));
        for (a, b) in pose.points.iter().zip(shifted.points.iter()) {
            assert_eq!(*b, *a + p(3.0, -2.0));
        }
        assert_eq!(shifted.visibility, pose.visibility);

        let doubled = transform_pose(
            &pose,
            &SimilarityTransform {
                scale: 2.0,
                ..SimilarityTransform::identity()
            },
        );
        for i in 0..NUM_KEYPOINTS {
            for j in 0..NUM_KEYPOINTS {
                let d0 = pose.points[i].distance(pose.points[j]);
                let d1 = doubled.points[i].distance(doubled.points[j]);
                assert!((d1 - 2.0 * d0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jitter_zero_is_identity_and_seeded() {
        let roi = Roi::new(p(10.0, 20.0), 40.0, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(jitter_roi(&roi, &mut rng, 0.0, 0.0), roi);

        let a = jitter_roi(&roi, &mut ChaCha8Rng::seed_from_u64(9), 0.1, 0.1);
        let b = jitter_roi(&roi, &mut ChaCha8Rng::seed_from_u64(9), 0.1, 0.1);
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_monte_carlo_bounds() {
        let roi = Roi::new(p(10.0, 20.0), 40.0, -1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let j = jitter_roi(&roi, &mut rng, 0.1, 0.1);
            let ratio = j.side / roi.side;
            assert!((0.9..=1.1).contains(&ratio));
            assert!(j.center.distance(roi.center) <= 0.1 * roi.side * 2f64.sqrt() + 1e-12);
            assert_eq!(j.rotation, roi.rotation);
        }
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let roi = Roi::new(Point2::new(5.0f32, 5.0), 10.0, 0.25).unwrap();
        let t = roi_to_transform(&roi, 64);
        let q = Point2::new(12.0f32, 40.0);
        assert!((t.apply(t.apply_inverse(q)) - q).norm() < 1e-4);
    }

    proptest! {
        #[test]
        fn transform_round_trip(cx in -100.0..100.0f64, cy in -100.0..100.0f64, side in 1.0..300.0f64,
                                rot in -3.2..3.2f64, crop in 1usize..256, x in -500.0..500.0f64, y in -500.0..500.0f64) {
            let roi = Roi::new(p(cx, cy), side, rot).unwrap();
            let t = roi_to_transform(&roi, crop);
            let q = p(x, y);
            prop_assert!((t.apply(t.apply_inverse(q)) - q).chebyshev() <= 1e-9);
            let id = t.compose(&t.inverse());
            prop_assert!((id.apply(q) - q).chebyshev() <= 1e-9);
        }

        #[test]
        fn aligned_points_fit_unit_square(seed in 0u64..5000, pad in 1.0..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = random_pose(&mut rng);
            let roi = pose_to_roi(&pose, pad).unwrap();
            let crop = pose_to_crop(&pose, &roi);
            for q in crop.points {
                prop_assert!(q.x >= -1e-12 && q.x <= 1.0 + 1e-12 && q.y >= -1e-12 && q.y <= 1.0 + 1e-12);
            }
            let back = pose_from_crop(&crop, &roi);
            for (a, b) in back.points.iter().zip(pose.points.iter()) {
                prop_assert!((*a - *b).chebyshev() < 1e-9);
            }
        }

        #[test]
        fn rotation_verticalizes_torso(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = random_pose(&mut rng);
            let theta = estimate_rotation(&pose).unwrap();
            let hip = pose.mid_hip();
            let axis = (pose.mid_shoulder() - hip).rotated(-theta);
            prop_assert!(axis.x.abs() <= 1e-9);
            prop_assert!(axis.y < 0.0);
        }
    }
}
