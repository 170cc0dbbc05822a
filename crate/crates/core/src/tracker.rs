//! Detector-tracker loop.
//!
//! The detector runs only when no region of interest is carried over from
//! the previous frame. Otherwise the pose predicted on the previous frame
//! defines the crop, and the person is considered tracked as long as the
//! predicted torso visibility stays above a threshold.

use serde::{Deserialize, Serialize};

use crate::geometry::{detection_to_roi, pose_to_roi, DEFAULT_PADDING};
use crate::posenet::{predict_pose, PoseNet};
use crate::synthdata::Image;
use crate::topology::KeypointId;
use crate::{Detection, Error, Pose, Result, Roi};

/// Person detector. `frame` is the 1-based index of the frame in its clip.
pub trait DetectorPort {
    fn detect(&mut self, frame: usize, image: &Image) -> Result<Option<Detection>>;
}

/// Pose estimator operating on a region of an image; returns image-space
/// keypoints with per-point visibility.
pub trait PoseModel {
    fn predict(&mut self, frame: usize, image: &Image, roi: &Roi) -> Result<Pose>;
}

/// Never finds anyone.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullDetector;

impl DetectorPort for NullDetector {
    fn detect(&mut self, _frame: usize, _image: &Image) -> Result<Option<Detection>> {
        Ok(None)
    }
}

/// Detection derived from a known pose: hip center, radius of the smallest
/// hip-centered circle containing every keypoint, and the torso incline.
pub fn detection_from_pose(pose: &Pose) -> Result<Detection> {
    let center = pose.mid_hip();
    let axis = pose.mid_shoulder() - center;
    if axis.norm() == 0.0 || !axis.is_finite() {
        return Err(Error::DegeneratePose("mid-hip coincides with mid-shoulder"));
    }
    let radius = pose.points.iter().map(|p| p.distance(center)).fold(0.0, f64::max);
    Ok(Detection {
        mid_hip: center,
        circle_radius: radius,
        incline: axis.x.atan2(-axis.y),
    })
}

/// Perturbation applied by [`OracleDetector`]; shifts are fractions of the radius.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorNoise {
    pub center: f64,
    pub radius: f64,
    /// Radians.
    pub incline: f64,
}

/// Reads ground-truth poses and reports detections built from them. Frames
/// whose pose is missing or whose torso is entirely invisible yield nothing.
pub struct OracleDetector {
    poses: Vec<Option<Pose>>,
    noise: DetectorNoise,
    rng: rand_chacha::ChaCha8Rng,
}

impl OracleDetector {
    pub fn new(poses: Vec<Option<Pose>>, noise: DetectorNoise, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            poses,
            noise,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn exact(poses: Vec<Pose>) -> Self {
        Self::new(poses.into_iter().map(Some).collect(), DetectorNoise::default(), 0)
    }
}

impl DetectorPort for OracleDetector {
    fn detect(&mut self, frame: usize, _image: &Image) -> Result<Option<Detection>> {
        use rand::Rng;
        let Some(Some(pose)) = frame.checked_sub(1).and_then(|i| self.poses.get(i)) else {
            return Ok(None);
        };
        if torso_ids().iter().all(|id| pose.visibility[id.index()] < 0.5) {
            return Ok(None);
        }
        let mut det = detection_from_pose(pose)?;
        let mut u = |scale: f64| {
            if scale > 0.0 {
                self.rng.random_range(-scale..=scale)
            } else {
                0.0
            }
        };
        let r = det.circle_radius;
        det.mid_hip.x += u(self.noise.center) * r;
        det.mid_hip.y += u(self.noise.center) * r;
        det.circle_radius *= 1.0 + u(self.noise.radius);
        det.incline += u(self.noise.incline);
        Ok(Some(det))
    }
}

/// [`PoseModel`] backed by the keypoint network.
pub struct NetworkModel<'a> {
    pub model: &'a PoseNet<f32>,
}

impl PoseModel for NetworkModel<'_> {
    fn predict(&mut self, _frame: usize, image: &Image, roi: &Roi) -> Result<Pose> {
        predict_pose(self.model, image, roi)
    }
}

fn torso_ids() -> [KeypointId; 4] {
    [
        KeypointId::LEFT_SHOULDER,
        KeypointId::RIGHT_SHOULDER,
        KeypointId::LEFT_HIP,
        KeypointId::RIGHT_HIP,
    ]
}

/// Mean visibility of the shoulders and hips.
pub fn presence_score(visibility: &[f64]) -> f64 {
    torso_ids().iter().map(|id| visibility[id.index()]).sum::<f64>() / 4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub presence_threshold: f64,
    /// Used for both detector and pose-derived regions.
    pub roi_padding: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            presence_threshold: 0.5,
            roi_padding: DEFAULT_PADDING,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.presence_threshold > 0.0 && self.presence_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "presence threshold must lie in (0, 1), got {}",
                self.presence_threshold
            )));
        }
        if !(self.roi_padding >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "padding must be >= 1, got {}",
                self.roi_padding
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    AwaitingDetection,
    Tracking(Roi),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    /// 1-based.
    pub frame: usize,
    pub pose: Pose,
    pub presence: f64,
    pub roi_used: Roi,
    pub detector_ran: bool,
    /// Presence fell below the threshold; the next frame runs the detector.
    pub lost: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FrameOutcome {
    Person(FrameResult),
    /// The detector ran and found nobody.
    NoPerson {
        frame: usize,
    },
}

impl FrameOutcome {
    pub fn frame(&self) -> usize {
        match self {
            FrameOutcome::Person(r) => r.frame,
            FrameOutcome::NoPerson { frame } => *frame,
        }
    }

    pub fn detector_ran(&self) -> bool {
        match self {
            FrameOutcome::Person(r) => r.detector_ran,
            FrameOutcome::NoPerson { .. } => true,
        }
    }

    pub fn result(&self) -> Option<&FrameResult> {
        match self {
            FrameOutcome::Person(r) => Some(r),
            FrameOutcome::NoPerson { .. } => None,
        }
    }

    /// `{"frame", "detector_ran", "presence", "pose", "lost"}`; `pose` is a
    /// list of `[x, y, visibility]` or null.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            FrameOutcome::Person(r) => serde_json::json!({
                "frame": r.frame,
                "detector_ran": r.detector_ran,
                "presence": r.presence,
                "pose": r.pose.points.iter().zip(r.pose.visibility)
                    .map(|(p, v)| [p.x, p.y, v]).collect::<Vec<_>>(),
                "lost": r.lost,
            }),
            FrameOutcome::NoPerson { frame } => serde_json::json!({
                "frame": frame,
                "detector_ran": true,
                "presence": 0.0,
                "pose": null,
                "lost": false,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    pub mode: Mode,
    /// Frames processed so far.
    pub frame: usize,
    pub last: Option<FrameResult>,
}

impl Default for TrackerState {
    fn default() -> Self {
        Self {
            mode: Mode::AwaitingDetection,
            frame: 0,
            last: None,
        }
    }
}

/// One step of the state machine. Errors carry the 1-based frame index.
pub fn process_frame(
    state: &TrackerState,
    image: &Image,
    detector: &mut dyn DetectorPort,
    model: &mut dyn PoseModel,
    config: &TrackerConfig,
) -> Result<(FrameOutcome, TrackerState)> {
    let frame = state.frame + 1;
    let at_frame = |e: Error| Error::Frame {
        frame,
        source: Box::new(e),
    };
    let (roi, detector_ran) = match state.mode {
        Mode::Tracking(roi) => (roi, false),
        Mode::AwaitingDetection => match detector.detect(frame, image).map_err(at_frame)? {
            None => {
                let next = TrackerState {
                    mode: Mode::AwaitingDetection,
                    frame,
                    last: None,
                };
                return Ok((FrameOutcome::NoPerson { frame }, next));
            }
            Some(det) => (detection_to_roi(&det, config.roi_padding).map_err(at_frame)?, true),
        },
    };
    let pose = model.predict(frame, image, &roi).map_err(at_frame)?;
    let presence = presence_score(&pose.visibility);
    let next_roi = if presence >= config.presence_threshold {
        pose_to_roi(&pose, config.roi_padding).ok()
    } else {
        None
    };
    let result = FrameResult {
        frame,
        pose,
        presence,
        roi_used: roi,
        detector_ran,
        lost: next_roi.is_none(),
    };
    let next = TrackerState {
        mode: next_roi.map_or(Mode::AwaitingDetection, Mode::Tracking),
        frame,
        last: Some(result.clone()),
    };
    Ok((FrameOutcome::Person(result), next))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRun {
    pub outcomes: Vec<FrameOutcome>,
}

impl ClipRun {
    /// 1-based frames on which the detector ran.
    pub fn detector_frames(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .filter(|o| o.detector_ran())
            .map(FrameOutcome::frame)
            .collect()
    }
}

/// Runs the state machine over frames in order.
pub fn run_clip<I>(
    frames: I,
    config: &TrackerConfig,
    detector: &mut dyn DetectorPort,
    model: &mut dyn PoseModel,
) -> Result<ClipRun>
where
    I: IntoIterator<Item = Result<Image>>,
{
    config.validate()?;
    let mut state = TrackerState::default();
    let mut outcomes = Vec::new();
    for image in frames {
        let frame = state.frame + 1;
        let image = image.map_err(|e| Error::Frame {
            frame,
            source: Box::new(e),
        })?;
        let (outcome, next) = process_frame(&state, &image, detector, model, config)?;
        outcomes.push(outcome);
        state = next;
    }
    if outcomes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ClipRun { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_rotation, Point2};
    use crate::synthdata::{sample_puppet, PuppetRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presence_examples() {
        let mut v = [0.0; 33];
        assert_eq!(presence_score(&v), 0.0);
        for i in [11, 12, 23, 24] {
            v[i] = 1.0;
        }
        assert_eq!(presence_score(&v), 1.0);
        v[23] = 0.0;
        v[24] = 0.0;
        assert_eq!(presence_score(&v), 0.5);
    }

    #[test]
    fn detection_roi_matches_pose_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (_, pose) = sample_puppet(&mut rng, 128, 128, &PuppetRanges::default());
            let det = detection_from_pose(&pose).unwrap();
            let roi = detection_to_roi(&det, 1.25).unwrap();
            let theta = estimate_rotation(&pose).unwrap();
            let diff = crate::geometry::normalize_angle(roi.rotation - theta);
            assert!(diff.abs() < 1e-12, "{} vs {}", roi.rotation, theta);
            assert_eq!(roi.center, pose.mid_hip());
            for p in pose.points {
                assert!(p.distance(det.mid_hip) <= det.circle_radius + 1e-12);
            }
        }
    }

    #[test]
    fn oracle_skips_missing_frames() {
        let img = Image::new(8, 8, [0.0; 3]).unwrap();
        let pose = Pose::from_points([Point2::new(1.0, 1.0); 33]).unwrap();
        let mut hidden = pose.clone();
        hidden.visibility = [0.0; 33];
        let mut det = OracleDetector::new(vec![None, Some(hidden)], DetectorNoise::default(), 0);
        assert!(det.detect(1, &img).unwrap().is_none());
        assert!(det.detect(2, &img).unwrap().is_none());
        assert!(det.detect(3, &img).unwrap().is_none());
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        for t in [0.0, 1.0, -0.5] {
            let c = TrackerConfig {
                presence_threshold: t,
                ..Default::default()
            };
            assert!(c.validate().is_err());
        }
    }
}
