//! Short synthetic videos: one puppet moving smoothly between random keyframes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{sample_rng, DatasetManifest, Record, MANIFEST_FILE};
use super::image::Image;
use super::puppet::{sample_puppet, LimbAngles, PuppetParams, PuppetRanges};
use super::render::render_puppet;
use crate::geometry::Point2;
use crate::topology::NUM_KEYPOINTS;
use crate::{Error, Pose, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub frames: usize,
    pub canvas: usize,
    /// Frames between consecutive keyframes.
    pub keyframe_interval: usize,
    pub puppet: PuppetRanges,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            frames: 50,
            canvas: 128,
            keyframe_interval: 12,
            puppet: PuppetRanges::default(),
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn lerp_limb(a: LimbAngles, b: LimbAngles, t: f64) -> LimbAngles {
    LimbAngles {
        upper: lerp(a.upper, b.upper, t),
        lower: lerp(a.lower, b.lower, t),
        end: lerp(a.end, b.end, t),
    }
}

/// Blend of two keyframes; appearance comes from `a`.
pub fn interpolate(a: &PuppetParams, b: &PuppetParams, t: f64) -> PuppetParams {
    PuppetParams {
        root: Point2::new(lerp(a.root.x, b.root.x, t), lerp(a.root.y, b.root.y, t)),
        scale: lerp(a.scale, b.scale, t),
        lean: lerp(a.lean, b.lean, t),
        head_tilt: lerp(a.head_tilt, b.head_tilt, t),
        arms: [0, 1].map(|i| lerp_limb(a.arms[i], b.arms[i], t)),
        legs: [0, 1].map(|i| lerp_limb(a.legs[i], b.legs[i], t)),
        ..*a
    }
}

/// Frames of a clip with their ground-truth poses. Points that drift off the
/// canvas are marked invisible.
pub fn generate_clip(seed: u64, config: &ClipConfig) -> Result<Vec<(Image, Pose)>> {
    if config.frames == 0 || config.canvas == 0 || config.keyframe_interval == 0 {
        return Err(Error::InvalidConfig(
            "clip frames, canvas and keyframe interval must be positive".into(),
        ));
    }
    let mut rng = sample_rng(seed, u64::MAX);
    let size = config.canvas;
    let (first, _) = sample_puppet(&mut rng, size, size, &config.puppet);
    let mut ranges = config.puppet;
    ranges.scale = (first.scale, first.scale);
    let keyframes = config.frames.div_ceil(config.keyframe_interval) + 1;
    let mut keys = vec![first];
    for _ in 1..keyframes {
        keys.push(sample_puppet(&mut rng, size, size, &ranges).0);
    }
    let frames = (0..config.frames)
        .map(|f| {
            let k = f / config.keyframe_interval;
            let t = (f % config.keyframe_interval) as f64 / config.keyframe_interval as f64;
            let eased = t * t * (3.0 - 2.0 * t);
            let params = interpolate(&keys[k], &keys[k + 1], eased);
            let image = render_puppet(&params, size, size);
            let mut pose = params.pose();
            for i in 0..NUM_KEYPOINTS {
                let p = pose.points[i];
                if !(p.x >= 0.0 && p.y >= 0.0 && p.x < size as f64 && p.y < size as f64) {
                    pose.visibility[i] = 0.0;
                }
            }
            (image, pose)
        })
        .collect();
    Ok(frames)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}.ppm")
}

/// Writes clip frames and a manifest in frame order.
pub fn write_clip(frames: &[(Image, Pose)], dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(frames.len());
    for (i, (image, pose)) in frames.iter().enumerate() {
        let name = frame_name(i);
        image.save(&dir.join(&name))?;
        records.push(Record::from_pose(name.into(), pose));
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        records,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
