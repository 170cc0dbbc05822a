//! Rotated, resampled crops and the training samples built from them.

use rand::Rng;

use super::image::Image;
use super::occlude::{occlude, OcclusionConfig};
use crate::geometry::{pose_to_crop, roi_to_transform, Point2};
use crate::tensor::Tensor;
use crate::topology::NUM_KEYPOINTS;
use crate::{Error, Pose, Result, Roi};

/// Value read for crop pixels that fall outside the source image.
pub const CROP_FILL: [f32; 3] = [0.0; 3];

/// Network input together with its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// `[3, S, S]`, values in `[-0.5, 0.5]`.
    pub image: Tensor<f32>,
    /// Keypoints in crop-normalized coordinates; visibility holds the labels.
    pub target: Pose,
    /// Points whose coordinates are supervised.
    pub coord_mask: [f32; NUM_KEYPOINTS],
}

impl TrainingSample {
    pub fn visibility_labels(&self) -> [f32; NUM_KEYPOINTS] {
        self.target.visibility.map(|v| v as f32)
    }
}

fn check_roi(roi: &Roi, crop_size: usize) -> Result<()> {
    if crop_size == 0 {
        return Err(Error::InvalidConfig("crop size must be positive".into()));
    }
    Roi::new(roi.center, roi.side, roi.rotation).map(|_| ())
}

/// Bilinear resampling of the rotated square `roi` into a `crop_size²` image.
pub fn crop_image(image: &Image, roi: &Roi, crop_size: usize) -> Result<Image> {
    check_roi(roi, crop_size)?;
    let t = roi_to_transform(roi, crop_size);
    let mut data = Vec::with_capacity(crop_size * crop_size * 3);
    for v in 0..crop_size {
        for u in 0..crop_size {
            let p = t.apply(Point2::new(u as f64 + 0.5, v as f64 + 0.5));
            data.extend_from_slice(&image.sample_bilinear(p.x, p.y, CROP_FILL));
        }
    }
    Image::from_raw(crop_size, crop_size, data)
}

fn inside_unit_square(p: Point2<f64>) -> bool {
    (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)
}

/// Crop plus targets; a point's label is its source visibility, cleared when it
/// leaves the crop. Every coordinate is supervised.
pub fn crop_sample(image: &Image, pose: &Pose, roi: &Roi, crop_size: usize) -> Result<TrainingSample> {
    let crop = crop_image(image, roi, crop_size)?;
    build(crop, pose, roi, None)
}

/// [`crop_sample`] with random occluders drawn over the crop; covered points
/// get label 0.
pub fn crop_sample_occluded<R: Rng + ?Sized>(
    image: &Image,
    pose: &Pose,
    roi: &Roi,
    crop_size: usize,
    rng: &mut R,
    occlusion: &OcclusionConfig,
) -> Result<TrainingSample> {
    let mut crop = crop_image(image, roi, crop_size)?;
    let in_crop = pose_to_crop(pose, roi);
    let pixels: Vec<_> = in_crop.points.iter().map(|p| *p * crop_size as f64).collect();
    let (labels, _) = occlude(&mut crop, &pixels, rng, occlusion);
    build(crop, pose, roi, Some(labels))
}

fn build(
    crop: Image,
    pose: &Pose,
    roi: &Roi,
    occlusion_labels: Option<[f32; NUM_KEYPOINTS]>,
) -> Result<TrainingSample> {
    let mut target = pose_to_crop(pose, roi);
    for (i, p) in target.points.iter().enumerate() {
        let occluded = occlusion_labels.is_some_and(|l| l[i] == 0.0);
        if !inside_unit_square(*p) || occluded {
            target.visibility[i] = 0.0;
        }
    }
    Ok(TrainingSample {
        image: crop.to_chw(),
        target,
        coord_mask: [1.0; NUM_KEYPOINTS],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_from_crop, pose_to_roi, DEFAULT_PADDING};
    use crate::synthdata::puppet::{sample_puppet, PuppetRanges};
    use crate::synthdata::render::render_puppet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> (Image, Pose) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, pose) = sample_puppet(&mut rng, 96, 96, &PuppetRanges::default());
        (render_puppet(&params, 96, 96), pose)
    }

    #[test]
    fn identity_roi_is_a_resize() {
        let (img, pose) = scene(1);
        let roi = Roi::new(Point2::new(48.0, 48.0), 96.0, 0.0).unwrap();
        let same = crop_image(&img, &roi, 96).unwrap();
        assert_eq!(same, img);
        let sample = crop_sample(&img, &pose, &roi, 48).unwrap();
        assert_eq!(sample.image.shape(), &[3, 48, 48]);
        for (a, b) in sample.target.points.iter().zip(pose.points) {
            assert!((a.x - b.x / 96.0).abs() < 1e-12 && (a.y - b.y / 96.0).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_map_back_to_image() {
        let (img, pose) = scene(2);
        let roi = pose_to_roi(&pose, DEFAULT_PADDING).unwrap();
        let sample = crop_sample(&img, &pose, &roi, 64).unwrap();
        let back = pose_from_crop(&sample.target, &roi);
        for (a, b) in back.points.iter().zip(pose.points) {
            assert!(a.distance(b) < 1e-9);
        }
        assert!(sample.target.visibility.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn points_outside_crop_lose_visibility() {
        let (img, pose) = scene(3);
        let roi = Roi::new(pose.mid_hip(), 10.0, 0.3).unwrap();
        let sample = crop_sample(&img, &pose, &roi, 32).unwrap();
        for (p, v) in sample.target.points.iter().zip(sample.target.visibility) {
            assert_eq!(v == 1.0, inside_unit_square(*p));
        }
        assert!(sample.target.visibility.contains(&0.0));
    }

    #[test]
    fn rejects_bad_roi() {
        let (img, pose) = scene(4);
        let roi = Roi {
            center: Point2::new(1.0, 1.0),
            side: 0.0,
            rotation: 0.0,
        };
        assert!(crop_sample(&img, &pose, &roi, 32).is_err());
    }

    #[test]
    fn occluded_crop_labels_match_rectangles() {
        let (img, pose) = scene(5);
        let roi = pose_to_roi(&pose, DEFAULT_PADDING).unwrap();
        let config = OcclusionConfig {
            max_rects: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sample = crop_sample_occluded(&img, &pose, &roi, 64, &mut rng, &config).unwrap();
        // replay the same draws to recover the rectangles
        let mut replay = ChaCha8Rng::seed_from_u64(8);
        let rects = crate::synthdata::occlude::sample_occluders(&mut replay, 64, 64, &config);
        for (p, v) in sample.target.points.iter().zip(sample.target.visibility) {
            let covered = rects.iter().any(|r| r.contains(*p * 64.0));
            assert_eq!(v == 0.0, covered || !inside_unit_square(*p));
        }
    }
}
