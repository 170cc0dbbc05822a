//! Random rectangular occluders and the visibility labels they imply.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Rgb};
use crate::topology::NUM_KEYPOINTS;
use crate::Point;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionConfig {
    /// Rectangle count is uniform in `0..=max_rects`.
    pub max_rects: usize,
    /// Side lengths are uniform in this range, as fractions of the reference side.
    pub min_side_frac: f64,
    pub max_side_frac: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            max_rects: 3,
            min_side_frac: 0.1,
            max_side_frac: 0.5,
        }
    }
}

impl OcclusionConfig {
    pub fn none() -> Self {
        Self {
            max_rects: 0,
            ..Self::default()
        }
    }
}

/// Axis-aligned, half-open rectangle `[x0, x1) × [y0, y1)` in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub color: Rgb,
}

impl Occluder {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    /// Fills every pixel whose center lies inside the rectangle.
    pub fn draw(&self, img: &mut Image) {
        let first = |lo: f64| (lo - 0.5).ceil().max(0.0) as usize;
        let (xs, ys) = (first(self.x0), first(self.y0));
        for y in ys..img.height() {
            if y as f64 + 0.5 >= self.y1 {
                break;
            }
            for x in xs..img.width() {
                if x as f64 + 0.5 >= self.x1 {
                    break;
                }
                img.set(x, y, self.color);
            }
        }
    }
}

pub fn sample_occluders<R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    config: &OcclusionConfig,
) -> Vec<Occluder> {
    let count = rng.random_range(0..=config.max_rects);
    let reference = width.min(height) as f64;
    let (lo, hi) = (config.min_side_frac, config.max_side_frac.max(config.min_side_frac));
    (0..count)
        .map(|_| {
            let w = reference * rng.random_range(lo..=hi);
            let h = reference * rng.random_range(lo..=hi);
            let x0 = rng.random_range(-0.5 * w..width as f64 - 0.5 * w);
            let y0 = rng.random_range(-0.5 * h..height as f64 - 0.5 * h);
            Occluder {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                color: [rng.random(), rng.random(), rng.random()],
            }
        })
        .collect()
}

/// `1` unless the point lies inside one of the occluders.
pub fn visibility_labels(points: &[Point], occluders: &[Occluder]) -> [f32; NUM_KEYPOINTS] {
    let mut labels = [1.0; NUM_KEYPOINTS];
    for (label, p) in labels.iter_mut().zip(points) {
        if occluders.iter().any(|o| o.contains(*p)) {
            *label = 0.0;
        }
    }
    labels
}

/// Draws random occluders over `image` and labels the keypoints they cover.
/// Keypoint coordinates are in the pixel frame of `image`.
pub fn occlude<R: Rng + ?Sized>(
    image: &mut Image,
    points: &[Point],
    rng: &mut R,
    config: &OcclusionConfig,
) -> ([f32; NUM_KEYPOINTS], Vec<Occluder>) {
    let occluders = sample_occluders(rng, image.width(), image.height(), config);
    for o in &occluders {
        o.draw(image);
    }
    (visibility_labels(points, &occluders), occluders)
}
