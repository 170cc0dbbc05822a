//! Rasterization of puppets onto a textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{Image, Rgb};
use super::puppet::{PuppetParams, HEAD_RADIUS};
use crate::geometry::{midpoint, Point2};
use crate::Point;

/// Base colors of each body part; left parts are warm, right parts cool.
pub mod palette {
    use super::Rgb;

    pub const TORSO: Rgb = [0.55, 0.55, 0.6];
    pub const HEAD: Rgb = [0.93, 0.78, 0.62];
    pub const FACE_MARK: Rgb = [0.1, 0.08, 0.08];
    pub const LEFT_UPPER_ARM: Rgb = [0.9, 0.25, 0.2];
    pub const LEFT_FOREARM: Rgb = [0.95, 0.6, 0.15];
    pub const LEFT_HAND: Rgb = [0.98, 0.9, 0.3];
    pub const RIGHT_UPPER_ARM: Rgb = [0.2, 0.35, 0.9];
    pub const RIGHT_FOREARM: Rgb = [0.2, 0.75, 0.9];
    pub const RIGHT_HAND: Rgb = [0.6, 0.95, 0.95];
    pub const LEFT_THIGH: Rgb = [0.7, 0.15, 0.45];
    pub const LEFT_SHIN: Rgb = [0.95, 0.45, 0.7];
    pub const LEFT_FOOT: Rgb = [0.5, 0.05, 0.2];
    pub const RIGHT_THIGH: Rgb = [0.15, 0.55, 0.2];
    pub const RIGHT_SHIN: Rgb = [0.5, 0.9, 0.35];
    pub const RIGHT_FOOT: Rgb = [0.05, 0.3, 0.1];
}

/// Capsule radii as fractions of the puppet scale.
const TRUNK_RADIUS: f64 = 0.21;
const ARM_RADIUS: [f64; 2] = [0.085, 0.075];
const LEG_RADIUS: [f64; 2] = [0.11, 0.095];
const HAND_RADIUS: f64 = 0.065;
const FOOT_RADIUS: f64 = 0.05;

pub fn shaded(rgb: Rgb, shade: f64) -> Rgb {
    rgb.map(|c| (c * shade as f32).clamp(0.0, 1.0))
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p - a).x * ab.x + (p - a).y * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Anti-aliased filled capsule (segment `a`–`b` thickened by `radius`).
/// Pixels whose center lies within `radius - 0.5` are fully covered.
pub fn draw_capsule(img: &mut Image, a: Point, b: Point, radius: f64, rgb: Rgb) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let reach = radius + 1.0;
    let x0 = ((a.x.min(b.x) - reach).floor() as i64).max(0);
    let x1 = ((a.x.max(b.x) + reach).ceil() as i64).min(w - 1);
    let y0 = ((a.y.min(b.y) - reach).floor() as i64).max(0);
    let y1 = ((a.y.max(b.y) + reach).ceil() as i64).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let center = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
            let coverage = (radius + 0.5 - distance_to_segment(center, a, b)).clamp(0.0, 1.0);
            if coverage > 0.0 {
                img.blend(x as usize, y as usize, rgb, coverage as f32);
            }
        }
    }
}

pub fn draw_disc(img: &mut Image, center: Point, radius: f64, rgb: Rgb) {
    draw_capsule(img, center, center, radius, rgb);
}

/// Smooth value noise: a coarse random lattice per channel, bilinearly upsampled.
pub fn background(width: usize, height: usize, seed: u64) -> Image {
    const CELLS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Rgb = [
        rng.random_range(0.2..0.8),
        rng.random_range(0.2..0.8),
        rng.random_range(0.2..0.8),
    ];
    let lattice: Vec<Rgb> = (0..(CELLS + 1) * (CELLS + 1))
        .map(|_| base.map(|b| (b + rng.random_range(-0.25f32..0.25)).clamp(0.0, 1.0)))
        .collect();
    let mut img = Image::new(width, height, [0.0; 3]).expect("positive canvas");
    for y in 0..height {
        let gy = (y as f64 + 0.5) / height as f64 * CELLS as f64;
        let iy = (gy.floor() as usize).min(CELLS - 1);
        let ty = (gy - iy as f64) as f32;
        for x in 0..width {
            let gx = (x as f64 + 0.5) / width as f64 * CELLS as f64;
            let ix = (gx.floor() as usize).min(CELLS - 1);
            let tx = (gx - ix as f64) as f32;
            let at = |i: usize, j: usize| lattice[j * (CELLS + 1) + i];
            let (a, b, c, d) = (at(ix, iy), at(ix + 1, iy), at(ix, iy + 1), at(ix + 1, iy + 1));
            let mut rgb = [0.0; 3];
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bottom = c[k] + (d[k] - c[k]) * tx;
                rgb[k] = top + (bottom - top) * ty;
            }
            img.set(x, y, rgb);
        }
    }
    img
}

/// Renders the puppet over a background texture derived from its seed.
pub fn render_puppet(params: &PuppetParams, width: usize, height: usize) -> Image {
    let mut img = background(width, height, params.texture_seed);
    let k = params.keypoints();
    let s = params.scale;
    let shade = |c: Rgb| shaded(c, params.shade);
    use palette::*;

    // right limbs sit behind the torso, left limbs in front of it
    let limbs = |img: &mut Image, i: usize| {
        let (thigh, shin, foot) = if i == 0 {
            (LEFT_THIGH, LEFT_SHIN, LEFT_FOOT)
        } else {
            (RIGHT_THIGH, RIGHT_SHIN, RIGHT_FOOT)
        };
        draw_capsule(img, k[29 + i], k[31 + i], FOOT_RADIUS * s, shade(foot));
        draw_capsule(img, k[25 + i], k[27 + i], LEG_RADIUS[1] * s, shade(shin));
        draw_capsule(img, k[23 + i], k[25 + i], LEG_RADIUS[0] * s, shade(thigh));
    };
    let arms = |img: &mut Image, i: usize| {
        let (upper, fore, hand) = if i == 0 {
            (LEFT_UPPER_ARM, LEFT_FOREARM, LEFT_HAND)
        } else {
            (RIGHT_UPPER_ARM, RIGHT_FOREARM, RIGHT_HAND)
        };
        let palm = midpoint(k[19 + i], k[21 + i]);
        draw_capsule(img, k[15 + i], palm, HAND_RADIUS * s, shade(hand));
        for knuckle in [17, 19, 21] {
            draw_capsule(img, palm, k[knuckle + i], 0.025 * s, shade(hand));
        }
        draw_capsule(img, k[13 + i], k[15 + i], ARM_RADIUS[1] * s, shade(fore));
        draw_capsule(img, k[11 + i], k[13 + i], ARM_RADIUS[0] * s, shade(upper));
    };

    limbs(&mut img, 1);
    arms(&mut img, 1);

    let hip = midpoint(k[23], k[24]);
    let shoulder = midpoint(k[11], k[12]);
    draw_capsule(&mut img, hip, shoulder, TRUNK_RADIUS * s, shade(TORSO));
    draw_capsule(&mut img, k[23], k[24], LEG_RADIUS[0] * s, shade(TORSO));
    draw_capsule(&mut img, k[11], k[12], ARM_RADIUS[0] * s, shade(TORSO));

    let head = params.head_center();
    draw_capsule(&mut img, shoulder, head, 0.07 * s, shade(HEAD));
    draw_disc(&mut img, k[7], 0.04 * s, shade(HEAD));
    draw_disc(&mut img, k[8], 0.04 * s, shade(HEAD));
    draw_disc(&mut img, head, HEAD_RADIUS * s, shade(HEAD));
    for eye in [2, 5] {
        draw_capsule(&mut img, k[eye - 1], k[eye + 1], 0.018 * s, FACE_MARK);
    }
    draw_disc(&mut img, k[0], 0.025 * s, FACE_MARK);
    draw_capsule(&mut img, k[9], k[10], 0.015 * s, [0.6, 0.1, 0.1]);

    limbs(&mut img, 0);
    arms(&mut img, 0);
    img
}
