//! Heatmap and offset targets, and decoding them back to coordinates.
//!
//! Cell `(i, j)` of an `H × H` map covers crop-normalized
//! `[j/H, (j+1)/H) × [i/H, (i+1)/H)`; its center is `((j+0.5)/H, (i+0.5)/H)`.

use crate::geometry::Point2;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cells around the peak, in Chebyshev distance, that carry offset targets.
pub const OFFSET_RADIUS: i64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapTargets<T> {
    /// `[K, H, H]`, peak value 1 at the cell containing the keypoint.
    pub heatmaps: Tensor<T>,
    /// `[K, H, H]`, zero for invisible keypoints.
    pub heatmap_mask: Tensor<T>,
    /// `[2K, H, H]` displacement from each cell center to the keypoint, in cells.
    pub offsets: Tensor<T>,
    /// `[2K, H, H]`, one only near visible peaks.
    pub offset_mask: Tensor<T>,
}

fn peak_cell(u: f64, size: usize) -> i64 {
    ((u * size as f64).floor() as i64).clamp(0, size as i64 - 1)
}

pub fn heatmap_targets<T: Scalar>(
    points: &[Point2<f64>],
    visibility: &[f64],
    size: usize,
    sigma: f64,
) -> HeatmapTargets<T> {
    let k = points.len();
    let plane = size * size;
    let mut heat = vec![T::zero(); k * plane];
    let mut heat_mask = vec![T::zero(); k * plane];
    let mut off = vec![T::zero(); 2 * k * plane];
    let mut off_mask = vec![T::zero(); 2 * k * plane];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (c, (p, v)) in points.iter().zip(visibility).enumerate() {
        if *v < 0.5 {
            continue;
        }
        heat_mask[c * plane..(c + 1) * plane].fill(T::one());
        let (px, py) = (p.x * size as f64, p.y * size as f64);
        let (cj, ci) = (peak_cell(p.x, size), peak_cell(p.y, size));
        for i in 0..size as i64 {
            for j in 0..size as i64 {
                let d2 = ((i - ci) * (i - ci) + (j - cj) * (j - cj)) as f64;
                let idx = i as usize * size + j as usize;
                heat[c * plane + idx] = T::c((-d2 * inv).exp());
                if (i - ci).abs() <= OFFSET_RADIUS && (j - cj).abs() <= OFFSET_RADIUS {
                    off[2 * c * plane + idx] = T::c(px - (j as f64 + 0.5));
                    off[(2 * c + 1) * plane + idx] = T::c(py - (i as f64 + 0.5));
                    off_mask[2 * c * plane + idx] = T::one();
                    off_mask[(2 * c + 1) * plane + idx] = T::one();
                }
            }
        }
    }
    let t = |shape: [usize; 3], data| Tensor::new(shape, data).expect("consistent target shape");
    HeatmapTargets {
        heatmaps: t([k, size, size], heat),
        heatmap_mask: t([k, size, size], heat_mask),
        offsets: t([2 * k, size, size], off),
        offset_mask: t([2 * k, size, size], off_mask),
    }
}

/// Argmax cell of each heatmap refined by the offset stored at that cell.
/// `heatmaps` is `[K, H, H]` and `offsets` `[2K, H, H]` for one sample.
pub fn decode_heatmap<T: Scalar>(heatmaps: &[T], offsets: &[T], size: usize) -> Vec<Point2<f64>> {
    let plane = size * size;
    heatmaps
        .chunks(plane)
        .enumerate()
        .map(|(c, map)| {
            let best = map
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > map[best] { i } else { best });
            let (i, j) = (best / size, best % size);
            let dx = offsets[2 * c * plane + best].as_f64();
            let dy = offsets[(2 * c + 1) * plane + best].as_f64();
            Point2::new((j as f64 + 0.5 + dx) / size as f64, (i as f64 + 0.5 + dy) / size as f64)
        })
        .collect()
}
