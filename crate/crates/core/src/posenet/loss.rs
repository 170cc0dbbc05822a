use super::config::{LossWeights, NetworkConfig};
use super::network::Outputs;
use super::targets::heatmap_targets;
use crate::scalar::Scalar;
use crate::synthdata::TrainingSample;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Supervision for a batch, laid out to match [`Outputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets<T> {
    pub heatmaps: Tensor<T>,
    pub heatmap_mask: Tensor<T>,
    pub offsets: Tensor<T>,
    pub offset_mask: Tensor<T>,
    /// `[N, 2K]`.
    pub coords: Tensor<T>,
    pub coord_mask: Tensor<T>,
    /// `[N, K]` labels in `{0, 1}`.
    pub visibility: Tensor<T>,
}

/// Stacked network input and targets for `samples`.
pub fn batch<T: Scalar>(samples: &[&TrainingSample], config: &NetworkConfig) -> Result<(Tensor<T>, BatchTargets<T>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = config.num_keypoints;
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.cast()).collect();
    let input = Tensor::stack(&images)?;
    let mut parts = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut coords, mut coord_mask, mut vis) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let pts = &s.target.points[..k];
        let labels = &s.target.visibility[..k];
        let t = heatmap_targets::<T>(pts, labels, config.heatmap_size, config.heatmap_sigma);
        parts.0.push(t.heatmaps);
        parts.1.push(t.heatmap_mask);
        parts.2.push(t.offsets);
        parts.3.push(t.offset_mask);
        for (p, m) in pts.iter().zip(&s.coord_mask[..k]) {
            coords.extend([T::c(p.x), T::c(p.y)]);
            coord_mask.extend([T::c(*m as f64); 2]);
        }
        vis.extend(labels.iter().map(|v| T::c(*v)));
    }
    let n = samples.len();
    Ok((
        input,
        BatchTargets {
            heatmaps: Tensor::stack(&parts.0)?,
            heatmap_mask: Tensor::stack(&parts.1)?,
            offsets: Tensor::stack(&parts.2)?,
            offset_mask: Tensor::stack(&parts.3)?,
            coords: Tensor::new([n, 2 * k], coords)?,
            coord_mask: Tensor::new([n, 2 * k], coord_mask)?,
            visibility: Tensor::new([n, k], vis)?,
        },
    ))
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub heatmap: Option<Var>,
    pub offset: Option<Var>,
    pub regression: Var,
    pub visibility: Var,
}

/// `w_h·BCE(heatmaps) + w_o·L2(offsets) + w_r·L2(coords) + w_v·BCE(visibility)`,
/// each term averaged over its mask. Head terms are skipped when the outputs
/// lack heads.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &Outputs,
    targets: &BatchTargets<T>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let heatmap = match outputs.heatmaps {
        Some(h) => Some(g.bce_with_logits(h, &targets.heatmaps, Some(&targets.heatmap_mask))?),
        None => None,
    };
    let offset = match outputs.offsets {
        Some(o) => Some(g.mse(o, &targets.offsets, Some(&targets.offset_mask))?),
        None => None,
    };
    let regression = g.mse(outputs.coords, &targets.coords, Some(&targets.coord_mask))?;
    let visibility = g.bce_with_logits(outputs.visibility_logits, &targets.visibility, None)?;

    let weighted = |g: &mut Graph<T>, v: Var, w: f64| g.scale(v, T::c(w));
    let mut total = weighted(g, regression, weights.regression);
    let vis = weighted(g, visibility, weights.visibility);
    total = g.add(total, vis)?;
    if let Some(h) = heatmap {
        let h = weighted(g, h, weights.heatmap);
        total = g.add(total, h)?;
    }
    if let Some(o) = offset {
        let o = weighted(g, o, weights.offset);
        total = g.add(total, o)?;
    }
    Ok(LossTerms {
        total,
        heatmap,
        offset,
        regression,
        visibility,
    })
}
