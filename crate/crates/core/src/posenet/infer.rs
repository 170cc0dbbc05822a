use super::network::PoseNet;
use super::targets::decode_heatmap;
use crate::geometry::{pose_from_crop, Point2};
use crate::scalar::Scalar;
use crate::synthdata::{crop_image, Image};
use crate::tensor::{Graph, Tensor};
use crate::topology::NUM_KEYPOINTS;
use crate::{Error, Pose, Result, Roi};

/// Network output for one crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Crop-normalized; may leave `[0, 1]²` for points outside the crop.
    pub coords: Vec<Point2<f64>>,
    /// Sigmoid of the visibility logits.
    pub visibility: Vec<f64>,
}

impl Prediction {
    /// Pose in crop-normalized coordinates with predicted visibilities.
    pub fn crop_pose(&self) -> Result<Pose> {
        if self.coords.len() != NUM_KEYPOINTS {
            return Err(Error::InvalidConfig(format!(
                "model predicts {} keypoints, a pose needs {NUM_KEYPOINTS}",
                self.coords.len()
            )));
        }
        Pose::from_slices(&self.coords, &self.visibility)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_crop<T: Scalar>(model: &PoseNet<T>, crop: &Tensor<T>) -> Result<()> {
    let s = model.config().input_size;
    if crop.shape() != [3, s, s] {
        return Err(Error::ShapeMismatch {
            op: "infer",
            detail: format!("crop {:?}, expected [3, {s}, {s}]", crop.shape()),
        });
    }
    Ok(())
}

/// Regression outputs for a batch of `[3, S, S]` crops. Heads are not evaluated.
pub fn infer_batch<T: Scalar>(model: &PoseNet<T>, crops: &[Tensor<T>]) -> Result<Vec<Prediction>> {
    if crops.is_empty() {
        return Ok(Vec::new());
    }
    for c in crops {
        check_crop(model, c)?;
    }
    let mut g = Graph::inference();
    let x = g.input(Tensor::stack(crops)?);
    let out = model.forward(&mut g, x, false)?;
    let k = model.config().num_keypoints;
    let coords = g.value(out.coords).data();
    let logits = g.value(out.visibility_logits).data();
    Ok((0..crops.len())
        .map(|n| Prediction {
            coords: (0..k)
                .map(|j| {
                    let base = n * 2 * k + 2 * j;
                    Point2::new(coords[base].as_f64(), coords[base + 1].as_f64())
                })
                .collect(),
            visibility: logits[n * k..(n + 1) * k].iter().map(|l| sigmoid(l.as_f64())).collect(),
        })
        .collect())
}

pub fn infer<T: Scalar>(model: &PoseNet<T>, crop: &Tensor<T>) -> Result<Prediction> {
    Ok(infer_batch(model, std::slice::from_ref(crop))?.remove(0))
}

/// Heatmap-path coordinates for one crop (argmax plus offset).
pub fn infer_heatmap<T: Scalar>(model: &PoseNet<T>, crop: &Tensor<T>) -> Result<Vec<Point2<f64>>> {
    check_crop(model, crop)?;
    if !model.has_heads() {
        return Err(Error::InvalidConfig("model has no heatmap head".into()));
    }
    let mut g = Graph::inference();
    let x = g.input(crop.clone().reshape([1, 3, crop.shape()[1], crop.shape()[2]])?);
    let out = model.forward(&mut g, x, true)?;
    let (h, o) = (
        out.heatmaps.expect("heads present"),
        out.offsets.expect("heads present"),
    );
    Ok(decode_heatmap(
        g.value(h).data(),
        g.value(o).data(),
        model.config().heatmap_size,
    ))
}

/// Crops `roi` out of `image`, runs the model, and maps the keypoints back
/// into image coordinates.
pub fn predict_pose(model: &PoseNet<f32>, image: &Image, roi: &Roi) -> Result<Pose> {
    let crop = crop_image(image, roi, model.config().input_size)?;
    let pred = infer(model, &crop.to_chw())?;
    Ok(pose_from_crop(&pred.crop_pose()?, roi))
}
