//! Encoder-decoder heatmap network with a regression encoder on top.
//!
//! With base width `b` the encoder produces features of `b, 2b, 4b, 8b`
//! channels at strides 2, 4, 8 and 16. The decoder climbs back to stride 4
//! through lateral 1×1 projections added to the encoder skips, and ends in the
//! heatmap and offset heads. The regression encoder descends again from
//! stride 4, reading decoder features only through stop-gradient links and
//! encoder features directly, and finishes with a fully connected layer
//! producing `K` coordinate pairs and `K` visibility logits.

use std::path::Path;

use rand::Rng;

use super::config::{NetworkConfig, HEATMAP_STRIDE, INPUT_MULTIPLE};
use crate::scalar::Scalar;
use crate::tensor::{checkpoint, Conv2dSpec, Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Prefix of every parameter that only the training heads use.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[N, K, H, H]` logits; absent for stripped models.
    pub heatmaps: Option<Var>,
    /// `[N, 2K, H, H]`, channel `2k` is dx and `2k+1` dy in cells.
    pub offsets: Option<Var>,
    /// `[N, 2K]` interleaved crop-normalized `(x, y)`.
    pub coords: Var,
    /// `[N, K]`.
    pub visibility_logits: Var,
}

#[derive(Clone, Debug)]
pub struct PoseNet<T> {
    config: NetworkConfig,
    params: ParamStore<T>,
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug)]
enum Init {
    /// He-normal scaled by a gain.
    Conv(f64),
    Constant(f64),
}

/// Name, shape and initialization of every parameter, in creation order.
fn layout(config: &NetworkConfig) -> Vec<(String, Vec<usize>, Init)> {
    let b = config.base_channels;
    let k = config.num_keypoints;
    let mut out = Vec::new();
    let mut conv = |name: &str, o: usize, i: usize, ks: usize, gain: f64, bias: f64| {
        out.push((format!("{name}.w"), vec![o, i, ks, ks], Init::Conv(gain)));
        out.push((format!("{name}.b"), vec![o], Init::Constant(bias)));
    };
    let widths = [b, 2 * b, 4 * b, 8 * b];
    let mut prev = 3;
    for (i, w) in widths.iter().enumerate() {
        conv(&format!("enc.{}.down", i + 1), *w, prev, 3, 1.0, 0.0);
        conv(&format!("enc.{}.conv", i + 1), *w, *w, 3, 1.0, 0.0);
        prev = *w;
    }
    conv("dec.3.lateral", 4 * b, 8 * b, 1, 1.0, 0.0);
    conv("dec.3.conv", 4 * b, 4 * b, 3, 1.0, 0.0);
    conv("dec.2.lateral", 2 * b, 4 * b, 1, 1.0, 0.0);
    conv("dec.2.conv", 2 * b, 2 * b, 3, 1.0, 0.0);
    // heatmap logits start near the mean target density
    conv("head.heatmap", k, 2 * b, 1, 0.1, -2.2);
    conv("head.offset", 2 * k, 2 * b, 1, 0.1, 0.0);
    conv("reg.1", 4 * b, 4 * b, 3, 1.0, 0.0);
    conv("reg.2", 8 * b, 12 * b, 3, 1.0, 0.0);
    conv("reg.3", 8 * b, 16 * b, 3, 1.0, 0.0);
    // a zero output layer makes every untrained prediction the crop center
    out.push((
        "reg.fc.w".into(),
        vec![3 * k, regression_features(config)],
        Init::Constant(0.0),
    ));
    out.push(("reg.fc.b".into(), vec![3 * k], Init::Constant(0.0)));
    out
}

fn regression_features(config: &NetworkConfig) -> usize {
    let side = config.input_size / INPUT_MULTIPLE;
    8 * config.base_channels * side * side
}

impl<T: Scalar> PoseNet<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let value = match init {
                Init::Conv(gain) => {
                    let fan_in: usize = shape[1..].iter().product();
                    Tensor::randn(shape, gain * (2.0 / fan_in as f64).sqrt(), rng)
                }
                Init::Constant(c) => Tensor::full(shape, T::c(c)),
            };
            params.insert(name, value)?;
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a model around loaded parameters, recovering the shape-related
    /// configuration from tensor shapes. Training-only fields take defaults.
    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let shape = |name: &str| -> Result<Vec<usize>> {
            params
                .by_name(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
        };
        let b = shape("enc.1.down.w")?[0];
        let fc = shape("reg.fc.w")?;
        if fc.len() != 2 || fc[0] % 3 != 0 || b == 0 {
            return Err(Error::Checkpoint(format!("unexpected output layer shape {fc:?}")));
        }
        let side2 = fc[1] / (8 * b);
        let side = (side2 as f64).sqrt().round() as usize;
        if side == 0 || side * side * 8 * b != fc[1] {
            return Err(Error::Checkpoint(format!(
                "output layer input {} does not match base width {b}",
                fc[1]
            )));
        }
        let input_size = side * INPUT_MULTIPLE;
        let config = NetworkConfig {
            input_size,
            num_keypoints: fc[0] / 3,
            base_channels: b,
            heatmap_size: input_size / HEATMAP_STRIDE,
            ..NetworkConfig::full_toy()
        };
        let reference = layout(&config);
        for (name, expected, _) in &reference {
            let stripped_head = name.starts_with(HEAD_PREFIX) && params.by_name(name).is_none();
            if stripped_head {
                continue;
            }
            let found = shape(name)?;
            if &found != expected {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {expected:?}, found {found:?}"
                )));
            }
        }
        if params.len() > reference.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        let heads = ["head.heatmap.w", "head.heatmap.b", "head.offset.w", "head.offset.b"];
        let present = heads.iter().filter(|h| params.id(h).is_some()).count();
        if present != 0 && present != heads.len() {
            return Err(Error::Checkpoint("partially stripped heads".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Replaces training-only settings; shapes must stay the same.
    pub fn set_config(&mut self, config: NetworkConfig) -> Result<()> {
        config.validate()?;
        let same_shape = config.input_size == self.config.input_size
            && config.num_keypoints == self.config.num_keypoints
            && config.base_channels == self.config.base_channels;
        if !same_shape {
            return Err(Error::InvalidConfig(
                "config changes the parameter shapes of an existing model".into(),
            ));
        }
        self.config = config;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn has_heads(&self) -> bool {
        self.params.id("head.heatmap.w").is_some()
    }

    /// Copy without the heatmap and offset heads. Every remaining parameter
    /// feeds the regression output.
    pub fn strip_heads(&self) -> Self {
        Self {
            config: self.config,
            params: self.params.filtered(|name| !name.starts_with(HEAD_PREFIX)),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PoseNet<U> {
        PoseNet {
            config: self.config,
            params: self.params.cast(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(checkpoint::load(path)?)
    }

    fn p(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
        Ok(g.param(&self.params, id))
    }

    fn conv(&self, g: &mut Graph<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        let k = g.shape(w)[2];
        g.conv2d(x, w, Some(b), Conv2dSpec::same(k, stride))
    }

    fn conv_relu(&self, g: &mut Graph<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(g, name, x, stride)?;
        Ok(g.relu(y))
    }

    /// Records the network on `input` (`[N, 3, S, S]`). Heads are evaluated
    /// when `with_heads` is set and the model still has them.
    pub fn forward(&self, g: &mut Graph<T>, input: Var, with_heads: bool) -> Result<Outputs> {
        let s = self.config.input_size;
        let shape = g.shape(input);
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("input {shape:?}, expected [N, 3, {s}, {s}]"),
            });
        }
        let mut enc = Vec::with_capacity(4);
        let mut x = input;
        for i in 1..=4 {
            x = self.conv_relu(g, &format!("enc.{i}.down"), x, 2)?;
            x = self.conv_relu(g, &format!("enc.{i}.conv"), x, 1)?;
            enc.push(x);
        }
        let (e2, e3, e4) = (enc[1], enc[2], enc[3]);

        let up = g.upsample2x(e4)?;
        let lateral = self.conv(g, "dec.3.lateral", up, 1)?;
        let merged = g.add(lateral, e3)?;
        let merged = g.relu(merged);
        let d3 = self.conv_relu(g, "dec.3.conv", merged, 1)?;
        let up = g.upsample2x(d3)?;
        let lateral = self.conv(g, "dec.2.lateral", up, 1)?;
        let merged = g.add(lateral, e2)?;
        let merged = g.relu(merged);
        let d2 = self.conv_relu(g, "dec.2.conv", merged, 1)?;

        let (heatmaps, offsets) = if with_heads && self.has_heads() {
            (
                Some(self.conv(g, "head.heatmap", d2, 1)?),
                Some(self.conv(g, "head.offset", d2, 1)?),
            )
        } else {
            (None, None)
        };

        let d2_stop = g.stop_gradient(d2)?;
        let r = g.concat_channels(&[d2_stop, e2])?;
        let r = self.conv_relu(g, "reg.1", r, 2)?;
        let d3_stop = g.stop_gradient(d3)?;
        let r = g.concat_channels(&[r, d3_stop, e3])?;
        let r = self.conv_relu(g, "reg.2", r, 2)?;
        let r = g.concat_channels(&[r, e4])?;
        let r = self.conv_relu(g, "reg.3", r, 2)?;
        let flat = g.flatten(r)?;
        let w = self.p(g, "reg.fc.w")?;
        let b = self.p(g, "reg.fc.b")?;
        let out = g.linear(flat, w, Some(b))?;
        let k = self.config.num_keypoints;
        let raw = g.narrow_cols(out, 0, 2 * k)?;
        let coords = g.add_scalar(raw, T::c(0.5));
        let visibility_logits = g.narrow_cols(out, 2 * k, k)?;
        Ok(Outputs {
            heatmaps,
            offsets,
            coords,
            visibility_logits,
        })
    }

    /// Parameters on the heatmap side of the stop-gradient links: decoder and heads.
    pub fn heatmap_branch_params(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|(n, _)| n)
            .filter(|n| n.starts_with("dec.") || n.starts_with(HEAD_PREFIX))
            .map(str::to_string)
            .collect()
    }

    /// Parameters used only after the stop-gradient links.
    pub fn regression_params(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|(n, _)| n)
            .filter(|n| n.starts_with("reg."))
            .map(str::to_string)
            .collect()
    }
}
