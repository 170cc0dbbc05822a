//! Gradient checks of the whole network graph and of its stop-gradient links.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LossWeights, NetworkConfig};
use super::loss::{total_loss, BatchTargets};
use super::network::PoseNet;
use crate::tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::Result;

/// Smallest valid configuration: 32×32 input, two base channels, three keypoints.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_size: 32,
        num_keypoints: 3,
        base_channels: 2,
        heatmap_size: 8,
        heatmap_sigma: 1.0,
        loss_weights: LossWeights::default(),
    }
}

/// Tiny double-precision network with every parameter (including the
/// zero-initialized output layer and biases) randomized, plus a random batch
/// and random targets.
pub struct NetworkCase {
    pub model: PoseNet<f64>,
    pub input: Tensor<f64>,
    pub targets: BatchTargets<f64>,
}

impl NetworkCase {
    pub fn new(seed: u64, weights: LossWeights) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = NetworkConfig {
            loss_weights: weights,
            ..tiny_config()
        };
        let mut model = PoseNet::<f64>::new(config, &mut rng)?;
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_string();
            let t = model.params_mut().get_mut(id);
            if name == "reg.fc.w" {
                *t = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng);
            } else if name.ends_with(".b") {
                *t = Tensor::randn(t.shape().to_vec(), 0.1, &mut rng);
            }
        }
        let (n, s, k, h) = (2, config.input_size, config.num_keypoints, config.heatmap_size);
        let input = Tensor::randn([n, 3, s, s], 0.5, &mut rng);
        let uniform = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            let len = shape.iter().product();
            Tensor::new(shape, (0..len).map(|_| rng.random_range(0.0..1.0)).collect())
        };
        let binary = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            let len = shape.iter().product();
            Tensor::new(
                shape,
                (0..len).map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect(),
            )
        };
        let r = &mut rng;
        let targets = BatchTargets {
            heatmaps: uniform(vec![n, k, h, h], r)?,
            heatmap_mask: binary(vec![n, k, h, h], r)?,
            offsets: uniform(vec![n, 2 * k, h, h], r)?,
            offset_mask: binary(vec![n, 2 * k, h, h], r)?,
            coords: uniform(vec![n, 2 * k], r)?,
            coord_mask: binary(vec![n, 2 * k], r)?,
            visibility: binary(vec![n, k], r)?,
        };
        Ok(Self { model, input, targets })
    }

    /// Builds the training loss with parameters taken from `params`.
    pub fn loss(&self, g: &mut Graph<f64>, params: &ParamStore<f64>) -> Result<Var> {
        let mut model = self.model.clone();
        *model.params_mut() = params.clone();
        let x = g.input(self.input.clone());
        let out = model.forward(g, x, true)?;
        Ok(total_loss(g, &out, &self.targets, &model.config().loss_weights)?.total)
    }
}

/// Finite-difference check of the full training loss over `seeds`.
pub fn network_suite(seeds: std::ops::Range<u64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut merged: Option<GradCheckReport> = None;
    for seed in seeds {
        let case = NetworkCase::new(seed, LossWeights::default())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let r = check_gradients("posenet", case.model.params(), |g, p| case.loss(g, p), opts, &mut rng)?;
        match merged.as_mut() {
            Some(m) => m.merge(&r),
            None => merged = Some(r),
        }
    }
    Ok(merged.expect("at least one seed"))
}

/// Result of the gradient-stop check for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct StopCheck {
    /// Largest analytic gradient entry over every heatmap-branch parameter.
    pub max_analytic: f64,
    /// Largest central-difference derivative over the sampled entries.
    pub max_numeric: f64,
    pub entries: usize,
}

/// With heatmap and offset weights at zero, the loss must not depend on the
/// decoder or heads through any differentiable path. The numeric derivative
/// is taken with the stop-gradient outputs frozen, which is the function the
/// regression branch sees.
pub fn gradient_stop_check(seed: u64, entries_per_param: usize, eps: f64) -> Result<StopCheck> {
    let case = NetworkCase::new(seed, LossWeights::default().regression_only())?;
    let params = case.model.params();
    let mut g = Graph::new();
    let loss = case.loss(&mut g, params)?;
    let grads = g.backward(loss)?.dense(params);
    let frozen = g.stopped_values();
    drop(g);

    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_frozen_stops(frozen.clone());
        let l = case.loss(&mut g, p)?;
        Ok(g.value(l).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x570b);
    let mut probe = params.clone();
    let mut check = StopCheck {
        max_analytic: 0.0,
        max_numeric: 0.0,
        entries: 0,
    };
    for name in case.model.heatmap_branch_params() {
        let id = params.id(&name).expect("listed by the model");
        for v in grads[id.0].data() {
            check.max_analytic = check.max_analytic.max(v.abs());
        }
        let numel = params.get(id).numel();
        for _ in 0..entries_per_param.min(numel) {
            let entry = rng.random_range(0..numel);
            let original = params.get(id).data()[entry];
            probe.get_mut(id).data_mut()[entry] = original + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[entry] = original - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[entry] = original;
            check.max_numeric = check.max_numeric.max(((plus - minus) / (2.0 * eps)).abs());
            check.entries += 1;
        }
    }
    Ok(check)
}
