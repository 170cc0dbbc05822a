//! Finite-difference verification of [`Graph::backward`].
//!
//! Central differences are taken with every stop-gradient output frozen at
//! its unperturbed value, so the numeric derivative is of the same function
//! the analytic pass differentiates. Entries whose perturbation flips a relu
//! unit are skipped and replaced: the loss is not differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Conv2dSpec, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Entries sampled per parameter tensor (all entries if the tensor is smaller).
    pub entries_per_param: usize,
    /// Denominator floor for the relative error.
    pub rel_floor: f64,
    /// Relative-error tolerance for [`GradCheckReport::passed`].
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            entries_per_param: 24,
            rel_floor: 1e-6,
            tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub seeds: usize,
    pub entries: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    fn empty(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            seeds: 0,
            entries: 0,
            kinks_skipped: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.entries > 0 && self.max_rel_error < self.tolerance
    }

    pub fn merge(&mut self, other: &Self) {
        self.seeds += other.seeds;
        self.entries += other.entries;
        self.kinks_skipped += other.kinks_skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
    }
}

/// Compares analytic parameter gradients of the scalar built by `build`
/// against central differences.
pub fn check_gradients<F>(
    name: &str,
    store: &ParamStore<f64>,
    build: F,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, store)?;
    let analytic = graph.backward(loss)?.dense(store);
    let frozen = graph.stopped_values();
    let pattern = graph.relu_pattern();
    drop(graph);

    let eval = |params: &ParamStore<f64>| -> Result<Option<f64>> {
        let mut g = Graph::with_frozen_stops(frozen.clone());
        let l = build(&mut g, params)?;
        if g.relu_pattern() != pattern {
            return Ok(None);
        }
        Ok(Some(g.value(l).item()))
    };

    let mut report = GradCheckReport::empty(name, opts.tolerance);
    report.seeds = 1;
    let mut probe = store.clone();
    for id in store.ids() {
        let numel = store.get(id).numel();
        let mut candidates: Vec<usize> = (0..numel).collect();
        // Fisher-Yates prefix shuffle so the sample is seeded and without repeats.
        for i in 0..numel {
            let j = rng.random_range(i..numel);
            candidates.swap(i, j);
        }
        let mut checked = 0;
        for &entry in &candidates {
            if checked == opts.entries_per_param {
                break;
            }
            let original = store.get(id).data()[entry];
            probe.get_mut(id).data_mut()[entry] = original + opts.eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[entry] = original - opts.eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[entry] = original;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                report.kinks_skipped += 1;
                continue;
            };
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[id.0].data()[entry];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.rel_floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
            checked += 1;
        }
    }
    Ok(report)
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>>;

/// A named single-op (or small composite) check instantiated for one seed.
struct OpCase {
    store: ParamStore<f64>,
    build: Builder,
}

fn param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    store.insert(name, Tensor::randn(shape.to_vec(), 1.0, rng))?;
    Ok(())
}

/// Fixed random weights turning a tensor into a scalar through `sum(x ⊙ r)`.
fn project(g: &mut Graph<f64>, x: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.input(r.clone());
    let prod = g.mul(x, rv)?;
    Ok(g.sum(prod))
}

fn p(g: &mut Graph<f64>, s: &ParamStore<f64>, name: &str) -> Var {
    let id = s.id(name).expect("parameter registered by the case");
    g.param(s, id)
}

fn case(op: &str, rng: &mut ChaCha8Rng) -> Result<OpCase> {
    let mut store = ParamStore::new();
    let build: Builder = match op {
        "conv2d_3x3_s1_bias" | "conv2d_3x3_s2" | "conv2d_1x1_bias" => {
            let (xs, ks, stride, bias): (&[usize], &[usize], usize, bool) = match op {
                "conv2d_3x3_s1_bias" => (&[2, 3, 5, 5], &[4, 3, 3, 3], 1, true),
                "conv2d_3x3_s2" => (&[1, 2, 6, 7], &[3, 2, 3, 3], 2, false),
                _ => (&[2, 3, 4, 4], &[2, 3, 1, 1], 1, true),
            };
            param(&mut store, "x", xs, rng)?;
            param(&mut store, "k", ks, rng)?;
            if bias {
                param(&mut store, "b", &[ks[0]], rng)?;
            }
            let spec = Conv2dSpec::same(ks[2], stride);
            let oh = (xs[2] + 2 * spec.pad - ks[2]) / stride + 1;
            let ow = (xs[3] + 2 * spec.pad - ks[3]) / stride + 1;
            let r = Tensor::randn([xs[0], ks[0], oh, ow], 1.0, rng);
            Box::new(move |g, s| {
                let (x, k) = (p(g, s, "x"), p(g, s, "k"));
                let b = s.id("b").map(|id| g.param(s, id));
                let y = g.conv2d(x, k, b, spec)?;
                project(g, y, &r)
            })
        }
        "upsample2x" => {
            param(&mut store, "x", &[2, 2, 3, 3], rng)?;
            let r = Tensor::randn([2, 2, 6, 6], 1.0, rng);
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let y = g.upsample2x(x)?;
                project(g, y, &r)
            })
        }
        "relu" | "sigmoid" => {
            param(&mut store, "x", &[24], rng)?;
            let r = Tensor::randn([24], 1.0, rng);
            let relu = op == "relu";
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let y = if relu { g.relu(x) } else { g.sigmoid(x) };
                project(g, y, &r)
            })
        }
        "add_mul_scale" => {
            param(&mut store, "a", &[3, 4], rng)?;
            param(&mut store, "b", &[3, 4], rng)?;
            let r = Tensor::randn([3, 4], 1.0, rng);
            Box::new(move |g, s| {
                let (a, b) = (p(g, s, "a"), p(g, s, "b"));
                let sum = g.add(a, b)?;
                let prod = g.mul(sum, b)?;
                let scaled = g.scale(prod, -1.7);
                let shifted = g.add_scalar(scaled, 0.25);
                let sq = g.mul(shifted, shifted)?;
                project(g, sq, &r)
            })
        }
        "concat_channels" => {
            param(&mut store, "a", &[2, 2, 3, 3], rng)?;
            param(&mut store, "b", &[2, 1, 3, 3], rng)?;
            let r = Tensor::randn([2, 3, 3, 3], 1.0, rng);
            Box::new(move |g, s| {
                let (a, b) = (p(g, s, "a"), p(g, s, "b"));
                let y = g.concat_channels(&[a, b])?;
                project(g, y, &r)
            })
        }
        "linear" => {
            param(&mut store, "x", &[3, 4], rng)?;
            param(&mut store, "w", &[5, 4], rng)?;
            param(&mut store, "b", &[5], rng)?;
            let r = Tensor::randn([3, 5], 1.0, rng);
            Box::new(move |g, s| {
                let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
                let y = g.linear(x, w, Some(b))?;
                project(g, y, &r)
            })
        }
        "flatten_narrow" => {
            param(&mut store, "x", &[2, 2, 2, 3], rng)?;
            let r = Tensor::randn([2, 5], 1.0, rng);
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let f = g.flatten(x)?;
                let y = g.narrow_cols(f, 4, 5)?;
                project(g, y, &r)
            })
        }
        "mean_sum" => {
            param(&mut store, "x", &[7], rng)?;
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let sq = g.mul(x, x)?;
                let m = g.mean(sq);
                let t = g.sum(x);
                let tt = g.mul(t, t)?;
                g.add(m, tt)
            })
        }
        "mse_masked" => {
            param(&mut store, "x", &[4, 5], rng)?;
            let target = Tensor::randn([4, 5], 1.0, rng);
            let mask = Tensor::new(
                [4, 5],
                (0..20)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            rng.random_range(0.2..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )?;
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                g.mse(x, &target, Some(&mask))
            })
        }
        "bce_masked" => {
            param(&mut store, "x", &[4, 5], rng)?;
            let labels = Tensor::new([4, 5], (0..20).map(|_| rng.random_range(0.0..1.0)).collect())?;
            let mask = Tensor::new(
                [4, 5],
                (0..20).map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }).collect(),
            )?;
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let a = g.bce_with_logits(x, &labels, Some(&mask))?;
                let b = g.bce_with_logits(x, &labels, None)?;
                g.add(a, b)
            })
        }
        "stop_gradient" => {
            param(&mut store, "x", &[6], rng)?;
            let r = Tensor::randn([6], 1.0, rng);
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let doubled = g.scale(x, 2.0);
                let stopped = g.stop_gradient(doubled)?;
                let prod = g.mul(x, stopped)?;
                let y = g.add(prod, x)?;
                project(g, y, &r)
            })
        }
        "conv_relu_mse" => {
            param(&mut store, "x", &[2, 2, 8, 8], rng)?;
            param(&mut store, "k1", &[3, 2, 3, 3], rng)?;
            param(&mut store, "b1", &[3], rng)?;
            param(&mut store, "k2", &[2, 3, 1, 1], rng)?;
            param(&mut store, "w", &[4, 5 * 4 * 4], rng)?;
            let target = Tensor::randn([2, 4], 1.0, rng);
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                let (k1, b1, k2, w) = (p(g, s, "k1"), p(g, s, "b1"), p(g, s, "k2"), p(g, s, "w"));
                let h = g.conv2d(x, k1, Some(b1), Conv2dSpec::same(3, 2))?;
                let h = g.relu(h);
                let skip = g.conv2d(h, k2, None, Conv2dSpec::same(1, 1))?;
                let up = g.upsample2x(skip)?;
                let up = g.stop_gradient(up)?;
                let h_up = g.upsample2x(h)?;
                let cat = g.concat_channels(&[up, h_up])?;
                let cat = g.sigmoid(cat);
                let down = g.reshape(cat, &[2, 5, 8, 8])?;
                let pool = p(g, s, "k1pool");
                let pooled = g.conv2d(down, pool, None, Conv2dSpec::same(1, 2))?;
                let flat = g.flatten(pooled)?;
                let y = g.linear(flat, w, None)?;
                g.mse(y, &target, None)
            })
        }
        other => unreachable!("unknown op case {other}"),
    };
    if op == "conv_relu_mse" {
        // 1x1 stride-2 pooling kernel, registered after the closure captured its name
        store.insert("k1pool", Tensor::randn([5, 5, 1, 1], 0.5, rng))?;
    }
    Ok(OpCase { store, build })
}

pub const OP_CASES: [&str; 15] = [
    "conv2d_3x3_s1_bias",
    "conv2d_3x3_s2",
    "conv2d_1x1_bias",
    "upsample2x",
    "relu",
    "sigmoid",
    "add_mul_scale",
    "concat_channels",
    "linear",
    "flatten_narrow",
    "mean_sum",
    "mse_masked",
    "bce_masked",
    "stop_gradient",
    "conv_relu_mse",
];

/// Runs every op case over `seeds`, one merged report per case.
pub fn op_suite(seeds: std::ops::Range<u64>, opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for op in OP_CASES {
        let mut merged = GradCheckReport::empty(op, opts.tolerance);
        for seed in seeds.clone() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = case(op, &mut rng)?;
            let r = check_gradients(op, &c.store, &c.build, opts, &mut rng)?;
            merged.merge(&r);
        }
        reports.push(merged);
    }
    Ok(reports)
}
