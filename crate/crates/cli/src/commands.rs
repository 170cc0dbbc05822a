use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use posetrack_core::eval::{
    annotator_agreement, emit_report, evaluate_dataset, evaluate_poses, EvalConfig, InvisibleRule, ReportFormat, Subset,
};
use posetrack_core::geometry::{detection_to_roi, pose_to_roi, roi_to_transform, Point2};
use posetrack_core::posenet::gradcheck::{gradient_stop_check, network_suite};
use posetrack_core::posenet::{predict_pose, train, NetworkConfig, PoseNet};
use posetrack_core::synthdata::clip::{generate_clip, write_clip};
use posetrack_core::synthdata::{generate_dataset, load_dataset, DatasetManifest, Image};
use posetrack_core::tensor::gradcheck::{op_suite, GradCheckOptions};
use posetrack_core::topology::{topology_csv, KeypointId};
use posetrack_core::tracker::{run_clip, DetectorPort, NetworkModel, NullDetector, OracleDetector};
use posetrack_core::{Detection, Roi};
use rand::SeedableRng;

use crate::config::RunConfig;
use crate::*;

struct Run {
    config: RunConfig,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Run { config, seed };
    match cli.command {
        Command::SynthGen(a) => synth_gen(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Strip(a) => strip(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
        Command::Track(a) => track(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Agree(a) => agree(&ctx, a),
        Command::GradCheck(a) => grad_check(a),
        Command::Topology(a) => topology(a),
        Command::Align(a) => align(&ctx, a),
    }
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} given (flag or config)"),
    }
}

fn load_model(path: &Path) -> Result<PoseNet<f32>> {
    PoseNet::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn parse_floats<const N: usize>(text: &str, what: &str) -> Result<[f64; N]> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {what} {text:?}"))?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("{what} needs {N} comma-separated numbers, got {}", v.len()))
}

fn synth_gen(ctx: &Run, a: SynthGenArgs) -> Result<()> {
    ensure!(a.count > 0, "-n must be positive");
    let manifest = if a.clip {
        let clip = posetrack_core::synthdata::clip::ClipConfig {
            frames: a.count,
            ..ctx.config.clip
        };
        write_clip(&generate_clip(ctx.seed, &clip)?, &a.out)?
    } else {
        generate_dataset(a.count, ctx.seed, &a.out, &ctx.config.generation)?
    };
    eprintln!("wrote {} records to {}", manifest.len(), a.out.display());
    Ok(())
}

fn train_cmd(ctx: &Run, a: TrainArgs) -> Result<()> {
    let data = required(a.data, &ctx.config.dataset, "dataset")?;
    let out = required(a.out, &ctx.config.checkpoint, "output checkpoint")?;
    let manifest = load_manifest(&data)?;
    ensure!(
        a.heldout < manifest.len(),
        "--heldout {} leaves no training records out of {}",
        a.heldout,
        manifest.len()
    );
    let mut network = ctx.config.network;
    if let Some(preset) = &a.preset {
        network = NetworkConfig {
            loss_weights: network.loss_weights,
            ..NetworkConfig::preset(preset)?
        };
    }
    let mut cfg = ctx.config.train;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.adam.lr = a.lr.unwrap_or(cfg.adam.lr);
    cfg.validate()?;

    let samples = load_dataset(&manifest)?;
    let (train_set, heldout) = samples.split_at(samples.len() - a.heldout);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut model = PoseNet::<f32>::new(network, &mut rng)?;
    eprintln!(
        "training {} parameters on {} samples ({} held out)",
        model.num_params(),
        train_set.len(),
        heldout.len()
    );
    let report = train(&mut model, train_set, heldout, &cfg, ctx.seed, |e| {
        let pck = e.pck.map(|p| format!(" pck {p:.2}")).unwrap_or_default();
        eprintln!(
            "epoch {:>3}  loss {:.5}  regression {:.6}{pck}  {:.1}s",
            e.epoch, e.loss, e.regression_loss, e.seconds
        );
    })?;
    model.save(&out)?;
    if let Some(curve) = a.curve {
        std::fs::write(&curve, report.loss_curve_csv())?;
    }
    eprintln!("saved {}", out.display());
    Ok(())
}

fn strip(ctx: &Run, a: StripArgs) -> Result<()> {
    let path = required(a.checkpoint, &ctx.config.checkpoint, "checkpoint")?;
    let model = load_model(&path)?;
    let stripped = model.strip_heads();
    stripped.save(&a.out)?;
    println!(
        "parameters: {} -> {} ({} tensors -> {})",
        model.num_params(),
        stripped.num_params(),
        model.params().len(),
        stripped.params().len()
    );
    Ok(())
}

fn pose_json(pose: &posetrack_core::Pose) -> serde_json::Value {
    serde_json::json!({
        "keypoints": pose.points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
        "visibility": pose.visibility.to_vec(),
    })
}

fn infer(ctx: &Run, a: InferArgs) -> Result<()> {
    let model = load_model(&required(a.checkpoint, &ctx.config.checkpoint, "checkpoint")?)?;
    let image = Image::load(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let roi = match a.roi {
        Some(text) => {
            let [x, y, side, deg] = parse_floats::<4>(&text, "--roi")?;
            Roi::new(Point2::new(x, y), side, deg.to_radians())?
        }
        None => {
            let (w, h) = (image.width() as f64, image.height() as f64);
            Roi::new(Point2::new(w / 2.0, h / 2.0), w.min(h), 0.0)?
        }
    };
    let pose = predict_pose(&model, &image, &roi)?;
    println!("{}", pose_json(&pose));
    Ok(())
}

fn track(ctx: &Run, a: TrackArgs) -> Result<()> {
    let model = load_model(&required(a.checkpoint, &ctx.config.checkpoint, "checkpoint")?)?;
    let manifest = load_manifest(&required(a.clip, &ctx.config.dataset, "clip")?)?;
    let mut config = ctx.config.tracker;
    config.presence_threshold = a.threshold.unwrap_or(config.presence_threshold);
    config.validate()?;
    let gts = manifest.poses()?;
    let mut detector: Box<dyn DetectorPort> = match a.detector {
        DetectorKind::Oracle => Box::new(OracleDetector::exact(gts.clone())),
        DetectorKind::Null => Box::new(NullDetector),
    };
    let mut pose_model = NetworkModel { model: &model };
    let start = std::time::Instant::now();
    let frames = (0..manifest.len()).map(|i| manifest.load_image(i));
    let run = run_clip(frames, &config, detector.as_mut(), &mut pose_model)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut out: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for outcome in &run.outcomes {
        writeln!(out, "{}", outcome.to_json())?;
    }
    out.flush()?;

    if a.report {
        let eval = ctx.config.eval;
        let (preds, truths): (Vec<_>, Vec<_>) = run
            .outcomes
            .iter()
            .zip(&gts)
            .skip(1)
            .filter_map(|(o, gt)| o.result().map(|r| (r.pose.clone(), gt.clone())))
            .collect();
        let dataset = manifest
            .root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".into());
        let mut report = if preds.is_empty() {
            posetrack_core::eval::EvalReport::new("tracker", &dataset, &eval)
        } else {
            evaluate_poses(&preds, &truths, &eval, "tracker", &dataset)?
        };
        report.predictor_seconds = seconds;
        eprintln!(
            "detector ran on frames {:?}; {} frames in {seconds:.2}s ({:.1} FPS)",
            run.detector_frames(),
            run.outcomes.len(),
            run.outcomes.len() as f64 / seconds
        );
        eprint!("{}", emit_report(&[report], ReportFormat::Markdown)?);
    }
    Ok(())
}

fn eval_config(ctx: &Run, tolerance: Option<f64>, subset: Option<&str>, count_invisible: bool) -> Result<EvalConfig> {
    let mut cfg = ctx.config.eval;
    cfg.tolerance = tolerance.unwrap_or(cfg.tolerance);
    match subset {
        Some("full") => cfg.subset = Subset::Full,
        Some(_) => cfg.subset = Subset::Coco17,
        None => {}
    }
    if count_invisible {
        cfg.invisible = InvisibleRule::CountIncorrect;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn eval(ctx: &Run, a: EvalArgs) -> Result<()> {
    let cfg = eval_config(ctx, a.tolerance, a.subset.as_deref(), a.count_invisible)?;
    let padding = ctx.config.train.padding;
    let manifests = a.data.iter().map(|d| load_manifest(d)).collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for path in &a.checkpoint {
        let model = load_model(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for manifest in &manifests {
            let predictor =
                |image: &Image, gt: &posetrack_core::Pose| predict_pose(&model, image, &pose_to_roi(gt, padding)?);
            reports.push(evaluate_dataset(predictor, manifest, &cfg, &label)?);
        }
    }
    let format = match a.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let table = emit_report(&reports, format)?;
    match &a.out {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    if let Some(min) = a.assert_min_pck {
        for r in &reports {
            ensure!(
                r.aggregate() >= min,
                "{} on {}: PCK {:.2} below the required {min}",
                r.model,
                r.dataset,
                r.aggregate()
            );
        }
    }
    Ok(())
}

fn agree(ctx: &Run, a: AgreeArgs) -> Result<()> {
    let cfg = eval_config(ctx, a.tolerance, None, false)?;
    let agreement = annotator_agreement(&load_manifest(&a.a)?, &load_manifest(&a.b)?, &cfg)?;
    println!("B against A: {:.2}", agreement.b_against_a.aggregate());
    println!("A against B: {:.2}", agreement.a_against_b.aggregate());
    println!("mean: {:.2}", agreement.mean());
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    ensure!(a.seeds > 0 && a.entries > 0, "--seeds and --entries must be positive");
    let opts = GradCheckOptions {
        entries_per_param: a.entries,
        ..Default::default()
    };
    let mut reports = op_suite(0..a.seeds, &opts)?;
    reports.push(network_suite(0..a.seeds, &opts)?);
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAILED" };
        failed += usize::from(!r.passed());
        println!(
            "{:<20} entries {:>5}  kinks {:>3}  max rel {:.3e}  {status}",
            r.name, r.entries, r.kinks_skipped, r.max_rel_error
        );
    }
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..a.seeds {
        let c = gradient_stop_check(seed, a.entries, opts.eps)?;
        worst = (worst.0.max(c.max_analytic), worst.1.max(c.max_numeric));
    }
    let stop_ok = worst.0 == 0.0 && worst.1 <= 1e-6;
    failed += usize::from(!stop_ok);
    println!(
        "{:<20} analytic {:.1e}  numeric {:.1e}  {}",
        "gradient-stop",
        worst.0,
        worst.1,
        if stop_ok { "ok" } else { "FAILED" }
    );
    ensure!(failed == 0, "{failed} gradient checks failed");
    Ok(())
}

fn topology(a: TopologyArgs) -> Result<()> {
    if a.dump {
        print!("{}", topology_csv());
    } else {
        for id in KeypointId::all() {
            println!("{:>2}  {}", id.index(), id.name());
        }
    }
    Ok(())
}

fn align(ctx: &Run, a: AlignArgs) -> Result<()> {
    let padding = a.padding.unwrap_or(ctx.config.tracker.roi_padding);
    ensure!(a.crop_size > 0, "--crop-size must be positive");
    let roi = match (a.detection, a.data, a.index) {
        (Some(text), _, _) => {
            let [x, y, r, deg] = parse_floats::<4>(&text, "--detection")?;
            let det = Detection {
                mid_hip: Point2::new(x, y),
                circle_radius: r,
                incline: deg.to_radians(),
            };
            detection_to_roi(&det, padding)?
        }
        (None, Some(data), Some(index)) => {
            let manifest = load_manifest(&data)?;
            let record = manifest
                .records
                .get(index)
                .with_context(|| format!("record {index} out of range ({} records)", manifest.len()))?;
            pose_to_roi(&record.pose()?, padding)?
        }
        _ => bail!("give either --detection or --data with --index"),
    };
    let t = roi_to_transform(&roi, a.crop_size);
    println!(
        "{}",
        serde_json::json!({
            "rotation": t.rotation.to_degrees() + 0.0,
            "scale": t.scale,
            "tx": t.translation.x,
            "ty": t.translation.y,
        })
    );
    Ok(())
}
