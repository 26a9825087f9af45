use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use langfield::eval::{miou_accuracy, psnr, read_label_png, ssim, Image, MetricReport};
use langfield::experiments::{k_sweep, toy_end_to_end, KSweepConfig, ToyConfig};
use langfield::gradcheck::{run_suite, SuiteConfig, DEFAULT_TOLERANCE, STRICT_TOLERANCE};
use langfield::pipeline::{
    moving_rectangles, run_collection, ColorComponentGenerator, ColorEmbedder,
    ColorTrackPropagator, CollectionConfig, Frame, SequenceSpec, SubprocessAdapter,
};
use langfield::raster::{weight_map_png16, write_feature_file};
use langfield::scene::synthetic_camera;
use langfield::{
    assemble_features, load_scene, make_synthetic_scene, render, render_features_direct,
    save_scene, validate_scene, Camera, CameraSpec, RenderOptions, Scene,
};

use crate::args::*;
use crate::query::{run_query, QueryTarget};

/// Exit code for a run that completed but failed a requested gate.
pub const GATE_FAILURE: u8 = 3;

/// Orbit camera around the origin; `fov` defaults to the synthetic framing.
fn orbit_camera(
    azimuth: f64,
    elevation: f64,
    radius: f64,
    fov: Option<f64>,
    width: u32,
    height: u32,
) -> Result<Camera> {
    let fov = fov.unwrap_or(2.0 * (1.2f64 / 3.0).atan());
    let cam = Camera::orbit(azimuth, elevation, radius, Default::default(), fov, width, height)?;
    cam.validate()?;
    Ok(cam)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Camera(a) => camera(a),
        Command::Render(a) => render_cmd(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Frames(a) => frames(a),
        Command::Collect(a) => collect(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ksweep(a) => ksweep(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Serve(a) => crate::serve::run(a),
    }
}

fn gate(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(GATE_FAILURE)
    }
}

fn usage_error(msg: String) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, msg)
        .exit()
}

fn load_camera(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path).with_context(|| format!("reading camera {}", path.display()))?;
    let spec: CameraSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing camera {}", path.display()))?;
    Ok(Camera::try_from(spec)?)
}

fn load_valid_scene(path: &Path) -> Result<Scene> {
    let scene = load_scene(path).with_context(|| format!("loading scene {}", path.display()))?;
    let report = validate_scene(&scene);
    if !report.is_clean() {
        bail!("scene {} is invalid:\n{report}", path.display());
    }
    Ok(scene)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    if a.k == 0 || a.c == 0 || a.regions == 0 {
        usage_error("--k, --c and --regions must be at least 1".into());
    }
    if a.regions > a.k {
        usage_error(format!("--regions ({}) must not exceed --k ({})", a.regions, a.k));
    }
    let scene = make_synthetic_scene(a.seed, a.n, a.k, a.c, a.regions)?;
    save_scene(&scene, &a.output)?;
    print!("{}", validate_scene(&scene));
    println!(
        "wrote {} ({} primitives, K={}, C={}, {} terms)",
        a.output.display(),
        scene.primitives.len(),
        scene.k(),
        scene.c(),
        scene.vocabulary.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn camera(a: CameraArgs) -> Result<ExitCode> {
    let cam = if a.azimuth == 0.0 && a.elevation == 0.0 && a.radius == 3.0 && a.fov.is_none() {
        synthetic_camera(a.width, a.height)
    } else {
        orbit_camera(a.azimuth, a.elevation, a.radius, a.fov, a.width, a.height)?
    };
    let json = serde_json::to_string_pretty(&CameraSpec::from(&cam))?;
    write(&a.output, json.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn render_cmd(a: RenderArgs) -> Result<ExitCode> {
    let scene = load_valid_scene(&a.scene)?;
    let cam = load_camera(&a.camera)?;
    fs::create_dir_all(&a.out_dir)?;
    let opts = RenderOptions {
        tile_size: a.tile_size as usize,
        threads: None,
    };
    let out = render::<f32>(&scene, &cam, &opts)?;
    write(&a.out_dir.join("rgb.png"), &langfield::raster::rgb_png(&out))?;
    write(&a.out_dir.join("alpha.png"), &langfield::raster::alpha_png(&out))?;
    if a.weight_maps {
        for k in 0..scene.k() {
            write(
                &a.out_dir.join(format!("weight_{k:03}.png")),
                &weight_map_png16(&out.weight_maps, k),
            )?;
        }
    }
    let features = if a.features || a.check_equivalence {
        Some(assemble_features(&out.weight_maps, &scene.dictionary)?)
    } else {
        None
    };
    if a.features {
        let mut bytes = Vec::new();
        write_feature_file(features.as_ref().expect("assembled"), &mut bytes)?;
        write(&a.out_dir.join("features.lff"), &bytes)?;
    }
    println!("wrote {}x{} render to {}", out.width, out.height, a.out_dir.display());
    if a.check_equivalence {
        let direct = render_features_direct::<f32>(&scene, &cam, &opts)?;
        let dev = features
            .as_ref()
            .expect("assembled")
            .max_abs_diff(&direct)
            .expect("same shape");
        println!("max deviation (weight-first vs feature-first): {dev:e}");
        if dev > a.tolerance {
            eprintln!("deviation exceeds tolerance {:e}", a.tolerance);
            return Ok(gate(false));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_sim(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |s| format!("{s:.6}"))
}

fn query(a: QueryArgs) -> Result<ExitCode> {
    let scene = load_valid_scene(&a.scene)?;
    let cam = load_camera(&a.camera)?;
    let target = match (&a.term, &a.embedding_file) {
        (Some(t), _) => QueryTarget::Term(t.clone()),
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: Vec<f32> = serde_json::from_str(&text)
                .with_context(|| format!("{} must hold a JSON array of numbers", p.display()))?;
            QueryTarget::Embedding(v)
        }
        (None, None) => unreachable!("clap requires a target"),
    };
    let r = run_query(&scene, &cam, &target, a.alpha_floor, &RenderOptions::default())?;
    fs::create_dir_all(&a.out_dir)?;
    write(&a.out_dir.join("heatmap.png"), &r.heatmap_png()?)?;
    write(&a.out_dir.join("labels.png"), &r.labels_png()?)?;
    for (term, max) in &r.per_term_max {
        println!("{term}\t{}", fmt_sim(*max));
    }
    println!("query\t{}", fmt_sim(r.max_similarity));
    Ok(ExitCode::SUCCESS)
}

fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    Ok(Image::from_u8(img.width() as usize, img.height() as usize, 3, img.as_raw())?)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let read = |p: &Path| -> Result<_> {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        read_label_png(&bytes).with_context(|| format!("decoding {}", p.display()))
    };
    let (pred, gt) = (read(&a.pred)?, read(&a.gt)?);
    let scores = miou_accuracy(&pred, &gt)?;
    let terms: Vec<String> = match &a.scene {
        Some(p) => load_scene(p)?.vocabulary.terms().map(String::from).collect(),
        None => Vec::new(),
    };
    let per_class_iou = scores
        .per_class
        .iter()
        .map(|(&c, &iou)| {
            let name = terms.get(c as usize).cloned().unwrap_or_else(|| c.to_string());
            (name, iou)
        })
        .collect();
    let (mut p, mut s) = (None, None);
    if let (Some(pr), Some(gr)) = (&a.pred_rgb, &a.gt_rgb) {
        let (x, y) = (read_rgb(pr)?, read_rgb(gr)?);
        p = Some(psnr(&x, &y)?);
        s = Some(ssim(&x, &y)?);
    }
    let report = MetricReport {
        miou: scores.miou,
        accuracy: scores.accuracy,
        per_class_iou,
        psnr: p,
        ssim: s,
    };
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        write(path, report.to_json().as_bytes())?;
    }
    if let Some(min) = a.min_miou {
        if report.miou < min {
            eprintln!("mIoU {:.4} is below --min-miou {min}", report.miou);
            return Ok(gate(false));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn frames(a: FramesArgs) -> Result<ExitCode> {
    let spec = SequenceSpec {
        width: a.width,
        height: a.height,
        frames: a.count,
        third_object_frame: a.third_object_frame,
    };
    fs::create_dir_all(&a.out_dir)?;
    for f in moving_rectangles(&spec) {
        let img = image::RgbImage::from_raw(f.width as u32, f.height as u32, f.rgb)
            .expect("frame buffer size");
        let path = a.out_dir.join(format!("frame_{:04}.png", f.index));
        img.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} frames to {}", a.count, a.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading frames directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG frames in {}", dir.display());
    }
    paths
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let img = image::open(p)
                .with_context(|| format!("reading {}", p.display()))?
                .to_rgb8();
            Ok(Frame {
                index,
                width: img.width() as usize,
                height: img.height() as usize,
                rgb: img.into_raw(),
            })
        })
        .collect()
}

fn collect(a: CollectArgs) -> Result<ExitCode> {
    if !(a.nms_iou > 0.0 && a.nms_iou < 1.0) {
        usage_error(format!("--nms-iou must be in (0, 1), got {}", a.nms_iou));
    }
    if !(a.coverage_threshold > 0.0 && a.coverage_threshold <= 1.0) {
        usage_error(format!(
            "--coverage-threshold must be in (0, 1], got {}",
            a.coverage_threshold
        ));
    }
    let frames = load_frames(&a.frames)?;
    let config = CollectionConfig {
        nms_iou: a.nms_iou,
        coverage_threshold: a.coverage_threshold,
    };
    let result = match &a.adapter {
        Some(program) => {
            let adapter = SubprocessAdapter::spawn(program, &a.adapter_args)
                .with_context(|| format!("starting adapter {program}"))?;
            let (mut g, mut p) = (&adapter, &adapter);
            run_collection(&frames, &mut g, &mut p, &adapter, &config)
        }
        None => {
            if a.c == 0 {
                usage_error("--c must be at least 1".into());
            }
            run_collection(
                &frames,
                &mut ColorComponentGenerator,
                &mut ColorTrackPropagator,
                &ColorEmbedder::new(a.c, a.seed),
                &config,
            )
        }
    };
    match result {
        Ok(out) => {
            out.store.save(&a.output)?;
            if let Some(p) = &a.stats_json {
                write(p, serde_json::to_string_pretty(&out.stats)?.as_bytes())?;
            }
            print!("{}", out.summary_table());
            println!("wrote {} records to {}", out.store.records.len(), a.output.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(fail) => {
            fail.partial.save(&a.output)?;
            eprintln!(
                "partial store with {} records written to {} (marked incomplete)",
                fail.partial.records.len(),
                a.output.display()
            );
            Err(fail.error.into())
        }
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let config = SuiteConfig {
        instances: a.instances,
        seed: a.seed,
        tolerance: if a.double { STRICT_TOLERANCE } else { DEFAULT_TOLERANCE },
        sign_flip: a.perturb_sign_flip,
        ..Default::default()
    };
    let results = run_suite(&config);
    println!("{:<30} {:>9} {:>14}  result", "loss", "instances", "max rel err");
    for r in &results {
        println!(
            "{:<30} {:>9} {:>14.3e}  {}",
            r.name,
            r.instances,
            r.max_relative_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    println!("gate: {:e}", config.tolerance);
    if let Some(p) = &a.json {
        write(p, serde_json::to_string_pretty(&results)?.as_bytes())?;
    }
    Ok(gate(results.iter().all(|r| r.passed)))
}

fn ksweep(a: KsweepArgs) -> Result<ExitCode> {
    if a.ks.contains(&0) {
        usage_error("every K must be at least 1".into());
    }
    let config = KSweepConfig {
        ks: a.ks,
        seed: a.seed,
        n_primitives: a.n,
        c: a.c,
        resolution: a.resolution,
        cameras: a.cameras,
    };
    let sweep = k_sweep(&config)?;
    print!("{}", sweep.to_table());
    let worst = sweep.rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    println!("max deviation (weight-first vs feature-first): {worst:e}");
    if let Some(p) = &a.json {
        write(p, serde_json::to_string_pretty(&sweep)?.as_bytes())?;
    }
    Ok(gate(worst <= a.tolerance))
}

fn train_toy(a: TrainToyArgs) -> Result<ExitCode> {
    let mut config = ToyConfig {
        seed: a.seed,
        ..Default::default()
    };
    config.train.seed = a.seed;
    config.refine.seed = a.seed;
    if let Some(s) = a.steps {
        config.train.steps = s;
    }
    let (report, scene) = toy_end_to_end(&config)?;
    println!("groups                 {}", report.groups);
    println!("grouping mIoU          {:.4}", report.grouping_miou);
    println!("weight agreement       {:.4}", report.weight_agreement);
    println!("unlocated primitives   {}", report.unlocated);
    println!("segmentation accuracy  {:.4}", report.segmentation_accuracy);
    println!("segmentation mIoU      {:.4}", report.segmentation_miou);
    println!("final grouping loss    {:.6}", report.final_loss);
    if let Some(p) = &a.trace {
        let mut csv = String::from("step,total\n");
        for (i, v) in report.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        write(p, csv.as_bytes())?;
    }
    if let Some(p) = &a.scene_out {
        save_scene(&scene, p)?;
    }
    if let Some(p) = &a.json {
        write(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}
