use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use lsinspect::baseline::{detect_batch, BaselineParams};
use lsinspect::datamodel::{
    export_csv, images_dir, load_annotations, load_images, manifest_pattern, read_predictions, segregate,
    write_predictions,
};
use lsinspect::denoise::{psd_profile, spectral_report, SpectralConfig};
use lsinspect::denoise::{denoise, DenoiseMethod};
use lsinspect::ensemble::{merge_prediction_sets, ClassScope, EnsembleConfig, OverlapScope};
use lsinspect::evaluate::{compare_runs, evaluate_dataset, EvalConfig, EvalReport, Interpolation, Weighting};
use lsinspect::synthgen::{generate_dataset, DatasetConfig, NoiseModel, PatternSpec};
use lsinspect::{DefectClass, Error, ImagePredictions, PredictionSet};

use crate::args::*;

/// Failure with its exit code: 1 validation, 2 I/O, 3 internal.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            _ if e.is_io() => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<Value, Failure>;

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::io(format!("input `{}` does not exist", path.display())))
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    require(path)?;
    fs::read_to_string(path).map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::io(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

fn load_preds(path: &Path) -> Result<PredictionSet, Failure> {
    let set = read_predictions(&read_text(path)?)?;
    for w in &set.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(set)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 over every file under `root`, in sorted relative-path order.
pub fn tree_digest(root: &Path) -> Result<String, Failure> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files).map_err(|e| Failure::io(format!("listing {}: {e}", root.display())))?;
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let r = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            (r, p)
        })
        .collect();
    rel.sort();
    let mut h = Sha256::new();
    for (r, p) in rel {
        let bytes = fs::read(&p).map_err(|e| Failure::io(format!("reading {}: {e}", p.display())))?;
        h.update(r.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

pub fn parse_mix(text: &str) -> Result<Vec<(DefectClass, f64)>, Failure> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (name, w) = part
                .split_once('=')
                .ok_or_else(|| Failure::validation(format!("mix entry `{part}` is not class=weight")))?;
            let class: DefectClass = name.trim().parse()?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Failure::validation(format!("mix weight `{w}` is not a number")))?;
            Ok((class, w))
        })
        .collect()
}

pub fn dataset_config(a: &GenerateArgs) -> Result<DatasetConfig, Failure> {
    let mut cfg = DatasetConfig {
        count: a.count,
        seed: a.seed,
        mix: parse_mix(&a.mix)?,
        defects_per_image: (a.min_defects, a.max_defects),
        ..Default::default()
    };
    cfg.pattern.pitch_px = a.pitch_px;
    cfg.pattern.image_size = a.image_size;
    cfg.pattern.lwr_sigma_px = a.lwr_sigma_px;
    cfg.pattern.charging_contrast = a.charging;
    cfg.noise.gaussian_sigma = a.noise_sigma;
    cfg.noise.model = match a.noise_model {
        NoiseModelArg::Gaussian => NoiseModel::Gaussian,
        NoiseModelArg::PoissonGaussian => NoiseModel::PoissonGaussian,
    };
    cfg.scene.footing.count = a.footing;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(a: &GenerateArgs) -> Outcome {
    let cfg = dataset_config(a)?;
    log::info!("rendering {} images into {}", cfg.count, a.out.display());
    let manifest = generate_dataset(&cfg, &a.out)?;
    Ok(json!({
        "out": a.out,
        "images": cfg.count,
        "splits": manifest.splits.iter().map(|(k, v)| (k.clone(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
        "checksum": tree_digest(&a.out)?,
    }))
}

fn copy_if_present(from: &Path, to: &Path) -> Result<(), Failure> {
    if from.is_file() {
        let bytes = fs::read(from).map_err(|e| Failure::io(format!("reading {}: {e}", from.display())))?;
        write_file(to, &bytes)?;
    } else if from.is_dir() {
        for entry in fs::read_dir(from).map_err(|e| Failure::io(format!("listing {}: {e}", from.display())))? {
            let p = entry.map_err(|e| Failure::io(e.to_string()))?.path();
            if p.is_file() {
                copy_if_present(&p, &to.join(p.file_name().expect("file name")))?;
            }
        }
    }
    Ok(())
}

fn denoise_cmd(a: &DenoiseArgs) -> Outcome {
    require(&a.input)?;
    let method = DenoiseMethod::parse(&a.method, a.param)?;
    let pattern = manifest_pattern(&a.input)?.unwrap_or_default();
    let images = load_images(&a.input, a.pixel_size_nm)?;
    if images.is_empty() {
        return Err(Failure::validation(format!("no images under {}", a.input.display())));
    }
    log::info!("denoising {} images with {method}", images.len());
    let spectral_cfg = SpectralConfig {
        pitch_px: pattern.pitch_px,
        ..Default::default()
    };
    let passes = images
        .par_iter()
        .map(|(name, img)| {
            let out = denoise(img, method)?;
            write_file(&a.out.join("images").join(name), &out.encode_png())?;
            if a.psd {
                let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
                write_file(&a.out.join("psd").join(format!("{stem}.csv")), psd_profile(&out).to_csv().as_bytes())?;
            }
            Ok(spectral_report(img, &out, &spectral_cfg).is_ok_and(|r| r.pass))
        })
        .collect::<Result<Vec<bool>, Failure>>()?
        .into_iter()
        .filter(|p| *p)
        .count();
    if a.input.join("images").is_dir() {
        copy_if_present(&a.input.join("annotations"), &a.out.join("annotations"))?;
        copy_if_present(&a.input.join("manifest.json"), &a.out.join("manifest.json"))?;
    }
    Ok(json!({
        "out": a.out,
        "images": images.len(),
        "method": method.to_string(),
        "spectral_pass": passes,
    }))
}

/// Baseline parameters for `detect`, resolving the pattern from the dataset.
pub fn baseline_params(a: &DetectArgs) -> Result<BaselineParams, Failure> {
    let mut pattern: PatternSpec = manifest_pattern(&a.input)?.unwrap_or_default();
    if let Some(p) = a.pitch_px {
        pattern.pitch_px = p;
    }
    let params = BaselineParams {
        intensity_threshold: a.intensity_threshold,
        min_failure_area_px: a.min_size,
        expected_pattern: pattern,
        merge_distance_px: a.merge_distance,
        ..Default::default()
    };
    params.validate()?;
    Ok(params)
}

fn detect_cmd(a: &DetectArgs) -> Outcome {
    if a.method != "baseline" {
        return Err(Failure::validation(format!("unknown detection method `{}`", a.method)));
    }
    if a.model.is_empty() {
        return Err(Failure::validation("--model must not be empty"));
    }
    require(&a.input)?;
    let params = baseline_params(a)?;
    let images = load_images(&a.input, a.pixel_size_nm)?;
    log::info!("detecting on {} images from {}", images.len(), images_dir(&a.input).display());
    let mut set = PredictionSet::new(a.model.clone());
    set.images = detect_batch(&images, &params)?;
    for d in set.images.iter_mut().flat_map(|i| i.detections.iter_mut()) {
        d.source = a.model.clone();
    }
    let text = write_predictions(&set);
    write_file(&a.out, text.as_bytes())?;
    Ok(json!({
        "out": a.out,
        "model": a.model,
        "images": set.images.len(),
        "detections": set.detection_count(),
        "sha256": sha256_hex(text.as_bytes()),
    }))
}

pub fn ensemble_config(a: &EnsembleArgs, sets: &[PredictionSet]) -> Result<EnsembleConfig, Failure> {
    let order = if a.order.is_empty() {
        sets.iter().map(|s| s.model.clone()).collect()
    } else {
        a.order.clone()
    };
    let cfg = EnsembleConfig {
        preference_order: order,
        iou_threshold: a.iou,
        overlap_scope: match a.scope {
            ScopeArg::All => OverlapScope::AllAccepted,
            ScopeArg::First => OverlapScope::FirstModelOnly,
        },
        class_scope: match a.class_scope {
            ClassScopeArg::Agnostic => ClassScope::ClassAgnostic,
            ClassScopeArg::Aware => ClassScope::ClassAware,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ensemble_cmd(a: &EnsembleArgs) -> Outcome {
    if a.preds.len() < 2 && !a.allow_single {
        return Err(Failure::validation(
            "ensemble needs at least two prediction files (use --allow-single for a passthrough)",
        ));
    }
    let sets = a.preds.iter().map(|p| load_preds(p)).collect::<Result<Vec<_>, _>>()?;
    let cfg = ensemble_config(a, &sets)?;
    let (merged, warnings) = merge_prediction_sets(&sets, &cfg)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let text = write_predictions(&merged);
    write_file(&a.out, text.as_bytes())?;
    Ok(json!({
        "out": a.out,
        "order": cfg.preference_order,
        "images": merged.images.len(),
        "detections": merged.detection_count(),
        "warnings": warnings.len(),
        "sha256": sha256_hex(text.as_bytes()),
    }))
}

pub fn eval_config(a: &EvaluateArgs) -> Result<EvalConfig, Failure> {
    let cfg = EvalConfig {
        iou_threshold: a.iou,
        score_threshold: a.score_threshold,
        weighting: match a.weighting {
            WeightingArg::Instances => Weighting::Instances,
            WeightingArg::Uniform => Weighting::Uniform,
        },
        interpolation: match a.interp {
            InterpArg::All => Interpolation::AllPoint,
            InterpArg::Eleven => Interpolation::ElevenPoint,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Outcome {
    let cfg = eval_config(a)?;
    let set = load_preds(&a.preds)?;
    require(&a.truth)?;
    let truths = load_annotations(&a.truth)?;
    if truths.is_empty() {
        return Err(Failure::validation(format!("no annotations under {}", a.truth.display())));
    }
    let mut report = evaluate_dataset(&set.images, &truths, &cfg)?;
    report.imagery = a.imagery.clone();
    let text = report.to_json();
    write_file(&a.out, text.as_bytes())?;
    if let Some(p) = &a.pr_csv {
        write_file(p, report.pr_csv().as_bytes())?;
    }
    Ok(json!({
        "out": a.out,
        "map": report.map,
        "per_class_ap": report.per_class.iter().map(|(c, r)| (c.to_string(), json!(r.ap))).collect::<serde_json::Map<_, _>>(),
        "sha256": sha256_hex(text.as_bytes()),
    }))
}

fn compare_cmd(a: &CompareArgs) -> Outcome {
    let base = EvalReport::from_json(&read_text(&a.base)?)?;
    let other = EvalReport::from_json(&read_text(&a.other)?)?;
    let cmp = compare_runs(&base, &other)?;
    let text = serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n";
    write_file(&a.out, text.as_bytes())?;
    Ok(json!({
        "out": a.out,
        "map_delta": cmp.map,
        "fp_delta": cmp.fp_total,
        "fp_reduced": cmp.per_class.iter().filter(|(_, d)| d.fp_reduced).map(|(c, _)| c.to_string()).collect::<Vec<_>>(),
    }))
}

/// Keep detections scoring at least `t`.
pub fn above(images: &[ImagePredictions], t: f64) -> Vec<ImagePredictions> {
    images
        .iter()
        .map(|i| ImagePredictions {
            image_id: i.image_id.clone(),
            detections: i.detections.iter().filter(|d| d.score >= t).cloned().collect(),
        })
        .collect()
}

fn export_csv_cmd(a: &ExportCsvArgs) -> Outcome {
    if !(0.0..=1.0).contains(&a.score_threshold) {
        return Err(Failure::validation(format!("--score-threshold {} outside [0, 1]", a.score_threshold)));
    }
    let set = load_preds(&a.preds)?;
    let kept = above(&set.images, a.score_threshold);
    let text = export_csv(&kept, a.pixel_size_nm)?;
    write_file(&a.out, text.as_bytes())?;
    Ok(json!({
        "out": a.out,
        "rows": text.lines().count() - 1,
        "sha256": sha256_hex(text.as_bytes()),
    }))
}

fn segregate_cmd(a: &SegregateArgs) -> Outcome {
    let set = load_preds(&a.preds)?;
    require(&a.images)?;
    let plan = segregate(&set.images, a.score_threshold, Some(&images_dir(&a.images)), Some(&a.out))?;
    for (id, err) in &plan.errors {
        log::warn!("{id}: {err}");
    }
    let plan_text = serde_json::to_string_pretty(&plan).expect("plan serializes") + "\n";
    write_file(&a.out.join("plan.json"), plan_text.as_bytes())?;
    Ok(json!({
        "out": a.out,
        "folders": plan.folders.iter().map(|(k, v)| (k.clone(), json!(v.len()))).collect::<serde_json::Map<_, _>>(),
        "errors": plan.errors.len(),
    }))
}

fn psd_cmd(a: &PsdArgs) -> Outcome {
    require(&a.input)?;
    let img = lsinspect::SemImage::load(&a.input, lsinspect::raster::DEFAULT_PIXEL_SIZE_NM)?;
    let profile = psd_profile(&img);
    let text = profile.to_csv();
    write_file(&a.out, text.as_bytes())?;
    Ok(json!({"out": a.out, "bins": profile.freqs.len()}))
}

fn serve_cmd(a: &ServeArgs, workers: usize) -> Outcome {
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::validation(format!("bad listen address: {e}")))?;
    let config = lsinspect_service::ServiceConfig {
        data_root: a.data_root.clone(),
        workers: if workers == 0 { 2 } else { workers },
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: 3,
        message: e.to_string(),
    })?;
    log::info!("listening on http://{addr} (data root {})", a.data_root.display());
    rt.block_on(lsinspect_service::serve(config, addr))
        .map_err(|e| Failure::io(format!("server: {e}")))?;
    Ok(json!({"addr": addr.to_string()}))
}

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate(_) => "generate",
        Command::Denoise(_) => "denoise",
        Command::Detect(_) => "detect",
        Command::Ensemble(_) => "ensemble",
        Command::Evaluate(_) => "evaluate",
        Command::Compare(_) => "compare",
        Command::ExportCsv(_) => "export-csv",
        Command::Segregate(_) => "segregate",
        Command::Psd(_) => "psd",
        Command::Serve(_) => "serve",
    }
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Ensemble(a) => ensemble_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::ExportCsv(a) => export_csv_cmd(a),
        Command::Segregate(a) => segregate_cmd(a),
        Command::Psd(a) => psd_cmd(a),
        Command::Serve(a) => serve_cmd(a, cli.workers),
    }
}
