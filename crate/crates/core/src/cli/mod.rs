//! Command-line front end: `generate`, `train`, `eval`, `predict`.

mod overlay;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_merged, DetectionsByImage, EvalReport, GroundTruthByImage};
use crate::inference::{detect, DetectConfig};
use crate::io::{
    format_detections, parse_detections, write_dataset, Checkpoint, Dataset, RunConfig,
    MANIFEST_FILE,
};
use crate::net::{Network, PoseSharing};
use crate::raster::Raster;
use crate::trainer::Trainer;

pub use overlay::render_overlay;

#[derive(Debug, Parser)]
#[command(name = "ssdpose", version, about = "Joint object detection and pose-bin estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Compute AP/AVP for checkpoints or a detections file.
    Eval(EvalArgs),
    /// Run a checkpoint on images.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Final checkpoint path; periodic checkpoints go next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many steps are complete (the schedule still spans
    /// `steps`).
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Append per-step metric lines to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub neg_pos_ratio: Option<f64>,
    #[arg(long)]
    pub n_pose_bins: Option<usize>,
    #[arg(long, value_enum)]
    pub pose_sharing: Option<PoseSharing>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub score_thresh: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

impl DetectArgs {
    fn apply(&self, mut cfg: DetectConfig) -> DetectConfig {
        if let Some(v) = self.score_thresh {
            cfg.score_thresh = v;
        }
        if let Some(v) = self.nms_iou {
            cfg.nms_iou = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory or manifest with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// One or more checkpoints; several produce a comparison table.
    #[arg(long = "checkpoint", required_unless_present = "detections")]
    pub checkpoints: Vec<PathBuf>,
    /// Evaluate a detections file instead of running a model.
    #[arg(long, conflicts_with = "checkpoints")]
    pub detections: Option<PathBuf>,
    /// Bin count of the detections file when it has no header.
    #[arg(long)]
    pub pose_bins: Option<usize>,
    /// Granularities for AVP (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub n_bins: Option<Vec<usize>>,
    /// Score a fine-bin model at this coarser granularity by merging bins.
    #[arg(long)]
    pub merge_from_fine: Option<usize>,
    /// Directory for the report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files, directories of PNGs, or dataset directories (reported
    /// under their manifest names).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Detections file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(c) = a.count {
        cfg.data.count = c;
    }
    if let Some(s) = a.seed {
        cfg.data.scene.seed = s;
    }
    let ds = write_dataset(&a.out, &cfg.data.scene, cfg.data.count, a.force)?;
    let n_obj: usize = ds.entries.iter().map(|e| e.objects.len()).sum();
    info!(
        "wrote {} images with {} objects to {}",
        ds.entries.len(),
        n_obj,
        a.out.display()
    );
    Ok(())
}

fn apply_train_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    macro_rules! set {
        ($field:expr, $arg:expr) => {
            if let Some(v) = $arg {
                $field = v;
            }
        };
    }
    set!(cfg.train.steps, a.steps);
    set!(cfg.train.batch_size, a.batch_size);
    set!(cfg.train.seed, a.seed);
    set!(cfg.train.checkpoint_every, a.checkpoint_every);
    set!(cfg.optim.lr, a.lr);
    set!(cfg.optim.momentum, a.momentum);
    set!(cfg.optim.weight_decay, a.weight_decay);
    set!(cfg.loss.alpha1, a.alpha1);
    set!(cfg.loss.alpha2, a.alpha2);
    set!(cfg.loss.neg_pos_ratio, a.neg_pos_ratio);
    set!(cfg.model.n_pose_bins, a.n_pose_bins);
    set!(cfg.model.pose_sharing, a.pose_sharing);
    set!(cfg.model.init_seed, a.init_seed);
}

fn periodic_path(out: &Path, step: u64) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.step{step:06}.ckpt"))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut cfg = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => ck.config.clone(),
            };
            apply_train_overrides(&mut cfg, a);
            if cfg.model.n_pose_bins != ck.config.model.n_pose_bins
                || cfg.model.pose_sharing != ck.config.model.pose_sharing
            {
                return Err(Error::Config(format!(
                    "cannot change the head when resuming: checkpoint has {} bins ({}), requested {} ({})",
                    ck.config.model.n_pose_bins,
                    ck.config.model.pose_sharing,
                    cfg.model.n_pose_bins,
                    cfg.model.pose_sharing
                )));
            }
            info!("resuming from {} at step {}", path.display(), ck.step);
            Trainer::resume(ck, Some(cfg))?
        }
        None => {
            let mut cfg = load_config(a.config.as_deref())?;
            apply_train_overrides(&mut cfg, a);
            Trainer::new(cfg)?
        }
    };
    let cfg = trainer.config.clone();

    let ds = Dataset::open(&a.data)?;
    ds.check_classes(cfg.model.n_classes)?;
    let size = cfg.model.input_size;
    let data: Vec<_> = ds
        .load_images(cfg.model.input_channels)?
        .into_iter()
        .map(|mut s| {
            s.image = fit_input(s.image, size);
            s
        })
        .collect();
    if data.is_empty() {
        return Err(Error::Data(format!("{}: no images", a.data.display())));
    }
    info!(
        "training on {} images, steps {}..{} of {}",
        data.len(),
        trainer.step,
        a.stop_after.unwrap_or(cfg.train.steps).min(cfg.train.steps),
        cfg.train.steps
    );

    let mut log_file = match &a.log {
        Some(p) => Some(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let until = a.stop_after.unwrap_or(cfg.train.steps).min(cfg.train.steps);
    let every = cfg.train.checkpoint_every;
    let result = trainer.run(&data, until, |t, rec| {
        let line = rec.to_string();
        match (&mut log_file, &a.log) {
            (Some(f), Some(p)) => writeln!(f, "{line}").map_err(|e| Error::io(p, e))?,
            _ => println!("{line}"),
        }
        if every > 0 && rec.step % every == 0 {
            t.checkpoint().save(&periodic_path(&a.out, rec.step))?;
        }
        Ok(())
    });
    if let Err(e) = result {
        if matches!(e, Error::NonFinite(_)) {
            warn!("training aborted; the last periodic checkpoint (if any) is kept");
        }
        return Err(e);
    }
    trainer.checkpoint().save(&a.out)?;
    info!("saved {} at step {}", a.out.display(), trainer.step);
    Ok(())
}

/// Resize to the network's square input if needed.
pub fn fit_input(image: Raster, size: usize) -> Raster {
    if image.height == size && image.width == size {
        image
    } else {
        let whole = crate::anchors::BoxGeom::from_corners(0.0, 0.0, 1.0, 1.0);
        image.crop_resize(&whole, size, size)
    }
}

/// Run `net` over every image of `ds`.
pub fn detect_dataset(
    net: &Network<f32>,
    ds: &Dataset,
    cfg: &DetectConfig,
) -> Result<(DetectionsByImage, GroundTruthByImage)> {
    let mut dets = DetectionsByImage::new();
    let mut gts = GroundTruthByImage::new();
    for e in &ds.entries {
        let image = Raster::load_png(&ds.image_path(e), net.spec.input_channels)?;
        let preds = net.predict(&fit_input(image, net.spec.input_size))?;
        dets.insert(e.filename.clone(), detect(&preds, net.defaults(), &net.head, cfg)?);
        gts.insert(e.filename.clone(), e.objects.clone());
    }
    Ok((dets, gts))
}

fn ground_truth(ds: &Dataset) -> GroundTruthByImage {
    ds.entries
        .iter()
        .map(|e| (e.filename.clone(), e.objects.clone()))
        .collect()
}

/// Check a requested merge target against the model's bin count.
pub fn check_merge(model_bins: usize, coarse: usize) -> Result<()> {
    if coarse == 0 || coarse > model_bins {
        return Err(Error::Config(format!(
            "--merge-from-fine {coarse} is incompatible with a model predicting {model_bins} pose bins"
        )));
    }
    Ok(())
}

fn report_for(
    dets: &DetectionsByImage,
    gts: &GroundTruthByImage,
    n_classes: usize,
    model_bins: usize,
    a: &EvalArgs,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    match a.merge_from_fine {
        Some(coarse) => {
            check_merge(model_bins, coarse)?;
            evaluate_merged(dets, gts, n_classes, model_bins, coarse)
        }
        None => {
            let bins = a.n_bins.clone().unwrap_or_else(|| cfg.eval.n_bins.clone());
            evaluate(dets, gts, n_classes, model_bins, &bins)
        }
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let file_cfg = load_config(a.config.as_deref())?;
    let ds = Dataset::open(&a.data)?;

    let mut rows: Vec<(String, PoseSharing, usize, EvalReport)> = Vec::new();
    if let Some(path) = &a.detections {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (dets, header_bins) = parse_detections(&text)?;
        let model_bins = match (header_bins, a.pose_bins) {
            (Some(h), Some(p)) if h != p => {
                return Err(Error::Config(format!(
                    "--pose-bins {p} conflicts with the file header pose_bins {h}"
                )))
            }
            (Some(n), _) | (None, Some(n)) => n,
            (None, None) => {
                return Err(Error::Config(
                    "detections file has no pose_bins header; pass --pose-bins".into(),
                ))
            }
        };
        let n_classes = file_cfg.model.n_classes;
        let gts = ground_truth(&ds);
        ds.check_classes(n_classes)?;
        let report = report_for(&dets, &gts, n_classes, model_bins, a, &file_cfg)?;
        rows.push((
            path.display().to_string(),
            file_cfg.model.pose_sharing,
            model_bins,
            report,
        ));
    } else {
        for path in &a.checkpoints {
            let ck = Checkpoint::load(path)?;
            let head = &ck.net.head;
            if let Some(coarse) = a.merge_from_fine {
                check_merge(head.n_pose_bins, coarse)?;
            }
            ds.check_classes(head.n_classes)?;
            let detect_cfg = a.detect.apply(ck.config.detect);
            let (dets, gts) = detect_dataset(&ck.net, &ds, &detect_cfg)?;
            let report = report_for(&dets, &gts, head.n_classes, head.n_pose_bins, a, &ck.config)?;
            rows.push((
                path.display().to_string(),
                head.pose_sharing,
                head.n_pose_bins,
                report,
            ));
        }
    }

    for (name, _, _, report) in &rows {
        println!("{name}");
        print!("{}", report.to_table(&[]));
    }
    if rows.len() > 1 {
        print!("{}", comparison_table(&rows));
    }
    if let Some(dir) = &a.out {
        if rows.len() == 1 {
            let r = &rows[0].3;
            write_out(dir, "metrics.txt", &r.to_key_value())?;
            write_out(dir, "report.txt", &r.to_table(&[]))?;
            write_out(dir, "pr.csv", &r.pr_csv())?;
        } else {
            for (i, (_, _, _, r)) in rows.iter().enumerate() {
                write_out(dir, &format!("metrics_{i}.txt"), &r.to_key_value())?;
                write_out(dir, &format!("report_{i}.txt"), &r.to_table(&[]))?;
                write_out(dir, &format!("pr_{i}.csv"), &r.pr_csv())?;
            }
            write_out(dir, "comparison.txt", &comparison_table(&rows))?;
        }
    }
    Ok(())
}

/// One row per model: pose sharing mode, bin count, mAP and every mAVP.
pub fn comparison_table(rows: &[(String, PoseSharing, usize, EvalReport)]) -> String {
    let bins: Vec<usize> = rows
        .iter()
        .flat_map(|r| r.3.bins())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut s = String::new();
    let _ = write!(s, "{:<32}{:>10}{:>6}{:>8}", "model", "pose", "bins", "mAP");
    for n in &bins {
        let _ = write!(s, "{:>9}", format!("mAVP{n}"));
    }
    s.push('\n');
    for (name, sharing, model_bins, r) in rows {
        let short: String = if name.len() > 31 {
            format!("...{}", &name[name.len() - 28..])
        } else {
            name.clone()
        };
        let _ = write!(s, "{:<32}{:>10}{:>6}{:>8.4}", short, sharing.to_string(), model_bins, r.map);
        for n in &bins {
            match r.mavp.get(n) {
                Some(v) => {
                    let _ = write!(s, "{:>9.4}", v);
                }
                None => {
                    let _ = write!(s, "{:>9}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Image files and the ids to report them under. A dataset directory or
/// manifest file contributes its entries under their manifest names, so the
/// output can be evaluated against that dataset; other directories
/// contribute their PNG files.
fn collect_inputs(inputs: &[PathBuf]) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    for p in inputs {
        let is_manifest = p.is_file() && p.file_name().is_some_and(|n| n == MANIFEST_FILE);
        if is_manifest || p.join(MANIFEST_FILE).is_file() {
            match Dataset::open(p) {
                Ok(ds) => out.extend(
                    ds.entries
                        .iter()
                        .map(|e| (ds.image_path(e), e.filename.clone())),
                ),
                Err(e) => warn!("skipping {}: {e}", p.display()),
            }
        } else if p.is_dir() {
            match fs::read_dir(p) {
                Ok(rd) => {
                    let mut files: Vec<PathBuf> = rd
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|f| {
                            f.extension()
                                .and_then(|x| x.to_str())
                                .is_some_and(|x| x.eq_ignore_ascii_case("png"))
                        })
                        .collect();
                    files.sort();
                    out.extend(files.into_iter().map(|f| {
                        let id = f.display().to_string();
                        (f, id)
                    }));
                }
                Err(e) => warn!("skipping {}: {e}", p.display()),
            }
        } else {
            out.push((p.clone(), p.display().to_string()));
        }
    }
    out
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let net = &ck.net;
    let cfg = a.detect.apply(ck.config.detect);
    let files = collect_inputs(&a.inputs);
    let mut dets = DetectionsByImage::new();
    let mut failed = 0usize;
    for (f, id) in &files {
        let image = match Raster::load_png(f, net.spec.input_channels) {
            Ok(im) => im,
            Err(e) => {
                warn!("skipping unreadable image: {e}");
                failed += 1;
                continue;
            }
        };
        let input = fit_input(image, net.spec.input_size);
        let d = detect(&net.predict(&input)?, net.defaults(), &net.head, &cfg)?;
        if let Some(dir) = &a.overlay_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let path = dir.join(format!("{name}_overlay.png"));
            render_overlay(&input, &d, net.head.n_pose_bins)
                .save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
        dets.insert(id.clone(), d);
    }
    if files.is_empty() || failed == files.len() {
        return Err(Error::Data("no readable input images".into()));
    }
    let text = format_detections(&dets, net.head.n_pose_bins);
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    info!("{} images, {} unreadable", files.len() - failed, failed);
    Ok(())
}
