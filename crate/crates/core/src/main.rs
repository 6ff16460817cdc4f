use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use priorseg::cam::{self, CamStack, CamWeights, CombineParams, ProbMaps};
use priorseg::crf::{self, CrfConfig, KernelMode, PairwiseKernel, PairwiseParams, UnaryMode};
use priorseg::error::{Error, Result};
use priorseg::eval;
use priorseg::fusion::{fuse_foreground, ForegroundMap};
use priorseg::io::{self, pnm};
use priorseg::labels::LabelMap;
use priorseg::loss::{self, BinaryMask, ClassMasks, LossVariant, ScoreField};
use priorseg::tensor::Grid3;
use priorseg::train::{self, MaskConfig, SynthConfig, TrainConfig, VariantKind};

#[derive(Parser)]
#[command(name = "priorseg", version, about = "Tag-supervised segmentation with fused priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse two activation stacks into a foreground probability map.
    Fuse(FuseArgs),
    /// Class activation maps from a feature stack and classifier weights.
    Cam(CamArgs),
    /// Combine the foreground map with CAMs into per-label probabilities.
    Combine(CombineArgs),
    /// Smooth probabilities with the dense CRF and write a labeling.
    Crf(CrfArgs),
    /// Evaluate a weak loss (and optionally its gradient) on a score tensor.
    Loss(LossArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train the linear head on a dataset.
    Train(TrainArgs),
    /// Label every scene of a dataset with a trained head.
    Predict(PredictArgs),
    /// Score predicted labelings against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    conv4: PathBuf,
    #[arg(long)]
    conv5: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output height; defaults to the conv4 height.
    #[arg(long)]
    h: Option<usize>,
    /// Output width; defaults to the conv4 width.
    #[arg(long)]
    w: Option<usize>,
}

#[derive(Args)]
struct CamArgs {
    #[arg(long)]
    features: PathBuf,
    /// Classes x units weight matrix.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = cam::DEFAULT_RHO)]
    rho: f64,
    /// Skip min-max normalization.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    /// Also write the binarized maps (values 0/1) to this tensor file.
    #[arg(long)]
    masks_out: Option<PathBuf>,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long)]
    pf: PathBuf,
    #[arg(long)]
    cams: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = cam::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = cam::DEFAULT_RHO)]
    rho: f64,
    /// Keep only the tagged classes; output channels are background followed
    /// by the present classes in increasing order.
    #[arg(long)]
    tags: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CrfParamArgs {
    #[arg(long, default_value_t = crf::DEFAULT_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = 5.0)]
    w_app: f64,
    #[arg(long, default_value_t = 30.0)]
    theta_a: f64,
    #[arg(long, default_value_t = 13.0)]
    theta_b: f64,
    #[arg(long, default_value_t = 3.0)]
    w_smooth: f64,
    #[arg(long, default_value_t = 3.0)]
    theta_g: f64,
    #[arg(long, default_value_t = crf::DEFAULT_THETA_MAX)]
    theta_max: f64,
    /// Windowed kernel instead of all pixel pairs.
    #[arg(long)]
    approx: bool,
    /// Use -log p as the unary instead of -log softmax(p).
    #[arg(long)]
    neg_log_unary: bool,
}

impl CrfParamArgs {
    fn config(&self) -> CrfConfig {
        CrfConfig {
            pairwise: PairwiseParams {
                w_app: self.w_app,
                theta_alpha: self.theta_a,
                theta_beta: self.theta_b,
                w_smooth: self.w_smooth,
                theta_gamma: self.theta_g,
            },
            mode: if self.approx {
                KernelMode::Approximate
            } else {
                KernelMode::Exact
            },
            unary: if self.neg_log_unary {
                UnaryMode::NegLog
            } else {
                UnaryMode::SoftmaxOfProbs
            },
            theta_max: self.theta_max,
            iters: self.iters,
        }
    }
}

#[derive(Args)]
struct CrfArgs {
    #[arg(long)]
    probs: PathBuf,
    /// Color image (binary PPM).
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    /// Region partition (16-bit PGM) enabling higher-order terms.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Map channel indices back to the tagged classes (see `combine --tags`).
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Also write the final marginals.
    #[arg(long)]
    out_probs: Option<PathBuf>,
    #[command(flatten)]
    params: CrfParamArgs,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    tags: PathBuf,
    #[arg(long, value_parser = ["weak", "fgbg", "multiclass"])]
    variant: String,
    /// Foreground mask (PGM, nonzero = foreground) for the fgbg variant.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Directory of per-label masks `<label>.pgm` for the multiclass variant.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    grad_out: Option<PathBuf>,
    #[arg(long, default_value_t = loss::DEFAULT_LSE_R)]
    lse_r: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 48)]
    h: usize,
    #[arg(long, default_value_t = 48)]
    w: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = ["weak", "fgbg", "multiclass"])]
    variant: String,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    /// Output head parameters (labels x (features + 1) tensor).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    decay: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = loss::DEFAULT_LSE_R)]
    lse_r: f64,
    #[arg(long, default_value_t = cam::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = cam::DEFAULT_RHO)]
    rho: f64,
    /// Add region terms from each scene's partition when building masks.
    #[arg(long)]
    higher_order: bool,
    /// Write per-epoch mean losses as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    crf: CrfParamArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving one `<scene>.pgm` labeling per scene.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted labelings (`*.pgm`).
    #[arg(long)]
    pred: PathBuf,
    /// Directory with `<name>.pgm` or `<name>/gt.pgm` per prediction.
    #[arg(long)]
    gt: PathBuf,
    /// Label count including background; inferred from the data if omitted.
    #[arg(long)]
    labels: Option<usize>,
    /// Also report accuracy within this many pixels of gt boundaries.
    #[arg(long)]
    trimap_band: Option<usize>,
    #[arg(long)]
    confusion: bool,
    /// Emit comma-separated values instead of aligned tables.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fuse(a) => fuse(a),
        Command::Cam(a) => cam_cmd(a),
        Command::Combine(a) => combine(a),
        Command::Crf(a) => crf_cmd(a),
        Command::Loss(a) => loss_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn fuse(a: FuseArgs) -> Result<()> {
    let conv4 = io::read_grid3(&a.conv4)?;
    let conv5 = io::read_grid3(&a.conv5)?;
    let h = a.h.unwrap_or(conv4.height());
    let w = a.w.unwrap_or(conv4.width());
    let pf = fuse_foreground(&conv4, &conv5, h, w)?;
    io::write_grid2(&a.out, pf.grid())
}

fn cam_cmd(a: CamArgs) -> Result<()> {
    let features = io::read_grid3(&a.features)?;
    let weights = CamWeights::from_grid(&io::read_grid2(&a.weights)?);
    let mut cams = if a.raw {
        cam::compute_cam_raw(&features, &weights)?
    } else {
        cam::compute_cam(&features, &weights)?
    };
    if a.h.is_some() || a.w.is_some() {
        let h = a.h.unwrap_or(features.height());
        let w = a.w.unwrap_or(features.width());
        cams = cams.resized(h, w)?;
    }
    io::write_grid3(&a.out, cams.maps())?;
    if let Some(path) = a.masks_out {
        let masks = (1..=cams.class_count())
            .map(|c| cam::binarize_cam(&cams.class_map(c), a.rho))
            .collect::<Result<Vec<_>>>()?;
        io::write_grid3(&path, &Grid3::from_channels(&masks)?)?;
    }
    Ok(())
}

fn combine(a: CombineArgs) -> Result<()> {
    let pf = ForegroundMap::new(io::read_grid2(&a.pf)?)?;
    let (h, w) = pf.dims();
    let mut cams = CamStack::new(io::read_grid3(&a.cams)?);
    if cams.maps().spatial() != (h, w) {
        cams = cams.resized(h, w)?;
    }
    if let Some(path) = &a.tags {
        let tags = io::read_tags(path, cams.class_count() + 1)?;
        cams = cams.select(&tags.foreground())?;
    }
    let params = CombineParams {
        alpha: a.alpha,
        rho: a.rho,
    };
    if cams.class_count() == 0 {
        return Err(Error::InvalidArgument("no foreground class to combine".into()));
    }
    io::write_grid3(&a.out, cam::combine_multiclass(&pf, &cams, &params)?.grid())
}

fn crf_cmd(a: CrfArgs) -> Result<()> {
    let probs = ProbMaps::new(io::read_grid3(&a.probs)?)?;
    let image = pnm::read_color(&a.image)?;
    let regions = a.regions.as_deref().map(pnm::read_regions).transpose()?;
    let cfg = a.params.config();
    let kernel = PairwiseKernel::new(&image, &cfg.pairwise, cfg.mode)?;
    let q = crf::smooth_probs(&probs, &kernel, regions.as_ref(), &cfg)?;
    let mut labels = crf::map_labeling(&q);
    if let Some(path) = &a.tags {
        labels = remap_slots(&labels, &read_any_tags(path, probs.labels())?)?;
    }
    pnm::write_label_map(&a.out_labels, &labels)?;
    if let Some(path) = a.out_probs {
        io::write_grid3(&path, q.grid())?;
    }
    Ok(())
}

/// Reads a tag file whose largest index may exceed the channel count.
fn read_any_tags(path: &Path, slots: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let present = io::tags::parse_tags(&text, path)?;
    if present.len() != slots {
        return Err(Error::Dimension(format!(
            "{} tagged labels but {slots} probability channels",
            present.len()
        )));
    }
    Ok(present)
}

fn remap_slots(labels: &LabelMap, present: &[usize]) -> Result<LabelMap> {
    let mapped = labels
        .labels()
        .iter()
        .map(|&s| present[s as usize] as u16)
        .collect();
    LabelMap::new(labels.height(), labels.width(), mapped)
}

fn read_binary_mask(path: &Path, h: usize, w: usize) -> Result<BinaryMask> {
    let (mh, mw, bits) = pnm::read_mask(path)?;
    if (mh, mw) != (h, w) {
        return Err(Error::Dimension(format!(
            "{}: mask {mh}x{mw} vs scores {h}x{w}",
            path.display()
        )));
    }
    BinaryMask::new(h, w, bits)
}

fn loss_cmd(a: LossArgs) -> Result<()> {
    let scores = ScoreField::new(io::read_grid3(&a.scores)?);
    let tags = io::read_tags(&a.tags, scores.labels())?;
    let (_, h, w) = scores.grid().dims();
    let variant = match a.variant.as_str() {
        "weak" => LossVariant::Weak,
        "fgbg" => {
            let path = a
                .mask
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("fgbg needs --mask".into()))?;
            LossVariant::FgBg(read_binary_mask(path, h, w)?)
        }
        _ => {
            let dir = a
                .masks
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("multiclass needs --masks".into()))?;
            let mut masks = ClassMasks::new();
            for k in tags.present() {
                let path = dir.join(format!("{k}.pgm"));
                if k == 0 && !path.exists() {
                    continue;
                }
                masks.insert(k, read_binary_mask(&path, h, w)?);
            }
            LossVariant::MultiClass(masks)
        }
    };
    let value = if let Some(path) = &a.grad_out {
        let (v, g) = loss::loss_and_grad_with(&scores, &tags, &variant, a.lse_r)?;
        io::write_grid3(path, &g)?;
        v
    } else {
        loss::loss_value_with(&scores, &tags, &variant, a.lse_r)?
    };
    println!("{value:.12}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        h: a.h,
        w: a.w,
        max_objects: a.max_objects,
        classes: a.classes,
    };
    let data = train::generate(a.seed, a.count, &cfg)?;
    train::write_dataset(&a.out, &data)?;
    info!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = train::read_dataset(&a.data)?;
    let kind = VariantKind::parse(&a.variant)?;
    let masks = MaskConfig {
        crf: a.crf.config(),
        combine: CombineParams {
            alpha: a.alpha,
            rho: a.rho,
        },
        higher_order: a.higher_order,
    };
    let samples = train::prepare_samples(&data.scenes, &data.cam_weights, kind, &masks)?;
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        decay: a.decay,
        epochs: a.epochs,
        seed: a.seed,
        lr_decay: a.lr_decay,
        lse_r: a.lse_r,
    };
    let report = train::train_head(&samples, &cfg)?;
    io::write_grid2(&a.out, &report.head.to_grid())?;
    if let Some(path) = a.history {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in report.loss_history.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let head = train::HeadParams::from_grid(&io::read_grid2(&a.head)?)?;
    let data = train::read_dataset(&a.data)?;
    if head.labels() != data.classes() + 1 {
        return Err(Error::Dimension(format!(
            "head has {} labels, dataset {}",
            head.labels(),
            data.classes() + 1
        )));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for (name, scene) in data.names.iter().zip(&data.scenes) {
        let labels = train::predict_labels(&head, &train::scene_features(scene)?)?;
        pnm::write_label_map(&a.out.join(format!("{name}.pgm")), &labels)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(&a.pred)
        .map_err(|e| Error::Io {
            path: a.pred.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format {
            path: a.pred.clone(),
            msg: "no .pgm predictions".into(),
        });
    }
    let mut preds = Vec::with_capacity(names.len());
    let mut gts = Vec::with_capacity(names.len());
    for p in &names {
        let stem = p.file_stem().unwrap_or_default();
        let flat = a.gt.join(stem).with_extension("pgm");
        let nested = a.gt.join(stem).join("gt.pgm");
        let gt_path = if flat.is_file() { flat } else { nested };
        preds.push(pnm::read_label_map(p)?);
        gts.push(pnm::read_label_map(&gt_path)?);
    }
    let labels = match a.labels {
        Some(l) => l,
        None => {
            let top = preds.iter().chain(&gts).map(|m| m.max_label()).max().unwrap_or(0);
            top as usize + 1
        }
    };
    let report = eval::iou(&preds, &gts, labels)?;
    print!("{}", if a.csv { report.to_csv() } else { report.to_table() });
    if let Some(band) = a.trimap_band {
        let acc = eval::trimap_accuracy_many(&preds, &gts, band)?;
        match (acc, a.csv) {
            (Some(v), true) => println!("trimap_{band},{v}"),
            (Some(v), false) => println!("trimap accuracy ({band} px): {:.2}", v * 100.0),
            (None, true) => println!("trimap_{band},"),
            (None, false) => println!("trimap accuracy ({band} px): -"),
        }
    }
    if a.confusion {
        let m = eval::confusion(&preds, &gts, labels)?;
        print!("{}", if a.csv { m.to_csv() } else { m.to_table() });
    }
    Ok(())
}
