use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use voxfuse::detector::{train, Detector, DetectorConfig, FusionMode, KittiLayout};
use voxfuse::eval::{evaluate_dirs, Bucket, EvalConfig, Interpolation, Metric};
use voxfuse::geometry::{camera_label_to_lidar_box, voxelize};
use voxfuse::kitti_io::{read_labels, write_detections, write_image, write_npy, NpyData};
use voxfuse::render::annotate;
use voxfuse::synth::{write_dataset, SynthConfig};

#[derive(Parser)]
#[command(name = "voxfuse", version, about = "Camera/LiDAR fusion 3D detection toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DetectorArgs {
    /// Detector config (TOML). Defaults to the toy config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's fusion mode.
    #[arg(long)]
    mode: Option<FusionMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Print point, voxel and object counts of a scene.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Write a synthetic dataset in the KITTI layout.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        /// Generator settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
    },
    /// Write the fused network inputs of a scene as NPY files.
    Fuse {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Train a detector on a split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Write KITTI-format results for a split.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Print the AP table of results against labels.
    Eval {
        /// Label directory.
        #[arg(long)]
        gt: PathBuf,
        /// Result directory.
        #[arg(long)]
        det: PathBuf,
        /// File listing the scene ids to evaluate. Defaults to every label.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, num_args = 1.., default_values_t = [0.7, 0.8])]
        iou: Vec<f64>,
        #[arg(long, value_enum, num_args = 1.., default_values_t = [BucketArg::Easy, BucketArg::Moderate, BucketArg::Hard])]
        buckets: Vec<BucketArg>,
        #[arg(long, value_enum, default_value_t = InterpArg::Eleven)]
        interpolation: InterpArg,
        #[arg(long, default_value = "Car")]
        class: String,
        /// Directory for `ap.csv` and `ap.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw detections and ground truth onto a scene image.
    Draw {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        /// Result directory.
        #[arg(long)]
        det: Option<PathBuf>,
        /// Output PPM file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Car")]
        class: String,
        /// BEV IoU at which a detection counts as a hit.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BucketArg {
    Easy,
    Moderate,
    Hard,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    #[value(name = "11")]
    Eleven,
    #[value(name = "40")]
    Forty,
}

fn detector_config(args: &DetectorArgs, seed: u64) -> Result<DetectorConfig> {
    let mut cfg = match &args.config {
        Some(path) => DetectorConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => DetectorConfig::toy(args.mode.unwrap_or(FusionMode::LidarOnly)),
    };
    if let Some(mode) = args.mode {
        cfg.fusion_mode = mode;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn inspect(data: &Path, scene: &str, cfg: &DetectorConfig) -> Result<()> {
    let layout = KittiLayout::new(data);
    let cloud = voxfuse::kitti_io::read_point_cloud(layout.velodyne(scene))?;
    let s = layout.load_scene(scene, cfg)?;
    let grid = voxelize(&cloud, &cfg.grid)?;
    println!("points {}", cloud.len());
    println!("voxels {}", grid.len());
    println!("visible_points {}", s.input.points.len());
    println!("visible_voxels {}", s.input.voxels.len());
    println!("objects {}", s.labels.iter().filter(|l| !l.is_dont_care()).count());
    println!("gt {}", s.gt_boxes.len());
    Ok(())
}

fn gen_synth(out: &Path, config: Option<&Path>, train: Option<usize>, val: Option<usize>, seed: u64) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SynthConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = seed;
    cfg.train_scenes = train.unwrap_or(cfg.train_scenes);
    cfg.val_scenes = val.unwrap_or(cfg.val_scenes);
    write_dataset(out, &cfg)?;
    eprintln!("wrote {} train and {} val scenes to {}", cfg.train_scenes, cfg.val_scenes, out.display());
    Ok(())
}

fn fuse(data: &Path, scene: &str, out: &Path, cfg: &DetectorConfig) -> Result<()> {
    let s = KittiLayout::new(data).load_scene(scene, cfg)?;
    let input = &s.input;
    create_dir(out)?;
    let n = input.points.len();
    let image_dim = match &input.point_image {
        Some(v) if n > 0 => v.len() / n,
        _ => 0,
    };
    let mut rows = Vec::with_capacity(n * (7 + image_dim));
    for (i, p) in input.points.iter().enumerate() {
        rows.extend(p.iter().map(|&v| v as f32));
        if let Some(img) = &input.point_image {
            rows.extend(img[i * image_dim..(i + 1) * image_dim].iter().map(|&v| v as f32));
        }
    }
    write_npy(out.join("points.npy"), &[n, 7 + image_dim], &NpyData::F32(rows))?;
    let voxels: Vec<f32> = input
        .voxels
        .iter()
        .zip(&input.counts)
        .flat_map(|(v, &c)| [v[0] as f32, v[1] as f32, v[2] as f32, c as f32])
        .collect();
    write_npy(out.join("voxels.npy"), &[input.voxels.len(), 4], &NpyData::F32(voxels))?;
    if let Some(img) = &input.voxel_image {
        let v = input.voxels.len();
        let dim = if v > 0 { img.len() / v } else { 0 };
        let data = img.iter().map(|&x| x as f32).collect();
        write_npy(out.join("voxel_image.npy"), &[v, dim], &NpyData::F32(data))?;
    }
    println!("points {n} x {}", 7 + image_dim);
    println!("voxels {}", input.voxels.len());
    Ok(())
}

fn run_train(data: &Path, out: &Path, split: &str, epochs: Option<usize>, mut cfg: DetectorConfig) -> Result<()> {
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let scenes = KittiLayout::new(data).load_split(split, &cfg)?;
    let mut det = Detector::<f32>::new(cfg)?;
    create_dir(out)?;
    let report = train(&mut det, &scenes, Some(&out.join("checkpoints")), &mut |s| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  lr {:.2e}  {:.1}s",
            s.epoch + 1,
            s.mean_loss,
            s.learning_rate,
            s.seconds
        );
    })?;
    det.save(out)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l:.8}\n", i + 1));
    }
    write_text(&out.join("losses.csv"), &csv)
}

fn infer(data: &Path, model: &Path, out: &Path, split: &str) -> Result<()> {
    let mut det = Detector::<f32>::load(model).with_context(|| format!("loading model {}", model.display()))?;
    let layout = KittiLayout::new(data);
    create_dir(out)?;
    let ids = layout.read_split(split)?;
    let mut total = 0;
    for id in &ids {
        let s = layout.load_scene(id, &det.config)?;
        let dets = det.infer(&s.input)?;
        total += dets.len();
        write_detections(out.join(format!("{id}.txt")), &dets, &s.calib)?;
    }
    eprintln!("{total} detections in {} scenes", ids.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    gt: &Path,
    det: &Path,
    split: Option<&Path>,
    iou: &[f64],
    buckets: &[BucketArg],
    interpolation: InterpArg,
    class: &str,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(t) = iou.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        bail!("IoU threshold {t} is outside [0, 1]");
    }
    let cfg = EvalConfig {
        class_name: class.to_string(),
        metrics: vec![Metric::Bev, Metric::ThreeD],
        thresholds: iou.to_vec(),
        buckets: buckets
            .iter()
            .map(|b| match b {
                BucketArg::Easy => Bucket::Easy,
                BucketArg::Moderate => Bucket::Moderate,
                BucketArg::Hard => Bucket::Hard,
                BucketArg::All => Bucket::All,
            })
            .collect(),
        interpolation: match interpolation {
            InterpArg::Eleven => Interpolation::Eleven,
            InterpArg::Forty => Interpolation::Forty,
        },
    };
    let ids = match split {
        Some(p) => Some(
            fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    let table = evaluate_dirs(gt, det, ids.as_deref(), &cfg)?;
    let text = table.to_text();
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("ap.csv"), &table.to_csv())?;
        write_text(&dir.join("ap.txt"), &text)?;
    }
    Ok(())
}

fn draw(data: &Path, scene: &str, det: Option<&Path>, out: &Path, class: &str, iou: f64) -> Result<()> {
    let layout = KittiLayout::new(data);
    let calib = voxfuse::kitti_io::read_calibration(layout.calib(scene))?;
    let image = voxfuse::kitti_io::read_image(layout.image(scene))?;
    let label_path = layout.label(scene);
    let labels = if label_path.exists() { read_labels(&label_path)? } else { Vec::new() };
    let gts = labels
        .iter()
        .filter(|l| l.class_name == class)
        .map(|l| camera_label_to_lidar_box(l, &calib))
        .collect::<Result<Vec<_>, _>>()?;
    let mut dets = Vec::new();
    if let Some(dir) = det {
        let path = dir.join(format!("{scene}.txt"));
        if path.exists() {
            for d in read_labels(&path)?.iter().filter(|d| d.class_name == class) {
                dets.push((camera_label_to_lidar_box(d, &calib)?, d.score.unwrap_or(1.0)));
            }
        }
    }
    let drawn = annotate(&image, &calib, &dets, &gts, iou);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_image(out, &drawn)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Inspect { data, scene, detector } => inspect(&data, &scene, &detector_config(&detector, seed)?),
        Command::GenSynth { out, config, train, val } => gen_synth(&out, config.as_deref(), train, val, seed),
        Command::Fuse {
            data,
            scene,
            out,
            detector,
        } => fuse(&data, &scene, &out, &detector_config(&detector, seed)?),
        Command::Train {
            data,
            out,
            split,
            epochs,
            detector,
        } => run_train(&data, &out, &split, epochs, detector_config(&detector, seed)?),
        Command::Infer { data, model, out, split } => infer(&data, &model, &out, &split),
        Command::Eval {
            gt,
            det,
            split,
            iou,
            buckets,
            interpolation,
            class,
            out,
        } => eval(&gt, &det, split.as_deref(), &iou, &buckets, interpolation, &class, out.as_deref()),
        Command::Draw {
            data,
            scene,
            det,
            out,
            class,
            iou,
        } => draw(&data, &scene, det.as_deref(), &out, &class, iou),
    }
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
