//! The `cvl` command line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::dataset::{load_dataset, Dataset};
use crate::data::manifest::Split;
use crate::data::synth::{generate_synthetic, SynthSpec};
use crate::error::{CvlError, Result};
use crate::gradsuite::{run_gradient_suite, SUITE_SEEDS};
use crate::joint::train::JointModel;
use crate::pipeline::{
    compute_views, encode_descriptions, evaluate_models, run_ablation, run_pipeline, run_zero_shot,
    train_language_on, train_vision_on, FeatureSource, PipelineConfig,
};
use crate::tensor::Tensor;
use crate::vision::encoder::VisionParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const REPORT_FILE: &str = "report.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";

/// Checkpoint entry recording which image view the language stream saw.
const SOURCE_ENTRY: &str = "meta.crop_features";

#[derive(Parser, Debug)]
#[command(name = "cvl", about = "Two-stream fine-grained classifier: vision, language and fusion", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic bird dataset with descriptions and boxes.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value_t = 0.5)]
        clutter: f64,
    },
    /// Train the image classifier on the train split.
    TrainVision {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the joint embedding on top of a vision checkpoint.
    TrainJoint {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        vision: PathBuf,
        /// Feed the language stream whole images instead of saliency crops.
        #[arg(long)]
        full_image: bool,
    },
    /// Write the saliency box of every image as CSV.
    Localize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vision: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score both streams and their fusion on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vision: PathBuf,
        #[arg(long)]
        joint: PathBuf,
        /// Output directory for the report and confusion matrix.
        #[arg(long)]
        out: PathBuf,
        /// Fusion weight; chosen on the validation split when omitted.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Train and evaluate everything in one go.
    Run {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Language-stream accuracy with and without fine-tuning and crops.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Hold out the last classes and classify them from descriptions alone.
    ZeroShot {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 5)]
        held_out: usize,
    },
    /// Finite-difference check of every layer and both losses.
    Gradcheck {
        /// Number of seeds per check.
        #[arg(long, default_value_t = SUITE_SEEDS.len() as u64)]
        seeds: u64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Epochs of the stage being trained (the joint stage for
    /// multi-stage commands).
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default().with_seed(self.seed);
        if let Some(e) = self.epochs {
            cfg.joint.epochs = e;
        }
        cfg
    }

    fn dataset(&self) -> Result<Dataset> {
        load_dataset(&self.data)
    }
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CvlError::Config(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CvlError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CvlError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CvlError::io(dir, e))
}

fn load_vision(path: &Path) -> Result<VisionParams> {
    let c = load_checkpoint(path)?;
    VisionParams::from_tensors(|n| c.get(n))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData {
            out,
            seed,
            classes,
            per_class,
            clutter,
        } => {
            let spec = SynthSpec {
                num_classes: classes,
                images_per_class: per_class,
                clutter,
                seed,
            };
            let records = generate_synthetic(&spec, &out).map_err(|e| match e {
                CvlError::Spec(m) => CvlError::Config(m),
                e => e,
            })?;
            println!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::TrainVision { train } => {
            let ds = train.dataset()?;
            let mut cfg = train.config();
            if let Some(e) = train.epochs {
                cfg.vision.epochs = e;
                cfg.vision.crop_epochs = e / 2;
            }
            let (vision, log) = train_vision_on(&ds, &ds.split(Split::Train), ds.num_classes, &cfg.vision)?;
            save_checkpoint(&train.out, &Checkpoint::from_params(&vision))?;
            let mut s = String::from("epoch,loss,accuracy\n");
            for l in &log {
                let _ = writeln!(s, "{},{:.6},{:.6}", l.epoch, l.loss, l.accuracy);
            }
            print(&s);
        }
        Command::TrainJoint {
            train,
            vision,
            full_image,
        } => {
            let ds = train.dataset()?;
            let mut cfg = train.config();
            if full_image {
                cfg.source = FeatureSource::Full;
            }
            let vision = load_vision(&vision)?;
            let views = compute_views(&ds, &vision, &cfg.localize)?;
            let texts = encode_descriptions(&ds)?;
            let all: Vec<usize> = (0..ds.records.len()).collect();
            let (joint, log) = train_language_on(
                &vision,
                views.pooled(cfg.source),
                &texts,
                &ds.labels(&all),
                &ds.split(Split::Train),
                ds.num_classes,
                &cfg.joint,
            )?;
            let mut ckpt = joint.to_checkpoint();
            let crop = if cfg.source == FeatureSource::Crop { 1.0 } else { 0.0 };
            ckpt.push(SOURCE_ENTRY, Tensor::from_vec(vec![crop]));
            save_checkpoint(&train.out, &ckpt)?;
            let mut s = String::from("epoch,loss,fv_acc,ft_acc\n");
            for l in &log {
                s.push_str(&l.to_line());
                s.push('\n');
            }
            print(&s);
        }
        Command::Localize { data, vision, out } => {
            let ds = load_dataset(&data)?;
            let vision = load_vision(&vision)?;
            let views = compute_views(&ds, &vision, &PipelineConfig::default().localize)?;
            let mut s = String::from("image_id,x0,y0,x1,y1,fallback\n");
            for (r, p) in ds.records.iter().zip(&views.predictions) {
                let l = &p.localization;
                let _ = writeln!(s, "{},{},{}", r.image_id, l.bbox, u8::from(l.fallback));
            }
            write_file(&out, &s)?;
        }
        Command::Eval {
            data,
            vision,
            joint,
            out,
            beta,
        } => {
            if let Some(b) = beta {
                crate::fusion::fuse::FusionConfig::new(b)?;
            }
            let ds = load_dataset(&data)?;
            let vision = load_vision(&vision)?;
            let ckpt = load_checkpoint(&joint)?;
            let joint = JointModel::from_checkpoint(&ckpt)?;
            let source = match ckpt.get(SOURCE_ENTRY) {
                Ok(t) if t.data().first() == Some(&0.0) => FeatureSource::Full,
                _ => FeatureSource::Crop,
            };
            let views = compute_views(&ds, &vision, &PipelineConfig::default().localize)?;
            let texts = encode_descriptions(&ds)?;
            let ev = evaluate_models(&ds, &views, &joint, &texts, source, beta)?;
            create_dir(&out)?;
            ev.report.write(&out.join(REPORT_FILE), &out.join(CONFUSION_FILE))?;
            print(&ev.report.to_text());
        }
        Command::Run { train, beta } => {
            let ds = train.dataset()?;
            let mut cfg = train.config();
            cfg.beta = beta;
            let run = run_pipeline(&ds, &cfg)?;
            create_dir(&train.out)?;
            run.report
                .write(&train.out.join(REPORT_FILE), &train.out.join(CONFUSION_FILE))?;
            let mut log = String::from("epoch,loss,fv_acc,ft_acc\n");
            for l in &run.joint_log {
                log.push_str(&l.to_line());
                log.push('\n');
            }
            write_file(&train.out.join("joint_log.csv"), &log)?;
            save_checkpoint(&train.out.join("vision.ckpt"), &Checkpoint::from_params(&run.vision))?;
            save_checkpoint(&train.out.join("joint.ckpt"), &run.joint.to_checkpoint())?;
            print(&run.report.to_text());
        }
        Command::Ablate { train } => {
            let ds = train.dataset()?;
            let cfg = train.config();
            let run = run_pipeline(&ds, &cfg)?;
            let table = run_ablation(&ds, &cfg, &run)?;
            write_file(&train.out, &table.to_text())?;
            print(&table.to_text());
        }
        Command::ZeroShot { train, held_out } => {
            let ds = train.dataset()?;
            let z = run_zero_shot(&ds, &train.config(), held_out)?;
            let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
            let text = format!(
                "seen={}\nunseen={}\nzero_shot_top1={:.6}\n",
                list(&z.seen),
                list(&z.unseen),
                z.top1
            );
            write_file(&train.out, &text)?;
            print(&text);
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                return Err(CvlError::Config("need at least one seed".into()));
            }
            let seeds: Vec<u64> = (1..=seeds).collect();
            let cases = run_gradient_suite(&seeds)?;
            let mut failed = 0;
            for c in &cases {
                println!("{}", c.to_line());
                failed += usize::from(!c.passes());
            }
            println!("{} checks, {failed} failed", cases.len());
            return Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE });
        }
    }
    Ok(EXIT_OK)
}
