//! `mono3d`: evaluation, weak labeling, box fitting and synthetic data for
//! monocular 3D detection, over KITTI-layout directories.

pub mod commands;
pub mod config;
pub mod failure;
pub mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_fit, cmd_gradcheck, cmd_pseudolabel, cmd_synth, CameraSource, FitMode, LabelInputs};
pub use config::{Config, YawSource};
pub use failure::{Failure, Failures};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "mono3d", version, about)]
pub struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// IoU thresholds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub iou: Option<Vec<f64>>,
    /// AP interpolation points.
    #[arg(long, global = true, value_parser = ["11", "40"])]
    pub ap_points: Option<String>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// AP3D / APBEV / AOS tables of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score for prediction lines without one.
        #[arg(long)]
        default_score: Option<f64>,
    },
    /// Weak 3D labels from 2D boxes and class priors.
    Pseudolabel {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refines weak labels by fitting centers to the 2D boxes.
    Fit {
        #[arg(long, value_enum)]
        mode: FitMode,
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Synthetic scenes in KITTI layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Also write noisy scored detections.
        #[arg(long)]
        detections: bool,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// KITTI label directory providing 2D boxes, classes and alpha.
    #[arg(long)]
    pub boxes: PathBuf,
    /// JSON map from class name to `[l, w, h]`.
    #[arg(long)]
    pub priors: PathBuf,
    /// Calibration directory with one file per frame.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Image size for the default intrinsics when there is no calibration.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub image_size: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub yaw_source: Option<YawSource>,
}

impl Cli {
    /// The configuration file (or defaults) with every flag applied.
    pub fn effective_config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(t) = &self.iou {
            cfg.eval.iou_thresholds = t.clone();
        }
        if let Some(p) = &self.ap_points {
            cfg.eval.ap_points = p.parse()?;
        }
        match &self.command {
            Some(Command::Eval { default_score: Some(s), .. }) => cfg.eval.default_score = Some(*s),
            Some(Command::Pseudolabel { inputs, .. }) => inputs.apply(&mut cfg),
            Some(Command::Fit { inputs, max_iters, .. }) => {
                inputs.apply(&mut cfg);
                if let Some(m) = max_iters {
                    cfg.fit.max_iters = *m;
                }
            }
            Some(Command::Synth { frames, detections, .. }) => {
                if let Some(f) = frames {
                    cfg.synth.frames = *f;
                }
                cfg.synth.detections |= detections;
            }
            Some(Command::Gradcheck { points: Some(p), .. }) => cfg.gradcheck.points = *p,
            _ => {}
        }
        cfg.synth.scene.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut Config) {
        if let Some(s) = &self.image_size {
            cfg.pseudolabel.image_size = Some([s[0], s[1]]);
        }
        if let Some(y) = self.yaw_source {
            cfg.pseudolabel.yaw_source = y;
        }
    }

    fn label_inputs(&self, cfg: &Config) -> Result<LabelInputs> {
        Ok(LabelInputs {
            boxes: self.boxes.clone(),
            priors: self.priors.clone(),
            camera: CameraSource::resolve(self.calib.clone(), cfg)?,
        })
    }
}

/// What a successful run prints on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.effective_config()?;
    if cli.dump_config {
        return cfg.to_toml();
    }
    let command = cli.command.as_ref().context("a subcommand is required (see --help)")?;
    let manifest = match command {
        Command::Eval { pred, gt, out, .. } => {
            let outcome = cmd_eval(&cfg, pred, gt, out)?;
            return Ok(outcome.report.table.to_csv());
        }
        Command::Pseudolabel { inputs, out } => cmd_pseudolabel(&cfg, &inputs.label_inputs(&cfg)?, out)?,
        Command::Fit { mode, inputs, out, .. } => cmd_fit(&cfg, *mode, &inputs.label_inputs(&cfg)?, out)?,
        Command::Synth { out, .. } => cmd_synth(&cfg, out)?,
        Command::Gradcheck { report, .. } => {
            let (r, _) = cmd_gradcheck(&cfg, report)?;
            return Ok(format!("gradcheck: {} checks, max relative deviation {:e}\n", r.entries.len(), r.max_deviation));
        }
    };
    Ok(format!("{} {}\n", manifest.command, manifest.output_digest))
}
