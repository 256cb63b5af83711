use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::io::write_atomic;
use pmp_core::synthetic::{
    simulate_epochs, EpochSchedule, SimulationConfig, DEFAULT_NOISE_END, DEFAULT_NOISE_START,
    SIMULATED_VARIANTS,
};

use super::{parse_losses, print_header, ConfigFlag};
use crate::config::{read_text, usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSchedule {
    Halving,
    CrossEntropy,
}

impl FromStr for LossSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "halving" => Ok(Self::Halving),
            "cross-entropy" => Ok(Self::CrossEntropy),
            _ => Err(format!("unknown loss schedule {s:?} (halving, cross-entropy)")),
        }
    }
}

impl fmt::Display for LossSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Halving => "halving",
            Self::CrossEntropy => "cross-entropy",
        })
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub classes: Option<u16>,
    /// Shapes per scene.
    #[arg(long)]
    pub shapes: Option<usize>,
    /// Texture noise amplitude on the 0-255 scale.
    #[arg(long)]
    pub texture: Option<f64>,
    #[arg(long = "noise-start")]
    pub noise_start: Option<f64>,
    #[arg(long = "noise-end")]
    pub noise_end: Option<f64>,
    /// halving or cross-entropy.
    #[arg(long = "loss-schedule", conflicts_with = "loss_file")]
    pub loss_schedule: Option<LossSchedule>,
    /// Explicit losses, one per line: the first primes the state, then one per epoch.
    #[arg(long = "loss-file")]
    pub loss_file: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let d = SimulationConfig::default();
    let epochs = r.value("epochs", args.epochs, 10)?;
    let config = SimulationConfig {
        scenes: r.value("scenes", args.scenes, d.scenes)?,
        seed: r.seed(args.seed)?,
        height: r.value("height", args.height, d.height)?,
        width: r.value("width", args.width, d.width)?,
        num_classes: r.value("classes", args.classes, d.num_classes)?,
        shapes_per_scene: r.value("shapes", args.shapes, d.shapes_per_scene)?,
        texture_amplitude: r.value("texture", args.texture, d.texture_amplitude)?,
        ..d
    };
    let noise_start = r.value("noise-start", args.noise_start, DEFAULT_NOISE_START)?;
    let noise_end = r.value("noise-end", args.noise_end, DEFAULT_NOISE_END)?;
    let loss_file = r.path("loss-file", args.loss_file)?;
    let loss_schedule = if loss_file.is_some() {
        if r.optional("loss-schedule", args.loss_schedule)?.is_some() {
            return Err(usage("--loss-file and --loss-schedule are mutually exclusive"));
        }
        None
    } else {
        Some(r.value("loss-schedule", args.loss_schedule, LossSchedule::Halving)?)
    };
    let jobs = r.value("jobs", args.jobs, 0)?;
    let out = r.required_path("out", args.out)?;
    r.finish()?;
    if epochs == 0 || config.scenes == 0 {
        return Err(usage("--epochs and --scenes must be positive"));
    }
    print_header(&r, "simulate");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building thread pool")?;
    let report = pool.install(|| -> Result<_> {
        let scenes = config.scenes()?;
        let schedule = match (loss_schedule, &loss_file) {
            (_, Some(p)) => {
                let losses = parse_losses(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?;
                if losses.len() != epochs + 1 {
                    return Err(usage(format!(
                        "{} lists {} losses, expected {} (initial + one per epoch)",
                        p.display(),
                        losses.len(),
                        epochs + 1
                    )));
                }
                let mut s = EpochSchedule::halving(epochs, noise_start, noise_end);
                s.initial_loss = Some(losses[0]);
                s.losses = losses[1..].to_vec();
                s
            }
            (Some(LossSchedule::CrossEntropy), None) => {
                EpochSchedule::cross_entropy(&scenes, epochs, noise_start, noise_end, config.seed)?
            }
            _ => EpochSchedule::halving(epochs, noise_start, noise_end),
        };
        Ok(simulate_epochs(&scenes, &schedule, &config)?)
    })?;
    write_atomic(&out, report.to_csv().as_bytes())?;

    let last = report.final_epoch();
    println!("epoch {last}");
    for v in SIMULATED_VARIANTS {
        if let Some(m) = report.miou(last, v) {
            println!("{:<16} {m:.4}", v.name());
        }
    }
    Ok(())
}
