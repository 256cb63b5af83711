use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::blot::derive_seed;
use pmp_core::expansion::ExpansionState;
use pmp_core::io::{read_image, read_points, read_score_stack, write_mask};
use pmp_core::overlay::render_overlay;
use pmp_core::pseudomask::{run_pipeline, Ablation, PipelineConfig, DEFAULT_THRESHOLD};

use super::{print_header, BlotFlags, ConfigFlag, ExpansionFlags, RefineFlags};
use crate::batch::{ensure_dir, run_all, sibling, Batch, BatchFlags};
use crate::config::usage;

#[derive(Args, Debug)]
pub struct PseudomaskArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[command(flatten)]
    pub batch: BatchFlags,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Network score stack (PMSM); fixes the class count.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output mask PGM, or directory with --manifest. The provenance map is
    /// written next to it as `<stem>_provenance.pgm`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `<stem>_overlay.png`.
    #[arg(long = "with-overlay")]
    pub with_overlay: bool,
    /// Overlay opacity.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pipeline variant, e.g. full, fields+refiner, blots-only.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print per-stage timings to stderr.
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub expansion: ExpansionFlags,
    #[command(flatten)]
    pub blot: BlotFlags,
    #[command(flatten)]
    pub refine: RefineFlags,
}

struct Job<'a> {
    config: &'a PipelineConfig,
    state: &'a ExpansionState,
    ablation: Ablation,
    overlay_alpha: Option<f64>,
    timings: bool,
}

impl Job<'_> {
    fn run(&self, image: &Path, points: &Path, scores: &Path, out: &Path, seed: u64) -> Result<()> {
        let img = read_image(image).with_context(|| format!("reading {}", image.display()))?;
        let stack = read_score_stack(scores).with_context(|| format!("reading {}", scores.display()))?;
        let pts = read_points(points, stack.num_classes()).with_context(|| format!("reading {}", points.display()))?;
        let mut config = self.config.clone();
        config.blot.rng_seed = seed;
        let result = run_pipeline(&img, &pts, &stack, self.state, &config, self.ablation)?;
        write_mask(out, &result.mask.labels)?;
        write_mask(&sibling(out, "_provenance.pgm"), &result.mask.provenance_mask())?;
        if let Some(alpha) = self.overlay_alpha {
            render_overlay(&img, &result.mask.labels, alpha)?.write_png(&sibling(out, "_overlay.png"))?;
        }
        if self.timings {
            let t = &result.timings;
            let total = t.total().as_secs_f64();
            eprintln!(
                "{}: blots {:.3}s fields {:.3}s refine {:.3}s assemble {:.3}s total {:.3}s (blots {:.2}% of the rest)",
                image.display(),
                t.blots.as_secs_f64(),
                t.fields.as_secs_f64(),
                t.refine.as_secs_f64(),
                t.assemble.as_secs_f64(),
                total,
                100.0 * t.blots.as_secs_f64() / (total - t.blots.as_secs_f64()).max(f64::MIN_POSITIVE),
            );
        }
        Ok(())
    }
}

pub fn run(args: PseudomaskArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let batch = Batch::resolve(args.batch, &mut r)?;
    let seed = r.seed(args.seed)?;
    let config = PipelineConfig {
        threshold: r.value("threshold", args.threshold, DEFAULT_THRESHOLD)?,
        refiner: args.refine.resolve(&mut r)?,
        blot: args.blot.resolve(&mut r, seed)?,
    };
    let ablation = r.value("ablation", args.ablation, Ablation::FULL)?;
    let with_overlay = r.value("with-overlay", args.with_overlay.then_some(true), false)?;
    let alpha = r.value("alpha", args.alpha, 0.5)?;
    let expansion = args.expansion.resolve(&mut r)?;
    let out = r.required_path("out", args.out)?;
    let job = Job {
        config: &config,
        state: &expansion.state,
        ablation,
        overlay_alpha: with_overlay.then_some(alpha),
        timings: args.timings,
    };
    let pool = batch.pool()?;
    match &batch.entries {
        None => {
            let image = r.required_path("image", args.image)?;
            let points = r.required_path("points", args.points)?;
            let scores = r.required_path("scores", args.scores)?;
            r.finish()?;
            print_header(&r, "pseudomask");
            pool.install(|| job.run(&image, &points, &scores, &out, seed))?;
        }
        Some(entries) => {
            if args.image.is_some() || args.points.is_some() || args.scores.is_some() {
                return Err(usage("--manifest conflicts with --image, --points and --scores"));
            }
            r.finish()?;
            print_header(&r, "pseudomask");
            ensure_dir(&out)?;
            run_all(&pool, entries, |e| {
                let target = out.join(format!("{}_mask.pgm", e.stem()));
                job.run(&e.image, e.points()?, e.scores()?, &target, derive_seed(seed, &e.key))
            })?;
        }
    }
    expansion.save()
}
