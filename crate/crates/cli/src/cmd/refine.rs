use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::io::{read_image, read_score_stack, write_score_stack};
use pmp_core::pac::{refine, RefinerConfig};

use super::{print_header, ConfigFlag, RefineFlags};
use crate::batch::{ensure_dir, run_all, Batch, BatchFlags};
use crate::config::usage;

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[command(flatten)]
    pub batch: BatchFlags,
    /// Guidance image.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Score stack (PMSM).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output PMSM, or directory with --manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub refine: RefineFlags,
}

fn refine_one(image: &Path, scores: &Path, config: &RefinerConfig, out: &Path) -> Result<()> {
    let img = read_image(image).with_context(|| format!("reading {}", image.display()))?;
    let stack = read_score_stack(scores).with_context(|| format!("reading {}", scores.display()))?;
    write_score_stack(out, &refine(&stack, &img, config)?)?;
    Ok(())
}

pub fn run(args: RefineArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let batch = Batch::resolve(args.batch, &mut r)?;
    let config = args.refine.resolve(&mut r)?;
    let out = r.required_path("out", args.out)?;
    match &batch.entries {
        None => {
            let image = r.required_path("image", args.image)?;
            let scores = r.required_path("scores", args.scores)?;
            r.finish()?;
            print_header(&r, "refine");
            batch
                .pool()?
                .install(|| refine_one(&image, &scores, &config, &out))
        }
        Some(entries) => {
            if args.image.is_some() || args.scores.is_some() {
                return Err(usage("--manifest conflicts with --image and --scores"));
            }
            r.finish()?;
            print_header(&r, "refine");
            ensure_dir(&out)?;
            run_all(&batch.pool()?, entries, |e| {
                let target = out.join(format!("{}_refined.pmsm", e.stem()));
                refine_one(&e.image, e.scores()?, &config, &target)
            })
        }
    }
}
