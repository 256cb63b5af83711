use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::blot::{derive_seed, generate_blots, BlotConfig};
use pmp_core::io::{read_image, read_points, write_mask, write_pmsm, Pmsm};
use pmp_core::walker::{solve_walker, WalkerProblem};

use super::{print_header, BlotFlags, ConfigFlag};
use crate::batch::{ensure_dir, run_all, Batch, BatchFlags};

#[derive(Args, Debug)]
pub struct BlotArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[command(flatten)]
    pub batch: BatchFlags,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// `class,x,y` lines.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Number of object classes; the background class is one more.
    #[arg(long)]
    pub classes: Option<u16>,
    /// Output PGM, or directory with --manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the unperturbed walker probabilities as PMSM.
    #[arg(long = "dump-probs")]
    pub dump_probs: Option<PathBuf>,
    #[command(flatten)]
    pub blot: BlotFlags,
}

fn blot_one(image: &Path, points: &Path, classes: u16, config: &BlotConfig, out: &Path, probs: Option<&Path>) -> Result<()> {
    let img = read_image(image).with_context(|| format!("reading {}", image.display()))?;
    let pts = read_points(points, classes).with_context(|| format!("reading {}", points.display()))?;
    pts.check_bounds(img.height(), img.width())
        .with_context(|| format!("checking {}", points.display()))?;
    let mask = generate_blots(&img, &pts, config)?;
    write_mask(out, &mask)?;
    if let Some(p) = probs {
        let stack = solve_walker(&WalkerProblem {
            image: &img,
            seeds: &pts,
            config: config.walker,
        })?;
        write_pmsm(
            p,
            &Pmsm {
                planes: classes as usize + 1,
                height: img.height(),
                width: img.width(),
                data: stack.to_full_planes(),
            },
        )?;
    }
    Ok(())
}

pub fn run(args: BlotArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let batch = Batch::resolve(args.batch, &mut r)?;
    let classes = r.required("classes", args.classes)?;
    let seed = r.seed(args.seed)?;
    let config = args.blot.resolve(&mut r, seed)?;
    let out = r.required_path("out", args.out)?;
    match &batch.entries {
        None => {
            let image = r.required_path("image", args.image)?;
            let points = r.required_path("points", args.points)?;
            let probs = r.path("dump-probs", args.dump_probs)?;
            r.finish()?;
            print_header(&r, "blot");
            batch
                .pool()?
                .install(|| blot_one(&image, &points, classes, &config, &out, probs.as_deref()))
        }
        Some(entries) => {
            if args.image.is_some() || args.points.is_some() || args.dump_probs.is_some() {
                return Err(crate::config::usage(
                    "--manifest conflicts with --image, --points and --dump-probs",
                ));
            }
            r.finish()?;
            print_header(&r, "blot");
            ensure_dir(&out)?;
            run_all(&batch.pool()?, entries, |e| {
                let mut cfg = config.clone();
                cfg.rng_seed = derive_seed(seed, &e.key);
                let target = out.join(format!("{}_blot.pgm", e.stem()));
                blot_one(&e.image, e.points()?, classes, &cfg, &target, None)
            })
        }
    }
}
