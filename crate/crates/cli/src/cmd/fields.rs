use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::distance::{aggregate, to_confidence, FieldStack, Stage};
use pmp_core::expansion::ExpansionState;
use pmp_core::io::{read_image, read_points, write_pmsm};

use super::{print_header, ConfigFlag, ExpansionFlags};
use crate::batch::{ensure_dir, run_all, Batch, BatchFlags};
use crate::config::usage;

#[derive(Args, Debug)]
pub struct FieldsArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[command(flatten)]
    pub batch: BatchFlags,
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<u16>,
    /// Image whose dimensions define the raster.
    #[arg(long, conflicts_with_all = ["height", "width"])]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// raw, confidence, aggregated or expanded.
    #[arg(long)]
    pub stage: Option<Stage>,
    /// Output PMSM, or directory with --manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub expansion: ExpansionFlags,
}

fn stack_at(points: &pmp_core::PointSet, h: usize, w: usize, stage: Stage, state: &ExpansionState) -> Result<FieldStack> {
    let raw = FieldStack::raw(points, h, w)?;
    Ok(match stage {
        Stage::RawDistance => raw,
        Stage::Confidence => to_confidence(&raw)?,
        Stage::Aggregated => aggregate(&to_confidence(&raw)?)?,
        Stage::Expanded => state.apply(&aggregate(&to_confidence(&raw)?)?)?,
    })
}

fn fields_one(points: &Path, classes: u16, dims: (usize, usize), stage: Stage, state: &ExpansionState, out: &Path) -> Result<()> {
    let pts = read_points(points, classes).with_context(|| format!("reading {}", points.display()))?;
    pts.check_bounds(dims.0, dims.1)
        .with_context(|| format!("checking {}", points.display()))?;
    write_pmsm(out, &stack_at(&pts, dims.0, dims.1, stage, state)?.to_pmsm())?;
    Ok(())
}

fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let img = read_image(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((img.height(), img.width()))
}

pub fn run(args: FieldsArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let batch = Batch::resolve(args.batch, &mut r)?;
    let classes = r.required("classes", args.classes)?;
    let stage = r.value("stage", args.stage, Stage::Aggregated)?;
    let expansion = args.expansion.resolve(&mut r)?;
    let out = r.required_path("out", args.out)?;
    match &batch.entries {
        None => {
            let points = r.required_path("points", args.points)?;
            let dims = match (r.path("image", args.image)?, r.optional("height", args.height)?, r.optional("width", args.width)?) {
                (Some(img), None, None) => image_dims(&img)?,
                (None, Some(h), Some(w)) => (h, w),
                _ => return Err(usage("give either --image or both --height and --width")),
            };
            r.finish()?;
            print_header(&r, "fields");
            batch
                .pool()?
                .install(|| fields_one(&points, classes, dims, stage, &expansion.state, &out))?;
        }
        Some(entries) => {
            if args.points.is_some() || args.image.is_some() || args.height.is_some() || args.width.is_some() {
                return Err(usage("--manifest conflicts with --points, --image, --height and --width"));
            }
            r.finish()?;
            print_header(&r, "fields");
            ensure_dir(&out)?;
            run_all(&batch.pool()?, entries, |e| {
                let target = out.join(format!("{}_fields.pmsm", e.stem()));
                fields_one(e.points()?, classes, image_dims(&e.image)?, stage, &expansion.state, &target)
            })?;
        }
    }
    expansion.save()
}
