use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::io::{read_image, read_mask, read_pmsm, write_png_rgb};
use pmp_core::overlay::{render_heatmap, render_overlay};

use super::{print_header, ConfigFlag};
use crate::config::usage;

#[derive(Args, Debug)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    #[arg(long, conflicts_with_all = ["field", "plane"])]
    pub image: Option<PathBuf>,
    /// Label mask PGM to draw over --image.
    #[arg(long, conflicts_with_all = ["field", "plane"])]
    pub mask: Option<PathBuf>,
    /// Number of object classes in --mask.
    #[arg(long)]
    pub classes: Option<u16>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// PMSM stack to render as a heatmap.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// 1-based plane of --field.
    #[arg(long)]
    pub plane: Option<usize>,
    /// Output PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: OverlayArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let out = r.required_path("out", args.out)?;
    let image = r.path("image", args.image)?;
    let mask = r.path("mask", args.mask)?;
    let field = r.path("field", args.field)?;
    match (image, mask, field) {
        (Some(image), Some(mask), None) => {
            let classes = r.required("classes", args.classes)?;
            let alpha = r.value("alpha", args.alpha, 0.5)?;
            r.finish()?;
            print_header(&r, "overlay");
            let img = read_image(&image).with_context(|| format!("reading {}", image.display()))?;
            let m = read_mask(&mask, classes).with_context(|| format!("reading {}", mask.display()))?;
            render_overlay(&img, &m, alpha)?.write_png(&out)?;
        }
        (None, None, Some(field)) => {
            let plane = r.required("plane", args.plane)?;
            r.finish()?;
            print_header(&r, "overlay");
            let stack = read_pmsm(&field).with_context(|| format!("reading {}", field.display()))?;
            if plane == 0 || plane > stack.planes {
                return Err(usage(format!("--plane {plane} outside 1..={}", stack.planes)));
            }
            let n = stack.height * stack.width;
            let values: Vec<f64> = stack.data[(plane - 1) * n..plane * n]
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            write_png_rgb(&out, &render_heatmap(&values, stack.height, stack.width)?)?;
        }
        _ => return Err(usage("give --image with --mask, or --field with --plane")),
    }
    Ok(())
}
