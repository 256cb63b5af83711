use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::eval::ConfusionMatrix;
use pmp_core::io::{read_mask, write_atomic};

use super::{print_header, ConfigFlag};
use crate::config::usage;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigFlag,
    /// Directory of predicted PGM masks.
    #[arg(long = "pred-dir")]
    pub pred_dir: Option<PathBuf>,
    /// Directory of ground-truth PGM masks; every file needs a prediction of the same name.
    #[arg(long = "gt-dir")]
    pub gt_dir: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<u16>,
    /// Machine-readable per-class report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the text report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn pgm_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            if let Some(n) = path.file_name() {
                names.push(n.to_string_lossy().into_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn run(args: EvalArgs) -> Result<()> {
    let mut r = args.config.resolver()?;
    let pred_dir = r.required_path("pred-dir", args.pred_dir)?;
    let gt_dir = r.required_path("gt-dir", args.gt_dir)?;
    let classes = r.required("classes", args.classes)?;
    let csv = r.path("csv", args.csv)?;
    let report_path = r.path("report", args.report)?;
    r.finish()?;
    print_header(&r, "eval");

    let names = pgm_files(&gt_dir)?;
    if names.is_empty() {
        return Err(usage(format!("no .pgm files in {}", gt_dir.display())));
    }
    let mut matrix = ConfusionMatrix::new(classes);
    for name in &names {
        let gt_path = gt_dir.join(name);
        let pred_path = pred_dir.join(name);
        let gt = read_mask(&gt_path, classes).with_context(|| format!("reading {}", gt_path.display()))?;
        let pred = read_mask(&pred_path, classes).with_context(|| format!("reading {}", pred_path.display()))?;
        matrix
            .accumulate(&pred, &gt)
            .with_context(|| format!("comparing {name}"))?;
    }
    let report = matrix.miou()?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = report_path {
        write_atomic(&p, text.as_bytes())?;
    }
    if let Some(p) = csv {
        write_atomic(&p, report.to_csv().as_bytes())?;
    }
    Ok(())
}
