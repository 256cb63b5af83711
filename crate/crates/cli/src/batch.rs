//! Manifest parsing and parallel per-entry execution.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use crate::config::{read_text, usage, Resolver};

#[derive(Args, Debug, Default)]
pub struct BatchFlags {
    /// List of `image [points [scores]]` lines; `--out` becomes a directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub image: PathBuf,
    pub points: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    /// The image path as written, used to derive per-entry RNG streams.
    pub key: String,
}

impl Entry {
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    }

    pub fn points(&self) -> Result<&Path> {
        self.points
            .as_deref()
            .ok_or_else(|| usage(format!("manifest entry {} has no points file", self.key)))
    }

    pub fn scores(&self) -> Result<&Path> {
        self.scores
            .as_deref()
            .ok_or_else(|| usage(format!("manifest entry {} has no scores file", self.key)))
    }
}

/// Relative paths resolve against the manifest's directory; `-` skips a column.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() > 3 {
            return Err(usage(format!("manifest line {}: more than 3 columns", n + 1)));
        }
        let col = |i: usize| {
            cols.get(i)
                .filter(|c| **c != "-")
                .map(|c| base.join(c))
        };
        entries.push(Entry {
            image: col(0).ok_or_else(|| usage(format!("manifest line {}: no image", n + 1)))?,
            points: col(1),
            scores: col(2),
            key: cols[0].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(usage("manifest lists no entries"));
    }
    Ok(entries)
}

pub struct Batch {
    pub entries: Option<Vec<Entry>>,
    pub jobs: usize,
}

impl Batch {
    pub fn resolve(flags: BatchFlags, r: &mut Resolver) -> Result<Self> {
        let manifest = r.path("manifest", flags.manifest)?;
        let jobs = r.value("jobs", flags.jobs, 0)?;
        let entries = match manifest {
            Some(p) => {
                let base = p.parent().unwrap_or(Path::new("")).to_path_buf();
                Some(parse_manifest(&read_text(&p)?, &base)?)
            }
            None => None,
        };
        Ok(Self { entries, jobs })
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("building thread pool")
    }
}

/// Runs `f` on every entry; all entries run even if some fail, and the first
/// failure in manifest order is returned.
pub fn run_all<F>(pool: &rayon::ThreadPool, entries: &[Entry], f: F) -> Result<()>
where
    F: Fn(&Entry) -> Result<()> + Sync,
{
    let results: Vec<Result<()>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| f(e).with_context(|| format!("entry {}", e.key)))
            .collect()
    });
    let failed = results.iter().filter(|r| r.is_err()).count();
    match results.into_iter().find(|r| r.is_err()) {
        Some(Err(e)) => Err(e.context(format!("{failed} of {} entries failed", entries.len()))),
        _ => Ok(()),
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// `dir/a.pgm` → `dir/a{suffix}`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
