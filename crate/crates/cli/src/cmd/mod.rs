pub mod blot;
pub mod eval;
pub mod fields;
pub mod overlay;
pub mod pseudomask;
pub mod refine;
pub mod simulate;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use pmp_core::blot::BlotConfig;
use pmp_core::expansion::{ExpansionState, DEFAULT_ETA, DEFAULT_OMEGA};
use pmp_core::pac::{parse_layers, KernelVariant, RefinerConfig};
use pmp_core::walker::WalkerConfig;

use crate::config::{read_text, usage, Resolver};

#[derive(Args, Debug, Default)]
pub struct ConfigFlag {
    /// `key = value` file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigFlag {
    pub fn resolver(&self) -> Result<Resolver> {
        Resolver::new(self.config.as_deref())
    }
}

pub fn print_header(r: &Resolver, command: &str) {
    eprint!("{}", r.header(command));
}

#[derive(Args, Debug, Default)]
pub struct BlotFlags {
    /// Perturb-and-walk rounds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Symmetric KL acceptance bound.
    #[arg(long)]
    pub phi: Option<f64>,
    /// IoU acceptance bound.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Walker probability needed to label a pixel.
    #[arg(long = "tau-rw")]
    pub tau_rw: Option<f64>,
    /// Walker edge contrast.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Histogram bins per channel.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Rotation range per round, degrees.
    #[arg(long)]
    pub rotation: Option<f64>,
    /// Translation range per round, fraction of the short side.
    #[arg(long)]
    pub translation: Option<f64>,
    /// Relative residual for the walker's linear solve.
    #[arg(long = "cg-tol")]
    pub cg_tol: Option<f64>,
    #[arg(long = "cg-max-iter")]
    pub cg_max_iter: Option<usize>,
}

impl BlotFlags {
    pub fn resolve(self, r: &mut Resolver, seed: u64) -> Result<BlotConfig> {
        let d = BlotConfig::default();
        let config = BlotConfig {
            iterations: r.value("k", self.k, d.iterations)?,
            kld_threshold: r.value("phi", self.phi, d.kld_threshold)?,
            iou_threshold: r.value("delta", self.delta, d.iou_threshold)?,
            rotation_base: r.value("rotation", self.rotation, d.rotation_base)?,
            translation_base: r.value("translation", self.translation, d.translation_base)?,
            histogram_bins: r.value("bins", self.bins, d.histogram_bins)?,
            rng_seed: seed,
            tau: r.value("tau-rw", self.tau_rw, d.tau)?,
            walker: WalkerConfig {
                beta: r.value("beta", self.beta, d.walker.beta)?,
                tolerance: r.value("cg-tol", self.cg_tol, d.walker.tolerance)?,
                max_iterations: r.value("cg-max-iter", self.cg_max_iter, d.walker.max_iterations)?,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Default)]
pub struct RefineFlags {
    /// Kernel form: exp-ratio or literal.
    #[arg(long)]
    pub variant: Option<KernelVariant>,
    /// Layer table file, one `kernel dilation stride` per line.
    #[arg(long)]
    pub layers: Option<PathBuf>,
}

impl RefineFlags {
    pub fn resolve(self, r: &mut Resolver) -> Result<RefinerConfig> {
        let mut config = RefinerConfig {
            variant: r.value("variant", self.variant, KernelVariant::ExpRatio)?,
            ..RefinerConfig::default()
        };
        if let Some(p) = r.path("layers", self.layers)? {
            config.layers = parse_layers(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?;
        }
        Ok(config)
    }
}

#[derive(Args, Debug, Default)]
pub struct ExpansionFlags {
    /// One loss per line, replayed from a fresh state.
    #[arg(long = "epoch-loss-file", conflicts_with = "state")]
    pub epoch_loss_file: Option<PathBuf>,
    /// Saved expansion state (`object background previous-loss`).
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Where to save the resulting expansion state.
    #[arg(long = "state-out")]
    pub state_out: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<f64>,
}

pub struct Expansion {
    pub state: ExpansionState,
    pub state_out: Option<PathBuf>,
}

impl ExpansionFlags {
    pub fn resolve(self, r: &mut Resolver) -> Result<Expansion> {
        let eta = r.value("eta", self.eta, DEFAULT_ETA)?;
        let omega = r.value("omega", self.omega, DEFAULT_OMEGA)?;
        let losses = r.path("epoch-loss-file", self.epoch_loss_file)?;
        let saved = r.path("state", self.state)?;
        let state = match (losses, saved) {
            (Some(_), Some(_)) => {
                return Err(usage("--epoch-loss-file and --state are mutually exclusive"))
            }
            (Some(p), None) => {
                let mut state = ExpansionState::new(eta, omega)?;
                for (n, loss) in parse_losses(&read_text(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?
                    .into_iter()
                    .enumerate()
                {
                    state
                        .update(loss)
                        .with_context(|| format!("{}: loss {}", p.display(), n + 1))?;
                }
                state
            }
            (None, Some(p)) => ExpansionState::parse(&read_text(&p)?, eta, omega)
                .with_context(|| format!("parsing {}", p.display()))?,
            (None, None) => ExpansionState::new(eta, omega)?,
        };
        Ok(Expansion {
            state,
            state_out: r.path("state-out", self.state_out)?,
        })
    }
}

impl Expansion {
    pub fn save(&self) -> Result<()> {
        if let Some(p) = &self.state_out {
            pmp_core::io::write_atomic(p, format!("{}\n", self.state).as_bytes())?;
        }
        Ok(())
    }
}

/// One finite loss per line; blank lines and `#` comments are skipped.
pub fn parse_losses(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| pmp_core::Error::Parse {
            line: n + 1,
            message: format!("bad loss {line:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_file_parsing() {
        assert_eq!(parse_losses("1.0\n# x\n\n0.5 # half\n").unwrap(), vec![1.0, 0.5]);
        let err = parse_losses("1\nabc\n").unwrap_err();
        assert!(format!("{err}").contains("line 2"));
    }
}
