//! `hillres`: batch front end for band, state, resonance, counting and audit reports.

mod report;
mod run;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "hillres", version, about = "Bands, states and resonances of compactly perturbed Hill operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Band edges, Dirichlet/Neumann points and gap heights.
    Bands,
    /// Bound, antibound and virtual states in gaps and on the imaginary axis.
    States,
    /// Resonances inside the boxes given with --box.
    Resonances,
    /// Lower half-plane zero counts for each radius in --r.
    Count,
    /// Forbidden-domain audit of |ξ| and of located states.
    Audit,
    /// Pipeline self-checks; exit code 4 when one fails.
    Verify,
    /// Sampled ξ, F and scattering data along the real axis, gap rims and rays.
    Scatter,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Potential spec file (JSON).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Number of gaps to resolve.
    #[arg(long, global = true, default_value_t = 10)]
    pub nmax: usize,
    /// Comma-separated radii.
    #[arg(long, global = true, value_delimiter = ',')]
    pub r: Vec<f64>,
    /// Search box `x0,x1,y0,y1` in the momentum plane; may be repeated.
    #[arg(long = "box", global = true, value_name = "X0,X1,Y0,Y1")]
    pub boxes: Vec<String>,
    /// Tolerance override `NAME=VAL`; may be repeated.
    #[arg(long, global = true, value_name = "NAME=VAL")]
    pub tol: Vec<String>,
    /// Output directory (HILLRES_OUT takes precedence).
    #[arg(long, global = true, default_value = "hillres-out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for sampled evaluation points.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(run::run(&argv) as u8)
}
