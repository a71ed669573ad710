//! `resmap`: compile linear systems into resistive solver networks and
//! simulate them.
//!
//! Exit codes: 0 on success, 2 when `solve` detects an unstable or
//! non-settling circuit, 1 on any error (including bad flags).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{AnchorArg, DesignArg, Emit, Overrides};

#[derive(Debug, Parser)]
#[command(name = "resmap", version, about = "Map SPD linear systems onto analog resistive solver networks")]
#[command(after_help = "Settings are layered: flags > RESMAP_* environment variables > --config file > defaults.\n\
Exit codes: 0 success, 2 detected instability (solve), 1 error.")]
pub struct Cli {
    /// TOML file with default settings (keys match the long flag names).
    #[arg(long, global = true, env = "RESMAP_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Map a system onto a network and describe it.
    #[command(after_help = "Exit codes: 0 mapped, 1 error.")]
    Map(MapCmd),
    /// Map, simulate and report the solution, settling, error and power.
    #[command(after_help = "Exit codes: 0 stable and settled, 2 saturation, non-positive-definite \
network or no settling within t_end, 1 error.")]
    Solve(SolveCmd),
    /// Run a parameter study over generated systems.
    #[command(after_help = "Exit codes: 0 study completed (per-run failures are data), 1 error.")]
    Sweep(SweepCmd),
    /// Write a SPICE netlist of the mapped network.
    #[command(after_help = "Exit codes: 0 written, 1 error.")]
    Export(ExportCmd),
    /// Run the built-in verification suite.
    #[command(after_help = "Exit codes: 0 every check passed, 1 a check failed.\n\
Full suite: spectrum identity on 50 systems (n <= 50), stamp round-trip on 100 systems \
over n in {5,20,100}, component counts for n in {1,5,10,100}, alpha invariance on 20 \
systems, dominant-input passivity on 50 systems.\n\
Quick suite: 10 spectrum systems (n <= 10), 12 round-trip systems over n in {5,20}, \
counts for n in {1,5,10}, 5 alpha systems, 10 dominant systems.")]
    Verify(VerifyCmd),
    /// Count the components of a mapped network, or the worst case per size.
    #[command(after_help = "Exit codes: 0 counted, 1 error.")]
    Count(CountCmd),
    /// Write a random test system (JSON, with its true solution).
    #[command(after_help = "Exit codes: 0 written, 1 error.")]
    Generate(GenerateCmd),
}

/// Mapping and simulation settings shared by map, solve, export and count.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Network design.
    #[arg(long, value_enum, env = "RESMAP_DESIGN")]
    pub design: Option<DesignArg>,
    /// `ideal` or an amplifier model name (ad712, ltc2050, ltc6268, or one
    /// from --opamp-library). Default: ad712.
    #[arg(long, env = "RESMAP_FIDELITY")]
    pub fidelity: Option<String>,
    /// Fixed conductance scale factor.
    #[arg(long, env = "RESMAP_ALPHA", conflicts_with = "alpha_target")]
    pub alpha: Option<f64>,
    /// Choose alpha so the largest conductance equals this value, uS (default 500).
    #[arg(long, env = "RESMAP_ALPHA_TARGET")]
    pub alpha_target: Option<f64>,
    /// Use D = beta * max colsum|A| * I (proposed design only; beta >= 0.5).
    #[arg(long, env = "RESMAP_BETA")]
    pub beta: Option<f64>,
    /// Column that receives the ground tie.
    #[arg(long, value_enum, env = "RESMAP_ANCHOR")]
    pub anchor: Option<AnchorArg>,
    /// Supply rail magnitude, V (default 4).
    #[arg(long, env = "RESMAP_SUPPLY")]
    pub supply: Option<f64>,
    /// Transient end time, s (default 10 ms preliminary, 1 ms proposed).
    #[arg(long, env = "RESMAP_T_END")]
    pub t_end: Option<f64>,
    /// JSON file of extra amplifier models.
    #[arg(long, env = "RESMAP_OPAMP_LIBRARY", value_name = "FILE")]
    pub opamp_library: Option<PathBuf>,
    /// Output format on stdout.
    #[arg(long, value_enum, env = "RESMAP_EMIT")]
    pub emit: Option<Emit>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            design: self.design,
            fidelity: self.fidelity.clone(),
            alpha: self.alpha,
            alpha_target: self.alpha_target,
            beta: self.beta,
            anchor: self.anchor,
            supply: self.supply,
            t_end: self.t_end,
            opamp_library: self.opamp_library.clone(),
            emit: self.emit,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct MapCmd {
    /// System file (.json, or .mtx with a sibling <stem>_b.mtx or <stem>.rhs).
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Write the network as JSON.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Write a SPICE netlist.
    #[arg(long, value_name = "FILE")]
    pub netlist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveCmd {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Write the full JSON report.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write the sampled transient as CSV.
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
    /// Write a SPICE netlist.
    #[arg(long, value_name = "FILE")]
    pub netlist: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    /// Scaled-identity D, one run per --values entry.
    Beta,
    /// Conductance scale, one run per --values entry.
    Alpha,
    /// Amplifier models listed in --models.
    Opamp,
    /// Both designs (or --designs) against size.
    Complexity,
    /// Systems whose largest mapped conductance lies in --center +/- --tolerance.
    Band,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long, value_enum)]
    pub study: StudyArg,
    /// System sizes.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub sizes: Vec<usize>,
    /// Systems per size.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Parameter values for the beta and alpha studies.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    /// Amplifier models for the opamp study (default: every known model).
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Designs for the complexity study (default: both).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub designs: Vec<DesignArg>,
    /// Band centre for the band study, uS.
    #[arg(long, default_value_t = 620.0)]
    pub center: f64,
    /// Band half-width as a fraction of the centre.
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
    /// Amplifier model for every study except opamp (default ad712).
    #[arg(long, env = "RESMAP_FIDELITY")]
    pub fidelity: Option<String>,
    /// Transient end time, s.
    #[arg(long, env = "RESMAP_T_END")]
    pub t_end: Option<f64>,
    /// Base seed; replication r uses seed + r.
    #[arg(long, env = "RESMAP_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, env = "RESMAP_WORKERS")]
    pub workers: Option<usize>,
    /// Per-run wall-clock budget, s (default 30).
    #[arg(long, env = "RESMAP_TIMEOUT")]
    pub timeout: Option<f64>,
    #[arg(long, env = "RESMAP_OPAMP_LIBRARY", value_name = "FILE")]
    pub opamp_library: Option<PathBuf>,
    /// Write the per-run dataset as CSV.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Write the per-cell summary as JSON.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Output format on stdout (default csv).
    #[arg(long, value_enum, env = "RESMAP_EMIT")]
    pub emit: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct ExportCmd {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Netlist path (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub netlist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyCmd {
    /// Run the reduced suite.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, value_enum, env = "RESMAP_EMIT")]
    pub emit: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct CountCmd {
    /// System to map and count; without it the worst case is tabulated.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    /// Sizes for the worst-case table.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,100")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    /// Number of unknowns.
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "RESMAP_SEED")]
    pub seed: Option<u64>,
    /// Fraction of off-diagonal pairs kept.
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Generate a diagonally dominant system (maps passively).
    #[arg(long)]
    pub dominant: bool,
    /// Reject systems whose largest mapped conductance is outside this centre, uS.
    #[arg(long)]
    pub band_center: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub band_tolerance: f64,
    /// Output path (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
