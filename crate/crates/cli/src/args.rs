use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use goldilocks::network::{DisorderDistribution, PresetKind};
use goldilocks::units::EnergyUnit;
use goldilocks::Method;

const UNITS_NOTE: &str = "Energies and rates are in rad/ps unless --unit cm-1 is given \
(ħ = 1, 1 cm-1 = 0.188365 rad/ps). Times are always ps, distances are lattice spacings. \
Site numbers on the command line start at 1.";

#[derive(Debug, Parser)]
#[command(name = "goldilocks", version, about = "Dephasing-assisted exciton transport simulator", after_help = UNITS_NOTE)]
pub struct Cli {
    /// Unit of every energy/rate flag: cm-1 or rad-ps
    #[arg(long, global = true, default_value = "rad-ps", value_parser = parse_unit)]
    pub unit: EnergyUnit,

    /// Print numbers with this many decimals instead of full precision
    #[arg(long, global = true)]
    pub digits: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate one network and report efficiency, loss and transfer time
    #[command(after_help = UNITS_NOTE)]
    Simulate(SimulateArgs),
    /// Run a disorder-averaged parameter sweep from a JSON config
    #[command(after_help = UNITS_NOTE)]
    Sweep(SweepArgs),
    /// Compare theory, participation-number and dynamic localization lengths
    #[command(after_help = UNITS_NOTE)]
    Localize(LocalizeArgs),
    /// Evaluate a closed-form estimator
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Peak-Λ and plateau report for sweep CSV files
    #[command(after_help = UNITS_NOTE)]
    Collapse(CollapseArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Clone)]
pub struct NetworkArgs {
    /// Network JSON file (its own "unit" field applies; --unit is ignored for it)
    #[arg(long, conflicts_with_all = ["preset", "n", "coupling"])]
    pub network: Option<PathBuf>,
    /// Preset geometry: chain or ring
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<PresetKind>,
    /// Number of sites of the preset
    #[arg(long)]
    pub n: Option<usize>,
    /// Nearest-neighbour coupling J [rad/ps or --unit]
    #[arg(long = "J", allow_negative_numbers = true, id = "coupling")]
    pub coupling: Option<f64>,
    /// Disorder scale Δω [rad/ps or --unit]; half-width (uniform) or std (gaussian)
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub disorder: f64,
    /// Disorder distribution: uniform or gaussian
    #[arg(long, default_value = "uniform", value_parser = parse_distribution)]
    pub distribution: DisorderDistribution,
    /// Disorder seed (64-bit)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Sink (trap) site, 1-based [default: last site, or the file's sink_site]
    #[arg(long)]
    pub sink: Option<usize>,
    /// Site holding the exciton at t = 0, 1-based
    #[arg(long, default_value_t = 1)]
    pub initial: usize,
    /// Dephasing rate d [rad/ps or --unit]
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub d: f64,
    /// Neighbour noise correlation c [dimensionless, -1..1]
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub c: f64,
    /// Trapping rate κ into the sink [rad/ps or --unit]
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub kappa: f64,
    /// Recombination rate Γ [rad/ps or --unit; default 0.001 J]
    #[arg(long = "gamma-loss", allow_negative_numbers = true)]
    pub gamma_loss: Option<f64>,
    /// Stop at this time instead of integrating until empty [ps]
    #[arg(long, allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    /// Upper bound on simulated time when integrating until empty [ps]
    #[arg(long, allow_negative_numbers = true)]
    pub t_max: Option<f64>,
    /// Sampling interval of the trajectory CSV [ps]
    #[arg(long, allow_negative_numbers = true)]
    pub sample_dt: Option<f64>,
    /// RK4 step [ps; default 0.05 / fastest rate]
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    /// Integration engine: auto, direct or matrix
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    pub method: Method,
    /// Re-run at half the step and report the change in efficiency
    #[arg(long)]
    pub step_check: bool,
    /// Directory for trajectory.csv and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep config JSON (its own "unit" field applies)
    pub config: PathBuf,
    /// Output directory for sweep.csv, sweep.json and manifest.json
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads [default: GOLDILOCKS_THREADS, 0 = one per core]
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Δω used for the theory estimate [rad/ps or --unit; default: --disorder]
    #[arg(long, allow_negative_numbers = true)]
    pub delta_omega: Option<f64>,
    /// Origin site of the coherent spreading run, 1-based [default: central site]
    #[arg(long)]
    pub origin: Option<usize>,
    /// Number of disorder seeds to average (preset only): seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub realizations: usize,
    /// Directory for localization.csv and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    /// Sweep CSV files written by `goldilocks sweep`
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory for collapse.csv and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// manifest.json written by an earlier run
    pub manifest: PathBuf,
    /// Output directory [default: the recorded one]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Λ = d ℓ / 2J
    #[command(after_help = UNITS_NOTE)]
    Lambda {
        /// Dephasing rate d [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        d: f64,
        /// Localization length ℓ [sites]
        #[arg(long, allow_negative_numbers = true)]
        ell: f64,
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
    },
    /// Λ = d / 2Ω for strongly localized systems, Ω = √(J² + Δ²)
    #[command(after_help = UNITS_NOTE)]
    LambdaLocalized {
        /// Dephasing rate d [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        d: f64,
        /// Transition frequency Ω [rad/ps or --unit]; alternative to --J/--delta
        #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["j", "delta"])]
        omega: Option<f64>,
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true, id = "j")]
        j: Option<f64>,
        /// Half the site-energy difference Δ [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        delta: Option<f64>,
    },
    /// Optimal dephasing d* = 2J/ℓ, printed in the --unit
    #[command(after_help = UNITS_NOTE)]
    Dstar {
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Localization length ℓ [sites]; or give --delta-omega and --n
        #[arg(long, allow_negative_numbers = true, conflicts_with = "delta_omega")]
        ell: Option<f64>,
        /// Disorder Δω [rad/ps or --unit], ℓ = clamp((J/Δω)², 1, n−1)
        #[arg(long, allow_negative_numbers = true, requires = "n")]
        delta_omega: Option<f64>,
        /// Number of sites [sites]
        #[arg(long)]
        n: Option<usize>,
    },
    /// Transient localization length ℓ = clamp((J/Δω)², 1, n−1)
    #[command(after_help = UNITS_NOTE)]
    Ell {
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Disorder Δω [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        delta_omega: f64,
        /// Number of sites [sites]
        #[arg(long)]
        n: usize,
    },
    /// Localization time τ = ℓ/2J [ps]
    #[command(after_help = UNITS_NOTE)]
    Tau {
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Localization length ℓ [sites]
        #[arg(long, allow_negative_numbers = true)]
        ell: f64,
    },
    /// Band splitting ΔE = 2πJ/ℓ, printed in the --unit
    #[command(after_help = UNITS_NOTE)]
    Splitting {
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Localization length ℓ [sites]
        #[arg(long, allow_negative_numbers = true)]
        ell: f64,
    },
    /// Two-site transfer: p_max = J²/Ω², Ω, t_peak = π/2Ω
    #[command(name = "two-state", after_help = UNITS_NOTE)]
    TwoState {
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Half the site-energy difference Δ [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        delta: f64,
    },
    /// Optimal spread r = √(2 t J ℓ) [sites]
    #[command(after_help = UNITS_NOTE)]
    Spread {
        /// Time t [ps]
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
        /// Coupling J [rad/ps or --unit]
        #[arg(long = "J", allow_negative_numbers = true)]
        j: f64,
        /// Localization length ℓ [sites]
        #[arg(long, allow_negative_numbers = true)]
        ell: f64,
    },
    /// Decoherence rate d = α(1−c)λkT/γ, printed in the --unit
    #[command(after_help = UNITS_NOTE)]
    Decoherence {
        #[command(flatten)]
        bath: BathArgs,
    },
    /// Microscopic Λ = α(1−c)λkT/(γ ΔE) and the decoherence rate
    #[command(after_help = UNITS_NOTE)]
    Micro {
        #[command(flatten)]
        bath: BathArgs,
        /// Band splitting ΔE [rad/ps or --unit]
        #[arg(long, allow_negative_numbers = true)]
        delta_e: f64,
    },
}

#[derive(Debug, Args)]
pub struct BathArgs {
    /// Prefactor α [dimensionless]
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub alpha: f64,
    /// Neighbour noise correlation c [dimensionless, -1..1]
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub c: f64,
    /// Reorganization energy λ [rad/ps or --unit]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_reorg: f64,
    /// Thermal energy kT [rad/ps or --unit]
    #[arg(long = "kT", allow_negative_numbers = true, alias = "kt")]
    pub kt: f64,
    /// Inverse bath correlation time γ [rad/ps or --unit]
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: f64,
}

fn parse_unit(s: &str) -> Result<EnergyUnit, String> {
    s.parse().map_err(|e: goldilocks::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<PresetKind, String> {
    s.parse().map_err(|e: goldilocks::Error| e.to_string())
}

fn parse_distribution(s: &str) -> Result<DisorderDistribution, String> {
    s.parse().map_err(|e: goldilocks::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "auto" => Ok(Method::Auto),
        "direct" => Ok(Method::Direct),
        "matrix" => Ok(Method::Matrix),
        other => Err(format!("unknown method '{other}' (expected auto, direct or matrix)")),
    }
}
