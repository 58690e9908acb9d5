use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use goldilocks::network::{network_to_json, parse_network};
use goldilocks::observables::localization_estimate;
use goldilocks::sweep::{collapse_check, run_sweep_with_threads, SweepConfig, SweepResult};
use goldilocks::theory;
use goldilocks::units::EnergyUnit;
use goldilocks::{
    build_preset, load_network, propagate, run_to_completion, DensityMatrix, DisorderSpec, Method,
    OpenSystemSpec, PresetKind, PropagateOptions, RunOptions, SiteNetwork,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    CollapseArgs, LocalizeArgs, NetworkArgs, SimulateArgs, SweepArgs, TheoryCommand,
};

/// Number formatting for stdout; files always carry full precision.
#[derive(Debug, Clone, Copy)]
pub struct Fmt(pub Option<usize>);

impl Fmt {
    pub fn num(self, x: f64) -> String {
        match self.0 {
            Some(k) => format!("{x:.k$}"),
            None => format!("{x:?}"),
        }
    }
}

/// Inputs of a file-producing command after unit conversion and defaulting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Resolved {
    Simulate(SimulateConfig),
    Sweep(SweepConfig),
    Localize(LocalizeConfig),
    Collapse(CollapseConfig),
}

impl Resolved {
    pub fn master_seed(&self) -> Option<u64> {
        match self {
            Resolved::Simulate(c) => c.seed,
            Resolved::Sweep(c) => Some(c.master_seed),
            Resolved::Localize(c) => c.seeds.first().copied(),
            Resolved::Collapse(_) => None,
        }
    }
}

pub struct Outcome {
    pub stdout: String,
    pub warnings: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

pub fn execute(resolved: &Resolved, out: Option<&Path>, fmt: Fmt, threads: usize) -> anyhow::Result<Outcome> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    match resolved {
        Resolved::Simulate(c) => simulate(c, out, fmt),
        Resolved::Sweep(c) => sweep(c, out.context("sweep needs an output directory")?, threads),
        Resolved::Localize(c) => localize(c, out, fmt),
        Resolved::Collapse(c) => collapse(c, out, fmt),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn one_based(site: usize, n: usize, what: &str) -> anyhow::Result<usize> {
    if site == 0 || site > n {
        bail!("{what} {site} out of range 1..={n}");
    }
    Ok(site - 1)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PresetSource {
    pub preset: PresetKind,
    pub n: usize,
    #[serde(rename = "J")]
    pub coupling: f64,
    pub disorder: DisorderSpec,
}

impl PresetSource {
    fn build(&self, seed: u64) -> goldilocks::Result<SiteNetwork> {
        build_preset(self.preset, self.n, self.coupling, &DisorderSpec { seed, ..self.disorder })
    }
}

enum NetworkChoice {
    Preset(PresetSource),
    File(SiteNetwork),
}

fn network_choice(a: &NetworkArgs, unit: EnergyUnit) -> anyhow::Result<NetworkChoice> {
    if let Some(path) = &a.network {
        return Ok(NetworkChoice::File(load_network(path)?));
    }
    let (Some(preset), Some(n), Some(j)) = (a.preset, a.n, a.coupling) else {
        bail!("give either --network FILE or all of --preset, --n and --J");
    };
    Ok(NetworkChoice::Preset(PresetSource {
        preset,
        n,
        coupling: unit.convert(j),
        disorder: DisorderSpec {
            width: unit.convert(a.disorder),
            distribution: a.distribution,
            seed: a.seed,
        },
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Network in the file schema, rad/ps.
    pub network: serde_json::Value,
    pub initial_site: usize,
    pub env: OpenSystemSpec,
    pub t_end: Option<f64>,
    pub t_max: Option<f64>,
    pub sample_dt: Option<f64>,
    pub dt: Option<f64>,
    pub method: Method,
    pub step_check: bool,
    pub seed: Option<u64>,
}

pub fn resolve_simulate(a: &SimulateArgs, unit: EnergyUnit) -> anyhow::Result<SimulateConfig> {
    let (net, seed) = match network_choice(&a.network, unit)? {
        NetworkChoice::File(net) => (net, None),
        NetworkChoice::Preset(p) => {
            let net = p.build(p.disorder.seed)?;
            let last = net.n_sites() - 1;
            (net.with_sink_site(Some(last))?, Some(p.disorder.seed))
        }
    };
    let n = net.n_sites();
    let net = match a.sink {
        Some(s) => net.with_sink_site(Some(one_based(s, n, "sink site")?))?,
        None => net,
    };
    let gamma = match a.gamma_loss {
        Some(g) => unit.convert(g),
        None => goldilocks::sweep::DEFAULT_LOSS_PER_J * net.mean_neighbor_coupling(),
    };
    Ok(SimulateConfig {
        network: serde_json::from_str(&network_to_json(&net))?,
        initial_site: one_based(a.initial, n, "initial site")?,
        env: OpenSystemSpec::new(unit.convert(a.d), a.c, unit.convert(a.kappa), gamma)?,
        t_end: a.t_end,
        t_max: a.t_max,
        sample_dt: a.sample_dt,
        dt: a.dt,
        method: a.method,
        step_check: a.step_check,
        seed,
    })
}

fn simulate(c: &SimulateConfig, out: Option<&Path>, fmt: Fmt) -> anyhow::Result<Outcome> {
    let net = parse_network(&c.network.to_string(), "resolved network")?;
    let n = net.n_sites();
    if c.initial_site >= n {
        bail!("initial site out of range");
    }
    let rho0 = DensityMatrix::site(n, c.initial_site);
    let mut stdout = String::new();
    let mut warnings = Vec::new();
    if !c.env.is_physical_on(&net) {
        warnings.push(format!(
            "noise correlation c = {} is too strong for this geometry; positivity of rho is not guaranteed",
            c.env.correlation
        ));
    }
    let mut outputs = Vec::new();
    let csv_path = out.map(|d| d.join("trajectory.csv"));
    if let Some(t_end) = c.t_end {
        let sample_dt = c.sample_dt.unwrap_or(t_end / 200.0);
        let traj = propagate(&net, &c.env, &rho0, t_end, sample_dt, &PropagateOptions {
            dt: c.dt,
            method: c.method,
        })?;
        let k = traj.len() - 1;
        writeln!(stdout, "t = {}", fmt.num(traj.times[k]))?;
        writeln!(stdout, "sink = {}", fmt.num(traj.sink_population[k]))?;
        writeln!(stdout, "loss = {}", fmt.num(traj.loss_population[k]))?;
        writeln!(stdout, "trace = {}", fmt.num(traj.states[k].trace()))?;
        writeln!(stdout, "dt = {}", fmt.num(traj.dt))?;
        if let Some(p) = csv_path {
            traj.write_csv(create(&p)?)?;
            outputs.push(p);
        }
    } else {
        let res = run_to_completion(&net, &c.env, &rho0, &RunOptions {
            t_cap: c.t_max,
            dt: c.dt,
            sample_dt: c.sample_dt,
            method: c.method,
            step_halving_check: c.step_check,
        })?;
        writeln!(stdout, "eta = {}", fmt.num(res.eta))?;
        writeln!(stdout, "loss = {}", fmt.num(res.loss))?;
        writeln!(stdout, "residual = {}", fmt.num(res.residual))?;
        writeln!(stdout, "transfer_time = {}", fmt.num(res.transfer_time))?;
        writeln!(stdout, "t_final = {}", fmt.num(res.t_final))?;
        writeln!(stdout, "dt = {}", fmt.num(res.dt))?;
        writeln!(stdout, "converged = {}", res.converged)?;
        if let Some(delta) = res.step_halving_delta {
            writeln!(stdout, "step_halving_delta = {}", fmt.num(delta))?;
        }
        warnings.extend(res.warning.clone());
        if let Some(p) = csv_path {
            res.write_csv(create(&p)?)?;
            outputs.push(p);
        }
    }
    Ok(Outcome { stdout, warnings, outputs })
}

pub fn resolve_sweep(a: &SweepArgs) -> anyhow::Result<SweepConfig> {
    Ok(SweepConfig::load(&a.config)?)
}

fn sweep(cfg: &SweepConfig, out: &Path, threads: usize) -> anyhow::Result<Outcome> {
    let res = run_sweep_with_threads(cfg, threads)?;
    let csv = out.join("sweep.csv");
    let meta = out.join("sweep.json");
    res.write_csv(create(&csv)?)?;
    std::fs::write(&meta, res.metadata_json() + "\n")
        .with_context(|| format!("writing {}", meta.display()))?;
    let flagged = res.points.iter().filter(|p| !p.flags.is_empty()).count();
    let mut stdout = String::new();
    writeln!(stdout, "points = {}", res.points.len())?;
    writeln!(stdout, "flagged = {flagged}")?;
    writeln!(stdout, "config_hash = {}", res.metadata.config_hash)?;
    writeln!(stdout, "csv = {}", csv.display())?;
    let warnings = if flagged > 0 {
        vec![format!("{flagged} grid points flagged, see the flags column")]
    } else {
        Vec::new()
    };
    Ok(Outcome { stdout, warnings, outputs: vec![csv, meta] })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Preset(PresetSource),
    File(serde_json::Value),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub source: NetworkSource,
    pub delta_omega: f64,
    pub origin: usize,
    pub seeds: Vec<u64>,
}

pub fn resolve_localize(a: &LocalizeArgs, unit: EnergyUnit) -> anyhow::Result<LocalizeConfig> {
    if a.realizations == 0 {
        bail!("--realizations must be at least 1");
    }
    let (source, n, seeds) = match network_choice(&a.network, unit)? {
        NetworkChoice::File(net) => {
            if a.realizations > 1 {
                bail!("--realizations needs a preset network");
            }
            let n = net.n_sites();
            (NetworkSource::File(serde_json::from_str(&network_to_json(&net))?), n, vec![0])
        }
        NetworkChoice::Preset(p) => {
            let seeds = (0..a.realizations as u64).map(|k| p.disorder.seed.wrapping_add(k)).collect();
            (NetworkSource::Preset(p), p.n, seeds)
        }
    };
    let delta_omega = match (a.delta_omega, &source) {
        (Some(w), _) => unit.convert(w),
        (None, NetworkSource::Preset(p)) => p.disorder.width,
        (None, NetworkSource::File(_)) => bail!("--delta-omega is required with --network"),
    };
    let origin = match a.origin {
        Some(o) => one_based(o, n, "origin")?,
        None => n / 2,
    };
    Ok(LocalizeConfig { source, delta_omega, origin, seeds })
}

fn localize(c: &LocalizeConfig, out: Option<&Path>, fmt: Fmt) -> anyhow::Result<Outcome> {
    let mut rows = Vec::new();
    for &seed in &c.seeds {
        let net = match &c.source {
            NetworkSource::Preset(p) => p.build(seed)?,
            NetworkSource::File(v) => parse_network(&v.to_string(), "resolved network")?,
        };
        rows.push((seed, localization_estimate(&net, c.delta_omega, c.origin)?));
    }
    let m = rows.len() as f64;
    let mean = |f: &dyn Fn(&goldilocks::LocalizationEstimate) -> f64| {
        rows.iter().map(|(_, e)| f(e)).sum::<f64>() / m
    };
    let capped = rows.iter().filter(|(_, e)| e.capped).count();
    let mut stdout = String::new();
    writeln!(stdout, "ell_theory = {}", fmt.num(mean(&|e| e.ell_theory)))?;
    writeln!(stdout, "ell_ipr = {}", fmt.num(mean(&|e| e.ell_ipr)))?;
    writeln!(stdout, "ell_dynamic = {}", fmt.num(mean(&|e| e.ell_dynamic)))?;
    let mut dynamic: Vec<f64> = rows.iter().map(|(_, e)| e.ell_dynamic).collect();
    dynamic.sort_by(f64::total_cmp);
    let mid = dynamic.len() / 2;
    let median = if dynamic.len() % 2 == 0 { 0.5 * (dynamic[mid - 1] + dynamic[mid]) } else { dynamic[mid] };
    writeln!(stdout, "ell_dynamic_median = {}", fmt.num(median))?;
    writeln!(stdout, "tau = {}", fmt.num(mean(&|e| e.tau)))?;
    writeln!(stdout, "capped = {capped}/{}", rows.len())?;
    let p = rows[0].1.plateau;
    writeln!(
        stdout,
        "plateau_window = {} {}  slope_threshold = {}  saturation_fraction = {}",
        fmt.num(p.window.0),
        fmt.num(p.window.1),
        p.slope_threshold,
        p.saturation_fraction
    )?;
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        use std::io::Write;
        let path = dir.join("localization.csv");
        let mut w = create(&path)?;
        writeln!(w, "seed,ell_theory,ell_ipr,ell_dynamic,tau,capped,plateau_slope")?;
        for (seed, e) in &rows {
            writeln!(
                w,
                "{seed},{},{},{},{},{},{}",
                e.ell_theory, e.ell_ipr, e.ell_dynamic, e.tau, e.capped, e.plateau.slope
            )?;
        }
        w.flush()?;
        outputs.push(path);
    }
    let warnings = if capped > 0 {
        vec![format!("{capped} of {} runs found no localization plateau (ell_dynamic capped at n-1)", rows.len())]
    } else {
        Vec::new()
    };
    Ok(Outcome { stdout, warnings, outputs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseConfig {
    pub inputs: Vec<PathBuf>,
}

pub fn resolve_collapse(a: &CollapseArgs) -> CollapseConfig {
    CollapseConfig { inputs: a.inputs.clone() }
}

const COLLAPSE_HEADER: &str =
    "source,family,peak_lambda,peak_d,peak_eta,min_eta,plateau_lo,plateau_hi,plateau_decades,flags";

fn collapse(c: &CollapseConfig, out: Option<&Path>, fmt: Fmt) -> anyhow::Result<Outcome> {
    let mut stdout = String::from(COLLAPSE_HEADER);
    stdout.push('\n');
    let mut file = String::from(COLLAPSE_HEADER);
    file.push('\n');
    let mut warnings = Vec::new();
    for path in &c.inputs {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let res = SweepResult::read_csv(f).with_context(|| format!("reading {}", path.display()))?;
        for r in collapse_check(&[res])? {
            let mut flags = Vec::new();
            if r.plateau_truncated {
                flags.push("plateau-truncated");
            }
            if r.unconverged {
                flags.push("unconverged");
                warnings.push(format!("{} [{}]: efficiency curve is flat", path.display(), r.label));
            }
            let label = if r.label.contains(',') { format!("\"{}\"", r.label) } else { r.label.clone() };
            let nums = [
                r.peak_lambda,
                r.peak_d,
                r.peak_eta,
                r.min_eta,
                r.plateau.0,
                r.plateau.1,
                r.plateau_decades,
            ];
            let shown: Vec<String> = nums.iter().map(|&x| fmt.num(x)).collect();
            let full: Vec<String> = nums.iter().map(|x| format!("{x}")).collect();
            let src = path.display();
            writeln!(stdout, "{src},{label},{},{}", shown.join(","), flags.join(";"))?;
            writeln!(file, "{src},{label},{},{}", full.join(","), flags.join(";"))?;
        }
    }
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        let path = dir.join("collapse.csv");
        std::fs::write(&path, file).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    Ok(Outcome { stdout, warnings, outputs })
}

/// Evaluates a closed-form estimator. Rates are printed in `unit`.
pub fn theory_command(cmd: &TheoryCommand, unit: EnergyUnit, fmt: Fmt) -> anyhow::Result<String> {
    let e = |x: f64| unit.convert(x);
    let back = |x: f64| unit.from_rad_ps(x);
    let line = |x: f64| format!("{}\n", fmt.num(x));
    Ok(match *cmd {
        TheoryCommand::Lambda { d, ell, j } => line(theory::lambda_param(e(d), ell, e(j))?),
        TheoryCommand::LambdaLocalized { d, omega, j, delta } => {
            let value = match (omega, j, delta) {
                (Some(w), None, None) => theory::lambda_localized(e(d), e(w), 0.0)?,
                (None, Some(j), delta) => theory::lambda_localized(e(d), e(j), e(delta.unwrap_or(0.0)))?,
                (None, None, Some(delta)) => theory::lambda_localized(e(d), 0.0, e(delta))?,
                _ => bail!("give --omega, or --J and/or --delta"),
            };
            line(value)
        }
        TheoryCommand::Dstar { j, ell, delta_omega, n } => {
            let ell = match (ell, delta_omega, n) {
                (Some(ell), _, _) => ell,
                (None, Some(w), Some(n)) => theory::theory_localization(e(j), e(w), n),
                _ => bail!("give --ell, or --delta-omega with --n"),
            };
            line(back(theory::optimal_dephasing(e(j), ell)?))
        }
        TheoryCommand::Ell { j, delta_omega, n } => {
            if !(j > 0.0 && delta_omega >= 0.0 && n >= 2) {
                bail!("need J > 0, delta-omega >= 0 and n >= 2");
            }
            line(theory::theory_localization(e(j), e(delta_omega), n))
        }
        TheoryCommand::Tau { j, ell } => line(theory::localization_time(e(j), ell)?),
        TheoryCommand::Splitting { j, ell } => line(back(theory::band_splitting(e(j), ell)?)),
        TheoryCommand::TwoState { j, delta } => {
            let r = theory::two_state(e(j), e(delta))?;
            format!(
                "p_max = {}\nomega = {}\nt_peak = {}\n",
                fmt.num(r.p_max),
                fmt.num(back(r.omega)),
                fmt.num(r.t_peak)
            )
        }
        TheoryCommand::Spread { t, j, ell } => line(theory::optimal_spread(t, e(j), ell)?),
        TheoryCommand::Decoherence { ref bath } => line(back(theory::decoherence_rate(
            bath.alpha,
            bath.c,
            e(bath.lambda_reorg),
            e(bath.kt),
            e(bath.gamma),
        )?)),
        TheoryCommand::Micro { ref bath, delta_e } => {
            let p = theory::MicroParams {
                alpha: bath.alpha,
                c: bath.c,
                lambda_reorg: e(bath.lambda_reorg),
                kt: e(bath.kt),
                gamma: e(bath.gamma),
                delta_e: e(delta_e),
            };
            format!(
                "lambda = {}\nd = {}\n",
                fmt.num(theory::lambda_micro(&p)?),
                fmt.num(back(p.decoherence_rate()?))
            )
        }
    })
}
