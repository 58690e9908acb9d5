//! Seeded, disorder-averaged parameter sweeps and the Λ-collapse check.
//!
//! Every (grid point, realization) pair is an independent work item whose
//! disorder seed is a pure function of the master seed, the grid indices and
//! the realization index. Results are reduced in index order, so the output
//! does not depend on how many workers ran the sweep.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    propagate, run_to_completion, DensityMatrix, OpenSystemSpec, PropagateOptions, RunOptions,
};
use crate::error::{Error, Result};
use crate::network::{build_preset, DisorderDistribution, DisorderSpec, PresetKind};
use crate::observables::{fit_diffusion, msd_curve};
use crate::theory;
use crate::units::EnergyUnit;

/// Default cap on the number of propagations in one sweep.
pub const DEFAULT_BUDGET: u64 = 100_000;
/// Default recombination rate in units of the coupling J.
pub const DEFAULT_LOSS_PER_J: f64 = 1e-3;
/// Fraction of the peak efficiency that defines the plateau.
pub const PLATEAU_FRACTION: f64 = 0.9;
/// A family whose efficiency varies less than this is flagged unconverged.
pub const FLAT_CURVE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "d")]
    Dephasing,
    #[serde(rename = "J")]
    Coupling,
    #[serde(rename = "delta_omega")]
    Disorder,
    #[serde(rename = "c")]
    Correlation,
    #[serde(rename = "kappa")]
    SinkRate,
    #[serde(rename = "gamma")]
    LossRate,
}

impl AxisName {
    pub fn label(self) -> &'static str {
        match self {
            AxisName::Dephasing => "d",
            AxisName::Coupling => "J",
            AxisName::Disorder => "delta_omega",
            AxisName::Correlation => "c",
            AxisName::SinkRate => "kappa",
            AxisName::LossRate => "gamma",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [
            AxisName::Dephasing,
            AxisName::Coupling,
            AxisName::Disorder,
            AxisName::Correlation,
            AxisName::SinkRate,
            AxisName::LossRate,
        ]
        .into_iter()
        .find(|a| a.label() == s)
    }

    /// True for axes carrying an energy or rate (converted by the config unit).
    fn is_energy(self) -> bool {
        self != AxisName::Correlation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

/// One grid axis. Exactly one of `values`, `log` or `linear` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: AxisName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Spacing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Spacing>,
}

impl AxisSpec {
    pub fn values(name: AxisName, values: Vec<f64>) -> Self {
        AxisSpec { name, values: Some(values), log: None, linear: None }
    }

    pub fn log(name: AxisName, start: f64, stop: f64, count: usize) -> Self {
        AxisSpec { name, values: None, log: Some(Spacing { start, stop, count }), linear: None }
    }

    /// Grid values in the config's unit.
    pub fn resolve(&self) -> Result<Vec<f64>> {
        let name = self.name.label();
        let vals = match (&self.values, &self.log, &self.linear) {
            (Some(v), None, None) => v.clone(),
            (None, Some(s), None) => {
                if !(s.start > 0.0 && s.stop > 0.0) {
                    return Err(Error::invalid(format!("axis {name}: log spacing needs positive ends")));
                }
                spaced(s, |x| x.log10(), |y| 10f64.powf(y))
            }
            (None, None, Some(s)) => spaced(s, |x| x, |y| y),
            _ => {
                return Err(Error::invalid(format!(
                    "axis {name}: give exactly one of values, log, linear"
                )))
            }
        };
        if vals.is_empty() {
            return Err(Error::invalid(format!("axis {name} is empty")));
        }
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("axis {name} has non-finite value {v}")));
        }
        Ok(vals)
    }
}

fn spaced(s: &Spacing, fwd: impl Fn(f64) -> f64, back: impl Fn(f64) -> f64) -> Vec<f64> {
    match s.count {
        0 => Vec::new(),
        1 => vec![s.start],
        c => {
            let (a, b) = (fwd(s.start), fwd(s.stop));
            (0..c)
                .map(|i| match i {
                    0 => s.start,
                    i if i == c - 1 => s.stop,
                    i => back(a + (b - a) * i as f64 / (c - 1) as f64),
                })
                .collect()
        }
    }
}

/// Preset network used at every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTemplate {
    pub preset: PresetKind,
    pub n: usize,
    #[serde(rename = "J")]
    pub coupling: f64,
    /// Zero-based; defaults to the last site.
    #[serde(default)]
    pub sink_site: Option<usize>,
    /// Zero-based site the exciton starts on; defaults to 0.
    #[serde(default)]
    pub initial_site: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderTemplate {
    pub width: f64,
    #[serde(default)]
    pub distribution: DisorderDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentTemplate {
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub kappa: f64,
    /// Defaults to 0.001·J at each grid point.
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Eta,
    TransferTime,
    Diffusion,
}

/// Spreading measurement run alongside the efficiency: sink and loss off,
/// r(t) from `origin` fitted on `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub origin: usize,
    pub window: (f64, f64),
}

/// A sweep over a grid of parameters, each point averaged over
/// `realizations` disorder draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Unit of every energy and rate in this config (grid values included).
    #[serde(default)]
    pub unit: EnergyUnit,
    pub network: NetworkTemplate,
    pub disorder: DisorderTemplate,
    pub environment: EnvironmentTemplate,
    pub axes: Vec<AxisSpec>,
    pub realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Observable>,
    #[serde(default)]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(default)]
    pub budget: Option<u64>,
}

fn default_outputs() -> Vec<Observable> {
    vec![Observable::Eta, Observable::TransferTime]
}

impl SweepConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            path: origin.to_string(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn wants(&self, o: Observable) -> bool {
        self.outputs.contains(&o)
    }

    fn validate(&self) -> Result<Vec<Vec<f64>>> {
        if self.realizations == 0 {
            return Err(Error::invalid("realizations must be >= 1"));
        }
        if self.axes.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis"));
        }
        let mut seen = Vec::new();
        for a in &self.axes {
            if seen.contains(&a.name) {
                return Err(Error::invalid(format!("axis {} given twice", a.name.label())));
            }
            seen.push(a.name);
        }
        let n = self.network.n;
        if self.network.initial_site >= n {
            return Err(Error::invalid("initial_site out of range"));
        }
        if matches!(self.network.sink_site, Some(s) if s >= n) {
            return Err(Error::invalid("sink_site out of range"));
        }
        if self.wants(Observable::Diffusion) {
            match self.diffusion {
                Some(d) if d.origin < n && d.window.0 > 0.0 && d.window.0 < d.window.1 => {}
                Some(_) => return Err(Error::invalid("diffusion origin or window invalid")),
                None => return Err(Error::invalid("diffusion output needs a `diffusion` block")),
            }
        }
        self.axes.iter().map(AxisSpec::resolve).collect()
    }
}

/// Per-realization disorder seed: SplitMix64 folded over the master seed, the
/// grid indices and the realization index.
pub fn realization_seed(master_seed: u64, axis_indices: &[usize], realization: usize) -> u64 {
    let mut h = splitmix64(master_seed ^ 0x9e37_79b9_7f4a_7c15);
    for &i in axis_indices {
        h = splitmix64(h ^ (i as u64));
    }
    splitmix64(h ^ (realization as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let stderr = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, stderr, count: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub indices: Vec<usize>,
    /// Axis values in rad/ps (c dimensionless).
    pub coords: Vec<f64>,
    pub lambda: f64,
    /// d / 2√(J² + Δω²), reported when ℓ clamps to one site.
    pub lambda_localized: Option<f64>,
    pub eta: Option<Stat>,
    pub transfer_time: Option<Stat>,
    pub loss: Option<Stat>,
    pub diffusion_exponent: Option<Stat>,
    pub diffusion_constant: Option<Stat>,
    pub flags: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub realizations: usize,
    pub seed_function: String,
    pub config: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axes: Vec<(AxisName, Vec<f64>)>,
    pub points: Vec<SweepPoint>,
    pub metadata: SweepMetadata,
}

#[derive(Debug, Clone, Copy)]
struct PointParams {
    d: f64,
    j: f64,
    width: f64,
    c: f64,
    kappa: f64,
    gamma: f64,
}

#[derive(Debug, Clone)]
struct RealizationOutcome {
    eta: f64,
    transfer_time: f64,
    loss: f64,
    non_converged: bool,
    unphysical: bool,
    diffusion: Option<(f64, f64)>,
    failure: Option<String>,
}

fn point_params(cfg: &SweepConfig, axes: &[(AxisName, Vec<f64>)], idx: &[usize]) -> PointParams {
    let u = cfg.unit;
    let mut p = PointParams {
        d: u.convert(cfg.environment.d),
        j: u.convert(cfg.network.coupling),
        width: u.convert(cfg.disorder.width),
        c: cfg.environment.c,
        kappa: u.convert(cfg.environment.kappa),
        gamma: f64::NAN,
    };
    let mut gamma = cfg.environment.gamma.map(|g| u.convert(g));
    for ((name, values), &i) in axes.iter().zip(idx) {
        let v = values[i];
        match name {
            AxisName::Dephasing => p.d = v,
            AxisName::Coupling => p.j = v,
            AxisName::Disorder => p.width = v,
            AxisName::Correlation => p.c = v,
            AxisName::SinkRate => p.kappa = v,
            AxisName::LossRate => gamma = Some(v),
        }
    }
    p.gamma = gamma.unwrap_or(DEFAULT_LOSS_PER_J * p.j);
    p
}

fn run_realization(cfg: &SweepConfig, p: PointParams, seed: u64) -> RealizationOutcome {
    let attempt = || -> Result<RealizationOutcome> {
        let n = cfg.network.n;
        let disorder = DisorderSpec {
            width: p.width,
            distribution: cfg.disorder.distribution,
            seed,
        };
        let sink = cfg.network.sink_site.unwrap_or(n - 1);
        let net = build_preset(cfg.network.preset, n, p.j, &disorder)?.with_sink_site(Some(sink))?;
        let env = OpenSystemSpec::new(p.d, p.c, p.kappa, p.gamma)?;
        let unphysical = !env.is_physical_on(&net);
        let rho0 = DensityMatrix::site(n, cfg.network.initial_site);
        let out = run_to_completion(&net, &env, &rho0, &RunOptions {
            t_cap: cfg.t_max,
            dt: cfg.dt,
            ..Default::default()
        })?;
        let diffusion = match (cfg.wants(Observable::Diffusion), cfg.diffusion) {
            (true, Some(spec)) => {
                let free = OpenSystemSpec::new(p.d, p.c, 0.0, 0.0)?;
                let start = DensityMatrix::site(n, spec.origin);
                let t_end = spec.window.1;
                let traj = propagate(&net, &free, &start, t_end, t_end / 400.0, &PropagateOptions {
                    dt: cfg.dt,
                    ..Default::default()
                })?;
                let fit = fit_diffusion(&msd_curve(&net, &traj, spec.origin)?, spec.window)?;
                Some((fit.exponent, fit.diffusion_constant()))
            }
            _ => None,
        };
        Ok(RealizationOutcome {
            eta: out.eta,
            transfer_time: out.transfer_time,
            loss: out.loss,
            non_converged: out.warning.is_some(),
            unphysical,
            diffusion,
            failure: None,
        })
    };
    attempt().unwrap_or_else(|e| RealizationOutcome {
        eta: f64::NAN,
        transfer_time: f64::NAN,
        loss: f64::NAN,
        non_converged: false,
        unphysical: false,
        diffusion: None,
        failure: Some(e.to_string()),
    })
}

fn grid_indices(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

/// Runs the sweep on the global rayon pool.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    run_sweep_with_threads(cfg, 0)
}

/// Runs the sweep on a dedicated pool of `threads` workers (0 = one per core).
pub fn run_sweep_with_threads(cfg: &SweepConfig, threads: usize) -> Result<SweepResult> {
    let resolved = cfg.validate()?;
    let axes: Vec<(AxisName, Vec<f64>)> = cfg
        .axes
        .iter()
        .zip(resolved)
        .map(|(a, vals)| {
            let vals = if a.name.is_energy() {
                vals.into_iter().map(|v| cfg.unit.convert(v)).collect()
            } else {
                vals
            };
            (a.name, vals)
        })
        .collect();
    let shape: Vec<usize> = axes.iter().map(|(_, v)| v.len()).collect();
    let n_points: usize = shape.iter().product();
    let per_realization = if cfg.wants(Observable::Diffusion) { 2 } else { 1 };
    let estimated = (n_points as u64)
        .saturating_mul(cfg.realizations as u64)
        .saturating_mul(per_realization);
    let cap = cfg.budget.unwrap_or(DEFAULT_BUDGET);
    if estimated > cap {
        return Err(Error::BudgetExceeded { estimated, cap });
    }

    let items: Vec<(usize, usize)> = (0..n_points)
        .flat_map(|p| (0..cfg.realizations).map(move |r| (p, r)))
        .collect();
    let work = |&(p, r): &(usize, usize)| {
        let idx = grid_indices(&shape, p);
        let seed = realization_seed(cfg.master_seed, &idx, r);
        (seed, run_realization(cfg, point_params(cfg, &axes, &idx), seed))
    };
    let outcomes: Vec<(u64, RealizationOutcome)> = if threads == 0 {
        items.par_iter().map(work).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(|| items.par_iter().map(work).collect())
    };

    let points = outcomes
        .chunks(cfg.realizations)
        .enumerate()
        .map(|(p, chunk)| {
            let idx = grid_indices(&shape, p);
            let params = point_params(cfg, &axes, &idx);
            aggregate(cfg, &axes, idx, params, chunk)
        })
        .collect();

    Ok(SweepResult {
        axes,
        points,
        metadata: SweepMetadata {
            config_hash: cfg.hash(),
            code_version: crate::CODE_VERSION.to_string(),
            master_seed: cfg.master_seed,
            realizations: cfg.realizations,
            seed_function: "splitmix64(master_seed, axis indices, realization)".into(),
            config: Some(cfg.clone()),
        },
    })
}

fn aggregate(
    cfg: &SweepConfig,
    axes: &[(AxisName, Vec<f64>)],
    idx: Vec<usize>,
    p: PointParams,
    chunk: &[(u64, RealizationOutcome)],
) -> SweepPoint {
    let coords = axes.iter().zip(&idx).map(|((_, v), &i)| v[i]).collect();
    let ell = theory::theory_localization(p.j, p.width, cfg.network.n);
    let lambda = p.d * ell / (2.0 * p.j);
    let lambda_localized = (ell <= 1.0)
        .then(|| theory::lambda_localized(p.d, p.j, p.width).ok())
        .flatten();

    let ok: Vec<&RealizationOutcome> = chunk.iter().map(|(_, o)| o).filter(|o| o.failure.is_none()).collect();
    let failures = chunk.len() - ok.len();
    let non_converged = ok.iter().filter(|o| o.non_converged).count();
    let mut flags = Vec::new();
    if failures > 0 {
        flags.push(format!("integration-failure:{failures}"));
    }
    if non_converged > 0 {
        flags.push(format!("non-converged:{non_converged}"));
    }
    let unphysical = ok.iter().filter(|o| o.unphysical).count();
    if unphysical > 0 {
        flags.push(format!("unphysical-correlation:{unphysical}"));
    }
    let diffusion = cfg.wants(Observable::Diffusion);
    SweepPoint {
        indices: idx,
        coords,
        lambda,
        lambda_localized,
        eta: Stat::of(ok.iter().map(|o| o.eta)),
        transfer_time: Stat::of(ok.iter().map(|o| o.transfer_time)),
        loss: Stat::of(ok.iter().map(|o| o.loss)),
        diffusion_exponent: diffusion
            .then(|| Stat::of(ok.iter().filter_map(|o| o.diffusion.map(|d| d.0))))
            .flatten(),
        diffusion_constant: diffusion
            .then(|| Stat::of(ok.iter().filter_map(|o| o.diffusion.map(|d| d.1))))
            .flatten(),
        flags,
        seeds: chunk.iter().map(|(s, _)| *s).collect(),
    }
}

const FIXED_COLUMNS: [&str; 5] = ["lambda", "eta_mean", "eta_stderr", "transfer_time_mean", "flags"];
const EXTRA_COLUMNS: [&str; 5] = [
    "lambda_localized",
    "diffusion_exponent_mean",
    "diffusion_exponent_stderr",
    "diffusion_constant_mean",
    "diffusion_constant_stderr",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl SweepResult {
    /// Writes the result table: axis columns, then
    /// `lambda,eta_mean,eta_stderr,transfer_time_mean,flags`, then the
    /// optional diagnostics. LF line endings, fixed column order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.axes.iter().map(|(a, _)| a.label()).collect();
        header.extend(FIXED_COLUMNS);
        header.extend(EXTRA_COLUMNS);
        writeln!(out, "{}", header.join(","))?;
        for p in &self.points {
            let mut row: Vec<String> = p.coords.iter().map(|c| format!("{c}")).collect();
            row.push(format!("{}", p.lambda));
            row.push(fmt_opt(p.eta.map(|s| s.mean)));
            row.push(fmt_opt(p.eta.map(|s| s.stderr)));
            row.push(fmt_opt(p.transfer_time.map(|s| s.mean)));
            row.push(p.flags.join(";"));
            row.push(fmt_opt(p.lambda_localized));
            row.push(fmt_opt(p.diffusion_exponent.map(|s| s.mean)));
            row.push(fmt_opt(p.diffusion_exponent.map(|s| s.stderr)));
            row.push(fmt_opt(p.diffusion_constant.map(|s| s.mean)));
            row.push(fmt_opt(p.diffusion_constant.map(|s| s.stderr)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// JSON sidecar: config hash, code version, seeds.
    pub fn metadata_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            #[serde(flatten)]
            meta: &'a SweepMetadata,
            axes: Vec<(&'static str, &'a [f64])>,
            seeds: Vec<&'a [u64]>,
        }
        serde_json::to_string_pretty(&Sidecar {
            meta: &self.metadata,
            axes: self.axes.iter().map(|(a, v)| (a.label(), v.as_slice())).collect(),
            seeds: self.points.iter().map(|p| p.seeds.as_slice()).collect(),
        })
        .expect("metadata serializes")
    }

    /// Reads back a table written by [`SweepResult::write_csv`]. Only axis
    /// values, Λ, η and the flags are recovered.
    pub fn read_csv<R: Read>(input: R) -> Result<SweepResult> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("sweep csv lacks column `{name}`")))
        };
        let lambda_col = col("lambda")?;
        let eta_col = col("eta_mean")?;
        let se_col = col("eta_stderr")?;
        let flags_col = col("flags")?;
        let ll_col = headers.iter().position(|h| h == "lambda_localized");
        let mut names = Vec::new();
        for h in headers.iter().take(lambda_col) {
            names.push(
                AxisName::from_label(h)
                    .ok_or_else(|| Error::invalid(format!("unknown axis column `{h}`")))?,
            );
        }
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::invalid(format!("bad number `{s}` in sweep csv")))
            }
        };
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut coords = Vec::with_capacity(names.len());
            let mut indices = Vec::with_capacity(names.len());
            for (k, vals) in values.iter_mut().enumerate() {
                let v = parse(&rec[k])?.ok_or_else(|| Error::invalid("empty axis value"))?;
                let i = match vals.iter().position(|x| *x == v) {
                    Some(i) => i,
                    None => {
                        vals.push(v);
                        vals.len() - 1
                    }
                };
                coords.push(v);
                indices.push(i);
            }
            let eta = parse(&rec[eta_col])?.map(|mean| Stat {
                mean,
                stderr: parse(&rec[se_col]).ok().flatten().unwrap_or(0.0),
                count: 0,
            });
            points.push(SweepPoint {
                indices,
                coords,
                lambda: parse(&rec[lambda_col])?.unwrap_or(f64::NAN),
                lambda_localized: ll_col.and_then(|c| parse(&rec[c]).ok().flatten()),
                eta,
                transfer_time: None,
                loss: None,
                diffusion_exponent: None,
                diffusion_constant: None,
                flags: rec[flags_col].split(';').filter(|s| !s.is_empty()).map(String::from).collect(),
                seeds: Vec::new(),
            });
        }
        Ok(SweepResult {
            axes: names.into_iter().zip(values).collect(),
            points,
            metadata: SweepMetadata {
                config_hash: String::new(),
                code_version: String::new(),
                master_seed: 0,
                realizations: 0,
                seed_function: String::new(),
                config: None,
            },
        })
    }
}

/// Peak and plateau of η(Λ) for one family (fixed values of the non-d axes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    /// Non-d axis values identifying the family, e.g. `J=1,delta_omega=2`.
    pub label: String,
    pub peak_lambda: f64,
    pub peak_d: f64,
    pub peak_eta: f64,
    pub min_eta: f64,
    /// Λ interval on which η ≥ 0.9 η_max, edges interpolated in log Λ.
    pub plateau: (f64, f64),
    pub plateau_decades: f64,
    /// The plateau reaches the end of the grid, so its width is a lower bound.
    pub plateau_truncated: bool,
    /// max η − min η < 0.01.
    pub unconverged: bool,
}

/// Reports, for every family in every result, where η peaks in Λ and how
/// wide the 90 % plateau is.
pub fn collapse_check(results: &[SweepResult]) -> Result<Vec<FamilyReport>> {
    let mut reports = Vec::new();
    for res in results {
        let d_axis = res
            .axes
            .iter()
            .position(|(a, _)| *a == AxisName::Dephasing)
            .ok_or_else(|| Error::invalid("collapse check needs a `d` axis"))?;
        let mut families: BTreeMap<Vec<usize>, Vec<&SweepPoint>> = BTreeMap::new();
        for p in &res.points {
            let key: Vec<usize> = p
                .indices
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != d_axis)
                .map(|(_, &i)| i)
                .collect();
            families.entry(key).or_default().push(p);
        }
        for pts in families.values() {
            let label = res
                .axes
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != d_axis)
                .map(|(k, (a, _))| format!("{}={}", a.label(), pts[0].coords[k]))
                .collect::<Vec<_>>()
                .join(",");
            reports.push(family_report(label, pts, d_axis)?);
        }
    }
    Ok(reports)
}

fn family_report(label: String, pts: &[&SweepPoint], d_axis: usize) -> Result<FamilyReport> {
    let mut curve: Vec<(f64, f64, f64)> = pts
        .iter()
        .filter(|p| p.lambda > 0.0 && p.lambda.is_finite())
        .filter_map(|p| p.eta.map(|e| (p.lambda, p.coords[d_axis], e.mean)))
        .filter(|(_, _, e)| e.is_finite())
        .collect();
    if curve.is_empty() {
        return Err(Error::invalid(format!("family `{label}` has no usable points")));
    }
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (peak_i, &(peak_lambda, peak_d, peak_eta)) = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
        .expect("non-empty");
    let min_eta = curve.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let level = PLATEAU_FRACTION * peak_eta;

    let crossing = |inside: (f64, f64, f64), outside: (f64, f64, f64)| {
        let (la, lb) = (inside.0.ln(), outside.0.ln());
        let f = (inside.2 - level) / (inside.2 - outside.2);
        (la + f * (lb - la)).exp()
    };
    let mut lo_i = peak_i;
    while lo_i > 0 && curve[lo_i - 1].2 >= level {
        lo_i -= 1;
    }
    let mut hi_i = peak_i;
    while hi_i + 1 < curve.len() && curve[hi_i + 1].2 >= level {
        hi_i += 1;
    }
    let mut truncated = false;
    let lo = if lo_i == 0 {
        truncated = true;
        curve[0].0
    } else {
        crossing(curve[lo_i], curve[lo_i - 1])
    };
    let hi = if hi_i + 1 == curve.len() {
        truncated = true;
        curve[hi_i].0
    } else {
        crossing(curve[hi_i], curve[hi_i + 1])
    };
    Ok(FamilyReport {
        label,
        peak_lambda,
        peak_d,
        peak_eta,
        min_eta,
        plateau: (lo, hi),
        plateau_decades: (hi / lo).log10(),
        plateau_truncated: truncated,
        unconverged: peak_eta - min_eta < FLAT_CURVE,
    })
}
