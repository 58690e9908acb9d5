//! Open-system propagation: coherent hopping, pure dephasing with neighbour
//! noise correlation, trapping at a sink site and uniform recombination.

mod generator;
mod propagator;

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{hamiltonian, SiteNetwork};
use generator::Generator;
use propagator::{DirectRk4, Engine, MatrixRk4, State};

/// Default RK4 step as a fraction of the inverse fastest rate.
pub const DEFAULT_STEP_FRACTION: f64 = 0.05;
/// Remaining population below which a run counts as finished.
pub const TRACE_FLOOR: f64 = 1e-6;
/// Remaining population above which hitting `t_max` raises a warning.
pub const NON_CONVERGED_TRACE: f64 = 0.01;
/// Networks up to this size use the transfer-matrix engine under `Method::Auto`.
pub const MATRIX_ENGINE_MAX_SITES: usize = 16;

/// Environment coupling: dephasing `d`, neighbour noise correlation `c`,
/// sink rate κ and loss rate Γ (all rates in 1/ps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSystemSpec {
    pub dephasing: f64,
    #[serde(default)]
    pub correlation: f64,
    #[serde(default)]
    pub sink_rate: f64,
    #[serde(default)]
    pub loss_rate: f64,
}

impl OpenSystemSpec {
    pub fn new(dephasing: f64, correlation: f64, sink_rate: f64, loss_rate: f64) -> Result<Self> {
        let spec = OpenSystemSpec {
            dephasing,
            correlation,
            sink_rate,
            loss_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Closed system: no dephasing, no sink, no loss.
    pub fn coherent() -> Self {
        OpenSystemSpec {
            dephasing: 0.0,
            correlation: 0.0,
            sink_rate: 0.0,
            loss_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dephasing rate", self.dephasing),
            ("sink rate", self.sink_rate),
            ("loss rate", self.loss_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(Error::invalid(format!(
                "noise correlation must lie in [-1, 1], got {}",
                self.correlation
            )));
        }
        Ok(())
    }

    /// Smallest eigenvalue of the site-noise covariance (I + c·A), A the
    /// nearest-neighbour adjacency, restricted to zero-sum vectors. The
    /// dephasing generator is completely positive iff this is >= 0.
    pub fn noise_covariance_margin(&self, net: &SiteNetwork) -> f64 {
        let n = net.n_sites();
        let mut cov = DMatrix::<f64>::identity(n, n);
        for (a, b) in net.neighbor_pairs() {
            cov[(a, b)] = self.correlation;
            cov[(b, a)] = self.correlation;
        }
        // project out the uniform vector, which the dephasing never sees
        let p = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let reduced = &p * cov * &p;
        let eig = SymmetricEigen::new(reduced).eigenvalues;
        // the projector adds one zero eigenvalue; drop the one closest to 0
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        vals.into_iter().skip(1).fold(f64::INFINITY, f64::min)
    }

    /// False when the correlation `c` is too strong for the network geometry:
    /// the dynamics then need not keep ρ positive.
    pub fn is_physical_on(&self, net: &SiteNetwork) -> bool {
        self.dephasing == 0.0 || self.noise_covariance_margin(net) >= -1e-12
    }
}

/// A Hermitian, unit-trace, positive semidefinite density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    /// |i⟩⟨i| on `n` sites.
    pub fn site(n: usize, i: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        m[(i, i)] = C64::new(1.0, 0.0);
        DensityMatrix(m)
    }

    /// Wraps a matrix without checks; [`propagate`] validates its input.
    pub fn from_matrix(m: DMatrix<C64>) -> Self {
        DensityMatrix(m)
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }

    /// Largest |ρ − ρ†| entry.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// ⟨H⟩ = Tr(Hρ) for a real symmetric H.
    pub fn expectation(&self, h: &DMatrix<f64>) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += h[(i, j)] * self.0[(j, i)].re;
            }
        }
        acc
    }

    fn to_state(&self) -> State {
        let n = self.dim();
        let mut rho = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                rho.push(self.0[(i, j)]);
            }
        }
        State {
            rho,
            sink: 0.0,
            loss: 0.0,
        }
    }

    fn from_state(state: &State, n: usize) -> Self {
        DensityMatrix(DMatrix::from_row_slice(n, n, &state.rho))
    }
}

/// Integration engine selection. Both engines run the same fixed-step RK4
/// scheme; `Auto` picks the transfer matrix for small networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Auto,
    Direct,
    Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagateOptions {
    /// RK4 step override (ps); default is 0.05 / max(ρ(H), d, κ, Γ).
    pub dt: Option<f64>,
    pub method: Method,
}

/// Density-matrix snapshots on a time grid with the sink/loss accumulators.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub sink_population: Vec<f64>,
    pub loss_population: Vec<f64>,
    /// RK4 step actually used (ps).
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Tr ρ + sink + loss at snapshot `k`.
    pub fn total_population(&self, k: usize) -> f64 {
        self.states[k].trace() + self.sink_population[k] + self.loss_population[k]
    }

    /// Writes `time,site_0..site_{n-1},sink,loss` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, DensityMatrix::dim);
        write_population_header(&mut out, n)?;
        for k in 0..self.len() {
            write_population_row(
                &mut out,
                self.times[k],
                &self.states[k].populations(),
                self.sink_population[k],
                self.loss_population[k],
            )?;
        }
        Ok(())
    }
}

fn write_population_header<W: Write>(out: &mut W, n: usize) -> std::io::Result<()> {
    write!(out, "time")?;
    for i in 0..n {
        write!(out, ",site_{i}")?;
    }
    writeln!(out, ",sink,loss")
}

fn write_population_row<W: Write>(
    out: &mut W,
    t: f64,
    pops: &[f64],
    sink: f64,
    loss: f64,
) -> std::io::Result<()> {
    write!(out, "{t}")?;
    for p in pops {
        write!(out, ",{p}")?;
    }
    writeln!(out, ",{sink},{loss}")
}

/// Site populations over time, the input of the spreading observables.
pub trait PopulationSeries {
    fn sample_times(&self) -> Vec<f64>;
    fn populations_at(&self, k: usize) -> Vec<f64>;
}

impl PopulationSeries for Trajectory {
    fn sample_times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn populations_at(&self, k: usize) -> Vec<f64> {
        self.states[k].populations()
    }
}

fn spectral_radius(net: &SiteNetwork) -> f64 {
    SymmetricEigen::new(hamiltonian(net))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.abs()))
}

fn default_step(net: &SiteNetwork, env: &OpenSystemSpec) -> f64 {
    let scale = Generator::rate_scale(spectral_radius(net), env);
    if scale > 0.0 {
        DEFAULT_STEP_FRACTION / scale
    } else {
        // nothing evolves; any step is exact
        1.0
    }
}

fn build_engine(
    net: &SiteNetwork,
    env: &OpenSystemSpec,
    opts: &PropagateOptions,
) -> Result<(Engine, f64)> {
    let h = match opts.dt {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => return Err(Error::invalid(format!("dt must be > 0, got {h}"))),
        None => default_step(net, env),
    };
    let gen = Generator::new(net, env);
    let use_matrix = match opts.method {
        Method::Auto => net.n_sites() <= MATRIX_ENGINE_MAX_SITES,
        Method::Direct => false,
        Method::Matrix => true,
    };
    let engine = if use_matrix {
        Engine::Matrix(MatrixRk4::new(&gen, h))
    } else {
        Engine::Direct(DirectRk4::new(gen, h))
    };
    Ok((engine, h))
}

fn validate_initial(net: &SiteNetwork, rho0: &DensityMatrix) -> Result<()> {
    let n = net.n_sites();
    if rho0.dim() != n || rho0.matrix().ncols() != n {
        return Err(Error::invalid(format!(
            "initial state is {}x{}, network has {n} sites",
            rho0.dim(),
            rho0.matrix().ncols()
        )));
    }
    if rho0.hermiticity_error() > 1e-10 {
        return Err(Error::invalid("initial state is not Hermitian"));
    }
    if (rho0.trace() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "initial state has trace {}, expected 1",
            rho0.trace()
        )));
    }
    let min = rho0.min_eigenvalue();
    if min < -1e-10 {
        return Err(Error::NumericalFailure {
            time: 0.0,
            message: format!("initial state is not positive semidefinite (eigenvalue {min})"),
        });
    }
    Ok(())
}

fn check_finite(state: &State, t: f64) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            time: t,
            message: "non-finite density matrix".into(),
        })
    }
}

/// Integrates the master equation from `rho0` and records snapshots every
/// `sample_dt` up to `t_end` (the last interval is shortened to land on
/// `t_end` exactly).
pub fn propagate(
    net: &SiteNetwork,
    env: &OpenSystemSpec,
    rho0: &DensityMatrix,
    t_end: f64,
    sample_dt: f64,
    opts: &PropagateOptions,
) -> Result<Trajectory> {
    env.validate()?;
    validate_initial(net, rho0)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::invalid(format!("t_end must be >= 0, got {t_end}")));
    }
    if !(sample_dt.is_finite() && sample_dt > 0.0) {
        return Err(Error::invalid(format!("sample interval must be > 0, got {sample_dt}")));
    }
    let n = net.n_sites();
    let (mut engine, h) = build_engine(net, env, opts)?;
    let mut state = rho0.to_state();

    let intervals = (t_end / sample_dt * (1.0 - 1e-12)).ceil() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(intervals + 1),
        states: Vec::with_capacity(intervals + 1),
        sink_population: Vec::with_capacity(intervals + 1),
        loss_population: Vec::with_capacity(intervals + 1),
        dt: h,
    };
    let record = |state: &State, t: f64, traj: &mut Trajectory| {
        traj.times.push(t);
        traj.states.push(DensityMatrix::from_state(state, n));
        traj.sink_population.push(state.sink);
        traj.loss_population.push(state.loss);
    };
    record(&state, 0.0, &mut traj);
    let mut t = 0.0;
    for k in 1..=intervals {
        let target = (k as f64 * sample_dt).min(t_end);
        engine.advance(&mut state, target - t);
        t = target;
        check_finite(&state, t)?;
        record(&state, t, &mut traj);
    }
    Ok(traj)
}

/// Options for [`run_to_completion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Upper bound on simulated time (ps); the effective limit is
    /// min(20/Γ, t_cap).
    pub t_cap: Option<f64>,
    pub dt: Option<f64>,
    /// First sampling interval (ps); default 0.5 / max(ρ(H), κ, Γ).
    pub sample_dt: Option<f64>,
    pub method: Method,
    /// Re-run at half the step and report the change in efficiency.
    pub step_halving_check: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_cap: None,
            dt: None,
            sample_dt: None,
            method: Method::Auto,
            step_halving_check: false,
        }
    }
}

/// Sampling interval doubles after this many samples.
const SAMPLES_PER_LEVEL: usize = 100;
/// Sampling interval never exceeds the first one by more than this factor.
const MAX_SAMPLE_GROWTH: f64 = 256.0;
/// Default time cap, in units of the inverse fastest rate, when Γ = 0.
const DEFAULT_CAP_RATE_UNITS: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSample {
    pub t: f64,
    pub trace: f64,
    pub sink: f64,
    pub loss: f64,
    pub populations: Vec<f64>,
}

/// Efficiency and timing of a run integrated until the exciton is gone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportOutcome {
    /// Population delivered to the sink.
    pub eta: f64,
    pub loss: f64,
    /// Tr ρ left when the run stopped.
    pub residual: f64,
    /// Time at which the sink reached η/2 (ps).
    pub transfer_time: f64,
    pub t_final: f64,
    pub t_max: f64,
    pub dt: f64,
    pub converged: bool,
    pub warning: Option<String>,
    /// |η(dt) − η(dt/2)| when the step-halving check was requested.
    pub step_halving_delta: Option<f64>,
    pub samples: Vec<OutcomeSample>,
}

impl TransportOutcome {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.populations.len());
        write_population_header(&mut out, n)?;
        for s in &self.samples {
            write_population_row(&mut out, s.t, &s.populations, s.sink, s.loss)?;
        }
        Ok(())
    }
}

impl PopulationSeries for TransportOutcome {
    fn sample_times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    fn populations_at(&self, k: usize) -> Vec<f64> {
        self.samples[k].populations.clone()
    }
}

/// Integrates until Tr ρ < 1e-6 or t = t_max and reports the efficiency η
/// (final sink population), the loss, and the half-delivery time.
///
/// Samples start at `sample_dt` spacing and the spacing doubles every 100
/// samples (up to 256×) so long recombination-limited tails stay cheap.
pub fn run_to_completion(
    net: &SiteNetwork,
    env: &OpenSystemSpec,
    rho0: &DensityMatrix,
    opts: &RunOptions,
) -> Result<TransportOutcome> {
    env.validate()?;
    let has_sink = env.sink_rate > 0.0 && net.sink_site().is_some();
    if env.sink_rate > 0.0 && net.sink_site().is_none() {
        return Err(Error::invalid("sink rate given but the network has no sink site"));
    }
    if !has_sink && env.loss_rate <= 0.0 {
        return Err(Error::invalid(
            "run to completion needs a sink (kappa > 0) or a loss channel (gamma > 0)",
        ));
    }
    let mut outcome = integrate_until_empty(net, env, rho0, opts, opts.dt)?;
    if opts.step_halving_check {
        let half = integrate_until_empty(net, env, rho0, opts, Some(outcome.dt * 0.5))?;
        outcome.step_halving_delta = Some((half.eta - outcome.eta).abs());
    }
    Ok(outcome)
}

fn integrate_until_empty(
    net: &SiteNetwork,
    env: &OpenSystemSpec,
    rho0: &DensityMatrix,
    opts: &RunOptions,
    dt: Option<f64>,
) -> Result<TransportOutcome> {
    validate_initial(net, rho0)?;
    let n = net.n_sites();
    let radius = spectral_radius(net);
    let scale = radius.max(env.sink_rate).max(env.loss_rate);

    let mut t_max = f64::INFINITY;
    if env.loss_rate > 0.0 {
        t_max = 20.0 / env.loss_rate;
    }
    match opts.t_cap {
        Some(cap) if cap.is_finite() && cap > 0.0 => t_max = t_max.min(cap),
        Some(cap) => return Err(Error::invalid(format!("t_cap must be > 0, got {cap}"))),
        None if t_max.is_infinite() => t_max = DEFAULT_CAP_RATE_UNITS / scale,
        None => {}
    }
    let base = match opts.sample_dt {
        Some(s) if s.is_finite() && s > 0.0 => s,
        Some(s) => return Err(Error::invalid(format!("sample_dt must be > 0, got {s}"))),
        None => 0.5 / scale,
    };

    let popts = PropagateOptions {
        dt,
        method: opts.method,
    };
    let (mut engine, h) = build_engine(net, env, &popts)?;
    let mut state = rho0.to_state();
    let sample = |state: &State, t: f64| OutcomeSample {
        t,
        trace: state.trace(n),
        sink: state.sink,
        loss: state.loss,
        populations: (0..n).map(|m| state.rho[m * n + m].re).collect(),
    };
    let mut samples = vec![sample(&state, 0.0)];
    let mut t = 0.0;
    let mut interval = base;
    let mut at_level = 0;
    while state.trace(n) >= TRACE_FLOOR && t < t_max {
        let step = interval.min(t_max - t);
        engine.advance(&mut state, step);
        t = if step < interval { t_max } else { t + step };
        check_finite(&state, t)?;
        samples.push(sample(&state, t));
        at_level += 1;
        if at_level == SAMPLES_PER_LEVEL && interval < base * MAX_SAMPLE_GROWTH {
            interval *= 2.0;
            at_level = 0;
        }
    }

    let eta = state.sink;
    let residual = state.trace(n);
    let transfer_time = half_delivery_time(&samples, eta);
    let converged = residual < TRACE_FLOOR;
    let warning = (residual > NON_CONVERGED_TRACE).then(|| {
        format!("non-converged: t_max = {t_max} ps reached with Tr rho = {residual:.3e}")
    });
    Ok(TransportOutcome {
        eta,
        loss: state.loss,
        residual,
        transfer_time,
        t_final: t,
        t_max,
        dt: h,
        converged,
        warning,
        step_halving_delta: None,
        samples,
    })
}

/// First time the sink population reaches η/2, linearly interpolated.
fn half_delivery_time(samples: &[OutcomeSample], eta: f64) -> f64 {
    if eta <= 0.0 {
        return f64::NAN;
    }
    let target = 0.5 * eta;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.sink >= target {
            if b.sink == a.sink {
                return b.t;
            }
            return a.t + (target - a.sink) / (b.sink - a.sink) * (b.t - a.t);
        }
    }
    samples.last().map_or(f64::NAN, |s| s.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_preset, DisorderSpec, PresetKind, Topology};

    fn dimer(delta: f64) -> SiteNetwork {
        SiteNetwork::new(
            vec![0.0, 2.0 * delta],
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            None,
            None,
            Topology::Custom,
        )
        .unwrap()
    }

    #[test]
    fn rabi_oscillation() {
        let net = dimer(0.0);
        for method in [Method::Direct, Method::Matrix] {
            let traj = propagate(
                &net,
                &OpenSystemSpec::coherent(),
                &DensityMatrix::site(2, 0),
                6.0,
                0.1,
                &PropagateOptions { dt: None, method },
            )
            .unwrap();
            for (t, s) in traj.times.iter().zip(&traj.states) {
                let p2 = s.populations()[1];
                assert!((p2 - t.sin().powi(2)).abs() < 1e-5, "{method:?} t={t}: {}", p2 - t.sin().powi(2));
            }
        }
    }

    #[test]
    fn uniform_loss_is_exponential() {
        let net = build_preset(PresetKind::Chain, 2, 1.0, &DisorderSpec::none()).unwrap();
        let env = OpenSystemSpec::new(0.0, 0.0, 0.0, 0.5).unwrap();
        let traj =
            propagate(&net, &env, &DensityMatrix::site(2, 0), 10.0, 0.5, &Default::default())
                .unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            assert!((traj.states[k].trace() - (-0.5 * t).exp()).abs() < 1e-8);
            assert!((traj.total_population(k) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn engines_agree() {
        let net = build_preset(PresetKind::Chain, 5, 1.0, &DisorderSpec::uniform(1.0, 4))
            .unwrap()
            .with_sink_site(Some(4))
            .unwrap();
        let env = OpenSystemSpec::new(0.7, 0.3, 1.0, 0.05).unwrap();
        let rho0 = DensityMatrix::site(5, 0);
        // 0.25 / 2^-6 is a power of two, so both engines take identical steps
        let run = |method| {
            propagate(&net, &env, &rho0, 3.0, 0.25, &PropagateOptions {
                dt: Some(1.0 / 64.0),
                method,
            })
            .unwrap()
        };
        let (a, b) = (run(Method::Direct), run(Method::Matrix));
        for k in 0..a.len() {
            let diff = (a.states[k].matrix() - b.states[k].matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "snapshot {k}: {diff}");
            assert!((a.sink_population[k] - b.sink_population[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_lands_on_t_end() {
        let net = dimer(0.0);
        let traj = propagate(
            &net,
            &OpenSystemSpec::coherent(),
            &DensityMatrix::site(2, 0),
            1.05,
            0.5,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0, 1.05]);
    }

    #[test]
    fn rejects_bad_initial_states() {
        let net = dimer(0.0);
        let env = OpenSystemSpec::coherent();
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(1.5, 0.0);
        m[(1, 1)] = C64::new(-0.5, 0.0);
        let err = propagate(&net, &env, &DensityMatrix::from_matrix(m), 1.0, 0.1, &Default::default());
        assert!(matches!(err, Err(Error::NumericalFailure { time, .. }) if time == 0.0));
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(0.5, 0.0);
        assert!(matches!(
            propagate(&net, &env, &DensityMatrix::from_matrix(m), 1.0, 0.1, &Default::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            propagate(&net, &env, &DensityMatrix::site(3, 0), 1.0, 0.1, &Default::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invalid_environment() {
        assert!(OpenSystemSpec::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(OpenSystemSpec::new(1.0, 1.5, 0.0, 0.0).is_err());
        assert!(OpenSystemSpec::new(1.0, 0.0, f64::NAN, 0.0).is_err());
        assert!(OpenSystemSpec::new(1.0, -1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn blow_up_reports_time() {
        let net = dimer(0.0);
        let env = OpenSystemSpec::new(1e3, 0.0, 0.0, 0.0).unwrap();
        // a step far beyond the RK4 stability limit diverges
        let err = propagate(
            &net,
            &env,
            &DensityMatrix::site(2, 0),
            1e4,
            1.0,
            &PropagateOptions { dt: Some(1.0), method: Method::Direct },
        );
        assert!(matches!(err, Err(Error::NumericalFailure { time, .. }) if time > 0.0));
    }

    #[test]
    fn run_to_completion_requires_a_drain() {
        let net = dimer(0.0);
        let err = run_to_completion(&net, &OpenSystemSpec::coherent(), &DensityMatrix::site(2, 0), &RunOptions::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        let env = OpenSystemSpec::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let err = run_to_completion(&net, &env, &DensityMatrix::site(2, 0), &RunOptions::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lossless_dimer_delivers_everything() {
        let net = dimer(0.0).with_sink_site(Some(1)).unwrap();
        let env = OpenSystemSpec::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(2, 0), &RunOptions {
            step_halving_check: true,
            ..Default::default()
        })
        .unwrap();
        assert!((out.eta - 1.0).abs() < 1e-4, "eta = {}", out.eta);
        assert!(out.converged && out.warning.is_none());
        assert!((out.eta + out.loss + out.residual - 1.0).abs() < 1e-6);
        assert!(out.step_halving_delta.unwrap() < 1e-6);
        assert!(out.transfer_time > 0.0 && out.transfer_time < out.t_final);
    }

    #[test]
    fn heavy_loss_starves_the_sink() {
        let net = dimer(0.0).with_sink_site(Some(1)).unwrap();
        let env = OpenSystemSpec::new(0.0, 0.0, 1.0, 100.0).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(2, 0), &RunOptions::default()).unwrap();
        assert!(out.eta < 0.05, "eta = {}", out.eta);
        assert!((out.eta + out.loss + out.residual - 1.0).abs() < 1e-6);
    }

    #[test]
    fn correlation_bound_depends_on_geometry() {
        let dimer = build_preset(PresetKind::Chain, 2, 1.0, &DisorderSpec::none()).unwrap();
        let chain = build_preset(PresetKind::Chain, 9, 1.0, &DisorderSpec::none()).unwrap();
        for c in [-1.0, 0.0, 1.0] {
            assert!(OpenSystemSpec::new(1.0, c, 0.0, 0.0).unwrap().is_physical_on(&dimer));
        }
        assert!(OpenSystemSpec::new(1.0, 0.5, 0.0, 0.0).unwrap().is_physical_on(&chain));
        let strong = OpenSystemSpec::new(1.0, 0.65, 0.0, 0.0).unwrap();
        assert!(!strong.is_physical_on(&chain));
        // even ring: the alternating mode has adjacency eigenvalue −2
        let ring = build_preset(PresetKind::Ring, 10, 1.0, &DisorderSpec::none()).unwrap();
        assert!((strong.noise_covariance_margin(&ring) - (1.0 - 2.0 * 0.65)).abs() < 1e-12);
        assert!(OpenSystemSpec::new(0.0, 0.65, 0.0, 0.0).unwrap().is_physical_on(&chain));
    }

    #[test]
    fn dark_state_triggers_warning() {
        // site 1 couples to nothing, so its population never reaches the sink
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 2)] = 1.0;
        j[(2, 0)] = 1.0;
        let net = SiteNetwork::new(vec![0.0; 3], j, None, Some(2), Topology::Custom).unwrap();
        let env = OpenSystemSpec::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(3, 1), &RunOptions {
            t_cap: Some(50.0),
            ..Default::default()
        })
        .unwrap();
        assert!(!out.converged);
        assert!(out.warning.is_some());
        assert_eq!(out.t_final, 50.0);
        assert!((out.residual - 1.0).abs() < 1e-9);
    }

    #[test]
    fn outcome_csv_layout() {
        let net = dimer(0.0).with_sink_site(Some(1)).unwrap();
        let env = OpenSystemSpec::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(2, 0), &Default::default()).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,site_0,site_1,sink,loss"));
        assert_eq!(lines.next(), Some("0,1,0,0,0"));
        assert_eq!(text.lines().count(), out.samples.len() + 1);
        assert!(!text.contains('\r'));
    }
}
