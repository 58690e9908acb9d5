use goldilocks::dynamics::{propagate, run_to_completion, DensityMatrix, OpenSystemSpec, RunOptions};
use goldilocks::network::{build_preset, DisorderSpec, PresetKind, SiteNetwork, Topology};
use goldilocks::observables::fit_relaxation_rate;
use goldilocks::theory;
use goldilocks::PropagateOptions;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dimer(j: f64, e2: f64) -> SiteNetwork {
    let mut v = DMatrix::zeros(2, 2);
    v[(0, 1)] = j;
    v[(1, 0)] = j;
    SiteNetwork::new(vec![0.0, e2], v, None, Some(1), Topology::Chain).unwrap()
}

fn random_pure_state(n: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let psi: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let m = DMatrix::from_fn(n, n, |a, b| psi[a] * psi[b].conj() / (norm * norm));
    DensityMatrix::from_matrix(m)
}

#[test]
fn bookkeeping_hermiticity_positivity_over_random_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked_positive = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=10);
        let kind = if n >= 3 && rng.random_bool(0.3) { PresetKind::Ring } else { PresetKind::Chain };
        let j = rng.random_range(0.2..3.0);
        let w = rng.random_range(0.0..3.0);
        let net = build_preset(kind, n, j, &DisorderSpec::uniform(w, case))
            .unwrap()
            .with_sink_site(Some(rng.random_range(0..n)))
            .unwrap();
        let env = OpenSystemSpec::new(
            10f64.powf(rng.random_range(-2.0..2.0)),
            rng.random_range(-1.0..=1.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..1.0),
        )
        .unwrap();
        let rho0 = if rng.random_bool(0.5) {
            DensityMatrix::site(n, rng.random_range(0..n))
        } else {
            random_pure_state(n, &mut rng)
        };
        let physical = env.is_physical_on(&net);
        checked_positive += usize::from(physical);
        let traj = propagate(&net, &env, &rho0, 10.0, 0.25, &PropagateOptions::default()).unwrap();
        for k in 0..traj.len() {
            let total = traj.total_population(k);
            assert!((total - 1.0).abs() < 1e-6, "case {case} t={} total={total}", traj.times[k]);
            assert!(traj.states[k].hermiticity_error() < 1e-10, "case {case}");
            if physical {
                let min = traj.states[k].min_eigenvalue();
                assert!(min > -1e-8, "case {case} t={} min eigenvalue {min}", traj.times[k]);
            }
        }
    }
    assert!(checked_positive >= 30, "only {checked_positive} cases had a valid noise covariance");
}

#[test]
fn over_correlated_noise_breaks_positivity() {
    // c beyond the geometric bound: I + cA is not a covariance
    let net = build_preset(PresetKind::Chain, 9, 1.0, &DisorderSpec::none()).unwrap();
    let env = OpenSystemSpec::new(4.0, 0.9, 0.0, 0.0).unwrap();
    assert!(!env.is_physical_on(&net));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho0 = random_pure_state(9, &mut rng);
    let traj = propagate(&net, &env, &rho0, 2.0, 0.1, &PropagateOptions::default()).unwrap();
    let worst = traj.states.iter().map(|s| s.min_eigenvalue()).fold(0.0, f64::min);
    assert!(worst < -1e-6, "{worst}");
}

#[test]
fn coherent_energy_is_conserved() {
    let net = build_preset(PresetKind::Chain, 8, 1.0, &DisorderSpec::uniform(1.0, 3)).unwrap();
    let h = goldilocks::hamiltonian(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rho0 = random_pure_state(8, &mut rng);
    let traj = propagate(&net, &OpenSystemSpec::coherent(), &rho0, 100.0, 1.0, &PropagateOptions::default()).unwrap();
    let e0 = traj.states[0].expectation(&h);
    let scale = e0.abs().max(1e-3);
    for s in &traj.states {
        assert!((s.expectation(&h) - e0).abs() / scale < 1e-6);
    }
}

#[test]
fn fully_correlated_noise_leaves_dimer_oscillating() {
    let net = dimer(1.0, 0.0);
    let env = OpenSystemSpec::new(5.0, 1.0, 0.0, 0.0).unwrap();
    let traj = propagate(&net, &env, &DensityMatrix::site(2, 0), 100.0, 0.01, &PropagateOptions::default()).unwrap();
    // amplitude of ρ11 − ½ against cos 2t on the first and last ten periods
    let amplitude = |lo: f64, hi: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &t) in traj.times.iter().enumerate() {
            if t >= lo && t < hi {
                let c = (2.0 * t).cos();
                num += (traj.states[k].populations()[0] - 0.5) * c;
                den += c * c;
            }
        }
        num / den
    };
    let early = amplitude(0.0, 10.0 * std::f64::consts::PI);
    let late = amplitude(100.0 - 10.0 * std::f64::consts::PI, 100.0);
    let rate = (early / late).ln() / (100.0 - 10.0 * std::f64::consts::PI);
    assert!((early - 0.5).abs() < 1e-6);
    assert!(rate.abs() < 1e-8, "damping rate {rate}");
}

#[test]
fn halving_the_step_changes_eta_below_tolerance() {
    for (seed, d) in [(1, 0.0), (2, 1.0), (3, 30.0)] {
        let net = build_preset(PresetKind::Chain, 8, 1.0, &DisorderSpec::uniform(2.0, seed))
            .unwrap()
            .with_sink_site(Some(7))
            .unwrap();
        let env = OpenSystemSpec::new(d, 0.0, 1.0, 0.001).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(8, 0), &RunOptions {
            step_halving_check: true,
            ..Default::default()
        })
        .unwrap();
        let delta = out.step_halving_delta.unwrap();
        assert!(delta < 1e-6, "d={d}: step halving moved eta by {delta}");
        assert!((out.eta + out.loss + out.residual - 1.0).abs() < 1e-6);
    }
}

#[test]
fn efficiency_is_scale_covariant() {
    let eta = |s: f64| {
        let net = build_preset(PresetKind::Chain, 6, s, &DisorderSpec::uniform(2.0 * s, 17))
            .unwrap()
            .with_sink_site(Some(5))
            .unwrap();
        let env = OpenSystemSpec::new(0.7 * s, 0.2, s, 0.01 * s).unwrap();
        let out = run_to_completion(&net, &env, &DensityMatrix::site(6, 0), &RunOptions::default()).unwrap();
        (out.eta, out.transfer_time)
    };
    let (e1, t1) = eta(1.0);
    let (e10, t10) = eta(10.0);
    assert!((e1 - e10).abs() < 1e-8, "{e1} vs {e10}");
    assert!((t1 - 10.0 * t10).abs() / t1 < 1e-6);
    // the closed forms are scale covariant too
    let p = |s: f64| theory::two_state(s, 0.7 * s).unwrap().p_max;
    assert!((p(1.0) - p(10.0)).abs() < 1e-15);
}

#[test]
fn two_state_maximum_matches_simulation() {
    for ratio in [0.0, 0.5, 1.0, 2.0, 5.0] {
        let r = theory::two_state(1.0, ratio).unwrap();
        let net = dimer(1.0, 2.0 * ratio);
        let traj = propagate(
            &net,
            &OpenSystemSpec::coherent(),
            &DensityMatrix::site(2, 0),
            2.0 * r.t_peak,
            r.t_peak / 1000.0,
            &PropagateOptions { dt: Some(1e-3), ..Default::default() },
        )
        .unwrap();
        let max = traj.states.iter().map(|s| s.populations()[1]).fold(0.0, f64::max);
        assert!((max - r.p_max).abs() < 1e-4, "Δ/J={ratio}: {max} vs {}", r.p_max);
    }
}

#[test]
fn strongly_dephased_dimer_relaxes_at_the_hopping_rate() {
    let (j, d) = (1.0, 10.0);
    let net = dimer(j, 0.0);
    let env = OpenSystemSpec::new(d, 0.0, 0.0, 0.0).unwrap();
    let traj = propagate(&net, &env, &DensityMatrix::site(2, 0), 15.0, 0.05, &PropagateOptions {
        dt: Some(1e-4),
        ..Default::default()
    })
    .unwrap();
    let series: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| (t, s.populations()[0]))
        .collect();
    let decay = fit_relaxation_rate(&series, 0.5, (2.0, 15.0)).unwrap();
    // slow eigenvalue of the dimer Bloch equations
    let exact = (d - (d * d - 16.0 * j * j).sqrt()) / 2.0;
    assert!((decay - exact).abs() / exact < 1e-3, "{decay} vs {exact}");
    // p1 − ½ decays at twice the site-to-site hopping rate
    let hopping = decay / 2.0;
    assert!((hopping - 2.0 * j * j / d).abs() / (2.0 * j * j / d) < 0.05);
}

#[test]
fn dephasing_assists_transport_on_disordered_chain() {
    let d_star = theory::optimal_dephasing(1.0, theory::theory_localization(1.0, 2.0, 8)).unwrap();
    let mean_eta = |d: f64| {
        (0..100)
            .map(|seed| {
                let net = build_preset(PresetKind::Chain, 8, 1.0, &DisorderSpec::uniform(2.0, seed))
                    .unwrap()
                    .with_sink_site(Some(7))
                    .unwrap();
                let env = OpenSystemSpec::new(d, 0.0, 1.0, 0.001).unwrap();
                run_to_completion(&net, &env, &DensityMatrix::site(8, 0), &RunOptions::default())
                    .unwrap()
                    .eta
            })
            .sum::<f64>()
            / 100.0
    };
    let (coherent, assisted) = (mean_eta(0.0), mean_eta(d_star));
    assert!(assisted > coherent, "eta(d*)={assisted} eta(0)={coherent}");
}
