use goldilocks::dynamics::{propagate, DensityMatrix, OpenSystemSpec, PropagateOptions};
use goldilocks::network::{build_preset, hamiltonian, DisorderSpec, PresetKind};
use goldilocks::observables::{dynamic_localization, fit_diffusion, ipr_localization, msd_curve};
use goldilocks::theory;

fn spread_fit(n: usize, w: f64, d: f64, seed: u64, origin: usize, window: (f64, f64)) -> goldilocks::DiffusionFit {
    let net = build_preset(PresetKind::Chain, n, 1.0, &DisorderSpec::uniform(w, seed)).unwrap();
    let env = OpenSystemSpec::new(d, 0.0, 0.0, 0.0).unwrap();
    let traj = propagate(&net, &env, &DensityMatrix::site(n, origin), window.1, window.1 / 400.0, &PropagateOptions::default()).unwrap();
    fit_diffusion(&msd_curve(&net, &traj, origin).unwrap(), window).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] }
}

#[test]
fn ordered_chain_is_ballistic_then_diffusive() {
    let ballistic = spread_fit(60, 0.0, 0.0, 0, 30, (2.0, 10.0));
    assert!((ballistic.exponent - 1.0).abs() < 0.05, "{}", ballistic.exponent);
    // r = √2 J t exactly before the wave reaches the ends
    assert!((ballistic.coefficient - 2f64.sqrt()).abs() < 1e-3);
    let diffusive = spread_fit(60, 0.0, 1.0, 0, 30, (10.0, 50.0));
    assert!((diffusive.exponent - 0.5).abs() < 0.05, "{}", diffusive.exponent);
}

#[test]
fn diffusion_constant_rises_then_falls_with_dephasing_on_short_chain() {
    let mean_d = |d: f64, window: (f64, f64)| {
        (0..20).map(|s| spread_fit(8, 2.0, d, s, 0, window).diffusion_constant()).sum::<f64>() / 20.0
    };
    let low: Vec<f64> = [0.01, 0.03, 0.1].iter().map(|&d| mean_d(d, (2.0, 20.0))).collect();
    let high: Vec<f64> = [10.0, 30.0, 100.0].iter().map(|&d| mean_d(d, (1.0, 10.0))).collect();
    assert!(low.windows(2).all(|w| w[1] > w[0]), "{low:?}");
    assert!(high.windows(2).all(|w| w[1] < w[0]), "{high:?}");
}

#[test]
fn participation_number_shrinks_with_disorder() {
    let mean_ipr = |w: f64| {
        (0..50)
            .map(|s| {
                let net = build_preset(PresetKind::Chain, 32, 1.0, &DisorderSpec::uniform(w, s)).unwrap();
                ipr_localization(&hamiltonian(&net), 0..32).unwrap()
            })
            .sum::<f64>()
            / 50.0
    };
    let ells: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&w| mean_ipr(w)).collect();
    assert!(ells.windows(2).all(|w| w[1] < w[0]), "{ells:?}");
    assert!(ells.iter().all(|&l| (1.0..=32.0).contains(&l)));
    // at Δω = 4 the states extend over a couple of sites
    assert!(ells[3] > 1.0 && ells[3] < 4.0, "{}", ells[3]);
}

#[test]
fn coherent_plateau_and_localization_time() {
    let ensemble = |w: f64| {
        let runs: Vec<_> = (0..20)
            .map(|s| {
                let net = build_preset(PresetKind::Chain, 64, 1.0, &DisorderSpec::uniform(w, s)).unwrap();
                dynamic_localization(&net, 32).unwrap()
            })
            .collect();
        let ell = median(runs.iter().map(|r| r.ell_dynamic).collect());
        let tau = median(runs.iter().map(|r| r.tau).collect());
        (ell, tau)
    };
    let (ell4, tau4) = ensemble(4.0);
    let (ell3, _) = ensemble(3.0);
    assert!(ell4.is_finite() && ell4 < 64.0);
    assert!(ell4 < ell3, "ell(4)={ell4} ell(3)={ell3}");
    let predicted = ell4 / 2.0;
    assert!(tau4 / predicted < 3.0 && predicted / tau4 < 3.0, "tau={tau4} ell/2J={predicted}");

    let ordered = build_preset(PresetKind::Chain, 64, 1.0, &DisorderSpec::none()).unwrap();
    assert!(dynamic_localization(&ordered, 32).unwrap().capped);
}

#[test]
fn spread_at_optimal_dephasing_follows_the_optimal_rate() {
    let (j, w, n) = (1.0, 2.0, 64);
    let ell = theory::theory_localization(j, w, n);
    let d_star = theory::optimal_dephasing(j, ell).unwrap();
    let tau = theory::localization_time(j, ell).unwrap();
    let t_end = 20.0 * tau;
    let env = OpenSystemSpec::new(d_star, 0.0, 0.0, 0.0).unwrap();
    let seeds = 20;
    let mut msd: Vec<(f64, f64)> = Vec::new();
    for s in 0..seeds {
        let net = build_preset(PresetKind::Chain, n, j, &DisorderSpec::uniform(w, s)).unwrap();
        let traj = propagate(&net, &env, &DensityMatrix::site(n, n / 2), t_end, tau / 4.0, &PropagateOptions::default()).unwrap();
        let r = msd_curve(&net, &traj, n / 2).unwrap();
        if msd.is_empty() {
            msd = r.iter().map(|&(t, _)| (t, 0.0)).collect();
        }
        for (acc, (_, x)) in msd.iter_mut().zip(&r) {
            acc.1 += x * x / seeds as f64;
        }
    }
    for &(t, m2) in msd.iter().filter(|(t, _)| *t >= 5.0 * tau - 1e-9) {
        let ratio = m2.sqrt() / theory::optimal_spread(t, j, ell).unwrap();
        assert!((0.5..=2.0).contains(&ratio), "t={t} ratio={ratio}");
    }
}
