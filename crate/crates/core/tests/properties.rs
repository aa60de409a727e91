use paydist_core::dynamics::{AgentMarket, MeanField};
use paydist_core::equilibrium::{lognormal_equilibrium, LognormalParams};
use paydist_core::fitting::{distribution_distance, fit_lognormal, fit_powerlaw_tail, Metric};
use paydist_core::model::{payoff, DynamicsSettings, Occupancy};
use paydist_core::potential::{
    entropy_stirling, helmholtz_check, mean_field_potential, potential, thermo_potential,
};
use paydist_core::{ClassParams, EnergyGrid, LevelGame, PopulationState, SalaryGrid};
use proptest::prelude::*;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn params() -> impl Strategy<Value = ClassParams> {
    (50.0f64..300.0, 5.0f64..30.0, 0.5f64..20.0)
        .prop_map(|(a, b, g)| ClassParams::new(a, b, g).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn payoff_falls_with_occupancy(p in params(), s in 1.0f64..5000.0, n in 1u64..1_000_000) {
        prop_assert!(payoff(s, n + 1, &p).unwrap() < payoff(s, n, &p).unwrap());
    }

    #[test]
    fn potential_curvature_along_swaps(x in simplex(6), g in 0.1f64..10.0, i in 0usize..6, k in 0usize..6) {
        prop_assume!(i != k);
        let game = LevelGame::new(vec![0.3, -1.2, 0.8, 2.0, 0.0, -0.5], g).unwrap();
        let h = 1e-4 * x[i].min(x[k]);
        let shifted = |t: f64| {
            let mut y = x.clone();
            y[i] += t;
            y[k] -= t;
            mean_field_potential(&game, &y)
        };
        let second = (shifted(h) - 2.0 * shifted(0.0) + shifted(-h)) / (h * h);
        let exact = -g * (1.0 / x[i] + 1.0 / x[k]);
        prop_assert!(second < 0.0);
        prop_assert!(((second - exact) / exact).abs() < 1e-3, "{second} vs {exact}");
    }

    #[test]
    fn stirling_gap_is_bounded(counts in prop::collection::vec(1u64..2_000, 2..100)) {
        let n: u64 = counts.iter().sum();
        let levels = counts.len();
        let grid = SalaryGrid::uniform(1.0, 100.0, levels).unwrap();
        let unit = ClassParams::new(1.0, 1.0, 1.0).unwrap();
        let state = PopulationState::from_level_counts(counts).unwrap();
        let phi_f = potential(&state, &grid, &unit).unwrap().phi_f;
        let gap = (phi_f - entropy_stirling(&state.level_shares())).abs();
        let nf = n as f64;
        prop_assert!(gap <= levels as f64 * nf.ln() / nf, "gap {gap} for N={n}, n={levels}");
    }

    #[test]
    fn helmholtz_identity(counts in prop::collection::vec(0u64..500, 2..30), beta in 0.0f64..5.0, seed in 0u64..1000) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let energies = (0..counts.len()).map(|i| ((i as u64 * 7919 + seed) % 997) as f64 / 997.0).collect();
        let grid = EnergyGrid::new(energies, beta).unwrap();
        let state = PopulationState::from_level_counts(counts).unwrap();
        prop_assert!(helmholtz_check(&state, &grid).unwrap().abs_difference < 1e-12);
    }

    #[test]
    fn pay_potential_specializes_to_thermo(p in params(), counts in prop::collection::vec(0u64..300, 3..20), beta in 0.2f64..4.0) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let grid = SalaryGrid::log_uniform(10.0, 2000.0, counts.len()).unwrap();
        let unit = ClassParams { gamma: 1.0, ..p };
        let energies = grid.levels().iter().map(|&s| -unit.base_payoff(s) / beta).collect();
        let thermo = EnergyGrid::new(energies, beta).unwrap();
        let state = PopulationState::from_level_counts(counts).unwrap();
        let a = potential(&state, &grid, &unit).unwrap();
        let b = thermo_potential(&state, &thermo).unwrap();
        prop_assert!((a.phi_total - b.phi_total).abs() < 1e-9 * a.phi_total.abs().max(1.0));
        prop_assert!((a.phi_f - b.phi_f).abs() < 1e-12);
    }

    #[test]
    fn lognormal_fit_recovers_parameters(mu in 4.0f64..6.5, sigma in 0.2f64..1.0) {
        let grid = SalaryGrid::log_uniform(20.0, 3000.0, 100).unwrap();
        let h = LognormalParams::new(mu, sigma).unwrap().densities(&grid);
        let fit = fit_lognormal(&h, &grid).unwrap();
        let (m, s) = fit.mu_sigma().unwrap();
        prop_assert!((m - mu).abs() < 1e-6 && (s - sigma).abs() < 1e-6);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn eta_invariant_under_salary_rescale(eta in 0.5f64..3.0, scale in 0.01f64..100.0, amp in 1e-3f64..1e3) {
        let grid = SalaryGrid::log_uniform(10.0, 1000.0, 40).unwrap();
        let scaled = SalaryGrid::new(grid.levels().iter().map(|s| s * scale).collect()).unwrap();
        let h: Vec<f64> = grid.levels().iter().map(|s| amp * s.powf(-1.0 - eta)).collect();
        let a = fit_powerlaw_tail(&h, &grid, 0.2).unwrap().eta().unwrap();
        let b = fit_powerlaw_tail(&h, &scaled, 0.2).unwrap().eta().unwrap();
        prop_assert!((a - eta).abs() < 1e-8 && (a - b).abs() < 1e-8);
    }

    #[test]
    fn distances_are_metrics(p in simplex(12), q in simplex(12), r in simplex(12)) {
        for m in [Metric::L1, Metric::Linf, Metric::Ks] {
            let d = |a: &[f64], b: &[f64]| distribution_distance(a, b, m).unwrap();
            prop_assert!(d(&p, &p) == 0.0);
            prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-15);
            prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-15);
        }
        let l1 = distribution_distance(&p, &q, Metric::L1).unwrap();
        prop_assert!(distribution_distance(&p, &q, Metric::Linf).unwrap() <= l1);
        prop_assert!(distribution_distance(&p, &q, Metric::Ks).unwrap() <= l1);
    }

    #[test]
    fn replicator_stays_on_simplex(x in simplex(8), g in 0.2f64..5.0, dt in 0.001f64..0.5) {
        let field = MeanField::single(LevelGame::new(vec![1.0, 0.2, -0.3, 2.2, 0.0, 1.1, -2.0, 0.4], g).unwrap());
        let (y, used) = field.replicator_step(std::slice::from_ref(&x), dt).unwrap();
        prop_assert!(used <= dt);
        prop_assert!((y[0].iter().sum::<f64>() - 1.0).abs() < 1e-14);
        prop_assert!(y[0].iter().all(|v| *v > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn agents_conserve_every_class(seed in 1u64..u64::MAX, c1 in 1u64..400, c2 in 1u64..400, shards in 1usize..4) {
        let grid = SalaryGrid::uniform(20.0, 3000.0, 12).unwrap();
        let p = [ClassParams::new(215.0, 20.5, 5.0).unwrap(), ClassParams::new(220.5, 19.45, 10.0).unwrap()];
        let base = p.iter().map(|q| grid.levels().iter().map(|&s| q.base_payoff(s)).collect()).collect();
        let market = AgentMarket::new(base, vec![5.0, 10.0], vec![c1, c2]).unwrap();
        let settings = DynamicsSettings { epochs_max: 20, snapshot_cadence: 1, shards, ..Default::default() };
        let out = market.simulate(&settings, seed, |r| {
            let state = r.state.as_ref().unwrap();
            let Occupancy::Counts(c) = state.occupancy() else { panic!("counts expected") };
            assert_eq!(c[0].iter().sum::<u64>(), c1);
            assert_eq!(c[1].iter().sum::<u64>(), c2);
        }).unwrap();
        prop_assert_eq!(out.state.class_totals(), vec![c1 as f64, c2 as f64]);
    }
}

#[test]
fn closed_form_is_a_replicator_rest_point() {
    let grid = SalaryGrid::uniform(20.0, 3000.0, 100).unwrap();
    let p = ClassParams::new(215.0, 20.5, 5.0).unwrap();
    let (x, _) = lognormal_equilibrium(&grid, &p).unwrap();
    let field = MeanField::single(LevelGame::pay(&grid, &p));
    assert!(field.residual(&[x]) < 1e-12);
}
