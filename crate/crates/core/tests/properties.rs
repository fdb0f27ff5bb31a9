use assim_core::action::ActionProblem;
use assim_core::annealing::{init_branches, init_network_branches, va_run};
use assim_core::models::lorenz96::{rk4_step, vector_field};
use assim_core::models::mlp::activation;
use assim_core::optimizer::minimize;
use assim_core::twin::{lorenz96_twin, spread_indices, TruthOptions};
use assim_core::*;
use proptest::prelude::*;

/// Central differences computed here rather than through the library helper.
fn central_differences(p: &impl ActionProblem<f64>, x: &[f64], rf: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = p.evaluate(&xp, rf).total;
            xp[i] = x[i] - h;
            let down = p.evaluate(&xp, rf).total;
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_max_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(1e-12_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn small_lorenz(seed: u64, unknown: bool) -> (StandardAction, Vec<f64>) {
    let grid = TimeGrid::regular(0.0, 0.05, 5, 1).unwrap();
    let mut model = Lorenz96Spec::new(5, 8.0).unwrap();
    if unknown {
        model = model.with_unknown_forcing();
    }
    let twin = lorenz96_twin(&model, &grid, (-5.0, 5.0), &[0, 2, 3], 0.2, None, &TruthOptions::default(), seed).unwrap();
    let problem = StandardAction::new(twin.observations.clone(), grid.clone(), model).unwrap();
    let mut rng = RngStream::new(seed, 77);
    let x = rng.uniform_draw(-5.0, 5.0, problem.n_vars()).unwrap();
    (problem, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn standard_gradient_matches_differences(seed in 0u64..10_000, log_rf in -2.0f64..3.0, unknown in any::<bool>()) {
        let (p, x) = small_lorenz(seed, unknown);
        let rf = 10f64.powf(log_rf);
        let mut g = vec![0.0; x.len()];
        p.evaluate_with_gradient(&x, rf, &mut g);
        prop_assert!(rel_max_diff(&g, &central_differences(&p, &x, rf)) < 1e-6);
    }

    #[test]
    fn ml_gradient_matches_differences(seed in 0u64..10_000, l in 1usize..=3, m in 1usize..=3) {
        let spec = MlpSpec::new(3, 4).unwrap();
        let mut rng = RngStream::new(seed, 5);
        let batch = MlBatch {
            inputs: rng.uniform_draw(-1.0, 1.0, m * l).unwrap(),
            outputs: rng.uniform_draw(0.0, 1.0, m * l).unwrap(),
            observed_indices: (0..l).collect(),
        };
        let p = MlAction::new(batch, spec, 400.0).unwrap();
        let x = rng.uniform_draw(-1.0, 1.0, p.n_vars()).unwrap();
        let mut g = vec![0.0; x.len()];
        p.evaluate_with_gradient(&x, 3.0, &mut g);
        prop_assert!(rel_max_diff(&g, &central_differences(&p, &x, 3.0)) < 1e-6);
    }

    #[test]
    fn action_terms_are_nonnegative_and_add_up(seed in 0u64..10_000, rf in 0.0f64..100.0) {
        let (p, x) = small_lorenz(seed, false);
        let a = p.evaluate(&x, rf);
        prop_assert!(a.measurement_term >= 0.0 && a.model_term >= 0.0);
        prop_assert!((a.total - a.measurement_term - a.model_term).abs() <= 1e-12 * a.total.max(1.0));
    }

    #[test]
    fn model_term_scales_linearly_in_rf(seed in 0u64..10_000, rf in 0.01f64..100.0) {
        let (p, x) = small_lorenz(seed, false);
        let a1 = p.evaluate(&x, rf);
        let a2 = p.evaluate(&x, 2.0 * rf);
        prop_assert!((a2.model_term - 2.0 * a1.model_term).abs() <= 1e-10 * a2.model_term.max(1.0));
        prop_assert_eq!(a1.measurement_term, a2.measurement_term);
    }

    #[test]
    fn forcing_fixed_point_survives_rk4(nu in -20.0f64..20.0, d in 4usize..16, dt in 0.001f64..0.1) {
        let x = vec![nu; d];
        prop_assert!(vector_field(&x, nu).unwrap().iter().all(|v| v.abs() < 1e-12));
        let next = rk4_step(&x, nu, dt).unwrap();
        prop_assert!(next.iter().all(|v| (v - nu).abs() < 1e-12 * nu.abs().max(1.0)));
    }

    #[test]
    fn activation_is_bounded_and_symmetric(z in -50.0f64..50.0) {
        let g = activation(z);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g + activation(-z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observed_entries_start_at_data(seed in 0u64..1000, k in 1usize..5) {
        let grid = TimeGrid::regular(0.0, 0.05, 6, 2).unwrap();
        let model = Lorenz96Spec::new(6, 10.0).unwrap();
        let idx = spread_indices(3, 6);
        let twin = lorenz96_twin(&model, &grid, (-5.0, 5.0), &idx, 0.2, None, &TruthOptions::default(), seed).unwrap();
        let paths = init_branches(&twin.observations, &grid, 6, &[], (-10.0, 10.0), k, seed).unwrap();
        prop_assert_eq!(paths.len(), k);
        for p in &paths {
            for (s, &slot) in grid.obs_slots().iter().enumerate() {
                for (r, &i) in idx.iter().enumerate() {
                    prop_assert_eq!(p.state(slot)[i], twin.observations.row(s)[r]);
                }
            }
        }
    }
}

#[test]
fn scaling_the_objective_keeps_the_minimizer() {
    let (p, x0) = small_lorenz(3, true);
    let opts = MinimizeOptions { grad_tol: 1e-9, max_iters: 5000, ..Default::default() };
    let run = |c: f64| {
        minimize(
            |x: &[f64], g: &mut [f64]| {
                let a = p.evaluate_with_gradient(x, 50.0, g);
                g.iter_mut().for_each(|v| *v *= c);
                c * a.total
            },
            &x0,
            &MinimizeOptions { grad_tol: opts.grad_tol * c, ..opts.clone() },
        )
        .unwrap()
    };
    let a = run(1.0);
    let b = run(10.0);
    assert!(rel_max_diff(&a.x_star, &b.x_star) < 1e-5, "{}", rel_max_diff(&a.x_star, &b.x_star));
}

fn small_anneal(threads: usize) -> assim_core::annealing::VaOutcome<f64> {
    let grid = TimeGrid::regular(0.0, 0.05, 11, 1).unwrap();
    let model = Lorenz96Spec::new(5, 10.0).unwrap().with_unknown_forcing();
    let idx = spread_indices(3, 5);
    let twin = lorenz96_twin(&model, &grid, (-8.0, 8.0), &idx, 0.2, None, &TruthOptions::default(), 11).unwrap();
    let problem = StandardAction::new(twin.observations.clone(), grid.clone(), model).unwrap();
    let init: Vec<Vec<f64>> = init_branches(&twin.observations, &grid, 5, &[(5.0, 15.0)], (-10.0, 10.0), 5, 11)
        .unwrap()
        .iter()
        .map(|p| p.to_vector())
        .collect();
    let schedule = AnnealSchedule { rf0: 0.01, alpha: 2.0, beta_max: 8, k_branches: 5 };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| va_run(&problem, init, &schedule, &MinimizeOptions::default()).unwrap())
}

#[test]
fn annealing_is_independent_of_thread_count() {
    let a = small_anneal(1);
    let b = small_anneal(3);
    assert_eq!(a.table, b.table);
}

#[test]
fn table_rows_are_sorted_and_traceable() {
    let out = small_anneal(2);
    assert_eq!(out.table.rows.len(), 9);
    for row in &out.table.rows {
        assert!(row.action_values.windows(2).all(|w| w[0] <= w[1]));
        let mut ids = row.branch_ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, (0..5).collect::<Vec<_>>());
        assert!(row.params.iter().all(|p| p.len() == 1));
    }
}

#[test]
fn warm_start_never_hurts() {
    let grid = TimeGrid::regular(0.0, 0.05, 11, 1).unwrap();
    let model = Lorenz96Spec::new(5, 10.0).unwrap();
    let twin = lorenz96_twin(&model, &grid, (-8.0, 8.0), &[0, 2], 0.2, None, &TruthOptions::default(), 4).unwrap();
    let problem = StandardAction::new(twin.observations.clone(), grid.clone(), model).unwrap();
    let init: Vec<Vec<f64>> = init_branches(&twin.observations, &grid, 5, &[], (-10.0, 10.0), 3, 4)
        .unwrap()
        .iter()
        .map(|p| p.to_vector())
        .collect();
    let schedule = AnnealSchedule { rf0: 0.01, alpha: 2.0, beta_max: 6, k_branches: 3 };
    let mut previous: Option<Vec<Vec<f64>>> = None;
    for beta_max in 0..=6 {
        let s = AnnealSchedule { beta_max, ..schedule.clone() };
        let out = va_run(&problem, init.clone(), &s, &MinimizeOptions::default()).unwrap();
        let rf = s.rf(beta_max);
        let mut xs = vec![Vec::new(); 3];
        for b in &out.state.branches {
            xs[b.id] = b.x.clone();
        }
        if let Some(prev) = &previous {
            for (now, before) in xs.iter().zip(prev) {
                assert!(problem.evaluate(now, rf).total <= problem.evaluate(before, rf).total * (1.0 + 1e-12));
            }
        }
        previous = Some(xs);
    }
}

#[test]
fn network_branches_match_batch_layout() {
    let spec = MlpSpec::new(4, 5).unwrap();
    let batch = MlBatch { inputs: vec![0.1; 6], outputs: vec![0.6; 6], observed_indices: vec![0, 3] };
    let init = init_network_branches(&batch, &spec, (0.0, 1.0), (-1.0, 1.0), 2, 9).unwrap();
    let problem = MlAction::new(batch, spec, 400.0).unwrap();
    for x in &init {
        assert_eq!(x.len(), problem.n_vars());
        let net = problem.to_network(x);
        for p in &net.paths {
            assert_eq!(p.state(0)[0], 0.1);
            assert_eq!(p.state(4)[3], 0.6);
        }
    }
}

#[test]
fn path_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = TimeGrid::regular(0.0, 0.025, 9, 0).unwrap();
    let model = Lorenz96Spec::new(5, 10.0).unwrap().with_unknown_forcing();
    let twin = lorenz96_twin(&model, &grid, (-5.0, 5.0), &[1, 3], 0.2, None, &TruthOptions::default(), 2).unwrap();
    let file = dir.path().join("truth.csv");
    io::write_path(&file, &twin.truth, |n| grid.time(n)).unwrap();
    let back = io::read_path(&file, twin.truth.params().to_vec()).unwrap();
    assert_eq!(back, twin.truth);
}
