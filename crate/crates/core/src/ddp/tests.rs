use super::*;
use crate::model::presets::two_reservoir;
use crate::model::{exact_stage_cost, terminal_water_value, validate_trajectory};
use crate::prices::{generate_prices, PriceParams};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::HashMap;

fn preset_prices(seed: u64, t: usize) -> PriceSeries {
    let net = two_reservoir();
    let mut series = PriceSeries {
        prices: generate_prices(seed, t, &PriceParams::default()),
        terminal_values: vec![0.0, 0.0],
    };
    series.terminal_values = terminal_water_value(&net, &series).unwrap();
    series
}

#[test]
fn hand_counted_dimensions_single_arc_single_step() {
    let mut net = two_reservoir();
    net.arcs.truncate(1);
    let prices = PriceSeries { prices: vec![0.05; 4], terminal_values: vec![1.0, 1.0] };
    let tpl =
        build_second_stage_lp(&net, &prices, 0, 3, 4, BoundMode::Static, &net.initial_levels)
            .unwrap();
    // 2 levels x 2 timesteps + 1 flow + 2 chi
    assert_eq!(tpl.lp.num_vars, 7);
    // 2 coupling + 2 dynamics equalities, 8 envelope inequalities
    assert_eq!(tpl.lp.rows_eq.len(), 4);
    assert_eq!(tpl.lp.rows_in.len(), 8);
}

#[test]
fn bound_mode_changes_rhs_not_shape() {
    let net = two_reservoir();
    let prices = preset_prices(1, 12);
    let a = build_second_stage_lp(&net, &prices, 0, 4, 12, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let b =
        build_second_stage_lp(&net, &prices, 0, 4, 12, BoundMode::Tightened, &net.initial_levels)
            .unwrap();
    assert_eq!(a.lp.num_vars, b.lp.num_vars);
    assert_eq!(a.lp.rows_eq.len(), b.lp.rows_eq.len());
    assert_eq!(a.lp.rows_in.len(), b.lp.rows_in.len());
    assert_ne!(a.lp.rhs_in, b.lp.rhs_in);
}

#[test]
fn empty_second_stage_is_an_error() {
    let net = two_reservoir();
    let prices = preset_prices(1, 8);
    let err = build_second_stage_lp(&net, &prices, 0, 8, 8, BoundMode::Static, &net.initial_levels);
    assert!(matches!(err, Err(DdpError::EmptySecondStage)));
}

#[test]
fn zero_prices_objective_is_terminal_only() {
    let net = two_reservoir();
    let mut prices = PriceSeries { prices: vec![0.0; 6], terminal_values: vec![0.0, 0.0] };
    prices.terminal_values = vec![25_000.0, 14_000.0];
    let tpl = build_second_stage_lp(&net, &prices, 0, 2, 6, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let sol = solve_second_stage(&tpl, &net, &net.initial_levels).unwrap();
    let last = sol.tail_levels.last().unwrap();
    let terminal = -(25_000.0 * last[0] + 14_000.0 * last[1]);
    assert!(
        (sol.objective - terminal).abs() <= 1e-6 * (1.0 + terminal.abs()),
        "objective {} vs terminal {terminal}",
        sol.objective
    );
    // Doing nothing is feasible, so the optimum cannot be worse than holding.
    let hold = -(25_000.0 * 42.5 + 14_000.0 * 50.0);
    assert!(sol.objective <= hold + 1e-6);
}

#[test]
fn second_stage_value_function_is_convex() {
    let net = two_reservoir();
    let prices = preset_prices(3, 10);
    let tpl = build_second_stage_lp(&net, &prices, 0, 0, 10, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..8 {
        let x = [rng.gen_range(0.0..85.0), rng.gen_range(0.0..100.0)];
        let y = [rng.gen_range(0.0..85.0), rng.gen_range(0.0..100.0)];
        let gx = solve_second_stage(&tpl, &net, &x).unwrap().objective;
        let gy = solve_second_stage(&tpl, &net, &y).unwrap().objective;
        for theta in [0.25, 0.5, 0.75] {
            let mid = [theta * x[0] + (1.0 - theta) * y[0], theta * x[1] + (1.0 - theta) * y[1]];
            let gm = solve_second_stage(&tpl, &net, &mid).unwrap().objective;
            let chord = theta * gx + (1.0 - theta) * gy;
            assert!(
                gm <= chord + 1e-7 * (1.0 + chord.abs()),
                "convexity violated: G({mid:?}) = {gm} > {chord}"
            );
        }
    }
}

#[test]
fn resolving_the_same_state_is_deterministic() {
    let net = two_reservoir();
    let prices = preset_prices(5, 8);
    let tpl = build_second_stage_lp(&net, &prices, 0, 0, 8, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let a = solve_second_stage(&tpl, &net, &net.initial_levels).unwrap();
    let b = solve_second_stage(&tpl, &net, &net.initial_levels).unwrap();
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert_eq!(a.coupling_duals, b.coupling_duals);
}

#[test]
fn cut_is_tight_at_generating_state_and_valid_elsewhere() {
    let net = two_reservoir();
    let prices = preset_prices(7, 10);
    let tpl = build_second_stage_lp(&net, &prices, 0, 0, 10, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let x0 = net.initial_levels.clone();
    let sol = solve_second_stage(&tpl, &net, &x0).unwrap();
    let cut = extract_cut(&sol, &x0, 1);
    let tight = cut.evaluate(&x0);
    assert!(
        (tight - sol.objective).abs() <= 1e-7 * (1.0 + sol.objective.abs()),
        "tightness: {tight} vs {}",
        sol.objective
    );
    let mut rng = StdRng::seed_from_u64(21);
    for _ in 0..40 {
        let x = [rng.gen_range(0.0..85.0), rng.gen_range(0.0..100.0)];
        let g = solve_second_stage(&tpl, &net, &x).unwrap().objective;
        assert!(
            cut.evaluate(&x) <= g + 1e-6 * (1.0 + g.abs()),
            "cut overestimates at {x:?}: {} > {g}",
            cut.evaluate(&x)
        );
    }
}

#[test]
fn duplicate_cut_is_rejected() {
    let net = two_reservoir();
    let prices = preset_prices(9, 8);
    let tpl = build_second_stage_lp(&net, &prices, 0, 0, 8, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let x0 = net.initial_levels.clone();
    let sol1 = solve_second_stage(&tpl, &net, &x0).unwrap();
    let sol2 = solve_second_stage(&tpl, &net, &x0).unwrap();
    let mut cuts = CutSet::new();
    assert!(cuts.insert(extract_cut(&sol1, &x0, 1)));
    assert!(!cuts.insert(extract_cut(&sol2, &x0, 2)));
    assert_eq!(cuts.len(), 1);
}

#[test]
fn cut_set_evaluation_is_order_independent() {
    let cuts_a = {
        let mut c = CutSet::new();
        c.insert(Cut { a: vec![1.0, -2.0], b: 3.0, origin_iteration: 1 });
        c.insert(Cut { a: vec![-1.0, 0.5], b: 0.0, origin_iteration: 2 });
        c.insert(Cut { a: vec![0.0, 0.0], b: -5.0, origin_iteration: 3 });
        c
    };
    let cuts_b = {
        let mut c = CutSet::new();
        c.insert(Cut { a: vec![0.0, 0.0], b: -5.0, origin_iteration: 3 });
        c.insert(Cut { a: vec![-1.0, 0.5], b: 0.0, origin_iteration: 2 });
        c.insert(Cut { a: vec![1.0, -2.0], b: 3.0, origin_iteration: 1 });
        c
    };
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..100 {
        let x = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
        assert_eq!(cuts_a.evaluate(&x), cuts_b.evaluate(&x));
    }
    assert_eq!(CutSet::new().evaluate(&[1.0, 2.0]), 0.0);
}

#[test]
fn flat_second_stage_converges_in_two_iterations() {
    let net = two_reservoir();
    // Prices vanish over the second stage and the terminal credit is zero,
    // so the second-stage value function is identically zero.
    let mut prices = preset_prices(13, 8);
    for p in prices.prices.iter_mut().skip(6) {
        *p = 0.0;
    }
    prices.terminal_values = vec![0.0, 0.0];
    let grid = Grid::regular(&net, 9, 9);
    let opts = DdpOptions::default();
    let result = run_algorithm1(&net, &prices, 0, 6, 8, &net.initial_levels, &grid, &opts).unwrap();
    assert_eq!(result.status, DdpStatus::Converged);
    assert!(result.iterations <= 2, "iterations = {}", result.iterations);

    let terminal = |_: &[f64]| 0.0;
    let pure = dp::solve_dp(&net, &prices, 0, 6, &terminal, &grid, &net.initial_levels, &opts.dp).unwrap();
    let (pure_traj, _) =
        dp::extract_policy_trajectory(&pure.table, &net.initial_levels, &net, &prices, &terminal)
            .unwrap();
    assert!(
        (result.first_stage_cost - pure_traj.objective).abs() <= 1e-6 * (1.0 + pure_traj.objective.abs()),
        "{} vs {}",
        result.first_stage_cost,
        pure_traj.objective
    );
}

#[test]
fn preset_run_converges_with_few_cuts() {
    let net = two_reservoir();
    let prices = preset_prices(17, 24);
    let grid = Grid::regular(&net, 17, 17);
    let opts = DdpOptions::default();
    let result = run_algorithm1(&net, &prices, 0, 6, 24, &net.initial_levels, &grid, &opts).unwrap();
    assert_eq!(result.status, DdpStatus::Converged);
    assert!(result.cuts.len() <= 10, "cuts = {}", result.cuts.len());
    // Returned arguments are feasible for the exact bilinear problem.
    validate_trajectory(&result.trajectory, &net, 1e-6).unwrap();
    // The approximate-problem optimum estimate grows monotonically once
    // cuts exist.
    for w in result.g0_history[1..].windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * (1.0 + w[0].abs()), "g0 history not monotone: {:?}", result.g0_history);
    }
    // Reproducibility.
    let again = run_algorithm1(&net, &prices, 0, 6, 24, &net.initial_levels, &grid, &opts).unwrap();
    assert_eq!(result.iterations, again.iterations);
    assert_eq!(result.realized_exact_objective.to_bits(), again.realized_exact_objective.to_bits());
}

#[test]
fn final_cuts_underestimate_everywhere() {
    let net = two_reservoir();
    let prices = preset_prices(19, 16);
    let grid = Grid::regular(&net, 9, 9);
    let opts = DdpOptions::default();
    let result = run_algorithm1(&net, &prices, 0, 4, 16, &net.initial_levels, &grid, &opts).unwrap();
    let tpl = build_second_stage_lp(&net, &prices, 0, 4, 16, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..30 {
        let x = [rng.gen_range(0.0..85.0), rng.gen_range(0.0..100.0)];
        let g = solve_second_stage(&tpl, &net, &x).unwrap().objective;
        let under = result.cuts.evaluate(&x);
        assert!(under <= g + 1e-6 * (1.0 + g.abs()), "{under} > {g} at {x:?}");
    }
}

#[test]
fn tiny_instance_matches_two_stage_enumeration() {
    let net = two_reservoir();
    let prices = preset_prices(23, 6);
    let grid = Grid::regular(&net, 9, 9);
    let opts = DdpOptions::default();
    let t1 = 2;
    let result = run_algorithm1(&net, &prices, 0, t1, 6, &net.initial_levels, &grid, &opts).unwrap();
    assert_eq!(result.status, DdpStatus::Converged);
    let achieved = result.first_stage_cost + result.second_stage_objective;

    // Brute force: enumerate every first-stage grid-flow sequence (exact
    // dynamics), solve the second-stage LP at each distinct endpoint.
    let tpl = build_second_stage_lp(&net, &prices, 0, t1, 6, BoundMode::Static, &net.initial_levels)
        .unwrap();
    let mut cache: HashMap<(i64, i64), f64> = HashMap::new();
    let mut g_tilde = |state: &[f64]| -> f64 {
        let key = ((state[0] * 1e9).round() as i64, (state[1] * 1e9).round() as i64);
        if let Some(&v) = cache.get(&key) {
            return v;
        }
        let v = solve_second_stage(&tpl, &net, state).unwrap().objective;
        cache.insert(key, v);
        v
    };

    // Candidate action set matching the DP engine: net flows per reversible
    // pair from the union of both sample grids, best realization per net.
    let nets_of = |fwd: usize, rev: usize| -> Vec<f64> {
        let mut nets: Vec<f64> = grid.flow_axes[fwd].samples();
        nets.extend(grid.flow_axes[rev].samples().iter().map(|&q| -q));
        nets.sort_by(f64::total_cmp);
        nets.dedup();
        nets
    };
    let pair_flows = |fwd_arc: usize, rev_arc: usize, n: f64, maximal: bool| -> (f64, f64) {
        if maximal {
            let f = net.arcs[fwd_arc].flow_max.min(n + net.arcs[rev_arc].flow_max);
            (f, f - n)
        } else if n >= 0.0 {
            (n, 0.0)
        } else {
            (0.0, -n)
        }
    };
    let nets1 = nets_of(0, 1);
    let nets2 = nets_of(2, 3);
    let (lo, hi) = net.level_bounds();
    let mut best = f64::INFINITY;
    for &n1a in &nets1 {
        for &n2a in &nets2 {
            for max1a in [false, true] {
                for max2a in [false, true] {
                    let (f0, r0) = pair_flows(0, 1, n1a, max1a);
                    let (f2, r2) = pair_flows(2, 3, n2a, max2a);
                    let flows0 = vec![f0, r0, f2, r2];
                    let l1 = step_dynamics(&net.initial_levels, &flows0, &net);
                    if l1.iter().enumerate().any(|(i, &l)| l < lo[i] - 1e-9 || l > hi[i] + 1e-9) {
                        continue;
                    }
                    let c0 = exact_stage_cost(&net.initial_levels, &flows0, prices.prices[0], &net);
                    for &n1b in &nets1 {
                        for &n2b in &nets2 {
                            for max1b in [false, true] {
                                for max2b in [false, true] {
                                    let (g0, q0) = pair_flows(0, 1, n1b, max1b);
                                    let (g2, q2) = pair_flows(2, 3, n2b, max2b);
                                    let flows1 = vec![g0, q0, g2, q2];
                                    let l2 = step_dynamics(&l1, &flows1, &net);
                                    if l2
                                        .iter()
                                        .enumerate()
                                        .any(|(i, &l)| l < lo[i] - 1e-9 || l > hi[i] + 1e-9)
                                    {
                                        continue;
                                    }
                                    let c1 = exact_stage_cost(&l1, &flows1, prices.prices[1], &net);
                                    let total = c0 + c1 + g_tilde(&l2);
                                    if total < best {
                                        best = total;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let rel = (achieved - best).abs() / (1.0 + best.abs());
    assert!(rel < 0.02, "ddp {achieved} vs enumeration {best} (rel {rel})");
    // The enumeration optimum can only be at least as good.
    assert!(achieved >= best - 1e-6 * (1.0 + best.abs()));
}

#[test]
fn bounds_report_is_internally_consistent() {
    let net = two_reservoir();
    let prices = preset_prices(29, 12);
    let grid = Grid::regular(&net, 9, 9);
    let opts = DdpOptions { bound_mode: BoundMode::Tightened, ..Default::default() };
    let result = run_algorithm1(&net, &prices, 0, 3, 12, &net.initial_levels, &grid, &opts).unwrap();
    let report =
        bounds_report(&result, &net, &prices, 0, 3, 12, &net.initial_levels, &grid, &opts, Some(-1.0))
            .unwrap();
    assert!((report.theorem2_upper - (report.g0_lower + report.epsilon_surrogate + report.sum_delta)).abs() < 1e-9);
    assert_eq!(report.theorem3_upper, Some(-1.0 + report.epsilon_surrogate + report.sum_delta));
    assert!(report.sum_delta >= 0.0 && report.epsilon_surrogate >= 0.0);

    let static_delta =
        horizon_error_bound(&net, &prices, 0, 3, 12, BoundMode::Static, &net.initial_levels);
    assert!(report.sum_delta <= static_delta + 1e-9);
    // Iteration log is one JSON object per line.
    let log = result.iteration_log();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("iter").is_some() && v.get("ub").is_some());
    }
}
