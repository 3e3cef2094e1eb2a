use super::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Solves a dense square system by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut rhs = b.to_vec();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, piv);
        rhs.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                if f != 0.0 {
                    for k in c..n {
                        m[r][k] -= f * m[c][k];
                    }
                    rhs[r] -= f * rhs[c];
                }
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / m[i][i]).collect())
}

/// Independent LP oracle: enumerate every candidate vertex (active-set
/// combination), keep the feasible ones, return the minimum objective.
fn vertex_enumeration_optimum(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars;
    let mut constraints: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, &rhs) in p.rows_in.iter().zip(&p.rhs_in) {
        let mut dense = vec![0.0; n];
        for &(j, v) in row {
            dense[j] += v;
        }
        constraints.push((dense, rhs));
    }
    for j in 0..n {
        let mut lo = vec![0.0; n];
        lo[j] = 1.0;
        constraints.push((lo.clone(), p.lower[j]));
        constraints.push((lo, p.upper[j]));
    }
    let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, &rhs) in p.rows_eq.iter().zip(&p.rhs_eq) {
        let mut dense = vec![0.0; n];
        for &(j, v) in row {
            dense[j] += v;
        }
        eq_rows.push((dense, rhs));
    }
    let k = n - eq_rows.len();
    let ids: Vec<usize> = (0..constraints.len()).collect();
    let mut best: Option<f64> = None;
    let mut combo = vec![0usize; k];
    fn rec(
        ids: &[usize],
        k: usize,
        start: usize,
        combo: &mut Vec<usize>,
        depth: usize,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if depth == k {
            visit(combo);
            return;
        }
        for i in start..ids.len() {
            combo[depth] = ids[i];
            rec(ids, k, i + 1, combo, depth + 1, visit);
        }
    }
    let mut visit = |active: &[usize]| {
        let mut a: Vec<Vec<f64>> = eq_rows.iter().map(|(r, _)| r.clone()).collect();
        let mut b: Vec<f64> = eq_rows.iter().map(|(_, v)| *v).collect();
        for &i in active {
            a.push(constraints[i].0.clone());
            b.push(constraints[i].1);
        }
        if let Some(x) = solve_square(&a, &b) {
            let feasible = p
                .rows_in
                .iter()
                .zip(&p.rhs_in)
                .all(|(row, &rhs)| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>() <= rhs + 1e-7)
                && (0..p.num_vars).all(|j| x[j] >= p.lower[j] - 1e-7 && x[j] <= p.upper[j] + 1e-7);
            if feasible {
                let obj: f64 = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
    };
    rec(&ids, k, 0, &mut combo, 0, &mut visit);
    best
}

fn random_boxed_lp(rng: &mut StdRng, n: usize, m_in: usize, m_eq: usize) -> LpProblem {
    let mut p = LpProblem::new(n);
    let mut x0 = vec![0.0; n];
    for j in 0..n {
        p.lower[j] = 0.0;
        p.upper[j] = rng.gen_range(0.5..3.0);
        x0[j] = p.upper[j] * rng.gen_range(0.2..0.8);
        p.objective[j] = rng.gen_range(-2.0..2.0);
    }
    for _ in 0..m_in {
        let row: Row = (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
        let ax: f64 = row.iter().map(|&(j, v)| v * x0[j]).sum();
        let rhs = ax + rng.gen_range(0.1..2.0);
        p.push_in(row, rhs, "");
    }
    for _ in 0..m_eq {
        let row: Row = (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
        let ax: f64 = row.iter().map(|&(j, v)| v * x0[j]).sum();
        p.push_eq(row, ax, "");
    }
    p
}

fn assert_kkt(p: &LpProblem, sol: &LpSolution) {
    assert_eq!(sol.status, LpStatus::Optimal);
    let scale = 1.0 + sol.objective.abs();
    for &nu in &sol.dual_in {
        assert!(nu >= -1e-9, "dual feasibility violated: nu = {nu}");
    }
    let gap = (sol.objective - sol.dual_objective(p)).abs();
    assert!(gap <= 1e-8 * scale, "strong duality gap {gap} (obj {})", sol.objective);
    let comp = sol.max_complementarity_residual(p);
    assert!(comp <= 1e-7 * scale, "complementarity residual {comp}");
}

#[test]
fn min_x_above_one() {
    let mut p = LpProblem::new(1);
    p.objective = vec![1.0];
    p.lower = vec![0.0];
    p.upper = vec![10.0];
    p.push_in(vec![(0, -1.0)], -1.0, "xge1");
    let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    assert!(close(sol.x[0], 1.0, 1e-9));
    assert!(close(sol.objective, 1.0, 1e-9));
    assert!(close(sol.dual_in[0], 1.0, 1e-9), "nu = {}", sol.dual_in[0]);
    assert_kkt(&p, &sol);
}

#[test]
fn simple_box_corner() {
    let mut p = LpProblem::new(2);
    p.objective = vec![-1.0, -1.0];
    p.lower = vec![0.0, 0.0];
    p.upper = vec![1.0, 1.0];
    p.push_in(vec![(0, 1.0), (1, 1.0)], 1.0, "cap");
    let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    assert!(close(sol.objective, -1.0, 1e-9));
    assert_kkt(&p, &sol);
}

#[test]
fn equality_row() {
    let mut p = LpProblem::new(2);
    p.objective = vec![1.0, 0.0];
    p.lower = vec![0.0, 0.0];
    p.upper = vec![5.0, 5.0];
    p.push_eq(vec![(0, 1.0), (1, 1.0)], 1.0, "sum");
    let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    assert!(close(sol.objective, 0.0, 1e-9));
    assert!(close(sol.x[1], 1.0, 1e-9));
    assert_kkt(&p, &sol);
}

#[test]
fn infeasible_is_certified() {
    let mut p = LpProblem::new(1);
    p.lower = vec![0.0];
    p.upper = vec![1.0];
    p.push_in(vec![(0, -1.0)], -2.0, "xge2");
    let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    assert_eq!(sol.status, LpStatus::Infeasible);
}

#[test]
fn unbounded_is_certified() {
    let mut p = LpProblem::new(1);
    p.objective = vec![-1.0];
    p.lower = vec![0.0];
    p.upper = vec![f64::INFINITY];
    p.push_in(vec![(0, -1.0)], 0.0, "xge0");
    let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    assert_eq!(sol.status, LpStatus::Unbounded);
}

#[test]
fn fifty_random_lps_match_vertex_enumeration() {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut optimal = 0;
    for trial in 0..50 {
        let n = rng.gen_range(2..=6);
        let m_in = rng.gen_range(1..=5);
        let m_eq = usize::from(rng.gen_bool(0.3) && n > 2);
        let p = random_boxed_lp(&mut rng, n, m_in, m_eq);
        let sol = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
        let oracle = vertex_enumeration_optimum(&p);
        match sol.status {
            LpStatus::Optimal => {
                optimal += 1;
                let want = oracle.expect("oracle found no vertex but solver says optimal");
                assert!(
                    (sol.objective - want).abs() <= 1e-8 * (1.0 + want.abs()),
                    "trial {trial}: solver {} vs oracle {want}",
                    sol.objective
                );
                assert_kkt(&p, &sol);
            }
            LpStatus::Infeasible => assert!(oracle.is_none(), "trial {trial}: oracle disagrees"),
            LpStatus::Unbounded => panic!("boxed LP cannot be unbounded"),
        }
    }
    assert!(optimal >= 45, "almost all random instances are feasible by construction");
}

#[test]
fn backends_agree_on_medium_instances() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..10 {
        let n = rng.gen_range(4..=8);
        let m_in = rng.gen_range(2..=6);
        let p = random_boxed_lp(&mut rng, n, m_in, 0);
        let a = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
        let b = solve_lp_with(&p, Backend::SparseIpm).unwrap();
        assert_eq!(a.status, b.status);
        if a.status == LpStatus::Optimal {
            assert!(close(a.objective, b.objective, 1e-6), "{} vs {}", a.objective, b.objective);
            assert_kkt(&p, &b);
        }
    }
}

#[test]
fn resolving_is_deterministic() {
    let mut rng = StdRng::seed_from_u64(99);
    let p = random_boxed_lp(&mut rng, 5, 4, 1);
    for backend in [Backend::DenseSimplex, Backend::SparseIpm] {
        let a = solve_lp_with(&p, backend).unwrap();
        let b = solve_lp_with(&p, backend).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn dump_parse_roundtrip() {
    let mut rng = StdRng::seed_from_u64(5);
    let p = random_boxed_lp(&mut rng, 4, 3, 1);
    let q = LpProblem::parse(&p.dump()).unwrap();
    assert_eq!(p.num_vars, q.num_vars);
    let a = solve_lp_with(&p, Backend::DenseSimplex).unwrap();
    let b = solve_lp_with(&q, Backend::DenseSimplex).unwrap();
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn milp_with_all_binaries_fixed_equals_lp() {
    let mut rng = StdRng::seed_from_u64(3);
    let mut lp = random_boxed_lp(&mut rng, 4, 3, 0);
    lp.lower[0] = 1.0;
    lp.upper[0] = 1.0;
    lp.lower[1] = 0.0;
    lp.upper[1] = 0.0;
    let milp = MilpProblem { lp: lp.clone(), binary_vars: vec![0, 1], sos1_groups: vec![] };
    let sol = solve_milp(&milp, &MilpOptions::default()).unwrap();
    let direct = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, MilpStatus::Optimal);
    assert!(close(sol.objective, direct.objective, 1e-9));
}

#[test]
fn milp_knapsack() {
    // max 3 x1 + 2 x2  s.t. x1 + x2 <= 1,  binary
    let mut lp = LpProblem::new(2);
    lp.objective = vec![-3.0, -2.0];
    lp.lower = vec![0.0, 0.0];
    lp.upper = vec![1.0, 1.0];
    lp.push_in(vec![(0, 1.0), (1, 1.0)], 1.0, "knap");
    let milp = MilpProblem { lp, binary_vars: vec![0, 1], sos1_groups: vec![] };
    let sol = solve_milp(&milp, &MilpOptions::default()).unwrap();
    assert_eq!(sol.status, MilpStatus::Optimal);
    assert!(close(sol.objective, -3.0, 1e-9));
    assert!(close(sol.x[0], 1.0, 1e-6));
}

#[test]
fn twenty_random_milps_match_enumeration() {
    let mut rng = StdRng::seed_from_u64(1234);
    for trial in 0..20 {
        let n_bin = rng.gen_range(2..=8);
        let n_cont = rng.gen_range(0..=2);
        let n = n_bin + n_cont;
        let m_in = rng.gen_range(1..=4);
        let mut lp = random_boxed_lp(&mut rng, n, m_in, 0);
        for j in 0..n_bin {
            lp.lower[j] = 0.0;
            lp.upper[j] = 1.0;
        }
        let milp = MilpProblem { lp: lp.clone(), binary_vars: (0..n_bin).collect(), sos1_groups: vec![] };
        let sol = solve_milp(&milp, &MilpOptions::default()).unwrap();

        // Brute force over all binary assignments.
        let mut best: Option<f64> = None;
        let mut work = lp.clone();
        for mask in 0..(1u32 << n_bin) {
            for j in 0..n_bin {
                let v = f64::from((mask >> j) & 1);
                work.lower[j] = v;
                work.upper[j] = v;
            }
            let s = solve_lp(&work).unwrap();
            if s.status == LpStatus::Optimal {
                best = Some(best.map_or(s.objective, |b: f64| b.min(s.objective)));
            }
        }
        match best {
            Some(want) => {
                assert_eq!(sol.status, MilpStatus::Optimal, "trial {trial}");
                assert!(
                    (sol.objective - want).abs() <= 1e-7 * (1.0 + want.abs()),
                    "trial {trial}: milp {} vs enumeration {want}",
                    sol.objective
                );
            }
            None => assert_eq!(sol.status, MilpStatus::Infeasible, "trial {trial}"),
        }
    }
}

#[test]
fn milp_incumbent_never_beats_relaxation() {
    let mut rng = StdRng::seed_from_u64(77);
    for _ in 0..5 {
        let mut lp = random_boxed_lp(&mut rng, 5, 3, 0);
        for j in 0..3 {
            lp.lower[j] = 0.0;
            lp.upper[j] = 1.0;
        }
        let relax = solve_lp(&lp).unwrap();
        let milp = MilpProblem { lp, binary_vars: vec![0, 1, 2], sos1_groups: vec![] };
        let sol = solve_milp(&milp, &MilpOptions::default()).unwrap();
        if sol.status == MilpStatus::Optimal && relax.status == LpStatus::Optimal {
            assert!(sol.objective >= relax.objective - 1e-7 * (1.0 + relax.objective.abs()));
        }
    }
}

