//! Sparse interior-point backend for problems beyond the dense simplex's
//! size range. Variable bounds become explicit nonnegative-cone rows; the
//! dual vector `z` maps directly onto this module's multiplier convention
//! (`d obj / d b = -z` for both backends).

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{LpError, LpProblem, LpSolution, LpStatus};

pub(super) fn solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.num_vars;
    let m_eq = p.rows_eq.len();
    let m_in = p.rows_in.len();

    // Row layout: equalities, inequalities, then x <= hi and -x <= -lo for
    // each finite bound.
    let hi_rows: Vec<usize> = (0..n).filter(|&j| p.upper[j].is_finite()).collect();
    let lo_rows: Vec<usize> = (0..n).filter(|&j| p.lower[j].is_finite()).collect();
    let m_total = m_eq + m_in + hi_rows.len() + lo_rows.len();

    // Column-wise assembly; within a column, row indices ascend because rows
    // are visited in layout order.
    let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in p.rows_eq.iter().enumerate() {
        for &(j, v) in row {
            col_entries[j].push((i, v));
        }
    }
    for (k, row) in p.rows_in.iter().enumerate() {
        for &(j, v) in row {
            col_entries[j].push((m_eq + k, v));
        }
    }
    let mut b = Vec::with_capacity(m_total);
    b.extend_from_slice(&p.rhs_eq);
    b.extend_from_slice(&p.rhs_in);
    for (r, &j) in hi_rows.iter().enumerate() {
        col_entries[j].push((m_eq + m_in + r, 1.0));
        b.push(p.upper[j]);
    }
    for (r, &j) in lo_rows.iter().enumerate() {
        col_entries[j].push((m_eq + m_in + hi_rows.len() + r, -1.0));
        b.push(-p.lower[j]);
    }

    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for entries in &col_entries {
        for &(i, v) in entries {
            rowval.push(i);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(m_total, n, colptr, rowval, nzval);
    let p_quad = CscMatrix::zeros((n, n));
    let cones = [
        SupportedConeT::ZeroConeT(m_eq),
        SupportedConeT::NonnegativeConeT(m_total - m_eq),
    ];
    // Static regularization adds an eps*I quadratic term; with variables at
    // 1e7 scale that shifts LP optima by whole percents, so it stays off.
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .tol_feas(1e-9)
        .static_regularization_enable(false)
        .build()
        .map_err(|e| LpError::SolverFailure(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p_quad, &p.objective, &a, &b, &cones, settings);
    solver.solve();

    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Ok(LpSolution::infeasible());
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Ok(LpSolution::unbounded());
        }
        other => {
            return Err(LpError::SolverFailure(format!("interior-point status {other:?}")));
        }
    }

    let x = solver.solution.x.clone();
    let z = &solver.solution.z;
    let objective = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
    let dual_eq = z[..m_eq].to_vec();
    let dual_in = z[m_eq..m_eq + m_in].iter().map(|&v| v.max(0.0)).collect();
    Ok(LpSolution { status: LpStatus::Optimal, x, objective, dual_eq, dual_in })
}
