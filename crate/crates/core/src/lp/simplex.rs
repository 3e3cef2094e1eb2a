//! Dense bounded-variable two-phase revised simplex.
//!
//! Variable box bounds are handled natively (no explicit bound rows), so the
//! basis stays at one column per constraint row. The inverse basis matrix is
//! kept explicitly and refreshed by full refactorization every 128 pivots.
//! Dantzig pricing with a switch to Bland's rule after a run of degenerate
//! pivots guards against cycling; all selection rules are deterministic.

use super::{LpError, LpProblem, LpSolution, LpStatus};

const FEAS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const RATIO_TIE_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Workspace {
    m: usize,
    total: usize,
    /// Column-major constraint matrix, `cols[j * m + i]`.
    cols: Vec<f64>,
    rhs: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    /// Row-major inverse of the basis matrix, `binv[i * m + k]`.
    binv: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    bland: bool,
    degenerate_run: usize,
    pivots: usize,
}

enum StepOutcome {
    Optimal,
    Unbounded,
}

impl Workspace {

    fn compute_duals(&mut self) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &bj) in self.basis.iter().enumerate() {
            let cb = self.cost[bj];
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for k in 0..m {
                    self.y[k] += cb * row[k];
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let col = &self.cols[j * self.m..(j + 1) * self.m];
        let mut d = self.cost[j];
        for i in 0..self.m {
            let a = col[i];
            if a != 0.0 {
                d -= self.y[i] * a;
            }
        }
        d
    }

    fn refactorize(&mut self) -> Result<(), LpError> {
        let m = self.m;
        // Gauss-Jordan inversion of the current basis matrix with partial
        // pivoting.
        let mut aug = vec![0.0; m * 2 * m];
        for (r, &bj) in self.basis.iter().enumerate() {
            let col = &self.cols[bj * m..(bj + 1) * m];
            for i in 0..m {
                aug[i * 2 * m + r] = col[i];
            }
        }
        for i in 0..m {
            aug[i * 2 * m + m + i] = 1.0;
        }
        for c in 0..m {
            let mut piv_row = c;
            let mut piv_val = aug[c * 2 * m + c].abs();
            for r in c + 1..m {
                let v = aug[r * 2 * m + c].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                return Err(LpError::SolverFailure("singular basis during refactorization".into()));
            }
            if piv_row != c {
                for k in 0..2 * m {
                    aug.swap(c * 2 * m + k, piv_row * 2 * m + k);
                }
            }
            let inv = 1.0 / aug[c * 2 * m + c];
            for k in 0..2 * m {
                aug[c * 2 * m + k] *= inv;
            }
            for r in 0..m {
                if r != c {
                    let f = aug[r * 2 * m + c];
                    if f != 0.0 {
                        for k in 0..2 * m {
                            aug[r * 2 * m + k] -= f * aug[c * 2 * m + k];
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = aug[i * 2 * m + m + k];
            }
        }
        // Recompute basic values from the nonbasic ones.
        let mut resid = self.rhs.clone();
        for j in 0..self.total {
            if !matches!(self.state[j], VarState::Basic(_)) && self.x[j] != 0.0 {
                let col = &self.cols[j * m..(j + 1) * m];
                for i in 0..m {
                    resid[i] -= col[i] * self.x[j];
                }
            }
        }
        for (r, &bj) in self.basis.iter().enumerate() {
            let row = &self.binv[r * m..(r + 1) * m];
            let mut v = 0.0;
            for i in 0..m {
                v += row[i] * resid[i];
            }
            self.x[bj] = v;
        }
        Ok(())
    }

    /// Runs simplex iterations on the current costs until optimal or
    /// unbounded.
    fn optimize(&mut self, iter_cap: usize) -> Result<StepOutcome, LpError> {
        let m = self.m;
        for _ in 0..iter_cap {
            self.compute_duals();
            // Entering variable.
            let mut entering: Option<(usize, f64, bool)> = None; // (col, |viol|, from_lower)
            for j in 0..self.total {
                match self.state[j] {
                    VarState::Basic(_) => continue,
                    VarState::AtLower => {
                        if self.hi[j] - self.lo[j] <= 0.0 {
                            continue;
                        }
                        let d = self.reduced_cost(j);
                        let scale = 1.0 + self.cost[j].abs();
                        if d < -COST_TOL * scale {
                            if self.bland {
                                entering = Some((j, -d, true));
                                break;
                            }
                            if entering.map_or(true, |(_, v, _)| -d > v) {
                                entering = Some((j, -d, true));
                            }
                        }
                    }
                    VarState::AtUpper => {
                        let d = self.reduced_cost(j);
                        let scale = 1.0 + self.cost[j].abs();
                        if d > COST_TOL * scale {
                            if self.bland {
                                entering = Some((j, d, false));
                                break;
                            }
                            if entering.map_or(true, |(_, v, _)| d > v) {
                                entering = Some((j, d, false));
                            }
                        }
                    }
                }
            }
            let Some((q, _, from_lower)) = entering else {
                return Ok(StepOutcome::Optimal);
            };
            let dir = if from_lower { 1.0 } else { -1.0 };

            // w = B^-1 a_q
            for i in 0..m {
                self.w[i] = 0.0;
            }
            {
                let col = &self.cols[q * m..(q + 1) * m];
                for k in 0..m {
                    let a = col[k];
                    if a != 0.0 {
                        for i in 0..m {
                            self.w[i] += self.binv[i * m + k] * a;
                        }
                    }
                }
            }

            // Ratio test over the basic variables.
            let own_range = self.hi[q] - self.lo[q];
            let mut t_row = f64::INFINITY;
            let mut leaving: Option<(usize, bool)> = None; // (row, leaves_to_lower)
            for i in 0..m {
                let bj = self.basis[i];
                let rate = dir * self.w[i];
                let (t, to_lower) = if rate > PIVOT_TOL {
                    ((self.x[bj] - self.lo[bj]) / rate, true)
                } else if rate < -PIVOT_TOL {
                    if self.hi[bj].is_finite() {
                        ((self.hi[bj] - self.x[bj]) / (-rate), false)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                let t = t.max(0.0);
                let replace = match leaving {
                    None => true,
                    Some((r_prev, _)) => {
                        if t < t_row - RATIO_TIE_TOL {
                            true
                        } else if t <= t_row + RATIO_TIE_TOL {
                            if self.bland {
                                bj < self.basis[r_prev]
                            } else {
                                self.w[i].abs() > self.w[r_prev].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if replace {
                    t_row = t.min(t_row);
                    leaving = Some((i, to_lower));
                }
            }

            let t_go = own_range.min(t_row);
            if !t_go.is_finite() {
                return Ok(StepOutcome::Unbounded);
            }

            if t_go <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > 5 * (m + self.total) {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
                self.bland = false;
            }

            self.x[q] += dir * t_go;
            for i in 0..m {
                let bj = self.basis[i];
                if self.w[i] != 0.0 {
                    self.x[bj] -= t_go * dir * self.w[i];
                }
            }
            // Prefer a bound flip when the entering variable's own range is
            // the binding limit: no basis change needed.
            if own_range <= t_row {
                self.x[q] = if from_lower { self.hi[q] } else { self.lo[q] };
                self.state[q] = if from_lower { VarState::AtUpper } else { VarState::AtLower };
                continue;
            }
            let Some((r, to_lower)) = leaving else {
                return Ok(StepOutcome::Unbounded);
            };
            let out = self.basis[r];
            self.x[out] = if to_lower { self.lo[out] } else { self.hi[out] };
            self.state[out] = if to_lower { VarState::AtLower } else { VarState::AtUpper };
            self.state[q] = VarState::Basic(r);
            self.basis[r] = q;

            // Pivot update of binv.
            let piv = self.w[r];
            if piv.abs() < 1e-13 {
                return Err(LpError::SolverFailure("vanishing pivot".into()));
            }
            let inv = 1.0 / piv;
            for k in 0..m {
                self.binv[r * m + k] *= inv;
            }
            for i in 0..m {
                if i != r {
                    let f = self.w[i];
                    if f != 0.0 {
                        for k in 0..m {
                            self.binv[i * m + k] -= f * self.binv[r * m + k];
                        }
                    }
                }
            }
            self.pivots += 1;
            if self.pivots % REFACTOR_EVERY == 0 {
                self.refactorize()?;
            }
        }
        Err(LpError::SolverFailure("iteration cap exceeded (stall)".into()))
    }
}

/// Equilibrates the problem (rows and columns to unit max-norm, objective to
/// unit scale), runs the core simplex, and maps the solution back. Mixed
/// coefficient magnitudes (µ-scale conversion factors against 10⁷-scale
/// envelope right-hand sides) otherwise wreck absolute pivot tolerances.
pub(super) fn solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.num_vars;
    let m_eq = p.rows_eq.len();
    let m_in = p.rows_in.len();

    let mut row_scale_eq = vec![1.0f64; m_eq];
    let mut row_scale_in = vec![1.0f64; m_in];
    let mut col_scale = vec![1.0f64; n];
    for _ in 0..2 {
        for (i, row) in p.rows_eq.iter().enumerate() {
            let mx = row.iter().map(|&(j, v)| (v * col_scale[j]).abs()).fold(0.0f64, f64::max);
            if mx > 0.0 {
                row_scale_eq[i] = 1.0 / mx;
            }
        }
        for (i, row) in p.rows_in.iter().enumerate() {
            let mx = row.iter().map(|&(j, v)| (v * col_scale[j]).abs()).fold(0.0f64, f64::max);
            if mx > 0.0 {
                row_scale_in[i] = 1.0 / mx;
            }
        }
        // Singleton rows are effectively bounds; letting them drive column
        // scales destroys the equilibration, so only multi-entry rows count.
        let mut col_max = vec![0.0f64; n];
        for (i, row) in p.rows_eq.iter().enumerate() {
            if row.len() < 2 {
                continue;
            }
            for &(j, v) in row {
                col_max[j] = col_max[j].max((v * row_scale_eq[i] * col_scale[j]).abs());
            }
        }
        for (i, row) in p.rows_in.iter().enumerate() {
            if row.len() < 2 {
                continue;
            }
            for &(j, v) in row {
                col_max[j] = col_max[j].max((v * row_scale_in[i] * col_scale[j]).abs());
            }
        }
        for j in 0..n {
            if col_max[j] > 0.0 {
                col_scale[j] /= col_max[j];
            } else if col_scale[j] == 1.0 {
                let bound = p.lower[j].abs().max(if p.upper[j].is_finite() { p.upper[j].abs() } else { 0.0 });
                if bound > 0.0 {
                    col_scale[j] = 1.0 / bound;
                }
            }
        }
    }
    let obj_scale = {
        let mx = (0..n).map(|j| (p.objective[j] * col_scale[j]).abs()).fold(0.0f64, f64::max);
        if mx > 0.0 {
            mx
        } else {
            1.0
        }
    };

    let mut scaled = LpProblem::new(n);
    scaled.objective = (0..n).map(|j| p.objective[j] * col_scale[j] / obj_scale).collect();
    scaled.lower = (0..n).map(|j| p.lower[j] / col_scale[j]).collect();
    scaled.upper = (0..n).map(|j| p.upper[j] / col_scale[j]).collect();
    for (i, row) in p.rows_eq.iter().enumerate() {
        let r: Row = row.iter().map(|&(j, v)| (j, v * row_scale_eq[i] * col_scale[j])).collect();
        scaled.push_eq(r, p.rhs_eq[i] * row_scale_eq[i], "");
    }
    for (i, row) in p.rows_in.iter().enumerate() {
        let r: Row = row.iter().map(|&(j, v)| (j, v * row_scale_in[i] * col_scale[j])).collect();
        scaled.push_in(r, p.rhs_in[i] * row_scale_in[i], "");
    }

    let sol = solve_core(&scaled)?;
    if sol.status != LpStatus::Optimal {
        return Ok(sol);
    }
    let x: Vec<f64> = (0..n).map(|j| sol.x[j] * col_scale[j]).collect();
    let objective = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
    let dual_eq = (0..m_eq).map(|i| sol.dual_eq[i] * row_scale_eq[i] * obj_scale).collect();
    let dual_in = (0..m_in).map(|i| sol.dual_in[i] * row_scale_in[i] * obj_scale).collect();
    Ok(LpSolution { status: LpStatus::Optimal, x, objective, dual_eq, dual_in })
}

use super::Row;

fn solve_core(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.num_vars;
    let m_eq = p.rows_eq.len();
    let m_in = p.rows_in.len();
    let m = m_eq + m_in;

    for j in 0..n {
        if p.lower[j] == f64::NEG_INFINITY && p.upper[j] == f64::INFINITY {
            return Err(LpError::Unsupported(format!("variable {j} is free; box it or use the sparse backend")));
        }
    }

    if m == 0 {
        // Pure box problem.
        let mut x = vec![0.0; n];
        for j in 0..n {
            let c = p.objective[j];
            x[j] = if c >= 0.0 { p.lower[j] } else { p.upper[j] };
            if !x[j].is_finite() {
                return Ok(LpSolution::unbounded());
            }
        }
        let objective = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
        return Ok(LpSolution { status: LpStatus::Optimal, x, objective, dual_eq: vec![], dual_in: vec![] });
    }

    let n_slack = m_in;
    let total = n + n_slack + m;
    let mut ws = Workspace {
        m,
        total,
        cols: vec![0.0; total * m],
        rhs: Vec::with_capacity(m),
        lo: vec![0.0; total],
        hi: vec![f64::INFINITY; total],
        cost: vec![0.0; total],
        x: vec![0.0; total],
        state: vec![VarState::AtLower; total],
        basis: vec![0; m],
        binv: vec![0.0; m * m],
        y: vec![0.0; m],
        w: vec![0.0; m],
        bland: false,
        degenerate_run: 0,
        pivots: 0,
    };

    for (i, row) in p.rows_eq.iter().enumerate() {
        for &(j, v) in row {
            ws.cols[j * m + i] += v;
        }
        ws.rhs.push(p.rhs_eq[i]);
    }
    for (k, row) in p.rows_in.iter().enumerate() {
        let i = m_eq + k;
        for &(j, v) in row {
            ws.cols[j * m + i] += v;
        }
        ws.cols[(n + k) * m + i] = 1.0;
        ws.rhs.push(p.rhs_in[k]);
    }
    ws.lo[..n].copy_from_slice(&p.lower);
    ws.hi[..n].copy_from_slice(&p.upper);

    // Nonbasic start at the finite bound nearest zero.
    for j in 0..n {
        if ws.lo[j].is_finite() {
            ws.x[j] = ws.lo[j];
            ws.state[j] = VarState::AtLower;
        } else {
            ws.x[j] = ws.hi[j];
            ws.state[j] = VarState::AtUpper;
        }
    }

    // Residuals decide the artificial column signs.
    let mut resid = ws.rhs.clone();
    for j in 0..n {
        if ws.x[j] != 0.0 {
            let col = &ws.cols[j * m..(j + 1) * m];
            for i in 0..m {
                resid[i] -= col[i] * ws.x[j];
            }
        }
    }
    for i in 0..m {
        let art = n + n_slack + i;
        let sign = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
        ws.cols[art * m + i] = sign;
        ws.x[art] = resid[i].abs();
        ws.basis[i] = art;
        ws.state[art] = VarState::Basic(i);
        ws.binv[i * m + i] = sign;
        ws.cost[art] = 1.0;
    }

    let iter_cap = 50_000 + 100 * (m + total);

    // Phase 1: drive the artificial sum to zero.
    match ws.optimize(iter_cap)? {
        StepOutcome::Unbounded => {
            return Err(LpError::SolverFailure("phase 1 reported unbounded".into()));
        }
        StepOutcome::Optimal => {}
    }
    let art_sum: f64 = (n + n_slack..total).map(|j| ws.x[j].abs()).sum();
    let b_scale = 1.0 + ws.rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if art_sum > 1e-7 * b_scale {
        return Ok(LpSolution::infeasible());
    }

    // Pivot residual artificials out of the basis where possible.
    for r in 0..m {
        if ws.basis[r] >= n + n_slack {
            let mut done = false;
            for j in 0..n + n_slack {
                if matches!(ws.state[j], VarState::Basic(_)) {
                    continue;
                }
                let col = &ws.cols[j * m..(j + 1) * m];
                let mut wr = 0.0;
                for k in 0..m {
                    if col[k] != 0.0 {
                        wr += ws.binv[r * m + k] * col[k];
                    }
                }
                if wr.abs() > 1e-7 {
                    // Degenerate exchange: the artificial sits at zero.
                    for i in 0..m {
                        ws.w[i] = 0.0;
                    }
                    for k in 0..m {
                        if col[k] != 0.0 {
                            for i in 0..m {
                                ws.w[i] += ws.binv[i * m + k] * col[k];
                            }
                        }
                    }
                    let out = ws.basis[r];
                    ws.state[out] = VarState::AtLower;
                    ws.x[out] = 0.0;
                    let entering_value = ws.x[j];
                    ws.state[j] = VarState::Basic(r);
                    ws.basis[r] = j;
                    ws.x[j] = entering_value;
                    let inv = 1.0 / ws.w[r];
                    for k in 0..m {
                        ws.binv[r * m + k] *= inv;
                    }
                    for i in 0..m {
                        if i != r {
                            let f = ws.w[i];
                            if f != 0.0 {
                                for k in 0..m {
                                    ws.binv[i * m + k] -= f * ws.binv[r * m + k];
                                }
                            }
                        }
                    }
                    done = true;
                    break;
                }
            }
            if !done {
                // Dependent row: pin the artificial at zero.
                ws.x[ws.basis[r]] = 0.0;
            }
        }
    }
    // Artificials may never re-enter.
    for j in n + n_slack..total {
        ws.lo[j] = 0.0;
        ws.hi[j] = 0.0;
        ws.cost[j] = 0.0;
    }

    // Phase 2.
    ws.cost[..n].copy_from_slice(&p.objective);
    for j in n..n + n_slack {
        ws.cost[j] = 0.0;
    }
    ws.bland = false;
    ws.degenerate_run = 0;
    let mut outcome = ws.optimize(iter_cap)?;
    if matches!(outcome, StepOutcome::Optimal) {
        // Drop accumulated pivot-update drift, then confirm optimality from
        // the fresh factorization.
        ws.refactorize()?;
        ws.bland = false;
        ws.degenerate_run = 0;
        outcome = ws.optimize(iter_cap)?;
    }
    if matches!(outcome, StepOutcome::Unbounded) {
        return Ok(LpSolution::unbounded());
    }
    ws.refactorize()?;

    // Final feasibility audit.
    let mut resid = ws.rhs.clone();
    for j in 0..total {
        if ws.x[j] != 0.0 {
            let col = &ws.cols[j * m..(j + 1) * m];
            for i in 0..m {
                resid[i] -= col[i] * ws.x[j];
            }
        }
    }
    let worst = resid.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if worst > 1e-6 * b_scale {
        return Err(LpError::SolverFailure(format!("residual {worst} after optimization")));
    }
    for j in 0..n {
        let scale = 1.0 + p.lower[j].abs().max(p.upper[j].abs().min(f64::MAX));
        if ws.x[j] < p.lower[j] - FEAS_TOL * scale || ws.x[j] > p.upper[j] + FEAS_TOL * scale {
            return Err(LpError::SolverFailure(format!(
                "variable {j} out of bounds after optimization: {} not in [{}, {}]",
                ws.x[j], p.lower[j], p.upper[j]
            )));
        }
    }

    ws.compute_duals();
    let dual_eq: Vec<f64> = (0..m_eq).map(|i| -ws.y[i]).collect();
    let dual_in: Vec<f64> = (0..m_in).map(|k| (-ws.y[m_eq + k]).max(0.0)).collect();
    let x = ws.x[..n].to_vec();
    let objective = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
    Ok(LpSolution { status: LpStatus::Optimal, x, objective, dual_eq, dual_in })
}
