//! Split-horizon dual dynamic programming.
//!
//! The horizon `[t0, t_end)` is split at `t1`: the first stage keeps the
//! exact bilinear model and is solved by grid DP, the second stage is the
//! McCormick-relaxed LP. Each iteration solves the second stage at the
//! first stage's endpoint, reads the duals of the initial-state coupling
//! rows, and adds the Benders cut `a = -lambda_coupling`,
//! `b = objective - a . x` to the collection bounding the second-stage value
//! function from below; the first stage is then re-solved against the
//! pointwise maximum of the cuts. Termination: the cut collection is tight
//! at the current endpoint (UB - LB within tolerance).
//!
//! Envelope boxes are built once, anchored at the whole-problem start state,
//! and never rebuilt across iterations; rebuilding them would change the LP
//! between iterations and lose finite convergence.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::dp::{self, DpError, DpOptions, Grid};
use crate::linearize::{
    bilinear_terms, horizon_error_bound, level_bounds_at, mccormick_envelope, term_box, BoundMode,
};
use crate::lp::{solve_lp, LpError, LpProblem, LpSolution, LpStatus};
use crate::model::{
    exact_objective, step_dynamics, ModelError, Node, PriceSeries, ReservoirNetwork, Trajectory,
};

#[derive(Debug, Error)]
pub enum DdpError {
    #[error("empty second stage (t1 == t_end); solve the first stage directly")]
    EmptySecondStage,
    #[error("first stage is empty (t1 == t0); use a pure LP solve")]
    EmptyFirstStage,
    #[error("second stage infeasible at {state:?}; zero flow should always be feasible, so the template is inconsistent with the state")]
    SecondStageInfeasible { state: Vec<f64> },
    #[error("second stage unbounded; the terminal water credit is missing or wrong")]
    SecondStageUnbounded,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One affine underestimator `a . x + b` of the second-stage value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub a: Vec<f64>,
    pub b: f64,
    pub origin_iteration: usize,
}

impl Cut {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }
}

/// Collection of cuts; evaluates as their pointwise maximum, zero when empty
/// (the first-stage warm-up solve runs against a zero continuation).
#[derive(Debug, Clone, Default)]
pub struct CutSet {
    cuts: Vec<Cut>,
}

impl CutSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cut> {
        self.cuts.iter()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        if self.cuts.is_empty() {
            0.0
        } else {
            self.cuts.iter().map(|c| c.evaluate(x)).fold(f64::NEG_INFINITY, f64::max)
        }
    }

    /// Inserts unless an existing cut matches coefficient-wise within 1e-9
    /// relative. Returns whether the cut was new.
    pub fn insert(&mut self, cut: Cut) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        for existing in &self.cuts {
            if existing.a.len() == cut.a.len()
                && close(existing.b, cut.b)
                && existing.a.iter().zip(&cut.a).all(|(&x, &y)| close(x, y))
            {
                return false;
            }
        }
        self.cuts.push(cut);
        true
    }
}

/// Second-stage LP with a parameter slot for the coupling state. Variable
/// layout: levels `t1..=t_end`, then flows `t1..t_end`, then the bilinear
/// stand-ins; the coupling rows sit first in the equality block.
#[derive(Debug, Clone)]
pub struct SecondStageTemplate {
    pub lp: LpProblem,
    pub t0: usize,
    pub t1: usize,
    pub t_end: usize,
    pub bound_mode: BoundMode,
    num_reservoirs: usize,
    num_arcs: usize,
    terms_per_step: usize,
    flows_offset: usize,
    chi_offset: usize,
}

impl SecondStageTemplate {
    pub fn level_var(&self, t: usize, i: usize) -> usize {
        (t - self.t1) * self.num_reservoirs + i
    }

    pub fn flow_var(&self, t: usize, a: usize) -> usize {
        self.flows_offset + (t - self.t1) * self.num_arcs + a
    }

    fn chi_var(&self, t: usize, k: usize) -> usize {
        self.chi_offset + (t - self.t1) * self.terms_per_step + k
    }

    /// Indices of the coupling rows in the equality block.
    pub fn coupling_rows(&self) -> std::ops::Range<usize> {
        0..self.num_reservoirs
    }
}

/// Builds the second-stage LP over `[t1, t_end)` with envelope boxes
/// anchored at `(t0, reference_levels)`.
pub fn build_second_stage_lp(
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    t0: usize,
    t1: usize,
    t_end: usize,
    bound_mode: BoundMode,
    reference_levels: &[f64],
) -> Result<SecondStageTemplate, DdpError> {
    if t1 >= t_end {
        return Err(DdpError::EmptySecondStage);
    }
    if prices.prices.len() < t_end {
        return Err(DdpError::InvalidInput("price series shorter than horizon".into()));
    }
    if prices.terminal_values.len() != net.num_reservoirs() {
        return Err(DdpError::InvalidInput("terminal values length mismatch".into()));
    }

    let n_res = net.num_reservoirs();
    let n_arc = net.num_arcs();
    let steps = t_end - t1;
    // Bilinear terms repeat identically each step; take the shape at t1.
    let terms = bilinear_terms(net, t1, 1.0);
    let n_terms = terms.len();

    let n_levels = n_res * (steps + 1);
    let n_flows = n_arc * steps;
    let n_chi = n_terms * steps;
    let mut lp = LpProblem::new(n_levels + n_flows + n_chi);
    let mut tpl = SecondStageTemplate {
        lp: LpProblem::new(0),
        t0,
        t1,
        t_end,
        bound_mode,
        num_reservoirs: n_res,
        num_arcs: n_arc,
        terms_per_step: n_terms,
        flows_offset: n_levels,
        chi_offset: n_levels + n_flows,
    };

    // Bounds and names.
    for t in t1..=t_end {
        for (i, r) in net.reservoirs.iter().enumerate() {
            let v = tpl.level_var(t, i);
            lp.lower[v] = r.level_min;
            lp.upper[v] = r.level_max;
            lp.var_names[v] = format!("l[{t},{i}]");
        }
    }
    for t in t1..t_end {
        for (a, arc) in net.arcs.iter().enumerate() {
            let v = tpl.flow_var(t, a);
            lp.lower[v] = arc.flow_min;
            lp.upper[v] = arc.flow_max;
            lp.var_names[v] = format!("v[{t},{a}]");
        }
        let level_bounds = level_bounds_at(net, bound_mode, t - t0, reference_levels);
        for (k, term) in terms.iter().enumerate() {
            let bx = term_box(net, term, &level_bounds);
            let (chi_lo, chi_hi) = bx.product_hull();
            let v = tpl.chi_var(t, k);
            lp.lower[v] = chi_lo;
            lp.upper[v] = chi_hi;
            lp.var_names[v] = format!("chi[{t},{k}]");
        }
    }

    // Objective: linear flow term + relaxed bilinear term + terminal credit.
    for t in t1..t_end {
        let p = prices.prices[t];
        for (a, arc) in net.arcs.iter().enumerate() {
            lp.objective[tpl.flow_var(t, a)] = p * arc.alpha;
        }
        for (k, term) in terms.iter().enumerate() {
            lp.objective[tpl.chi_var(t, k)] = p * term.coefficient;
        }
    }
    for (i, &w) in prices.terminal_values.iter().enumerate() {
        lp.objective[tpl.level_var(t_end, i)] = -w;
    }

    // Coupling rows first: l[t1, i] = x_i (rhs patched per solve).
    for i in 0..n_res {
        lp.push_eq(vec![(tpl.level_var(t1, i), 1.0)], reference_levels[i], format!("couple[{i}]"));
    }
    // Dynamics: l[t+1, i] - l[t, i] - (inflows - outflows) / gamma = 0.
    for t in t1..t_end {
        for (i, r) in net.reservoirs.iter().enumerate() {
            let mut row = vec![(tpl.level_var(t + 1, i), 1.0), (tpl.level_var(t, i), -1.0)];
            for (a, arc) in net.arcs.iter().enumerate() {
                if arc.dest == Node::Reservoir(i) {
                    row.push((tpl.flow_var(t, a), -1.0 / r.gamma));
                }
                if arc.source == Node::Reservoir(i) {
                    row.push((tpl.flow_var(t, a), 1.0 / r.gamma));
                }
            }
            lp.push_eq(row, 0.0, format!("dyn[{t},{i}]"));
        }
    }
    // McCormick envelopes per bilinear term and step.
    for t in t1..t_end {
        let level_bounds = level_bounds_at(net, bound_mode, t - t0, reference_levels);
        for (k, term) in terms.iter().enumerate() {
            let bx = term_box(net, term, &level_bounds);
            let rows = mccormick_envelope(&bx);
            let v_var = tpl.flow_var(t, term.arc);
            let l_var = tpl.level_var(t, term.reservoir);
            let chi_var = tpl.chi_var(t, k);
            for (ri, row) in rows.rows.iter().enumerate() {
                let mut sparse = Vec::with_capacity(3);
                if row.v_coef != 0.0 {
                    sparse.push((v_var, row.v_coef));
                }
                if row.l_coef != 0.0 {
                    sparse.push((l_var, row.l_coef));
                }
                sparse.push((chi_var, row.chi_coef));
                sparse.sort_by_key(|&(j, _)| j);
                lp.push_in(sparse, row.rhs, format!("env[{t},{k},{ri}]"));
            }
        }
    }

    tpl.lp = lp;
    Ok(tpl)
}

/// Outcome of one second-stage solve.
#[derive(Debug, Clone)]
pub struct SecondStageSolution {
    /// The second-stage value at the coupling state.
    pub objective: f64,
    /// Duals of the coupling rows under the kernel's sign convention.
    pub coupling_duals: Vec<f64>,
    /// Levels `t1 ..= t_end`, replayed through the exact dynamics.
    pub tail_levels: Vec<Vec<f64>>,
    /// Flows `t1 .. t_end`, clamped to their boxes.
    pub tail_flows: Vec<Vec<f64>>,
    pub lp_solution: LpSolution,
}

/// Solves the template at `x_t1`. Infeasibility is a hard error: zero flow is
/// feasible from any in-box state, so it can only signal a construction bug
/// or an unreachable state fed to a tightened template.
pub fn solve_second_stage(
    tpl: &SecondStageTemplate,
    net: &ReservoirNetwork,
    x_t1: &[f64],
) -> Result<SecondStageSolution, DdpError> {
    if x_t1.len() != tpl.num_reservoirs {
        return Err(DdpError::InvalidInput("coupling state dimension mismatch".into()));
    }
    for (i, r) in net.reservoirs.iter().enumerate() {
        if x_t1[i] < r.level_min - 1e-9 || x_t1[i] > r.level_max + 1e-9 {
            return Err(DdpError::InvalidInput(format!("coupling state {i} out of level bounds")));
        }
    }
    let mut lp = tpl.lp.clone();
    for (i, &x) in x_t1.iter().enumerate() {
        lp.rhs_eq[i] = x;
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(DdpError::SecondStageInfeasible { state: x_t1.to_vec() }),
        LpStatus::Unbounded => return Err(DdpError::SecondStageUnbounded),
    }

    let steps = tpl.t_end - tpl.t1;
    let mut tail_flows = Vec::with_capacity(steps);
    for t in tpl.t1..tpl.t_end {
        let flows: Vec<f64> = (0..tpl.num_arcs)
            .map(|a| {
                let arc = &net.arcs[a];
                sol.x[tpl.flow_var(t, a)].clamp(arc.flow_min, arc.flow_max)
            })
            .collect();
        tail_flows.push(flows);
    }
    let mut tail_levels = vec![x_t1.to_vec()];
    for flows in &tail_flows {
        tail_levels.push(step_dynamics(tail_levels.last().unwrap(), flows, net));
    }

    let coupling_duals = tpl.coupling_rows().map(|i| sol.dual_eq[i]).collect();
    Ok(SecondStageSolution {
        objective: sol.objective,
        coupling_duals,
        tail_levels,
        tail_flows,
        lp_solution: sol,
    })
}

/// Benders cut from an optimal second-stage solve: the LP value function is
/// convex in the coupling right-hand side and `-lambda` is a subgradient, so
/// `a = -lambda`, `b = objective - a . x` underestimates the second-stage
/// value everywhere and is tight at the generating state.
pub fn extract_cut(sol: &SecondStageSolution, x_t1: &[f64], origin_iteration: usize) -> Cut {
    let a: Vec<f64> = sol.coupling_duals.iter().map(|&l| -l).collect();
    let b = sol.objective - a.iter().zip(x_t1).map(|(a, x)| a * x).sum::<f64>();
    Cut { a, b, origin_iteration }
}

#[derive(Debug, Clone, Copy)]
pub struct DdpOptions {
    pub bound_mode: BoundMode,
    /// Convergence: UB - LB <= max(tol_rel * (1 + |UB|), tol_abs).
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iterations: usize,
    pub dp: DpOptions,
}

impl Default for DdpOptions {
    fn default() -> Self {
        DdpOptions {
            bound_mode: BoundMode::Static,
            tol_rel: 1e-6,
            tol_abs: 1e-4,
            max_iterations: 25,
            dp: DpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub x_t1: Vec<f64>,
    pub ub: f64,
    pub lb: f64,
    pub cut_count: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug)]
pub struct DdpResult {
    pub status: DdpStatus,
    /// Concatenated first-stage and second-stage arguments;
    /// `stage_boundary` is `t1 - t0`.
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub records: Vec<IterationRecord>,
    pub cuts: CutSet,
    /// Second-stage objective at the endpoint of each iteration.
    pub ub_history: Vec<f64>,
    /// Cut-set value at the same endpoint (negative infinity on the first
    /// pass, before any cut exists).
    pub lb_history: Vec<f64>,
    /// First-stage problem optimum per solve; monotone nondecreasing as
    /// cuts accumulate.
    pub g0_history: Vec<f64>,
    /// Lower bound on the split-horizon optimum at convergence.
    pub g0_lower: f64,
    pub first_stage_cost: f64,
    pub second_stage_objective: f64,
    /// Exact bilinear objective of the returned concatenated arguments.
    pub realized_exact_objective: f64,
    pub x_t1: Vec<f64>,
}

impl DdpResult {
    /// Line-delimited JSON iteration log.
    pub fn iteration_log(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }
}

fn window_prices(prices: &PriceSeries, t0: usize, t_end: usize) -> PriceSeries {
    PriceSeries {
        prices: prices.prices[t0..t_end].to_vec(),
        terminal_values: prices.terminal_values.clone(),
    }
}

/// The split-horizon DDP loop. `t0 <= t1 < t_end` are absolute timesteps;
/// `start_levels` is the state at `t0` and anchors the tightened envelope
/// boxes.
#[allow(clippy::too_many_arguments)]
pub fn run_algorithm1(
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    t0: usize,
    t1: usize,
    t_end: usize,
    start_levels: &[f64],
    grid: &Grid,
    opts: &DdpOptions,
) -> Result<DdpResult, DdpError> {
    if t1 <= t0 {
        return Err(DdpError::EmptyFirstStage);
    }
    let template = build_second_stage_lp(net, prices, t0, t1, t_end, opts.bound_mode, start_levels)?;

    let mut cuts = CutSet::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut ub_history = Vec::new();
    let mut lb_history = Vec::new();
    let mut g0_history = Vec::new();

    // Warm-up first-stage solve against a zero continuation.
    let solve_first = |cuts: &CutSet| -> Result<(Trajectory, f64), DdpError> {
        let terminal = |l: &[f64]| cuts.evaluate(l);
        let sol = dp::solve_dp(net, prices, t0, t1, &terminal, grid, start_levels, &opts.dp)?;
        let (traj, _clip) =
            dp::extract_policy_trajectory(&sol.table, start_levels, net, prices, &terminal)?;
        Ok((traj, sol.value_at_start))
    };

    let (mut first_traj, mut g0_value) = solve_first(&cuts)?;
    g0_history.push(g0_value);

    let mut status = DdpStatus::MaxIterations;
    let mut second: Option<SecondStageSolution> = None;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let iter_start = Instant::now();
        let x_t1 = first_traj.levels.last().unwrap().clone();

        let sec = solve_second_stage(&template, net, &x_t1)?;
        let ub = sec.objective;
        let lb = if iter == 1 { f64::NEG_INFINITY } else { cuts.evaluate(&x_t1) };
        ub_history.push(ub);
        lb_history.push(lb);
        records.push(IterationRecord {
            iter,
            x_t1: x_t1.clone(),
            ub,
            lb,
            cut_count: cuts.len(),
            wall_ms: iter_start.elapsed().as_secs_f64() * 1e3,
        });
        second = Some(sec);

        let tol = opts.tol_abs.max(opts.tol_rel * (1.0 + ub.abs()));
        if ub - lb <= tol {
            status = DdpStatus::Converged;
            break;
        }

        let cut = extract_cut(second.as_ref().unwrap(), &x_t1, iter);
        cuts.insert(cut);

        let (traj, value) = solve_first(&cuts)?;
        first_traj = traj;
        g0_value = value;
        g0_history.push(value);
        if let Some(last) = records.last_mut() {
            last.wall_ms = iter_start.elapsed().as_secs_f64() * 1e3;
        }
    }

    let second = second.expect("at least one iteration ran");
    let x_t1 = first_traj.levels.last().unwrap().clone();

    // Concatenate arguments; the second-stage tail was solved at exactly
    // this endpoint.
    let mut levels = first_traj.levels.clone();
    levels.extend(second.tail_levels.iter().skip(1).cloned());
    let mut flows = first_traj.flows.clone();
    flows.extend(second.tail_flows.iter().cloned());

    let terminal = |l: &[f64]| cuts.evaluate(l);
    let first_stage_cost = first_traj.objective - terminal(&x_t1);
    let mut trajectory = Trajectory {
        levels,
        flows,
        objective: first_stage_cost + second.objective,
        stage_boundary: t1 - t0,
    };
    let realized = exact_objective(&trajectory, &window_prices(prices, t0, t_end), net);
    trajectory.objective = realized;

    Ok(DdpResult {
        status,
        trajectory,
        iterations,
        records,
        cuts,
        ub_history,
        lb_history,
        g0_history,
        g0_lower: g0_value,
        first_stage_cost,
        second_stage_objective: second.objective,
        realized_exact_objective: realized,
        x_t1,
    })
}

/// Suboptimality accounting for a finished run.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub bound_mode: String,
    /// Lower bound on the split-horizon optimum (the converged first-stage
    /// problem value).
    pub g0_lower: f64,
    /// Observed first-stage value change under one grid refinement; a
    /// measured surrogate for the solve tolerance, not a certified bound.
    pub epsilon_surrogate: f64,
    /// Worst-case envelope slack summed over the second stage.
    pub sum_delta: f64,
    /// `g0_lower + epsilon_surrogate + sum_delta`.
    pub theorem2_upper: f64,
    pub realized_exact_objective: f64,
    /// Reference optimum, when an oracle value is supplied.
    pub oracle_g0: Option<f64>,
    /// `oracle_g0 + epsilon_surrogate + sum_delta`.
    pub theorem3_upper: Option<f64>,
}

/// Builds the suboptimality report for a converged run. `oracle_g0`, when
/// supplied, is an independent estimate of the exact problem's optimum.
#[allow(clippy::too_many_arguments)]
pub fn bounds_report(
    result: &DdpResult,
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    t0: usize,
    t1: usize,
    t_end: usize,
    start_levels: &[f64],
    grid: &Grid,
    opts: &DdpOptions,
    oracle_g0: Option<f64>,
) -> Result<BoundsReport, DdpError> {
    let sum_delta =
        horizon_error_bound(net, prices, t0, t1, t_end, opts.bound_mode, start_levels);
    let cuts = &result.cuts;
    let terminal = |l: &[f64]| cuts.evaluate(l);
    let (epsilon, _, _) = dp::refinement_epsilon(
        net,
        prices,
        t0,
        t1,
        &terminal,
        grid,
        start_levels,
        &opts.dp,
    )?;
    Ok(BoundsReport {
        bound_mode: opts.bound_mode.to_string(),
        g0_lower: result.g0_lower,
        epsilon_surrogate: epsilon,
        sum_delta,
        theorem2_upper: result.g0_lower + epsilon + sum_delta,
        realized_exact_objective: result.realized_exact_objective,
        oracle_g0,
        theorem3_upper: oracle_g0.map(|g| g + epsilon + sum_delta),
    })
}

#[cfg(test)]
mod tests;
