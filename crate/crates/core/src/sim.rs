//! Shrinking-horizon MPC harness.
//!
//! Repeatedly solve over the remaining horizon, apply the first `T_C` hours
//! of the plan on the exact plant model, advance, re-solve. The same
//! protocol drives the split-horizon method, the pure-LP baseline
//! (`t1 = 0`), the full-horizon grid-DP reference and the multi-cell
//! McCormick MILP baseline; realized performance is always the exact
//! bilinear objective of the applied trajectory, never the planner's own
//! objective.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ddp::{
    build_second_stage_lp, run_algorithm1, solve_second_stage, DdpError, DdpOptions, DdpStatus,
};
use crate::dp::{self, DpError, DpOptions, Grid};
use crate::linearize::{
    level_bounds_at, multicell_partition, row_big_m, term_box, BoundMode, EnvelopeBox,
};
use crate::lp::{LpError, LpProblem, MilpOptions, MilpProblem, MilpStatus};
use crate::model::{
    exact_stage_cost, step_dynamics, terminal_water_value, validate_trajectory, ModelError, Node,
    PriceSeries, ReservoirNetwork, Trajectory,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("resolve {resolve_index} failed: {reason}")]
    Aborted { resolve_index: usize, reason: String },
    #[error(transparent)]
    Ddp(#[from] DdpError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    SplitDdp,
    PureLp,
    DpOracle,
    Multicell { n_v: usize, n_l: usize, time_budget: Duration },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::SplitDdp => "split_ddp".into(),
            Method::PureLp => "pure_lp".into(),
            Method::DpOracle => "dp_oracle".into(),
            Method::Multicell { n_v, n_l, .. } => format!("multicell_{n_v}x{n_l}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Total simulated horizon T, hours.
    pub total_horizon: usize,
    /// Nonlinear first-stage length.
    pub t1: usize,
    /// Hours of each plan actually applied before re-solving.
    pub control_horizon: usize,
    pub method: Method,
    pub level_points: usize,
    pub flow_points: usize,
    pub bound_mode: BoundMode,
    pub seed: u64,
    pub parallel: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.control_horizon == 0 || self.control_horizon > self.total_horizon {
            return Err(SimError::InvalidConfig("need 1 <= T_C <= T".into()));
        }
        if matches!(self.method, Method::SplitDdp) && self.t1 == 0 {
            return Err(SimError::InvalidConfig(
                "t1 = 0 is only legal for the pure-LP and multi-cell baselines".into(),
            ));
        }
        if self.level_points < 2 || self.flow_points < 2 {
            return Err(SimError::InvalidConfig("grids need at least two points".into()));
        }
        Ok(())
    }

    fn ddp_options(&self) -> DdpOptions {
        DdpOptions {
            bound_mode: self.bound_mode,
            dp: DpOptions { parallel: self.parallel },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolveInfo {
    pub start_time: usize,
    pub window: usize,
    pub t1_effective: usize,
    pub wall_ms: f64,
    pub cuts: usize,
    /// Planner's objective over its window (model-specific, not realized).
    pub planned_objective: f64,
    /// Max |planned - realized| level over the applied window.
    pub divergence: f64,
    pub milp_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub method: String,
    pub t1: usize,
    pub control_horizon: usize,
    pub bound_mode: BoundMode,
    pub trajectory: Trajectory,
    /// Exact bilinear objective of the realized trajectory, terminal water
    /// credit included.
    pub realized_objective: f64,
    pub resolves: Vec<ResolveInfo>,
    pub total_wall_ms: f64,
    pub cuts_total: usize,
}

/// One planned window: levels `0..=window`, flows `0..window`
/// (window-relative), plus planner diagnostics.
struct Plan {
    levels: Vec<Vec<f64>>,
    flows: Vec<Vec<f64>>,
    objective: f64,
    cuts: usize,
    milp_gap: Option<f64>,
}

fn plan_window(
    cfg: &SimConfig,
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    tau: usize,
    window: usize,
    state: &[f64],
) -> Result<(Plan, usize), SimError> {
    let t_end = tau + window;
    let terminal_values = prices.terminal_values.clone();
    let credit = move |l: &[f64]| -> f64 {
        -terminal_values.iter().zip(l).map(|(w, l)| w * l).sum::<f64>()
    };
    let grid = Grid::regular(net, cfg.level_points, cfg.flow_points);
    let dp_opts = DpOptions { parallel: cfg.parallel };

    match cfg.method {
        Method::DpOracle => {
            let sol = dp::solve_dp(net, prices, tau, t_end, &credit, &grid, state, &dp_opts)?;
            let (traj, _) = dp::extract_policy_trajectory(&sol.table, state, net, prices, &credit)?;
            Ok((
                Plan {
                    levels: traj.levels,
                    flows: traj.flows,
                    objective: traj.objective,
                    cuts: 0,
                    milp_gap: None,
                },
                window,
            ))
        }
        Method::PureLp => {
            let tpl =
                build_second_stage_lp(net, prices, tau, tau, t_end, cfg.bound_mode, state)?;
            let sol = solve_second_stage(&tpl, net, state)?;
            Ok((
                Plan {
                    levels: sol.tail_levels,
                    flows: sol.tail_flows,
                    objective: sol.objective,
                    cuts: 0,
                    milp_gap: None,
                },
                0,
            ))
        }
        Method::SplitDdp => {
            let t1_eff = cfg.t1.min(window);
            if t1_eff == window {
                // Endgame: the whole remaining horizon fits in the exact
                // stage, so solve it as a pure DP against the water credit.
                let sol = dp::solve_dp(net, prices, tau, t_end, &credit, &grid, state, &dp_opts)?;
                let (traj, _) =
                    dp::extract_policy_trajectory(&sol.table, state, net, prices, &credit)?;
                return Ok((
                    Plan {
                        levels: traj.levels,
                        flows: traj.flows,
                        objective: traj.objective,
                        cuts: 0,
                        milp_gap: None,
                    },
                    t1_eff,
                ));
            }
            let opts = cfg.ddp_options();
            let result =
                run_algorithm1(net, prices, tau, tau + t1_eff, t_end, state, &grid, &opts)?;
            if result.status != DdpStatus::Converged {
                return Err(SimError::Aborted {
                    resolve_index: tau / cfg.control_horizon,
                    reason: format!(
                        "split-horizon solve did not converge in {} iterations",
                        result.iterations
                    ),
                });
            }
            Ok((
                Plan {
                    levels: result.trajectory.levels.clone(),
                    flows: result.trajectory.flows.clone(),
                    objective: result.first_stage_cost + result.second_stage_objective,
                    cuts: result.cuts.len(),
                    milp_gap: None,
                },
                t1_eff,
            ))
        }
        Method::Multicell { n_v, n_l, time_budget } => {
            let (milp, layout) = build_multicell_milp(net, prices, tau, t_end, state, n_v, n_l)?;
            let opts = MilpOptions {
                gap_tol: 1e-6,
                time_limit: time_budget,
                node_limit: 100_000,
            };
            let sol = crate::lp::solve_milp(&milp, &opts)?;
            if sol.status == MilpStatus::Infeasible || sol.status == MilpStatus::NoIncumbentYet {
                return Err(SimError::Aborted {
                    resolve_index: tau / cfg.control_horizon,
                    reason: format!("multi-cell MILP returned {:?}", sol.status),
                });
            }
            let mut flows = Vec::with_capacity(window);
            for s in 0..window {
                let f: Vec<f64> = (0..net.num_arcs())
                    .map(|a| {
                        let arc = &net.arcs[a];
                        sol.x[layout.flow_var(s, a)].clamp(arc.flow_min, arc.flow_max)
                    })
                    .collect();
                flows.push(f);
            }
            let mut levels = vec![state.to_vec()];
            for f in &flows {
                levels.push(step_dynamics(levels.last().unwrap(), f, net));
            }
            Ok((
                Plan { levels, flows, objective: sol.objective, cuts: 0, milp_gap: Some(sol.gap) },
                0,
            ))
        }
    }
}

/// Runs the shrinking-horizon protocol. Terminal water values are derived
/// once at simulation start (from the full price series) and held fixed for
/// every re-solve.
pub fn run_simulation(
    cfg: &SimConfig,
    net: &ReservoirNetwork,
    prices: &PriceSeries,
) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let t_total = cfg.total_horizon;
    if prices.prices.len() < t_total {
        return Err(SimError::InvalidConfig("price series shorter than the horizon".into()));
    }
    let mut series = prices.clone();
    if series.terminal_values.len() != net.num_reservoirs() {
        series.terminal_values = terminal_water_value(net, &series)?;
    }

    let started = Instant::now();
    let mut state = net.initial_levels.clone();
    let mut levels = vec![state.clone()];
    let mut flows: Vec<Vec<f64>> = Vec::with_capacity(t_total);
    let mut stage_cost_sum = 0.0;
    let mut resolves = Vec::new();
    let mut tau = 0usize;

    while tau < t_total {
        let window = t_total - tau;
        let apply_len = cfg.control_horizon.min(window);
        let resolve_start = Instant::now();
        let (plan, t1_eff) = plan_window(cfg, net, &series, tau, window, &state)?;
        let wall_ms = resolve_start.elapsed().as_secs_f64() * 1e3;

        let mut divergence = 0.0f64;
        for s in 0..apply_len {
            let f = &plan.flows[s];
            stage_cost_sum += exact_stage_cost(&state, f, series.prices[tau + s], net);
            state = step_dynamics(&state, f, net);
            for (i, &planned) in plan.levels[s + 1].iter().enumerate() {
                divergence = divergence.max((planned - state[i]).abs());
            }
            flows.push(f.clone());
            levels.push(state.clone());
        }

        resolves.push(ResolveInfo {
            start_time: tau,
            window,
            t1_effective: t1_eff,
            wall_ms,
            cuts: plan.cuts,
            planned_objective: plan.objective,
            divergence,
            milp_gap: plan.milp_gap,
        });
        tau += apply_len;
    }

    let terminal_credit: f64 =
        series.terminal_values.iter().zip(&state).map(|(w, l)| w * l).sum();
    let realized_objective = stage_cost_sum - terminal_credit;
    let cuts_total = resolves.iter().map(|r| r.cuts).sum();
    let trajectory =
        Trajectory { levels, flows, objective: realized_objective, stage_boundary: 0 };
    validate_trajectory(&trajectory, net, 1e-6).map_err(|e| SimError::Aborted {
        resolve_index: resolves.len(),
        reason: format!("realized trajectory failed validation: {e}"),
    })?;

    Ok(SimResult {
        method: cfg.method.label(),
        t1: cfg.t1,
        control_horizon: cfg.control_horizon,
        bound_mode: cfg.bound_mode,
        trajectory,
        realized_objective,
        resolves,
        total_wall_ms: started.elapsed().as_secs_f64() * 1e3,
        cuts_total,
    })
}

/// One sweep cell result with the knee diagnostic (`t1 < t_c` means part of
/// every applied window came from the linearized stage).
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub result: SimResult,
    pub knee_flag: bool,
}

/// Runs `run_simulation` over the cross product of first-stage lengths,
/// control horizons and bound modes.
pub fn sweep(
    base: &SimConfig,
    t1_values: &[usize],
    tc_values: &[usize],
    modes: &[BoundMode],
    net: &ReservoirNetwork,
    prices: &PriceSeries,
) -> Result<Vec<SweepEntry>, SimError> {
    let mut out = Vec::new();
    for &mode in modes {
        for &t_c in tc_values {
            for &t1 in t1_values {
                let cfg = SimConfig {
                    t1,
                    control_horizon: t_c,
                    bound_mode: mode,
                    method: if t1 == 0 && matches!(base.method, Method::SplitDdp) {
                        Method::PureLp
                    } else {
                        base.method
                    },
                    ..base.clone()
                };
                let result = run_simulation(&cfg, net, prices)?;
                out.push(SweepEntry { result, knee_flag: t1 < t_c });
            }
        }
    }
    Ok(out)
}

/// Variable layout of the multi-cell MILP, for extracting plans.
pub struct MulticellLayout {
    num_reservoirs: usize,
    num_arcs: usize,
    pub steps: usize,
    flows_offset: usize,
    chi_offset: usize,
    terms_per_step: usize,
    binaries_offset: usize,
    n_v: usize,
    n_l: usize,
}

impl MulticellLayout {
    pub fn level_var(&self, s: usize, i: usize) -> usize {
        s * self.num_reservoirs + i
    }
    pub fn flow_var(&self, s: usize, a: usize) -> usize {
        self.flows_offset + s * self.num_arcs + a
    }
    fn chi_var(&self, s: usize, k: usize) -> usize {
        self.chi_offset + s * self.terms_per_step + k
    }
    /// Selector binary for flow variable `a` interval `cell` at step `s`.
    fn flow_sel(&self, s: usize, a: usize, cell: usize) -> usize {
        self.binaries_offset + s * (self.num_arcs * self.n_v + self.num_reservoirs * self.n_l)
            + a * self.n_v
            + cell
    }
    fn level_sel(&self, s: usize, i: usize, cell: usize) -> usize {
        self.binaries_offset
            + s * (self.num_arcs * self.n_v + self.num_reservoirs * self.n_l)
            + self.num_arcs * self.n_v
            + i * self.n_l
            + cell
    }
}

/// Multi-cell McCormick MILP over `[t0, t_end)`: every flow and level
/// variable is split into equal intervals selected by one-hot binaries, and
/// each bilinear term carries one envelope per cell pair, deactivated by
/// big-M unless both selectors point at it. Static full-range boxes
/// throughout (the method approximates the bilinearity over the entire
/// horizon).
pub fn build_multicell_milp(
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    t0: usize,
    t_end: usize,
    start_levels: &[f64],
    n_v: usize,
    n_l: usize,
) -> Result<(MilpProblem, MulticellLayout), SimError> {
    if t0 >= t_end {
        return Err(SimError::InvalidConfig("empty horizon".into()));
    }
    if n_v < 1 || n_l < 1 {
        return Err(SimError::InvalidConfig("need at least one cell per direction".into()));
    }
    let n_res = net.num_reservoirs();
    let n_arc = net.num_arcs();
    let steps = t_end - t0;
    let terms = crate::linearize::bilinear_terms(net, t0, 1.0);
    let n_terms = terms.len();

    let n_levels = n_res * (steps + 1);
    let n_flows = n_arc * steps;
    let n_chi = n_terms * steps;
    let n_bin = steps * (n_arc * n_v + n_res * n_l);
    let layout = MulticellLayout {
        num_reservoirs: n_res,
        num_arcs: n_arc,
        steps,
        flows_offset: n_levels,
        chi_offset: n_levels + n_flows,
        terms_per_step: n_terms,
        binaries_offset: n_levels + n_flows + n_chi,
        n_v,
        n_l,
    };
    let mut lp = LpProblem::new(n_levels + n_flows + n_chi + n_bin);

    let static_bounds = level_bounds_at(net, BoundMode::Static, 0, start_levels);
    for s in 0..=steps {
        for (i, r) in net.reservoirs.iter().enumerate() {
            let v = layout.level_var(s, i);
            lp.lower[v] = r.level_min;
            lp.upper[v] = r.level_max;
        }
    }
    for s in 0..steps {
        for (a, arc) in net.arcs.iter().enumerate() {
            let v = layout.flow_var(s, a);
            lp.lower[v] = arc.flow_min;
            lp.upper[v] = arc.flow_max;
        }
        for (k, term) in terms.iter().enumerate() {
            let bx = term_box(net, term, &static_bounds);
            let (lo, hi) = bx.product_hull();
            let v = layout.chi_var(s, k);
            lp.lower[v] = lo;
            lp.upper[v] = hi;
        }
    }
    let mut binary_vars = Vec::with_capacity(n_bin);
    for j in layout.binaries_offset..layout.binaries_offset + n_bin {
        lp.lower[j] = 0.0;
        lp.upper[j] = 1.0;
        binary_vars.push(j);
    }
    let mut sos1_groups = Vec::with_capacity(steps * (n_arc + n_res));
    for s in 0..steps {
        for (a, arc) in net.arcs.iter().enumerate() {
            let edges: Vec<f64> = (0..=n_v)
                .map(|c| arc.flow_min + (arc.flow_max - arc.flow_min) * c as f64 / n_v as f64)
                .collect();
            sos1_groups.push(crate::lp::Sos1Group {
                members: (0..n_v).map(|c| layout.flow_sel(s, a, c)).collect(),
                guide: Some((layout.flow_var(s, a), edges)),
            });
        }
        for (i, r) in net.reservoirs.iter().enumerate() {
            let edges: Vec<f64> = (0..=n_l)
                .map(|c| r.level_min + (r.level_max - r.level_min) * c as f64 / n_l as f64)
                .collect();
            sos1_groups.push(crate::lp::Sos1Group {
                members: (0..n_l).map(|c| layout.level_sel(s, i, c)).collect(),
                guide: Some((layout.level_var(s, i), edges)),
            });
        }
    }

    // Objective.
    for s in 0..steps {
        let p = prices.prices[t0 + s];
        for (a, arc) in net.arcs.iter().enumerate() {
            lp.objective[layout.flow_var(s, a)] = p * arc.alpha;
        }
        for (k, term) in terms.iter().enumerate() {
            lp.objective[layout.chi_var(s, k)] = p * term.coefficient;
        }
    }
    for (i, &w) in prices.terminal_values.iter().enumerate() {
        lp.objective[layout.level_var(steps, i)] = -w;
    }

    // Coupling and dynamics.
    for (i, &x0) in start_levels.iter().enumerate() {
        lp.push_eq(vec![(layout.level_var(0, i), 1.0)], x0, format!("couple[{i}]"));
    }
    for s in 0..steps {
        for (i, r) in net.reservoirs.iter().enumerate() {
            let mut row = vec![(layout.level_var(s + 1, i), 1.0), (layout.level_var(s, i), -1.0)];
            for (a, arc) in net.arcs.iter().enumerate() {
                if arc.dest == Node::Reservoir(i) {
                    row.push((layout.flow_var(s, a), -1.0 / r.gamma));
                }
                if arc.source == Node::Reservoir(i) {
                    row.push((layout.flow_var(s, a), 1.0 / r.gamma));
                }
            }
            lp.push_eq(row, 0.0, format!("dyn[{s},{i}]"));
        }
    }

    // One-hot selectors.
    for s in 0..steps {
        for a in 0..n_arc {
            let row: Vec<(usize, f64)> = (0..n_v).map(|c| (layout.flow_sel(s, a, c), 1.0)).collect();
            lp.push_eq(row, 1.0, format!("sel_v[{s},{a}]"));
        }
        for i in 0..n_res {
            let row: Vec<(usize, f64)> = (0..n_l).map(|c| (layout.level_sel(s, i, c), 1.0)).collect();
            lp.push_eq(row, 1.0, format!("sel_l[{s},{i}]"));
        }
    }

    // Interval membership under the selected cell.
    for s in 0..steps {
        for (a, arc) in net.arcs.iter().enumerate() {
            let edges: Vec<f64> = (0..=n_v)
                .map(|c| arc.flow_min + (arc.flow_max - arc.flow_min) * c as f64 / n_v as f64)
                .collect();
            for c in 0..n_v {
                let v = layout.flow_var(s, a);
                let z = layout.flow_sel(s, a, c);
                let m_hi = arc.flow_max - edges[c + 1];
                if m_hi > 0.0 {
                    lp.push_in(vec![(v, 1.0), (z, m_hi)], arc.flow_max, "");
                }
                let m_lo = edges[c] - arc.flow_min;
                if m_lo > 0.0 {
                    lp.push_in(vec![(v, -1.0), (z, m_lo)], -arc.flow_min, "");
                }
            }
        }
        for (i, r) in net.reservoirs.iter().enumerate() {
            let edges: Vec<f64> = (0..=n_l)
                .map(|c| r.level_min + (r.level_max - r.level_min) * c as f64 / n_l as f64)
                .collect();
            for c in 0..n_l {
                let v = layout.level_var(s, i);
                let z = layout.level_sel(s, i, c);
                let m_hi = r.level_max - edges[c + 1];
                if m_hi > 0.0 {
                    lp.push_in(vec![(v, 1.0), (z, m_hi)], r.level_max, "");
                }
                let m_lo = edges[c] - r.level_min;
                if m_lo > 0.0 {
                    lp.push_in(vec![(v, -1.0), (z, m_lo)], -r.level_min, "");
                }
            }
        }
    }

    // Per-cell envelopes with big-M deactivation off the selected cell pair.
    for s in 0..steps {
        for (k, term) in terms.iter().enumerate() {
            let full_box: EnvelopeBox = term_box(net, term, &static_bounds);
            let part = multicell_partition(&full_box, n_v, n_l);
            let v_var = layout.flow_var(s, term.arc);
            let l_var = layout.level_var(s, term.reservoir);
            let chi_var = layout.chi_var(s, k);
            for cell in &part.cells {
                let z_v = layout.flow_sel(s, term.arc, cell.v_index);
                let z_l = layout.level_sel(s, term.reservoir, cell.l_index);
                for row in &cell.rows.rows {
                    let m = row_big_m(row, &full_box);
                    let mut sparse = Vec::with_capacity(5);
                    if row.v_coef != 0.0 {
                        sparse.push((v_var, row.v_coef));
                    }
                    if row.l_coef != 0.0 {
                        sparse.push((l_var, row.l_coef));
                    }
                    sparse.push((chi_var, row.chi_coef));
                    if m > 0.0 {
                        sparse.push((z_v, m));
                        sparse.push((z_l, m));
                    }
                    sparse.sort_by_key(|&(j, _)| j);
                    lp.push_in(sparse, row.rhs + 2.0 * m, "");
                }
            }
        }
    }

    Ok((MilpProblem { lp, binary_vars, sos1_groups }, layout))
}
