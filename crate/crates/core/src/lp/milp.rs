//! Best-first branch and bound over LP relaxations for problems with binary
//! variables. Nodes are bound overrides on the binaries; each node is solved
//! eagerly so the heap orders by true relaxation bounds. A rounding heuristic
//! (fix every binary to the nearest integer, re-solve) supplies incumbents
//! early, which matters when the time budget only covers the root node.
//! Search is sequential and fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::{solve_lp, LpError, LpProblem, LpSolution, LpStatus};

const INT_TOL: f64 = 1e-6;

/// One-hot selector group: exactly one member is 1 in any integer solution.
/// The optional guide ties the group to an interval choice for a continuous
/// variable (`members[c]` selects `edges[c] ..= edges[c+1]`), letting the
/// rounding heuristic pick the cell that contains the relaxation's value --
/// the one fixing that is guaranteed consistent with the rest of the
/// relaxation point.
#[derive(Debug, Clone)]
pub struct Sos1Group {
    pub members: Vec<usize>,
    pub guide: Option<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct MilpProblem {
    pub lp: LpProblem,
    pub binary_vars: Vec<usize>,
    /// One-hot selector groups; lets the rounding heuristic stay feasible
    /// with respect to the sum-to-one rows.
    pub sos1_groups: Vec<Sos1Group>,
}

impl MilpProblem {
    pub fn validate(&self) -> Result<(), LpError> {
        self.lp.validate()?;
        for group in &self.sos1_groups {
            for &j in &group.members {
                if !self.binary_vars.contains(&j) {
                    return Err(LpError::Dimension(format!("sos1 member {j} is not a binary")));
                }
            }
            if let Some((var, edges)) = &group.guide {
                if *var >= self.lp.num_vars || edges.len() != group.members.len() + 1 {
                    return Err(LpError::Dimension("malformed sos1 guide".into()));
                }
            }
        }
        for &j in &self.binary_vars {
            if j >= self.lp.num_vars {
                return Err(LpError::Dimension(format!("binary index {j} out of range")));
            }
            if self.lp.lower[j] < -INT_TOL || self.lp.upper[j] > 1.0 + INT_TOL {
                return Err(LpError::Dimension(format!("binary {j} must be boxed in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MilpOptions {
    /// Proven relative gap at which the search stops.
    pub gap_tol: f64,
    pub time_limit: Duration,
    pub node_limit: usize,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions { gap_tol: 1e-6, time_limit: Duration::from_secs(600), node_limit: 200_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    /// Incumbent with proven gap <= gap_tol.
    Optimal,
    /// Budget exhausted; best incumbent returned with its proven gap.
    Feasible,
    /// Budget exhausted before any incumbent was found.
    NoIncumbentYet,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Best proven lower bound on the optimum (minimization).
    pub best_bound: f64,
    pub gap: f64,
    pub nodes_solved: usize,
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<(usize, f64)>,
    relaxation: LpSolution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; invert so the smallest bound pops first,
    // ties broken by creation order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    (incumbent - bound).max(0.0) / incumbent.abs().max(1.0)
}

fn solve_with_fixings(
    lp: &mut LpProblem,
    fixings: &[(usize, f64)],
) -> Result<LpSolution, LpError> {
    let saved: Vec<(usize, f64, f64)> =
        fixings.iter().map(|&(j, _)| (j, lp.lower[j], lp.upper[j])).collect();
    for &(j, v) in fixings {
        lp.lower[j] = v;
        lp.upper[j] = v;
    }
    let result = solve_lp(lp);
    for (j, lo, hi) in saved {
        lp.lower[j] = lo;
        lp.upper[j] = hi;
    }
    result
}

/// Integer fixing for every binary: one-hot groups take their largest
/// member, loose binaries round to the nearest integer.
fn rounding_fixings(p: &MilpProblem, x: &[f64]) -> Vec<(usize, f64)> {
    let mut fixed = vec![None; p.lp.num_vars];
    for group in &p.sos1_groups {
        let members = &group.members;
        let best = match &group.guide {
            Some((var, edges)) => {
                let v = x[*var];
                let mut c = 0;
                while c + 1 < members.len() && v > edges[c + 1] {
                    c += 1;
                }
                members[c]
            }
            None => {
                let mut best = members[0];
                for &j in &members[1..] {
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                best
            }
        };
        for &j in members {
            fixed[j] = Some(if j == best { 1.0 } else { 0.0 });
        }
    }
    p.binary_vars
        .iter()
        .map(|&j| (j, fixed[j].unwrap_or_else(|| x[j].round().clamp(0.0, 1.0))))
        .collect()
}

fn fractional_binaries(x: &[f64], binaries: &[usize]) -> Option<usize> {
    let mut worst: Option<(usize, f64)> = None;
    for &j in binaries {
        let frac = (x[j] - x[j].round()).abs();
        if frac > INT_TOL {
            let dist = (x[j] - 0.5).abs();
            if worst.map_or(true, |(_, d)| dist < d) {
                worst = Some((j, dist));
            }
        }
    }
    worst.map(|(j, _)| j)
}

/// Best incumbent with proven relative gap <= `gap_tol`, or best-so-far when
/// the time or node budget runs out.
pub fn solve_milp(p: &MilpProblem, opts: &MilpOptions) -> Result<MilpSolution, LpError> {
    p.validate()?;
    let start = Instant::now();
    let mut lp = p.lp.clone();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes_solved = 0usize;
    let mut next_id = 0usize;

    let root = solve_with_fixings(&mut lp, &[])?;
    nodes_solved += 1;
    if root.status == LpStatus::Infeasible {
        return Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            x: vec![],
            objective: f64::INFINITY,
            best_bound: f64::INFINITY,
            gap: 0.0,
            nodes_solved,
        });
    }
    if root.status == LpStatus::Unbounded {
        return Err(LpError::SolverFailure("unbounded MILP relaxation".into()));
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: root.objective, id: next_id, fixings: vec![], relaxation: root });
    next_id += 1;

    let try_incumbent = |candidate: &LpSolution, incumbent: &mut Option<(f64, Vec<f64>)>| {
        if candidate.status == LpStatus::Optimal
            && incumbent.as_ref().map_or(true, |(obj, _)| candidate.objective < *obj - 1e-12)
        {
            *incumbent = Some((candidate.objective, candidate.x.clone()));
        }
    };

    // Rounding heuristic on the root relaxation: always attempt one cheap
    // incumbent before any budget can expire.
    {
        let rounded = rounding_fixings(p, &heap.peek().unwrap().relaxation.x);
        if let Ok(sol) = solve_with_fixings(&mut lp, &rounded) {
            nodes_solved += 1;
            try_incumbent(&sol, &mut incumbent);
        }
    }

    let mut best_bound_on_exit = f64::NEG_INFINITY;
    while let Some(node) = heap.pop() {
        best_bound_on_exit = node.bound;
        if let Some((obj, _)) = incumbent {
            if relative_gap(obj, node.bound) <= opts.gap_tol {
                let (objective, x) = incumbent.unwrap();
                return Ok(MilpSolution {
                    status: MilpStatus::Optimal,
                    x,
                    objective,
                    best_bound: node.bound,
                    gap: relative_gap(objective, node.bound),
                    nodes_solved,
                });
            }
        }
        if start.elapsed() > opts.time_limit || nodes_solved >= opts.node_limit {
            break;
        }
        // Best-first search finds incumbents late; while none exists, dive
        // from the current node by rounding its relaxation.
        if incumbent.is_none() {
            let mut fixings = node.fixings.clone();
            let rounded = rounding_fixings(p, &node.relaxation.x);
            for (j, v) in rounded {
                if !fixings.iter().any(|&(k, _)| k == j) {
                    fixings.push((j, v));
                }
            }
            if let Ok(sol) = solve_with_fixings(&mut lp, &fixings) {
                nodes_solved += 1;
                try_incumbent(&sol, &mut incumbent);
            }
        }

        match fractional_binaries(&node.relaxation.x, &p.binary_vars) {
            None => {
                try_incumbent(&node.relaxation, &mut incumbent);
                continue;
            }
            Some(branch_var) => {
                for fix_to in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((branch_var, fix_to));
                    let child = solve_with_fixings(&mut lp, &fixings)?;
                    nodes_solved += 1;
                    if child.status != LpStatus::Optimal {
                        continue;
                    }
                    if let Some((obj, _)) = incumbent {
                        if child.objective >= obj - 1e-12 {
                            continue;
                        }
                    }
                    if fractional_binaries(&child.x, &p.binary_vars).is_none() {
                        try_incumbent(&child, &mut incumbent);
                    } else {
                        heap.push(Node { bound: child.objective, id: next_id, fixings, relaxation: child });
                        next_id += 1;
                    }
                }
            }
        }
    }

    let exhausted = heap.is_empty();
    let best_bound = heap.iter().map(|n| n.bound).fold(best_bound_on_exit, f64::min);
    match incumbent {
        Some((objective, x)) => {
            // With the tree exhausted every leaf was pruned against the
            // incumbent, so the incumbent is proven optimal.
            let best_bound = if exhausted { objective } else { best_bound };
            let gap = relative_gap(objective, best_bound);
            let status = if exhausted || gap <= opts.gap_tol {
                MilpStatus::Optimal
            } else {
                MilpStatus::Feasible
            };
            Ok(MilpSolution { status, x, objective, best_bound, gap, nodes_solved })
        }
        None => Ok(MilpSolution {
            status: MilpStatus::NoIncumbentYet,
            x: vec![],
            objective: f64::INFINITY,
            best_bound,
            gap: f64::INFINITY,
            nodes_solved,
        }),
    }
}
