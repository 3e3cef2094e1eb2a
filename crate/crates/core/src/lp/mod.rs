//! Linear-programming kernel with exact dual extraction, plus a best-first
//! branch-and-bound layer for the multi-cell MILP baseline.
//!
//! Two interchangeable backends sit behind [`solve_lp`]:
//!
//! * a dense bounded-variable two-phase revised simplex (exact vertex duals,
//!   Bland anti-cycling) used for small problems and as an oracle;
//! * a sparse interior-point backend (Clarabel) for the long-horizon
//!   staircase programs, where dense storage and O(m²) pivots are unusable.
//!
//! Duals follow one convention everywhere: with the Lagrangian
//! `L = c'x + lambda'(A_eq x - b_eq) + nu'(A_in x - b_in)`, `nu >= 0`, the
//! sensitivity of the optimal value to a right-hand side is the negated
//! multiplier (`d obj / d b = -lambda`).

mod clarabel_backend;
mod milp;
mod simplex;

pub use milp::{solve_milp, MilpOptions, MilpProblem, MilpSolution, MilpStatus, Sos1Group};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimension(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("unsupported structure: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Sparse row: (column, coefficient) pairs, columns strictly increasing.
pub type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows_eq: Vec<Row>,
    pub rhs_eq: Vec<f64>,
    /// Inequality rows, written as `row · x <= rhs`.
    pub rows_in: Vec<Row>,
    pub rhs_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Optional tags used to locate rows and variables after a solve.
    pub var_names: Vec<String>,
    pub eq_names: Vec<String>,
    pub in_names: Vec<String>,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            var_names: vec![String::new(); num_vars],
            ..Default::default()
        }
    }

    pub fn push_eq(&mut self, row: Row, rhs: f64, name: impl Into<String>) -> usize {
        self.rows_eq.push(row);
        self.rhs_eq.push(rhs);
        self.eq_names.push(name.into());
        self.rows_eq.len() - 1
    }

    pub fn push_in(&mut self, row: Row, rhs: f64, name: impl Into<String>) -> usize {
        self.rows_in.push(row);
        self.rhs_in.push(rhs);
        self.in_names.push(name.into());
        self.rows_in.len() - 1
    }

    pub fn num_rows(&self) -> usize {
        self.rows_eq.len() + self.rows_in.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars;
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension("objective/bounds length != num_vars".into()));
        }
        if self.rows_eq.len() != self.rhs_eq.len() || self.rows_in.len() != self.rhs_in.len() {
            return Err(LpError::Dimension("row/rhs length mismatch".into()));
        }
        for row in self.rows_eq.iter().chain(&self.rows_in) {
            for &(j, v) in row {
                if j >= n {
                    return Err(LpError::Dimension(format!("column {j} out of range")));
                }
                if !v.is_finite() {
                    return Err(LpError::Dimension("non-finite coefficient".into()));
                }
            }
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::Dimension(format!("variable {j}: lower > upper")));
            }
        }
        Ok(())
    }

    /// Plain-text dump, row-major: one line per row with its dense
    /// coefficients followed by the right-hand side. Debug aid for small
    /// problems.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let fmt_f = |x: f64| {
            if x == f64::INFINITY {
                "inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x:e}")
            }
        };
        out.push_str("lp v1\n");
        out.push_str(&format!("vars {}\n", self.num_vars));
        out.push_str("obj");
        for &c in &self.objective {
            out.push_str(&format!(" {}", fmt_f(c)));
        }
        out.push('\n');
        out.push_str("bounds\n");
        for j in 0..self.num_vars {
            out.push_str(&format!("{} {}\n", fmt_f(self.lower[j]), fmt_f(self.upper[j])));
        }
        let dense = |row: &Row| -> Vec<f64> {
            let mut d = vec![0.0; self.num_vars];
            for &(j, v) in row {
                d[j] += v;
            }
            d
        };
        out.push_str(&format!("eq {}\n", self.rows_eq.len()));
        for (row, &rhs) in self.rows_eq.iter().zip(&self.rhs_eq) {
            for v in dense(row) {
                out.push_str(&format!("{} ", fmt_f(v)));
            }
            out.push_str(&format!("{}\n", fmt_f(rhs)));
        }
        out.push_str(&format!("in {}\n", self.rows_in.len()));
        for (row, &rhs) in self.rows_in.iter().zip(&self.rhs_in) {
            for v in dense(row) {
                out.push_str(&format!("{} ", fmt_f(v)));
            }
            out.push_str(&format!("{}\n", fmt_f(rhs)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LpError> {
        let mut lines = text.lines();
        let parse_f = |tok: &str| -> Result<f64, LpError> {
            match tok {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => tok.parse().map_err(|e| LpError::Parse(format!("bad number {tok:?}: {e}"))),
            }
        };
        let mut need = |what: &str| {
            lines.next().ok_or_else(|| LpError::Parse(format!("missing {what}"))).map(str::trim)
        };
        if need("header")? != "lp v1" {
            return Err(LpError::Parse("expected header 'lp v1'".into()));
        }
        let vars_line = need("vars")?.to_string();
        let n: usize = vars_line
            .strip_prefix("vars ")
            .ok_or_else(|| LpError::Parse("expected 'vars N'".into()))?
            .parse()
            .map_err(|e| LpError::Parse(format!("bad var count: {e}")))?;
        let mut p = LpProblem::new(n);
        let obj_line = need("obj")?.to_string();
        let toks: Vec<&str> = obj_line.split_whitespace().collect();
        if toks.first() != Some(&"obj") || toks.len() != n + 1 {
            return Err(LpError::Parse("bad obj line".into()));
        }
        for (j, tok) in toks[1..].iter().enumerate() {
            p.objective[j] = parse_f(tok)?;
        }
        if need("bounds")? != "bounds" {
            return Err(LpError::Parse("expected 'bounds'".into()));
        }
        for j in 0..n {
            let line = need("bound line")?.to_string();
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 2 {
                return Err(LpError::Parse("bad bound line".into()));
            }
            p.lower[j] = parse_f(t[0])?;
            p.upper[j] = parse_f(t[1])?;
        }
        for kind in ["eq", "in"] {
            let line = need(kind)?.to_string();
            let count: usize = line
                .strip_prefix(&format!("{kind} "))
                .ok_or_else(|| LpError::Parse(format!("expected '{kind} N'")))?
                .parse()
                .map_err(|e| LpError::Parse(format!("bad row count: {e}")))?;
            for _ in 0..count {
                let line = need("row")?.to_string();
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != n + 1 {
                    return Err(LpError::Parse("bad row width".into()));
                }
                let mut row = Row::new();
                for (j, tok) in toks[..n].iter().enumerate() {
                    let v = parse_f(tok)?;
                    if v != 0.0 {
                        row.push((j, v));
                    }
                }
                let rhs = parse_f(toks[n])?;
                if kind == "eq" {
                    p.push_eq(row, rhs, "");
                } else {
                    p.push_in(row, rhs, "");
                }
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multiplier per equality row (free sign).
    pub dual_eq: Vec<f64>,
    /// Multiplier per inequality row, nonnegative.
    pub dual_in: Vec<f64>,
}

impl LpSolution {
    fn infeasible() -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            x: vec![],
            objective: f64::INFINITY,
            dual_eq: vec![],
            dual_in: vec![],
        }
    }

    fn unbounded() -> Self {
        LpSolution {
            status: LpStatus::Unbounded,
            x: vec![],
            objective: f64::NEG_INFINITY,
            dual_eq: vec![],
            dual_in: vec![],
        }
    }

    /// Value of the Lagrangian dual at the reported multipliers; equals the
    /// primal objective at an exact optimum (strong duality).
    pub fn dual_objective(&self, p: &LpProblem) -> f64 {
        let mut reduced = p.objective.clone();
        for (row, &lam) in p.rows_eq.iter().zip(&self.dual_eq) {
            for &(j, v) in row {
                reduced[j] += lam * v;
            }
        }
        for (row, &nu) in p.rows_in.iter().zip(&self.dual_in) {
            for &(j, v) in row {
                reduced[j] += nu * v;
            }
        }
        let mut val = 0.0;
        for (lam, b) in self.dual_eq.iter().zip(&p.rhs_eq) {
            val -= lam * b;
        }
        for (nu, b) in self.dual_in.iter().zip(&p.rhs_in) {
            val -= nu * b;
        }
        for j in 0..p.num_vars {
            let r = reduced[j];
            let at_lo = r * p.lower[j];
            let at_hi = r * p.upper[j];
            let contrib = at_lo.min(at_hi);
            if contrib.is_nan() {
                // 0 * inf from a zero reduced cost on an unbounded variable
                continue;
            }
            val += contrib;
        }
        val
    }

    /// Largest complementary-slackness residual `nu_i * slack_i`.
    pub fn max_complementarity_residual(&self, p: &LpProblem) -> f64 {
        let mut worst = 0.0f64;
        for ((row, &rhs), &nu) in p.rows_in.iter().zip(&p.rhs_in).zip(&self.dual_in) {
            let ax: f64 = row.iter().map(|&(j, v)| v * self.x[j]).sum();
            worst = worst.max((nu * (rhs - ax)).abs());
        }
        worst
    }
}

/// Backend selection for [`solve_lp_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    DenseSimplex,
    SparseIpm,
    /// Dense simplex for small problems, interior point beyond the size cap.
    Auto,
}

const AUTO_SIMPLEX_MAX_ROWS: usize = 220;
const AUTO_SIMPLEX_MAX_VARS: usize = 350;

/// Solves the LP with an automatically chosen backend.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(p, Backend::Auto)
}

pub fn solve_lp_with(p: &LpProblem, backend: Backend) -> Result<LpSolution, LpError> {
    p.validate()?;
    let use_simplex = match backend {
        Backend::DenseSimplex => true,
        Backend::SparseIpm => false,
        Backend::Auto => p.num_rows() <= AUTO_SIMPLEX_MAX_ROWS && p.num_vars <= AUTO_SIMPLEX_MAX_VARS,
    };
    if use_simplex {
        simplex::solve(p)
    } else {
        clarabel_backend::solve(p)
    }
}

#[cfg(test)]
mod tests;
