//! Batch CLI for the split-horizon hydro scheduler.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 solver non-convergence.
//! Summaries go to stdout as line-delimited, versioned JSON; tabular output
//! is CSV with a `# seed=... version=...` comment line.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use hydrosplit::ddp::{bounds_report, run_algorithm1, DdpOptions, DdpStatus};
use hydrosplit::dp::{self, DpOptions, Grid};
use hydrosplit::io::{self, IoError};
use hydrosplit::linearize::BoundMode;
use hydrosplit::model::{terminal_water_value, PriceSeries, ReservoirNetwork};
use hydrosplit::prices::PriceParams;
use hydrosplit::sim::{self, Method, SimConfig, SimError};

#[derive(Debug)]
enum CliError {
    /// Unreadable or inconsistent input data.
    Data(String),
    /// A solver failed to converge or errored out.
    Solver(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(m) => CliError::Data(m),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<hydrosplit::ddp::DdpError> for CliError {
    fn from(e: hydrosplit::ddp::DdpError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<hydrosplit::dp::DpError> for CliError {
    fn from(e: hydrosplit::dp::DpError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<hydrosplit::model::ModelError> for CliError {
    fn from(e: hydrosplit::model::ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "hydrosplit", version, about = "Split-horizon hydro scheduling experiments")]
struct Cli {
    /// Worker threads for grid sweeps (1 = deterministic baseline).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Network: a JSON file path, `preset:two` or `preset:three`.
    #[arg(long, default_value = "preset:two")]
    network: String,
    /// Prices: `seed:<n>` for the synthetic generator or a CSV file path.
    #[arg(long, default_value = "seed:1")]
    prices: String,
    /// Total horizon in hours.
    #[arg(long, default_value_t = 480)]
    t: usize,
    /// Level grid points per reservoir.
    #[arg(long, default_value_t = 32)]
    levels: usize,
    /// Flow grid points per arc.
    #[arg(long, default_value_t = 32)]
    flows: usize,
    /// Use reachability-tightened envelope bounds.
    #[arg(long)]
    tight: bool,
}

impl CommonArgs {
    fn bound_mode(&self) -> BoundMode {
        if self.tight {
            BoundMode::Tightened
        } else {
            BoundMode::Static
        }
    }

    fn network(&self) -> Result<ReservoirNetwork, CliError> {
        load_network_arg(&self.network)
    }

    fn price_series(&self) -> Result<(PriceSeries, u64), CliError> {
        load_prices_arg(&self.prices, self.t)
    }
}

#[derive(Subcommand)]
enum Command {
    /// One split-horizon solve with its suboptimality report.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Nonlinear first-stage length.
        #[arg(long, default_value_t = 12)]
        t1: usize,
        #[arg(long, default_value_t = 25)]
        max_iter: usize,
        /// Also print the per-iteration log (line-delimited JSON).
        #[arg(long)]
        log_iterations: bool,
    },
    /// Shrinking-horizon MPC run.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// split | lp | dp | multicell
        #[arg(long, default_value = "split")]
        method: String,
        #[arg(long, default_value_t = 12)]
        t1: usize,
        /// Control horizon (hours applied per re-solve).
        #[arg(long, default_value_t = 12)]
        tc: usize,
        /// Multi-cell per-resolve budget, milliseconds.
        #[arg(long, default_value_t = 60_000)]
        budget_ms: u64,
        /// Multi-cell partition, e.g. 2x2.
        #[arg(long, default_value = "2x2")]
        cells: String,
    },
    /// Cross product of first-stage lengths, control horizons and bound
    /// modes; summaries as CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "0,6,12,24,48")]
        t1_list: String,
        #[arg(long, default_value = "12")]
        tc_list: String,
        /// Comma-separated: static, tight.
        #[arg(long, default_value = "static")]
        modes: String,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-horizon grid-DP reference solve.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory for per-stage value-table CSV slices.
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
    /// Multi-cell McCormick MILP baseline under the MPC protocol.
    Multicell {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 12)]
        tc: usize,
        #[arg(long, default_value = "2x2")]
        cells: String,
        #[arg(long, default_value_t = 60_000)]
        budget_ms: u64,
    },
    /// Per-step envelope-gap schedule and its cumulative sum, as CSV.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 12)]
        t1: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV series: objective vs first-stage length per bound
    /// mode and per control horizon, wall time vs horizon, and the
    /// time/objective Pareto of split-horizon vs multi-cell.
    EmitPlots {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
        #[arg(long, default_value = "0,6,12,24,48")]
        t1_list: String,
        #[arg(long, default_value = "6,12,24")]
        tc_list: String,
        /// Horizons (days) for the timing curve.
        #[arg(long, default_value = "2,5,10,15,20")]
        horizon_days: String,
        /// First-stage lengths probed for the Pareto curve.
        #[arg(long, default_value = "6,12")]
        pareto_t1: String,
    },
}

fn load_network_arg(arg: &str) -> Result<ReservoirNetwork, CliError> {
    match arg {
        "preset:two" => Ok(hydrosplit::model::presets::two_reservoir()),
        "preset:three" => Ok(hydrosplit::model::presets::three_reservoir()),
        path => Ok(io::load_network(path)?),
    }
}

fn load_prices_arg(arg: &str, horizon: usize) -> Result<(PriceSeries, u64), CliError> {
    if let Some(seed) = arg.strip_prefix("seed:") {
        let seed: u64 = seed
            .parse()
            .map_err(|e| CliError::Data(format!("bad seed in --prices {arg:?}: {e}")))?;
        Ok((io::synthetic_prices(seed, horizon, &PriceParams::default()), seed))
    } else {
        Ok((io::load_prices(arg, horizon)?, 0))
    }
}

fn parse_list(arg: &str, what: &str) -> Result<Vec<usize>, CliError> {
    arg.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Data(format!("bad {what} entry {tok:?}: {e}")))
        })
        .collect()
}

fn parse_modes(arg: &str) -> Result<Vec<BoundMode>, CliError> {
    arg.split(',')
        .map(|tok| match tok.trim() {
            "static" => Ok(BoundMode::Static),
            "tight" | "tightened" => Ok(BoundMode::Tightened),
            other => Err(CliError::Data(format!("unknown bound mode {other:?}"))),
        })
        .collect()
}

fn parse_cells(arg: &str) -> Result<(usize, usize), CliError> {
    let (v, l) = arg
        .split_once('x')
        .ok_or_else(|| CliError::Data(format!("cells must look like 2x2, got {arg:?}")))?;
    Ok((
        v.parse().map_err(|e| CliError::Data(format!("bad cell count: {e}")))?,
        l.parse().map_err(|e| CliError::Data(format!("bad cell count: {e}")))?,
    ))
}

fn parse_method(arg: &str, cells: &str, budget_ms: u64) -> Result<Method, CliError> {
    match arg {
        "split" => Ok(Method::SplitDdp),
        "lp" => Ok(Method::PureLp),
        "dp" => Ok(Method::DpOracle),
        "multicell" => {
            let (n_v, n_l) = parse_cells(cells)?;
            Ok(Method::Multicell { n_v, n_l, time_budget: Duration::from_millis(budget_ms) })
        }
        other => Err(CliError::Data(format!("unknown method {other:?}"))),
    }
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(p, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn derive_terminal(net: &ReservoirNetwork, series: &mut PriceSeries) -> Result<(), CliError> {
    if series.terminal_values.len() != net.num_reservoirs() {
        series.terminal_values = terminal_water_value(net, series)?;
    }
    Ok(())
}

fn sim_summary(result: &sim::SimResult, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "version": version(),
        "kind": "simulate_summary",
        "seed": seed,
        "method": result.method,
        "t1": result.t1,
        "t_c": result.control_horizon,
        "bound_mode": result.bound_mode.to_string(),
        "realized_objective": result.realized_objective,
        "resolves": result.resolves.len(),
        "cuts_total": result.cuts_total,
        "total_wall_ms": result.total_wall_ms,
    })
}

fn cmd_solve(common: &CommonArgs, t1: usize, max_iter: usize, log_iterations: bool) -> Result<(), CliError> {
    let net = common.network()?;
    let (mut series, seed) = common.price_series()?;
    derive_terminal(&net, &mut series)?;
    if t1 == 0 || t1 >= common.t {
        return Err(CliError::Data("solve needs 0 < t1 < t".into()));
    }
    let grid = Grid::regular(&net, common.levels, common.flows);
    let opts = DdpOptions {
        bound_mode: common.bound_mode(),
        max_iterations: max_iter,
        ..Default::default()
    };
    let result = run_algorithm1(&net, &series, 0, t1, common.t, &net.initial_levels, &grid, &opts)?;
    if log_iterations {
        print!("{}", result.iteration_log());
    }
    if result.status != DdpStatus::Converged {
        return Err(CliError::Solver(format!(
            "split-horizon solve did not converge within {max_iter} iterations"
        )));
    }
    let report = bounds_report(
        &result,
        &net,
        &series,
        0,
        t1,
        common.t,
        &net.initial_levels,
        &grid,
        &opts,
        None,
    )?;
    emit(serde_json::json!({
        "version": version(),
        "kind": "solve_summary",
        "seed": seed,
        "t": common.t,
        "t1": t1,
        "bound_mode": common.bound_mode().to_string(),
        "iterations": result.iterations,
        "cuts": result.cuts.len(),
        "first_stage_cost": result.first_stage_cost,
        "second_stage_objective": result.second_stage_objective,
        "realized_exact_objective": result.realized_exact_objective,
        "bounds": serde_json::to_value(&report).unwrap(),
    }));
    Ok(())
}

fn cmd_simulate(
    common: &CommonArgs,
    method: &str,
    t1: usize,
    tc: usize,
    budget_ms: u64,
    cells: &str,
) -> Result<(), CliError> {
    let net = common.network()?;
    let (series, seed) = common.price_series()?;
    let cfg = SimConfig {
        total_horizon: common.t,
        t1,
        control_horizon: tc,
        method: parse_method(method, cells, budget_ms)?,
        level_points: common.levels,
        flow_points: common.flows,
        bound_mode: common.bound_mode(),
        seed,
        parallel: false,
    };
    let result = sim::run_simulation(&cfg, &net, &series)?;
    emit(sim_summary(&result, seed));
    Ok(())
}

fn cmd_sweep(
    common: &CommonArgs,
    t1_list: &str,
    tc_list: &str,
    modes: &str,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let net = common.network()?;
    let (series, seed) = common.price_series()?;
    let base = SimConfig {
        total_horizon: common.t,
        t1: 0,
        control_horizon: 1,
        method: Method::SplitDdp,
        level_points: common.levels,
        flow_points: common.flows,
        bound_mode: common.bound_mode(),
        seed,
        parallel: false,
    };
    let entries = sim::sweep(
        &base,
        &parse_list(t1_list, "t1")?,
        &parse_list(tc_list, "tc")?,
        &parse_modes(modes)?,
        &net,
        &series,
    )?;
    write_or_print(out, &io::sweep_csv(&entries, seed))
}

fn cmd_oracle(common: &CommonArgs, export_dir: &Option<PathBuf>) -> Result<(), CliError> {
    let net = common.network()?;
    let (mut series, seed) = common.price_series()?;
    derive_terminal(&net, &mut series)?;
    let tv = series.terminal_values.clone();
    let credit = move |l: &[f64]| -> f64 { -tv.iter().zip(l).map(|(w, l)| w * l).sum::<f64>() };
    let grid = Grid::regular(&net, common.levels, common.flows);
    let started = Instant::now();
    let sol = dp::solve_dp(
        &net,
        &series,
        0,
        common.t,
        &credit,
        &grid,
        &net.initial_levels,
        &DpOptions::default(),
    )?;
    let (traj, clip) =
        dp::extract_policy_trajectory(&sol.table, &net.initial_levels, &net, &series, &credit)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    if let Some(dir) = export_dir {
        std::fs::create_dir_all(dir)?;
        for s in 0..sol.table.values.len() {
            std::fs::write(dir.join(format!("value_slice_{s:04}.csv")), sol.table.slice_csv(s))?;
        }
    }
    emit(serde_json::json!({
        "version": version(),
        "kind": "oracle_summary",
        "seed": seed,
        "t": common.t,
        "value_at_start": sol.value_at_start,
        "rollout_objective": traj.objective,
        "clip_events": clip.events.len(),
        "wall_ms": wall_ms,
    }));
    Ok(())
}

fn cmd_bounds(common: &CommonArgs, t1: usize, out: &Option<PathBuf>) -> Result<(), CliError> {
    let net = common.network()?;
    let (series, seed) = common.price_series()?;
    let csv = io::delta_schedule_csv(
        &net,
        &series,
        0,
        t1,
        common.t,
        common.bound_mode(),
        &net.initial_levels,
        seed,
    );
    write_or_print(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn cmd_emit_plots(
    common: &CommonArgs,
    out_dir: &PathBuf,
    t1_list: &str,
    tc_list: &str,
    horizon_days: &str,
    pareto_t1: &str,
) -> Result<(), CliError> {
    let net = common.network()?;
    let (series, seed) = common.price_series()?;
    let t1_values = parse_list(t1_list, "t1")?;
    let tc_values = parse_list(tc_list, "tc")?;
    let days = parse_list(horizon_days, "horizon_days")?;
    let pareto = parse_list(pareto_t1, "pareto_t1")?;
    std::fs::create_dir_all(out_dir)?;
    let base = SimConfig {
        total_horizon: common.t,
        t1: 0,
        control_horizon: 12.min(common.t),
        method: Method::SplitDdp,
        level_points: common.levels,
        flow_points: common.flows,
        bound_mode: BoundMode::Static,
        seed,
        parallel: false,
    };

    // Objective vs first-stage length, both bound modes, fixed control
    // horizon.
    let tc_fig4 = base.control_horizon;
    let entries = sim::sweep(
        &base,
        &t1_values,
        &[tc_fig4],
        &[BoundMode::Static, BoundMode::Tightened],
        &net,
        &series,
    )?;
    std::fs::write(out_dir.join("objective_vs_t1_by_bounds.csv"), io::sweep_csv(&entries, seed))?;

    // Objective vs first-stage length per control horizon, static bounds.
    let entries =
        sim::sweep(&base, &t1_values, &tc_values, &[BoundMode::Static], &net, &series)?;
    std::fs::write(out_dir.join("objective_vs_t1_by_tc.csv"), io::sweep_csv(&entries, seed))?;

    // Wall time of one split-horizon solve and one DP reference vs horizon.
    let mut timing = format!("# seed={seed} version={}\n", version());
    timing.push_str("horizon_hours,split_wall_ms,dp_wall_ms\n");
    for &d in &days {
        let t = d * 24;
        let (mut s, _) = load_prices_arg(&common.prices, t)?;
        derive_terminal(&net, &mut s)?;
        let grid = Grid::regular(&net, common.levels, common.flows);
        let t1 = 12.min(t - 1).max(1);
        let opts = DdpOptions::default();
        let started = Instant::now();
        run_algorithm1(&net, &s, 0, t1, t, &net.initial_levels, &grid, &opts)?;
        let split_ms = started.elapsed().as_secs_f64() * 1e3;
        let tv = s.terminal_values.clone();
        let credit = move |l: &[f64]| -> f64 { -tv.iter().zip(l).map(|(w, l)| w * l).sum::<f64>() };
        let started = Instant::now();
        dp::solve_dp(&net, &s, 0, t, &credit, &grid, &net.initial_levels, &DpOptions::default())?;
        let dp_ms = started.elapsed().as_secs_f64() * 1e3;
        timing.push_str(&format!("{t},{split_ms},{dp_ms}\n"));
    }
    std::fs::write(out_dir.join("walltime_vs_horizon.csv"), timing)?;

    // Pareto: split-horizon time/objective vs multi-cell under the same
    // per-resolve budget.
    let mut pareto_csv = format!("# seed={seed} version={}\n", version());
    pareto_csv.push_str("t1,budget_ms,split_objective,multicell_objective\n");
    for &t1 in &pareto {
        let split_cfg = SimConfig { t1, method: Method::SplitDdp, ..base.clone() };
        let split = sim::run_simulation(&split_cfg, &net, &series)?;
        let budget = split
            .resolves
            .iter()
            .map(|r| r.wall_ms)
            .fold(0.0f64, f64::max)
            .max(1.0);
        let mc_cfg = SimConfig {
            t1: 0,
            method: Method::Multicell {
                n_v: 2,
                n_l: 2,
                time_budget: Duration::from_millis(budget.ceil() as u64),
            },
            ..base.clone()
        };
        let mc = sim::run_simulation(&mc_cfg, &net, &series)?;
        pareto_csv.push_str(&format!(
            "{t1},{budget},{},{}\n",
            split.realized_objective, mc.realized_objective
        ));
    }
    std::fs::write(out_dir.join("pareto_split_vs_multicell.csv"), pareto_csv)?;

    emit(serde_json::json!({
        "version": version(),
        "kind": "emit_plots_summary",
        "seed": seed,
        "out_dir": out_dir.display().to_string(),
        "files": [
            "objective_vs_t1_by_bounds.csv",
            "objective_vs_t1_by_tc.csv",
            "walltime_vs_horizon.csv",
            "pareto_split_vs_multicell.csv",
        ],
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().ok();
    }
    match &cli.command {
        Command::Solve { common, t1, max_iter, log_iterations } => {
            cmd_solve(common, *t1, *max_iter, *log_iterations)
        }
        Command::Simulate { common, method, t1, tc, budget_ms, cells } => {
            cmd_simulate(common, method, *t1, *tc, *budget_ms, cells)
        }
        Command::Sweep { common, t1_list, tc_list, modes, out } => {
            cmd_sweep(common, t1_list, tc_list, modes, out)
        }
        Command::Oracle { common, export_dir } => cmd_oracle(common, export_dir),
        Command::Multicell { common, tc, cells, budget_ms } => {
            cmd_simulate(common, "multicell", 0, *tc, *budget_ms, cells)
        }
        Command::Bounds { common, t1, out } => cmd_bounds(common, *t1, out),
        Command::EmitPlots { common, out_dir, t1_list, tc_list, horizon_days, pareto_t1 } => {
            cmd_emit_plots(common, out_dir, t1_list, tc_list, horizon_days, pareto_t1)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the error path too.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Data(_) => ExitCode::from(2),
                CliError::Solver(_) => ExitCode::from(3),
            }
        }
    }
}
