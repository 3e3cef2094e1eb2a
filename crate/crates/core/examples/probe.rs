use hydrosplit::ddp::{bounds_report, run_algorithm1, DdpOptions};
use hydrosplit::dp::{self, DpOptions, Grid};
use hydrosplit::linearize::BoundMode;
use hydrosplit::model::presets::two_reservoir;
use hydrosplit::model::{terminal_water_value, PriceSeries};
use hydrosplit::prices::{generate_prices, PriceParams};

fn main() {
    let net = two_reservoir();

    // Criterion 3 instance: T=48, T1=12.
    let mut series = PriceSeries {
        prices: generate_prices(2024, 48, &PriceParams::default()),
        terminal_values: vec![],
    };
    series.terminal_values = terminal_water_value(&net, &series).unwrap();
    let grid = Grid::regular(&net, 33, 33);
    let t = std::time::Instant::now();
    let result = run_algorithm1(&net, &series, 0, 12, 48, &net.initial_levels, &grid, &DdpOptions::default()).unwrap();
    println!("c3: status {:?} iters {} cuts {} wall {:.1}s", result.status, result.iterations, result.cuts.len(), t.elapsed().as_secs_f64());
    println!("c3 lb_history: {:?}", result.lb_history);
    println!("c3 ub_history: {:?}", result.ub_history);
    println!("c3 g0_history: {:?}", result.g0_history);

    // Criterion 4/5 tiny instance: T=6, T1=2, 9-pt grids, 65-pt oracle.
    let mut tiny = PriceSeries {
        prices: generate_prices(7, 6, &PriceParams::default()),
        terminal_values: vec![],
    };
    tiny.terminal_values = terminal_water_value(&net, &tiny).unwrap();
    let grid9 = Grid::regular(&net, 9, 9);
    let opts = DdpOptions { bound_mode: BoundMode::Tightened, ..Default::default() };
    let t = std::time::Instant::now();
    let result = run_algorithm1(&net, &tiny, 0, 2, 6, &net.initial_levels, &grid9, &opts).unwrap();
    let tv = tiny.terminal_values.clone();
    let credit = move |l: &[f64]| -> f64 { -tv.iter().zip(l).map(|(w, l)| w * l).sum::<f64>() };
    let grid65 = Grid::regular(&net, 65, 65);
    let oracle = dp::solve_dp(&net, &tiny, 0, 6, &credit, &grid65, &net.initial_levels, &DpOptions::default()).unwrap();
    let report = bounds_report(&result, &net, &tiny, 0, 2, 6, &net.initial_levels, &grid9, &opts, Some(oracle.value_at_start)).unwrap();
    println!("c4: wall {:.1}s", t.elapsed().as_secs_f64());
    println!("c4 g0_lower {} oracle_g0 {} eps {} sum_delta {}", report.g0_lower, oracle.value_at_start, report.epsilon_surrogate, report.sum_delta);
    println!("c4 sandwich: {} <= {} <= {}", report.g0_lower, oracle.value_at_start, report.theorem2_upper);
    println!("c5 realized {} in [{}, {}]", result.realized_exact_objective, oracle.value_at_start, report.theorem3_upper.unwrap());
}
