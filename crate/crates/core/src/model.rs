//! Reservoir network model: topology, bilinear dynamics and stage costs.
//!
//! Levels are measured in meters above each reservoir bottom, flows in m³/h,
//! energies in kWh/m³ and money in currency units (€ throughout the presets).
//! The energy released or consumed when moving one m³ along an arc is affine
//! in the level difference between its endpoints:
//!
//! ```text
//! E = alpha + beta * (level_source - level_dest)
//! ```
//!
//! Generation arcs (downhill) have `alpha < 0`, `beta < 0` so that `E < 0`
//! (revenue when multiplied by a positive price); pumping arcs have both
//! coefficients positive. A negative objective value is a profit.

use thiserror::Error;

/// Timestep length in hours. All rates are per hour.
pub const TIMESTEP_H: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate arc: {0}")]
    DegenerateArc(String),
    #[error("network configuration error: {0}")]
    Config(String),
}

/// Endpoint of an arc: a reservoir (by index into the network's reservoir
/// list) or the infinite basin, whose level is identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Reservoir(usize),
    Basin,
}

#[derive(Debug, Clone)]
pub struct Reservoir {
    pub id: usize,
    /// Usable storage volume in m³.
    pub capacity: f64,
    pub level_min: f64,
    pub level_max: f64,
    /// Surface-area proportionality: stored volume per meter of level (m³/m).
    pub gamma: f64,
    /// Bottom elevation in meters above the system zero-potential (the basin
    /// surface).
    pub bottom_elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcDirection {
    Generate,
    Pump,
}

#[derive(Debug, Clone)]
pub struct Arc {
    pub source: Node,
    pub dest: Node,
    /// kWh per m³ at zero level difference.
    pub alpha: f64,
    /// kWh per m³ per meter of level difference (source minus dest).
    pub beta: f64,
    /// m³/h; directed arcs carry nonnegative flow.
    pub flow_min: f64,
    pub flow_max: f64,
    /// kW rating the flow bound was derived from.
    pub power_rating: f64,
    /// One-way conversion efficiency the coefficients were derived with.
    pub efficiency: f64,
    pub direction: ArcDirection,
}

#[derive(Debug, Clone)]
pub struct ReservoirNetwork {
    pub reservoirs: Vec<Reservoir>,
    pub arcs: Vec<Arc>,
    /// Starting level per reservoir, meters.
    pub initial_levels: Vec<f64>,
    /// Water energy constant the arc coefficients were derived with,
    /// kWh per m³ per meter of head.
    pub k_h2o: f64,
}

/// Hourly electricity prices plus the per-meter value of water left in each
/// reservoir at the end of the horizon. `terminal_values` are positive and
/// enter every objective as a credit: `objective -= terminal_values · level_T`.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub prices: Vec<f64>,
    pub terminal_values: Vec<f64>,
}

impl PriceSeries {
    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    pub fn mean_price(&self) -> f64 {
        if self.prices.is_empty() {
            0.0
        } else {
            self.prices.iter().sum::<f64>() / self.prices.len() as f64
        }
    }
}

/// Joined state/input sequences with the achieved objective.
/// `stage_boundary` is the first timestep planned by the linearized stage
/// (0 when the whole trajectory came from a single model).
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// (T+1) × N reservoir levels.
    pub levels: Vec<Vec<f64>>,
    /// T × |arcs| flows.
    pub flows: Vec<Vec<f64>>,
    pub objective: f64,
    pub stage_boundary: usize,
}

impl ReservoirNetwork {
    pub fn num_reservoirs(&self) -> usize {
        self.reservoirs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn level_of(&self, node: Node, levels: &[f64]) -> f64 {
        match node {
            Node::Reservoir(i) => levels[i],
            Node::Basin => 0.0,
        }
    }

    pub fn level_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.reservoirs.iter().map(|r| r.level_min).collect();
        let hi = self.reservoirs.iter().map(|r| r.level_max).collect();
        (lo, hi)
    }

    /// Checks all structural invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, r) in self.reservoirs.iter().enumerate() {
            if r.gamma <= 0.0 {
                return Err(ModelError::Config(format!("reservoir {i}: gamma must be positive")));
            }
            if r.level_min > r.level_max {
                return Err(ModelError::Config(format!(
                    "reservoir {i}: level_min {} exceeds level_max {}",
                    r.level_min, r.level_max
                )));
            }
            let derived = r.gamma * (r.level_max - r.level_min);
            if (derived - r.capacity).abs() > 1e-6 * r.capacity.abs().max(1.0) {
                return Err(ModelError::Config(format!(
                    "reservoir {i}: capacity {} inconsistent with gamma * level span {}",
                    r.capacity, derived
                )));
            }
        }
        if self.initial_levels.len() != self.reservoirs.len() {
            return Err(ModelError::Config("initial_levels length mismatch".into()));
        }
        for (i, (&l0, r)) in self.initial_levels.iter().zip(&self.reservoirs).enumerate() {
            if l0 < r.level_min - 1e-9 || l0 > r.level_max + 1e-9 {
                return Err(ModelError::Config(format!("reservoir {i}: initial level {l0} out of bounds")));
            }
        }
        for (k, a) in self.arcs.iter().enumerate() {
            for node in [a.source, a.dest] {
                if let Node::Reservoir(i) = node {
                    if i >= self.reservoirs.len() {
                        return Err(ModelError::Config(format!("arc {k}: endpoint {i} does not exist")));
                    }
                }
            }
            if a.source == a.dest {
                return Err(ModelError::Config(format!("arc {k}: source equals dest")));
            }
            if !(0.0 <= a.flow_min && a.flow_min <= a.flow_max) {
                return Err(ModelError::Config(format!("arc {k}: invalid flow bounds")));
            }
            match a.direction {
                ArcDirection::Generate => {
                    if a.alpha >= 0.0 || a.beta >= 0.0 {
                        return Err(ModelError::Config(format!("arc {k}: generation arc needs negative coefficients")));
                    }
                }
                ArcDirection::Pump => {
                    if a.alpha <= 0.0 || a.beta <= 0.0 {
                        return Err(ModelError::Config(format!("arc {k}: pumping arc needs positive coefficients")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Energy per m³ along an arc at the given reservoir levels, kWh/m³.
pub fn arc_energy(arc: &Arc, levels: &[f64], net: &ReservoirNetwork) -> f64 {
    let ls = net.level_of(arc.source, levels);
    let ld = net.level_of(arc.dest, levels);
    arc.alpha + arc.beta * (ls - ld)
}

/// Derives `(alpha, beta)` for an arc from the water energy constant
/// `k_h2o` (kWh per m³ per meter of head), the bottom separation `h0` and
/// the one-way conversion efficiency `mu`.
pub fn derive_arc_coefficients(
    k_h2o: f64,
    h0: f64,
    mu: f64,
    direction: ArcDirection,
) -> Result<(f64, f64), ModelError> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(ModelError::InvalidParameter(format!("efficiency mu must be in (0, 1], got {mu}")));
    }
    if h0 < 0.0 {
        return Err(ModelError::InvalidParameter(format!("head h0 must be nonnegative, got {h0}")));
    }
    if k_h2o <= 0.0 {
        return Err(ModelError::InvalidParameter(format!("k_h2o must be positive, got {k_h2o}")));
    }
    Ok(match direction {
        ArcDirection::Generate => (-k_h2o * h0 * mu, -k_h2o * mu),
        ArcDirection::Pump => (k_h2o * h0 / mu, k_h2o / mu),
    })
}

/// Flow that produces or consumes `power_rating_kw` at the given initial
/// level difference (source minus dest), m³/h.
pub fn derive_flow_bound(
    arc: &Arc,
    power_rating_kw: f64,
    initial_level_diff: f64,
) -> Result<f64, ModelError> {
    let energy = arc.alpha + arc.beta * initial_level_diff;
    if power_rating_kw == 0.0 {
        return Ok(0.0);
    }
    if energy.abs() < 1e-12 {
        return Err(ModelError::DegenerateArc(format!(
            "zero energy density at level difference {initial_level_diff}"
        )));
    }
    Ok(power_rating_kw / energy.abs())
}

/// One-step level update. Pure map: the caller is responsible for checking
/// that the result stays inside the level box.
pub fn step_dynamics(levels: &[f64], flows: &[f64], net: &ReservoirNetwork) -> Vec<f64> {
    debug_assert_eq!(levels.len(), net.num_reservoirs());
    debug_assert_eq!(flows.len(), net.num_arcs());
    let mut next = levels.to_vec();
    for (arc, &v) in net.arcs.iter().zip(flows) {
        if let Node::Reservoir(i) = arc.source {
            next[i] -= v / net.reservoirs[i].gamma;
        }
        if let Node::Reservoir(j) = arc.dest {
            next[j] += v / net.reservoirs[j].gamma;
        }
    }
    next
}

/// Exact bilinear stage cost: `sum_arcs price * flow * energy(levels)`.
pub fn exact_stage_cost(levels: &[f64], flows: &[f64], price: f64, net: &ReservoirNetwork) -> f64 {
    net.arcs
        .iter()
        .zip(flows)
        .map(|(arc, &v)| price * v * arc_energy(arc, levels, net))
        .sum()
}

/// Exact objective of a trajectory: stage costs minus the terminal water
/// credit `terminal_values · level_T`.
pub fn exact_objective(traj: &Trajectory, prices: &PriceSeries, net: &ReservoirNetwork) -> f64 {
    let t_end = traj.flows.len();
    let mut total = 0.0;
    for t in 0..t_end {
        total += exact_stage_cost(&traj.levels[t], &traj.flows[t], prices.prices[t], net);
    }
    let last = &traj.levels[t_end];
    for (i, &w) in prices.terminal_values.iter().enumerate() {
        total -= w * last[i];
    }
    total
}

/// Per-meter value of stored water: the generation energy released by one
/// meter of level through every downhill stage to the basin (evaluated at the
/// initial levels, one efficiency factor per stage), times the mean price.
pub fn terminal_water_value(net: &ReservoirNetwork, prices: &PriceSeries) -> Result<Vec<f64>, ModelError> {
    if prices.prices.is_empty() {
        return Err(ModelError::InvalidParameter("price series is empty".into()));
    }
    let mean = prices.mean_price();
    let mut values = Vec::with_capacity(net.num_reservoirs());
    for i in 0..net.num_reservoirs() {
        let mut energy_per_m3 = 0.0;
        let mut node = Node::Reservoir(i);
        let mut hops = 0;
        while let Node::Reservoir(r) = node {
            let arc = net
                .arcs
                .iter()
                .find(|a| a.direction == ArcDirection::Generate && a.source == Node::Reservoir(r))
                .ok_or_else(|| {
                    ModelError::Config(format!("reservoir {r} has no downhill generation path to the basin"))
                })?;
            energy_per_m3 += -arc_energy(arc, &net.initial_levels, net);
            node = arc.dest;
            hops += 1;
            if hops > net.num_reservoirs() {
                return Err(ModelError::Config("generation arcs form a cycle".into()));
            }
        }
        values.push(net.reservoirs[i].gamma * energy_per_m3 * mean);
    }
    Ok(values)
}

/// Checks that a trajectory obeys the exact dynamics (within `tol_m` meters)
/// and all box bounds. Used by tests and the simulation harness.
pub fn validate_trajectory(traj: &Trajectory, net: &ReservoirNetwork, tol_m: f64) -> Result<(), ModelError> {
    let t_end = traj.flows.len();
    if traj.levels.len() != t_end + 1 {
        return Err(ModelError::Config("levels/flows length mismatch".into()));
    }
    for t in 0..t_end {
        let stepped = step_dynamics(&traj.levels[t], &traj.flows[t], net);
        for (i, (&got, &want)) in traj.levels[t + 1].iter().zip(&stepped).enumerate() {
            if (got - want).abs() > tol_m {
                return Err(ModelError::Config(format!(
                    "dynamics violated at t={t}, reservoir {i}: {got} vs {want}"
                )));
            }
        }
        for (k, (arc, &v)) in net.arcs.iter().zip(&traj.flows[t]).enumerate() {
            if v < arc.flow_min - 1e-6 || v > arc.flow_max + 1e-6 {
                return Err(ModelError::Config(format!("flow bound violated at t={t}, arc {k}: {v}")));
            }
        }
    }
    for (t, lv) in traj.levels.iter().enumerate() {
        for (i, (&l, r)) in lv.iter().zip(&net.reservoirs).enumerate() {
            if l < r.level_min - tol_m || l > r.level_max + tol_m {
                return Err(ModelError::Config(format!("level bound violated at t={t}, reservoir {i}: {l}")));
            }
        }
    }
    Ok(())
}

pub mod presets {
    //! Bundled test systems. `two_reservoir` is the cascade of two equal
    //! 33·10⁶ m³ reservoirs over an infinite basin, connected by reversible
    //! 100 MW pump/turbines at 90% one-way efficiency; all coefficients are
    //! derived from first principles at the half-full starting point.

    use super::*;

    pub const K_H2O: f64 = 0.002725;
    pub const CAPACITY_M3: f64 = 33.0e6;
    pub const POWER_RATING_KW: f64 = 100_000.0;
    pub const EFFICIENCY: f64 = 0.9;
    /// Bottom separation between the two reservoirs, m.
    pub const HEAD_A_B: f64 = 200.0;
    /// Drop from the lower reservoir bottom to the basin surface, m.
    pub const HEAD_B_BASIN: f64 = 300.0;

    fn reversible_pair(
        upper: Node,
        lower: Node,
        h0: f64,
        initial_levels: &[f64],
        reservoirs: &[Reservoir],
    ) -> Vec<Arc> {
        let net_stub = ReservoirNetwork {
            reservoirs: reservoirs.to_vec(),
            arcs: vec![],
            initial_levels: initial_levels.to_vec(),
            k_h2o: K_H2O,
        };
        let mut arcs = Vec::new();
        for (src, dst, dir) in [
            (upper, lower, ArcDirection::Generate),
            (lower, upper, ArcDirection::Pump),
        ] {
            let (alpha, beta) = derive_arc_coefficients(K_H2O, h0, EFFICIENCY, dir).unwrap();
            let mut arc = Arc {
                source: src,
                dest: dst,
                alpha,
                beta,
                flow_min: 0.0,
                flow_max: 0.0,
                power_rating: POWER_RATING_KW,
                efficiency: EFFICIENCY,
                direction: dir,
            };
            let diff = net_stub.level_of(src, initial_levels) - net_stub.level_of(dst, initial_levels);
            arc.flow_max = derive_flow_bound(&arc, POWER_RATING_KW, diff).unwrap();
            arcs.push(arc);
        }
        arcs
    }

    /// Two reservoirs (a above b) plus the infinite basin, half-full start.
    pub fn two_reservoir() -> ReservoirNetwork {
        let reservoirs = vec![
            Reservoir {
                id: 0,
                capacity: CAPACITY_M3,
                level_min: 0.0,
                level_max: 85.0,
                gamma: CAPACITY_M3 / 85.0,
                bottom_elevation: HEAD_A_B + HEAD_B_BASIN,
            },
            Reservoir {
                id: 1,
                capacity: CAPACITY_M3,
                level_min: 0.0,
                level_max: 100.0,
                gamma: CAPACITY_M3 / 100.0,
                bottom_elevation: HEAD_B_BASIN,
            },
        ];
        let initial_levels = vec![42.5, 50.0];
        let mut arcs = reversible_pair(
            Node::Reservoir(0),
            Node::Reservoir(1),
            HEAD_A_B,
            &initial_levels,
            &reservoirs,
        );
        arcs.extend(reversible_pair(
            Node::Reservoir(1),
            Node::Basin,
            HEAD_B_BASIN,
            &initial_levels,
            &reservoirs,
        ));
        let net = ReservoirNetwork { reservoirs, arcs, initial_levels, k_h2o: K_H2O };
        net.validate().expect("preset must satisfy model invariants");
        net
    }

    /// Three-reservoir variant: a clone of reservoir a stacked 200 m above
    /// it, connected by an identical reversible 100 MW pair. The added
    /// parameters are a documented guess; quantitative comparisons stay on
    /// the two-reservoir system.
    pub fn three_reservoir() -> ReservoirNetwork {
        let two = two_reservoir();
        let mut reservoirs = vec![Reservoir {
            id: 2,
            capacity: CAPACITY_M3,
            level_min: 0.0,
            level_max: 85.0,
            gamma: CAPACITY_M3 / 85.0,
            bottom_elevation: 2.0 * HEAD_A_B + HEAD_B_BASIN,
        }];
        reservoirs.extend(two.reservoirs.iter().cloned());
        // re-index: c=0 (top), a=1, b=2
        for (new_id, r) in reservoirs.iter_mut().enumerate() {
            r.id = new_id;
        }
        let initial_levels = vec![42.5, 42.5, 50.0];
        let mut arcs = reversible_pair(
            Node::Reservoir(0),
            Node::Reservoir(1),
            HEAD_A_B,
            &initial_levels,
            &reservoirs,
        );
        arcs.extend(reversible_pair(
            Node::Reservoir(1),
            Node::Reservoir(2),
            HEAD_A_B,
            &initial_levels,
            &reservoirs,
        ));
        arcs.extend(reversible_pair(
            Node::Reservoir(2),
            Node::Basin,
            HEAD_B_BASIN,
            &initial_levels,
            &reservoirs,
        ));
        let net = ReservoirNetwork { reservoirs, arcs, initial_levels, k_h2o: K_H2O };
        net.validate().expect("preset must satisfy model invariants");
        net
    }
}
