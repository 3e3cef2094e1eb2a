//! Configuration ingestion, price loading and CSV emission.
//!
//! Networks are described by a JSON document carrying physical quantities
//! only (volumes, elevations, ratings, efficiencies); every model
//! coefficient is re-derived on load, so a load/emit/load round trip
//! reproduces the derived network bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearize::{delta_t, level_bounds_at, BoundMode};
use crate::model::{
    derive_arc_coefficients, derive_flow_bound, Arc, ArcDirection, ModelError, Node, PriceSeries,
    Reservoir, ReservoirNetwork,
};
use crate::prices::{generate_prices, PriceParams};
use crate::sim::SweepEntry;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema violation in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("price file too short: found {found} rows, need {need}")]
    PriceLength { found: usize, need: usize },
    #[error("price file format error at row {row}: {message}")]
    PriceFormat { row: usize, message: String },
}

fn schema(field: &str, message: impl Into<String>) -> IoError {
    IoError::Schema { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReservoirDoc {
    pub id: usize,
    pub capacity_m3: f64,
    pub level_max_m: f64,
    pub bottom_elevation_m: f64,
    pub initial_level_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NodeDoc {
    Id(usize),
    Basin(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArcDoc {
    pub source: NodeDoc,
    pub dest: NodeDoc,
    pub power_mw: f64,
    pub efficiency: f64,
    /// "generate", "pump" or "reversible".
    pub mode: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstantsDoc {
    pub k_h2o: f64,
    pub basin_drop_m: f64,
}

/// JSON document schema for a reservoir network.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkConfigDoc {
    pub reservoirs: Vec<ReservoirDoc>,
    pub arcs: Vec<ArcDoc>,
    pub constants: ConstantsDoc,
}

fn resolve_node(doc: &NodeDoc, ids: &[usize], field: &str) -> Result<Node, IoError> {
    match doc {
        NodeDoc::Id(id) => ids
            .iter()
            .position(|r| r == id)
            .map(Node::Reservoir)
            .ok_or_else(|| schema(field, format!("unknown reservoir id {id}"))),
        NodeDoc::Basin(s) if s == "basin" => Ok(Node::Basin),
        NodeDoc::Basin(s) => Err(schema(field, format!("expected reservoir id or \"basin\", got {s:?}"))),
    }
}

/// Builds a network from the document, deriving every coefficient from first
/// principles and re-checking the model invariants.
pub fn parse_network(doc: &NetworkConfigDoc) -> Result<ReservoirNetwork, IoError> {
    if doc.constants.k_h2o <= 0.0 {
        return Err(schema("constants.k_h2o", "must be positive"));
    }
    let ids: Vec<usize> = doc.reservoirs.iter().map(|r| r.id).collect();
    let mut reservoirs = Vec::with_capacity(doc.reservoirs.len());
    let mut initial_levels = Vec::with_capacity(doc.reservoirs.len());
    for (i, r) in doc.reservoirs.iter().enumerate() {
        if r.level_max_m <= 0.0 {
            return Err(schema("reservoirs.level_max_m", format!("reservoir {}: must be positive", r.id)));
        }
        if r.capacity_m3 <= 0.0 {
            return Err(schema("reservoirs.capacity_m3", format!("reservoir {}: must be positive", r.id)));
        }
        reservoirs.push(Reservoir {
            id: i,
            capacity: r.capacity_m3,
            level_min: 0.0,
            level_max: r.level_max_m,
            gamma: r.capacity_m3 / r.level_max_m,
            bottom_elevation: r.bottom_elevation_m,
        });
        initial_levels.push(r.initial_level_m);
    }

    let elevation = |node: Node| -> f64 {
        match node {
            Node::Reservoir(i) => reservoirs[i].bottom_elevation,
            Node::Basin => 0.0,
        }
    };

    let mut arcs = Vec::new();
    for (k, a) in doc.arcs.iter().enumerate() {
        let src = resolve_node(&a.source, &ids, "arcs.source")?;
        let dst = resolve_node(&a.dest, &ids, "arcs.dest")?;
        if src == dst {
            return Err(schema("arcs", format!("arc {k}: source equals dest")));
        }
        for node in [src, dst] {
            if node == Node::Basin {
                let other = if src == Node::Basin { dst } else { src };
                if let Node::Reservoir(i) = other {
                    if (reservoirs[i].bottom_elevation - doc.constants.basin_drop_m).abs() > 1e-9 {
                        return Err(schema(
                            "constants.basin_drop_m",
                            format!(
                                "basin-adjacent reservoir {} sits at {} m, not {} m",
                                ids[i], reservoirs[i].bottom_elevation, doc.constants.basin_drop_m
                            ),
                        ));
                    }
                }
            }
        }
        let directed: Vec<(Node, Node, ArcDirection)> = match a.mode.as_str() {
            "generate" => vec![(src, dst, ArcDirection::Generate)],
            "pump" => vec![(src, dst, ArcDirection::Pump)],
            "reversible" => {
                let (upper, lower) = if elevation(src) > elevation(dst) { (src, dst) } else { (dst, src) };
                if elevation(upper) == elevation(lower) {
                    return Err(schema("arcs.mode", format!("arc {k}: reversible arc needs a height difference")));
                }
                vec![(upper, lower, ArcDirection::Generate), (lower, upper, ArcDirection::Pump)]
            }
            other => return Err(schema("arcs.mode", format!("arc {k}: unknown mode {other:?}"))),
        };
        for (s, d, dir) in directed {
            let h0 = match dir {
                ArcDirection::Generate => elevation(s) - elevation(d),
                ArcDirection::Pump => elevation(d) - elevation(s),
            };
            if h0 < 0.0 {
                return Err(schema("arcs", format!("arc {k}: {} arc runs uphill", a.mode)));
            }
            let (alpha, beta) = derive_arc_coefficients(doc.constants.k_h2o, h0, a.efficiency, dir)?;
            let mut arc = Arc {
                source: s,
                dest: d,
                alpha,
                beta,
                flow_min: 0.0,
                flow_max: 0.0,
                power_rating: a.power_mw * 1_000.0,
                efficiency: a.efficiency,
                direction: dir,
            };
            let net_stub = ReservoirNetwork {
                reservoirs: reservoirs.clone(),
                arcs: vec![],
                initial_levels: initial_levels.clone(),
                k_h2o: doc.constants.k_h2o,
            };
            let diff = net_stub.level_of(s, &initial_levels) - net_stub.level_of(d, &initial_levels);
            arc.flow_max = derive_flow_bound(&arc, arc.power_rating, diff)?;
            arcs.push(arc);
        }
    }

    let net = ReservoirNetwork { reservoirs, arcs, initial_levels, k_h2o: doc.constants.k_h2o };
    net.validate()?;
    Ok(net)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<ReservoirNetwork, IoError> {
    let text = std::fs::read_to_string(path)?;
    let doc: NetworkConfigDoc = serde_json::from_str(&text)?;
    parse_network(&doc)
}

/// Emits the document form of a network; `load(emit(net))` re-derives every
/// coefficient bit-for-bit because only physical quantities are written.
pub fn emit_network(net: &ReservoirNetwork) -> NetworkConfigDoc {
    let basin_drop = net
        .arcs
        .iter()
        .filter_map(|a| match (a.source, a.dest) {
            (Node::Reservoir(i), Node::Basin) | (Node::Basin, Node::Reservoir(i)) => {
                Some(net.reservoirs[i].bottom_elevation)
            }
            _ => None,
        })
        .next()
        .unwrap_or(0.0);
    NetworkConfigDoc {
        reservoirs: net
            .reservoirs
            .iter()
            .zip(&net.initial_levels)
            .map(|(r, &l0)| ReservoirDoc {
                id: r.id,
                capacity_m3: r.capacity,
                level_max_m: r.level_max,
                bottom_elevation_m: r.bottom_elevation,
                initial_level_m: l0,
            })
            .collect(),
        arcs: net
            .arcs
            .iter()
            .map(|a| {
                let to_doc = |n: Node| match n {
                    Node::Reservoir(i) => NodeDoc::Id(net.reservoirs[i].id),
                    Node::Basin => NodeDoc::Basin("basin".into()),
                };
                ArcDoc {
                    source: to_doc(a.source),
                    dest: to_doc(a.dest),
                    power_mw: a.power_rating / 1_000.0,
                    efficiency: a.efficiency,
                    mode: match a.direction {
                        ArcDirection::Generate => "generate".into(),
                        ArcDirection::Pump => "pump".into(),
                    },
                }
            })
            .collect(),
        constants: ConstantsDoc { k_h2o: net.k_h2o, basin_drop_m: basin_drop },
    }
}

/// Loads `horizon` hourly prices from a CSV of `timestamp_hour,price_per_kwh`
/// rows (header optional). Timestamps must advance by exactly one hour.
pub fn load_prices(path: impl AsRef<Path>, horizon: usize) -> Result<PriceSeries, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path.as_ref())?;
    let mut prices = Vec::new();
    let mut last_ts: Option<i64> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(IoError::PriceFormat { row, message: "need timestamp_hour,price_per_kwh".into() });
        }
        let ts_field = record.get(0).unwrap().trim();
        if row == 0 && ts_field.parse::<i64>().is_err() {
            continue; // header
        }
        let ts: i64 = ts_field
            .parse()
            .map_err(|e| IoError::PriceFormat { row, message: format!("bad timestamp: {e}") })?;
        let price: f64 = record
            .get(1)
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| IoError::PriceFormat { row, message: format!("bad price: {e}") })?;
        if !price.is_finite() {
            return Err(IoError::PriceFormat { row, message: "price must be finite".into() });
        }
        if let Some(prev) = last_ts {
            if ts != prev + 1 {
                return Err(IoError::PriceFormat {
                    row,
                    message: format!("timestamps must advance hourly, got {prev} -> {ts}"),
                });
            }
        }
        last_ts = Some(ts);
        prices.push(price);
        if prices.len() == horizon {
            break;
        }
    }
    if prices.len() < horizon {
        return Err(IoError::PriceLength { found: prices.len(), need: horizon });
    }
    Ok(PriceSeries { prices, terminal_values: vec![] })
}

/// Seeded synthetic series (see `prices` module for the exact recipe).
pub fn synthetic_prices(seed: u64, horizon: usize, params: &PriceParams) -> PriceSeries {
    PriceSeries { prices: generate_prices(seed, horizon, params), terminal_values: vec![] }
}

fn csv_header(seed: u64) -> String {
    format!("# seed={seed} version={}\n", env!("CARGO_PKG_VERSION"))
}

/// Sweep summaries as CSV.
pub fn sweep_csv(entries: &[SweepEntry], seed: u64) -> String {
    let mut out = csv_header(seed);
    out.push_str("method,t1,t_c,bound_mode,realized_objective,total_wall_ms,resolves,cuts_total,knee\n");
    for e in entries {
        let r = &e.result;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.t1,
            r.control_horizon,
            r.bound_mode,
            r.realized_objective,
            r.total_wall_ms,
            r.resolves.len(),
            r.cuts_total,
            e.knee_flag,
        ));
    }
    out
}

/// Per-step envelope-gap bounds as CSV: `t, delta_t, cumulative`.
pub fn delta_schedule_csv(
    net: &ReservoirNetwork,
    prices: &PriceSeries,
    t0: usize,
    t1: usize,
    t_end: usize,
    mode: BoundMode,
    reference_levels: &[f64],
    seed: u64,
) -> String {
    let mut out = csv_header(seed);
    out.push_str("t,delta,cumulative\n");
    let mut cum = 0.0;
    for t in t1..t_end {
        let lb = level_bounds_at(net, mode, t - t0, reference_levels);
        let d = delta_t(net, prices.prices[t], &lb);
        cum += d;
        out.push_str(&format!("{t},{d},{cum}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::two_reservoir;

    fn preset_doc() -> NetworkConfigDoc {
        emit_network(&two_reservoir())
    }

    #[test]
    fn emit_load_round_trip_is_bit_exact() {
        let net = two_reservoir();
        let doc = emit_network(&net);
        let reloaded = parse_network(&doc).unwrap();
        assert_eq!(net.reservoirs.len(), reloaded.reservoirs.len());
        for (a, b) in net.arcs.iter().zip(&reloaded.arcs) {
            assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
            assert_eq!(a.beta.to_bits(), b.beta.to_bits());
            assert_eq!(a.flow_max.to_bits(), b.flow_max.to_bits());
        }
        for (a, b) in net.reservoirs.iter().zip(&reloaded.reservoirs) {
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
        }
        // And a second round trip through JSON text.
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let doc2: NetworkConfigDoc = serde_json::from_str(&text).unwrap();
        let again = parse_network(&doc2).unwrap();
        for (a, b) in reloaded.arcs.iter().zip(&again.arcs) {
            assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
        }
    }

    #[test]
    fn bundled_two_reservoir_asset_matches_preset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/two_reservoir.json");
        let net = load_network(path).unwrap();
        let preset = two_reservoir();
        assert_eq!(net.arcs.len(), preset.arcs.len());
        assert!((net.arcs[0].alpha - (-0.4905)).abs() < 1e-12);
        for (a, b) in net.arcs.iter().zip(&preset.arcs) {
            assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
            assert_eq!(a.flow_max.to_bits(), b.flow_max.to_bits());
        }
    }

    #[test]
    fn empty_arcs_network_is_inert_but_valid() {
        let mut doc = preset_doc();
        doc.arcs.clear();
        let net = parse_network(&doc).unwrap();
        assert_eq!(net.num_arcs(), 0);
    }

    #[test]
    fn capacity_level_mismatch_is_rejected() {
        let mut doc = preset_doc();
        doc.reservoirs[0].level_max_m = 0.0;
        assert!(parse_network(&doc).is_err());
        // Invalid initial level is a model-invariant error after parsing.
        let mut doc = preset_doc();
        doc.reservoirs[0].initial_level_m = 1e9;
        assert!(matches!(parse_network(&doc), Err(IoError::Model(_))));
    }

    #[test]
    fn unknown_arc_mode_names_the_field() {
        let mut doc = preset_doc();
        doc.arcs[0].mode = "osmosis".into();
        match parse_network(&doc) {
            Err(IoError::Schema { field, .. }) => assert_eq!(field, "arcs.mode"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn price_file_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("hydrosplit_io_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ok = dir.join("ok.csv");
        std::fs::write(&ok, "timestamp_hour,price_per_kwh\n0,0.05\n1,0.06\n2,0.04\n").unwrap();
        let series = load_prices(&ok, 3).unwrap();
        assert_eq!(series.prices, vec![0.05, 0.06, 0.04]);
        assert!(matches!(load_prices(&ok, 24), Err(IoError::PriceLength { found: 3, need: 24 })));

        let gap = dir.join("gap.csv");
        std::fs::write(&gap, "0,0.05\n2,0.06\n").unwrap();
        assert!(matches!(load_prices(&gap, 2), Err(IoError::PriceFormat { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn synthetic_prices_are_deterministic() {
        let a = synthetic_prices(1, 24, &PriceParams::default());
        let b = synthetic_prices(1, 24, &PriceParams::default());
        assert_eq!(a.prices, b.prices);
    }

    #[test]
    fn csv_outputs_carry_seed_and_version_comment() {
        let net = two_reservoir();
        let prices = synthetic_prices(3, 24, &PriceParams::default());
        let csv = delta_schedule_csv(&net, &prices, 0, 12, 24, BoundMode::Tightened, &net.initial_levels, 3);
        assert!(csv.starts_with("# seed=3 version="));
        assert!(csv.lines().nth(1).unwrap().starts_with("t,delta,cumulative"));
        assert_eq!(csv.lines().count(), 2 + 12);
    }
}
