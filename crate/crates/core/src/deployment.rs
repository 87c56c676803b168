//! Many nodes and one base station.
//!
//! Nodes share no energy or radio state, so each one is simulated on its own
//! (in parallel) and the results are folded together afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DeliveryModel, DeploymentConfig};
use crate::error::SimError;
use crate::qos::ApplicationMode;
use crate::sim::{run_node_with, NodeLog, Packet, Recording};
use crate::trace::Trace;

/// Inputs for one node.
#[derive(Debug, Clone, Default)]
pub struct NodeTraces {
    pub light: Trace,
    pub events: Trace,
}

impl NodeTraces {
    pub fn light_only(light: Trace) -> Self {
        NodeTraces {
            light,
            events: Trace::empty(),
        }
    }
}

/// Hard-range link: delivered iff the node is within range, boundary included.
pub fn link_delivery(distance: f64, range: f64) -> bool {
    debug_assert!(distance >= 0.0);
    distance <= range
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Per-node seed, independent of the node's position in the config.
pub fn derive_seed(seed: u64, node_id: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in node_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node_id: String,
    pub mode: ApplicationMode,
    pub distance_m: f64,
    pub uptime_fraction: f64,
    pub dead_seconds: f64,
    pub deaths: u64,
    pub controller_steps: u64,
    pub packets_emitted: u64,
    pub packets_delivered: u64,
    /// Mean spacing between consecutive packets.
    pub mean_interval_s: Option<f64>,
    pub qos_histogram: [u64; 7],
    pub events_detected: u64,
    pub events_unreported: u64,
    pub latency_mean_s: Option<f64>,
    pub latency_max_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub nodes: usize,
    /// Mean over nodes; 1.0 for an empty deployment.
    pub uptime_fraction: f64,
    pub dead_seconds: f64,
    pub controller_steps: u64,
    pub packets_emitted: u64,
    pub packets_delivered: u64,
    pub mean_interval_s: BTreeMap<ApplicationMode, f64>,
    pub qos_histogram: [u64; 7],
    pub latency_mean_s: Option<f64>,
    pub latency_max_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nodes: Vec<NodeMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Folds node logs into metrics. `delivered[i]` is the number of packets
/// of `logs[i]` that reached the base station.
pub fn compute_metrics(logs: &[NodeLog], delivered: &[u64], distances: &[f64]) -> Metrics {
    assert_eq!(logs.len(), delivered.len());
    assert_eq!(logs.len(), distances.len());
    let nodes: Vec<NodeMetrics> = logs
        .iter()
        .zip(delivered)
        .zip(distances)
        .map(|((log, &delivered), &distance_m)| {
            let s = &log.summary;
            NodeMetrics {
                node_id: log.node_id.clone(),
                mode: log.mode,
                distance_m,
                uptime_fraction: s.uptime_fraction(),
                dead_seconds: s.dead_seconds,
                deaths: s.deaths,
                controller_steps: s.controller_steps,
                packets_emitted: s.packets_emitted,
                packets_delivered: delivered,
                mean_interval_s: s.mean_packet_interval(),
                qos_histogram: s.qos_histogram,
                events_detected: s.events_detected,
                events_unreported: s.events_unreported,
                latency_mean_s: s.mean_latency(),
                latency_max_s: (s.latency_count > 0).then_some(s.latency_max_s),
            }
        })
        .collect();

    let mut gaps: BTreeMap<ApplicationMode, (f64, u64)> = BTreeMap::new();
    let mut histogram = [0u64; 7];
    let (mut lat_sum, mut lat_n, mut lat_max) = (0.0, 0u64, None::<f64>);
    for log in logs {
        let s = &log.summary;
        let g = gaps.entry(log.mode).or_default();
        g.0 += s.packet_gap_sum_s;
        g.1 += s.packet_gap_count;
        for (acc, n) in histogram.iter_mut().zip(s.qos_histogram) {
            *acc += n;
        }
        lat_sum += s.latency_sum_s;
        lat_n += s.latency_count;
        if s.latency_count > 0 {
            lat_max = Some(lat_max.map_or(s.latency_max_s, |m| m.max(s.latency_max_s)));
        }
    }
    let aggregate = AggregateMetrics {
        nodes: nodes.len(),
        uptime_fraction: if nodes.is_empty() {
            1.0
        } else {
            nodes.iter().map(|n| n.uptime_fraction).sum::<f64>() / nodes.len() as f64
        },
        dead_seconds: nodes.iter().map(|n| n.dead_seconds).sum(),
        controller_steps: nodes.iter().map(|n| n.controller_steps).sum(),
        packets_emitted: nodes.iter().map(|n| n.packets_emitted).sum(),
        packets_delivered: nodes.iter().map(|n| n.packets_delivered).sum(),
        mean_interval_s: gaps
            .into_iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(mode, (sum, n))| (mode, sum / n as f64))
            .collect(),
        qos_histogram: histogram,
        latency_mean_s: (lat_n > 0).then(|| lat_sum / lat_n as f64),
        latency_max_s: lat_max,
    };
    Metrics { nodes, aggregate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub log: NodeLog,
    pub distance_m: f64,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentReport {
    pub duration: f64,
    pub seed: u64,
    pub nodes: Vec<NodeReport>,
    pub metrics: Metrics,
}

impl DeploymentReport {
    /// Packets received by the base station ordered by `(time, node_id)`.
    pub fn received_packets(&self) -> Vec<&Packet> {
        let mut out: Vec<&Packet> = self
            .nodes
            .iter()
            .filter(|n| n.delivered)
            .flat_map(|n| n.log.packets.iter())
            .collect();
        out.sort_by(|a, b| {
            a.timestamp
                .total_cmp(&b.timestamp)
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "duration_s": self.duration,
            "seed": self.seed,
            "metrics": self.metrics,
            "ledgers": self.nodes.iter().map(|n| n.log.ledger_json()).collect::<Vec<_>>(),
        })
    }

    /// Writes `report.json` and one `<node_id>.csv` log per node.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.summary_json())?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        for node in &self.nodes {
            let file = std::fs::File::create(dir.join(format!("{}.csv", node.log.node_id)))?;
            node.log
                .write_csv(std::io::BufWriter::new(file))
                .map_err(std::io::Error::other)?;
        }
        Ok(())
    }
}

/// Simulates every configured node and aggregates the results.
///
/// Every node needs an entry in `traces`; a missing one is reported before
/// anything runs.
pub fn run_deployment(
    config: &DeploymentConfig,
    traces: &BTreeMap<String, NodeTraces>,
    duration: f64,
    seed: u64,
    recording: Recording,
) -> Result<DeploymentReport, SimError> {
    config.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::Duration(duration));
    }
    let inputs = config
        .nodes
        .iter()
        .map(|n| {
            traces
                .get(&n.node_id)
                .map(|t| (n, t))
                .ok_or_else(|| SimError::MissingTrace(n.node_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let logs = inputs
        .par_iter()
        .map(|(node, t)| {
            run_node_with(
                node,
                &t.light,
                &t.events,
                duration,
                derive_seed(seed, &node.node_id),
                recording,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let nodes: Vec<NodeReport> = logs
        .into_iter()
        .map(|log| {
            let distance_m = distance(log.position, config.base_station);
            let delivered = match config.delivery_model {
                DeliveryModel::HardRange => link_delivery(distance_m, config.radio_range),
            };
            NodeReport {
                log,
                distance_m,
                delivered,
            }
        })
        .collect();

    // Position is static, so under the hard-range model either every packet
    // of a node arrives or none does.
    let delivered: Vec<u64> = nodes
        .iter()
        .map(|n| {
            if n.delivered {
                n.log.summary.packets_emitted
            } else {
                0
            }
        })
        .collect();
    let distances: Vec<f64> = nodes.iter().map(|n| n.distance_m).collect();
    let logs: Vec<NodeLog> = nodes.iter().map(|n| n.log.clone()).collect();
    let metrics = compute_metrics(&logs, &delivered, &distances);
    Ok(DeploymentReport {
        duration,
        seed,
        nodes,
        metrics,
    })
}
