//! Steady-state analysis: how much power a node burns at a fixed QoS state,
//! how much light it needs to run forever, and how long it lasts in the dark.
//!
//! The controller's transients are ignored here; these numbers answer "is
//! state `s` sustainable at this light level".

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridConfig, NodeConfig};
use crate::energy::{self, LoadModel};
use crate::qos::{ApplicationMode, QosState};

/// Resolution of [`min_lux_for_perpetual`].
pub const LUX_RESOLUTION: f64 = 0.1;

/// Load-side energy spent per table interval in the given mode.
///
/// Event detection assumes events saturate the hold-off, so one detection
/// and one notification happen every interval; this is the worst sustained
/// case.
pub fn energy_per_interval(load: &LoadModel, mode: ApplicationMode) -> f64 {
    load.e_controller_step
        + match mode {
            ApplicationMode::PeriodicSensing => load.e_sense_tx,
            ApplicationMode::Advertising => load.e_advertise,
            ApplicationMode::EventDetection => load.e_event_detect + load.e_sense_tx,
        }
}

/// Average storage-side power at a fixed QoS state.
pub fn steady_state_power(config: &NodeConfig, state: QosState) -> f64 {
    let interval = config.table.interval_for(state, config.mode);
    let action = energy_per_interval(&config.load, config.mode) / interval;
    energy::standby_power(&config.load, &config.converter) + action / config.converter.eta_buck
}

/// Smallest constant illuminance whose harvest, after the boost converter,
/// covers [`steady_state_power`]. Found by bisection to [`LUX_RESOLUTION`];
/// the result always errs on the sufficient side.
pub fn min_lux_for_perpetual(config: &NodeConfig, state: QosState) -> f64 {
    let demand = steady_state_power(config, state);
    let eta = config.converter.eta_boost;
    let harvester = &config.harvester;
    let enough = |lux: f64| eta * energy::harvest_power(harvester, lux) >= demand;
    if enough(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 10.0 * harvester.lux_ref);
    while !enough(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > LUX_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if enough(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Seconds a node starting at `v_start` survives at `state` with no light.
pub fn darkness_survival(config: &NodeConfig, v_start: f64, state: QosState) -> f64 {
    let cap = &config.supercap;
    let usable = 0.5 * cap.capacitance * (v_start * v_start - cap.v_cutoff * cap.v_cutoff);
    usable.max(0.0) / steady_state_power(config, state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub capacitance_f: f64,
    pub qos_state: QosState,
    pub mode: ApplicationMode,
    pub min_lux: f64,
    pub darkness_survival_s: f64,
}

/// Energy margin at one illuminance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuxMarginRow {
    pub capacitance_f: f64,
    pub qos_state: QosState,
    pub mode: ApplicationMode,
    pub lux: f64,
    /// Harvest after conversion minus steady-state demand.
    pub net_power_w: f64,
    /// Time to cutoff from the grid's start voltage; empty when sustainable.
    pub time_to_cutoff_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frontier {
    pub rows: Vec<FrontierRow>,
    pub lux_rows: Vec<LuxMarginRow>,
}

impl Frontier {
    pub const CSV_HEADER: [&'static str; 5] = [
        "capacitance_f",
        "qos_state",
        "mode",
        "min_lux",
        "darkness_survival_s",
    ];

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.capacitance_f.to_string(),
                r.qos_state.to_string(),
                r.mode.to_string(),
                r.min_lux.to_string(),
                r.darkness_survival_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_lux_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "capacitance_f",
            "qos_state",
            "mode",
            "lux",
            "net_power_w",
            "time_to_cutoff_s",
        ])?;
        for r in &self.lux_rows {
            w.write_record([
                r.capacitance_f.to_string(),
                r.qos_state.to_string(),
                r.mode.to_string(),
                r.lux.to_string(),
                r.net_power_w.to_string(),
                r.time_to_cutoff_s
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every `(capacitance, state)` grid point, plus a margin row for
/// every lux level. Rows come out in grid order.
pub fn sweep(grid: &GridConfig) -> Frontier {
    let v_start = grid.v_start();
    let points: Vec<(f64, QosState)> = grid
        .capacitances
        .iter()
        .flat_map(|&c| grid.qos_states.iter().map(move |&s| (c, s)))
        .collect();

    let evaluated: Vec<(FrontierRow, Vec<LuxMarginRow>)> = points
        .par_iter()
        .map(|&(capacitance, state)| {
            let mut node = grid.node.clone();
            node.mode = grid.mode;
            node.supercap.capacitance = capacitance;
            let demand = steady_state_power(&node, state);
            let usable = 0.5
                * capacitance
                * (v_start * v_start - node.supercap.v_cutoff * node.supercap.v_cutoff);
            let row = FrontierRow {
                capacitance_f: capacitance,
                qos_state: state,
                mode: grid.mode,
                min_lux: min_lux_for_perpetual(&node, state),
                darkness_survival_s: darkness_survival(&node, v_start, state),
            };
            let lux_rows = grid
                .lux
                .iter()
                .map(|&lux| {
                    let supply =
                        node.converter.eta_boost * energy::harvest_power(&node.harvester, lux);
                    let net = supply - demand;
                    LuxMarginRow {
                        capacitance_f: capacitance,
                        qos_state: state,
                        mode: grid.mode,
                        lux,
                        net_power_w: net,
                        time_to_cutoff_s: (net < 0.0).then(|| usable.max(0.0) / -net),
                    }
                })
                .collect();
            (row, lux_rows)
        })
        .collect();

    let mut frontier = Frontier::default();
    for (row, lux_rows) in evaluated {
        frontier.rows.push(row);
        frontier.lux_rows.extend(lux_rows);
    }
    frontier
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::energy::ConverterModel;

    fn ideal_node() -> NodeConfig {
        NodeConfig {
            converter: ConverterModel::ideal(),
            ..NodeConfig::default()
        }
    }

    fn q(s: u8) -> QosState {
        QosState::new(s).unwrap()
    }

    #[test]
    fn steady_state_examples() {
        let cfg = ideal_node();
        assert_relative_eq!(steady_state_power(&cfg, q(7)), 5.5e-6, max_relative = 1e-12);
        assert_relative_eq!(
            steady_state_power(&cfg, q(1)),
            3e-6 + 50e-6 / 600.0,
            max_relative = 1e-12
        );
        let idle = NodeConfig {
            load: LoadModel::standby_only(1e-6),
            ..ideal_node()
        };
        assert_eq!(
            steady_state_power(&idle, q(4)),
            energy::standby_power(&idle.load, &idle.converter)
        );
    }

    #[test]
    fn min_lux_examples() {
        let idle = NodeConfig {
            load: LoadModel::standby_only(1e-6),
            ..ideal_node()
        };
        let lux = min_lux_for_perpetual(&idle, q(1));
        assert!((lux - 300.0 * 3.0 / 69.75).abs() <= LUX_RESOLUTION, "{lux}");

        let lux = min_lux_for_perpetual(&ideal_node(), q(7));
        assert!((lux - 23.655_913_978).abs() <= LUX_RESOLUTION, "{lux}");
    }

    #[test]
    fn bracket_grows_for_heavy_loads() {
        let heavy = NodeConfig {
            mode: ApplicationMode::Advertising,
            load: LoadModel {
                e_advertise: 1e-3,
                ..LoadModel::default()
            },
            ..ideal_node()
        };
        // 1 mJ every 0.1 s is 10 mW, far above 10x the reference point.
        let lux = min_lux_for_perpetual(&heavy, q(7));
        let needed = 300.0 * (1e-2 + 3e-6) / 69.75e-6;
        assert!((lux - needed).abs() <= LUX_RESOLUTION, "{lux} vs {needed}");
    }

    #[test]
    fn darkness_survival_example() {
        let cfg = ideal_node();
        let t = darkness_survival(&cfg, 3.6, q(1));
        assert_relative_eq!(
            t,
            0.5 * (3.6 * 3.6 - 2.1 * 2.1) / (3e-6 + 50e-6 / 600.0),
            max_relative = 1e-12
        );
        assert!((t / 86_400.0 - 16.05).abs() < 0.01);
    }

    #[test]
    fn sweep_shapes() {
        let grid = GridConfig {
            capacitances: vec![1.0, 2.0],
            lux: vec![],
            qos_states: vec![q(1)],
            node: ideal_node(),
            ..GridConfig::default()
        };
        let f = sweep(&grid);
        assert_eq!(f.rows.len(), 2);
        assert!(f.lux_rows.is_empty());
        assert_relative_eq!(
            f.rows[1].darkness_survival_s,
            2.0 * f.rows[0].darkness_survival_s,
            max_relative = 1e-12
        );

        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("capacitance_f,qos_state,mode,min_lux,darkness_survival_s\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn lux_margin_rows() {
        let grid = GridConfig {
            capacitances: vec![1.0],
            lux: vec![0.0, 1000.0],
            qos_states: vec![q(7)],
            ..GridConfig::default()
        };
        let f = sweep(&grid);
        assert_eq!(f.lux_rows.len(), 2);
        assert!(f.lux_rows[0].time_to_cutoff_s.is_some());
        assert_relative_eq!(
            f.lux_rows[0].time_to_cutoff_s.unwrap(),
            f.rows[0].darkness_survival_s,
            max_relative = 1e-12
        );
        assert!(f.lux_rows[1].time_to_cutoff_s.is_none());
    }

    proptest! {
        #[test]
        fn power_and_lux_monotone_in_state(e in 1e-7f64..1e-3, mode_idx in 0usize..3) {
            let mode = [
                ApplicationMode::PeriodicSensing,
                ApplicationMode::EventDetection,
                ApplicationMode::Advertising,
            ][mode_idx];
            let cfg = NodeConfig {
                mode,
                load: LoadModel { e_sense_tx: e, e_advertise: e, e_event_detect: e, ..LoadModel::default() },
                ..NodeConfig::default()
            };
            for s in 1..7u8 {
                prop_assert!(steady_state_power(&cfg, q(s)) < steady_state_power(&cfg, q(s + 1)));
                prop_assert!(min_lux_for_perpetual(&cfg, q(s)) <= min_lux_for_perpetual(&cfg, q(s + 1)));
            }
        }
    }
}
