//! TOML configuration for single nodes, deployments and explorer grids.
//!
//! Every section is optional and falls back to the documented defaults, so
//! an empty file is a valid node configuration. Invariants are checked at
//! load time and reported with the dotted path of the offending field.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{ConverterModel, HarvesterModel, LoadModel, SupercapState};
use crate::error::ConfigError;
use crate::qos::{ApplicationMode, QosState, QosTable};

/// How a node picks its QoS state at each wakeup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPolicy {
    /// Run the adaptive controller.
    #[default]
    Adaptive,
    /// Controller disabled, state held fixed.
    Pinned(QosState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeConfig {
    pub node_id: String,
    pub mode: ApplicationMode,
    /// Initial storage state.
    pub supercap: SupercapState,
    pub harvester: HarvesterModel,
    pub converter: ConverterModel,
    pub load: LoadModel,
    pub table: QosTable,
    /// A dead node restarts once the store recharges to this voltage.
    #[serde(rename = "v_on_v")]
    pub v_on: f64,
    #[serde(rename = "position_m")]
    pub position: [f64; 2],
    pub controller: ControlPolicy,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            node_id: "node".into(),
            mode: ApplicationMode::default(),
            supercap: SupercapState::default(),
            harvester: HarvesterModel::default(),
            converter: ConverterModel::default(),
            load: LoadModel::default(),
            table: QosTable::default(),
            v_on: 2.4,
            position: [0.0, 0.0],
            controller: ControlPolicy::default(),
        }
    }
}

impl NodeConfig {
    pub fn with_id(id: impl Into<String>) -> Self {
        NodeConfig {
            node_id: id.into(),
            ..NodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_id.trim().is_empty() {
            return Err(ConfigError::invalid("node_id", "must not be empty"));
        }
        self.supercap.validate().map_err(|e| e.within("supercap"))?;
        self.harvester
            .validate()
            .map_err(|e| e.within("harvester"))?;
        self.converter
            .validate()
            .map_err(|e| e.within("converter"))?;
        self.load.validate().map_err(|e| e.within("load"))?;

        let cap = &self.supercap;
        let v_max = self.table.v_max();
        if cap.v_cutoff < self.table.v_min() {
            return Err(ConfigError::invalid(
                "supercap.v_cutoff_v",
                format!(
                    "{} is below the lowest QoS bucket ({} V); the controller has no state there",
                    cap.v_cutoff,
                    self.table.v_min()
                ),
            ));
        }
        if !(self.v_on > cap.v_cutoff && self.v_on <= v_max) {
            return Err(ConfigError::invalid(
                "v_on_v",
                format!(
                    "{} must satisfy v_cutoff ({}) < v_on <= v_max ({v_max})",
                    self.v_on, cap.v_cutoff
                ),
            ));
        }
        if self.v_on > cap.v_rated {
            return Err(ConfigError::invalid(
                "v_on_v",
                format!("{} exceeds v_rated = {}", self.v_on, cap.v_rated),
            ));
        }
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err(ConfigError::invalid(
                "position_m",
                "coordinates must be finite",
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: NodeConfig = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        NodeConfig::from_toml_str(&read(path)?, &path.display().to_string())
    }
}

/// Packet delivery model between nodes and the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryModel {
    /// Delivered iff the distance is within range (inclusive).
    #[default]
    HardRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    #[serde(rename = "base_station_m")]
    pub base_station: [f64; 2],
    #[serde(rename = "radio_range_m")]
    pub radio_range: f64,
    pub delivery_model: DeliveryModel,
    pub nodes: Vec<NodeConfig>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            base_station: [0.0, 0.0],
            radio_range: 30.0,
            delivery_model: DeliveryModel::default(),
            nodes: Vec::new(),
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.radio_range > 0.0 && self.radio_range.is_finite()) {
            return Err(ConfigError::invalid(
                "radio_range_m",
                format!("{} must be positive", self.radio_range),
            ));
        }
        if !self.base_station.iter().all(|c| c.is_finite()) {
            return Err(ConfigError::invalid(
                "base_station_m",
                "coordinates must be finite",
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            node.validate()
                .map_err(|e| e.within(&format!("nodes[{i}]")))?;
            if !seen.insert(node.node_id.as_str()) {
                return Err(ConfigError::invalid(
                    format!("nodes[{i}].node_id"),
                    format!("duplicate node id `{}`", node.node_id),
                ));
            }
        }
        Ok(())
    }

    /// Parses a deployment file. An optional `[node_defaults]` table is
    /// merged underneath every `[[nodes]]` entry.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
        if let Some(defaults) = doc.remove("node_defaults") {
            let toml::Value::Table(defaults) = defaults else {
                return Err(ConfigError::invalid("node_defaults", "must be a table"));
            };
            if let Some(toml::Value::Array(nodes)) = doc.get_mut("nodes") {
                for node in nodes.iter_mut() {
                    if let toml::Value::Table(t) = node {
                        let mut merged = defaults.clone();
                        merge_into(&mut merged, std::mem::take(t));
                        *t = merged;
                    }
                }
            }
        }
        let cfg = DeploymentConfig::deserialize(toml::Value::Table(doc))
            .map_err(|e| parse_error(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        DeploymentConfig::from_toml_str(&read(path)?, &path.display().to_string())
    }
}

/// Design-space grid for the explorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(rename = "capacitances_f")]
    pub capacitances: Vec<f64>,
    /// Illuminance levels for the optional per-lux margin table.
    pub lux: Vec<f64>,
    pub qos_states: Vec<QosState>,
    pub mode: ApplicationMode,
    /// Start voltage for darkness survival; defaults to the table maximum.
    #[serde(rename = "v_start_v")]
    pub v_start: Option<f64>,
    /// Models shared by every grid point. Capacitance is overridden per row.
    pub node: NodeConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            capacitances: vec![0.1, 0.47, 1.0, 2.2],
            lux: vec![50.0, 100.0, 300.0, 600.0],
            qos_states: QosState::all().collect(),
            mode: ApplicationMode::PeriodicSensing,
            v_start: None,
            node: NodeConfig::default(),
        }
    }
}

impl GridConfig {
    pub fn v_start(&self) -> f64 {
        self.v_start.unwrap_or_else(|| self.node.table.v_max())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.capacitances.is_empty() {
            return Err(ConfigError::invalid(
                "capacitances_f",
                "grid needs at least one capacitance",
            ));
        }
        if self.qos_states.is_empty() {
            return Err(ConfigError::invalid(
                "qos_states",
                "grid needs at least one QoS state",
            ));
        }
        for (i, c) in self.capacitances.iter().enumerate() {
            if !(*c > 0.0 && c.is_finite()) {
                return Err(ConfigError::invalid(
                    format!("capacitances_f[{i}]"),
                    format!("{c} must be positive"),
                ));
            }
        }
        for (i, l) in self.lux.iter().enumerate() {
            if !(*l >= 0.0 && l.is_finite()) {
                return Err(ConfigError::invalid(
                    format!("lux[{i}]"),
                    format!("{l} must be non-negative"),
                ));
            }
        }
        let v = self.v_start();
        let cutoff = self.node.supercap.v_cutoff;
        if !(v >= cutoff && v <= self.node.supercap.v_rated) {
            return Err(ConfigError::invalid(
                "v_start_v",
                format!("{v} must lie in [v_cutoff = {cutoff}, v_rated]"),
            ));
        }
        self.node.validate().map_err(|e| e.within("node"))
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        GridConfig::from_toml_str(&read(path)?, &path.display().to_string())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_error(origin: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Parse {
        path: origin.to_owned(),
        message: e.to_string().trim_end().to_owned(),
    }
}

/// Recursively overlays `top` onto `base`.
fn merge_into(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_into(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_node() {
        let cfg = NodeConfig::from_toml_str("", "<test>").unwrap();
        assert_eq!(cfg, NodeConfig::default());
    }

    #[test]
    fn parses_sections_and_pinned_controller() {
        let text = r#"
            node_id = "lab-3"
            mode = "advertising"
            v_on_v = 2.5
            position_m = [4.0, 3.0]
            controller = { pinned = 4 }

            [supercap]
            capacitance_f = 0.47
            voltage_v = 3.0

            [load]
            e_advertise_j = 20e-6
        "#;
        let cfg = NodeConfig::from_toml_str(text, "<test>").unwrap();
        assert_eq!(cfg.mode, ApplicationMode::Advertising);
        assert_eq!(
            cfg.controller,
            ControlPolicy::Pinned(QosState::new(4).unwrap())
        );
        assert_eq!(cfg.supercap.capacitance, 0.47);
        assert_eq!(cfg.supercap.v_cutoff, 2.1);
        assert_eq!(cfg.load.e_advertise, 20e-6);
        assert_eq!(cfg.load.e_sense_tx, LoadModel::default().e_sense_tx);
    }

    #[test]
    fn negative_capacitance_names_field() {
        let err = NodeConfig::from_toml_str("[supercap]\ncapacitance_f = -1.0\n", "<t>")
            .unwrap_err()
            .to_string();
        assert!(err.contains("supercap.capacitance_f"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = NodeConfig::from_toml_str("capacitance = 1.0\n", "<t>").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn overlapping_table_rows_are_reported() {
        let mut text = String::new();
        for (state, lo, hi, s, p, a) in [
            (7, 3.4, 3.6, 20, 10, 0.1),
            (6, 3.2, 3.4, 40, 20, 0.2),
            (5, 3.0, 3.2, 60, 30, 0.4),
            (4, 2.8, 3.1, 120, 60, 0.64),
            (3, 2.6, 2.8, 240, 120, 0.9),
            (2, 2.4, 2.6, 300, 300, 2.0),
            (1, 2.1, 2.4, 600, 600, 5.0),
        ] {
            text += &format!(
                "[[table.rows]]\nstate = {state}\nv_lo_v = {lo}\nv_hi_v = {hi}\n\
                 sense_interval_s = {s}\npir_interval_s = {p}\nadv_interval_s = {a}\n"
            );
        }
        let err = NodeConfig::from_toml_str(&text, "<t>")
            .unwrap_err()
            .to_string();
        assert!(err.contains("table.rows[3]"), "{err}");
        assert!(err.contains("overlaps table.rows[2]"), "{err}");
    }

    #[test]
    fn v_on_must_sit_above_cutoff() {
        let err = NodeConfig::from_toml_str("v_on_v = 2.0\n", "<t>")
            .unwrap_err()
            .to_string();
        assert!(err.contains("v_on_v"), "{err}");
    }

    #[test]
    fn deployment_merges_node_defaults() {
        let text = r#"
            radio_range_m = 25.0

            [node_defaults]
            mode = "event_detection"
            [node_defaults.supercap]
            capacitance_f = 0.5

            [[nodes]]
            node_id = "a"
            position_m = [1.0, 0.0]

            [[nodes]]
            node_id = "b"
            [nodes.supercap]
            voltage_v = 3.0
        "#;
        let cfg = DeploymentConfig::from_toml_str(text, "<t>").unwrap();
        assert_eq!(cfg.nodes.len(), 2);
        assert!(cfg
            .nodes
            .iter()
            .all(|n| n.mode == ApplicationMode::EventDetection));
        assert_eq!(cfg.nodes[1].supercap.capacitance, 0.5);
        assert_eq!(cfg.nodes[1].supercap.voltage, 3.0);
        assert_eq!(cfg.radio_range, 25.0);
    }

    #[test]
    fn deployment_rejects_duplicates_and_bad_range() {
        let dup = "[[nodes]]\nnode_id = \"a\"\n[[nodes]]\nnode_id = \"a\"\n";
        let err = DeploymentConfig::from_toml_str(dup, "<t>")
            .unwrap_err()
            .to_string();
        assert!(err.contains("nodes[1].node_id"), "{err}");
        assert!(DeploymentConfig::from_toml_str("radio_range_m = 0.0\n", "<t>").is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(GridConfig::default().validate().is_ok());
        assert!(GridConfig::from_toml_str("capacitances_f = []\n", "<t>").is_err());
        assert!(GridConfig::from_toml_str("qos_states = [9]\n", "<t>").is_err());
        let g = GridConfig::from_toml_str(
            "capacitances_f = [1.0]\nqos_states = [7]\nlux = []\n",
            "<t>",
        )
        .unwrap();
        assert_eq!(g.v_start(), 3.6);
    }
}
