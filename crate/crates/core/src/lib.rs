//! Simulation and control library for battery-free sensor nodes that run
//! from an indoor photovoltaic panel and a supercapacitor.
//!
//! The crate is organised bottom-up:
//!
//! - [`energy`]: supercapacitor storage, panel harvest, converter efficiency
//!   and load accounting.
//! - [`qos`]: the voltage-to-QoS lookup table and the adaptive controller that
//!   nudges the service level from light and voltage trends.
//! - [`trace`]: time-series inputs (light levels, motion/door events).
//! - [`sim`]: the per-node discrete-event engine.
//! - [`deployment`]: many nodes, a base station and aggregate metrics.
//! - [`explorer`]: closed-form steady-state analysis and parameter sweeps.
//! - [`config`]: TOML configuration loading and validation.

pub mod config;
pub mod deployment;
pub mod energy;
pub mod error;
pub mod explorer;
pub mod qos;
pub mod sim;
pub mod trace;

pub use config::{DeploymentConfig, GridConfig, NodeConfig};
pub use deployment::{link_delivery, run_deployment, DeploymentReport, Metrics};
pub use energy::{ConverterModel, HarvesterModel, LoadModel, SupercapState};
pub use error::{ConfigError, TraceError};
pub use explorer::{min_lux_for_perpetual, steady_state_power, sweep};
pub use qos::{ApplicationMode, ControllerState, QosState, QosTable};
pub use sim::{run_node, NodeLog, Packet, Recording};
pub use trace::Trace;
