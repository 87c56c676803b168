//! Physical energy models: supercapacitor storage, photovoltaic harvest,
//! the two-stage power converter and the node's electrical load.
//!
//! All state transitions here are pure functions on small `Copy` values.
//! Energies are joules, powers watts, voltages volts, times seconds.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Energy store. Stored energy is always `½·C·V²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupercapState {
    #[serde(rename = "capacitance_f")]
    pub capacitance: f64,
    /// Terminal voltage; at load time this is the initial voltage.
    #[serde(rename = "voltage_v", default = "defaults::initial_voltage")]
    pub voltage: f64,
    #[serde(rename = "v_rated_v", default = "defaults::v_rated")]
    pub v_rated: f64,
    /// Node death threshold.
    #[serde(rename = "v_cutoff_v", default = "defaults::v_cutoff")]
    pub v_cutoff: f64,
    /// Self-discharge, drawn directly from the store.
    #[serde(rename = "leak_current_a", default)]
    pub leak_current: f64,
}

impl Default for SupercapState {
    fn default() -> Self {
        SupercapState {
            capacitance: 1.0,
            voltage: defaults::initial_voltage(),
            v_rated: defaults::v_rated(),
            v_cutoff: defaults::v_cutoff(),
            leak_current: 0.0,
        }
    }
}

impl SupercapState {
    pub fn with_voltage(self, voltage: f64) -> Self {
        SupercapState { voltage, ..self }
    }

    pub fn stored_energy(&self) -> f64 {
        stored_energy(self)
    }

    /// Energy held at voltage `v` by this capacitor.
    pub fn energy_at(&self, v: f64) -> f64 {
        0.5 * self.capacitance * v * v
    }

    /// Inverse of [`energy_at`](Self::energy_at).
    pub fn voltage_for(&self, energy: f64) -> f64 {
        (2.0 * energy.max(0.0) / self.capacitance).sqrt()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("capacitance_f", self.capacitance)?;
        positive("v_rated_v", self.v_rated)?;
        non_negative("v_cutoff_v", self.v_cutoff)?;
        non_negative("leak_current_a", self.leak_current)?;
        if !(self.voltage.is_finite() && (0.0..=self.v_rated).contains(&self.voltage)) {
            return Err(ConfigError::invalid(
                "voltage_v",
                format!(
                    "{} is outside [0, v_rated = {}]",
                    self.voltage, self.v_rated
                ),
            ));
        }
        if self.v_cutoff >= self.v_rated {
            return Err(ConfigError::invalid(
                "v_cutoff_v",
                format!("{} must be below v_rated = {}", self.v_cutoff, self.v_rated),
            ));
        }
        Ok(())
    }
}

/// How panel power scales away from the reference operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LuxScaling {
    /// Power proportional to illuminance.
    #[default]
    Linear,
}

/// Indoor photovoltaic panel characterised by a single operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvesterModel {
    #[serde(rename = "i_ref_a")]
    pub i_ref: f64,
    #[serde(rename = "v_ref_v")]
    pub v_ref: f64,
    pub lux_ref: f64,
    pub scaling: LuxScaling,
}

impl Default for HarvesterModel {
    fn default() -> Self {
        HarvesterModel {
            i_ref: 46.5e-6,
            v_ref: 1.5,
            lux_ref: 300.0,
            scaling: LuxScaling::Linear,
        }
    }
}

impl HarvesterModel {
    /// Panel output at the reference illuminance.
    pub fn reference_power(&self) -> f64 {
        self.i_ref * self.v_ref
    }

    pub fn power(&self, lux: f64) -> f64 {
        harvest_power(self, lux)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("i_ref_a", self.i_ref)?;
        positive("v_ref_v", self.v_ref)?;
        positive("lux_ref", self.lux_ref)
    }
}

/// Energy-management board: a boost charger on the input side that is only
/// efficient above `v_boost_min`, and a buck regulator feeding the load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterModel {
    #[serde(rename = "v_boost_min_v")]
    pub v_boost_min: f64,
    pub eta_boost: f64,
    /// Input efficiency in the cold-start regime.
    pub eta_cold: f64,
    pub eta_buck: f64,
    #[serde(rename = "i_out_max_a")]
    pub i_out_max: f64,
    /// Regulated load rail.
    #[serde(rename = "v_out_v")]
    pub v_out: f64,
}

impl Default for ConverterModel {
    fn default() -> Self {
        ConverterModel {
            v_boost_min: 1.8,
            eta_boost: 0.80,
            eta_cold: 0.05,
            eta_buck: 0.90,
            i_out_max: 0.110,
            v_out: 3.0,
        }
    }
}

impl ConverterModel {
    /// A lossless converter, handy for closed-form checks.
    pub fn ideal() -> Self {
        ConverterModel {
            eta_boost: 1.0,
            eta_cold: 1.0,
            eta_buck: 1.0,
            ..ConverterModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative("v_boost_min_v", self.v_boost_min)?;
        for (field, eta) in [
            ("eta_boost", self.eta_boost),
            ("eta_cold", self.eta_cold),
            ("eta_buck", self.eta_buck),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(ConfigError::invalid(
                    field,
                    format!("{eta} is outside (0, 1]"),
                ));
            }
        }
        // Equality is accepted so a lossless converter can be configured.
        if self.eta_cold > self.eta_boost {
            return Err(ConfigError::invalid(
                "eta_cold",
                format!(
                    "{} must not exceed eta_boost = {}",
                    self.eta_cold, self.eta_boost
                ),
            ));
        }
        positive("i_out_max_a", self.i_out_max)?;
        positive("v_out_v", self.v_out)
    }
}

/// Electrical load of the node.
///
/// Standby is a current on the regulated rail; every discrete action is a
/// lump of load-side energy paid at the instant it happens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadModel {
    #[serde(rename = "i_standby_a")]
    pub i_standby: f64,
    /// Periodic sense-and-transmit wakeup. Also paid for each transmitted
    /// event notification.
    #[serde(rename = "e_sense_tx_j")]
    pub e_sense_tx: f64,
    #[serde(rename = "e_event_detect_j")]
    pub e_event_detect: f64,
    #[serde(rename = "e_advertise_j")]
    pub e_advertise: f64,
    /// Extra cost of one controller evaluation, paid on every wakeup.
    #[serde(rename = "e_controller_step_j")]
    pub e_controller_step: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        LoadModel {
            i_standby: 1e-6,
            e_sense_tx: 50e-6,
            e_event_detect: 10e-6,
            e_advertise: 15e-6,
            e_controller_step: 0.0,
        }
    }
}

impl LoadModel {
    /// No action costs, standby only.
    pub fn standby_only(i_standby: f64) -> Self {
        LoadModel {
            i_standby,
            e_sense_tx: 0.0,
            e_event_detect: 0.0,
            e_advertise: 0.0,
            e_controller_step: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative("i_standby_a", self.i_standby)?;
        non_negative("e_sense_tx_j", self.e_sense_tx)?;
        non_negative("e_event_detect_j", self.e_event_detect)?;
        non_negative("e_advertise_j", self.e_advertise)?;
        non_negative("e_controller_step_j", self.e_controller_step)
    }
}

/// Outcome of drawing an action's energy from the store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Discharge {
    Alive(SupercapState),
    /// The store hit `v_cutoff` before the action completed. The returned
    /// state sits at `v_cutoff`.
    Dead(SupercapState),
}

impl Discharge {
    pub fn state(&self) -> SupercapState {
        match *self {
            Discharge::Alive(s) | Discharge::Dead(s) => s,
        }
    }

    pub fn is_dead(&self) -> bool {
        matches!(self, Discharge::Dead(_))
    }
}

pub fn stored_energy(cap: &SupercapState) -> f64 {
    cap.energy_at(cap.voltage)
}

/// Panel output power before converter losses.
///
/// # Panics
///
/// Panics on negative or non-finite illuminance.
pub fn harvest_power(model: &HarvesterModel, lux: f64) -> f64 {
    assert!(
        lux >= 0.0 && lux.is_finite(),
        "illuminance must be finite and non-negative, got {lux}"
    );
    match model.scaling {
        LuxScaling::Linear => model.reference_power() * lux / model.lux_ref,
    }
}

/// Input-path efficiency at the given storage voltage. The threshold itself
/// counts as efficient.
pub fn input_efficiency(conv: &ConverterModel, v_storage: f64) -> f64 {
    if v_storage >= conv.v_boost_min {
        conv.eta_boost
    } else {
        conv.eta_cold
    }
}

/// Charges the store with constant panel power for `dt` seconds. The input
/// efficiency is taken at the starting voltage, so `dt` should be short.
pub fn charge(cap: &SupercapState, p_panel: f64, dt: f64, conv: &ConverterModel) -> SupercapState {
    debug_assert!(dt > 0.0 && p_panel >= 0.0);
    let eta = input_efficiency(conv, cap.voltage);
    let v2 = cap.voltage * cap.voltage + 2.0 * eta * p_panel * dt / cap.capacitance;
    cap.with_voltage(v2.sqrt().min(cap.v_rated))
}

/// Draws `e_load` joules of load-side energy through the output regulator.
pub fn discharge(cap: &SupercapState, e_load: f64, conv: &ConverterModel) -> Discharge {
    debug_assert!(e_load >= 0.0);
    if e_load == 0.0 {
        return Discharge::Alive(*cap);
    }
    let v2 = cap.voltage * cap.voltage - 2.0 * e_load / (conv.eta_buck * cap.capacitance);
    if v2 < cap.v_cutoff * cap.v_cutoff {
        Discharge::Dead(cap.with_voltage(cap.v_cutoff.min(cap.voltage)))
    } else {
        Discharge::Alive(cap.with_voltage(v2.sqrt()))
    }
}

/// Standby draw seen by the store.
pub fn standby_power(load: &LoadModel, conv: &ConverterModel) -> f64 {
    load.i_standby * conv.v_out / conv.eta_buck
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("{v} must be positive")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            field,
            format!("{v} must be non-negative"),
        ))
    }
}

mod defaults {
    /// A freshly cold-started node sits at the recovery threshold.
    pub fn initial_voltage() -> f64 {
        2.4
    }
    pub fn v_rated() -> f64 {
        5.5
    }
    pub fn v_cutoff() -> f64 {
        2.1
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn cap(c: f64, v: f64) -> SupercapState {
        SupercapState {
            capacitance: c,
            voltage: v,
            ..SupercapState::default()
        }
    }

    #[test]
    fn stored_energy_examples() {
        assert_relative_eq!(stored_energy(&cap(1.0, 3.6)), 6.48, max_relative = 1e-12);
        assert_eq!(stored_energy(&cap(1.0, 0.0)), 0.0);
        assert_relative_eq!(stored_energy(&cap(1.0, 2.1)), 2.205, max_relative = 1e-12);
    }

    #[test]
    fn harvest_reference_point() {
        let h = HarvesterModel::default();
        assert_relative_eq!(harvest_power(&h, 300.0), 69.75e-6, max_relative = 1e-12);
        assert_eq!(harvest_power(&h, 0.0), 0.0);
        assert_relative_eq!(harvest_power(&h, 600.0), 139.5e-6, max_relative = 1e-12);
    }

    #[test]
    #[should_panic(expected = "non-negative")]
    fn harvest_rejects_negative_lux() {
        harvest_power(&HarvesterModel::default(), -1.0);
    }

    #[test]
    fn input_efficiency_threshold() {
        let c = ConverterModel::default();
        assert_eq!(input_efficiency(&c, 2.5), 0.80);
        assert_eq!(input_efficiency(&c, 1.0), 0.05);
        assert_eq!(input_efficiency(&c, 1.8), 0.80);
    }

    #[test]
    fn charge_examples() {
        let ideal = ConverterModel::ideal();
        let s = charge(&cap(1.0, 2.0), 1e-3, 1000.0, &ideal);
        assert_relative_eq!(s.voltage, 6f64.sqrt(), max_relative = 1e-12);

        let s0 = cap(1.0, 3.1);
        assert_eq!(charge(&s0, 0.0, 1e6, &ideal).voltage, 3.1);

        let s = charge(&cap(1.0, 5.49), 1.0, 1e6, &ideal);
        assert_eq!(s.voltage, 5.5);
    }

    #[test]
    fn charge_uses_cold_start_efficiency_below_threshold() {
        let conv = ConverterModel::default();
        let s = charge(&cap(1.0, 1.0), 1e-3, 100.0, &conv);
        let expected = (1.0 + 2.0 * 0.05 * 1e-3 * 100.0f64).sqrt();
        assert_relative_eq!(s.voltage, expected, max_relative = 1e-12);
    }

    #[test]
    fn discharge_examples() {
        let ideal = ConverterModel::ideal();
        match discharge(&cap(1.0, 3.6), 1.98, &ideal) {
            Discharge::Alive(s) => assert_relative_eq!(s.voltage, 3.0, max_relative = 1e-12),
            d => panic!("unexpected {d:?}"),
        }
        let d = discharge(&cap(1.0, 2.11), 1.0, &ideal);
        assert!(d.is_dead());
        assert_eq!(d.state().voltage, 2.1);

        let s = cap(1.0, 2.7);
        assert_eq!(discharge(&s, 0.0, &ideal), Discharge::Alive(s));
    }

    #[test]
    fn discharge_pays_regulator_losses() {
        let conv = ConverterModel {
            eta_buck: 0.5,
            ..ConverterModel::ideal()
        };
        let s = discharge(&cap(1.0, 3.6), 0.99, &conv).state();
        assert_relative_eq!(s.voltage, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn standby_power_examples() {
        let load = LoadModel::default();
        let ideal = ConverterModel::ideal();
        assert_relative_eq!(standby_power(&load, &ideal), 3e-6, max_relative = 1e-12);
        let c = ConverterModel {
            eta_buck: 0.9,
            ..ideal
        };
        assert_relative_eq!(standby_power(&load, &c), 3.0e-6 / 0.9, max_relative = 1e-12);
        assert_eq!(standby_power(&LoadModel::standby_only(0.0), &c), 0.0);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(cap(-1.0, 2.0).validate().is_err());
        assert!(cap(1.0, 6.0).validate().is_err());
        let inverted = SupercapState {
            v_cutoff: 5.6,
            ..SupercapState::default()
        };
        assert!(inverted.validate().is_err());
        let c = ConverterModel {
            eta_cold: 0.9,
            ..ConverterModel::default()
        };
        assert!(c.validate().is_err());
        assert!(ConverterModel::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn charge_then_discharge_round_trips(
            v0 in 2.1f64..5.0,
            c in 0.1f64..10.0,
            p in 0.0f64..1e-3,
            dt in 0.01f64..1.0,
        ) {
            let ideal = ConverterModel::ideal();
            let start = cap(c, v0);
            let charged = charge(&start, p, dt, &ideal);
            prop_assume!(charged.voltage < start.v_rated);
            let back = discharge(&charged, p * dt, &ideal).state();
            prop_assert!((back.voltage - v0).abs() <= 1e-9 * v0);
        }

        #[test]
        fn harvest_is_monotone(a in 0.0f64..5000.0, b in 0.0f64..5000.0) {
            let h = HarvesterModel::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(harvest_power(&h, lo) <= harvest_power(&h, hi));
            prop_assert!(harvest_power(&h, lo) >= 0.0);
        }

        #[test]
        fn charge_never_exceeds_rating(v0 in 0.0f64..5.5, p in 0.0f64..1.0, dt in 0.001f64..1e4) {
            let s = charge(&cap(1.0, v0), p, dt, &ConverterModel::default());
            prop_assert!(s.voltage <= s.v_rated);
            prop_assert!(s.voltage >= v0);
        }
    }
}
