//! Voltage-bucketed QoS table and the adaptive power-management controller.
//!
//! The controller runs once per wakeup. It seeds its target state from the
//! table on the first run (and whenever the store is full), then moves the
//! target one state up or down for each of two signals: the light trend and
//! the voltage trend over the last five readings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, QosError};

/// Readings kept by each history buffer.
pub const HISTORY_LEN: usize = 5;

/// A reading within this distance of the controller's maximum voltage counts
/// as "full".
pub const V_MAX_TOLERANCE: f64 = 0.010;

/// Service level, 1 (slowest) to 7 (fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QosState(u8);

impl QosState {
    pub const MIN: QosState = QosState(1);
    pub const MAX: QosState = QosState(7);
    pub const COUNT: usize = 7;

    pub fn new(state: u8) -> Result<Self, QosError> {
        if (1..=7).contains(&state) {
            Ok(QosState(state))
        } else {
            Err(QosError::InvalidState(state))
        }
    }

    /// Clamps any integer into the valid range.
    pub fn clamped(state: i32) -> Self {
        QosState(state.clamp(1, 7) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index for histogram arrays.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn all() -> impl Iterator<Item = QosState> {
        (1..=7).map(QosState)
    }
}

impl TryFrom<u8> for QosState {
    type Error = QosError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        QosState::new(v)
    }
}

impl From<QosState> for u8 {
    fn from(s: QosState) -> u8 {
        s.0
    }
}

impl fmt::Display for QosState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Which interval column of the table drives the node.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ApplicationMode {
    /// Periodic environmental measurements sent to the base station.
    #[default]
    PeriodicSensing,
    /// Motion or door events; the interval is a notification hold-off.
    EventDetection,
    /// BLE beaconing.
    Advertising,
}

impl ApplicationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ApplicationMode::PeriodicSensing => "periodic_sensing",
            ApplicationMode::EventDetection => "event_detection",
            ApplicationMode::Advertising => "advertising",
        }
    }
}

impl fmt::Display for ApplicationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosRow {
    pub state: u8,
    #[serde(rename = "v_lo_v")]
    pub v_lo: f64,
    #[serde(rename = "v_hi_v")]
    pub v_hi: f64,
    #[serde(rename = "sense_interval_s")]
    pub sense_interval: f64,
    #[serde(rename = "pir_interval_s")]
    pub pir_interval: f64,
    #[serde(rename = "adv_interval_s")]
    pub adv_interval: f64,
}

impl QosRow {
    const fn new(state: u8, v_lo: f64, v_hi: f64, sense: f64, pir: f64, adv: f64) -> Self {
        QosRow {
            state,
            v_lo,
            v_hi,
            sense_interval: sense,
            pir_interval: pir,
            adv_interval: adv,
        }
    }

    pub fn interval(&self, mode: ApplicationMode) -> f64 {
        match mode {
            ApplicationMode::PeriodicSensing => self.sense_interval,
            ApplicationMode::EventDetection => self.pir_interval,
            ApplicationMode::Advertising => self.adv_interval,
        }
    }
}

/// Default table, highest state first.
const DEFAULT_ROWS: [QosRow; 7] = [
    QosRow::new(7, 3.4, 3.6, 20.0, 10.0, 0.1),
    QosRow::new(6, 3.2, 3.4, 40.0, 20.0, 0.2),
    QosRow::new(5, 3.0, 3.2, 60.0, 30.0, 0.4),
    QosRow::new(4, 2.8, 3.0, 120.0, 60.0, 0.64),
    QosRow::new(3, 2.6, 2.8, 240.0, 120.0, 0.9),
    QosRow::new(2, 2.4, 2.6, 300.0, 300.0, 2.0),
    QosRow::new(1, 2.1, 2.4, 600.0, 600.0, 5.0),
];

/// Lower and upper voltage limits every table must span.
pub const TABLE_V_MIN: f64 = 2.1;
pub const TABLE_V_MAX: f64 = 3.6;

/// Seven voltage buckets, each with a sensing period, an event notification
/// hold-off and an advertising interval.
///
/// Buckets are half-open `[v_lo, v_hi)` so a shared edge belongs to the
/// higher state; the top bucket also includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct QosTable {
    /// Indexed by `state - 1`.
    rows: [QosRow; 7],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    rows: Vec<QosRow>,
}

impl TryFrom<RawTable> for QosTable {
    type Error = ConfigError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        QosTable::from_rows(raw.rows)
    }
}

impl From<QosTable> for RawTable {
    fn from(t: QosTable) -> Self {
        RawTable {
            rows: t.rows.iter().rev().copied().collect(),
        }
    }
}

impl Default for QosTable {
    fn default() -> Self {
        let mut rows = DEFAULT_ROWS;
        rows.reverse();
        QosTable { rows }
    }
}

impl QosTable {
    /// Builds a table from rows in any order, enforcing every table invariant.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
    pub fn from_rows(rows: Vec<QosRow>) -> Result<Self, ConfigError> {
        if rows.len() != 7 {
            return Err(ConfigError::invalid(
                "table.rows",
                format!("expected 7 rows, found {}", rows.len()),
            ));
        }
        let mut slots: [Option<(usize, QosRow)>; 7] = [None; 7];
        for (i, row) in rows.iter().enumerate() {
            let field = format!("table.rows[{i}]");
            if !(1..=7).contains(&row.state) {
                return Err(ConfigError::invalid(
                    format!("{field}.state"),
                    format!("{} is outside 1..=7", row.state),
                ));
            }
            let slot = &mut slots[usize::from(row.state - 1)];
            if let Some((j, _)) = slot {
                return Err(ConfigError::invalid(
                    format!("{field}.state"),
                    format!("state {} already defined by table.rows[{j}]", row.state),
                ));
            }
            for (name, v) in [
                ("sense_interval_s", row.sense_interval),
                ("pir_interval_s", row.pir_interval),
                ("adv_interval_s", row.adv_interval),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(ConfigError::invalid(
                        format!("{field}.{name}"),
                        format!("{v} must be positive"),
                    ));
                }
            }
            if !(row.v_lo < row.v_hi) {
                return Err(ConfigError::invalid(
                    format!("{field}.v_lo_v"),
                    format!("bucket [{}, {}] is empty or inverted", row.v_lo, row.v_hi),
                ));
            }
            *slot = Some((i, *row));
        }
        let ordered: Vec<(usize, QosRow)> = slots.iter().map(|s| s.unwrap()).collect();

        let (_, bottom) = ordered[0];
        let (top_pos, top) = ordered[6];
        if bottom.v_lo != TABLE_V_MIN {
            return Err(ConfigError::invalid(
                format!("table.rows[{}].v_lo_v", ordered[0].0),
                format!(
                    "lowest bucket must start at {TABLE_V_MIN} V, got {}",
                    bottom.v_lo
                ),
            ));
        }
        if top.v_hi != TABLE_V_MAX {
            return Err(ConfigError::invalid(
                format!("table.rows[{top_pos}].v_hi_v"),
                format!(
                    "highest bucket must end at {TABLE_V_MAX} V, got {}",
                    top.v_hi
                ),
            ));
        }
        for pair in ordered.windows(2) {
            let (lo_pos, lo) = pair[0];
            let (hi_pos, hi) = pair[1];
            if lo.v_hi > hi.v_lo {
                return Err(ConfigError::invalid(
                    format!("table.rows[{lo_pos}]"),
                    format!(
                        "bucket of state {} [{}, {}] overlaps table.rows[{hi_pos}] (state {}) [{}, {}]",
                        lo.state, lo.v_lo, lo.v_hi, hi.state, hi.v_lo, hi.v_hi
                    ),
                ));
            }
            if lo.v_hi < hi.v_lo {
                return Err(ConfigError::invalid(
                    format!("table.rows[{lo_pos}]"),
                    format!(
                        "gap between state {} (ends {} V) and table.rows[{hi_pos}] (state {}, starts {} V)",
                        lo.state, lo.v_hi, hi.state, hi.v_lo
                    ),
                ));
            }
            for mode in [
                ApplicationMode::PeriodicSensing,
                ApplicationMode::EventDetection,
                ApplicationMode::Advertising,
            ] {
                if !(hi.interval(mode) < lo.interval(mode)) {
                    return Err(ConfigError::invalid(
                        format!("table.rows[{hi_pos}]"),
                        format!(
                            "{mode} interval of state {} ({} s) must be shorter than state {} ({} s)",
                            hi.state,
                            hi.interval(mode),
                            lo.state,
                            lo.interval(mode)
                        ),
                    ));
                }
            }
        }
        let mut out = DEFAULT_ROWS;
        for (slot, (_, row)) in out.iter_mut().zip(ordered) {
            *slot = row;
        }
        Ok(QosTable { rows: out })
    }

    /// Rows from state 1 to state 7.
    pub fn rows(&self) -> &[QosRow; 7] {
        &self.rows
    }

    pub fn row(&self, state: QosState) -> &QosRow {
        &self.rows[state.index()]
    }

    pub fn v_min(&self) -> f64 {
        self.rows[0].v_lo
    }

    pub fn v_max(&self) -> f64 {
        self.rows[6].v_hi
    }

    pub fn lookup_state(&self, volt: f64) -> Result<QosState, QosError> {
        let top = &self.rows[6];
        if volt == top.v_hi {
            return Ok(QosState::MAX);
        }
        self.rows
            .iter()
            .position(|r| r.v_lo <= volt && volt < r.v_hi)
            .map(|i| QosState(i as u8 + 1))
            .ok_or(QosError::VoltageOutOfRange {
                volt,
                lo: self.v_min(),
                hi: self.v_max(),
            })
    }

    pub fn interval_for(&self, state: QosState, mode: ApplicationMode) -> f64 {
        self.row(state).interval(mode)
    }
}

/// Least-squares slope of the readings against their index.
pub fn trend(buffer: &[f64; HISTORY_LEN]) -> f64 {
    let n = HISTORY_LEN as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = buffer.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in buffer.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Fixed-length history, oldest reading first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct History([f64; HISTORY_LEN]);

impl History {
    pub fn push(&mut self, reading: f64) {
        self.0.rotate_left(1);
        self.0[HISTORY_LEN - 1] = reading;
    }

    pub fn readings(&self) -> &[f64; HISTORY_LEN] {
        &self.0
    }

    pub fn trend(&self) -> f64 {
        trend(&self.0)
    }
}

/// What happened inside one controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDetail {
    /// Target re-seeded from the table, if the seed rule fired.
    pub seeded: Option<QosState>,
    /// Target before the two trend rules.
    pub base: QosState,
    pub light_delta: i32,
    pub volt_delta: i32,
    /// Target after both rules, before clamping.
    pub unclamped: i32,
    pub qos: QosState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub light_buf: History,
    pub volt_buf: History,
    /// Number of table seeds so far; zero means the next step seeds.
    pub index: u64,
    pub qos: QosState,
    pub next_qos: QosState,
    /// Voltage treated as "full".
    pub v_max: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState::new(TABLE_V_MAX)
    }
}

impl ControllerState {
    pub fn new(v_max: f64) -> Self {
        ControllerState {
            light_buf: History::default(),
            volt_buf: History::default(),
            index: 0,
            qos: QosState::MIN,
            next_qos: QosState::MIN,
            v_max,
        }
    }

    /// Back to the initial state, keeping `v_max`. Used after a brown-out.
    pub fn reset(&self) -> Self {
        ControllerState::new(self.v_max)
    }

    pub fn is_at_max(&self, volt: f64) -> bool {
        volt >= self.v_max - V_MAX_TOLERANCE
    }

    /// Runs one controller iteration for a fresh voltage and light reading.
    ///
    /// Fails only when the voltage is below the table's lowest bucket, which
    /// means the node should already be dead. Readings above `v_max` are
    /// treated as `v_max`.
    pub fn step(
        &self,
        volt: f64,
        light: f64,
        table: &QosTable,
    ) -> Result<(ControllerState, QosState), QosError> {
        self.step_detailed(volt, light, table)
            .map(|(next, detail)| (next, detail.qos))
    }

    pub fn step_detailed(
        &self,
        volt: f64,
        light: f64,
        table: &QosTable,
    ) -> Result<(ControllerState, StepDetail), QosError> {
        let mut next = *self;
        let at_max = self.is_at_max(volt);

        let mut seeded = None;
        if next.index == 0 || at_max {
            let state = table.lookup_state(volt.min(table.v_max()))?;
            next.next_qos = state;
            next.index = next.index.saturating_add(1);
            seeded = Some(state);
        }
        next.light_buf.push(light);
        next.volt_buf.push(volt);

        let light_delta = if light == 0.0 || next.light_buf.trend() < 0.0 {
            -1
        } else {
            1
        };
        let volt_delta = if next.volt_buf.trend() <= 0.0 && !at_max {
            -1
        } else {
            1
        };
        let base = next.next_qos;
        let unclamped = i32::from(base.get()) + light_delta + volt_delta;
        next.next_qos = QosState::clamped(unclamped);
        next.qos = next.next_qos;

        let detail = StepDetail {
            seeded,
            base,
            light_delta,
            volt_delta,
            unclamped,
            qos: next.qos,
        };
        Ok((next, detail))
    }
}
