//! Discrete-event simulation of one node.
//!
//! Between discrete events the store is integrated in steps of at most one
//! second with piecewise-constant light: harvest flows in through the input
//! converter, standby and leakage flow out. Discrete events (wakeups,
//! external events, death, recovery) are processed from a priority queue in
//! time order. Action energies are paid atomically at the event instant.
//!
//! Every joule is booked in an [`EnergyLedger`] so conservation can be
//! checked after any run.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ControlPolicy, NodeConfig};
use crate::energy::{self, SupercapState};
use crate::error::{SimError, TraceError};
use crate::qos::{ApplicationMode, ControllerState, QosState};
use crate::trace::Trace;

/// Longest continuous integration step.
pub const MAX_STEP_S: f64 = 1.0;

/// Resolution of the death/recovery crossing search.
pub const CROSSING_TOLERANCE_S: f64 = 1e-3;

const TEMPERATURE_C: f64 = 22.0;

/// Whether per-event records and packets are kept, or only the running
/// summary. Summaries are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Recording {
    #[default]
    Full,
    SummaryOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readings {
    pub lux: f64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
}

/// What a node sends to the base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub node_id: String,
    #[serde(rename = "timestamp_s")]
    pub timestamp: f64,
    pub readings: Readings,
    pub qos_state: QosState,
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Controller step plus the mode's periodic action.
    Wakeup,
    /// External event reported to the base station.
    Notify,
    /// External event held back by the notification hold-off.
    Suppressed,
    Death,
    Recovery,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Wakeup => "wakeup",
            Action::Notify => "notify",
            Action::Suppressed => "suppressed",
            Action::Death => "death",
            Action::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(rename = "time_s")]
    pub time: f64,
    /// Store voltage read at the start of the action.
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
    pub lux: f64,
    pub qos: QosState,
    pub action: Action,
    pub packets: u32,
    /// Storage-side energy drawn by the action.
    #[serde(rename = "energy_j")]
    pub energy: f64,
}

/// Running energy totals. All values are joules.
///
/// `final - initial = harvested - input_loss - consumed - output_loss - leaked - clipped`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_stored: f64,
    pub final_stored: f64,
    /// Panel output before the input converter.
    pub harvested: f64,
    pub input_loss: f64,
    /// Delivered to the load on the regulated rail.
    pub consumed: f64,
    pub output_loss: f64,
    pub leaked: f64,
    /// Harvest discarded because the store was at its rating.
    pub clipped: f64,
}

impl EnergyLedger {
    pub fn residual(&self) -> f64 {
        (self.final_stored - self.initial_stored)
            - (self.harvested
                - self.input_loss
                - self.consumed
                - self.output_loss
                - self.leaked
                - self.clipped)
    }

    pub fn throughput(&self) -> f64 {
        self.harvested + self.consumed + self.output_loss + self.leaked
    }

    /// Residual relative to throughput (or to stored energy for idle runs).
    pub fn relative_residual(&self) -> f64 {
        let scale = self
            .throughput()
            .max(self.initial_stored)
            .max(f64::MIN_POSITIVE);
        self.residual().abs() / scale
    }

    fn draw(&mut self, storage_side: f64, eta_buck: f64) {
        self.consumed += storage_side * eta_buck;
        self.output_loss += storage_side * (1.0 - eta_buck);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeSummary {
    #[serde(rename = "duration_s")]
    pub duration: f64,
    pub controller_steps: u64,
    /// Controller outputs per state, index 0 is state 1.
    pub qos_histogram: [u64; 7],
    pub packets_emitted: u64,
    pub dead_seconds: f64,
    pub deaths: u64,
    pub recoveries: u64,
    pub events_detected: u64,
    pub events_notified: u64,
    pub events_suppressed: u64,
    /// Events that arrived while the node was dead.
    pub events_missed: u64,
    /// Suppressed or energy-starved events never covered by a later notification.
    pub events_unreported: u64,
    pub latency_sum_s: f64,
    pub latency_max_s: f64,
    pub latency_count: u64,
    pub packet_gap_sum_s: f64,
    pub packet_gap_count: u64,
    pub last_packet_s: Option<f64>,
    pub alive_at_end: bool,
    pub final_voltage_v: f64,
}

impl NodeSummary {
    pub fn uptime_fraction(&self) -> f64 {
        if self.duration > 0.0 {
            (1.0 - self.dead_seconds / self.duration).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }

    pub fn mean_packet_interval(&self) -> Option<f64> {
        (self.packet_gap_count > 0).then(|| self.packet_gap_sum_s / self.packet_gap_count as f64)
    }

    pub fn mean_latency(&self) -> Option<f64> {
        (self.latency_count > 0).then(|| self.latency_sum_s / self.latency_count as f64)
    }

    pub(crate) fn record_packet(&mut self, t: f64) {
        self.packets_emitted += 1;
        if let Some(prev) = self.last_packet_s {
            self.packet_gap_sum_s += t - prev;
            self.packet_gap_count += 1;
        }
        self.last_packet_s = Some(t);
    }

    fn record_latency(&mut self, latency: f64) {
        self.latency_sum_s += latency;
        self.latency_max_s = self.latency_max_s.max(latency);
        self.latency_count += 1;
    }
}

/// Complete output of one node run.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLog {
    pub node_id: String,
    pub mode: ApplicationMode,
    pub position: [f64; 2],
    pub records: Vec<LogRecord>,
    pub packets: Vec<Packet>,
    pub ledger: EnergyLedger,
    pub summary: NodeSummary,
}

impl NodeLog {
    pub const CSV_HEADER: [&'static str; 7] = [
        "time_s",
        "node_id",
        "voltage_v",
        "lux",
        "qos",
        "action",
        "packets",
    ];

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.time.to_string(),
                self.node_id.clone(),
                r.voltage.to_string(),
                r.lux.to_string(),
                r.qos.to_string(),
                r.action.as_str().to_string(),
                r.packets.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Ledger and summary as a JSON document.
    pub fn ledger_json(&self) -> serde_json::Value {
        serde_json::json!({
            "node_id": self.node_id,
            "mode": self.mode,
            "ledger": self.ledger,
            "conservation_residual_j": self.ledger.residual(),
            "summary": self.summary,
            "uptime_fraction": self.summary.uptime_fraction(),
        })
    }
}

/// Where continuous integration stopped early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// Store fell to `v_cutoff` at this time.
    Death(f64),
    /// Dead store recharged to `v_on` at this time.
    Recovery(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Death,
    Recovery,
    External(f64),
    Wakeup { epoch: u64 },
    TraceSample,
    End,
}

impl EventKind {
    /// Tie-break order for simultaneous events.
    fn priority(&self) -> u8 {
        match self {
            EventKind::Death => 0,
            EventKind::Recovery => 1,
            EventKind::External(_) => 2,
            EventKind::Wakeup { .. } => 3,
            EventKind::TraceSample => 4,
            EventKind::End => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    seq: u64,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Reverse(SimEvent {
            time,
            kind,
            seq: self.seq,
        }));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WakeupOutcome {
    pub qos: QosState,
    pub packet: Option<Packet>,
    /// `None` when the action killed the node.
    pub next_wakeup: Option<f64>,
}

/// State of one node while it is being simulated.
pub struct NodeSim<'a> {
    cfg: &'a NodeConfig,
    light: &'a Trace,
    recording: Recording,
    rng: ChaCha8Rng,
    time: f64,
    cap: SupercapState,
    alive: bool,
    ctrl: ControllerState,
    qos: QosState,
    epoch: u64,
    standby_power: f64,
    dead_since: Option<f64>,
    last_notification: Option<f64>,
    pending_events: Vec<f64>,
    ledger: EnergyLedger,
    summary: NodeSummary,
    records: Vec<LogRecord>,
    packets: Vec<Packet>,
}

impl<'a> NodeSim<'a> {
    /// The node starts alive if its initial voltage is at or above cutoff.
    pub fn new(cfg: &'a NodeConfig, light: &'a Trace, seed: u64, recording: Recording) -> Self {
        let cap = cfg.supercap;
        let alive = cap.voltage >= cap.v_cutoff;
        let ctrl = ControllerState::new(cfg.table.v_max());
        let qos = match cfg.controller {
            ControlPolicy::Adaptive => ctrl.qos,
            ControlPolicy::Pinned(s) => s,
        };
        NodeSim {
            cfg,
            light,
            recording,
            rng: ChaCha8Rng::seed_from_u64(seed),
            time: 0.0,
            cap,
            alive,
            ctrl,
            qos,
            epoch: 0,
            standby_power: energy::standby_power(&cfg.load, &cfg.converter),
            dead_since: (!alive).then_some(0.0),
            last_notification: None,
            pending_events: Vec::new(),
            ledger: EnergyLedger {
                initial_stored: cap.stored_energy(),
                ..EnergyLedger::default()
            },
            summary: NodeSummary::default(),
            records: Vec::new(),
            packets: Vec::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn voltage(&self) -> f64 {
        self.cap.voltage
    }

    pub fn supercap(&self) -> &SupercapState {
        &self.cap
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn qos(&self) -> QosState {
        self.qos
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctrl
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn ledger(&self) -> EnergyLedger {
        EnergyLedger {
            final_stored: self.cap.stored_energy(),
            ..self.ledger
        }
    }

    pub fn summary(&self) -> &NodeSummary {
        &self.summary
    }

    /// Integrates harvest, standby and leakage from `t0` to `t1`.
    ///
    /// Stops early and reports the crossing when a live node falls to
    /// `v_cutoff` or a dead node recharges to `v_on`; the caller is expected
    /// to dispatch the matching death or recovery handler.
    pub fn integrate_interval(&mut self, t0: f64, t1: f64) -> Option<Crossing> {
        debug_assert!(t0 <= t1);
        let cfg = self.cfg;
        let c = self.cap.capacitance;
        let e_rated = self.cap.energy_at(self.cap.v_rated);
        let e_cut = self.cap.energy_at(self.cap.v_cutoff);
        let e_on = self.cap.energy_at(cfg.v_on);
        let mut t = t0;
        self.time = t0;

        while t < t1 {
            let lux = self.light.value_at(t);
            let mut end = (t + MAX_STEP_S).min(t1);
            if let Some(change) = self.light.next_change_after(t) {
                end = end.min(change);
            }
            let dt = end - t;
            let v = self.cap.voltage;
            let p_panel = energy::harvest_power(&cfg.harvester, lux);
            let eta = energy::input_efficiency(&cfg.converter, v);
            let p_standby = if self.alive { self.standby_power } else { 0.0 };
            let p_leak = self.cap.leak_current * v;
            let p_net = eta * p_panel - p_standby - p_leak;
            let e0 = self.cap.energy_at(v);
            let e1 = e0 + p_net * dt;

            let (span, crossing) = if self.alive && e1 < e_cut && p_net < 0.0 {
                // Last instant at which the node is still at or above cutoff.
                let tc = bisect(dt, |tau| e0 + p_net * tau >= e_cut);
                (tc.0, Some(Crossing::Death(t + tc.0)))
            } else if !self.alive && (e0 >= e_on || (e1 >= e_on && p_net > 0.0)) {
                // First instant at which the store has reached v_on.
                let tc = bisect(dt, |tau| e0 + p_net * tau < e_on);
                (tc.1, Some(Crossing::Recovery(t + tc.1)))
            } else {
                (dt, None)
            };

            let mut e_new = e0 + p_net * span;
            let mut leaked = p_leak * span;
            let mut clipped = 0.0;
            if e_new > e_rated {
                clipped = e_new - e_rated;
                e_new = e_rated;
            } else if e_new < 0.0 {
                leaked += e_new;
                e_new = 0.0;
            }
            let l = &mut self.ledger;
            l.harvested += p_panel * span;
            l.input_loss += (1.0 - eta) * p_panel * span;
            l.draw(p_standby * span, cfg.converter.eta_buck);
            l.leaked += leaked;
            l.clipped += clipped;
            self.cap.voltage = (2.0 * e_new / c).sqrt();

            t += span;
            self.time = t;
            if crossing.is_some() {
                return crossing;
            }
        }
        self.time = t1;
        None
    }

    /// Draws load-side energy; returns false if the node browned out.
    fn pay(&mut self, e_load: f64) -> (f64, bool) {
        let before = self.cap.stored_energy();
        let outcome = energy::discharge(&self.cap, e_load, &self.cfg.converter);
        self.cap = outcome.state();
        let drawn = before - self.cap.stored_energy();
        self.ledger.draw(drawn, self.cfg.converter.eta_buck);
        (drawn, !outcome.is_dead())
    }

    fn record(&mut self, r: LogRecord) {
        if self.recording == Recording::Full {
            self.records.push(r);
        }
    }

    fn make_packet(&mut self, t: f64, lux: f64, voltage: f64) -> Packet {
        let humidity_pct = self.rng.random_range(35.0..45.0);
        let packet = Packet {
            node_id: self.cfg.node_id.clone(),
            timestamp: t,
            readings: Readings {
                lux,
                temperature_c: TEMPERATURE_C,
                humidity_pct,
            },
            qos_state: self.qos,
            voltage,
        };
        self.summary.record_packet(t);
        if self.recording == Recording::Full {
            self.packets.push(packet.clone());
        }
        packet
    }

    /// Reads voltage and light, picks the QoS state, pays the periodic action
    /// and emits a packet (except in event-detection mode, where packets are
    /// only sent for events).
    pub fn handle_wakeup(&mut self, t: f64) -> WakeupOutcome {
        assert!(self.alive, "wakeup on a dead node at t = {t}");
        let cfg = self.cfg;
        let volt = self.cap.voltage;
        let lux = self.light.value_at(t);
        self.qos = match cfg.controller {
            ControlPolicy::Adaptive => {
                // Validation keeps live voltages inside the table.
                let reading = volt.max(cfg.table.v_min());
                let (next, qos) = self
                    .ctrl
                    .step(reading, lux, &cfg.table)
                    .expect("reading clamped into table range");
                self.ctrl = next;
                qos
            }
            ControlPolicy::Pinned(s) => s,
        };
        self.summary.controller_steps += 1;
        self.summary.qos_histogram[self.qos.index()] += 1;

        let (action_energy, sends) = match cfg.mode {
            ApplicationMode::PeriodicSensing => (cfg.load.e_sense_tx, true),
            ApplicationMode::Advertising => (cfg.load.e_advertise, true),
            ApplicationMode::EventDetection => (0.0, false),
        };
        let (drawn, alive) = self.pay(cfg.load.e_controller_step + action_energy);
        let packet = (alive && sends).then(|| self.make_packet(t, lux, volt));
        self.record(LogRecord {
            time: t,
            voltage: volt,
            lux,
            qos: self.qos,
            action: Action::Wakeup,
            packets: u32::from(packet.is_some()),
            energy: drawn,
        });
        let next_wakeup = alive.then(|| t + cfg.table.interval_for(self.qos, cfg.mode));
        WakeupOutcome {
            qos: self.qos,
            packet,
            next_wakeup,
        }
    }

    /// Handles a motion/door event. Returns the notification packet, if one
    /// was sent, and whether the node survived.
    ///
    /// The event-detection interval of the current QoS state is a minimum
    /// spacing between notifications. Events inside the hold-off are
    /// suppressed and counted against the next notification's latency.
    pub fn handle_external_event(&mut self, t: f64, _payload: f64) -> (Option<Packet>, bool) {
        if !self.alive {
            self.summary.events_missed += 1;
            return (None, false);
        }
        let cfg = self.cfg;
        let volt = self.cap.voltage;
        let lux = self.light.value_at(t);
        self.summary.events_detected += 1;

        let (mut drawn, mut alive) = self.pay(cfg.load.e_event_detect);
        let hold_off = cfg
            .table
            .interval_for(self.qos, ApplicationMode::EventDetection);
        let due = self
            .last_notification
            .is_none_or(|last| t - last >= hold_off);

        let mut packet = None;
        let action = if !alive {
            self.pending_events.push(t);
            Action::Notify
        } else if due {
            let (tx, ok) = self.pay(cfg.load.e_sense_tx);
            drawn += tx;
            alive = ok;
            if ok {
                packet = Some(self.make_packet(t, lux, volt));
                self.last_notification = Some(t);
                self.summary.events_notified += 1;
                self.summary.record_latency(0.0);
                for te in std::mem::take(&mut self.pending_events) {
                    self.summary.record_latency(t - te);
                }
            } else {
                self.pending_events.push(t);
            }
            Action::Notify
        } else {
            self.summary.events_suppressed += 1;
            self.pending_events.push(t);
            Action::Suppressed
        };
        self.record(LogRecord {
            time: t,
            voltage: volt,
            lux,
            qos: self.qos,
            action,
            packets: u32::from(packet.is_some()),
            energy: drawn,
        });
        (packet, alive)
    }

    /// Stops all node activity; only harvesting continues.
    pub fn handle_death(&mut self, t: f64) {
        if !self.alive {
            return;
        }
        self.alive = false;
        self.epoch += 1;
        self.dead_since = Some(t);
        self.summary.deaths += 1;
        let lux = self.light.value_at(t);
        self.record(LogRecord {
            time: t,
            voltage: self.cap.voltage,
            lux,
            qos: self.qos,
            action: Action::Death,
            packets: 0,
            energy: 0.0,
        });
    }

    /// Restarts the node with a fresh controller. Returns the time of the
    /// immediate wakeup to schedule.
    pub fn handle_recovery(&mut self, t: f64) -> f64 {
        if let Some(since) = self.dead_since.take() {
            self.summary.dead_seconds += t - since;
        }
        self.alive = true;
        self.epoch += 1;
        self.ctrl = self.ctrl.reset();
        self.summary.recoveries += 1;
        let lux = self.light.value_at(t);
        self.record(LogRecord {
            time: t,
            voltage: self.cap.voltage,
            lux,
            qos: self.qos,
            action: Action::Recovery,
            packets: 0,
            energy: 0.0,
        });
        t
    }

    pub fn finish(mut self, duration: f64) -> NodeLog {
        if let Some(since) = self.dead_since.take() {
            self.summary.dead_seconds += duration - since;
        }
        self.summary.duration = duration;
        self.summary.events_unreported += self.pending_events.len() as u64;
        self.summary.alive_at_end = self.alive;
        self.summary.final_voltage_v = self.cap.voltage;
        let ledger = self.ledger();
        NodeLog {
            node_id: self.cfg.node_id.clone(),
            mode: self.cfg.mode,
            position: self.cfg.position,
            records: self.records,
            packets: self.packets,
            ledger,
            summary: self.summary,
        }
    }
}

/// Finds the boundary of a predicate that holds at 0 and fails at `span`.
/// Returns `(last_true, first_false)` bracketing the crossing.
fn bisect(span: f64, holds: impl Fn(f64) -> bool) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, span);
    if !holds(lo) {
        return (lo, lo);
    }
    while hi - lo > CROSSING_TOLERANCE_S / 2.0 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Simulates one node for `duration` seconds.
///
/// Light is sample-and-hold and must start at or before t = 0. Event samples
/// are only consumed in event-detection mode.
pub fn run_node(
    config: &NodeConfig,
    light: &Trace,
    events: &Trace,
    duration: f64,
    seed: u64,
) -> Result<NodeLog, SimError> {
    run_node_with(config, light, events, duration, seed, Recording::Full)
}

pub fn run_node_with(
    config: &NodeConfig,
    light: &Trace,
    events: &Trace,
    duration: f64,
    seed: u64,
    recording: Recording,
) -> Result<NodeLog, SimError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::Duration(duration));
    }
    config.validate()?;
    let trace_err = |source| SimError::Trace {
        node: config.node_id.clone(),
        source,
    };
    let first = light
        .samples()
        .first()
        .ok_or(TraceError::Empty)
        .map_err(trace_err)?;
    if first.time > 0.0 {
        return Err(trace_err(TraceError::StartsLate(first.time)));
    }
    light.check_light().map_err(trace_err)?;

    let mut sim = NodeSim::new(config, light, seed, recording);
    let mut queue = EventQueue::default();
    if sim.is_alive() {
        queue.push(0.0, EventKind::Wakeup { epoch: sim.epoch() });
    }
    if config.mode == ApplicationMode::EventDetection {
        for s in events.window(0.0, duration) {
            queue.push(s.time, EventKind::External(s.value));
        }
    }
    for s in light.window(0.0, duration) {
        if s.time > 0.0 {
            queue.push(s.time, EventKind::TraceSample);
        }
    }
    queue.push(duration, EventKind::End);

    while let Some(event) = queue.pop() {
        if event.time > sim.time() {
            match sim.integrate_interval(sim.time(), event.time) {
                Some(Crossing::Death(tc)) => {
                    queue.push(tc, EventKind::Death);
                    queue.push(event.time, event.kind);
                    continue;
                }
                Some(Crossing::Recovery(tc)) => {
                    queue.push(tc, EventKind::Recovery);
                    queue.push(event.time, event.kind);
                    continue;
                }
                None => {}
            }
        }
        let t = event.time;
        match event.kind {
            EventKind::End => break,
            _ if t >= duration => {}
            EventKind::Death => sim.handle_death(t),
            EventKind::Recovery => {
                let wake = sim.handle_recovery(t);
                queue.push(wake, EventKind::Wakeup { epoch: sim.epoch() });
            }
            EventKind::Wakeup { epoch } => {
                if epoch != sim.epoch() || !sim.is_alive() {
                    continue;
                }
                let out = sim.handle_wakeup(t);
                match out.next_wakeup {
                    Some(next) => queue.push(next, EventKind::Wakeup { epoch }),
                    None => queue.push(t, EventKind::Death),
                }
            }
            EventKind::External(payload) => {
                let was_alive = sim.is_alive();
                let (_, alive) = sim.handle_external_event(t, payload);
                if was_alive && !alive {
                    queue.push(t, EventKind::Death);
                }
            }
            EventKind::TraceSample => {}
        }
    }
    Ok(sim.finish(duration))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::energy::{ConverterModel, LoadModel};

    fn standby_node(v0: f64, i_standby: f64) -> NodeConfig {
        NodeConfig {
            supercap: SupercapState::default().with_voltage(v0),
            converter: ConverterModel::ideal(),
            load: LoadModel::standby_only(i_standby),
            ..NodeConfig::default()
        }
    }

    #[test]
    fn event_queue_orders_by_time_then_kind() {
        let mut q = EventQueue::default();
        q.push(5.0, EventKind::Wakeup { epoch: 0 });
        q.push(5.0, EventKind::Death);
        q.push(5.0, EventKind::External(1.0));
        q.push(1.0, EventKind::End);
        q.push(5.0, EventKind::Recovery);
        let kinds: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::End,
                EventKind::Death,
                EventKind::Recovery,
                EventKind::External(1.0),
                EventKind::Wakeup { epoch: 0 },
            ]
        );
    }

    #[test]
    fn darkness_standby_matches_closed_form() {
        // 1 uA on a 3 V rail through a lossless regulator: 3 uW.
        let cfg = standby_node(3.6, 1e-6);
        let light = Trace::constant(0.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        let t1 = 200_000.0;
        assert_eq!(sim.integrate_interval(0.0, t1), None);
        let expected = (3.6f64 * 3.6 - 2.0 * 3e-6 * t1).sqrt();
        assert_relative_eq!(sim.voltage(), expected, max_relative = 1e-9);

        match sim.integrate_interval(t1, 2e6) {
            Some(Crossing::Death(tc)) => {
                assert_relative_eq!(tc, 1_425_000.0, max_relative = 1e-6)
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sim.voltage() >= cfg.supercap.v_cutoff);
        assert!(sim.ledger().relative_residual() < 1e-9);
    }

    #[test]
    fn balanced_light_holds_voltage() {
        let cfg = standby_node(3.0, 1e-6);
        // Closed-form lux at which harvest equals the 3 uW standby draw.
        let lux = 3e-6 / cfg.harvester.reference_power() * cfg.harvester.lux_ref;
        let light = Trace::constant(lux);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        assert_eq!(sim.integrate_interval(0.0, 86_400.0), None);
        assert!((sim.voltage() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn dead_node_charges_with_cold_start_efficiency() {
        let cfg = NodeConfig {
            supercap: SupercapState::default().with_voltage(1.0),
            ..NodeConfig::default()
        };
        let light = Trace::constant(300.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        assert!(!sim.is_alive());
        sim.integrate_interval(0.0, 1.0);
        let p = 69.75e-6;
        let expected = (1.0 + 2.0 * 0.05 * p * 1.0f64).sqrt();
        assert_relative_eq!(sim.voltage(), expected, max_relative = 1e-12);

        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        sim.cap.voltage = 2.0;
        sim.integrate_interval(0.0, 1.0);
        let expected = (4.0 + 2.0 * 0.8 * p * 1.0f64).sqrt();
        assert_relative_eq!(sim.voltage(), expected, max_relative = 1e-12);
    }

    #[test]
    fn recovery_time_matches_closed_form() {
        let mut cfg = NodeConfig::default();
        cfg.supercap.voltage = 2.1;
        let light = Trace::constant(300.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        sim.handle_death(0.0);
        let expected = 0.5 * (2.4f64 * 2.4 - 2.1 * 2.1) / (0.8 * 69.75e-6);
        match sim.integrate_interval(0.0, 1e6) {
            Some(Crossing::Recovery(tc)) => {
                assert!((tc - expected).abs() <= 1e-3, "{tc} vs {expected}")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sim.voltage() >= 2.4);
        sim.handle_recovery(sim.time());
        assert_eq!(sim.controller().index, 0);
        let out = sim.handle_wakeup(sim.time());
        assert_eq!(sim.controller().index, 1);
        // Seeded at state 2, then both trends (partly zero buffers) push up.
        assert_eq!(out.qos.get(), 4);
    }

    #[test]
    fn wakeup_schedules_by_table_interval() {
        let cfg = NodeConfig {
            supercap: SupercapState::default().with_voltage(3.5),
            ..NodeConfig::default()
        };
        let light = Trace::constant(500.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        let out = sim.handle_wakeup(100.0);
        assert_eq!(out.qos, QosState::MAX);
        assert_eq!(out.next_wakeup, Some(120.0));
        let p = out.packet.unwrap();
        assert_eq!(p.qos_state, QosState::MAX);
        assert_eq!(p.voltage, 3.5);
        assert_eq!(p.readings.lux, 500.0);

        let cfg = NodeConfig {
            mode: ApplicationMode::Advertising,
            supercap: SupercapState::default().with_voltage(2.2),
            controller: ControlPolicy::Pinned(QosState::MIN),
            ..NodeConfig::default()
        };
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        assert_eq!(sim.handle_wakeup(0.0).next_wakeup, Some(5.0));
    }

    #[test]
    fn wakeup_that_exhausts_store_emits_nothing() {
        let cfg = NodeConfig {
            supercap: SupercapState::default().with_voltage(2.100_01),
            ..NodeConfig::default()
        };
        let light = Trace::constant(0.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        let out = sim.handle_wakeup(0.0);
        assert!(out.packet.is_none());
        assert!(out.next_wakeup.is_none());
        assert_eq!(sim.voltage(), 2.1);
    }

    #[test]
    fn hold_off_suppresses_close_events() {
        let cfg = NodeConfig {
            mode: ApplicationMode::EventDetection,
            supercap: SupercapState::default().with_voltage(3.5),
            controller: ControlPolicy::Pinned(QosState::MAX),
            ..NodeConfig::default()
        };
        let light = Trace::constant(300.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        assert!(sim.handle_external_event(0.0, 1.0).0.is_some());
        assert!(sim.handle_external_event(5.0, 1.0).0.is_none());
        assert!(sim.handle_external_event(12.0, 1.0).0.is_some());
        let s = sim.summary();
        assert_eq!(s.events_suppressed, 1);
        assert_eq!(s.events_notified, 2);
        assert_eq!(s.latency_max_s, 7.0);
    }

    #[test]
    fn first_event_is_notified_immediately() {
        let cfg = NodeConfig {
            mode: ApplicationMode::EventDetection,
            controller: ControlPolicy::Pinned(QosState::MIN),
            ..NodeConfig::default()
        };
        let light = Trace::constant(300.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        let (packet, alive) = sim.handle_external_event(42.0, 1.0);
        assert!(alive);
        assert_eq!(packet.unwrap().timestamp, 42.0);
        assert_eq!(sim.summary().mean_latency(), Some(0.0));
    }

    #[test]
    fn dead_node_ignores_events() {
        let cfg = NodeConfig {
            mode: ApplicationMode::EventDetection,
            supercap: SupercapState::default().with_voltage(1.5),
            ..NodeConfig::default()
        };
        let light = Trace::constant(0.0);
        let mut sim = NodeSim::new(&cfg, &light, 0, Recording::Full);
        let before = sim.ledger();
        assert_eq!(sim.handle_external_event(1.0, 1.0), (None, false));
        assert_eq!(sim.ledger(), before);
        assert_eq!(sim.summary().events_missed, 1);
    }

    #[test]
    fn run_rejects_bad_inputs() {
        let cfg = NodeConfig::default();
        let light = Trace::constant(300.0);
        assert!(matches!(
            run_node(&cfg, &light, &Trace::empty(), 0.0, 0),
            Err(SimError::Duration(_))
        ));
        let late = Trace::new([(10.0, 300.0)]).unwrap();
        assert!(run_node(&cfg, &late, &Trace::empty(), 100.0, 0).is_err());
        assert!(run_node(&cfg, &Trace::empty(), &Trace::empty(), 100.0, 0).is_err());
    }

    #[test]
    fn short_run_logs_one_step() {
        let log = run_node(
            &NodeConfig::default(),
            &Trace::constant(300.0),
            &Trace::empty(),
            1.0,
            0,
        )
        .unwrap();
        assert_eq!(log.summary.controller_steps, 1);
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.packets.len(), 1);
    }

    #[test]
    fn dark_node_never_recovers() {
        let cfg = standby_node(2.2, 1e-6);
        let duration = 1e6;
        let log = run_node(&cfg, &Trace::constant(0.0), &Trace::empty(), duration, 0).unwrap();
        assert_eq!(log.summary.deaths, 1);
        assert_eq!(log.summary.recoveries, 0);
        let death = log
            .records
            .iter()
            .find(|r| r.action == Action::Death)
            .unwrap();
        assert_relative_eq!(
            log.summary.dead_seconds,
            duration - death.time,
            max_relative = 1e-12
        );
    }

    #[test]
    fn csv_export_has_expected_columns() {
        let log = run_node(
            &NodeConfig::with_id("n7"),
            &Trace::constant(300.0),
            &Trace::empty(),
            100.0,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("time_s,node_id,voltage_v,lux,qos,action,packets")
        );
        assert!(lines.next().unwrap().starts_with("0,n7,2.4,300,4,wakeup,1"));
        let json = log.ledger_json();
        assert_eq!(json["node_id"], "n7");
        assert!(json["ledger"]["harvested"].as_f64().unwrap() > 0.0);
    }
}
