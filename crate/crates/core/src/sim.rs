//! Deterministic discrete-event simulation of federated execution.
//!
//! Each node is a federate with its own clock (a constant offset from the
//! reference time), a queue of tagged events and a fixed execution time.
//! Channels are FIFO and draw their latencies from a counter-based generator
//! keyed by `(seed, channel, message index)`, so a run is a pure function of
//! its inputs.
//!
//! Under centralized coordination a node processes tag `g` only once every
//! logical input has been granted up to `g`. Grants are demand driven: when
//! a node is blocked, the coordinator propagates the need upstream and sends
//! each upstream node's current output frontier. Under decentralized
//! coordination a node waits `STA` (plus `STAA` when it has logical inputs)
//! past an event's timestamp, then processes it; messages that arrive at or
//! below the last processed tag are recorded as tardy and dropped.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cal::{analyze, CalError};
use crate::model::{validate_model, ChannelKind, Diagnostic, ProgramModel};
use crate::time::{Tag, TimeValue};
use crate::trace::{check_bounds, EventKind, Trace, TraceError, TraceEvent, TraceIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid model ({} problems)", .0.len())]
    InvalidModel(Vec<Diagnostic>),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("node {0} has network inputs but no safe-to-advance offset")]
    StaMissing(String),
    #[error(transparent)]
    Analysis(#[from] CalError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Realized latency of one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Latency {
    Constant {
        value: TimeValue,
    },
    /// Uniform over `[lo, hi]` at nanosecond resolution.
    Uniform {
        lo: TimeValue,
        hi: TimeValue,
    },
    /// `spike` for messages sent in `[from, to)`, `base` otherwise.
    SpikeWindow {
        base: TimeValue,
        spike: TimeValue,
        from: TimeValue,
        to: TimeValue,
    },
    /// Messages sent in `[from, to)` are held until `to`, then delivered
    /// with `base` latency like every other message.
    PartitionWindow {
        from: TimeValue,
        to: TimeValue,
        #[serde(default)]
        base: TimeValue,
    },
}

impl Default for Latency {
    fn default() -> Self {
        Latency::Constant {
            value: TimeValue::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelLatency {
    pub from: String,
    pub to: String,
    pub latency: Latency,
}

/// An external input arriving at `node` when its local clock reads `at`,
/// repeated every `every` until the horizon when set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub node: String,
    pub at: TimeValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<TimeValue>,
}

fn default_true() -> bool {
    true
}

/// Runtime realization of execution times, latencies and clock errors.
///
/// `horizon` and latency windows are in reference time; stimuli and timers
/// are in each node's local time. Channels not listed have zero latency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: TimeValue,
    /// Route coordinator grants through the channel latency model. When
    /// off, grants are delivered instantly.
    #[serde(default = "default_true")]
    pub grant_latency: bool,
    #[serde(default)]
    pub channels: Vec<ChannelLatency>,
    /// Local clock minus reference time, per node.
    #[serde(default)]
    pub clock_offset: BTreeMap<String, TimeValue>,
    /// Time from reaction start to network departure, per node.
    #[serde(default)]
    pub exec_time: BTreeMap<String, TimeValue>,
    #[serde(default)]
    pub stimuli: Vec<Stimulus>,
}

impl Scenario {
    pub fn new(seed: u64, horizon: TimeValue) -> Self {
        Scenario {
            seed,
            horizon,
            grant_latency: true,
            channels: Vec::new(),
            clock_offset: BTreeMap::new(),
            exec_time: BTreeMap::new(),
            stimuli: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_latency(mut self, from: &str, to: &str, latency: Latency) -> Self {
        self.channels.retain(|c| !(c.from == from && c.to == to));
        self.channels.push(ChannelLatency {
            from: from.into(),
            to: to.into(),
            latency,
        });
        self
    }

    pub fn with_stimulus(mut self, node: &str, at: TimeValue, every: Option<TimeValue>) -> Self {
        self.stimuli.push(Stimulus {
            node: node.into(),
            at,
            every,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinatorKind {
    Centralized,
    Decentralized,
}

impl fmt::Display for CoordinatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordinatorKind::Centralized => "centralized",
            CoordinatorKind::Decentralized => "decentralized",
        })
    }
}

impl FromStr for CoordinatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(CoordinatorKind::Centralized),
            "decentralized" => Ok(CoordinatorKind::Decentralized),
            other => Err(format!(
                "unknown coordinator {other:?} (expected centralized or decentralized)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    DeadlineMiss,
    TardyMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub node: String,
    pub kind: FaultKind,
    pub tag: Tag,
    pub physical: TimeValue,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node: String,
    pub unavailability: TimeValue,
    pub processing_offset: TimeValue,
    pub reactions: u64,
    /// Reactions that ran while an input with a tag at or below theirs was
    /// still in flight.
    pub stale_progressions: u64,
    pub deadline_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub from: String,
    pub to: String,
    pub apparent_latency: TimeValue,
    pub inconsistency: TimeValue,
    pub tardy: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub nodes: Vec<NodeStats>,
    /// Logical channels only; physical channels carry no correlation.
    pub channels: Vec<ChannelStats>,
    /// Events left unprocessed when the run stopped (coordination deadlock).
    pub unprocessed: usize,
}

impl SimStats {
    pub fn node(&self, id: &str) -> Option<&NodeStats> {
        self.nodes.iter().find(|n| n.node == id)
    }

    pub fn tardy_total(&self) -> u64 {
        self.channels.iter().map(|c| c.tardy).sum()
    }

    pub fn stale_total(&self) -> u64 {
        self.nodes.iter().map(|n| n.stale_progressions).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutcome {
    pub trace: Trace,
    pub fault_events: Vec<FaultEvent>,
    pub stats: SimStats,
}

impl SimOutcome {
    pub fn count(&self, kind: FaultKind) -> usize {
        self.fault_events.iter().filter(|f| f.kind == kind).count()
    }

    /// Faults and statistics as canonical JSON.
    pub fn summary_json(&self) -> String {
        let doc = serde_json::json!({
            "events": self.trace.events.len(),
            "faults": self.fault_events,
            "stats": self.stats,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes")
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!("trace events: {}\n", self.trace.events.len());
        out.push_str(&format!(
            "{:<16} {:>12} {:>12} {:>9} {:>6} {:>6}\n",
            "node", "unavail", "offset", "reactions", "stale", "miss"
        ));
        for n in &self.stats.nodes {
            out.push_str(&format!(
                "{:<16} {:>12} {:>12} {:>9} {:>6} {:>6}\n",
                n.node,
                n.unavailability.to_string(),
                n.processing_offset.to_string(),
                n.reactions,
                n.stale_progressions,
                n.deadline_misses
            ));
        }
        out.push_str(&format!(
            "{:<24} {:>12} {:>12} {:>6}\n",
            "channel", "latency", "inconsist", "tardy"
        ));
        for c in &self.stats.channels {
            out.push_str(&format!(
                "{:<24} {:>12} {:>12} {:>6}\n",
                format!("{}->{}", c.from, c.to),
                c.apparent_latency.to_string(),
                c.inconsistency.to_string(),
                c.tardy
            ));
        }
        if self.stats.unprocessed > 0 {
            out.push_str(&format!(
                "deadlock: {} events unprocessed\n",
                self.stats.unprocessed
            ));
        }
        for f in &self.fault_events {
            out.push_str(&format!(
                "fault {:?} at {} tag {} physical {}: {}\n",
                f.kind, f.node, f.tag, f.physical, f.detail
            ));
        }
        out
    }
}

/// Runs one simulation. Equal inputs give identical outcomes.
pub fn simulate(
    m: &ProgramModel,
    s: &Scenario,
    c: CoordinatorKind,
) -> Result<SimOutcome, SimError> {
    let diagnostics = validate_model(m);
    if !diagnostics.is_empty() {
        return Err(SimError::InvalidModel(diagnostics));
    }
    let mut engine = Engine::new(m, s, c)?;
    engine.run();
    Ok(engine.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub scenario: usize,
    pub seed: u64,
    pub conformant: bool,
    pub violations: usize,
    pub tardy: u64,
    pub deadline_misses: u64,
    pub stale: u64,
    pub unprocessed: usize,
    /// Measured unavailability by node index.
    pub unavailability: Vec<TimeValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub coordinator: CoordinatorKind,
    pub nodes: Vec<String>,
    /// Analytic unavailability bounds by node index.
    pub bounds: Vec<TimeValue>,
    pub rows: Vec<MatrixRow>,
}

impl MatrixTable {
    pub fn conformant_count(&self) -> usize {
        self.rows.iter().filter(|r| r.conformant).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,seed,coordinator,conformant,violations,tardy,deadline_misses,stale,unprocessed",
        );
        for n in &self.nodes {
            out.push_str(&format!(",unavailability:{n}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.seed,
                self.coordinator,
                r.conformant,
                r.violations,
                r.tardy,
                r.deadline_misses,
                r.stale,
                r.unprocessed
            ));
            for a in &r.unavailability {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Simulates every scenario and checks each trace against the analytic
/// bounds of `m`.
pub fn run_matrix_experiment(
    m: &ProgramModel,
    scenarios: &[Scenario],
    c: CoordinatorKind,
) -> Result<MatrixTable, SimError> {
    let report = analyze(m)?;
    let mut rows = Vec::with_capacity(scenarios.len());
    for (k, s) in scenarios.iter().enumerate() {
        let outcome = simulate(m, s, c)?;
        let conformance = check_bounds(&outcome.trace, &report)?;
        rows.push(MatrixRow {
            scenario: k,
            seed: s.seed,
            conformant: conformance.pass,
            violations: conformance.violations.len(),
            tardy: outcome.stats.tardy_total(),
            deadline_misses: outcome.count(FaultKind::DeadlineMiss) as u64,
            stale: outcome.stats.stale_total(),
            unprocessed: outcome.stats.unprocessed,
            unavailability: report
                .nodes
                .iter()
                .map(|id| {
                    outcome
                        .stats
                        .node(id)
                        .map_or(TimeValue::ZERO, |n| n.unavailability)
                })
                .collect(),
        });
    }
    Ok(MatrixTable {
        coordinator: c,
        nodes: report.nodes.clone(),
        bounds: report.unavailability.clone(),
        rows,
    })
}

// Event priorities at equal reference time.
const PRIO_STIMULUS: u8 = 0;
const PRIO_ARRIVAL: u8 = 1;
const PRIO_DEPART: u8 = 2;
const PRIO_WAKE: u8 = 3;

#[derive(Debug)]
enum Ev {
    Stimulus(usize),
    Arrival { ch: usize, msg: Msg },
    Depart(usize),
    Wake(usize),
}

#[derive(Debug)]
enum Msg {
    Data { tag: Tag, corr: Option<String> },
    Grant(Tag),
}

#[derive(Debug, Clone)]
enum Item {
    Stimulus,
    Data { ch: usize, corr: Option<String> },
}

struct Work {
    tag: Tag,
    /// Inputs must be sealed through this tag before the reaction runs.
    seal: Tag,
    timer: bool,
    /// Periodic-source timer reaction, run ahead of same-tag inputs.
    timer_only: bool,
}

struct Node {
    id: String,
    offset: i64,
    exec: i64,
    periodic: bool,
    deadline: Option<i64>,
    wait: i64,
    timer: Option<(i64, i64)>,
    pending: BTreeMap<Tag, Vec<Item>>,
    last: Tag,
    next_free: i64,
    seq: u64,
    writes: u64,
    stimuli_left: usize,
    physical_inputs: bool,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    outstanding: VecDeque<(Tag, Option<String>)>,
    reactions: u64,
    stale: u64,
    misses: u64,
}

struct Chan {
    from: usize,
    to: usize,
    logical: bool,
    delay: TimeValue,
    latency: Latency,
    next_msg: u64,
    last_arrival: i64,
    granted: Tag,
    grant_sent: Tag,
    in_flight: VecDeque<Tag>,
    tardy: u64,
}

struct Engine<'a> {
    model: &'a ProgramModel,
    kind: CoordinatorKind,
    seed: u64,
    horizon: i64,
    grant_latency: bool,
    nodes: Vec<Node>,
    chans: Vec<Chan>,
    queue: BTreeMap<(i64, u8, u64), Ev>,
    next_ev: u64,
    now: i64,
    wakes: BTreeSet<(usize, i64)>,
    events: Vec<TraceEvent>,
    faults: Vec<FaultEvent>,
}

fn ns(t: TimeValue) -> i64 {
    t.as_nanos().expect("validated finite")
}

fn tag_at(t: i64) -> Tag {
    Tag::at(TimeValue::nanos(t))
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ScenarioInvalid(msg.into())
}

fn finite(t: TimeValue, what: &str) -> Result<i64, SimError> {
    t.as_nanos()
        .ok_or_else(|| invalid(format!("{what} must be finite, got {t}")))
}

fn nonneg(t: TimeValue, what: &str) -> Result<i64, SimError> {
    let v = finite(t, what)?;
    if v < 0 {
        return Err(invalid(format!("{what} must be non-negative, got {t}")));
    }
    Ok(v)
}

fn check_latency(l: &Latency, horizon: i64, what: &str) -> Result<(), SimError> {
    let window = |from: TimeValue, to: TimeValue| -> Result<(), SimError> {
        let (a, b) = (finite(from, what)?, finite(to, what)?);
        if a < 0 || a > b || b > horizon {
            return Err(invalid(format!(
                "{what}: window [{from}, {to}) must lie within the horizon"
            )));
        }
        Ok(())
    };
    match *l {
        Latency::Constant { value } => {
            nonneg(value, what)?;
        }
        Latency::Uniform { lo, hi } => {
            if nonneg(lo, what)? > nonneg(hi, what)? {
                return Err(invalid(format!("{what}: uniform lo {lo} exceeds hi {hi}")));
            }
        }
        Latency::SpikeWindow {
            base,
            spike,
            from,
            to,
        } => {
            nonneg(base, what)?;
            nonneg(spike, what)?;
            window(from, to)?;
        }
        Latency::PartitionWindow { from, to, base } => {
            nonneg(base, what)?;
            window(from, to)?;
        }
    }
    Ok(())
}

/// Uniform draw keyed by `(seed, channel, message index)`.
fn keyed_draw(seed: u64, ch: usize, msg: u64, lo: i64, hi: i64) -> i64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ch as u64);
    rng.set_word_pos(u128::from(msg) * 16);
    rng.gen_range(lo..=hi)
}

impl<'a> Engine<'a> {
    fn new(m: &'a ProgramModel, s: &Scenario, kind: CoordinatorKind) -> Result<Self, SimError> {
        let horizon = finite(s.horizon, "horizon")?;
        if horizon <= 0 {
            return Err(invalid(format!(
                "horizon must be positive, got {}",
                s.horizon
            )));
        }
        let ids = m.ids_by_index();
        let index = |id: &str, what: &str| {
            m.index_of(id)
                .ok_or_else(|| invalid(format!("{what} names unknown node {id}")))
        };
        for id in s.clock_offset.keys() {
            index(id, "clock_offset")?;
        }
        for id in s.exec_time.keys() {
            index(id, "exec_time")?;
        }

        let mut chans: Vec<Chan> = m
            .channels
            .iter()
            .map(|c| Chan {
                from: m.index_of(&c.from).expect("validated"),
                to: m.index_of(&c.to).expect("validated"),
                logical: c.kind == ChannelKind::Logical,
                delay: c.logical_delay,
                latency: Latency::default(),
                next_msg: 0,
                last_arrival: i64::MIN,
                granted: Tag::BOTTOM,
                grant_sent: Tag::BOTTOM,
                in_flight: VecDeque::new(),
                tardy: 0,
            })
            .collect();
        let mut seen = BTreeSet::new();
        for cl in &s.channels {
            let what = format!("latency of {}->{}", cl.from, cl.to);
            let k = m
                .channels
                .iter()
                .position(|c| c.from == cl.from && c.to == cl.to)
                .ok_or_else(|| invalid(format!("{what}: no such channel")))?;
            if !seen.insert(k) {
                return Err(invalid(format!("{what}: listed twice")));
            }
            check_latency(&cl.latency, horizon, &what)?;
            chans[k].latency = cl.latency.clone();
        }

        let mut nodes = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let spec = m.node(id).expect("validated");
            let offset = finite(
                s.clock_offset.get(id).copied().unwrap_or(TimeValue::ZERO),
                "clock_offset",
            )?;
            let exec = nonneg(
                s.exec_time.get(id).copied().unwrap_or(TimeValue::ZERO),
                "exec_time",
            )?;
            let inputs: Vec<usize> = (0..chans.len())
                .filter(|&k| chans[k].to == i && chans[k].logical)
                .collect();
            let physical_inputs = chans.iter().any(|c| c.to == i && !c.logical);
            let wait = match kind {
                CoordinatorKind::Centralized => 0,
                CoordinatorKind::Decentralized => {
                    let networked = chans.iter().any(|c| c.to == i);
                    let sta = match spec.sta {
                        Some(sta) => finite(sta, "sta")?,
                        None if networked => return Err(SimError::StaMissing(id.clone())),
                        None => 0,
                    };
                    let staa = if inputs.is_empty() {
                        0
                    } else {
                        finite(spec.staa.unwrap_or(TimeValue::ZERO), "staa")?
                    };
                    sta + staa
                }
            };
            nodes.push(Node {
                id: id.clone(),
                offset,
                exec,
                periodic: spec.periodic_source,
                deadline: spec.deadline.map(|d| finite(d, "deadline")).transpose()?,
                wait,
                timer: spec
                    .timer
                    .map(|t| {
                        Ok::<_, SimError>((finite(t.offset, "timer")?, finite(t.period, "timer")?))
                    })
                    .transpose()?,
                pending: BTreeMap::new(),
                last: Tag::BOTTOM,
                next_free: i64::MIN,
                seq: 0,
                writes: 0,
                stimuli_left: 0,
                physical_inputs,
                inputs,
                outputs: (0..chans.len()).filter(|&k| chans[k].from == i).collect(),
                outstanding: VecDeque::new(),
                reactions: 0,
                stale: 0,
                misses: 0,
            });
        }

        let mut engine = Engine {
            model: m,
            kind,
            seed: s.seed,
            horizon,
            grant_latency: s.grant_latency,
            nodes,
            chans,
            queue: BTreeMap::new(),
            next_ev: 0,
            now: 0,
            wakes: BTreeSet::new(),
            events: Vec::new(),
            faults: Vec::new(),
        };
        for st in &s.stimuli {
            let i = index(&st.node, "stimulus")?;
            let at = finite(st.at, "stimulus time")?;
            let every = st.every.map(|e| nonneg(e, "stimulus period")).transpose()?;
            if every == Some(0) {
                return Err(invalid("stimulus period must be positive"));
            }
            let mut t = at;
            while t < horizon {
                engine.stimulus_at(i, t);
                match every {
                    Some(p) => t += p,
                    None => break,
                }
            }
        }
        Ok(engine)
    }

    fn stimulus_at(&mut self, i: usize, local: i64) {
        self.nodes[i].stimuli_left += 1;
        let when = local - self.nodes[i].offset;
        self.push(when, PRIO_STIMULUS, Ev::Stimulus(i));
    }

    fn push(&mut self, when: i64, prio: u8, ev: Ev) {
        self.queue.insert((when, prio, self.next_ev), ev);
        self.next_ev += 1;
    }

    fn local(&self, i: usize) -> i64 {
        self.now + self.nodes[i].offset
    }

    fn run(&mut self) {
        self.now = self
            .nodes
            .iter()
            .map(|n| -n.offset)
            .min()
            .unwrap_or(0)
            .min(0);
        self.coordinate();
        while let Some(((when, _, _), ev)) = self.queue.pop_first() {
            self.now = when;
            self.handle(ev);
            self.coordinate();
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Stimulus(i) => {
                let tag = self.fresh_tag(i);
                self.nodes[i].stimuli_left -= 1;
                self.nodes[i]
                    .pending
                    .entry(tag)
                    .or_default()
                    .push(Item::Stimulus);
            }
            Ev::Arrival { ch, msg } => match msg {
                Msg::Grant(tag) => {
                    let c = &mut self.chans[ch];
                    c.granted = c.granted.max(tag);
                }
                Msg::Data { tag, corr } => {
                    let c = &mut self.chans[ch];
                    c.in_flight.pop_front();
                    if c.logical {
                        // At most one message per tag, delivered in order.
                        c.granted = c.granted.max(tag);
                    }
                    let to = self.chans[ch].to;
                    if !self.chans[ch].logical {
                        let tag = self.fresh_tag(to);
                        self.nodes[to]
                            .pending
                            .entry(tag)
                            .or_default()
                            .push(Item::Data { ch, corr: None });
                    } else if tag <= self.nodes[to].last {
                        self.chans[ch].tardy += 1;
                        let from = &self.nodes[self.chans[ch].from].id;
                        let detail = format!(
                            "message from {from} ({}) arrived after tag {} was processed",
                            corr.as_deref().unwrap_or("-"),
                            self.nodes[to].last
                        );
                        self.faults.push(FaultEvent {
                            node: self.nodes[to].id.clone(),
                            kind: FaultKind::TardyMessage,
                            tag,
                            physical: TimeValue::nanos(self.local(to)),
                            detail,
                        });
                    } else {
                        self.nodes[to]
                            .pending
                            .entry(tag)
                            .or_default()
                            .push(Item::Data { ch, corr });
                    }
                }
            },
            Ev::Depart(i) => {
                let (tag, corr) = self.nodes[i]
                    .outstanding
                    .pop_front()
                    .expect("departure without a send");
                for k in self.nodes[i].outputs.clone() {
                    let tag = if self.chans[k].logical {
                        tag.delayed(self.chans[k].delay)
                    } else {
                        tag
                    };
                    self.chans[k].in_flight.push_back(tag);
                    self.transmit(
                        k,
                        Msg::Data {
                            tag,
                            corr: corr.clone(),
                        },
                        true,
                    );
                }
            }
            Ev::Wake(i) => {
                self.wakes.remove(&(i, self.now));
            }
        }
    }

    /// Tag for an input that carries no tag of its own: the local clock,
    /// bumped past whatever the node already processed.
    fn fresh_tag(&self, i: usize) -> Tag {
        tag_at(self.local(i)).max(self.nodes[i].last.succ())
    }

    fn transmit(&mut self, k: usize, msg: Msg, modeled: bool) {
        let now = self.now;
        let c = &mut self.chans[k];
        let mut arrival = now;
        if modeled {
            let idx = c.next_msg;
            c.next_msg += 1;
            arrival = match c.latency {
                Latency::Constant { value } => now + ns(value),
                Latency::Uniform { lo, hi } => now + keyed_draw(self.seed, k, idx, ns(lo), ns(hi)),
                Latency::SpikeWindow {
                    base,
                    spike,
                    from,
                    to,
                } => {
                    if (ns(from)..ns(to)).contains(&now) {
                        now + ns(spike)
                    } else {
                        now + ns(base)
                    }
                }
                Latency::PartitionWindow { from, to, base } => {
                    if (ns(from)..ns(to)).contains(&now) {
                        ns(to) + ns(base)
                    } else {
                        now + ns(base)
                    }
                }
            };
            arrival = arrival.max(c.last_arrival);
            c.last_arrival = arrival;
        }
        self.push(arrival, PRIO_ARRIVAL, Ev::Arrival { ch: k, msg });
    }

    fn schedule_wake(&mut self, i: usize, local: i64) {
        let when = local - self.nodes[i].offset;
        if when > self.now && self.wakes.insert((i, when)) {
            self.push(when, PRIO_WAKE, Ev::Wake(i));
        }
    }

    fn next_timer(&self, i: usize) -> Option<Tag> {
        self.nodes[i]
            .timer
            .filter(|&(t, _)| t < self.horizon)
            .map(|(t, _)| tag_at(t))
    }

    fn next_work(&self, i: usize) -> Option<Work> {
        let n = &self.nodes[i];
        let pending = n.pending.keys().next().copied();
        let timer = self.next_timer(i);
        let tag = match (pending, timer) {
            (Some(p), Some(t)) => p.min(t),
            (Some(p), None) => p,
            (None, Some(t)) => t,
            (None, None) => return None,
        };
        let timer = timer == Some(tag);
        Some(if n.periodic && timer {
            Work {
                tag,
                seal: tag.pred(),
                timer,
                timer_only: true,
            }
        } else {
            Work {
                tag,
                seal: tag,
                timer,
                timer_only: false,
            }
        })
    }

    fn input_frontier(&self, i: usize) -> Tag {
        self.nodes[i]
            .inputs
            .iter()
            .map(|&k| self.chans[k].granted)
            .min()
            .unwrap_or(Tag::TOP)
    }

    /// Largest tag through which node `i` has sent every output it will
    /// ever send, and the clock-seal component of that bound if any.
    fn output_frontier(&self, i: usize) -> (Tag, Option<Tag>) {
        let n = &self.nodes[i];
        let mut f = Tag::TOP;
        let mut seal = None;
        if let Some(t) = self.next_timer(i) {
            f = f.min(t.pred());
        }
        if let Some((t, _)) = n.outstanding.front() {
            f = f.min(t.pred());
        }
        if !n.periodic {
            f = f.min(self.input_frontier(i));
            if let Some(t) = n.pending.keys().next() {
                f = f.min(t.pred());
            }
            if n.stimuli_left > 0 || n.physical_inputs {
                let s = tag_at(self.local(i)).pred();
                seal = Some(s);
                f = f.min(s);
            }
        }
        (f, seal)
    }

    fn coordinate(&mut self) {
        for i in 0..self.nodes.len() {
            self.run_ready(i);
        }
        if self.kind == CoordinatorKind::Centralized {
            self.exchange_grants();
        }
    }

    fn run_ready(&mut self, i: usize) {
        while let Some(work) = self.next_work(i) {
            let n = &self.nodes[i];
            let ts = ns(work.tag.timestamp());
            let earliest = (ts + n.wait).max(n.next_free);
            if self.local(i) < earliest {
                self.schedule_wake(i, earliest);
                return;
            }
            if self.kind == CoordinatorKind::Centralized && self.input_frontier(i) < work.seal {
                return;
            }
            self.react(i, work);
        }
    }

    fn react(&mut self, i: usize, work: Work) {
        let g = work.tag;
        let items = if work.timer_only {
            let mut rest = self.nodes[i].pending.remove(&g).unwrap_or_default();
            let (stimuli, data): (Vec<_>, Vec<_>) =
                rest.drain(..).partition(|it| matches!(it, Item::Stimulus));
            if !data.is_empty() {
                self.nodes[i].pending.insert(g, data);
            }
            stimuli
        } else {
            self.nodes[i].pending.remove(&g).unwrap_or_default()
        };
        let start = self.local(i);
        let stale = self.inputs_in_flight(i, g);
        let id = self.nodes[i].id.clone();

        let n = &mut self.nodes[i];
        n.reactions += 1;
        if stale {
            n.stale += 1;
        }
        if let Some(d) = n.deadline {
            let ts = ns(g.timestamp());
            if start > ts + d {
                n.misses += 1;
                self.faults.push(FaultEvent {
                    node: id.clone(),
                    kind: FaultKind::DeadlineMiss,
                    tag: g,
                    physical: TimeValue::nanos(start),
                    detail: format!(
                        "started {} after its timestamp, deadline {}",
                        TimeValue::nanos(start - ts),
                        TimeValue::nanos(d)
                    ),
                });
            }
        }

        let external = work.timer || items.iter().any(|it| matches!(it, Item::Stimulus));
        if external {
            self.emit(i, EventKind::Read, g, &format!("{id}.in"), true, None);
        }
        let mut inputs = Vec::new();
        for it in &items {
            if let Item::Data { ch, corr } = it {
                let var = format!("{}.out", self.nodes[self.chans[*ch].from].id);
                self.emit(i, EventKind::Accept, g, &var, false, corr.clone());
                if !inputs.contains(&var) {
                    inputs.push(var);
                }
            }
        }
        for var in &inputs {
            self.emit(i, EventKind::Read, g, var, false, None);
        }
        let writes = !self.nodes[i].periodic || work.timer;
        if writes {
            let n = &mut self.nodes[i];
            let sends = !n.outputs.is_empty();
            let corr = sends.then(|| format!("{id}#{}", n.writes));
            n.writes += 1;
            let var = format!("{id}.out");
            self.emit(i, EventKind::Write, g, &var, external, corr.clone());
            if sends {
                self.emit(i, EventKind::Send, g, &var, false, corr.clone());
                let n = &mut self.nodes[i];
                n.outstanding.push_back((g, corr));
                let depart = (start + n.exec).max(n.next_free - 1) - n.offset;
                self.push(depart, PRIO_DEPART, Ev::Depart(i));
            }
        }
        let n = &mut self.nodes[i];
        // A periodic source still accepts inputs at the tag of its timer.
        n.last = n.last.max(if work.timer_only { g.pred() } else { g });
        if work.timer {
            if let Some((t, p)) = n.timer.as_mut() {
                *t += *p;
            }
        }
    }

    fn emit(
        &mut self,
        i: usize,
        kind: EventKind,
        tag: Tag,
        variable: &str,
        external: bool,
        correlation: Option<String>,
    ) {
        let t = self.local(i).max(self.nodes[i].next_free);
        let n = &mut self.nodes[i];
        self.events.push(TraceEvent {
            process: n.id.clone(),
            seq: n.seq,
            kind,
            tag,
            physical: TimeValue::nanos(t),
            variable: variable.to_string(),
            external,
            correlation,
        });
        n.seq += 1;
        n.next_free = t + 1;
    }

    /// Whether a logical input with tag at or below `g` is still on its
    /// way to node `i`.
    fn inputs_in_flight(&self, i: usize, g: Tag) -> bool {
        self.nodes[i].inputs.iter().any(|&k| {
            let c = &self.chans[k];
            c.in_flight.iter().any(|&t| t <= g)
                || self.nodes[c.from]
                    .outstanding
                    .iter()
                    .any(|(t, _)| t.delayed(c.delay) <= g)
        })
    }

    fn exchange_grants(&mut self) {
        let n = self.nodes.len();
        let frontiers: Vec<(Tag, Option<Tag>)> = (0..n).map(|i| self.output_frontier(i)).collect();
        let mut demand: Vec<Option<Tag>> = (0..n)
            .map(|i| {
                self.next_work(i)
                    .map(|w| w.seal)
                    .filter(|&s| self.input_frontier(i) < s)
            })
            .collect();
        // Propagate needs upstream through nodes whose outputs depend on
        // their inputs.
        loop {
            let mut changed = false;
            for c in self.chans.iter().filter(|c| c.logical) {
                let Some(d) = demand[c.to] else { continue };
                if d <= c.grant_sent || self.nodes[c.from].periodic {
                    continue;
                }
                let want = undelay(d, c.delay);
                if self.input_frontier(c.from) < want && demand[c.from].is_none_or(|x| x < want) {
                    demand[c.from] = Some(want);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for k in 0..self.chans.len() {
            let c = &self.chans[k];
            if !c.logical {
                continue;
            }
            let Some(d) = demand[c.to] else { continue };
            if d <= c.grant_sent {
                continue;
            }
            let (front, seal) = frontiers[c.from];
            let mut g = front.delayed(c.delay);
            if !self.grant_latency {
                if let Some(&t) = c.in_flight.front() {
                    g = g.min(t.pred());
                }
            }
            let from = c.from;
            let want = undelay(d, c.delay);
            if g > c.grant_sent {
                self.chans[k].grant_sent = g;
                self.transmit(k, Msg::Grant(g), self.grant_latency);
            }
            if let Some(s) = seal {
                if s < want {
                    self.schedule_wake(from, ns(want.timestamp()) + 1);
                }
            }
        }
    }

    fn finish(self) -> SimOutcome {
        let unprocessed = self
            .nodes
            .iter()
            .map(|n| {
                n.pending.values().map(Vec::len).sum::<usize>()
                    + n.timer.map_or(0, |(t, p)| {
                        if t < self.horizon {
                            ((self.horizon - t - 1) / p + 1) as usize
                        } else {
                            0
                        }
                    })
            })
            .sum();
        let trace = Trace::new(self.events).bound_to(self.model.clone());
        let index = TraceIndex::new(&trace);
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeStats {
                node: n.id.clone(),
                unavailability: index.unavailability(&n.id),
                processing_offset: index.processing_offset(&n.id),
                reactions: n.reactions,
                stale_progressions: n.stale,
                deadline_misses: n.misses,
            })
            .collect();
        let channels = self
            .chans
            .iter()
            .filter(|c| c.logical)
            .map(|c| {
                let (from, to) = (&self.nodes[c.from].id, &self.nodes[c.to].id);
                ChannelStats {
                    from: from.clone(),
                    to: to.clone(),
                    apparent_latency: index.apparent_latency(to, from),
                    inconsistency: index.inconsistency(to, from),
                    tardy: c.tardy,
                }
            })
            .collect();
        SimOutcome {
            trace,
            fault_events: self.faults,
            stats: SimStats {
                nodes,
                channels,
                unprocessed,
            },
        }
    }
}

/// Inverse of `Tag::delayed` on finite tags.
fn undelay(t: Tag, delay: TimeValue) -> Tag {
    if delay == TimeValue::ZERO || !t.timestamp().is_finite() {
        return t;
    }
    Tag::new(
        t.timestamp()
            .checked_sub(delay)
            .unwrap_or(TimeValue::NegInf),
        t.microstep(),
    )
}
