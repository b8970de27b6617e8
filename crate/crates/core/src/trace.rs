//! Execution traces and empirical measurement.
//!
//! A trace is a set of tagged `Read`, `Write`, `Send` and `Accept` events,
//! each stamped with the local physical clock of its process. From a trace
//! we measure inconsistency, unavailability, processing offsets and apparent
//! latency, and compare them against an [`AnalysisReport`].
//!
//! Correlation ids are explicit: one id names one update, shared by the
//! `Write` that produced it, the `Send` that launched it and every `Accept`
//! that received it.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cal::AnalysisReport;
use crate::model::{ChannelKind, ProgramModel};
use crate::time::{Tag, TimeValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("trace does not match the analyzed model: {0}")]
    ModelMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Read,
    Write,
    Send,
    Accept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub process: String,
    pub seq: u64,
    pub kind: EventKind,
    pub tag: Tag,
    /// Reading of the process's local clock when the event starts.
    pub physical: TimeValue,
    pub variable: String,
    /// Read/Write triggered directly by an input from outside the system.
    #[serde(default)]
    pub external: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Model whose node ids the trace's processes refer to.
    pub model: Option<ProgramModel>,
}

impl Trace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        Trace {
            events,
            model: None,
        }
    }

    pub fn bound_to(mut self, model: ProgramModel) -> Self {
        self.model = Some(model);
        self
    }

    /// One JSON object per line, in event order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON lines; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|err| TraceError::Parse {
                line: k + 1,
                message: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(Trace::new(events))
    }

    fn knows(&self, node: &str) -> bool {
        match &self.model {
            Some(m) => m.node(node).is_some(),
            None => self.events.iter().any(|e| e.process == node),
        }
    }

    fn require(&self, node: &str) -> Result<(), TraceError> {
        if self.knows(node) {
            Ok(())
        } else {
            Err(TraceError::UnknownNode(node.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceRule {
    TagOrder,
    PhysicalOrder,
    ExternalBeforeTag,
    UnmatchedAccept,
    AcceptBeforeSend,
    DuplicateSend,
    ReadRace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDiagnostic {
    pub rule: TraceRule,
    pub process: String,
    pub seq: u64,
    pub message: String,
}

impl fmt::Display for TraceDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}: {}", self.process, self.seq, self.message)
    }
}

fn events_by_process(t: &Trace) -> HashMap<&str, Vec<&TraceEvent>> {
    let mut by_proc: HashMap<&str, Vec<&TraceEvent>> = HashMap::new();
    for e in &t.events {
        by_proc.entry(e.process.as_str()).or_default().push(e);
    }
    for events in by_proc.values_mut() {
        events.sort_by_key(|e| e.seq);
    }
    by_proc
}

/// Checks the well-formedness rules of a trace. An empty result means the
/// trace is valid.
pub fn validate_trace(t: &Trace) -> Vec<TraceDiagnostic> {
    let mut out = Vec::new();
    let diag = |rule, e: &TraceEvent, message: String| TraceDiagnostic {
        rule,
        process: e.process.clone(),
        seq: e.seq,
        message,
    };

    let by_proc = events_by_process(t);
    let mut procs: Vec<_> = by_proc.keys().copied().collect();
    procs.sort_unstable();
    for p in procs {
        let events = &by_proc[p];
        for pair in events.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b.tag < a.tag {
                out.push(diag(
                    TraceRule::TagOrder,
                    b,
                    format!("tag {} follows larger tag {}", b.tag, a.tag),
                ));
            }
            if b.physical <= a.physical {
                out.push(diag(
                    TraceRule::PhysicalOrder,
                    b,
                    format!(
                        "physical time {} does not exceed previous {}",
                        b.physical, a.physical
                    ),
                ));
            }
        }
        for e in events {
            if e.external
                && matches!(e.kind, EventKind::Read | EventKind::Write)
                && e.physical < e.tag.timestamp()
            {
                out.push(diag(
                    TraceRule::ExternalBeforeTag,
                    e,
                    format!(
                        "externally triggered event processed at {} before its timestamp {}",
                        e.physical,
                        e.tag.timestamp()
                    ),
                ));
            }
            if e.kind == EventKind::Read {
                let race = events.iter().any(|w| {
                    matches!(w.kind, EventKind::Write | EventKind::Accept)
                        && w.variable == e.variable
                        && w.tag == e.tag
                        && w.physical >= e.physical
                });
                if race {
                    out.push(diag(
                        TraceRule::ReadRace,
                        e,
                        format!(
                            "read of {} at {} precedes a same-tag update in physical time",
                            e.variable, e.tag
                        ),
                    ));
                }
            }
        }
    }

    let mut sends: HashMap<&str, Vec<&TraceEvent>> = HashMap::new();
    for e in t.events.iter().filter(|e| e.kind == EventKind::Send) {
        if let Some(c) = &e.correlation {
            sends.entry(c.as_str()).or_default().push(e);
        }
    }
    for group in sends.values() {
        for dup in group.iter().skip(1) {
            out.push(diag(
                TraceRule::DuplicateSend,
                dup,
                format!(
                    "correlation {} is used by more than one send",
                    dup.correlation.as_deref().unwrap_or_default()
                ),
            ));
        }
    }
    for e in t.events.iter().filter(|e| e.kind == EventKind::Accept) {
        let Some(c) = &e.correlation else { continue };
        match sends.get(c.as_str()).map(|g| g.as_slice()) {
            Some([send, ..]) => {
                if send.tag > e.tag {
                    out.push(diag(
                        TraceRule::AcceptBeforeSend,
                        e,
                        format!(
                            "accept tag {} is below the tag {} of its send",
                            e.tag, send.tag
                        ),
                    ));
                }
            }
            _ => out.push(diag(
                TraceRule::UnmatchedAccept,
                e,
                format!("correlation {c} has no send"),
            )),
        }
    }
    out
}

/// Lookup tables over a trace for the measurement functions.
pub struct TraceIndex<'a> {
    by_process: HashMap<&'a str, Vec<&'a TraceEvent>>,
    accepts: HashMap<(&'a str, &'a str), &'a TraceEvent>,
}

impl<'a> TraceIndex<'a> {
    pub fn new(t: &'a Trace) -> Self {
        let mut by_process: HashMap<&str, Vec<&TraceEvent>> = HashMap::new();
        let mut accepts = HashMap::new();
        for e in &t.events {
            by_process.entry(e.process.as_str()).or_default().push(e);
            if e.kind == EventKind::Accept {
                if let Some(c) = &e.correlation {
                    accepts.entry((e.process.as_str(), c.as_str())).or_insert(e);
                }
            }
        }
        TraceIndex {
            by_process,
            accepts,
        }
    }

    fn events(&self, process: &str) -> impl Iterator<Item = &'a TraceEvent> + '_ {
        self.by_process.get(process).into_iter().flatten().copied()
    }

    fn accept(&self, process: &str, correlation: Option<&str>) -> Option<&'a TraceEvent> {
        correlation.and_then(|c| self.accepts.get(&(process, c)).copied())
    }

    /// Largest logical lag `𝒯(g_i) − 𝒯(g_j)` from writes on `j` to the
    /// matching accepts on `i`; `+inf` if some write is never accepted.
    pub fn inconsistency(&self, i: &str, j: &str) -> TimeValue {
        if i == j {
            return TimeValue::ZERO;
        }
        max_or_zero(
            self.events(j)
                .filter(|e| e.kind == EventKind::Write)
                .map(|w| match self.accept(i, w.correlation.as_deref()) {
                    Some(a) => lag(a.tag.timestamp(), w.tag.timestamp()),
                    None => TimeValue::PosInf,
                }),
        )
    }

    fn lateness(&self, i: &str, kind: EventKind) -> TimeValue {
        max_or_zero(
            self.events(i)
                .filter(|e| e.kind == kind && e.external)
                .map(|e| lag(e.physical, e.tag.timestamp())),
        )
    }

    pub fn unavailability(&self, i: &str) -> TimeValue {
        self.lateness(i, EventKind::Read)
    }

    pub fn processing_offset(&self, i: &str) -> TimeValue {
        self.lateness(i, EventKind::Write)
    }

    /// Largest `T_i − 𝒯(g_j)` from externally triggered writes on `j` to
    /// their accepts on `i`, across the two clocks.
    pub fn apparent_latency(&self, i: &str, j: &str) -> TimeValue {
        max_or_zero(
            self.events(j)
                .filter(|e| e.kind == EventKind::Write && e.external)
                .map(|w| {
                    let arrival = if i == j {
                        Some(w.physical)
                    } else {
                        self.accept(i, w.correlation.as_deref()).map(|a| a.physical)
                    };
                    match arrival {
                        Some(t) => lag(t, w.tag.timestamp()),
                        None => TimeValue::PosInf,
                    }
                }),
        )
    }
}

fn lag(later: TimeValue, earlier: TimeValue) -> TimeValue {
    later.checked_sub(earlier).unwrap_or(TimeValue::PosInf)
}

fn max_or_zero(values: impl Iterator<Item = TimeValue>) -> TimeValue {
    values.max().unwrap_or(TimeValue::ZERO)
}

pub fn measure_inconsistency(t: &Trace, i: &str, j: &str) -> Result<TimeValue, TraceError> {
    t.require(i)?;
    t.require(j)?;
    Ok(TraceIndex::new(t).inconsistency(i, j))
}

pub fn measure_unavailability(t: &Trace, i: &str) -> Result<TimeValue, TraceError> {
    t.require(i)?;
    Ok(TraceIndex::new(t).unavailability(i))
}

pub fn measure_processing_offset(t: &Trace, i: &str) -> Result<TimeValue, TraceError> {
    t.require(i)?;
    Ok(TraceIndex::new(t).processing_offset(i))
}

pub fn measure_apparent_latency(t: &Trace, i: &str, j: &str) -> Result<TimeValue, TraceError> {
    t.require(i)?;
    t.require(j)?;
    Ok(TraceIndex::new(t).apparent_latency(i, j))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundViolation {
    Unavailability {
        node: String,
        measured: TimeValue,
        bound: TimeValue,
    },
    Inconsistency {
        from: String,
        to: String,
        measured: TimeValue,
        declared: TimeValue,
    },
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundViolation::Unavailability {
                node,
                measured,
                bound,
            } => write!(
                f,
                "unavailability at {node}: measured {measured} exceeds bound {bound}"
            ),
            BoundViolation::Inconsistency {
                from,
                to,
                measured,
                declared,
            } => write!(
                f,
                "inconsistency {from}->{to}: measured {measured} exceeds declared {declared}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conformance {
    pub pass: bool,
    pub violations: Vec<BoundViolation>,
}

/// Compares measured unavailability and inconsistency with the analytic
/// bounds of `report`. The trace must be bound to the analyzed model.
pub fn check_bounds(t: &Trace, report: &AnalysisReport) -> Result<Conformance, TraceError> {
    let model = t
        .model
        .as_ref()
        .ok_or_else(|| TraceError::ModelMismatch("trace is not bound to a model".into()))?;
    let ids = model.ids_by_index();
    if ids != report.nodes || report.unavailability.len() != ids.len() {
        return Err(TraceError::ModelMismatch(format!(
            "model nodes {:?} vs report nodes {:?}",
            ids, report.nodes
        )));
    }
    let known: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(e) = t
        .events
        .iter()
        .find(|e| !known.contains(e.process.as_str()))
    {
        return Err(TraceError::ModelMismatch(format!(
            "process {} is not in the model",
            e.process
        )));
    }

    let index = TraceIndex::new(t);
    let mut violations = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let measured = index.unavailability(id);
        let bound = report.unavailability[i];
        if measured > bound {
            violations.push(BoundViolation::Unavailability {
                node: id.clone(),
                measured,
                bound,
            });
        }
    }
    for ch in model
        .channels
        .iter()
        .filter(|c| c.kind == ChannelKind::Logical)
    {
        let measured = index.inconsistency(&ch.to, &ch.from);
        if measured > ch.logical_delay {
            violations.push(BoundViolation::Inconsistency {
                from: ch.from.clone(),
                to: ch.to.clone(),
                measured,
                declared: ch.logical_delay,
            });
        }
    }
    Ok(Conformance {
        pass: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(n: i64) -> TimeValue {
        TimeValue::millis(n)
    }

    #[allow(clippy::too_many_arguments)]
    fn ev(
        process: &str,
        seq: u64,
        kind: EventKind,
        tag_ms: i64,
        phys_ms: i64,
        variable: &str,
        external: bool,
        correlation: Option<&str>,
    ) -> TraceEvent {
        TraceEvent {
            process: process.into(),
            seq,
            kind,
            tag: Tag::at(ms(tag_ms)),
            physical: ms(phys_ms),
            variable: variable.into(),
            external,
            correlation: correlation.map(String::from),
        }
    }

    use EventKind::*;

    /// Writer `j` updates `x` three times; reader `i` accepts each update
    /// with a 10ms logical delay.
    fn two_process() -> Trace {
        let mut events = Vec::new();
        for (k, t) in [0i64, 10, 20].into_iter().enumerate() {
            let c = format!("w{k}");
            let s = 3 * k as u64;
            events.push(ev("j", s, Read, t, t, "in:j", true, None));
            events.push(ev("j", s + 1, Write, t, t + 1, "x", true, Some(&c)));
            events.push(ev("j", s + 2, Send, t, t + 2, "x", false, Some(&c)));
            events.push(ev(
                "i",
                2 * k as u64,
                Accept,
                t + 10,
                t + 6,
                "x",
                false,
                Some(&c),
            ));
            events.push(ev(
                "i",
                2 * k as u64 + 1,
                Read,
                t + 10,
                t + 11,
                "x",
                false,
                None,
            ));
        }
        Trace::new(events)
    }

    #[test]
    fn well_formed_trace_is_valid() {
        assert_eq!(validate_trace(&two_process()), vec![]);
    }

    #[test]
    fn tag_regression_detected() {
        let t = Trace::new(vec![
            ev("p", 0, Write, 5, 5, "x", false, None),
            ev("p", 1, Write, 3, 6, "x", false, None),
        ]);
        let d = validate_trace(&t);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, TraceRule::TagOrder);
    }

    #[test]
    fn physical_regression_detected() {
        let t = Trace::new(vec![
            ev("p", 0, Write, 5, 5, "x", false, None),
            ev("p", 1, Write, 6, 5, "x", false, None),
        ]);
        assert_eq!(validate_trace(&t)[0].rule, TraceRule::PhysicalOrder);
    }

    #[test]
    fn accept_below_send_detected() {
        let t = Trace::new(vec![
            ev("j", 0, Send, 6, 6, "x", false, Some("c")),
            ev("i", 0, Accept, 4, 7, "x", false, Some("c")),
        ]);
        let d = validate_trace(&t);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, TraceRule::AcceptBeforeSend);
    }

    #[test]
    fn other_rules() {
        let t = Trace::new(vec![
            ev("i", 0, Accept, 4, 7, "x", false, Some("orphan")),
            ev("j", 0, Send, 1, 1, "x", false, Some("c")),
            ev("j", 1, Send, 1, 2, "x", false, Some("c")),
            ev("k", 0, Read, 5, 5, "y", false, None),
            ev("k", 1, Write, 5, 6, "y", false, None),
            ev("k", 2, Read, 9, 8, "z", true, None),
        ]);
        let rules: Vec<_> = validate_trace(&t).into_iter().map(|d| d.rule).collect();
        for r in [
            TraceRule::UnmatchedAccept,
            TraceRule::DuplicateSend,
            TraceRule::ReadRace,
            TraceRule::ExternalBeforeTag,
        ] {
            assert!(rules.contains(&r), "missing {r:?}");
        }
    }

    #[test]
    fn inconsistency_examples() {
        let t = two_process();
        assert_eq!(measure_inconsistency(&t, "i", "j"), Ok(ms(10)));
        // No writes on i.
        assert_eq!(measure_inconsistency(&t, "j", "i"), Ok(ms(0)));

        let mut lost = two_process();
        lost.events
            .retain(|e| e.correlation.as_deref() != Some("w1") || e.process == "j");
        assert_eq!(
            measure_inconsistency(&lost, "i", "j"),
            Ok(TimeValue::PosInf)
        );

        assert_eq!(
            measure_inconsistency(&t, "i", "nobody"),
            Err(TraceError::UnknownNode("nobody".into()))
        );
    }

    #[test]
    fn unavailability_examples() {
        let on_time = Trace::new(vec![ev("p", 0, Read, 5, 5, "x", true, None)]);
        assert_eq!(measure_unavailability(&on_time, "p"), Ok(ms(0)));
        let late = Trace::new(vec![
            ev("p", 0, Read, 0, 2, "x", true, None),
            ev("p", 1, Read, 10, 17, "x", true, None),
            ev("p", 2, Read, 20, 23, "x", true, None),
            ev("p", 3, Read, 30, 90, "x", false, None),
        ]);
        assert_eq!(measure_unavailability(&late, "p"), Ok(ms(7)));
        let none = Trace::new(vec![ev("p", 0, Write, 5, 9, "x", true, None)]);
        assert_eq!(measure_unavailability(&none, "p"), Ok(ms(0)));
    }

    #[test]
    fn processing_offset_examples() {
        let on_time = Trace::new(vec![ev("p", 0, Write, 5, 5, "x", true, None)]);
        assert_eq!(measure_processing_offset(&on_time, "p"), Ok(ms(0)));
        let late = Trace::new(vec![ev("p", 0, Write, 5, 9, "x", true, None)]);
        assert_eq!(measure_processing_offset(&late, "p"), Ok(ms(4)));
        let internal = Trace::new(vec![ev("p", 0, Write, 5, 9, "x", false, None)]);
        assert_eq!(measure_processing_offset(&internal, "p"), Ok(ms(0)));
    }

    #[test]
    fn apparent_latency_examples() {
        let t = Trace::new(vec![
            ev("j", 0, Write, 100, 100, "x", true, Some("c")),
            ev("j", 1, Send, 100, 101, "x", false, Some("c")),
            ev("i", 0, Accept, 100, 106, "x", false, Some("c")),
        ]);
        assert_eq!(measure_apparent_latency(&t, "i", "j"), Ok(ms(6)));

        // Receiver clock reads 10ms behind the sender; delivery is instant.
        let skewed = Trace::new(vec![
            ev("j", 0, Write, 100, 100, "x", true, Some("c")),
            ev("j", 1, Send, 100, 101, "x", false, Some("c")),
            ev("i", 0, Accept, 100, 91, "x", false, Some("c")),
        ]);
        assert_eq!(measure_apparent_latency(&skewed, "i", "j"), Ok(ms(-9)));

        let t = two_process();
        assert_eq!(
            measure_apparent_latency(&t, "j", "j"),
            measure_processing_offset(&t, "j")
        );
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = two_process();
        let text = t.to_jsonl();
        assert!(text.lines().next().unwrap().starts_with(
            r#"{"process":"j","seq":0,"kind":"read","tag":{"t":"0ms","m":0},"physical":"0ms""#
        ));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), t);
        assert!(matches!(
            Trace::from_jsonl("{\"process\":1}\n"),
            Err(TraceError::Parse { line: 1, .. })
        ));
    }
}
