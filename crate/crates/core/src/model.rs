//! Declarative description of a federated program.
//!
//! A [`ProgramModel`] lists processes ([`NodeSpec`]) and the channels
//! between them ([`ChannelSpec`]) together with worst-case latency bounds,
//! timers, deadlines and decentralized-coordination offsets. Models are
//! read from and written to a JSON topology document.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::TimeValue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed topology document: {0}")]
    Parse(String),
    #[error("invalid model: {}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    DuplicateNodeId,
    IndexPermutation,
    TimerPeriod,
    NegativeDeadline,
    NegativeOffset,
    NegativeLocalExec,
    UnknownEndpoint,
    SelfChannel,
    DuplicateChannel,
    NegativeBound,
    InfiniteBound,
    PhysicalDelay,
}

/// One violated invariant, naming the offending node or channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: Rule,
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

fn is_zero(t: &TimeValue) -> bool {
    *t == TimeValue::ZERO
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerSpec {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: TimeValue,
    pub period: TimeValue,
}

/// One process of the federation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    /// Row/column of this process in the CAL matrix. Assigned from document
    /// order on load.
    #[serde(skip)]
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timer: Option<TimerSpec>,
    /// Relative deadline on reactions of this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<TimeValue>,
    /// Safe-to-advance offset (decentralized coordination).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sta: Option<TimeValue>,
    /// Safe-to-assume-absent offset on network inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staa: Option<TimeValue>,
    /// Asserts that network outputs of this node come only from its timer,
    /// which enables the periodic-source refinement of offsets.
    #[serde(default, skip_serializing_if = "is_false")]
    pub periodic_source: bool,
    /// Execution time of the node's own reaction.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub local_exec: TimeValue,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, index: usize) -> Self {
        NodeSpec {
            id: id.into(),
            index,
            timer: None,
            deadline: None,
            sta: None,
            staa: None,
            periodic_source: false,
            local_exec: TimeValue::ZERO,
        }
    }

    pub fn with_timer(mut self, offset: TimeValue, period: TimeValue) -> Self {
        self.timer = Some(TimerSpec { offset, period });
        self
    }

    pub fn with_deadline(mut self, deadline: TimeValue) -> Self {
        self.deadline = Some(deadline);
        self
    }

    pub fn with_local_exec(mut self, exec: TimeValue) -> Self {
        self.local_exec = exec;
        self
    }

    pub fn with_sta(mut self, sta: TimeValue, staa: Option<TimeValue>) -> Self {
        self.sta = Some(sta);
        self.staa = staa;
        self
    }

    pub fn periodic_source(mut self) -> Self {
        self.periodic_source = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    /// Preserves tags, optionally shifting them by a logical delay.
    #[default]
    Logical,
    /// Re-tags each message with the receiver's clock on arrival.
    Physical,
}

/// Directed channel `from -> to` with its worst-case latency assumptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub kind: ChannelKind,
    /// Tolerated inconsistency: the logical delay added to tags.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub logical_delay: TimeValue,
    /// Bound on sender-side execution overhead.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub exec_bound: TimeValue,
    /// Bound on network latency.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub net_bound: TimeValue,
    /// Bound on clock synchronization error; may be negative.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clock_err_bound: TimeValue,
}

impl ChannelSpec {
    pub fn logical(from: impl Into<String>, to: impl Into<String>, delay: TimeValue) -> Self {
        ChannelSpec {
            from: from.into(),
            to: to.into(),
            kind: ChannelKind::Logical,
            logical_delay: delay,
            exec_bound: TimeValue::ZERO,
            net_bound: TimeValue::ZERO,
            clock_err_bound: TimeValue::ZERO,
        }
    }

    pub fn physical(from: impl Into<String>, to: impl Into<String>) -> Self {
        ChannelSpec {
            kind: ChannelKind::Physical,
            ..ChannelSpec::logical(from, to, TimeValue::ZERO)
        }
    }

    pub fn with_bounds(mut self, exec: TimeValue, net: TimeValue, clock_err: TimeValue) -> Self {
        self.exec_bound = exec;
        self.net_bound = net;
        self.clock_err_bound = clock_err;
        self
    }

    /// `X + L + E`, the assumed worst-case apparent latency beyond the
    /// sender's own processing offset.
    pub fn latency_bound(&self) -> TimeValue {
        self.exec_bound
            .add_known(self.net_bound)
            .add_known(self.clock_err_bound)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramModel {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
}

impl ProgramModel {
    pub fn new(nodes: Vec<NodeSpec>, channels: Vec<ChannelSpec>) -> Self {
        ProgramModel { nodes, channels }
    }

    /// Number of processes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node(id).map(|n| n.index)
    }

    /// Node occupying matrix index `index`.
    pub fn node_at(&self, index: usize) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.index == index)
    }

    /// Node ids ordered by matrix index.
    pub fn ids_by_index(&self) -> Vec<String> {
        let mut ids = vec![String::new(); self.nodes.len()];
        for n in &self.nodes {
            if let Some(slot) = ids.get_mut(n.index) {
                *slot = n.id.clone();
            }
        }
        ids
    }

    pub fn incoming<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ChannelSpec> + 'a {
        self.channels.iter().filter(move |c| c.to == id)
    }

    pub fn outgoing<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ChannelSpec> + 'a {
        self.channels.iter().filter(move |c| c.from == id)
    }

    pub fn channel(&self, from: &str, to: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.from == from && c.to == to)
    }

    /// Canonical JSON topology document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }
}

/// Parses and validates a topology document. Node indices follow document
/// order.
pub fn load_model(document: &str) -> Result<ProgramModel, ModelError> {
    let mut model: ProgramModel =
        serde_json::from_str(document).map_err(|e| ModelError::Parse(e.to_string()))?;
    for (i, node) in model.nodes.iter_mut().enumerate() {
        node.index = i;
    }
    let diagnostics = validate_model(&model);
    if diagnostics.is_empty() {
        Ok(model)
    } else {
        Err(ModelError::Validation(diagnostics))
    }
}

pub fn validate_model(m: &ProgramModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |rule, entity: String, message: String| {
        out.push(Diagnostic {
            rule,
            entity,
            message,
        })
    };

    let mut seen = HashSet::new();
    for node in &m.nodes {
        if !seen.insert(node.id.as_str()) {
            push(
                Rule::DuplicateNodeId,
                format!("node {}", node.id),
                "node id is not unique".into(),
            );
        }
    }
    let mut indices: Vec<usize> = m.nodes.iter().map(|n| n.index).collect();
    indices.sort_unstable();
    if indices.iter().enumerate().any(|(k, &i)| k != i) {
        push(
            Rule::IndexPermutation,
            "nodes".into(),
            format!(
                "indices {indices:?} are not a permutation of 0..{}",
                m.nodes.len()
            ),
        );
    }

    for node in &m.nodes {
        let entity = || format!("node {}", node.id);
        if let Some(timer) = node.timer {
            if !(timer.period > TimeValue::ZERO && timer.period.is_finite()) {
                push(
                    Rule::TimerPeriod,
                    entity(),
                    format!("timer period {} must be finite and > 0", timer.period),
                );
            }
            if !timer.offset.is_finite() || timer.offset < TimeValue::ZERO {
                push(
                    Rule::TimerPeriod,
                    entity(),
                    format!("timer offset {} must be finite and >= 0", timer.offset),
                );
            }
        }
        if let Some(d) = node.deadline {
            if d < TimeValue::ZERO {
                push(
                    Rule::NegativeDeadline,
                    entity(),
                    format!("deadline {d} must be >= 0"),
                );
            }
        }
        for (name, value) in [("sta", node.sta), ("staa", node.staa)] {
            if let Some(v) = value {
                if v < TimeValue::ZERO || !v.is_finite() {
                    push(
                        Rule::NegativeOffset,
                        entity(),
                        format!("{name} {v} must be finite and >= 0"),
                    );
                }
            }
        }
        if node.local_exec < TimeValue::ZERO || !node.local_exec.is_finite() {
            push(
                Rule::NegativeLocalExec,
                entity(),
                format!("local_exec {} must be finite and >= 0", node.local_exec),
            );
        }
    }

    let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
    for ch in &m.channels {
        let entity = || format!("channel {}->{}", ch.from, ch.to);
        for end in [&ch.from, &ch.to] {
            if !seen.contains(end.as_str()) {
                push(
                    Rule::UnknownEndpoint,
                    entity(),
                    format!("endpoint {end} is not a declared node"),
                );
            }
        }
        if ch.from == ch.to {
            push(
                Rule::SelfChannel,
                entity(),
                "self-channels are not allowed".into(),
            );
        }
        let count = pairs.entry((&ch.from, &ch.to)).or_insert(0);
        *count += 1;
        if *count == 2 {
            push(
                Rule::DuplicateChannel,
                entity(),
                "more than one channel for this ordered pair".into(),
            );
        }
        for (name, value, signed) in [
            ("logical_delay", ch.logical_delay, false),
            ("exec_bound", ch.exec_bound, false),
            ("net_bound", ch.net_bound, false),
            ("clock_err_bound", ch.clock_err_bound, true),
        ] {
            if !value.is_finite() {
                push(
                    Rule::InfiniteBound,
                    entity(),
                    format!("{name} {value} must be finite"),
                );
            } else if !signed && value < TimeValue::ZERO {
                push(
                    Rule::NegativeBound,
                    entity(),
                    format!("{name} {value} must be >= 0"),
                );
            }
        }
        if ch.kind == ChannelKind::Physical && ch.logical_delay != TimeValue::ZERO {
            push(
                Rule::PhysicalDelay,
                entity(),
                "physical channels carry no logical delay".into(),
            );
        }
    }
    out
}
