//! The CAL analysis engine.
//!
//! From a [`ProgramModel`] this builds the latency matrix `Γ`
//! (`Γ[i][j] = X_ij + L_ij + E_ij − C̄_ij` for each logical channel `j → i`),
//! solves the least processing offsets `O = Γ* Z`, derives unavailability
//! `A = (I ⊕ Γ) O`, checks deadlines and back-solves latency budgets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maxplus::{CycleClass, MaxPlusError, MaxPlusScalar};
use crate::model::{validate_model, ChannelKind, Diagnostic, ProgramModel};
use crate::time::TimeValue;
use crate::MaxPlusMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalError {
    #[error(transparent)]
    MaxPlus(#[from] MaxPlusError),
    #[error("invalid model: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error("periodic-source refinement not applicable: {0}")]
    AssumptionUnverifiable(String),
    #[error("node {0} has no deadline")]
    NoDeadline(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
}

/// How the processing offsets in a report were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMethod {
    /// `O = Γ* Z`: any network input may affect any output.
    Conservative,
    /// Periodic sources wait on nothing; everyone else waits on inputs.
    PeriodicSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadlineVerdict {
    pub node: String,
    pub deadline: TimeValue,
    /// Worst upstream wait plus the node's own execution time.
    pub bound: TimeValue,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodVerdict {
    pub node: String,
    pub period: TimeValue,
    pub unavailability: TimeValue,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Node ids by matrix index.
    pub nodes: Vec<String>,
    pub gamma: MaxPlusMatrix,
    /// `Γ*`; absent when a positive cycle makes it diverge.
    pub star: Option<MaxPlusMatrix>,
    pub cycle_class: CycleClass,
    pub offset_method: OffsetMethod,
    pub offsets: Vec<TimeValue>,
    pub unavailability: Vec<TimeValue>,
    pub deadline_verdicts: Vec<DeadlineVerdict>,
    /// Period-versus-unavailability checks for periodic sources.
    pub period_verdicts: Vec<PeriodVerdict>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn offsets_bounded(&self) -> bool {
        self.offsets.iter().all(|o| o.is_finite())
    }

    /// True when offsets are finite and every deadline and period check
    /// passes.
    pub fn passes(&self) -> bool {
        self.offsets_bounded()
            && self.deadline_verdicts.iter().all(|v| v.pass)
            && self.period_verdicts.iter().all(|v| v.pass)
    }

    /// Pretty-printed JSON with keys in sorted order.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    /// Long-format CSV: `quantity,row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,row,col,value\n");
        let mut matrix = |name: &str, m: &MaxPlusMatrix| {
            for (i, row) in m.rows().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "{name},{},{},{v}", self.nodes[i], self.nodes[j]);
                }
            }
        };
        matrix("gamma", &self.gamma);
        if let Some(star) = &self.star {
            matrix("gamma_star", star);
        }
        for (i, o) in self.offsets.iter().enumerate() {
            let _ = writeln!(out, "offset,{},,{o}", self.nodes[i]);
        }
        for (i, a) in self.unavailability.iter().enumerate() {
            let _ = writeln!(out, "unavailability,{},,{a}", self.nodes[i]);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w = self.nodes.iter().map(|n| n.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(out, "nodes: {}", self.nodes.join(", "));
        let _ = writeln!(out, "cycle class: {}", self.cycle_class);
        let method = match self.offset_method {
            OffsetMethod::Conservative => "conservative (O = Γ* Z)",
            OffsetMethod::PeriodicSource => "periodic-source refinement",
        };
        let _ = writeln!(out, "offset method: {method}");
        let _ = writeln!(out, "\nGamma:\n{}", self.gamma);
        if let Some(star) = &self.star {
            let _ = writeln!(out, "Gamma*:\n{star}");
        }
        let _ = writeln!(
            out,
            "{:<w$}  {:>12}  {:>14}",
            "node", "offset", "unavailability"
        );
        for (i, id) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{id:<w$}  {:>12}  {:>14}",
                self.offsets[i].to_string(),
                self.unavailability[i].to_string()
            );
        }
        if !self.deadline_verdicts.is_empty() {
            let _ = writeln!(out, "\ndeadlines:");
            for v in &self.deadline_verdicts {
                let _ = writeln!(
                    out,
                    "  {:<w$}  d={}  bound={}  {}",
                    v.node,
                    v.deadline,
                    v.bound,
                    if v.pass { "PASS" } else { "FAIL" }
                );
            }
        }
        if !self.period_verdicts.is_empty() {
            let _ = writeln!(out, "\nperiodic sources (period > unavailability):");
            for v in &self.period_verdicts {
                let _ = writeln!(
                    out,
                    "  {:<w$}  period={}  A={}  {}",
                    v.node,
                    v.period,
                    v.unavailability,
                    if v.pass { "PASS" } else { "FAIL" }
                );
            }
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let verdict = if !self.offsets_bounded() {
            "FAIL (offsets unbounded)"
        } else if self.passes() {
            "PASS"
        } else {
            "FAIL"
        };
        let _ = writeln!(out, "verdict: {verdict}");
        out
    }
}

/// `Γ[i][j] = X_ij + L_ij + E_ij − C̄_ij` for logical channels `j → i`,
/// `0` on the diagonal and `-inf` elsewhere. Physical channels impose no
/// tag-order wait and contribute `-inf`.
///
/// The model must already be valid.
pub fn build_gamma(m: &ProgramModel) -> MaxPlusMatrix {
    let n = m.len();
    let mut gamma = MaxPlusMatrix::epsilon(n);
    for i in 0..n {
        gamma.set(i, i, TimeValue::ZERO);
    }
    for ch in &m.channels {
        if ch.kind != ChannelKind::Logical {
            continue;
        }
        let (Some(i), Some(j)) = (m.index_of(&ch.to), m.index_of(&ch.from)) else {
            continue;
        };
        gamma.set(i, j, ch.latency_bound().add_known(-ch.logical_delay));
    }
    gamma
}

fn zero_vector(n: usize) -> Vec<TimeValue> {
    vec![TimeValue::ZERO; n]
}

/// Least offsets solving `O = Z ⊕ Γ O`.
///
/// With a positive-weight cycle there is no finite solution and every
/// offset is `+inf`.
pub fn solve_offsets(gamma: &MaxPlusMatrix) -> (Vec<TimeValue>, CycleClass) {
    let n = gamma.dim();
    let class = gamma.classify_cycles();
    if class == CycleClass::HasPositive {
        return (vec![TimeValue::PosInf; n], class);
    }
    let offsets = gamma
        .kleene_star()
        .mul_vec(&zero_vector(n))
        .expect("square matrix");
    debug_assert_eq!(fixpoint_residual(gamma, &offsets), offsets);
    (offsets, class)
}

/// `Z ⊕ Γ O`; equals `O` exactly when `O` solves the offset equation.
pub fn fixpoint_residual(gamma: &MaxPlusMatrix, offsets: &[TimeValue]) -> Vec<TimeValue> {
    gamma
        .mul_vec(offsets)
        .expect("dimensions checked by caller")
        .into_iter()
        .map(|v| v.oplus(TimeValue::ZERO))
        .collect()
}

/// Offsets when periodic sources produce network outputs only from a shared
/// timer and the timer period exceeds every unavailability.
///
/// Sources get offset `0`; they never wait for network inputs before their
/// timer reaction. Every other node waits for its inputs:
/// `O_i = max(0, max_j Γ[i][j] + O_j)` over the graph with edges into
/// sources removed. When all inputs of non-sources come from sources this is
/// `max(0, max_j Γ[i][j])`.
pub fn refine_offsets_assumption1(
    m: &ProgramModel,
    gamma: &MaxPlusMatrix,
) -> Result<Vec<TimeValue>, CalError> {
    let n = m.len();
    if gamma.dim() != n {
        return Err(MaxPlusError::DimensionMismatch {
            left: n,
            right: gamma.dim(),
        }
        .into());
    }
    let sources: Vec<_> = m.nodes.iter().filter(|n| n.periodic_source).collect();
    let first = sources.first().ok_or_else(|| {
        CalError::AssumptionUnverifiable("no node is flagged periodic_source".into())
    })?;
    let timer = first.timer.ok_or_else(|| {
        CalError::AssumptionUnverifiable(format!("periodic source {} has no timer", first.id))
    })?;
    for s in &sources[1..] {
        match s.timer {
            Some(t) if t == timer => {}
            Some(t) => {
                return Err(CalError::AssumptionUnverifiable(format!(
                    "periodic sources {} and {} have different timers ({}, {}) vs ({}, {})",
                    first.id, s.id, timer.offset, timer.period, t.offset, t.period
                )))
            }
            None => {
                return Err(CalError::AssumptionUnverifiable(format!(
                    "periodic source {} has no timer",
                    s.id
                )))
            }
        }
    }
    let mut reduced = gamma.clone();
    for s in &sources {
        for j in 0..n {
            reduced.set(s.index, j, TimeValue::NegInf);
        }
    }
    Ok(solve_offsets(&reduced).0)
}

/// `A = (I ⊕ Γ) ⊗ O`.
pub fn solve_unavailability(
    gamma: &MaxPlusMatrix,
    offsets: &[TimeValue],
) -> Result<Vec<TimeValue>, CalError> {
    let op = MaxPlusMatrix::identity(gamma.dim()).oplus(gamma)?;
    Ok(op.mul_vec(offsets)?)
}

/// One verdict per periodic source: passes iff its period exceeds its
/// unavailability. No sources means no verdicts (vacuous pass).
pub fn check_assumption1(m: &ProgramModel, unavailability: &[TimeValue]) -> Vec<PeriodVerdict> {
    m.nodes
        .iter()
        .filter(|n| n.periodic_source)
        .map(|n| {
            let period = n.timer.map(|t| t.period).unwrap_or(TimeValue::ZERO);
            let a = unavailability
                .get(n.index)
                .copied()
                .unwrap_or(TimeValue::PosInf);
            PeriodVerdict {
                node: n.id.clone(),
                period,
                unavailability: a,
                pass: period > a,
            }
        })
        .collect()
}

/// For each node with a deadline `d`: passes iff the largest
/// `X + L + E − C̄` over incoming logical channels, plus the node's own
/// execution time, is at most `d`.
pub fn check_deadlines(m: &ProgramModel, gamma: &MaxPlusMatrix) -> Vec<DeadlineVerdict> {
    m.nodes
        .iter()
        .filter_map(|node| {
            let deadline = node.deadline?;
            let i = node.index;
            let wait = m
                .incoming(&node.id)
                .filter(|c| c.kind == ChannelKind::Logical)
                .filter_map(|c| m.index_of(&c.from))
                .map(|j| gamma.get(i, j))
                .max();
            let bound = match wait {
                Some(w) => w.otimes(node.local_exec),
                None => node.local_exec,
            };
            Some(DeadlineVerdict {
                node: node.id.clone(),
                deadline,
                bound,
                pass: bound <= deadline,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBudget {
    pub from: String,
    pub logical_delay: TimeValue,
    /// Currently assumed `X + L + E`.
    pub current: TimeValue,
    /// Largest `X + L + E` meeting the deadline: `d − local_exec + C̄`.
    pub max_admissible: TimeValue,
    /// `max_admissible − current`; negative means infeasible.
    pub slack: TimeValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub node: String,
    pub deadline: TimeValue,
    pub local_exec: TimeValue,
    pub channels: Vec<ChannelBudget>,
}

impl BudgetReport {
    pub fn feasible(&self) -> bool {
        self.channels.iter().all(|c| c.slack >= TimeValue::ZERO) && self.local_exec <= self.deadline
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "budget for {} (deadline {}, local_exec {})",
            self.node, self.deadline, self.local_exec
        );
        let w = self
            .channels
            .iter()
            .map(|c| c.from.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(
            out,
            "{:<w$}  {:>10}  {:>12}  {:>14}  {:>10}",
            "from", "delay", "X+L+E", "max X+L+E", "slack"
        );
        for c in &self.channels {
            let _ = writeln!(
                out,
                "{:<w$}  {:>10}  {:>12}  {:>14}  {:>10}",
                c.from,
                c.logical_delay.to_string(),
                c.current.to_string(),
                c.max_admissible.to_string(),
                c.slack.to_string()
            );
        }
        for c in &self.channels {
            let _ = writeln!(
                out,
                "max admissible X+L+E on {}->{}: {}",
                c.from, self.node, c.max_admissible
            );
        }
        let _ = writeln!(
            out,
            "verdict: {}",
            if self.feasible() {
                "feasible"
            } else {
                "infeasible"
            }
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("from,to,logical_delay,current,max_admissible,slack\n");
        for c in &self.channels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.from, self.node, c.logical_delay, c.current, c.max_admissible, c.slack
            );
        }
        out
    }
}

/// Latency budget for every logical channel into `target`.
pub fn solve_budget(m: &ProgramModel, target: &str) -> Result<BudgetReport, CalError> {
    let node = m
        .node(target)
        .ok_or_else(|| CalError::UnknownNode(target.to_string()))?;
    let deadline = node
        .deadline
        .ok_or_else(|| CalError::NoDeadline(target.to_string()))?;
    let headroom = deadline.add_known(-node.local_exec);
    let channels = m
        .incoming(target)
        .filter(|c| c.kind == ChannelKind::Logical)
        .map(|c| {
            let current = c.latency_bound();
            let max_admissible = headroom.add_known(c.logical_delay);
            ChannelBudget {
                from: c.from.clone(),
                logical_delay: c.logical_delay,
                current,
                max_admissible,
                slack: max_admissible.add_known(-current),
            }
        })
        .collect();
    Ok(BudgetReport {
        node: node.id.clone(),
        deadline,
        local_exec: node.local_exec,
        channels,
    })
}

/// Full analysis of a model. Uses the periodic-source refinement when any
/// node is flagged `periodic_source`, the conservative solution otherwise.
pub fn analyze(m: &ProgramModel) -> Result<AnalysisReport, CalError> {
    let diagnostics = validate_model(m);
    if !diagnostics.is_empty() {
        return Err(CalError::InvalidModel(diagnostics));
    }
    let gamma = build_gamma(m);
    let cycle_class = gamma.classify_cycles();
    let star = (cycle_class != CycleClass::HasPositive).then(|| gamma.kleene_star());
    let mut notes = Vec::new();

    let refine = m.nodes.iter().any(|n| n.periodic_source);
    let (offset_method, offsets) = if refine {
        (
            OffsetMethod::PeriodicSource,
            refine_offsets_assumption1(m, &gamma)?,
        )
    } else {
        (OffsetMethod::Conservative, solve_offsets(&gamma).0)
    };
    match cycle_class {
        CycleClass::HasPositive if !refine => notes.push(
            "offsets unbounded: a positive-weight cycle forces every node to wait forever".into(),
        ),
        CycleClass::HasPositive => notes.push(
            "positive-weight cycle present; offsets rely on the periodic-source assumption".into(),
        ),
        CycleClass::NonPositiveWithZero => notes.push(
            "zero-weight cycle: the offset equation may have other solutions; reporting the least"
                .into(),
        ),
        CycleClass::AllNegative => {}
    }
    if refine && !offsets.iter().all(|o| o.is_finite()) {
        notes.push("offsets unbounded: positive-weight cycle among non-source nodes".into());
    }

    let unavailability = solve_unavailability(&gamma, &offsets)?;
    let period_verdicts = if refine {
        check_assumption1(m, &unavailability)
    } else {
        Vec::new()
    };
    for v in period_verdicts.iter().filter(|v| !v.pass) {
        notes.push(format!(
            "periodic-source assumption violated at {}: period {} <= unavailability {}",
            v.node, v.period, v.unavailability
        ));
    }
    let deadline_verdicts = check_deadlines(m, &gamma);

    Ok(AnalysisReport {
        nodes: m.ids_by_index(),
        gamma,
        star,
        cycle_class,
        offset_method,
        offsets,
        unavailability,
        deadline_verdicts,
        period_verdicts,
        notes,
    })
}
