//! Radial feeder model: buses, lines, inverter placements, per-unit bases.
//!
//! Models are constructed from a JSON document (see `docs/formats.md`) or
//! assembled in code. Line impedances are stored in per-unit on the model
//! bases; documents may give ohms instead and are converted on parse.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverter apparent-power rating defaults to this multiple of p_max.
pub const DEFAULT_RATING_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// False marks pass-through junctions that never carry demand.
    pub has_load: bool,
}

/// Distribution line. `from` is the upstream endpoint; impedances are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
}

/// PV inverter attached to a bus. Powers are per-unit on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterSpec {
    pub bus: String,
    pub p_max: f64,
    pub s_rated: f64,
}

impl InverterSpec {
    pub fn new(bus: impl Into<String>, p_max: f64) -> Self {
        InverterSpec {
            bus: bus.into(),
            p_max,
            s_rated: DEFAULT_RATING_MARGIN * p_max,
        }
    }

    pub fn with_rating(bus: impl Into<String>, p_max: f64, s_rated: f64) -> Self {
        InverterSpec {
            bus: bus.into(),
            p_max,
            s_rated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub inverters: Vec<InverterSpec>,
    pub base_mva: f64,
    pub base_kv: f64,
}

// ---------------------------------------------------------------------------
// Per-unit conversions
// ---------------------------------------------------------------------------

/// Z_base = base_kv^2 / base_mva (ohms).
pub fn impedance_to_pu(ohm: f64, base_mva: f64, base_kv: f64) -> f64 {
    ohm * base_mva / (base_kv * base_kv)
}

pub fn impedance_to_ohm(pu: f64, base_mva: f64, base_kv: f64) -> f64 {
    pu * base_kv * base_kv / base_mva
}

pub fn power_kw_to_pu(kw: f64, base_mva: f64) -> f64 {
    kw / (base_mva * 1000.0)
}

pub fn power_pu_to_kw(pu: f64, base_mva: f64) -> f64 {
    pu * base_mva * 1000.0
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoSlack,
    MultipleSlack { ids: Vec<String> },
    DuplicateBus { id: String },
    UnknownEndpoint { line: usize, id: String },
    SelfLoop { line: usize, id: String },
    BadImpedance { line: usize, detail: String },
    LineCount { lines: usize, buses: usize },
    DuplicateParent { id: String },
    Cycle { id: String },
    Unreachable { ids: Vec<String> },
    OrphanInverter { bus: String },
    DuplicateInverter { bus: String },
    BadInverter { bus: String, detail: String },
    BadBase { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoSlack => write!(f, "no slack bus"),
            Violation::MultipleSlack { ids } => {
                write!(f, "multiple slack buses: {}", ids.join(", "))
            }
            Violation::DuplicateBus { id } => write!(f, "duplicate bus id {id}"),
            Violation::UnknownEndpoint { line, id } => {
                write!(f, "line {line} references unknown bus {id}")
            }
            Violation::SelfLoop { line, id } => write!(f, "line {line} is a self-loop at {id}"),
            Violation::BadImpedance { line, detail } => write!(f, "line {line}: {detail}"),
            Violation::LineCount { lines, buses } => {
                write!(f, "{lines} lines for {buses} buses (radial needs buses - 1)")
            }
            Violation::DuplicateParent { id } => {
                write!(f, "bus {id} has more than one upstream line")
            }
            Violation::Cycle { id } => write!(f, "cycle through bus {id}"),
            Violation::Unreachable { ids } => {
                write!(f, "buses unreachable from slack: {}", ids.join(", "))
            }
            Violation::OrphanInverter { bus } => {
                write!(f, "inverter references unknown bus {bus}")
            }
            Violation::DuplicateInverter { bus } => write!(f, "duplicate inverter at bus {bus}"),
            Violation::BadInverter { bus, detail } => write!(f, "inverter at {bus}: {detail}"),
            Violation::BadBase { detail } => write!(f, "{detail}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks radial-tree structure and referential integrity. Never panics on
/// malformed input; every defect lands in the report.
pub fn validate_radial(model: &FeederModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !(model.base_mva.is_finite() && model.base_mva > 0.0) {
        report.violations.push(Violation::BadBase {
            detail: format!("base_mva must be positive, got {}", model.base_mva),
        });
    }
    if !(model.base_kv.is_finite() && model.base_kv > 0.0) {
        report.violations.push(Violation::BadBase {
            detail: format!("base_kv must be positive, got {}", model.base_kv),
        });
    }

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, bus) in model.buses.iter().enumerate() {
        if index.insert(bus.id.as_str(), i).is_some() {
            report.violations.push(Violation::DuplicateBus {
                id: bus.id.clone(),
            });
        }
    }

    let slack: Vec<&Bus> = model
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .collect();
    match slack.len() {
        0 => report.violations.push(Violation::NoSlack),
        1 => {}
        _ => report.violations.push(Violation::MultipleSlack {
            ids: slack.iter().map(|b| b.id.clone()).collect(),
        }),
    }

    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (li, line) in model.lines.iter().enumerate() {
        let from = index.get(line.from.as_str()).copied();
        let to = index.get(line.to.as_str()).copied();
        if from.is_none() {
            report.violations.push(Violation::UnknownEndpoint {
                line: li,
                id: line.from.clone(),
            });
        }
        if to.is_none() {
            report.violations.push(Violation::UnknownEndpoint {
                line: li,
                id: line.to.clone(),
            });
        }
        if line.from == line.to {
            report.violations.push(Violation::SelfLoop {
                line: li,
                id: line.from.clone(),
            });
        }
        if !(line.r.is_finite() && line.x.is_finite() && line.r >= 0.0 && line.x >= 0.0) {
            report.violations.push(Violation::BadImpedance {
                line: li,
                detail: format!("impedance must be finite and nonnegative, got r={} x={}", line.r, line.x),
            });
        } else if line.r + line.x == 0.0 {
            report.violations.push(Violation::BadImpedance {
                line: li,
                detail: "zero impedance".into(),
            });
        }
        if let (Some(f), Some(t)) = (from, to) {
            if f != t {
                if parent.insert(t, f).is_some() {
                    report.violations.push(Violation::DuplicateParent {
                        id: model.buses[t].id.clone(),
                    });
                }
                children.entry(f).or_default().push(t);
            }
        }
    }

    if model.lines.len() + 1 != model.buses.len() {
        report.violations.push(Violation::LineCount {
            lines: model.lines.len(),
            buses: model.buses.len(),
        });
    }

    // Reachability from the slack along line direction. Anything not reached
    // is either disconnected or sits on a cycle.
    if slack.len() == 1 {
        let root = index[slack[0].id.as_str()];
        if parent.contains_key(&root) {
            report.violations.push(Violation::Cycle {
                id: slack[0].id.clone(),
            });
        }
        let mut seen = vec![false; model.buses.len()];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(b) = stack.pop() {
            if let Some(kids) = children.get(&b) {
                for &c in kids {
                    if !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
        }
        let missing: Vec<String> = model
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, b)| b.id.clone())
            .collect();
        if !missing.is_empty() {
            // A parent chain that never reaches the slack is a cycle.
            let mut cyclic = BTreeSet::new();
            for (i, _) in model.buses.iter().enumerate() {
                if seen[i] {
                    continue;
                }
                let mut walk = i;
                let mut hops = 0;
                while let Some(&p) = parent.get(&walk) {
                    walk = p;
                    hops += 1;
                    if walk == i || hops > model.buses.len() {
                        cyclic.insert(i);
                        break;
                    }
                }
            }
            for &b in &cyclic {
                report.violations.push(Violation::Cycle {
                    id: model.buses[b].id.clone(),
                });
            }
            report.violations.push(Violation::Unreachable { ids: missing });
        }
    }

    let mut inverter_buses = BTreeSet::new();
    for inv in &model.inverters {
        if !index.contains_key(inv.bus.as_str()) {
            report.violations.push(Violation::OrphanInverter {
                bus: inv.bus.clone(),
            });
        }
        if !inverter_buses.insert(inv.bus.as_str()) {
            report.violations.push(Violation::DuplicateInverter {
                bus: inv.bus.clone(),
            });
        }
        if !(inv.p_max.is_finite() && inv.p_max > 0.0) {
            report.violations.push(Violation::BadInverter {
                bus: inv.bus.clone(),
                detail: format!("p_max must be positive, got {}", inv.p_max),
            });
        }
        if !(inv.s_rated.is_finite() && inv.s_rated >= inv.p_max) {
            report.violations.push(Violation::BadInverter {
                bus: inv.bus.clone(),
                detail: format!("s_rated {} below p_max {}", inv.s_rated, inv.p_max),
            });
        }
    }

    report
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Tree structure derived from a validated model. Lines are keyed by their
/// downstream bus index; slack entries in the per-bus arrays are zero.
#[derive(Debug, Clone)]
pub struct Topology {
    pub slack: usize,
    /// Bus indices in breadth-first order from the slack; every parent
    /// precedes its children.
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub line_r: Vec<f64>,
    pub line_x: Vec<f64>,
}

impl Topology {
    pub fn n_buses(&self) -> usize {
        self.parent.len()
    }

    /// Downstream bus indices of the lines, in traversal order.
    pub fn line_buses(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied().filter(move |&b| b != self.slack)
    }
}

/// Breadth-first order from the slack outward. Children are visited in
/// ascending bus-id order so the result is independent of line ordering.
pub fn downstream_order(model: &FeederModel) -> Result<Topology> {
    let report = validate_radial(model);
    if !report.is_valid() {
        return Err(Error::InvalidFeeder(report));
    }

    let n = model.buses.len();
    let index: BTreeMap<&str, usize> = model
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let slack = model
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .expect("validated");

    let mut parent = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut line_r = vec![0.0; n];
    let mut line_x = vec![0.0; n];
    for line in &model.lines {
        let f = index[line.from.as_str()];
        let t = index[line.to.as_str()];
        parent[t] = Some(f);
        children[f].push(t);
        line_r[t] = line.r;
        line_x[t] = line.x;
    }
    for kids in &mut children {
        kids.sort_by(|&a, &b| model.buses[a].id.cmp(&model.buses[b].id));
    }

    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(slack);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for &c in &children[b] {
            queue.push_back(c);
        }
    }
    debug_assert_eq!(order.len(), n);

    Ok(Topology {
        slack,
        order,
        parent,
        children,
        line_r,
        line_x,
    })
}

impl FeederModel {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Bus index of each inverter, in inverter order. Panics if unvalidated.
    pub fn inverter_buses(&self) -> Vec<usize> {
        self.inverters
            .iter()
            .map(|inv| self.bus_index(&inv.bus).expect("validated inverter bus"))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FeederDocument {
    base_mva: f64,
    base_kv: f64,
    buses: Vec<BusDoc>,
    #[serde(default)]
    lines: Vec<LineDoc>,
    #[serde(default)]
    inverters: Vec<InverterDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusDoc {
    id: String,
    kind: BusKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    has_load: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineDoc {
    from: String,
    to: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_ohm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_ohm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_pu: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InverterDoc {
    bus: String,
    p_max_kw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_rated_kva: Option<f64>,
}

/// Parses a feeder document and validates the result. Impedances may be
/// given per line either in ohms (converted on the document bases) or
/// per-unit directly, never both.
pub fn parse_feeder(text: &str) -> Result<FeederModel> {
    let doc: FeederDocument =
        serde_json::from_str(text).map_err(|e| Error::FeederDocument(e.to_string()))?;

    let mut lines = Vec::with_capacity(doc.lines.len());
    for (i, l) in doc.lines.iter().enumerate() {
        let r = match (l.r_pu, l.r_ohm) {
            (Some(pu), None) => pu,
            (None, Some(ohm)) => impedance_to_pu(ohm, doc.base_mva, doc.base_kv),
            (Some(_), Some(_)) => {
                return Err(Error::FeederDocument(format!(
                    "line {i}: both r_ohm and r_pu given"
                )))
            }
            (None, None) => {
                return Err(Error::FeederDocument(format!(
                    "line {i}: missing r_ohm or r_pu"
                )))
            }
        };
        let x = match (l.x_pu, l.x_ohm) {
            (Some(pu), None) => pu,
            (None, Some(ohm)) => impedance_to_pu(ohm, doc.base_mva, doc.base_kv),
            (Some(_), Some(_)) => {
                return Err(Error::FeederDocument(format!(
                    "line {i}: both x_ohm and x_pu given"
                )))
            }
            (None, None) => {
                return Err(Error::FeederDocument(format!(
                    "line {i}: missing x_ohm or x_pu"
                )))
            }
        };
        lines.push(Line {
            from: l.from.clone(),
            to: l.to.clone(),
            r,
            x,
        });
    }

    let buses = doc
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id.clone(),
            kind: b.kind,
            has_load: b.has_load.unwrap_or(b.kind == BusKind::Load),
        })
        .collect();

    let inverters = doc
        .inverters
        .iter()
        .map(|inv| {
            let p_max = power_kw_to_pu(inv.p_max_kw, doc.base_mva);
            let s_rated = inv
                .s_rated_kva
                .map(|s| power_kw_to_pu(s, doc.base_mva))
                .unwrap_or(DEFAULT_RATING_MARGIN * p_max);
            InverterSpec {
                bus: inv.bus.clone(),
                p_max,
                s_rated,
            }
        })
        .collect();

    let model = FeederModel {
        buses,
        lines,
        inverters,
        base_mva: doc.base_mva,
        base_kv: doc.base_kv,
    };

    let report = validate_radial(&model);
    if !report.is_valid() {
        return Err(Error::InvalidFeeder(report));
    }
    Ok(model)
}

/// Serializes with per-unit impedances so parse(serialize(m)) == m exactly.
pub fn serialize_feeder(model: &FeederModel) -> String {
    let doc = FeederDocument {
        base_mva: model.base_mva,
        base_kv: model.base_kv,
        buses: model
            .buses
            .iter()
            .map(|b| BusDoc {
                id: b.id.clone(),
                kind: b.kind,
                has_load: Some(b.has_load),
            })
            .collect(),
        lines: model
            .lines
            .iter()
            .map(|l| LineDoc {
                from: l.from.clone(),
                to: l.to.clone(),
                r_ohm: None,
                x_ohm: None,
                r_pu: Some(l.r),
                x_pu: Some(l.x),
            })
            .collect(),
        inverters: model
            .inverters
            .iter()
            .map(|inv| InverterDoc {
                bus: inv.bus.clone(),
                p_max_kw: power_pu_to_kw(inv.p_max, model.base_mva),
                s_rated_kva: Some(power_pu_to_kw(inv.s_rated, model.base_mva)),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("feeder document serializes")
}
