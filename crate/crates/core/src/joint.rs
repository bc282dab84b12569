//! Control automata and joint system/environment composition.
//!
//! A joint system synchronizes the rules of a system and an environment
//! through a control automaton. Instead of adding literal state and marker
//! nodes (or places), both backends carry the automaton state `q` and the
//! marker as extra state components compared by equality. Since these labels
//! occur exactly once per state, this is the same order.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    Sys,
    Env,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Marker {
    Top,
    Sys,
    Env,
}

impl Marker {
    pub const ALL: [Marker; 3] = [Marker::Top, Marker::Sys, Marker::Env];

    pub fn of(owner: Owner) -> Marker {
        match owner {
            Owner::Sys => Marker::Sys,
            Owner::Env => Marker::Env,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Marker::Top => "top",
            Marker::Sys => "sys",
            Marker::Env => "env",
        }
    }

    pub fn parse(s: &str) -> Option<Marker> {
        match s {
            "top" => Some(Marker::Top),
            "sys" => Some(Marker::Sys),
            "env" => Some(Marker::Env),
            _ => None,
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Owner {
    pub fn name(self) -> &'static str {
        match self {
            Owner::Sys => "sys",
            Owner::Env => "env",
        }
    }

    pub fn parse(s: &str) -> Option<Owner> {
        match s {
            "sys" => Some(Owner::Sys),
            "env" => Some(Owner::Env),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JointError {
    #[error("automaton has no states")]
    NoStates,
    #[error("duplicate automaton state `{0}`")]
    DuplicateState(String),
    #[error("unknown automaton state `{0}`")]
    UnknownState(String),
    #[error("duplicate automaton edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("edge {from} -> {to} selects unknown rule `{rule}`")]
    UnknownRule { from: String, to: String, rule: String },
    #[error("rule name `{0}` is used more than once")]
    DuplicateRule(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutomatonEdge {
    pub from: String,
    pub to: String,
    pub select: Vec<String>,
}

/// Control automaton as written in a model file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlAutomaton {
    pub states: Vec<String>,
    pub initial: String,
    pub edges: Vec<AutomatonEdge>,
}

/// Automaton with states and selected rules resolved to indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedAutomaton {
    pub states: Vec<String>,
    pub initial: usize,
    /// `(from, to, selected rule indices)`, in file order.
    pub edges: Vec<(usize, usize, Vec<usize>)>,
}

impl ControlAutomaton {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Validates the automaton against the rule names (system and environment
    /// rules together, in backend order).
    pub fn resolve(&self, rule_names: &[&str]) -> Result<ResolvedAutomaton, JointError> {
        if self.states.is_empty() {
            return Err(JointError::NoStates);
        }
        let mut index = BTreeMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(s.as_str(), i).is_some() {
                return Err(JointError::DuplicateState(s.clone()));
            }
        }
        let mut rules = BTreeMap::new();
        for (i, r) in rule_names.iter().enumerate() {
            if rules.insert(*r, i).is_some() {
                return Err(JointError::DuplicateRule(r.to_string()));
            }
        }
        let lookup = |s: &str| index.get(s).copied().ok_or_else(|| JointError::UnknownState(s.to_string()));
        let initial = lookup(&self.initial)?;
        let mut seen = BTreeMap::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let (from, to) = (lookup(&e.from)?, lookup(&e.to)?);
            if seen.insert((from, to), ()).is_some() {
                return Err(JointError::DuplicateEdge(e.from.clone(), e.to.clone()));
            }
            let mut select = Vec::with_capacity(e.select.len());
            for name in &e.select {
                let r = rules.get(name.as_str()).copied().ok_or_else(|| JointError::UnknownRule {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    rule: name.clone(),
                })?;
                select.push(r);
            }
            select.sort_unstable();
            select.dedup();
            edges.push((from, to, select));
        }
        Ok(ResolvedAutomaton { states: self.states.clone(), initial, edges })
    }
}

/// Rule `⟨(L,q) ⇀ (R,q')⟩` for an automaton edge `(q,q')` selecting the rule.
/// Without an automaton both states are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnrichedRule {
    pub rule: usize,
    pub from: Option<usize>,
    pub to: Option<usize>,
}

/// One step shape of a joint system: an enriched rule together with the
/// marker required before and the marker set after. Markers are `None` when
/// the system is not annotated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub rule: usize,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub pre_marker: Option<Marker>,
    pub post_marker: Option<Marker>,
}

impl Move {
    /// The same move read backwards.
    pub fn reversed(self) -> Move {
        Move {
            rule: self.rule,
            from: self.to,
            to: self.from,
            pre_marker: self.post_marker,
            post_marker: self.pre_marker,
        }
    }
}

pub fn enrich(rule_count: usize, automaton: Option<&ResolvedAutomaton>) -> Vec<EnrichedRule> {
    match automaton {
        None => (0..rule_count).map(|rule| EnrichedRule { rule, from: None, to: None }).collect(),
        Some(a) => a
            .edges
            .iter()
            .flat_map(|(from, to, select)| {
                select.iter().map(move |&rule| EnrichedRule { rule, from: Some(*from), to: Some(*to) })
            })
            .collect(),
    }
}

/// Triplicates every enriched rule over the markers on its left-hand side;
/// the right-hand marker is the owner of the rule.
pub fn annotate(enriched: &[EnrichedRule], owners: &[Owner]) -> Vec<Move> {
    enriched
        .iter()
        .flat_map(|e| {
            Marker::ALL.into_iter().map(move |m| Move {
                rule: e.rule,
                from: e.from,
                to: e.to,
                pre_marker: Some(m),
                post_marker: Some(Marker::of(owners[e.rule])),
            })
        })
        .collect()
}

/// All moves of a joint system.
pub fn moves(owners: &[Owner], automaton: Option<&ResolvedAutomaton>, annotated: bool) -> Vec<Move> {
    let enriched = enrich(owners.len(), automaton);
    if annotated {
        annotate(&enriched, owners)
    } else {
        enriched
            .into_iter()
            .map(|e| Move { rule: e.rule, from: e.from, to: e.to, pre_marker: None, post_marker: None })
            .collect()
    }
}

/// Access to the control components of a joint state.
pub trait ControlView {
    fn control_state(&self) -> Option<usize>;
    fn marker(&self) -> Option<Marker>;
}

/// Checks the control components of a state against the system shape.
pub(crate) fn check_control(
    state: Option<usize>,
    marker: Option<Marker>,
    automaton: Option<&ResolvedAutomaton>,
    annotated: bool,
) -> Result<(), String> {
    match (automaton, state) {
        (Some(a), Some(q)) if q < a.states.len() => {}
        (Some(a), Some(q)) => return Err(format!("control state {q} out of range 0..{}", a.states.len())),
        (Some(_), None) => return Err("state lacks a control state".into()),
        (None, Some(_)) => return Err("control state given but the system has no automaton".into()),
        (None, None) => {}
    }
    match (annotated, marker) {
        (true, None) => Err("state lacks a marker".into()),
        (false, Some(_)) => Err("marker given but the system is not annotated".into()),
        _ => Ok(()),
    }
}
