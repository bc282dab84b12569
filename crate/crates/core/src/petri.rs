//! Petri-net backend.

use thiserror::Error;

use crate::engine::{Backend, BackendError, EngineError};
use crate::joint::{self, check_control, ControlView, Marker, Move, Owner, ResolvedAutomaton};
use crate::order::{OrderError, Wqo};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PetriError {
    #[error("unknown transition index {0}")]
    UnknownTransition(usize),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("marking dimension {found} does not match {expected} places")]
    Dimension { expected: usize, found: usize },
    #[error("duplicate place `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition `{0}`")]
    DuplicateTransition(String),
    #[error("transition `{name}` has {found} weights for {expected} places")]
    WeightDimension { name: String, expected: usize, found: usize },
    #[error(transparent)]
    Joint(#[from] joint::JointError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transition {
    pub name: String,
    pub pre: Vec<u64>,
    pub post: Vec<u64>,
    pub owner: Owner,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PetriNet {
    pub places: Vec<String>,
    pub transitions: Vec<Transition>,
}

/// Token vector with optional control state and marker.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Marking {
    pub tokens: Vec<u64>,
    pub state: Option<usize>,
    pub marker: Option<Marker>,
}

impl Marking {
    pub fn plain(tokens: Vec<u64>) -> Self {
        Self { tokens, state: None, marker: None }
    }

    pub fn at(tokens: Vec<u64>, state: usize) -> Self {
        Self { tokens, state: Some(state), marker: None }
    }
}

impl ControlView for Marking {
    fn control_state(&self) -> Option<usize> {
        self.state
    }
    fn marker(&self) -> Option<Marker> {
        self.marker
    }
}

impl PetriNet {
    pub fn validate(&self) -> Result<(), PetriError> {
        let n = self.places.len();
        for (i, p) in self.places.iter().enumerate() {
            if self.places[..i].contains(p) {
                return Err(PetriError::DuplicatePlace(p.clone()));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if self.transitions[..i].iter().any(|u| u.name == t.name) {
                return Err(PetriError::DuplicateTransition(t.name.clone()));
            }
            for w in [&t.pre, &t.post] {
                if w.len() != n {
                    return Err(PetriError::WeightDimension { name: t.name.clone(), expected: n, found: w.len() });
                }
            }
        }
        Ok(())
    }

    pub fn transition_index(&self, name: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.name == name)
    }

    fn transition(&self, t: usize) -> Result<&Transition, PetriError> {
        self.transitions.get(t).ok_or(PetriError::UnknownTransition(t))
    }

    fn check_dim(&self, m: &Marking) -> Result<(), PetriError> {
        if m.tokens.len() != self.places.len() {
            return Err(PetriError::Dimension { expected: self.places.len(), found: m.tokens.len() });
        }
        Ok(())
    }
}

pub fn enabled(net: &PetriNet, m: &Marking, t: usize) -> Result<bool, PetriError> {
    let tr = net.transition(t)?;
    net.check_dim(m)?;
    Ok(tr.pre.iter().zip(&m.tokens).all(|(w, x)| w <= x))
}

/// Fires `t`, keeping the control components of `m` unchanged.
pub fn fire(net: &PetriNet, m: &Marking, t: usize) -> Result<Marking, PetriError> {
    if !enabled(net, m, t)? {
        return Err(PetriError::NotEnabled(net.transitions[t].name.clone()));
    }
    let tr = &net.transitions[t];
    let tokens = m.tokens.iter().zip(&tr.pre).zip(&tr.post).map(|((x, a), b)| x - a + b).collect();
    Ok(Marking { tokens, ..m.clone() })
}

/// Componentwise order on tokens, equality on the control components.
pub fn leq_pn(a: &Marking, b: &Marking) -> Result<bool, PetriError> {
    if a.tokens.len() != b.tokens.len() {
        return Err(PetriError::Dimension { expected: a.tokens.len(), found: b.tokens.len() });
    }
    Ok(leq_unchecked(a, b))
}

fn leq_unchecked(a: &Marking, b: &Marking) -> bool {
    a.state == b.state
        && a.marker == b.marker
        && a.tokens.len() == b.tokens.len()
        && a.tokens.iter().zip(&b.tokens).all(|(x, y)| x <= y)
}

/// The least marking that enables `t` and whose firing covers `m`:
/// `max(m − post(t), 0) + pre(t)`.
pub fn pre_basis_t(net: &PetriNet, m: &Marking, t: usize) -> Result<Marking, PetriError> {
    let tr = net.transition(t)?;
    net.check_dim(m)?;
    let tokens = m.tokens.iter().zip(&tr.pre).zip(&tr.post).map(|((x, a), b)| x.saturating_sub(*b) + a).collect();
    Ok(Marking { tokens, ..m.clone() })
}

/// Swaps pre and post of every transition.
pub fn invert(net: &PetriNet) -> PetriNet {
    PetriNet {
        places: net.places.clone(),
        transitions: net
            .transitions
            .iter()
            .map(|t| Transition { name: t.name.clone(), pre: t.post.clone(), post: t.pre.clone(), owner: t.owner })
            .collect(),
    }
}

/// A Petri net, optionally in product with a control automaton and annotated
/// with markers.
#[derive(Clone, Debug)]
pub struct PetriSystem {
    net: PetriNet,
    automaton: Option<ResolvedAutomaton>,
    annotated: bool,
    moves: Vec<Move>,
    inverted: bool,
}

impl PetriSystem {
    pub fn new(net: PetriNet, automaton: Option<ResolvedAutomaton>, annotated: bool) -> Result<Self, PetriError> {
        net.validate()?;
        let owners: Vec<Owner> = net.transitions.iter().map(|t| t.owner).collect();
        let moves = joint::moves(&owners, automaton.as_ref(), annotated);
        Ok(Self { net, automaton, annotated, moves, inverted: false })
    }

    pub fn net(&self) -> &PetriNet {
        &self.net
    }

    pub fn automaton(&self) -> Option<&ResolvedAutomaton> {
        self.automaton.as_ref()
    }

    pub fn annotated(&self) -> bool {
        self.annotated
    }

    pub fn is_inverted(&self) -> bool {
        self.inverted
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    /// Successors together with the transition fired, for oracles and traces.
    pub fn successors(&self, s: &Marking) -> Vec<(usize, Marking)> {
        let mut out = Vec::new();
        for mv in &self.moves {
            if mv.from != s.state || mv.pre_marker != s.marker {
                continue;
            }
            if let Ok(mut next) = fire(&self.net, s, mv.rule) {
                next.state = mv.to;
                next.marker = mv.post_marker;
                out.push((mv.rule, next));
            }
        }
        out
    }
}

impl Wqo for PetriSystem {
    type State = Marking;

    fn leq(&self, a: &Marking, b: &Marking) -> bool {
        leq_unchecked(a, b)
    }

    fn check(&self, s: &Marking) -> Result<(), OrderError> {
        self.net.check_dim(s).map_err(|_| OrderError::Dimension { expected: self.net.places.len(), found: s.tokens.len() })?;
        check_control(s.state, s.marker, self.automaton.as_ref(), self.annotated).map_err(OrderError::Foreign)
    }

    fn upper_bounds(&self, a: &Marking, b: &Marking) -> Result<Vec<Marking>, OrderError> {
        self.check(a)?;
        self.check(b)?;
        if a.state != b.state || a.marker != b.marker {
            return Ok(vec![]);
        }
        let tokens = a.tokens.iter().zip(&b.tokens).map(|(x, y)| *x.max(y)).collect();
        Ok(vec![Marking { tokens, ..a.clone() }])
    }
}

impl Backend for PetriSystem {
    fn pre_basis(&self, s: &Marking) -> Result<Vec<Marking>, BackendError> {
        let mut out = Vec::new();
        for mv in &self.moves {
            if mv.to != s.state || mv.post_marker != s.marker {
                continue;
            }
            let mut p = pre_basis_t(&self.net, s, mv.rule)?;
            p.state = mv.from;
            p.marker = mv.pre_marker;
            out.push(p);
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn post_step(&self, s: &Marking) -> Result<Vec<Marking>, BackendError> {
        let mut out: Vec<Marking> = self.successors(s).into_iter().map(|(_, m)| m).collect();
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn inverted(&self) -> Result<Self, EngineError> {
        Ok(Self {
            net: invert(&self.net),
            automaton: self.automaton.clone(),
            annotated: self.annotated,
            moves: self.moves.iter().map(|m| m.reversed()).collect(),
            inverted: !self.inverted,
        })
    }
}
