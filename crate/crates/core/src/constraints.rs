//! Basic positive and negative constraints, their ideal bases and the bad
//! sets (anti-ideals) used by the engine.

use thiserror::Error;

use crate::engine::AntiIdeal;
use crate::gts::{embeds, Graph, GraphState, GtsSystem};
use crate::joint::{ControlView, Marker};
use crate::order::{covered, ideal_intersection_basis, minimize, Basis, OrderError, Wqo};
use crate::petri::{Marking, PetriSystem};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("constraint mixes positive and negative parts")]
    MixedPolarity,
    #[error("empty conjunction or disjunction")]
    Empty,
    #[error("expected a {expected} constraint")]
    WrongPolarity { expected: &'static str },
    #[error("pattern has no state in the graph class")]
    OutsideClass,
    #[error("pattern does not fit the system: {0}")]
    Shape(String),
    #[error(transparent)]
    Order(#[from] OrderError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Constraint<P> {
    Exists(P),
    NotExists(P),
    And(Vec<Constraint<P>>),
    Or(Vec<Constraint<P>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl<P> Constraint<P> {
    pub fn polarity(&self) -> Result<Polarity, ConstraintError> {
        match self {
            Constraint::Exists(_) => Ok(Polarity::Positive),
            Constraint::NotExists(_) => Ok(Polarity::Negative),
            Constraint::And(cs) | Constraint::Or(cs) => {
                let mut it = cs.iter().map(Constraint::polarity);
                let first = it.next().ok_or(ConstraintError::Empty)??;
                for p in it {
                    if p? != first {
                        return Err(ConstraintError::MixedPolarity);
                    }
                }
                Ok(first)
            }
        }
    }

    fn patterns(&self) -> Vec<&P> {
        match self {
            Constraint::Exists(p) | Constraint::NotExists(p) => vec![p],
            Constraint::And(cs) | Constraint::Or(cs) => cs.iter().flat_map(Constraint::patterns).collect(),
        }
    }
}

/// A state pattern: a marking or graph that must be covered, optionally
/// pinned to a control state and marker. Unpinned components match anything.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern<T> {
    pub body: T,
    pub state: Option<usize>,
    pub marker: Option<Marker>,
}

impl<T> Pattern<T> {
    pub fn anywhere(body: T) -> Self {
        Self { body, state: None, marker: None }
    }
}

/// Backends whose states can be described by patterns.
pub trait PatternSpace: Wqo {
    type Body;

    /// `s ⊨ ∃p`.
    fn pattern_holds(&self, p: &Pattern<Self::Body>, s: &Self::State) -> bool;

    /// Minimal states satisfying `∃p`.
    fn pattern_basis(&self, p: &Pattern<Self::Body>) -> Result<Vec<Self::State>, ConstraintError>;
}

fn control_matches<S: ControlView, T>(p: &Pattern<T>, s: &S) -> bool {
    p.state.is_none_or(|q| s.control_state() == Some(q)) && p.marker.is_none_or(|m| s.marker() == Some(m))
}

type Control = (Option<usize>, Option<Marker>);

/// Concrete control components a pattern stands for.
fn control_choices<T>(
    p: &Pattern<T>,
    states: Option<usize>,
    annotated: bool,
) -> Result<Vec<Control>, ConstraintError> {
    let qs: Vec<Option<usize>> = match (p.state, states) {
        (Some(q), Some(n)) if q < n => vec![Some(q)],
        (Some(q), _) => return Err(ConstraintError::Shape(format!("control state {q} does not exist"))),
        (None, Some(n)) => (0..n).map(Some).collect(),
        (None, None) => vec![None],
    };
    let ms: Vec<Option<Marker>> = match (p.marker, annotated) {
        (Some(m), true) => vec![Some(m)],
        (Some(_), false) => return Err(ConstraintError::Shape("marker given but the system is not annotated".into())),
        (None, true) => Marker::ALL.into_iter().map(Some).collect(),
        (None, false) => vec![None],
    };
    Ok(qs.iter().flat_map(|q| ms.iter().map(move |m| (*q, *m))).collect())
}

impl PatternSpace for PetriSystem {
    type Body = Vec<u64>;

    fn pattern_holds(&self, p: &Pattern<Vec<u64>>, s: &Marking) -> bool {
        control_matches(p, s) && p.body.len() == s.tokens.len() && p.body.iter().zip(&s.tokens).all(|(a, b)| a <= b)
    }

    fn pattern_basis(&self, p: &Pattern<Vec<u64>>) -> Result<Vec<Marking>, ConstraintError> {
        let n = self.net().places.len();
        if p.body.len() != n {
            return Err(OrderError::Dimension { expected: n, found: p.body.len() }.into());
        }
        let states = self.automaton().map(|a| a.states.len());
        Ok(control_choices(p, states, self.annotated())?
            .into_iter()
            .map(|(state, marker)| Marking { tokens: p.body.clone(), state, marker })
            .collect())
    }
}

impl PatternSpace for GtsSystem {
    type Body = Graph;

    fn pattern_holds(&self, p: &Pattern<Graph>, s: &GraphState) -> bool {
        control_matches(p, s) && embeds(&self.class().normalize(&p.body), s.graph())
    }

    fn pattern_basis(&self, p: &Pattern<Graph>) -> Result<Vec<GraphState>, ConstraintError> {
        p.body.validate().map_err(|e| ConstraintError::Shape(e.to_string()))?;
        let states = self.automaton().map(|a| a.states.len());
        let choices = control_choices(p, states, self.annotated())?;
        let g = self.class().complete(&p.body).ok_or(ConstraintError::OutsideClass)?;
        Ok(choices.into_iter().map(|(q, m)| GraphState::new(g.clone(), q, m)).collect())
    }
}

/// Standard semantics of a constraint on a state.
pub fn satisfies<W: PatternSpace>(space: &W, s: &W::State, c: &Constraint<Pattern<W::Body>>) -> bool {
    match c {
        Constraint::Exists(p) => space.pattern_holds(p, s),
        Constraint::NotExists(p) => !space.pattern_holds(p, s),
        Constraint::And(cs) => cs.iter().all(|c| satisfies(space, s, c)),
        Constraint::Or(cs) => cs.iter().any(|c| satisfies(space, s, c)),
    }
}

/// Basis of the ideal of states satisfying a positive constraint.
pub fn ideal_basis_of<W: PatternSpace>(
    space: &W,
    c: &Constraint<Pattern<W::Body>>,
) -> Result<Basis<W::State>, ConstraintError> {
    if c.polarity()? != Polarity::Positive {
        return Err(ConstraintError::WrongPolarity { expected: "positive" });
    }
    positive_basis(space, c)
}

fn positive_basis<W: PatternSpace>(
    space: &W,
    c: &Constraint<Pattern<W::Body>>,
) -> Result<Basis<W::State>, ConstraintError> {
    match c {
        Constraint::Exists(p) => Ok(minimize(space.pattern_basis(p)?, space)),
        Constraint::NotExists(_) => Err(ConstraintError::WrongPolarity { expected: "positive" }),
        Constraint::Or(cs) => {
            let mut all = Vec::new();
            for c in cs {
                all.extend(positive_basis(space, c)?.into_elements());
            }
            Ok(minimize(all, space))
        }
        Constraint::And(cs) => {
            let mut acc: Option<Basis<W::State>> = None;
            for c in cs {
                let b = positive_basis(space, c)?;
                acc = Some(match acc {
                    None => b,
                    Some(a) => ideal_intersection_basis(&a, &b, space)?,
                });
            }
            acc.ok_or(ConstraintError::Empty)
        }
    }
}

/// How the bad set `J` is given.
#[derive(Clone, Debug)]
pub enum BadSet<S, B> {
    /// Adverse conditions: control state in `states` and marker in `markers`;
    /// an absent list does not restrict.
    Control { states: Option<Vec<usize>>, markers: Option<Vec<Marker>> },
    /// Error states: everything outside the safety ideal.
    Complement(Basis<S>),
    /// A negative constraint.
    Negative(Constraint<Pattern<B>>),
}

pub type BadPredicate<'a, S> = Box<dyn Fn(&S) -> bool + Send + Sync + 'a>;

pub fn anti_ideal_of<'a, W>(space: &'a W, spec: BadSet<W::State, W::Body>) -> Result<BadPredicate<'a, W::State>, ConstraintError>
where
    W: PatternSpace + Sync,
    W::State: ControlView + 'a,
    W::Body: Send + Sync + 'a,
{
    Ok(match spec {
        BadSet::Control { states, markers } => Box::new(move |s: &W::State| {
            states.as_ref().is_none_or(|qs| s.control_state().is_some_and(|q| qs.contains(&q)))
                && markers.as_ref().is_none_or(|ms| s.marker().is_some_and(|m| ms.contains(&m)))
        }),
        BadSet::Complement(safety) => {
            Box::new(move |s: &W::State| !covered(safety.elements(), s, space))
        }
        BadSet::Negative(c) => {
            if c.polarity()? != Polarity::Negative {
                return Err(ConstraintError::WrongPolarity { expected: "negative" });
            }
            for p in c.patterns() {
                space.pattern_basis(p)?;
            }
            Box::new(move |s: &W::State| satisfies(space, s, &c))
        }
    })
}

/// Lets a boxed predicate be passed where the engine expects an anti-ideal.
pub fn as_anti_ideal<'a, S>(p: &'a BadPredicate<'a, S>) -> &'a dyn AntiIdeal<S> {
    p
}
