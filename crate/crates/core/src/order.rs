//! Well-quasi-orders, antichains and ideal bases.
//!
//! An upward-closed set (an *ideal*) is represented by its finite basis: the
//! set of its minimal elements. Every state type used by the engine carries a
//! canonical encoding, and [`Ord`] on that encoding fixes the order in which
//! bases are stored and reported, so the same ideal always prints the same way.

use std::fmt::Debug;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrderError {
    #[error("state dimension {found} does not match the expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("state does not belong to this backend: {0}")]
    Foreign(String),
    #[error("overlap guard exceeded: {nodes} nodes > cap {cap}")]
    OverlapCap { nodes: usize, cap: usize },
}

/// A decidable well-quasi-order over a state type.
///
/// States are expected to be in canonical form, so that `a == b` implies
/// `leq(a, b) && leq(b, a)` and the derived [`Ord`] is a deterministic
/// total order on canonical encodings.
pub trait Wqo {
    type State: Clone + Ord + Hash + Debug + Send + Sync;

    fn leq(&self, a: &Self::State, b: &Self::State) -> bool;

    /// Rejects states that are not over this order's carrier (wrong dimension,
    /// unknown control state, ...).
    fn check(&self, _s: &Self::State) -> Result<(), OrderError> {
        Ok(())
    }

    /// A finite generating set of `↑{a} ∩ ↑{b}`.
    fn upper_bounds(
        &self,
        a: &Self::State,
        b: &Self::State,
    ) -> Result<Vec<Self::State>, OrderError>;
}

/// Finite antichain of canonical states, sorted by canonical encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Basis<S> {
    elements: Vec<S>,
}

impl<S> Default for Basis<S> {
    fn default() -> Self {
        Self { elements: Vec::new() }
    }
}

impl<S> Basis<S> {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn elements(&self) -> &[S] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<S> {
        self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.elements.iter()
    }
}

impl<'a, S> IntoIterator for &'a Basis<S> {
    type Item = &'a S;
    type IntoIter = std::slice::Iter<'a, S>;

    fn into_iter(self) -> Self::IntoIter {
        self.elements.iter()
    }
}

impl<S: Ord> Basis<S> {
    /// Wraps elements that the caller already knows to be an antichain.
    /// Sorts and deduplicates; does not check incomparability.
    pub fn from_antichain(mut elements: Vec<S>) -> Self {
        elements.sort();
        elements.dedup();
        Self { elements }
    }
}

/// Minimal elements of `states`.
///
/// `↑result = ↑states`, the result is pairwise incomparable and sorted. Among
/// mutually comparable elements the first in canonical order is kept.
pub fn minimize<W: Wqo>(states: impl IntoIterator<Item = W::State>, order: &W) -> Basis<W::State> {
    let mut sorted: Vec<W::State> = states.into_iter().collect();
    sorted.sort();
    sorted.dedup();

    let mut kept: Vec<W::State> = Vec::with_capacity(sorted.len());
    for candidate in sorted {
        if kept.iter().any(|k| order.leq(k, &candidate)) {
            continue;
        }
        kept.retain(|k| !order.leq(&candidate, k));
        kept.push(candidate);
    }
    Basis { elements: kept }
}

/// `s ∈ ↑basis`.
pub fn covers<W: Wqo>(basis: &Basis<W::State>, s: &W::State, order: &W) -> Result<bool, OrderError> {
    order.check(s)?;
    Ok(basis.iter().any(|b| order.leq(b, s)))
}

/// Unchecked variant of [`covers`] for hot loops over already validated states.
pub(crate) fn covered<W: Wqo>(basis: &[W::State], s: &W::State, order: &W) -> bool {
    basis.iter().any(|b| order.leq(b, s))
}

/// Every element of `states` lies in `↑basis`.
pub fn basis_subset<'a, W: Wqo>(
    states: impl IntoIterator<Item = &'a W::State>,
    basis: &Basis<W::State>,
    order: &W,
) -> bool
where
    W::State: 'a,
{
    states.into_iter().all(|s| covered(basis.elements(), s, order))
}

/// Basis of `↑b1 ∩ ↑b2`.
pub fn ideal_intersection_basis<W: Wqo>(
    b1: &Basis<W::State>,
    b2: &Basis<W::State>,
    order: &W,
) -> Result<Basis<W::State>, OrderError> {
    let mut generators = Vec::new();
    for a in b1 {
        for b in b2 {
            generators.extend(order.upper_bounds(a, b)?);
        }
    }
    Ok(minimize(generators, order))
}

/// Componentwise order on plain natural-number vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Componentwise {
    pub dimension: usize,
}

impl Componentwise {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }
}

impl Wqo for Componentwise {
    type State = Vec<u64>;

    fn leq(&self, a: &Vec<u64>, b: &Vec<u64>) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x <= y)
    }

    fn check(&self, s: &Vec<u64>) -> Result<(), OrderError> {
        if s.len() != self.dimension {
            return Err(OrderError::Dimension { expected: self.dimension, found: s.len() });
        }
        Ok(())
    }

    fn upper_bounds(&self, a: &Vec<u64>, b: &Vec<u64>) -> Result<Vec<Vec<u64>>, OrderError> {
        self.check(a)?;
        self.check(b)?;
        Ok(vec![a.iter().zip(b).map(|(x, y)| *x.max(y)).collect()])
    }
}
