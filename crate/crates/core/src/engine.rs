//! Backward ideal saturation and the resilience queries built on it.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::order::{basis_subset, covered, minimize, Basis, OrderError, Wqo};

pub type BackendError = Box<dyn std::error::Error + Send + Sync>;

pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Environment variable overriding the iteration guard.
pub const MAX_ITERS_ENV: &str = "RESIL_MAX_ITERS";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error("backend failure: {0}")]
    Backend(BackendError),
    #[error("backend is not invertible: {0}")]
    NotInvertible(String),
    #[error("iteration guard of {0} steps exhausted before a fixpoint")]
    Exhausted(usize),
    #[error("forward exploration exceeded the cap of {0} states")]
    StateCap(usize),
    #[error("invalid instance: {0}")]
    Invalid(String),
}

/// A strongly well-structured transition system with an effective backward step.
pub trait Backend: Wqo + Sync {
    /// Basis of `↑pre(↑{s})`.
    fn pre_basis(&self, s: &Self::State) -> Result<Vec<Self::State>, BackendError>;

    /// One-step successors of `s`, deduplicated.
    fn post_step(&self, s: &Self::State) -> Result<Vec<Self::State>, BackendError>;

    /// The backend whose `pre` is this backend's `post`.
    fn inverted(&self) -> Result<Self, EngineError>
    where
        Self: Sized,
    {
        Err(EngineError::NotInvertible("backend provides no inverse".into()))
    }
}

/// Downward-closed set given by its membership predicate.
pub trait AntiIdeal<S>: Sync {
    fn contains(&self, s: &S) -> bool;
}

impl<S, F: Fn(&S) -> bool + Sync> AntiIdeal<S> for F {
    fn contains(&self, s: &S) -> bool {
        self(s)
    }
}

pub struct ResilienceInstance<'a, B: Backend> {
    pub backend: &'a B,
    /// Basis of `↑post*(s)`; only its part inside the bad set is used.
    pub b_post: Basis<B::State>,
    pub bad: &'a dyn AntiIdeal<B::State>,
    pub safety: Basis<B::State>,
    pub max_iters: usize,
}

impl<B: Backend> ResilienceInstance<'_, B> {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_iters == 0 {
            return Err(EngineError::Invalid("max_iters must be positive".into()));
        }
        for s in self.b_post.iter().chain(self.safety.iter()) {
            self.backend.check(s)?;
        }
        Ok(())
    }

    /// `B_post ∩ J`.
    pub fn targets(&self) -> Vec<B::State> {
        self.b_post.iter().filter(|s| self.bad.contains(s)).cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Found(usize),
    Unbounded,
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct Verdict<S> {
    pub outcome: Outcome,
    /// Number of backward steps computed.
    pub iterations: usize,
    /// `B⁰, B¹, …` up to the last computed step, when requested.
    pub trace: Option<Vec<Basis<S>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mu {
    Finite(usize),
    Infinite,
}

impl std::fmt::Display for Mu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mu::Finite(k) => write!(f, "{k}"),
            Mu::Infinite => f.write_str("infinity"),
        }
    }
}

/// Reads [`MAX_ITERS_ENV`], falling back to `default`.
pub fn max_iters_from_env(default: usize) -> usize {
    std::env::var(MAX_ITERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or(default)
}

fn pre_of_all<B: Backend>(states: &[B::State], backend: &B) -> Result<Vec<B::State>, EngineError> {
    let parts: Vec<Vec<B::State>> = states
        .par_iter()
        .map(|s| backend.pre_basis(s))
        .collect::<Result<_, _>>()
        .map_err(EngineError::Backend)?;
    let mut all: Vec<B::State> = parts.into_iter().flatten().collect();
    all.sort();
    all.dedup();
    Ok(all)
}

/// `Min(B0 ∪ PreBasis(Bk))`.
pub fn ideal_step<B: Backend>(
    bk: &Basis<B::State>,
    b0: &Basis<B::State>,
    backend: &B,
) -> Result<Basis<B::State>, EngineError> {
    let mut generators = pre_of_all(bk.elements(), backend)?;
    generators.extend(b0.iter().cloned());
    Ok(minimize(generators, backend))
}

/// Adds `candidates` to the antichain `current`, returning the new antichain
/// and the candidates that survived (the new frontier).
fn merge<W: Wqo + Sync>(
    current: &Basis<W::State>,
    candidates: Vec<W::State>,
    order: &W,
) -> (Basis<W::State>, Vec<W::State>) {
    let fresh: Vec<W::State> = candidates
        .into_par_iter()
        .filter(|c| !covered(current.elements(), c, order))
        .collect();
    let fresh = minimize(fresh, order).into_elements();
    if fresh.is_empty() {
        return (current.clone(), fresh);
    }
    let mut all: Vec<W::State> = current
        .iter()
        .filter(|b| !covered(&fresh, *b, order))
        .cloned()
        .collect();
    all.extend(fresh.iter().cloned());
    (Basis::from_antichain(all), fresh)
}

/// Iterates `B⁰ = Min(B0)`, `Bᵏ⁺¹ = Min(B0 ∪ PreBasis(Bᵏ))`.
///
/// Only elements that are new in `Bᵏ` are expanded: the predecessors of the
/// older ones are already covered by `Bᵏ`, so the ideal is the same.
pub struct Saturation<'a, B: Backend> {
    backend: &'a B,
    current: Basis<B::State>,
    frontier: Vec<B::State>,
    step: usize,
}

impl<'a, B: Backend> Saturation<'a, B> {
    pub fn new(b0: &Basis<B::State>, backend: &'a B) -> Self {
        let current = minimize(b0.iter().cloned(), backend);
        let frontier = current.elements().to_vec();
        Self { backend, current, frontier, step: 0 }
    }

    pub fn current(&self) -> &Basis<B::State> {
        &self.current
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Advances one step. Returns `false` when `↑Bᵏ⁺¹ = ↑Bᵏ`.
    pub fn advance(&mut self) -> Result<bool, EngineError> {
        let pre = pre_of_all(&self.frontier, self.backend)?;
        let (next, fresh) = merge(&self.current, pre, self.backend);
        self.step += 1;
        let grew = !fresh.is_empty();
        debug_assert_eq!(grew, !basis_subset(next.iter(), &self.current, self.backend));
        self.current = next;
        self.frontier = fresh;
        Ok(grew)
    }
}

/// Least `k` with `targets ⊆ ↑Bᵏ`.
fn first_cover<B: Backend>(
    targets: &[B::State],
    b0: &Basis<B::State>,
    backend: &B,
    max_iters: usize,
    keep_trace: bool,
) -> Result<Verdict<B::State>, EngineError> {
    let mut sat = Saturation::new(b0, backend);
    let mut trace = keep_trace.then(|| vec![sat.current().clone()]);
    loop {
        if basis_subset(targets, sat.current(), backend) {
            let k = sat.step_index();
            return Ok(Verdict { outcome: Outcome::Found(k), iterations: k, trace });
        }
        if sat.step_index() >= max_iters {
            return Ok(Verdict { outcome: Outcome::Exhausted, iterations: sat.step_index(), trace });
        }
        let grew = sat.advance()?;
        if let Some(t) = trace.as_mut() {
            t.push(sat.current().clone());
        }
        if !grew {
            return Ok(Verdict { outcome: Outcome::Unbounded, iterations: sat.step_index(), trace });
        }
    }
}

pub fn minimal_step<B: Backend>(
    inst: &ResilienceInstance<'_, B>,
    keep_trace: bool,
) -> Result<Verdict<B::State>, EngineError> {
    inst.validate()?;
    first_cover(&inst.targets(), &inst.safety, inst.backend, inst.max_iters, keep_trace)
}

/// Whether the instance is `k`-resilient. An exhausted guard is an error,
/// not a negative answer.
pub fn explicit_check<B: Backend>(inst: &ResilienceInstance<'_, B>, k: usize) -> Result<bool, EngineError> {
    inst.validate()?;
    let guard = k.min(inst.max_iters);
    let v = first_cover(&inst.targets(), &inst.safety, inst.backend, guard, false)?;
    match v.outcome {
        Outcome::Found(_) => Ok(true),
        Outcome::Unbounded => Ok(false),
        Outcome::Exhausted if k <= inst.max_iters => Ok(false),
        Outcome::Exhausted => Err(EngineError::Exhausted(inst.max_iters)),
    }
}

#[derive(Clone, Debug)]
pub struct PreStar<S> {
    pub basis: Basis<S>,
    /// Smallest `k₀` with `Iᵏ = Iᵏ⁰` for all `k ≥ k₀`.
    pub index: usize,
    pub trace: Vec<Basis<S>>,
}

pub fn pre_star<B: Backend>(
    b0: &Basis<B::State>,
    backend: &B,
    max_iters: usize,
) -> Result<PreStar<B::State>, EngineError> {
    for s in b0 {
        backend.check(s)?;
    }
    let mut sat = Saturation::new(b0, backend);
    let mut trace = vec![sat.current().clone()];
    loop {
        if sat.step_index() >= max_iters {
            return Err(EngineError::Exhausted(max_iters));
        }
        let grew = sat.advance()?;
        if !grew {
            let index = sat.step_index() - 1;
            return Ok(PreStar { basis: sat.current().clone(), index, trace });
        }
        trace.push(sat.current().clone());
    }
}

/// Least `k` with `A ∩ J ⊆ ↑Bᵏ`, or infinity.
pub fn mu<B: Backend>(
    a: &[B::State],
    bad: &dyn AntiIdeal<B::State>,
    b0: &Basis<B::State>,
    backend: &B,
    max_iters: usize,
) -> Result<Mu, EngineError> {
    let targets: Vec<B::State> = a.iter().filter(|s| bad.contains(s)).cloned().collect();
    let v = first_cover(&targets, b0, backend, max_iters, false)?;
    match v.outcome {
        Outcome::Found(k) => Ok(Mu::Finite(k)),
        Outcome::Unbounded => Ok(Mu::Infinite),
        Outcome::Exhausted => Err(EngineError::Exhausted(max_iters)),
    }
}

/// States reachable from `s` in at most `depth` steps.
pub fn forward_states<B: Backend>(
    s: &B::State,
    depth: usize,
    backend: &B,
    state_cap: usize,
) -> Result<Vec<B::State>, EngineError> {
    backend.check(s)?;
    let mut seen: BTreeSet<B::State> = BTreeSet::new();
    seen.insert(s.clone());
    let mut queue = VecDeque::from([(s.clone(), 0usize)]);
    while let Some((x, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        for y in backend.post_step(&x).map_err(EngineError::Backend)? {
            if seen.insert(y.clone()) {
                if seen.len() > state_cap {
                    return Err(EngineError::StateCap(state_cap));
                }
                queue.push_back((y, d + 1));
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// `k^ℓ_un`: μ of the minimized forward set up to depth `depth`.
pub fn under_approx<B: Backend>(
    s: &B::State,
    depth: usize,
    bad: &dyn AntiIdeal<B::State>,
    b0: &Basis<B::State>,
    backend: &B,
    state_cap: usize,
    max_iters: usize,
) -> Result<Mu, EngineError> {
    let reach = forward_states(s, depth, backend, state_cap)?;
    let basis = minimize(reach, backend);
    mu(basis.elements(), bad, b0, backend, max_iters)
}

/// `k_ov`: μ of a basis of `post*(↑{s})`, computed as backward saturation in
/// the inverted backend.
pub fn over_approx<B: Backend>(
    s: &B::State,
    bad: &dyn AntiIdeal<B::State>,
    b0: &Basis<B::State>,
    backend: &B,
    max_iters: usize,
) -> Result<Mu, EngineError> {
    let reach = post_star_upward(s, backend, max_iters)?;
    mu(reach.basis.elements(), bad, b0, backend, max_iters)
}

/// Basis of `post*(↑{s})`.
pub fn post_star_upward<B: Backend>(
    s: &B::State,
    backend: &B,
    max_iters: usize,
) -> Result<PreStar<B::State>, EngineError> {
    let inverse = backend.inverted()?;
    pre_star(&Basis::from_antichain(vec![s.clone()]), &inverse, max_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order::Componentwise;

    /// Vector addition system without control: each transition is (pre, post).
    struct Vas {
        dim: usize,
        transitions: Vec<(Vec<u64>, Vec<u64>)>,
    }

    impl Wqo for Vas {
        type State = Vec<u64>;
        fn leq(&self, a: &Vec<u64>, b: &Vec<u64>) -> bool {
            Componentwise::new(self.dim).leq(a, b)
        }
        fn check(&self, s: &Vec<u64>) -> Result<(), OrderError> {
            Componentwise::new(self.dim).check(s)
        }
        fn upper_bounds(&self, a: &Vec<u64>, b: &Vec<u64>) -> Result<Vec<Vec<u64>>, OrderError> {
            Componentwise::new(self.dim).upper_bounds(a, b)
        }
    }

    impl Backend for Vas {
        fn pre_basis(&self, s: &Vec<u64>) -> Result<Vec<Vec<u64>>, BackendError> {
            Ok(self
                .transitions
                .iter()
                .map(|(pre, post)| {
                    (0..self.dim).map(|i| s[i].saturating_sub(post[i]) + pre[i]).collect()
                })
                .collect())
        }
        fn post_step(&self, s: &Vec<u64>) -> Result<Vec<Vec<u64>>, BackendError> {
            let mut out: Vec<Vec<u64>> = self
                .transitions
                .iter()
                .filter(|(pre, _)| pre.iter().zip(s).all(|(p, x)| p <= x))
                .map(|(pre, post)| (0..self.dim).map(|i| s[i] - pre[i] + post[i]).collect())
                .collect();
            out.sort();
            out.dedup();
            Ok(out)
        }
        fn inverted(&self) -> Result<Self, EngineError> {
            Ok(Vas {
                dim: self.dim,
                transitions: self.transitions.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            })
        }
    }

    fn b(v: &[&[u64]]) -> Basis<Vec<u64>> {
        Basis::from_antichain(v.iter().map(|x| x.to_vec()).collect())
    }

    fn everything(_: &Vec<u64>) -> bool {
        true
    }

    #[test]
    fn empty_step_is_empty() {
        let vas = Vas { dim: 1, transitions: vec![(vec![1], vec![0])] };
        assert!(ideal_step(&Basis::empty(), &Basis::empty(), &vas).unwrap().is_empty());
    }

    #[test]
    fn vacuous_and_empty_ideal_verdicts() {
        let vas = Vas { dim: 1, transitions: vec![(vec![0], vec![1])] };
        let inst = ResilienceInstance {
            backend: &vas,
            b_post: Basis::empty(),
            bad: &everything,
            safety: b(&[&[3]]),
            max_iters: 10,
        };
        assert_eq!(minimal_step(&inst, false).unwrap().outcome, Outcome::Found(0));
        assert!(explicit_check(&inst, 0).unwrap());

        let inst = ResilienceInstance { b_post: b(&[&[0]]), safety: Basis::empty(), ..inst };
        assert_eq!(minimal_step(&inst, false).unwrap().outcome, Outcome::Unbounded);
    }

    #[test]
    fn counter_needs_k_steps() {
        // t: ∅ → p; reaching 3 tokens from 0 takes three steps.
        let vas = Vas { dim: 1, transitions: vec![(vec![0], vec![1])] };
        let inst = ResilienceInstance {
            backend: &vas,
            b_post: b(&[&[0]]),
            bad: &everything,
            safety: b(&[&[3]]),
            max_iters: 100,
        };
        let v = minimal_step(&inst, true).unwrap();
        assert_eq!(v.outcome, Outcome::Found(3));
        let trace = v.trace.unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(trace[2], b(&[&[1]]));
        assert!(explicit_check(&inst, 3).unwrap());
        assert!(!explicit_check(&inst, 2).unwrap());

        let tight = ResilienceInstance { max_iters: 2, ..inst };
        assert_eq!(minimal_step(&tight, false).unwrap().outcome, Outcome::Exhausted);
    }

    #[test]
    fn pre_star_examples() {
        let vas = Vas { dim: 2, transitions: vec![(vec![1, 0], vec![0, 1])] };
        let whole = pre_star(&b(&[&[0, 0]]), &vas, 10).unwrap();
        assert_eq!(whole.index, 0);
        assert_eq!(whole.basis, b(&[&[0, 0]]));

        // t consumes the only token: nothing new can cover (1).
        let drain = Vas { dim: 1, transitions: vec![(vec![1], vec![0])] };
        let r = pre_star(&b(&[&[1]]), &drain, 10).unwrap();
        assert_eq!((r.index, r.basis), (0, b(&[&[1]])));

        let r = pre_star(&b(&[&[0, 2]]), &vas, 10).unwrap();
        assert_eq!(r.basis, b(&[&[0, 2], &[1, 1], &[2, 0]]));
        assert_eq!(r.index, 2);
    }

    #[test]
    fn incremental_saturation_matches_plain_steps() {
        let vas = Vas {
            dim: 2,
            transitions: vec![
                (vec![2, 0], vec![0, 1]),
                (vec![0, 1], vec![1, 0]),
                (vec![1, 1], vec![0, 3]),
            ],
        };
        let b0 = b(&[&[0, 4], &[3, 1]]);
        let mut sat = Saturation::new(&b0, &vas);
        let mut plain = b0.clone();
        for _ in 0..8 {
            sat.advance().unwrap();
            plain = ideal_step(&plain, &b0, &vas).unwrap();
            assert_eq!(sat.current(), &plain);
        }
    }

    #[test]
    fn stop_condition_is_stable() {
        let vas = Vas { dim: 2, transitions: vec![(vec![1, 0], vec![0, 1]), (vec![0, 2], vec![1, 0])] };
        let b0 = b(&[&[0, 3]]);
        let r = pre_star(&b0, &vas, 100).unwrap();
        let mut x = r.basis.clone();
        for _ in 0..10 {
            x = ideal_step(&x, &b0, &vas).unwrap();
            assert_eq!(x, r.basis);
        }
    }

    #[test]
    fn mu_examples() {
        let vas = Vas { dim: 1, transitions: vec![(vec![0], vec![1])] };
        assert_eq!(mu(&[], &everything, &b(&[&[2]]), &vas, 10).unwrap(), Mu::Finite(0));
        let drain = Vas { dim: 1, transitions: vec![(vec![1], vec![0])] };
        assert_eq!(mu(&[vec![0]], &everything, &b(&[&[2]]), &drain, 10).unwrap(), Mu::Infinite);
    }

    #[test]
    fn over_approx_creation() {
        // t: ∅ → p, s = (0), I = ↑(1), everything bad: one step from anywhere.
        let vas = Vas { dim: 1, transitions: vec![(vec![0], vec![1])] };
        let k = over_approx(&vec![0], &everything, &b(&[&[1]]), &vas, 10).unwrap();
        assert_eq!(k, Mu::Finite(1));
        let none = Vas { dim: 1, transitions: vec![] };
        let k = over_approx(&vec![0], &everything, &b(&[&[1]]), &none, 10).unwrap();
        assert_eq!(k, Mu::Infinite);
        assert_eq!(over_approx(&vec![2], &everything, &b(&[&[1]]), &none, 10).unwrap(), Mu::Finite(0));
    }

    #[test]
    fn under_approx_trivia() {
        let vas = Vas { dim: 1, transitions: vec![(vec![0], vec![1])] };
        let outside = |s: &Vec<u64>| s[0] > 5;
        assert_eq!(under_approx(&vec![0], 0, &outside, &b(&[&[3]]), &vas, 100, 10).unwrap(), Mu::Finite(0));
        assert_eq!(under_approx(&vec![4], 0, &everything, &b(&[&[3]]), &vas, 100, 10).unwrap(), Mu::Finite(0));
        assert!(matches!(
            under_approx(&vec![0], 50, &everything, &b(&[&[3]]), &vas, 10, 10),
            Err(EngineError::StateCap(10))
        ));
    }
}
