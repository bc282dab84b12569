//! Acceptance criteria 1-7. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use resil::compile::{compile, Model};
use resil::model::*;
use resil_core::constraints::{anti_ideal_of, as_anti_ideal, ideal_basis_of, satisfies, Constraint, Pattern};
use resil_core::engine::{
    minimal_step, over_approx, pre_star, under_approx, Mu, Outcome, ResilienceInstance, Saturation,
};
use resil_core::gts::{embeds, pre_step_rule, small_graphs, Graph, GraphClass, GtsSystem, Label, RuleSPO};
use resil_core::joint::Owner;
use resil_core::order::{covers, minimize, Componentwise};
use resil_core::petri::{pre_basis_t, Marking, PetriNet, Transition};

// Pinned tolerances and sample sizes.
const SUPPLY_CHAIN_BUDGET: Duration = Duration::from_secs(10);
const PATH_GAME_BUDGET: Duration = Duration::from_secs(30 * 60);
const MIN_RANDOM_MODELS: usize = 50;
const RANDOM_MODELS: usize = 80;
const ORACLE_STATE_CAP: usize = 10_000;
const MIN_PRE_BASIS_CASES: usize = 200;
const GRID_BOUND: u64 = 4;
const MIN_RANDOM_RULES: usize = 50;
const TARGET_NODES: usize = 4;
const UNIVERSE_NODES: usize = 5;
const UNDER_DEPTH_LIMIT: usize = 20;
const STABILITY_EXTRA_STEPS: usize = 10;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn resil(args: &[&str]) -> Result<(Value, i32), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_resil")).args(args).output().map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_slice(&out.stdout)
        .map_err(|e| format!("bad report from resil {args:?}: {e}; stderr: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok((v, out.status.code().unwrap_or(-1)))
}

fn with_bad(path: &Path, bad: Value, dir: &tempfile::TempDir) -> PathBuf {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["bad"] = bad;
    let out = dir.path().join(path.file_name().unwrap());
    std::fs::write(&out, serde_json::to_string(&doc).unwrap()).unwrap();
    out
}

// ---------------------------------------------------------------------------
// 1. Supply chain

fn vectors(states: &Value, places: &[&str]) -> BTreeSet<(Vec<u64>, String)> {
    states
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let m = &s["marking"];
            let v = places.iter().map(|p| m.get(*p).and_then(Value::as_u64).unwrap_or(0)).collect();
            (v, s["state"].as_str().unwrap_or("").to_string())
        })
        .collect()
}

fn criterion_1() -> Check {
    let places = ["P", "W", "S1", "S2"];
    let t0 = Instant::now();
    let path = fixture("supplychain.json");
    let (report, code) = resil(&["check", path.to_str().unwrap(), "--trace"])?;
    let elapsed = t0.elapsed();
    ensure(code == 0 && report["verdict"] == "found", || format!("verdict {report}"))?;
    ensure(report["k_min"] == 6, || format!("k_min = {}", report["k_min"]))?;
    let at_q0 = |vs: &[[u64; 4]]| vs.iter().map(|v| (v.to_vec(), "e".to_string())).collect::<BTreeSet<_>>();
    let b3 = [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0], [0, 3, 0, 0]];
    let expected = [
        at_q0(&[[0, 1, 1, 1], [0, 2, 0, 1], [0, 2, 1, 0]]),
        at_q0(&[[0, 0, 1, 1], [0, 2, 0, 1], [0, 2, 1, 0], [0, 3, 0, 0]]),
        at_q0(&b3),
        at_q0(&b3),
        at_q0(&b3),
        at_q0(&[[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0], [0, 3, 0, 0], [0, 0, 2, 0], [0, 0, 0, 2]]),
    ];
    let bases = report["bases"].as_array().ok_or("no bases in trace")?;
    for (k, want) in expected.iter().enumerate() {
        let got = vectors(&bases[k + 1]["in_bad"], &places);
        ensure(&got == want, || format!("B{} on J differs: {got:?}", k + 1))?;
    }
    let (explicit, _) = resil(&["check", path.to_str().unwrap(), "--k", "5"])?;
    ensure(explicit["explicit"] == false, || "5-resilience should fail".into())?;
    ensure(elapsed < SUPPLY_CHAIN_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("k_min = 6, B1..B6 on J match exactly, --k 5 is false ({elapsed:.2?})"))
}

// ---------------------------------------------------------------------------
// 2. Path game

fn criterion_2() -> Check {
    let t0 = Instant::now();
    let (report, code) = resil(&["check", fixture("pathgame.json").to_str().unwrap(), "--trace"])?;
    let elapsed = t0.elapsed();
    ensure(code == 0 && report["k_min"] == 13, || format!("verdict {} k_min {}", report["verdict"], report["k_min"]))?;
    let b12 = report["bases"][12]["elements"].as_array().ok_or("no B12")?;
    let on = |q: &str| b12.iter().filter(|s| s["state"] == q).count();
    let (s, e) = (on("s"), on("e"));
    ensure(s == 12 && e == 2, || format!("B12 has {s} elements on s and {e} on e, expected 12 and 2"))?;
    let b13 = report["bases"][13]["in_bad"].as_array().ok_or("no B13")?;
    ensure(b13.len() == 1, || format!("B13 on J has {} elements", b13.len()))?;
    ensure(elapsed < PATH_GAME_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("k_min = 13, B12 splits 12 on s / 2 on e ({elapsed:.2?})"))
}

// ---------------------------------------------------------------------------
// Random joint Petri models and the forward oracle

#[derive(Clone, Debug)]
struct RandNet {
    places: usize,
    /// (pre, post, env-owned)
    transitions: Vec<(Vec<u64>, Vec<u64>, bool)>,
    /// (control states, edges)
    automaton: Option<(usize, Vec<AutEdge>)>,
    annotate: bool,
    start: Vec<u64>,
    safety: Vec<(Vec<u64>, Option<usize>)>,
    /// None: error mode. Some((states, env marker only)): adverse mode.
    adverse: Option<(Option<Vec<usize>>, bool)>,
}

/// (from, to, selected transitions)
type AutEdge = (usize, usize, Vec<usize>);

/// (tokens, control state, marker: 0 top, 1 sys, 2 env)
type OState = (Vec<u64>, Option<usize>, Option<u8>);

impl RandNet {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let places = rng.gen_range(1..=3);
        let vec = |rng: &mut ChaCha8Rng, p: f64, hi: u64| -> Vec<u64> {
            (0..places).map(|_| if rng.gen_bool(p) { rng.gen_range(1..=hi) } else { 0 }).collect()
        };
        // Mostly token-non-increasing transitions keep the state space finite.
        let transition = |rng: &mut ChaCha8Rng| loop {
            let (pre, post) = (vec(rng, 0.5, 2), vec(rng, 0.4, 2));
            if post.iter().sum::<u64>() <= pre.iter().sum::<u64>() || rng.gen_bool(0.15) {
                return (pre, post, rng.gen_bool(0.4));
            }
        };
        let transitions: Vec<_> = (0..rng.gen_range(2..=5)).map(|_| transition(rng)).collect();
        let automaton = rng.gen_bool(0.7).then(|| {
            let n = rng.gen_range(1..=3);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if rng.gen_bool(0.5) {
                        let sel: Vec<usize> = (0..transitions.len()).filter(|_| rng.gen_bool(0.5)).collect();
                        edges.push((a, b, sel));
                    }
                }
            }
            (n, edges)
        });
        let annotate = rng.gen_bool(0.3);
        let start = vec(rng, 0.8, 3);
        let nstates = automaton.as_ref().map(|a| a.0);
        let safety = (0..rng.gen_range(1..=2))
            .map(|_| (vec(rng, 0.6, 3), nstates.filter(|_| rng.gen_bool(0.4)).map(|n| rng.gen_range(0..n))))
            .collect();
        let adverse = match (nstates, annotate, rng.gen_range(0..3)) {
            (_, _, 0) => None,
            (Some(n), ann, _) => {
                let states = Some((0..n).filter(|_| rng.gen_bool(0.5)).collect());
                Some((states, ann && rng.gen_bool(0.5)))
            }
            (None, true, _) => Some((None, true)),
            (None, false, _) => None,
        };
        RandNet { places, transitions, automaton, annotate, start, safety, adverse }
    }

    fn initial(&self) -> OState {
        (self.start.clone(), self.automaton.as_ref().map(|_| 0), self.annotate.then_some(0))
    }

    fn successors(&self, s: &OState) -> Vec<OState> {
        let fire = |t: usize| -> Option<Vec<u64>> {
            let (pre, post, _) = &self.transitions[t];
            s.0.iter().zip(pre).zip(post).map(|((m, a), b)| m.checked_sub(*a).map(|x| x + b)).collect()
        };
        let marker = |t: usize| self.annotate.then_some(if self.transitions[t].2 { 2 } else { 1 });
        let mut out = Vec::new();
        match &self.automaton {
            None => {
                for t in 0..self.transitions.len() {
                    if let Some(m) = fire(t) {
                        out.push((m, None, marker(t)));
                    }
                }
            }
            Some((_, edges)) => {
                for (a, b, sel) in edges {
                    if s.1 != Some(*a) {
                        continue;
                    }
                    for &t in sel {
                        if let Some(m) = fire(t) {
                            out.push((m, Some(*b), marker(t)));
                        }
                    }
                }
            }
        }
        out
    }

    fn in_i(&self, s: &OState) -> bool {
        self.safety
            .iter()
            .any(|(v, q)| v.iter().zip(&s.0).all(|(a, b)| a <= b) && q.is_none_or(|q| s.1 == Some(q)))
    }

    fn in_j(&self, s: &OState) -> bool {
        match &self.adverse {
            None => !self.in_i(s),
            Some((states, env_only)) => {
                states.as_ref().is_none_or(|qs| s.1.is_some_and(|q| qs.contains(&q))) && (!env_only || s.2 == Some(2))
            }
        }
    }

    fn reachable(&self) -> Option<Vec<OState>> {
        let mut seen = BTreeSet::from([self.initial()]);
        let mut queue = VecDeque::from([self.initial()]);
        while let Some(s) = queue.pop_front() {
            for t in self.successors(&s) {
                if seen.insert(t.clone()) {
                    if seen.len() > ORACLE_STATE_CAP {
                        return None;
                    }
                    queue.push_back(t);
                }
            }
        }
        Some(seen.into_iter().collect())
    }

    /// Least k such that every reachable bad state reaches I within k steps;
    /// None when some reachable bad state never does.
    fn oracle(&self, reach: &[OState]) -> Option<usize> {
        let index: HashMap<&OState, usize> = reach.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); reach.len()];
        for (i, s) in reach.iter().enumerate() {
            for t in self.successors(s) {
                preds[index[&t]].push(i);
            }
        }
        let mut dist = vec![usize::MAX; reach.len()];
        let mut queue = VecDeque::new();
        for (i, s) in reach.iter().enumerate() {
            if self.in_i(s) {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &p in &preds[i] {
                if dist[p] == usize::MAX {
                    dist[p] = dist[i] + 1;
                    queue.push_back(p);
                }
            }
        }
        let mut worst = 0;
        for (i, s) in reach.iter().enumerate() {
            if self.in_j(s) {
                if dist[i] == usize::MAX {
                    return None;
                }
                worst = worst.max(dist[i]);
            }
        }
        Some(worst)
    }

    fn leq(a: &OState, b: &OState) -> bool {
        a.1 == b.1 && a.2 == b.2 && a.0.iter().zip(&b.0).all(|(x, y)| x <= y)
    }

    fn minimal(reach: &[OState]) -> Vec<OState> {
        let mut sorted = reach.to_vec();
        sorted.sort_by_key(|s| s.0.iter().sum::<u64>());
        let mut out: Vec<OState> = Vec::new();
        for s in sorted {
            if !out.iter().any(|b| Self::leq(b, &s)) {
                out.push(s);
            }
        }
        out
    }

    fn document(&self, b_post: &[OState]) -> ModelDoc {
        let place = |i: usize| format!("p{i}");
        let marking = |v: &[u64]| v.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, &n)| (place(i), n)).collect();
        let qname = |q: usize| format!("q{q}");
        let mname = |m: u8| ["top", "sys", "env"][m as usize].to_string();
        let state = |s: &OState| StateDoc { marking: Some(marking(&s.0)), graph: None, state: s.1.map(qname), marker: s.2.map(mname) };
        let tname = |t: usize| format!("t{t}");
        ModelDoc {
            format: FORMAT.into(),
            kind: Kind::Petri,
            annotate: self.annotate,
            petri: Some(PetriDoc {
                places: (0..self.places).map(place).collect(),
                transitions: self
                    .transitions
                    .iter()
                    .enumerate()
                    .map(|(i, (pre, post, env))| TransitionDoc {
                        name: tname(i),
                        owner: Some(if *env { OwnerDoc::Env } else { OwnerDoc::Sys }),
                        pre: marking(pre),
                        post: marking(post),
                    })
                    .collect(),
            }),
            gts: None,
            automaton: self.automaton.as_ref().map(|(n, edges)| AutomatonDoc {
                states: (0..*n).map(qname).collect(),
                initial: qname(0),
                edges: edges
                    .iter()
                    .map(|(a, b, sel)| AutomatonEdgeDoc { from: qname(*a), to: qname(*b), select: sel.iter().map(|&t| tname(t)).collect() })
                    .collect(),
            }),
            start: Some(state(&self.initial())),
            safety: ConstraintDoc::Or(
                self.safety
                    .iter()
                    .map(|(v, q)| ConstraintDoc::Exists(StateDoc { marking: Some(marking(v)), graph: None, state: q.map(qname), marker: None }))
                    .collect(),
            ),
            bad: match &self.adverse {
                None => BadDoc::Error,
                Some((states, env_only)) => BadDoc::Adverse {
                    states: states.as_ref().map(|qs| qs.iter().map(|&q| qname(q)).collect()),
                    markers: env_only.then(|| vec!["env".to_string()]),
                },
            },
            b_post: Some(b_post.iter().map(state).collect()),
            limits: None,
        }
    }
}

struct ModelRun {
    oracle: Option<usize>,
    outcome: Outcome,
    under: Vec<Mu>,
    over: Mu,
}

fn mu_of(o: Option<usize>) -> Mu {
    o.map_or(Mu::Infinite, Mu::Finite)
}

fn outcome_mu(o: Outcome) -> Option<Mu> {
    match o {
        Outcome::Found(k) => Some(Mu::Finite(k)),
        Outcome::Unbounded => Some(Mu::Infinite),
        Outcome::Exhausted => None,
    }
}

fn run_random_model(net: &RandNet, reach: &[OState]) -> Result<ModelRun, String> {
    let doc = net.document(&RandNet::minimal(reach));
    let Model::Petri(c) = compile(&doc).map_err(|e| format!("{e:?}"))? else { unreachable!() };
    let bad = anti_ideal_of(&c.system, c.bad.clone()).map_err(|e| e.to_string())?;
    let inst = ResilienceInstance {
        backend: &c.system,
        b_post: c.b_post.clone().unwrap(),
        bad: as_anti_ideal(&bad),
        safety: c.safety.clone(),
        max_iters: 10_000,
    };
    let v = minimal_step(&inst, false).map_err(|e| e.to_string())?;
    let start = c.start.as_ref().unwrap();
    let under = [0, 1, 2, 4, 8]
        .iter()
        .map(|&d| under_approx(start, d, as_anti_ideal(&bad), &c.safety, &c.system, ORACLE_STATE_CAP, 10_000))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let over = over_approx(start, as_anti_ideal(&bad), &c.safety, &c.system, 10_000).map_err(|e| e.to_string())?;
    Ok(ModelRun { oracle: net.oracle(reach), outcome: v.outcome, under, over })
}

/// Random models with a finite state space, selected so that small answers
/// do not crowd out the rest.
fn random_models() -> Vec<(RandNet, Vec<OState>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let mut per_answer: HashMap<Option<usize>, usize> = HashMap::new();
    for _ in 0..50_000 {
        if out.len() >= RANDOM_MODELS {
            break;
        }
        let net = RandNet::random(&mut rng);
        let Some(reach) = net.reachable() else { continue };
        let answer = net.oracle(&reach);
        let cap = match answer {
            Some(k) if k >= 2 => usize::MAX,
            _ => RANDOM_MODELS / 5,
        };
        let seen = per_answer.entry(answer).or_default();
        if *seen < cap {
            *seen += 1;
            out.push((net, reach));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// 3. Adverse vs. error modes

fn criterion_3() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tri = fixture("triangle.json");
    let (adverse, code) = resil(&["check", tri.to_str().unwrap()])?;
    ensure(code == 0 && adverse["k_min"] == 1, || format!("triangle adverse: {adverse}"))?;
    let err = with_bad(&tri, serde_json::json!({"mode": "error"}), &dir);
    let (error, code) = resil(&["check", err.to_str().unwrap()])?;
    ensure(code == 1 && error["verdict"] == "unbounded", || format!("triangle error mode: {error}"))?;

    // The one-place analog, checked by the CLI and by brute force.
    let modes = fixture("modes.json");
    let (a, _) = resil(&["check", modes.to_str().unwrap()])?;
    let err = with_bad(&modes, serde_json::json!({"mode": "error"}), &dir);
    let (e, _) = resil(&["check", err.to_str().unwrap()])?;
    let net = |adverse| RandNet {
        places: 1,
        transitions: vec![(vec![2], vec![1], true), (vec![1], vec![2], false), (vec![1], vec![0], false), (vec![0], vec![0], false)],
        automaton: Some((2, vec![(0, 0, vec![3]), (0, 1, vec![0]), (1, 0, vec![1, 2, 3])])),
        annotate: false,
        start: vec![2],
        safety: vec![(vec![2], Some(0))],
        adverse,
    };
    let adverse_net = net(Some((Some(vec![1]), false)));
    let error_net = net(None);
    let reach = adverse_net.reachable().unwrap();
    let (ka, ke) = (adverse_net.oracle(&reach), error_net.oracle(&reach));
    ensure(ka == Some(1) && ke.is_none(), || format!("brute force gives {ka:?} / {ke:?}"))?;
    ensure(a["k_min"] == 1 && e["verdict"] == "unbounded", || format!("analog: {a} / {e}"))?;
    let b_post: BTreeSet<_> = RandNet::minimal(&reach).into_iter().collect();
    let declared: BTreeSet<OState> = BTreeSet::from([(vec![0], Some(0), None), (vec![1], Some(1), None)]);
    ensure(b_post == declared, || format!("analog b_post should be {b_post:?}"))?;
    Ok("triangle: adverse found(1), error unbounded; one-place analog: adverse 1 < error unbounded (brute force agrees)".into())
}

// ---------------------------------------------------------------------------
// 4. Oracle equivalence

fn criterion_4(runs: &[(RandNet, Result<ModelRun, String>)]) -> Check {
    let mut found = 0;
    let mut unbounded = 0;
    let mut largest = 0;
    for (i, (net, run)) in runs.iter().enumerate() {
        let run = run.as_ref().map_err(|e| format!("model {i}: {e}"))?;
        let want = mu_of(run.oracle);
        ensure(outcome_mu(run.outcome) == Some(want), || format!("model {i}: engine {:?}, oracle {want}; {net:?}", run.outcome))?;
        match want {
            Mu::Finite(k) => {
                found += 1;
                largest = largest.max(k);
            }
            Mu::Infinite => unbounded += 1,
        }
    }
    ensure(runs.len() >= MIN_RANDOM_MODELS, || format!("only {} models", runs.len()))?;
    Ok(format!("{} random models agree with the BFS oracle ({found} finite up to k = {largest}, {unbounded} unbounded)", runs.len()))
}

// ---------------------------------------------------------------------------
// 5. Backward-step exactness

fn grid(dim: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out.into_iter().flat_map(|v: Vec<u64>| (0..=GRID_BOUND).map(move |x| [v.clone(), vec![x]].concat())).collect();
    }
    out
}

fn petri_pre_cases(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut cases = 0;
    while cases < MIN_PRE_BASIS_CASES {
        let dim = rng.gen_range(1..=3);
        let v = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(0..=2)).collect::<Vec<u64>>();
        let net = PetriNet {
            places: (0..dim).map(|i| format!("p{i}")).collect(),
            transitions: vec![Transition { name: "t".into(), pre: v(rng), post: v(rng), owner: Owner::Sys }],
        };
        let m: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..=3)).collect();
        let t = &net.transitions[0];
        let p = pre_basis_t(&net, &Marking::plain(m.clone()), 0).map_err(|e| e.to_string())?;
        for g in grid(dim) {
            let fired: Option<Vec<u64>> = g.iter().zip(&t.pre).zip(&t.post).map(|((x, a), b)| x.checked_sub(*a).map(|y| y + b)).collect();
            let brute = fired.is_some_and(|f| f.iter().zip(&m).all(|(a, b)| a >= b));
            let up = p.tokens.iter().zip(&g).all(|(a, b)| a <= b);
            ensure(brute == up, || format!("pre_basis_t({m:?}, {t:?}) = {:?} disagrees at {g:?}", p.tokens))?;
        }
        cases += 1;
    }
    Ok(cases)
}

const NA: Label = Label(0);
const NB: Label = Label(1);
const EL: Label = Label(2);

fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize) -> Graph {
    let n = rng.gen_range(0..=max_nodes);
    let mut g = Graph { nodes: (0..n).map(|_| *[NA, NB].choose(rng).unwrap()).collect(), edges: vec![] };
    if n > 0 {
        for _ in 0..rng.gen_range(0..=max_edges) {
            g.add_edge(rng.gen_range(0..n), rng.gen_range(0..n), EL);
        }
    }
    g
}

fn random_rule(rng: &mut ChaCha8Rng) -> RuleSPO {
    loop {
        let left = random_graph(rng, 3, 2);
        let mut right = Graph::new();
        let mut node_map = vec![None; left.nodes.len()];
        for (v, l) in left.nodes.iter().enumerate() {
            if rng.gen_bool(0.7) {
                node_map[v] = Some(right.add_node(*l));
            }
        }
        if rng.gen_bool(0.3) {
            right.add_node(*[NA, NB].choose(rng).unwrap());
        }
        let mut edge_map = vec![None; left.edges.len()];
        for (i, e) in left.edges.iter().enumerate() {
            if let (Some(s), Some(t)) = (node_map[e.src], node_map[e.tgt]) {
                if rng.gen_bool(0.6) {
                    edge_map[i] = Some(right.add_edge(s, t, e.label));
                }
            }
        }
        if !right.nodes.is_empty() {
            for _ in 0..rng.gen_range(0..=2) {
                let n = right.nodes.len();
                right.add_edge(rng.gen_range(0..n), rng.gen_range(0..n), EL);
            }
        }
        let rule = RuleSPO { name: "r".into(), left, right, node_map, edge_map, owner: Owner::Sys };
        if rule.validate().is_ok() {
            return rule;
        }
    }
}

fn injections(k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for p in out {
            for x in (0..n).filter(|x| !p.contains(x)) {
                next.push([p.clone(), vec![x]].concat());
            }
        }
        out = next;
    }
    out
}

/// All matches of `l` in `g` as (node map, edge map), by exhaustive search.
fn brute_matches(l: &Graph, g: &Graph) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    for f in injections(l.nodes.len(), g.nodes.len()) {
        if (0..l.nodes.len()).any(|v| l.nodes[v] != g.nodes[f[v]]) {
            continue;
        }
        for fe in injections(l.edges.len(), g.edges.len()) {
            let ok = l.edges.iter().zip(&fe).all(|(e, &k)| {
                let d = g.edges[k];
                d.src == f[e.src] && d.tgt == f[e.tgt] && d.label == e.label
            });
            if ok {
                out.push((f.clone(), fe));
            }
        }
    }
    out
}

/// Single-pushout rewriting written out directly.
fn brute_apply(r: &RuleSPO, g: &Graph, f: &[usize], fe: &[usize]) -> Graph {
    let deleted_nodes: BTreeSet<usize> = (0..r.left.nodes.len()).filter(|&v| r.node_map[v].is_none()).map(|v| f[v]).collect();
    let deleted_edges: BTreeSet<usize> = (0..r.left.edges.len()).filter(|&e| r.edge_map[e].is_none()).map(|e| fe[e]).collect();
    let mut out = Graph::new();
    let mut host_new = vec![usize::MAX; g.nodes.len()];
    for v in 0..g.nodes.len() {
        if !deleted_nodes.contains(&v) {
            host_new[v] = out.add_node(g.nodes[v]);
        }
    }
    for (k, e) in g.edges.iter().enumerate() {
        if !deleted_edges.contains(&k) && host_new[e.src] != usize::MAX && host_new[e.tgt] != usize::MAX {
            out.add_edge(host_new[e.src], host_new[e.tgt], e.label);
        }
    }
    let mut right_new = vec![usize::MAX; r.right.nodes.len()];
    for (v, img) in r.node_map.iter().enumerate() {
        if let Some(w) = img {
            right_new[*w] = host_new[f[v]];
        }
    }
    for w in 0..r.right.nodes.len() {
        if right_new[w] == usize::MAX {
            right_new[w] = out.add_node(r.right.nodes[w]);
        }
    }
    let preserved: BTreeSet<usize> = r.edge_map.iter().flatten().copied().collect();
    for (k, e) in r.right.edges.iter().enumerate() {
        if !preserved.contains(&k) {
            out.add_edge(right_new[e.src], right_new[e.tgt], e.label);
        }
    }
    out
}

fn brute_successors(r: &RuleSPO, g: &Graph) -> Vec<Graph> {
    brute_matches(&r.left, g).iter().map(|(f, fe)| brute_apply(r, g, f, fe)).collect()
}

fn gts_pre_cases(rng: &mut ChaCha8Rng) -> Result<(usize, usize, usize), String> {
    let universe = small_graphs(UNIVERSE_NODES, &[NA, NB], &[EL], 4);
    let class = GraphClass::unrestricted();
    let mut rules = 0;
    let mut witnesses = 0;
    while rules < MIN_RANDOM_RULES {
        let rule = random_rule(rng);
        let s = random_graph(rng, TARGET_NODES, 3);
        let pre = pre_step_rule(&rule, &s, &class, None).map_err(|e| e.to_string())?;
        for p in &pre {
            ensure(brute_successors(&rule, p).iter().any(|h| embeds(&s, h)), || format!("unsound predecessor {p:?} of {s:?} under {rule:?}"))?;
        }
        for g in &universe {
            if brute_successors(&rule, g).iter().any(|h| embeds(&s, h)) {
                ensure(pre.iter().any(|p| embeds(p, g)), || format!("{g:?} missing from pre of {s:?} under {rule:?}"))?;
                witnesses += 1;
            }
        }
        rules += 1;
    }
    ensure(witnesses > 0, || "no universe graph reached any target".into())?;
    Ok((rules, universe.len(), witnesses))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let cases = petri_pre_cases(&mut rng)?;
    let (rules, universe, witnesses) = gts_pre_cases(&mut rng)?;
    Ok(format!(
        "{cases} (marking, transition) pairs exact on the grid <= {GRID_BOUND}; {rules} SPO rules sound and complete over {universe} graphs ({witnesses} covered predecessors)"
    ))
}

// ---------------------------------------------------------------------------
// 6. Approximation sandwich

fn criterion_6(runs: &[(RandNet, Result<ModelRun, String>)]) -> Check {
    let path = fixture("supplychain.json");
    let mut under = Vec::new();
    for l in 0..=UNDER_DEPTH_LIMIT {
        let (r, _) = resil(&["approx", path.to_str().unwrap(), "--under", &l.to_string()])?;
        under.push(r["k_under"].as_u64().ok_or_else(|| format!("k_under at {l}: {r}"))?);
    }
    ensure(under.windows(2).all(|w| w[0] <= w[1]), || format!("k_under not monotone: {under:?}"))?;
    let reached = under.iter().position(|&k| k == 6).ok_or_else(|| format!("k_under never reaches 6: {under:?}"))?;
    let (over, _) = resil(&["approx", path.to_str().unwrap(), "--over"])?;
    let k_ov = over["k_over"].as_u64().ok_or_else(|| format!("k_over: {over}"))?;
    ensure(k_ov >= 6, || format!("k_over = {k_ov}"))?;
    for (i, (_, run)) in runs.iter().enumerate() {
        let run = run.as_ref().map_err(|e| e.clone())?;
        let k = outcome_mu(run.outcome).ok_or("exhausted")?;
        ensure(run.under.iter().all(|u| *u <= k) && k <= run.over, || format!("model {i}: {:?} <= {k} <= {} fails", run.under, run.over))?;
        ensure(run.under.windows(2).all(|w| w[0] <= w[1]), || format!("model {i}: under not monotone {:?}", run.under))?;
    }
    Ok(format!("supply chain k_under reaches 6 at depth {reached}, k_over = {k_ov}; k_un <= k_min <= k_ov on {} models", runs.len()))
}

// ---------------------------------------------------------------------------
// 7. Invariant suites

fn antichain_laws(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let order = Componentwise::new(3);
    let leq = |a: &Vec<u64>, b: &Vec<u64>| a.iter().zip(b).all(|(x, y)| x <= y);
    for _ in 0..300 {
        let mut xs: Vec<Vec<u64>> = (0..rng.gen_range(0..12)).map(|_| (0..3).map(|_| rng.gen_range(0..4)).collect()).collect();
        let b = minimize(xs.clone(), &order);
        for (i, a) in b.iter().enumerate() {
            ensure(xs.contains(a), || "basis element not from input".into())?;
            ensure(b.iter().enumerate().all(|(j, c)| i == j || !leq(c, a)), || format!("not an antichain: {b:?}"))?;
        }
        ensure(xs.iter().all(|x| b.iter().any(|a| leq(a, x))), || "ideal shrank".into())?;
        ensure(minimize(b.elements().to_vec(), &order) == b, || "not idempotent".into())?;
        xs.shuffle(rng);
        ensure(minimize(xs, &order) == b, || "order dependent".into())?;
    }
    Ok(())
}

fn strong_compatibility(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut samples = 0;
    for _ in 0..1000 {
        let dim = 3;
        let v = |rng: &mut ChaCha8Rng, hi| (0..dim).map(|_| rng.gen_range(0..=hi)).collect::<Vec<u64>>();
        let (pre, post, m1) = (v(rng, 2), v(rng, 2), v(rng, 3));
        let m2: Vec<u64> = m1.iter().map(|x| x + rng.gen_range(0..=2)).collect();
        let fire = |m: &[u64]| -> Option<Vec<u64>> { m.iter().zip(&pre).zip(&post).map(|((x, a), b)| x.checked_sub(*a).map(|y| y + b)).collect() };
        if let Some(f1) = fire(&m1) {
            let f2 = fire(&m2).ok_or("bigger marking cannot fire")?;
            ensure(f1.iter().zip(&f2).all(|(a, b)| a <= b), || "firing is not monotone".into())?;
            samples += 1;
        }
    }
    // Graphs: a bigger host simulates every step of a smaller one.
    let mut done = 0;
    while done < 200 {
        let rule = random_rule(rng);
        let g1 = random_graph(rng, 3, 3);
        let g2 = random_graph(rng, 5, 5);
        let Some((f, fe)) = brute_matches(&g1, &g2).into_iter().next() else { continue };
        for (m, me) in brute_matches(&rule.left, &g1) {
            let m2: Vec<usize> = m.iter().map(|&v| f[v]).collect();
            let me2: Vec<usize> = me.iter().map(|&e| fe[e]).collect();
            let h1 = brute_apply(&rule, &g1, &m, &me);
            let h2 = brute_apply(&rule, &g2, &m2, &me2);
            ensure(embeds(&h1, &h2), || format!("compatibility fails for {rule:?} on {g1:?} in {g2:?}"))?;
            done += 1;
        }
    }
    Ok(samples + done)
}

fn stability(runs: &[(RandNet, Vec<OState>)]) -> Result<usize, String> {
    let mut checked = 0;
    let sc = compile(&load(&fixture("supplychain.json")).map_err(|e| e.to_string())?).map_err(|e| format!("{e:?}"))?;
    let Model::Petri(sc) = sc else { unreachable!() };
    let mut systems = vec![(sc.system, sc.safety)];
    for (net, reach) in runs {
        let Model::Petri(c) = compile(&net.document(&RandNet::minimal(reach))).map_err(|e| format!("{e:?}"))? else { unreachable!() };
        systems.push((c.system, c.safety));
    }
    for (sys, safety) in &systems {
        let fix = pre_star(safety, sys, 10_000).map_err(|e| e.to_string())?;
        let mut sat = Saturation::new(&fix.basis, sys);
        for _ in 0..STABILITY_EXTRA_STEPS {
            let grew = sat.advance().map_err(|e| e.to_string())?;
            ensure(!grew && sat.current() == &fix.basis, || "saturation moved after its fixpoint".into())?;
        }
        checked += 1;
    }
    Ok(checked)
}

fn brute_embeds(g: &Graph, h: &Graph) -> bool {
    !brute_matches(g, h).is_empty()
}

fn random_constraint(rng: &mut ChaCha8Rng, depth: usize) -> Constraint<Pattern<Graph>> {
    if depth == 0 || rng.gen_bool(0.4) {
        return Constraint::Exists(Pattern::anywhere(random_graph(rng, 3, 2)));
    }
    let parts = (0..rng.gen_range(1..=2)).map(|_| random_constraint(rng, depth - 1)).collect();
    if rng.gen_bool(0.5) {
        Constraint::And(parts)
    } else {
        Constraint::Or(parts)
    }
}

fn holds(c: &Constraint<Pattern<Graph>>, g: &Graph) -> bool {
    match c {
        Constraint::Exists(p) => brute_embeds(&p.body, g),
        Constraint::NotExists(p) => !brute_embeds(&p.body, g),
        Constraint::And(cs) => cs.iter().all(|c| holds(c, g)),
        Constraint::Or(cs) => cs.iter().any(|c| holds(c, g)),
    }
}

fn constraint_equivalence(rng: &mut ChaCha8Rng) -> Result<(usize, usize), String> {
    let universe = small_graphs(UNIVERSE_NODES, &[NA, NB], &[EL], 3);
    let sys = GtsSystem::new(vec![], GraphClass::unrestricted(), None, false).map_err(|e| e.to_string())?;
    let mut n = 0;
    for _ in 0..12 {
        let c = random_constraint(rng, 2);
        let basis = ideal_basis_of(&sys, &c).map_err(|e| e.to_string())?;
        for g in &universe {
            let s = sys.state(g, None, None).unwrap();
            let by_basis = covers(&basis, &s, &sys).map_err(|e| e.to_string())?;
            let by_semantics = holds(&c, g);
            ensure(by_basis == by_semantics, || format!("{c:?} at {g:?}: basis {by_basis}, semantics {by_semantics}"))?;
            ensure(satisfies(&sys, &s, &c) == by_semantics, || "satisfies disagrees with brute force".into())?;
        }
        n += 1;
    }
    Ok((n, universe.len()))
}

fn criterion_7(models: &[(RandNet, Vec<OState>)]) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    antichain_laws(&mut rng)?;
    let compat = strong_compatibility(&mut rng)?;
    let stable = stability(models)?;
    let (constraints, universe) = constraint_equivalence(&mut rng)?;
    Ok(format!(
        "antichain laws; {compat} compatibility samples; {stable} fixpoints stable for {STABILITY_EXTRA_STEPS} extra steps; {constraints} constraints match their bases on {universe} graphs"
    ))
}

fn main() {
    let t0 = Instant::now();
    let models = random_models();
    let runs: Vec<(RandNet, Result<ModelRun, String>)> =
        models.iter().map(|(net, reach)| (net.clone(), run_random_model(net, reach))).collect();
    let mut histogram = std::collections::BTreeMap::new();
    for (_, r) in &runs {
        if let Ok(r) = r {
            *histogram.entry(mu_of(r.oracle).to_string()).or_insert(0) += 1;
        }
    }
    println!("random joint Petri models prepared: {} with oracle answers {histogram:?} [{:.2?}]", runs.len(), t0.elapsed());
    let criteria: Vec<Criterion> = vec![
        ("supply chain reproduction", Box::new(criterion_1)),
        ("path game", Box::new(criterion_2)),
        ("adverse vs. error modes", Box::new(criterion_3)),
        ("oracle equivalence", Box::new(|| criterion_4(&runs))),
        ("backward-step exactness", Box::new(criterion_5)),
        ("approximation sandwich", Box::new(|| criterion_6(&runs))),
        ("invariant suites", Box::new(|| criterion_7(&models))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{:.2?}]", i + 1, t0.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{:.2?}]", i + 1, t0.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
