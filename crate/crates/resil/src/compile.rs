//! Turns a validated document into core systems, bases and bad sets.

use std::collections::BTreeMap;

use resil_core::constraints::{anti_ideal_of, ideal_basis_of, BadSet, Constraint, Pattern, PatternSpace};
use resil_core::engine::{max_iters_from_env, DEFAULT_MAX_ITERS};
use resil_core::gts::{Alphabet, Graph, GraphClass, GraphState, GtsSystem, RuleSPO};
use resil_core::joint::{AutomatonEdge, ControlAutomaton, Marker, Owner, ResolvedAutomaton};
use resil_core::order::{minimize, Basis};
use resil_core::petri::{Marking, PetriNet, PetriSystem, Transition};

use crate::model::*;

pub const DEFAULT_FORWARD_STATE_CAP: usize = 100_000;

/// Names needed to print states back in document form.
#[derive(Clone, Debug, Default)]
pub struct Names {
    pub places: Vec<String>,
    pub states: Vec<String>,
    pub alphabet: Alphabet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_iters: usize,
    pub overlap_cap: Option<usize>,
    pub forward_depth_cap: Option<usize>,
    pub forward_state_cap: usize,
}

impl Limits {
    fn of(doc: Option<&LimitsDoc>) -> Self {
        let d = doc.cloned().unwrap_or_default();
        Limits {
            max_iters: max_iters_from_env(d.max_iters.unwrap_or(DEFAULT_MAX_ITERS)),
            overlap_cap: d.overlap_cap,
            forward_depth_cap: d.forward_depth_cap,
            forward_state_cap: d.forward_state_cap.unwrap_or(DEFAULT_FORWARD_STATE_CAP),
        }
    }
}

pub struct Compiled<B: PatternSpace> {
    pub system: B,
    pub names: Names,
    pub start: Option<B::State>,
    pub safety: Basis<B::State>,
    pub bad: BadSet<B::State, B::Body>,
    pub b_post: Option<Basis<B::State>>,
    pub limits: Limits,
}

pub enum Model {
    Petri(Compiled<PetriSystem>),
    Gts(Compiled<GtsSystem>),
}

/// States in document form.
pub trait Render {
    fn render(&self, names: &Names) -> StateDoc;
}

fn control_names(state: Option<usize>, marker: Option<Marker>, names: &Names) -> (Option<String>, Option<String>) {
    (state.map(|q| names.states[q].clone()), marker.map(|m| m.name().to_string()))
}

impl Render for Marking {
    fn render(&self, names: &Names) -> StateDoc {
        let marking = names
            .places
            .iter()
            .zip(&self.tokens)
            .filter(|(_, &n)| n > 0)
            .map(|(p, &n)| (p.clone(), n))
            .collect();
        let (state, marker) = control_names(self.state, self.marker, names);
        StateDoc { marking: Some(marking), graph: None, state, marker }
    }
}

pub fn render_graph(g: &Graph, alphabet: &Alphabet) -> GraphDoc {
    GraphDoc {
        nodes: g.nodes.iter().enumerate().map(|(i, l)| NodeDoc { id: format!("n{i}"), label: alphabet.name(*l).into() }).collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                id: None,
                src: format!("n{}", e.src),
                tgt: format!("n{}", e.tgt),
                label: alphabet.name(e.label).into(),
            })
            .collect(),
    }
}

impl Render for GraphState {
    fn render(&self, names: &Names) -> StateDoc {
        use resil_core::joint::ControlView;
        let (state, marker) = control_names(self.control_state(), self.marker(), names);
        StateDoc { marking: None, graph: Some(render_graph(self.graph(), &names.alphabet)), state, marker }
    }
}

fn owner(o: Option<OwnerDoc>) -> Owner {
    match o {
        Some(OwnerDoc::Env) => Owner::Env,
        _ => Owner::Sys,
    }
}

fn automaton(doc: &ModelDoc, rule_names: &[&str]) -> Result<Option<ResolvedAutomaton>, Located> {
    let Some(a) = &doc.automaton else { return Ok(None) };
    let control = ControlAutomaton {
        states: a.states.clone(),
        initial: a.initial.clone(),
        edges: a
            .edges
            .iter()
            .map(|e| AutomatonEdge { from: e.from.clone(), to: e.to.clone(), select: e.select.clone() })
            .collect(),
    };
    control.resolve(rule_names).map(Some).map_err(|e| Pointer::root().at("automaton").error(e.to_string()))
}

fn control_of(doc: &ModelDoc, s: &StateDoc, concrete: bool) -> (Option<usize>, Option<Marker>) {
    let q = s
        .state
        .as_ref()
        .and_then(|q| doc.automaton.as_ref().and_then(|a| a.states.iter().position(|x| x == q)));
    let m = s.marker.as_deref().and_then(Marker::parse);
    let m = if concrete && doc.annotate { m.or(Some(Marker::Top)) } else { m };
    (q, m)
}

fn constraint_of<T>(c: &ConstraintDoc, doc: &ModelDoc, body: &mut impl FnMut(&StateDoc) -> T) -> Constraint<Pattern<T>> {
    let pattern = |s: &StateDoc, body: &mut dyn FnMut(&StateDoc) -> T| {
        let (state, marker) = control_of(doc, s, false);
        Pattern { body: body(s), state, marker }
    };
    match c {
        ConstraintDoc::Exists(s) => Constraint::Exists(pattern(s, body)),
        ConstraintDoc::NotExists(s) => Constraint::NotExists(pattern(s, body)),
        ConstraintDoc::And(cs) => Constraint::And(cs.iter().map(|c| constraint_of(c, doc, body)).collect()),
        ConstraintDoc::Or(cs) => Constraint::Or(cs.iter().map(|c| constraint_of(c, doc, body)).collect()),
    }
}

fn bad_of<S, T>(doc: &ModelDoc, safety: &Basis<S>, body: &mut impl FnMut(&StateDoc) -> T) -> BadSet<S, T>
where
    S: Clone,
{
    match &doc.bad {
        BadDoc::Adverse { states, markers } => {
            let index = |q: &String| doc.automaton.as_ref().and_then(|a| a.states.iter().position(|x| x == q));
            BadSet::Control {
                states: states.as_ref().map(|qs| qs.iter().filter_map(index).collect()),
                markers: markers.as_ref().map(|ms| ms.iter().filter_map(|m| Marker::parse(m)).collect()),
            }
        }
        BadDoc::Error => BadSet::Complement(safety.clone()),
        BadDoc::Custom { constraint } => BadSet::Negative(constraint_of(constraint, doc, body)),
    }
}

/// Validates and compiles a document.
pub fn compile(doc: &ModelDoc) -> Result<Model, Vec<Located>> {
    let errs = validate(doc);
    if !errs.is_empty() {
        return Err(errs);
    }
    let names = Names {
        states: doc.automaton.as_ref().map(|a| a.states.clone()).unwrap_or_default(),
        ..Names::default()
    };
    match doc.kind {
        Kind::Petri => compile_petri(doc, names).map(Model::Petri).map_err(|e| vec![e]),
        Kind::Gts => compile_gts(doc, names).map(Model::Gts).map_err(|e| vec![e]),
    }
}

fn vector(places: &[String], m: &BTreeMap<String, u64>) -> Vec<u64> {
    places.iter().map(|p| m.get(p).copied().unwrap_or(0)).collect()
}

fn compile_petri(doc: &ModelDoc, mut names: Names) -> Result<Compiled<PetriSystem>, Located> {
    let root = Pointer::root();
    let p = doc.petri.as_ref().expect("validated");
    names.places = p.places.clone();
    let net = PetriNet {
        places: p.places.clone(),
        transitions: p
            .transitions
            .iter()
            .map(|t| Transition {
                name: t.name.clone(),
                pre: vector(&p.places, &t.pre),
                post: vector(&p.places, &t.post),
                owner: owner(t.owner),
            })
            .collect(),
    };
    let rule_names: Vec<&str> = p.transitions.iter().map(|t| t.name.as_str()).collect();
    let resolved = automaton(doc, &rule_names)?;
    let system = PetriSystem::new(net, resolved, doc.annotate).map_err(|e| root.at("petri").error(e.to_string()))?;
    let body = |s: &StateDoc| vector(&p.places, s.marking.as_ref().expect("validated"));
    let state = |s: &StateDoc| {
        let (state, marker) = control_of(doc, s, true);
        Marking { tokens: body(s), state, marker }
    };
    let safety_c = constraint_of(&doc.safety, doc, &mut { body });
    let safety = ideal_basis_of(&system, &safety_c).map_err(|e| root.at("safety").error(e.to_string()))?;
    let bad = bad_of(doc, &safety, &mut { body });
    anti_ideal_of(&system, bad.clone()).map(drop).map_err(|e| root.at("bad").error(e.to_string()))?;
    Ok(Compiled {
        start: doc.start.as_ref().map(state),
        b_post: doc.b_post.as_ref().map(|v| minimize(v.iter().map(state), &system)),
        system,
        names,
        safety,
        bad,
        limits: Limits::of(doc.limits.as_ref()),
    })
}

/// Graph of a validated document graph; node and edge indices follow the
/// document order.
pub fn graph_of(g: &GraphDoc, alphabet: &mut Alphabet) -> Graph {
    let mut out = Graph::new();
    for n in &g.nodes {
        out.add_node(alphabet.intern(&n.label));
    }
    let index = |id: &str| g.nodes.iter().position(|n| n.id == id).expect("validated");
    for e in &g.edges {
        let l = alphabet.intern(&e.label);
        out.add_edge(index(&e.src), index(&e.tgt), l);
    }
    out
}

fn rule_of(r: &RuleDoc, alphabet: &mut Alphabet) -> RuleSPO {
    let left = graph_of(&r.left, alphabet);
    let right = graph_of(&r.right, alphabet);
    let node_map = r
        .left
        .nodes
        .iter()
        .map(|n| {
            r.map.nodes.iter().find(|(a, _)| *a == n.id).map(|(_, b)| r.right.nodes.iter().position(|x| &x.id == b).expect("validated"))
        })
        .collect();
    let edge_map = r
        .left
        .edges
        .iter()
        .map(|e| {
            let id = e.id.as_ref()?;
            let (_, b) = r.map.edges.iter().find(|(a, _)| a == id)?;
            r.right.edges.iter().position(|x| x.id.as_ref() == Some(b))
        })
        .collect();
    RuleSPO { name: r.name.clone(), left, right, node_map, edge_map, owner: owner(r.owner) }
}

fn compile_gts(doc: &ModelDoc, mut names: Names) -> Result<Compiled<GtsSystem>, Located> {
    let root = Pointer::root();
    let g = doc.gts.as_ref().expect("validated");
    let alphabet = &mut names.alphabet;
    let rules: Vec<RuleSPO> = g.rules.iter().map(|r| rule_of(r, alphabet)).collect();
    let cd = g.class.clone().unwrap_or_default();
    let class = GraphClass {
        max_path_length: cd.max_path_length,
        label_counts: cd.label_counts.iter().map(|(l, n)| (alphabet.intern(l), *n)).collect(),
        quotient: cd.quotient.iter().map(|l| alphabet.intern(l)).collect(),
    };
    // Intern every label used by states and patterns before any lookup.
    let mut docs: Vec<&GraphDoc> = Vec::new();
    collect_graphs(&doc.safety, &mut docs);
    if let BadDoc::Custom { constraint } = &doc.bad {
        collect_graphs(constraint, &mut docs);
    }
    docs.extend(doc.start.iter().chain(doc.b_post.iter().flatten()).filter_map(|s| s.graph.as_ref()));
    let graphs: Vec<(GraphDoc, Graph)> = docs.into_iter().map(|d| (d.clone(), graph_of(d, alphabet))).collect();
    let body = |s: &StateDoc| {
        let d = s.graph.as_ref().expect("validated");
        graphs.iter().find(|(x, _)| x == d).map(|(_, g)| g.clone()).expect("interned")
    };

    let rule_names: Vec<&str> = g.rules.iter().map(|r| r.name.as_str()).collect();
    let resolved = automaton(doc, &rule_names)?;
    let system = GtsSystem::new(rules, class, resolved, doc.annotate)
        .map_err(|e| root.at("gts").at("rules").error(e.to_string()))?
        .with_overlap_cap(doc.limits.as_ref().and_then(|l| l.overlap_cap));
    let state = |s: &StateDoc, ptr: Pointer| {
        let (q, m) = control_of(doc, s, true);
        system.state(&body(s), q, m).ok_or_else(|| ptr.at("graph").error("graph lies outside the graph class"))
    };
    let start = doc.start.as_ref().map(|s| state(s, root.at("start"))).transpose()?;
    let b_post = match &doc.b_post {
        Some(v) => {
            let states = v.iter().enumerate().map(|(i, s)| state(s, root.at("b_post").at(i))).collect::<Result<Vec<_>, _>>()?;
            Some(minimize(states, &system))
        }
        None => None,
    };
    let safety_c = constraint_of(&doc.safety, doc, &mut { body });
    let safety = ideal_basis_of(&system, &safety_c).map_err(|e| root.at("safety").error(e.to_string()))?;
    let bad = bad_of(doc, &safety, &mut { body });
    anti_ideal_of(&system, bad.clone()).map(drop).map_err(|e| root.at("bad").error(e.to_string()))?;
    Ok(Compiled { system, names, start, safety, bad, b_post, limits: Limits::of(doc.limits.as_ref()) })
}

fn collect_graphs<'a>(c: &'a ConstraintDoc, out: &mut Vec<&'a GraphDoc>) {
    match c {
        ConstraintDoc::Exists(s) | ConstraintDoc::NotExists(s) => out.extend(s.graph.as_ref()),
        ConstraintDoc::And(cs) | ConstraintDoc::Or(cs) => cs.iter().for_each(|c| collect_graphs(c, out)),
    }
}
