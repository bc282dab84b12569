//! The `resilire/1` model document: serde types, parsing and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use resil_core::joint::Marker;

pub const FORMAT: &str = "resilire/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Petri,
    Gts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OwnerDoc {
    Sys,
    Env,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub format: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "is_false")]
    pub annotate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub petri: Option<PetriDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gts: Option<GtsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub automaton: Option<AutomatonDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StateDoc>,
    pub safety: ConstraintDoc,
    pub bad: BadDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_post: Option<Vec<StateDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsDoc>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PetriDoc {
    pub places: Vec<String>,
    pub transitions: Vec<TransitionDoc>,
}

/// Arc weights are given per place name; absent places have weight 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<OwnerDoc>,
    #[serde(default)]
    pub pre: BTreeMap<String, u64>,
    #[serde(default)]
    pub post: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtsDoc {
    pub rules: Vec<RuleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<OwnerDoc>,
    pub left: GraphDoc,
    pub right: GraphDoc,
    #[serde(default)]
    pub map: MapDoc,
}

/// Partial morphism from the left to the right side as id pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDoc {
    #[serde(default)]
    pub nodes: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    #[serde(default)]
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub src: String,
    pub tgt: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_path_length: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quotient: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomatonDoc {
    pub states: Vec<String>,
    pub initial: String,
    pub edges: Vec<AutomatonEdgeDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomatonEdgeDoc {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub select: Vec<String>,
}

/// A state, or a pattern when used inside a constraint. Exactly one of
/// `marking` and `graph` is present, matching the model kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marking: Option<BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintDoc {
    Exists(StateDoc),
    NotExists(StateDoc),
    And(Vec<ConstraintDoc>),
    Or(Vec<ConstraintDoc>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BadDoc {
    /// States whose control state and marker lie in the given lists.
    Adverse {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        states: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        markers: Option<Vec<String>>,
    },
    /// Complement of the safety ideal.
    Error,
    Custom { constraint: ConstraintDoc },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_cap: Option<usize>,
    /// Largest depth accepted by forward exploration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_depth_cap: Option<usize>,
    /// Largest number of states forward exploration may visit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_state_cap: Option<usize>,
}

/// Rules or transitions of one party, to be merged by `compose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDoc {
    pub format: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub places: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<TransitionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleDoc>,
}

// ---------------------------------------------------------------------------
// Errors

/// A message attached to a JSON pointer into the document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Located {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Located {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{}", join(.0))]
    Invalid(Vec<Located>),
}

fn join(errs: &[Located]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

impl LoadError {
    pub fn located(&self) -> Vec<Located> {
        match self {
            LoadError::Io { .. } => vec![Located { pointer: String::new(), message: self.to_string() }],
            LoadError::Invalid(v) => v.clone(),
        }
    }
}

/// JSON pointer built from unescaped tokens.
#[derive(Clone, Debug, Default)]
pub struct Pointer(String);

impl Pointer {
    pub fn root() -> Self {
        Pointer(String::new())
    }

    pub fn at(&self, token: impl fmt::Display) -> Self {
        let t = token.to_string().replace('~', "~0").replace('/', "~1");
        Pointer(format!("{}/{t}", self.0))
    }

    pub fn error(&self, message: impl Into<String>) -> Located {
        Located { pointer: self.0.clone(), message: message.into() }
    }
}

impl fmt::Display for Pointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn path_pointer(path: &serde_path_to_error::Path) -> Pointer {
    use serde_path_to_error::Segment;
    let mut p = Pointer::root();
    for seg in path.iter() {
        p = match seg {
            Segment::Seq { index } => p.at(index),
            Segment::Map { key } => p.at(key),
            Segment::Enum { variant } => p.at(variant),
            Segment::Unknown => p,
        };
    }
    p
}

/// Deserializes JSON text, locating the first error.
pub fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let ptr = path_pointer(e.path());
        LoadError::Invalid(vec![ptr.error(e.inner().to_string())])
    })
}

pub fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })
}

/// Reads, parses and validates a model document.
pub fn load(path: &Path) -> Result<ModelDoc, LoadError> {
    let doc: ModelDoc = parse(&read(path)?)?;
    let errs = validate(&doc);
    if errs.is_empty() {
        Ok(doc)
    } else {
        Err(LoadError::Invalid(errs))
    }
}

// ---------------------------------------------------------------------------
// Validation

fn duplicates<'a>(names: impl IntoIterator<Item = &'a String>) -> Vec<(usize, &'a String)> {
    let mut seen = BTreeSet::new();
    names.into_iter().enumerate().filter(|(_, n)| !seen.insert(*n)).collect()
}

struct Checker<'a> {
    doc: &'a ModelDoc,
    errs: Vec<Located>,
    rule_names: Vec<&'a String>,
    states: Vec<&'a String>,
}

/// Referential checks over the whole document; an empty list means the
/// document compiles.
pub fn validate(doc: &ModelDoc) -> Vec<Located> {
    let mut c = Checker { doc, errs: Vec::new(), rule_names: Vec::new(), states: Vec::new() };
    c.run();
    c.errs
}

impl<'a> Checker<'a> {
    fn push(&mut self, e: Located) {
        self.errs.push(e);
    }

    fn run(&mut self) {
        let root = Pointer::root();
        if self.doc.format != FORMAT {
            self.push(root.at("format").error(format!("expected \"{FORMAT}\", found \"{}\"", self.doc.format)));
        }
        match self.doc.kind {
            Kind::Petri => {
                if self.doc.gts.is_some() {
                    self.push(root.at("gts").error("a petri model has no gts section"));
                }
                match &self.doc.petri {
                    Some(p) => self.petri(p, &root.at("petri")),
                    None => self.push(root.at("petri").error("missing petri section")),
                }
            }
            Kind::Gts => {
                if self.doc.petri.is_some() {
                    self.push(root.at("petri").error("a gts model has no petri section"));
                }
                match &self.doc.gts {
                    Some(g) => self.gts(g, &root.at("gts")),
                    None => self.push(root.at("gts").error("missing gts section")),
                }
            }
        }
        if let Some(a) = &self.doc.automaton {
            self.automaton(a, &root.at("automaton"));
        }
        if let Some(s) = &self.doc.start {
            self.state(s, &root.at("start"), true);
        }
        self.constraint(&self.doc.safety, &root.at("safety"), Some(true));
        match &self.doc.bad {
            BadDoc::Adverse { states, markers } => {
                let p = root.at("bad");
                for (i, q) in states.iter().flatten().enumerate() {
                    self.control_state(q, &p.at("states").at(i));
                }
                for (i, m) in markers.iter().flatten().enumerate() {
                    self.marker(m, &p.at("markers").at(i));
                }
            }
            BadDoc::Error => {}
            BadDoc::Custom { constraint } => self.constraint(constraint, &root.at("bad").at("constraint"), Some(false)),
        }
        for (i, s) in self.doc.b_post.iter().flatten().enumerate() {
            self.state(s, &root.at("b_post").at(i), true);
        }
        if let Some(l) = &self.doc.limits {
            if l.max_iters == Some(0) {
                self.push(root.at("limits").at("max_iters").error("must be positive"));
            }
        }
    }

    fn petri(&mut self, p: &'a PetriDoc, ptr: &Pointer) {
        for (i, n) in duplicates(&p.places) {
            self.push(ptr.at("places").at(i).error(format!("duplicate place \"{n}\"")));
        }
        for (i, n) in duplicates(p.transitions.iter().map(|t| &t.name)) {
            self.push(ptr.at("transitions").at(i).error(format!("duplicate transition \"{n}\"")));
        }
        for (i, t) in p.transitions.iter().enumerate() {
            let tp = ptr.at("transitions").at(i);
            if t.owner.is_none() {
                self.push(tp.at("owner").error(format!("transition \"{}\" has no owner", t.name)));
            }
            for (side, arcs) in [("pre", &t.pre), ("post", &t.post)] {
                for place in arcs.keys() {
                    if !p.places.contains(place) {
                        self.push(tp.at(side).at(place).error(format!("unknown place \"{place}\" in transition \"{}\"", t.name)));
                    }
                }
            }
            self.rule_names.push(&t.name);
        }
    }

    fn gts(&mut self, g: &'a GtsDoc, ptr: &Pointer) {
        for (i, n) in duplicates(g.rules.iter().map(|r| &r.name)) {
            self.push(ptr.at("rules").at(i).error(format!("duplicate rule \"{n}\"")));
        }
        for (i, r) in g.rules.iter().enumerate() {
            let rp = ptr.at("rules").at(i);
            if r.owner.is_none() {
                self.push(rp.at("owner").error(format!("rule \"{}\" has no owner", r.name)));
            }
            self.graph(&r.left, &rp.at("left"), true);
            self.graph(&r.right, &rp.at("right"), true);
            self.rule_map(r, &rp.at("map"));
            self.rule_names.push(&r.name);
        }
    }

    fn graph(&mut self, g: &GraphDoc, ptr: &Pointer, edge_ids: bool) {
        for (i, n) in duplicates(g.nodes.iter().map(|n| &n.id)) {
            self.push(ptr.at("nodes").at(i).error(format!("duplicate node id \"{n}\"")));
        }
        for (_, n) in duplicates(g.edges.iter().filter_map(|e| e.id.as_ref())) {
            self.push(ptr.at("edges").error(format!("duplicate edge id \"{n}\"")));
        }
        for (i, e) in g.edges.iter().enumerate() {
            for (end, id) in [("src", &e.src), ("tgt", &e.tgt)] {
                if !g.nodes.iter().any(|n| &n.id == id) {
                    self.push(ptr.at("edges").at(i).at(end).error(format!("unknown node \"{id}\"")));
                }
            }
            if !edge_ids && e.id.is_some() {
                self.push(ptr.at("edges").at(i).at("id").error("edge ids are only meaningful in rules"));
            }
        }
    }

    fn rule_map(&mut self, r: &'a RuleDoc, ptr: &Pointer) {
        let name = &r.name;
        let node_label = |g: &'_ GraphDoc, id: &str| g.nodes.iter().find(|n| n.id == id).map(|n| n.label.clone());
        let mut dom = BTreeSet::new();
        let mut img = BTreeSet::new();
        for (i, (a, b)) in r.map.nodes.iter().enumerate() {
            let p = ptr.at("nodes").at(i);
            let (la, lb) = (node_label(&r.left, a), node_label(&r.right, b));
            if la.is_none() {
                self.push(p.error(format!("rule \"{name}\": unknown left node \"{a}\"")));
            }
            if lb.is_none() {
                self.push(p.error(format!("rule \"{name}\": unknown right node \"{b}\"")));
            }
            if let (Some(la), Some(lb)) = (la, lb) {
                if la != lb {
                    self.push(p.error(format!("rule \"{name}\": node \"{a}\" changes label")));
                }
            }
            if !dom.insert(a) {
                self.push(p.error(format!("rule \"{name}\": node \"{a}\" is mapped twice")));
            }
            if !img.insert(b) {
                self.push(p.error(format!("rule \"{name}\": node map is not injective at \"{b}\"")));
            }
        }
        let edge = |g: &'a GraphDoc, id: &str| g.edges.iter().find(|e| e.id.as_deref() == Some(id));
        let (mut dom, mut img) = (BTreeSet::new(), BTreeSet::new());
        for (i, (a, b)) in r.map.edges.iter().enumerate() {
            let p = ptr.at("edges").at(i);
            let (ea, eb) = (edge(&r.left, a), edge(&r.right, b));
            match (ea, eb) {
                (Some(ea), Some(eb)) => {
                    let image = |x: &String| r.map.nodes.iter().find(|(l, _)| l == x).map(|(_, r)| r);
                    if ea.label != eb.label || image(&ea.src) != Some(&eb.src) || image(&ea.tgt) != Some(&eb.tgt) {
                        self.push(p.error(format!("rule \"{name}\": edge \"{a}\" is not mapped consistently")));
                    }
                }
                _ => self.push(p.error(format!("rule \"{name}\": unknown edge in pair (\"{a}\", \"{b}\")"))),
            }
            if !dom.insert(a) {
                self.push(p.error(format!("rule \"{name}\": edge \"{a}\" is mapped twice")));
            }
            if !img.insert(b) {
                self.push(p.error(format!("rule \"{name}\": edge map is not injective at \"{b}\"")));
            }
        }
    }

    fn automaton(&mut self, a: &'a AutomatonDoc, ptr: &Pointer) {
        if a.states.is_empty() {
            self.push(ptr.at("states").error("automaton has no states"));
        }
        for (i, n) in duplicates(&a.states) {
            self.push(ptr.at("states").at(i).error(format!("duplicate state \"{n}\"")));
        }
        self.states = a.states.iter().collect();
        if !a.states.contains(&a.initial) {
            self.push(ptr.at("initial").error(format!("unknown state \"{}\"", a.initial)));
        }
        let mut pairs = BTreeSet::new();
        for (i, e) in a.edges.iter().enumerate() {
            let ep = ptr.at("edges").at(i);
            for (end, q) in [("from", &e.from), ("to", &e.to)] {
                if !a.states.contains(q) {
                    self.push(ep.at(end).error(format!("unknown state \"{q}\"")));
                }
            }
            if !pairs.insert((&e.from, &e.to)) {
                self.push(ep.error(format!("duplicate edge {} -> {}", e.from, e.to)));
            }
            for (j, r) in e.select.iter().enumerate() {
                if !self.rule_names.contains(&r) {
                    self.push(ep.at("select").at(j).error(format!("unknown rule \"{r}\"")));
                }
            }
        }
    }

    fn control_state(&mut self, q: &str, ptr: &Pointer) {
        if self.doc.automaton.is_none() {
            self.push(ptr.error("control state given but the model has no automaton"));
        } else if !self.states.iter().any(|s| *s == q) {
            self.push(ptr.error(format!("unknown state \"{q}\"")));
        }
    }

    fn marker(&mut self, m: &str, ptr: &Pointer) {
        if Marker::parse(m).is_none() {
            self.push(ptr.error(format!("unknown marker \"{m}\"; expected top, sys or env")));
        } else if !self.doc.annotate {
            self.push(ptr.error("marker given but the model is not annotated"));
        }
    }

    fn state(&mut self, s: &StateDoc, ptr: &Pointer, concrete: bool) {
        match (self.doc.kind, &s.marking, &s.graph) {
            (Kind::Petri, Some(m), None) => {
                let places = self.doc.petri.as_ref().map(|p| p.places.clone()).unwrap_or_default();
                for place in m.keys() {
                    if !places.contains(place) {
                        self.push(ptr.at("marking").at(place).error(format!("unknown place \"{place}\"")));
                    }
                }
            }
            (Kind::Gts, None, Some(g)) => self.graph(g, &ptr.at("graph"), false),
            (Kind::Petri, _, _) => self.push(ptr.error("expected a marking and no graph")),
            (Kind::Gts, _, _) => self.push(ptr.error("expected a graph and no marking")),
        }
        match &s.state {
            Some(q) => self.control_state(q, &ptr.at("state")),
            None if concrete && self.doc.automaton.is_some() => self.push(ptr.at("state").error("missing control state")),
            None => {}
        }
        if let Some(m) = &s.marker {
            self.marker(m, &ptr.at("marker"));
        }
    }

    fn constraint(&mut self, c: &ConstraintDoc, ptr: &Pointer, positive: Option<bool>) {
        let mismatch = |want: bool| if want { "a positive constraint is required here" } else { "a negative constraint is required here" };
        match c {
            ConstraintDoc::Exists(s) => {
                if positive == Some(false) {
                    self.push(ptr.error(mismatch(false)));
                }
                self.state(s, &ptr.at("exists"), false);
            }
            ConstraintDoc::NotExists(s) => {
                if positive == Some(true) {
                    self.push(ptr.error(mismatch(true)));
                }
                self.state(s, &ptr.at("not_exists"), false);
            }
            ConstraintDoc::And(cs) | ConstraintDoc::Or(cs) => {
                let key = if matches!(c, ConstraintDoc::And(_)) { "and" } else { "or" };
                if cs.is_empty() {
                    self.push(ptr.at(key).error("empty combination"));
                }
                for (i, c) in cs.iter().enumerate() {
                    self.constraint(c, &ptr.at(key).at(i), positive);
                }
            }
        }
    }
}
