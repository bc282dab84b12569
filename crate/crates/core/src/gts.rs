//! Graph-transformation backend: SPO rewriting over classes of graphs with
//! bounded path length, ordered by the subgraph order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{Backend, BackendError, EngineError};
use crate::joint::{self, check_control, ControlView, Marker, Move, Owner, ResolvedAutomaton};
use crate::order::{minimize, OrderError, Wqo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

/// Interns label names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Label {
        match self.get(name) {
            Some(l) => l,
            None => {
                self.names.push(name.to_string());
                Label(self.names.len() as u32 - 1)
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<Label> {
        self.names.iter().position(|n| n == name).map(|i| Label(i as u32))
    }

    pub fn name(&self, l: Label) -> &str {
        &self.names[l.0 as usize]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GtsError {
    #[error("edge {edge} references missing node")]
    DanglingEdge { edge: usize },
    #[error("rule `{name}`: {reason}")]
    InvalidRule { name: String, reason: String },
    #[error("invalid match: {0}")]
    InvalidMatch(String),
    #[error(transparent)]
    Order(#[from] OrderError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub tgt: usize,
    pub label: Label,
}

/// Directed multigraph with labeled nodes and edges; loops allowed.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Graph {
    pub nodes: Vec<Label>,
    pub edges: Vec<Edge>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: Label) -> usize {
        self.nodes.push(label);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, src: usize, tgt: usize, label: Label) -> usize {
        self.edges.push(Edge { src, tgt, label });
        self.edges.len() - 1
    }

    pub fn validate(&self) -> Result<(), GtsError> {
        let n = self.nodes.len();
        match self.edges.iter().position(|e| e.src >= n || e.tgt >= n) {
            Some(edge) => Err(GtsError::DanglingEdge { edge }),
            None => Ok(()),
        }
    }

    pub fn label_count(&self, l: Label) -> usize {
        self.nodes.iter().filter(|x| **x == l).count()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.src == v || e.tgt == v).count()
    }

    pub fn canonical(&self) -> Graph {
        canonical_form(self)
    }
}

/// Incidence data shared by canonical labeling and embedding search.
struct Adjacency {
    n: usize,
    /// Per node: `(direction, label, other end)` with 0 = out, 1 = in, 2 = loop.
    incid: Vec<Vec<(u8, Label, usize)>>,
    /// `cells[a * n + b]`: sorted `(label, count)` of edges `a → b`.
    cells: Vec<Vec<(Label, u32)>>,
    /// Per node: sorted `(direction, label, count)`.
    profile: Vec<Vec<(u8, Label, u32)>>,
}

impl Adjacency {
    fn new(g: &Graph) -> Self {
        let n = g.nodes.len();
        let mut incid = vec![Vec::new(); n];
        let mut cells: Vec<Vec<(Label, u32)>> = vec![Vec::new(); n * n];
        for e in &g.edges {
            if e.src == e.tgt {
                incid[e.src].push((2, e.label, e.src));
            } else {
                incid[e.src].push((0, e.label, e.tgt));
                incid[e.tgt].push((1, e.label, e.src));
            }
            bump(&mut cells[e.src * n + e.tgt], e.label);
        }
        for c in &mut cells {
            c.sort_unstable();
        }
        let profile = incid
            .iter_mut()
            .map(|list| {
                list.sort_unstable();
                let mut p: Vec<(u8, Label, u32)> = Vec::new();
                for &(d, l, _) in list.iter() {
                    match p.last_mut() {
                        Some(last) if last.0 == d && last.1 == l => last.2 += 1,
                        _ => p.push((d, l, 1)),
                    }
                }
                p
            })
            .collect();
        Self { n, incid, cells, profile }
    }

    fn cell(&self, a: usize, b: usize) -> &[(Label, u32)] {
        &self.cells[a * self.n + b]
    }
}

fn bump(cell: &mut Vec<(Label, u32)>, l: Label) {
    match cell.iter_mut().find(|(x, _)| *x == l) {
        Some((_, c)) => *c += 1,
        None => cell.push((l, 1)),
    }
}

/// Every `(key, count)` of `small` has at least that count in `big`. Both sorted.
fn dominated<K: Ord + Copy>(small: &[(K, u32)], big: &[(K, u32)]) -> bool {
    let mut j = 0;
    for &(k, c) in small {
        while j < big.len() && big[j].0 < k {
            j += 1;
        }
        if j == big.len() || big[j].0 != k || big[j].1 < c {
            return false;
        }
    }
    true
}

fn profile_dominated(small: &[(u8, Label, u32)], big: &[(u8, Label, u32)]) -> bool {
    let s: Vec<((u8, Label), u32)> = small.iter().map(|&(d, l, c)| ((d, l), c)).collect();
    let b: Vec<((u8, Label), u32)> = big.iter().map(|&(d, l, c)| ((d, l), c)).collect();
    dominated(&s, &b)
}

// ---------------------------------------------------------------------------
// Canonical form

fn ranks<T: Ord>(keys: &[T]) -> (Vec<u32>, usize) {
    let mut sorted: Vec<&T> = keys.iter().collect();
    sorted.sort();
    sorted.dedup();
    let colors = keys.iter().map(|k| sorted.binary_search(&k).unwrap() as u32).collect();
    (colors, sorted.len())
}

/// Direction, label and colour of an incident edge's other end.
type Incidence = (u8, Label, u32);

/// Colour refinement until the partition is stable. Colours are ranks of
/// iso-invariant signatures, so the result does not depend on node order.
fn refine(adj: &Adjacency, colors: &[u32]) -> Vec<u32> {
    let (mut colors, mut classes) = ranks(colors);
    loop {
        let sigs: Vec<(u32, Vec<Incidence>)> = (0..adj.n)
            .map(|v| {
                let mut s: Vec<Incidence> =
                    adj.incid[v].iter().map(|&(d, l, o)| (d, l, colors[o])).collect();
                s.sort_unstable();
                (colors[v], s)
            })
            .collect();
        let (next, k) = ranks(&sigs);
        colors = next;
        if k == classes {
            return colors;
        }
        classes = k;
    }
}

/// Swapping `u` and `v` is an automorphism.
fn twins(adj: &Adjacency, u: usize, v: usize) -> bool {
    if adj.profile[u] != adj.profile[v] || adj.cell(u, u) != adj.cell(v, v) || adj.cell(u, v) != adj.cell(v, u) {
        return false;
    }
    (0..adj.n).filter(|&w| w != u && w != v).all(|w| adj.cell(u, w) == adj.cell(v, w) && adj.cell(w, u) == adj.cell(w, v))
}

fn relabel(g: &Graph, pos: &[u32]) -> Graph {
    let mut nodes = vec![Label(0); g.nodes.len()];
    for (v, l) in g.nodes.iter().enumerate() {
        nodes[pos[v] as usize] = *l;
    }
    let mut edges: Vec<Edge> = g
        .edges
        .iter()
        .map(|e| Edge { src: pos[e.src] as usize, tgt: pos[e.tgt] as usize, label: e.label })
        .collect();
    edges.sort_unstable();
    Graph { nodes, edges }
}

fn canon_search(g: &Graph, adj: &Adjacency, colors: &[u32], best: &mut Option<Graph>) {
    let colors = refine(adj, colors);
    let mut size = vec![0u32; adj.n];
    for &c in &colors {
        size[c as usize] += 1;
    }
    let Some(cell) = (0..adj.n).find(|&c| size[c] > 1) else {
        let candidate = relabel(g, &colors);
        if best.as_ref().is_none_or(|b| candidate < *b) {
            *best = Some(candidate);
        }
        return;
    };
    let mut reps: Vec<usize> = Vec::new();
    for v in (0..adj.n).filter(|&v| colors[v] as usize == cell) {
        if reps.iter().any(|&u| twins(adj, u, v)) {
            continue;
        }
        reps.push(v);
        let split: Vec<u32> = colors
            .iter()
            .enumerate()
            .map(|(u, &c)| 2 * c + u32::from(c as usize == cell && u != v))
            .collect();
        canon_search(g, adj, &split, best);
    }
}

/// Canonical representative of the isomorphism class of `g`: the least
/// relabelled encoding (node labels, then sorted edges) over the leaves of an
/// individualization-refinement search.
pub fn canonical_form(g: &Graph) -> Graph {
    if g.nodes.is_empty() {
        return Graph::default();
    }
    let adj = Adjacency::new(g);
    let init: Vec<u32> = g.nodes.iter().map(|l| l.0).collect();
    let mut best = None;
    canon_search(g, &adj, &init, &mut best);
    best.expect("search reaches at least one leaf")
}

pub fn isomorphic(a: &Graph, b: &Graph) -> bool {
    a.nodes.len() == b.nodes.len() && a.edges.len() == b.edges.len() && canonical_form(a) == canonical_form(b)
}

/// All graphs with at most `max_nodes` nodes and `max_edges` edges over the
/// given labels, without loops or parallel edges of equal label, one per
/// isomorphism class, in canonical form and sorted.
pub fn small_graphs(max_nodes: usize, node_labels: &[Label], edge_labels: &[Label], max_edges: usize) -> Vec<Graph> {
    let mut seen = std::collections::BTreeSet::new();
    let mut layer = vec![Graph::new()];
    seen.insert(Graph::new());
    while !layer.is_empty() {
        let mut next = Vec::new();
        for g in &layer {
            let mut grown = Vec::new();
            if g.nodes.len() < max_nodes {
                for &l in node_labels {
                    let mut h = g.clone();
                    h.add_node(l);
                    grown.push(h);
                }
            }
            if g.edges.len() < max_edges {
                for src in 0..g.nodes.len() {
                    for tgt in (0..g.nodes.len()).filter(|&t| t != src) {
                        for &label in edge_labels {
                            let e = Edge { src, tgt, label };
                            if !g.edges.contains(&e) {
                                let mut h = g.clone();
                                h.edges.push(e);
                                grown.push(h);
                            }
                        }
                    }
                }
            }
            for h in grown {
                let c = canonical_form(&h);
                if seen.insert(c.clone()) {
                    next.push(c);
                }
            }
        }
        layer = next;
    }
    seen.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Embeddings

/// Total injective label-preserving morphism given by node and edge images.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Morphism {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
}

fn label_multiset_dominated(g: &Graph, h: &Graph) -> bool {
    let mut a: Vec<Label> = g.nodes.clone();
    let mut b: Vec<Label> = h.nodes.clone();
    a.sort_unstable();
    b.sort_unstable();
    let count = |v: &[Label]| {
        let mut out: Vec<(Label, u32)> = Vec::new();
        for &l in v {
            bump(&mut out, l);
        }
        out.sort_unstable();
        out
    };
    dominated(&count(&a), &count(&b))
}

struct NodeMapSearch<'a> {
    g: &'a Graph,
    h: &'a Graph,
    ga: Adjacency,
    ha: Adjacency,
    order: Vec<usize>,
    /// For each position in `order`, the earlier-placed nodes adjacent to it.
    back: Vec<Vec<usize>>,
    compat: Vec<Vec<usize>>,
}

impl<'a> NodeMapSearch<'a> {
    fn new(g: &'a Graph, h: &'a Graph) -> Option<Self> {
        if g.nodes.len() > h.nodes.len() || g.edges.len() > h.edges.len() || !label_multiset_dominated(g, h) {
            return None;
        }
        let ga = Adjacency::new(g);
        let ha = Adjacency::new(h);
        let compat: Vec<Vec<usize>> = (0..g.nodes.len())
            .map(|u| {
                (0..h.nodes.len())
                    .filter(|&x| {
                        g.nodes[u] == h.nodes[x]
                            && profile_dominated(&ga.profile[u], &ha.profile[x])
                            && dominated(ga.cell(u, u), ha.cell(x, x))
                    })
                    .collect()
            })
            .collect();
        if compat.iter().any(|c| c.is_empty()) {
            return None;
        }
        // Most constrained first, then grow along edges.
        let n = g.nodes.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut back = Vec::with_capacity(n);
        let neighbours: Vec<Vec<usize>> = (0..n)
            .map(|u| {
                let mut v: Vec<usize> = ga.incid[u].iter().map(|x| x.2).filter(|&w| w != u).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        for _ in 0..n {
            let next = (0..n)
                .filter(|&u| !placed[u])
                .max_by_key(|&u| {
                    let linked = neighbours[u].iter().filter(|&&w| placed[w]).count();
                    (linked, neighbours[u].len(), std::cmp::Reverse(compat[u].len()), std::cmp::Reverse(u))
                })
                .unwrap();
            back.push(neighbours[next].iter().copied().filter(|&w| placed[w]).collect());
            placed[next] = true;
            order.push(next);
        }
        Some(Self { g, h, ga, ha, order, back, compat })
    }

    /// Calls `visit` with every node map; stops early when it returns false.
    fn run(&self, visit: &mut dyn FnMut(&[usize]) -> bool) {
        let mut map = vec![usize::MAX; self.g.nodes.len()];
        let mut used = vec![false; self.h.nodes.len()];
        self.extend(0, &mut map, &mut used, visit);
    }

    fn extend(&self, depth: usize, map: &mut [usize], used: &mut [bool], visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if depth == self.order.len() {
            return visit(map);
        }
        let u = self.order[depth];
        for &x in &self.compat[u] {
            if used[x] {
                continue;
            }
            let ok = self.back[depth].iter().all(|&w| {
                dominated(self.ga.cell(u, w), self.ha.cell(x, map[w])) && dominated(self.ga.cell(w, u), self.ha.cell(map[w], x))
            });
            if !ok {
                continue;
            }
            map[u] = x;
            used[x] = true;
            let go_on = self.extend(depth + 1, map, used, visit);
            used[x] = false;
            map[u] = usize::MAX;
            if !go_on {
                return false;
            }
        }
        true
    }
}

fn edge_buckets(h: &Graph) -> BTreeMap<(usize, usize, Label), Vec<usize>> {
    let mut out: BTreeMap<(usize, usize, Label), Vec<usize>> = BTreeMap::new();
    for (i, e) in h.edges.iter().enumerate() {
        out.entry((e.src, e.tgt, e.label)).or_default().push(i);
    }
    out
}

/// Some edge assignment for a node map whose pair counts are dominated.
fn first_edge_assignment(g: &Graph, buckets: &BTreeMap<(usize, usize, Label), Vec<usize>>, map: &[usize]) -> Vec<usize> {
    let mut taken: BTreeMap<(usize, usize, Label), usize> = BTreeMap::new();
    g.edges
        .iter()
        .map(|e| {
            let key = (map[e.src], map[e.tgt], e.label);
            let i = taken.entry(key).or_insert(0);
            *i += 1;
            buckets[&key][*i - 1]
        })
        .collect()
}

fn all_edge_assignments(
    g: &Graph,
    buckets: &BTreeMap<(usize, usize, Label), Vec<usize>>,
    map: &[usize],
    idx: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if idx == g.edges.len() {
        out.push(current.clone());
        return;
    }
    let e = g.edges[idx];
    for &cand in &buckets[&(map[e.src], map[e.tgt], e.label)] {
        if current.contains(&cand) {
            continue;
        }
        current.push(cand);
        all_edge_assignments(g, buckets, map, idx + 1, current, out);
        current.pop();
    }
}

/// All total injective morphisms `g ↪ h`.
pub fn embeddings(g: &Graph, h: &Graph) -> Vec<Morphism> {
    let Some(search) = NodeMapSearch::new(g, h) else { return vec![] };
    let buckets = edge_buckets(h);
    let mut out = Vec::new();
    search.run(&mut |map| {
        let mut assignments = Vec::new();
        all_edge_assignments(g, &buckets, map, 0, &mut Vec::new(), &mut assignments);
        out.extend(assignments.into_iter().map(|edges| Morphism { nodes: map.to_vec(), edges }));
        true
    });
    out.sort();
    out
}

/// Injective matches of `g` in `h`, one per node map. Different edge choices
/// over the same node map only permute parallel edges and give isomorphic
/// rewriting results.
pub fn matches(g: &Graph, h: &Graph) -> Vec<Morphism> {
    let Some(search) = NodeMapSearch::new(g, h) else { return vec![] };
    let buckets = edge_buckets(h);
    let mut out = Vec::new();
    search.run(&mut |map| {
        out.push(Morphism { nodes: map.to_vec(), edges: first_edge_assignment(g, &buckets, map) });
        true
    });
    out
}

/// Subgraph order: `g` embeds injectively into `h`.
pub fn embeds(g: &Graph, h: &Graph) -> bool {
    let Some(search) = NodeMapSearch::new(g, h) else { return false };
    let mut found = false;
    search.run(&mut |_| {
        found = true;
        false
    });
    found
}

// ---------------------------------------------------------------------------
// Overlaps

/// A jointly surjective pair of injective morphisms `A ↪ U ↩ B`. `A` sits in
/// `U` as its first nodes and edges; `b_nodes`/`b_edges` give the images of `B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub graph: Graph,
    pub b_nodes: Vec<usize>,
    pub b_edges: Vec<usize>,
}

/// Every overlap of `a` and `b`, one per partial identification of the items
/// of `b` with items of `a` (distinct identifications give non-isomorphic
/// cospans over fixed `a` and `b`).
pub fn overlaps(a: &Graph, b: &Graph, cap: Option<usize>) -> Result<Vec<Overlap>, OrderError> {
    overlaps_filtered(a, b, cap, &|_, _| true)
}

fn overlaps_filtered(
    a: &Graph,
    b: &Graph,
    cap: Option<usize>,
    node_ok: &dyn Fn(usize, usize) -> bool,
) -> Result<Vec<Overlap>, OrderError> {
    let nodes = a.nodes.len() + b.nodes.len();
    if let Some(cap) = cap {
        if nodes > cap {
            return Err(OrderError::OverlapCap { nodes, cap });
        }
    }
    let mut out = Vec::new();
    let mut map: Vec<Option<usize>> = Vec::with_capacity(b.nodes.len());
    let mut used = vec![false; a.nodes.len()];
    overlap_nodes(a, b, node_ok, &mut map, &mut used, &mut out);
    Ok(out)
}

fn overlap_nodes(
    a: &Graph,
    b: &Graph,
    node_ok: &dyn Fn(usize, usize) -> bool,
    map: &mut Vec<Option<usize>>,
    used: &mut [bool],
    out: &mut Vec<Overlap>,
) {
    let i = map.len();
    if i == b.nodes.len() {
        let mut emap = Vec::with_capacity(b.edges.len());
        let mut eused = vec![false; a.edges.len()];
        overlap_edges(a, b, map, &mut emap, &mut eused, out);
        return;
    }
    map.push(None);
    overlap_nodes(a, b, node_ok, map, used, out);
    map.pop();
    for x in 0..a.nodes.len() {
        if used[x] || a.nodes[x] != b.nodes[i] || !node_ok(i, x) {
            continue;
        }
        used[x] = true;
        map.push(Some(x));
        overlap_nodes(a, b, node_ok, map, used, out);
        map.pop();
        used[x] = false;
    }
}

fn overlap_edges(
    a: &Graph,
    b: &Graph,
    nmap: &[Option<usize>],
    emap: &mut Vec<Option<usize>>,
    eused: &mut [bool],
    out: &mut Vec<Overlap>,
) {
    let j = emap.len();
    if j == b.edges.len() {
        out.push(glue(a, b, nmap, emap));
        return;
    }
    emap.push(None);
    overlap_edges(a, b, nmap, emap, eused, out);
    emap.pop();
    let e = b.edges[j];
    if let (Some(s), Some(t)) = (nmap[e.src], nmap[e.tgt]) {
        for (k, f) in a.edges.iter().enumerate() {
            if eused[k] || f.src != s || f.tgt != t || f.label != e.label {
                continue;
            }
            eused[k] = true;
            emap.push(Some(k));
            overlap_edges(a, b, nmap, emap, eused, out);
            emap.pop();
            eused[k] = false;
        }
    }
}

fn glue(a: &Graph, b: &Graph, nmap: &[Option<usize>], emap: &[Option<usize>]) -> Overlap {
    let mut graph = a.clone();
    let b_nodes: Vec<usize> = b
        .nodes
        .iter()
        .zip(nmap)
        .map(|(l, m)| m.unwrap_or_else(|| graph.add_node(*l)))
        .collect();
    let b_edges: Vec<usize> = b
        .edges
        .iter()
        .zip(emap)
        .map(|(e, m)| m.unwrap_or_else(|| graph.add_edge(b_nodes[e.src], b_nodes[e.tgt], e.label)))
        .collect();
    Overlap { graph, b_nodes, b_edges }
}

// ---------------------------------------------------------------------------
// Rules

/// SPO rule `L ⇀ R` given by a partial injective correspondence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSPO {
    pub name: String,
    pub left: Graph,
    pub right: Graph,
    pub node_map: Vec<Option<usize>>,
    pub edge_map: Vec<Option<usize>>,
    pub owner: Owner,
}

impl RuleSPO {
    pub fn validate(&self) -> Result<(), GtsError> {
        let bad = |reason: String| GtsError::InvalidRule { name: self.name.clone(), reason };
        self.left.validate().map_err(|e| bad(format!("left side: {e}")))?;
        self.right.validate().map_err(|e| bad(format!("right side: {e}")))?;
        if self.node_map.len() != self.left.nodes.len() || self.edge_map.len() != self.left.edges.len() {
            return Err(bad("map does not cover the left side".into()));
        }
        let mut hit = vec![false; self.right.nodes.len()];
        for (l, r) in self.node_map.iter().enumerate() {
            let Some(r) = *r else { continue };
            if r >= hit.len() {
                return Err(bad(format!("node {l} maps outside the right side")));
            }
            if std::mem::replace(&mut hit[r], true) {
                return Err(bad("node map is not injective".into()));
            }
            if self.left.nodes[l] != self.right.nodes[r] {
                return Err(bad(format!("node {l} changes its label")));
            }
        }
        let mut hit = vec![false; self.right.edges.len()];
        for (l, r) in self.edge_map.iter().enumerate() {
            let Some(r) = *r else { continue };
            if r >= hit.len() {
                return Err(bad(format!("edge {l} maps outside the right side")));
            }
            if std::mem::replace(&mut hit[r], true) {
                return Err(bad("edge map is not injective".into()));
            }
            let (le, re) = (self.left.edges[l], self.right.edges[r]);
            if le.label != re.label {
                return Err(bad(format!("edge {l} changes its label")));
            }
            if self.node_map[le.src] != Some(re.src) || self.node_map[le.tgt] != Some(re.tgt) {
                return Err(bad(format!("edge {l} is mapped but its endpoints are not mapped along")));
            }
        }
        Ok(())
    }

    /// `R ⇀ L`.
    pub fn inverse(&self) -> RuleSPO {
        let mut node_map = vec![None; self.right.nodes.len()];
        for (l, r) in self.node_map.iter().enumerate() {
            if let Some(r) = r {
                node_map[*r] = Some(l);
            }
        }
        let mut edge_map = vec![None; self.right.edges.len()];
        for (l, r) in self.edge_map.iter().enumerate() {
            if let Some(r) = r {
                edge_map[*r] = Some(l);
            }
        }
        RuleSPO {
            name: self.name.clone(),
            left: self.right.clone(),
            right: self.left.clone(),
            node_map,
            edge_map,
            owner: self.owner,
        }
    }

    pub fn deletes_nodes(&self) -> bool {
        self.node_map.iter().any(Option::is_none)
    }

    fn created_nodes(&self) -> Vec<bool> {
        let mut created = vec![true; self.right.nodes.len()];
        for r in self.node_map.iter().flatten() {
            created[*r] = false;
        }
        created
    }

    fn created_edges(&self) -> Vec<bool> {
        let mut created = vec![true; self.right.edges.len()];
        for r in self.edge_map.iter().flatten() {
            created[*r] = false;
        }
        created
    }
}

fn check_match(rule: &RuleSPO, g: &Graph, m: &Morphism) -> Result<(), GtsError> {
    let l = &rule.left;
    if m.nodes.len() != l.nodes.len() || m.edges.len() != l.edges.len() {
        return Err(GtsError::InvalidMatch("match does not cover the left side".into()));
    }
    let mut seen = vec![false; g.nodes.len()];
    for (u, &x) in m.nodes.iter().enumerate() {
        if x >= g.nodes.len() || std::mem::replace(&mut seen[x], true) || g.nodes[x] != l.nodes[u] {
            return Err(GtsError::InvalidMatch(format!("node {u} is not matched injectively by label")));
        }
    }
    let mut seen = vec![false; g.edges.len()];
    for (i, &k) in m.edges.iter().enumerate() {
        let e = l.edges[i];
        let ok = k < g.edges.len()
            && !std::mem::replace(&mut seen[k], true)
            && g.edges[k] == Edge { src: m.nodes[e.src], tgt: m.nodes[e.tgt], label: e.label };
        if !ok {
            return Err(GtsError::InvalidMatch(format!("edge {i} is not matched injectively along its nodes")));
        }
    }
    Ok(())
}

/// Applies `rule` at `m` with SPO semantics: deleted items go, edges left
/// dangling go with them, created items are added fresh. Not canonicalized.
fn apply_raw(rule: &RuleSPO, g: &Graph, m: &Morphism) -> Graph {
    let mut drop_node = vec![false; g.nodes.len()];
    for (u, r) in rule.node_map.iter().enumerate() {
        if r.is_none() {
            drop_node[m.nodes[u]] = true;
        }
    }
    let mut drop_edge = vec![false; g.edges.len()];
    for (i, r) in rule.edge_map.iter().enumerate() {
        if r.is_none() {
            drop_edge[m.edges[i]] = true;
        }
    }
    let mut out = Graph::new();
    let mut new_id = vec![usize::MAX; g.nodes.len()];
    for (v, l) in g.nodes.iter().enumerate() {
        if !drop_node[v] {
            new_id[v] = out.add_node(*l);
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        if !drop_edge[i] && !drop_node[e.src] && !drop_node[e.tgt] {
            out.add_edge(new_id[e.src], new_id[e.tgt], e.label);
        }
    }
    let mut r_id = vec![usize::MAX; rule.right.nodes.len()];
    for (u, r) in rule.node_map.iter().enumerate() {
        if let Some(r) = r {
            r_id[*r] = new_id[m.nodes[u]];
        }
    }
    for (r, l) in rule.right.nodes.iter().enumerate() {
        if r_id[r] == usize::MAX {
            r_id[r] = out.add_node(*l);
        }
    }
    for (j, created) in rule.created_edges().into_iter().enumerate() {
        if created {
            let e = rule.right.edges[j];
            out.add_edge(r_id[e.src], r_id[e.tgt], e.label);
        }
    }
    out
}

/// SPO application at a given match, canonicalized.
pub fn apply(rule: &RuleSPO, g: &Graph, m: &Morphism) -> Result<Graph, GtsError> {
    check_match(rule, g, m)?;
    Ok(canonical_form(&apply_raw(rule, g, m)))
}

// ---------------------------------------------------------------------------
// Graph classes

/// Length of a longest simple path, ignoring edge direction.
pub fn longest_path(g: &Graph) -> usize {
    longest_path_capped(g, usize::MAX)
}

/// Longest simple path, exploring no further once a path longer than `cap` exists.
fn longest_path_capped(g: &Graph, cap: usize) -> usize {
    let n = g.nodes.len();
    let mut nb: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        if e.src != e.tgt {
            nb[e.src].push(e.tgt);
            nb[e.tgt].push(e.src);
        }
    }
    for l in &mut nb {
        l.sort_unstable();
        l.dedup();
    }
    fn dfs(v: usize, len: usize, nb: &[Vec<usize>], on: &mut [bool], best: &mut usize, cap: usize) {
        *best = (*best).max(len);
        if *best > cap {
            return;
        }
        for &w in &nb[v] {
            if !on[w] {
                on[w] = true;
                dfs(w, len + 1, nb, on, best, cap);
                on[w] = false;
                if *best > cap {
                    return;
                }
            }
        }
    }
    let mut best = 0;
    let mut on = vec![false; n];
    for v in 0..n {
        on[v] = true;
        dfs(v, 0, &nb, &mut on, &mut best, cap);
        on[v] = false;
        if best > cap {
            break;
        }
    }
    best
}

/// Drops isolated nodes whose label is in `labels`.
pub fn quotient_isolated(g: &Graph, labels: &[Label]) -> Graph {
    if labels.is_empty() {
        return g.clone();
    }
    let mut touched = vec![false; g.nodes.len()];
    for e in &g.edges {
        touched[e.src] = true;
        touched[e.tgt] = true;
    }
    let keep: Vec<bool> = g.nodes.iter().zip(&touched).map(|(l, t)| *t || !labels.contains(l)).collect();
    if keep.iter().all(|k| *k) {
        return g.clone();
    }
    let mut out = Graph::new();
    let mut id = vec![usize::MAX; g.nodes.len()];
    for (v, l) in g.nodes.iter().enumerate() {
        if keep[v] {
            id[v] = out.add_node(*l);
        }
    }
    for e in &g.edges {
        out.add_edge(id[e.src], id[e.tgt], e.label);
    }
    out
}

/// The states of a graph system: graphs whose longest path is bounded, with
/// exact counts for selected labels, taken modulo isolated nodes of the
/// quotient labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphClass {
    pub max_path_length: Option<usize>,
    pub label_counts: Vec<(Label, usize)>,
    pub quotient: Vec<Label>,
}

impl GraphClass {
    pub fn unrestricted() -> Self {
        Self::default()
    }

    pub fn normalize(&self, g: &Graph) -> Graph {
        quotient_isolated(g, &self.quotient)
    }

    pub fn path_ok(&self, g: &Graph) -> bool {
        self.max_path_length.is_none_or(|b| longest_path_capped(g, b) <= b)
    }

    fn counts_within(&self, g: &Graph) -> bool {
        self.label_counts.iter().all(|&(l, n)| g.label_count(l) <= n)
    }

    pub fn contains(&self, g: &Graph) -> bool {
        self.label_counts.iter().all(|&(l, n)| g.label_count(l) == n)
            && self.path_ok(g)
            && self.normalize(g).nodes.len() == g.nodes.len()
    }

    /// The least class member above `g`: normalized and padded with isolated
    /// nodes up to the exact label counts. `None` if no member lies above `g`.
    pub fn complete(&self, g: &Graph) -> Option<Graph> {
        let mut g = self.normalize(g);
        if !self.counts_within(&g) || !self.path_ok(&g) {
            return None;
        }
        for &(l, n) in &self.label_counts {
            for _ in g.label_count(l)..n {
                g.add_node(l);
            }
        }
        Some(g)
    }
}

// ---------------------------------------------------------------------------
// Backward step

/// Minimal class graphs that can be rewritten by `rule` into a graph above `s`.
pub fn pre_step_rule(rule: &RuleSPO, s: &Graph, class: &GraphClass, cap: Option<usize>) -> Result<Vec<Graph>, GtsError> {
    let r = &rule.right;
    let created_node = rule.created_nodes();
    let created_edge = rule.created_edges();
    let s_adj = Adjacency::new(s);
    let r_adj = Adjacency::new(r);
    // A node of s identified with a created node may only carry edges the rule creates.
    let node_ok = |rn: usize, sn: usize| !created_node[rn] || profile_dominated(&s_adj.profile[sn], &r_adj.profile[rn]);
    let mut found = Vec::new();
    for ov in overlaps_filtered(s, r, cap, &node_ok)? {
        let u = &ov.graph;
        let mut u_created = vec![false; u.nodes.len()];
        for (rn, &un) in ov.b_nodes.iter().enumerate() {
            u_created[un] = created_node[rn];
        }
        let mut from_r = vec![false; u.edges.len()];
        let mut u_edge_created = vec![false; u.edges.len()];
        for (re, &ue) in ov.b_edges.iter().enumerate() {
            from_r[ue] = true;
            u_edge_created[ue] = created_edge[re];
        }
        let context_on_created = u
            .edges
            .iter()
            .enumerate()
            .any(|(i, e)| !from_r[i] && (u_created[e.src] || u_created[e.tgt]));
        if context_on_created {
            continue;
        }
        let mut g = Graph::new();
        let mut id = vec![usize::MAX; u.nodes.len()];
        for (v, l) in u.nodes.iter().enumerate() {
            if !u_created[v] {
                id[v] = g.add_node(*l);
            }
        }
        for (i, e) in u.edges.iter().enumerate() {
            if !u_edge_created[i] {
                g.add_edge(id[e.src], id[e.tgt], e.label);
            }
        }
        let l_id: Vec<usize> = rule
            .node_map
            .iter()
            .enumerate()
            .map(|(ln, rn)| match rn {
                Some(rn) => id[ov.b_nodes[*rn]],
                None => g.add_node(rule.left.nodes[ln]),
            })
            .collect();
        for (i, e) in rule.left.edges.iter().enumerate() {
            if rule.edge_map[i].is_none() {
                g.add_edge(l_id[e.src], l_id[e.tgt], e.label);
            }
        }
        // The rewritten graph is u plus the padding of g; it must be a state too.
        let same_counts = class.label_counts.iter().all(|&(l, _)| u.label_count(l) == g.label_count(l));
        if !same_counts || !class.path_ok(u) {
            continue;
        }
        if let Some(done) = class.complete(&g) {
            found.push(canonical_form(&done));
        }
    }
    Ok(minimize(found, &SubgraphOrder).into_elements())
}

/// Plain subgraph order on canonical graphs.
#[derive(Clone, Copy, Debug, Default)]
pub struct SubgraphOrder;

impl Wqo for SubgraphOrder {
    type State = Graph;

    fn leq(&self, a: &Graph, b: &Graph) -> bool {
        embeds(a, b)
    }

    fn upper_bounds(&self, a: &Graph, b: &Graph) -> Result<Vec<Graph>, OrderError> {
        Ok(overlaps(a, b, None)?.into_iter().map(|o| canonical_form(&o.graph)).collect())
    }
}

// ---------------------------------------------------------------------------
// Joint graph system

/// Canonical graph together with the control components.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraphState {
    graph: Graph,
    state: Option<usize>,
    marker: Option<Marker>,
}

impl GraphState {
    pub fn new(graph: Graph, state: Option<usize>, marker: Option<Marker>) -> Self {
        Self { graph: canonical_form(&graph), state, marker }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn state(&self) -> Option<usize> {
        self.state
    }
}

impl ControlView for GraphState {
    fn control_state(&self) -> Option<usize> {
        self.state
    }
    fn marker(&self) -> Option<Marker> {
        self.marker
    }
}

#[derive(Clone, Debug)]
pub struct GtsSystem {
    rules: Vec<RuleSPO>,
    class: GraphClass,
    automaton: Option<ResolvedAutomaton>,
    annotated: bool,
    moves: Vec<Move>,
    overlap_cap: Option<usize>,
    inverted: bool,
}

impl GtsSystem {
    pub fn new(
        rules: Vec<RuleSPO>,
        class: GraphClass,
        automaton: Option<ResolvedAutomaton>,
        annotated: bool,
    ) -> Result<Self, GtsError> {
        for (i, r) in rules.iter().enumerate() {
            r.validate()?;
            if rules[..i].iter().any(|q| q.name == r.name) {
                return Err(GtsError::InvalidRule { name: r.name.clone(), reason: "duplicate rule name".into() });
            }
        }
        let owners: Vec<Owner> = rules.iter().map(|r| r.owner).collect();
        let moves = joint::moves(&owners, automaton.as_ref(), annotated);
        Ok(Self { rules, class, automaton, annotated, moves, overlap_cap: None, inverted: false })
    }

    /// Caps the node count of overlaps built in the backward step.
    pub fn with_overlap_cap(mut self, cap: Option<usize>) -> Self {
        self.overlap_cap = cap;
        self
    }

    pub fn rules(&self) -> &[RuleSPO] {
        &self.rules
    }

    pub fn class(&self) -> &GraphClass {
        &self.class
    }

    pub fn automaton(&self) -> Option<&ResolvedAutomaton> {
        self.automaton.as_ref()
    }

    pub fn annotated(&self) -> bool {
        self.annotated
    }

    /// Class-completed state over `g`.
    pub fn state(&self, g: &Graph, state: Option<usize>, marker: Option<Marker>) -> Option<GraphState> {
        self.class.complete(g).map(|g| GraphState::new(g, state, marker))
    }

    /// Successor graphs of `g` under one rule, up to isomorphism. Isolated
    /// nodes with quotient labels are implicitly present as often as the
    /// left-hand side needs them.
    pub fn rule_successors(&self, rule: usize, g: &Graph) -> Vec<Graph> {
        let rule = &self.rules[rule];
        let mut host = g.clone();
        for &q in &self.class.quotient {
            let isolated = (0..rule.left.nodes.len())
                .filter(|&v| rule.left.nodes[v] == q && rule.left.degree(v) == 0)
                .count();
            for _ in 0..isolated {
                host.add_node(q);
            }
        }
        let mut out: Vec<Graph> = matches(&rule.left, &host)
            .iter()
            .map(|m| self.class.normalize(&apply_raw(rule, &host, m)))
            .filter(|h| self.class.contains(h))
            .map(|h| canonical_form(&h))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

impl Wqo for GtsSystem {
    type State = GraphState;

    fn leq(&self, a: &GraphState, b: &GraphState) -> bool {
        a.state == b.state && a.marker == b.marker && embeds(&a.graph, &b.graph)
    }

    fn check(&self, s: &GraphState) -> Result<(), OrderError> {
        check_control(s.state, s.marker, self.automaton.as_ref(), self.annotated).map_err(OrderError::Foreign)?;
        if !self.class.contains(&s.graph) {
            return Err(OrderError::Foreign("graph is outside the declared class".into()));
        }
        Ok(())
    }

    fn upper_bounds(&self, a: &GraphState, b: &GraphState) -> Result<Vec<GraphState>, OrderError> {
        if a.state != b.state || a.marker != b.marker {
            return Ok(vec![]);
        }
        Ok(overlaps(&a.graph, &b.graph, self.overlap_cap)?
            .into_iter()
            .filter_map(|o| self.state(&o.graph, a.state, a.marker))
            .collect())
    }
}

impl Backend for GtsSystem {
    fn pre_basis(&self, s: &GraphState) -> Result<Vec<GraphState>, BackendError> {
        let mut per_rule: BTreeMap<usize, Vec<Graph>> = BTreeMap::new();
        let mut out = Vec::new();
        for mv in &self.moves {
            if mv.to != s.state || mv.post_marker != s.marker {
                continue;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = per_rule.entry(mv.rule) {
                e.insert(pre_step_rule(&self.rules[mv.rule], &s.graph, &self.class, self.overlap_cap)?);
            }
            for g in &per_rule[&mv.rule] {
                out.push(GraphState { graph: g.clone(), state: mv.from, marker: mv.pre_marker });
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn post_step(&self, s: &GraphState) -> Result<Vec<GraphState>, BackendError> {
        let mut per_rule: BTreeMap<usize, Vec<Graph>> = BTreeMap::new();
        let mut out = Vec::new();
        for mv in &self.moves {
            if mv.from != s.state || mv.pre_marker != s.marker {
                continue;
            }
            let succ = per_rule.entry(mv.rule).or_insert_with(|| self.rule_successors(mv.rule, &s.graph));
            for g in succ.iter() {
                out.push(GraphState { graph: g.clone(), state: mv.to, marker: mv.post_marker });
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Only rules that delete no node are inverted: a deleted node takes its
    /// dangling context edges along, which the inverse rule cannot restore.
    fn inverted(&self) -> Result<Self, EngineError> {
        if let Some(r) = self.rules.iter().find(|r| r.deletes_nodes()) {
            return Err(EngineError::NotInvertible(format!(
                "rule `{}` deletes nodes; inversion needs rules that only delete edges",
                r.name
            )));
        }
        if !self.class.quotient.is_empty() {
            return Err(EngineError::NotInvertible("graph classes taken modulo isolated nodes are not inverted".into()));
        }
        Ok(Self {
            rules: self.rules.iter().map(RuleSPO::inverse).collect(),
            class: self.class.clone(),
            automaton: self.automaton.clone(),
            annotated: self.annotated,
            moves: self.moves.iter().map(|m| m.reversed()).collect(),
            overlap_cap: self.overlap_cap,
            inverted: !self.inverted,
        })
    }
}
