//! Segregated graphs over a friendship network and the s-separation criterion.
//!
//! A [`MixedGraph`] carries directed, bidirected and undirected edges. The
//! layered pattern used throughout the crate places three vertices per unit
//! (`L_i`, `A_i`, `Y_i`) and connects same-layer vertices of adjacent units
//! with one edge type per layer, chosen by a [`SegregatedGraphSpec`].
//!
//! Separation is decided on the augmented graph of the anterior of the query:
//! original adjacencies become undirected, and two vertices are also joined
//! when a walk of collider sections connects them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::FriendshipNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// `from -> to`
    Directed,
    Bidirected,
    Undirected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn directed(from: usize, to: usize) -> Self {
        Self { from, to, kind: EdgeKind::Directed }
    }
    pub fn bidirected(a: usize, b: usize) -> Self {
        Self { from: a, to: b, kind: EdgeKind::Bidirected }
    }
    pub fn undirected(a: usize, b: usize) -> Self {
        Self { from: a, to: b, kind: EdgeKind::Undirected }
    }
}

/// Loopless mixed graph. Parallel edges are representable so that validity
/// checks can report them.
#[derive(Debug, Clone)]
pub struct MixedGraph {
    labels: Vec<String>,
    edges: Vec<Edge>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    spouses: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl MixedGraph {
    pub fn new(labels: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = labels.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut spouses = vec![Vec::new(); n];
        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            if e.from >= n || e.to >= n {
                return invalid(format!("edge {:?} has an endpoint outside 0..{n}", e));
            }
            if e.from == e.to {
                return invalid(format!("loop on vertex {}", labels[e.from]));
            }
            match e.kind {
                EdgeKind::Directed => {
                    children[e.from].push(e.to);
                    parents[e.to].push(e.from);
                }
                EdgeKind::Bidirected => {
                    spouses[e.from].push(e.to);
                    spouses[e.to].push(e.from);
                }
                EdgeKind::Undirected => {
                    neighbors[e.from].push(e.to);
                    neighbors[e.to].push(e.from);
                }
            }
        }
        for list in parents.iter_mut().chain(&mut children).chain(&mut spouses).chain(&mut neighbors) {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { labels, edges, parents, children, spouses, neighbors })
    }

    /// Graph with vertices labelled `v0, v1, ...`.
    pub fn unlabeled(n: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::new((0..n).map(|i| format!("v{i}")).collect(), edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn vertex(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn spouses(&self, v: usize) -> &[usize] {
        &self.spouses[v]
    }

    pub fn undirected_neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    fn check_vertices(&self, set: &[usize]) -> Result<()> {
        match set.iter().find(|&&v| v >= self.n_vertices()) {
            Some(v) => invalid(format!("vertex {v} outside 0..{}", self.n_vertices())),
            None => Ok(()),
        }
    }
}

/// One of the three variable layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    L,
    A,
    Y,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::L, Layer::A, Layer::Y];

    pub fn index(self) -> usize {
        match self {
            Layer::L => 0,
            Layer::A => 1,
            Layer::Y => 2,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::L => "L",
            Layer::A => "A",
            Layer::Y => "Y",
        })
    }
}

/// Edge type joining same-layer variables of adjacent units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// Contagion.
    Undirected,
    /// Latent confounding.
    Bidirected,
    Unknown,
}

impl Mechanism {
    fn code(self) -> char {
        match self {
            Mechanism::Undirected => 'U',
            Mechanism::Bidirected => 'B',
            Mechanism::Unknown => '?',
        }
    }
}

/// Per-layer mechanisms. Written as a three-letter code in `L, A, Y` order,
/// e.g. `BUB`; `?` marks an undetermined layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegregatedGraphSpec {
    pub l: Mechanism,
    pub a: Mechanism,
    pub y: Mechanism,
}

impl SegregatedGraphSpec {
    pub fn new(l: Mechanism, a: Mechanism, y: Mechanism) -> Self {
        Self { l, a, y }
    }

    pub fn uniform(m: Mechanism) -> Self {
        Self::new(m, m, m)
    }

    pub fn undetermined() -> Self {
        Self::uniform(Mechanism::Unknown)
    }

    pub fn get(&self, layer: Layer) -> Mechanism {
        match layer {
            Layer::L => self.l,
            Layer::A => self.a,
            Layer::Y => self.y,
        }
    }

    pub fn set(&mut self, layer: Layer, m: Mechanism) {
        match layer {
            Layer::L => self.l = m,
            Layer::A => self.a = m,
            Layer::Y => self.y = m,
        }
    }

    pub fn is_determined(&self) -> bool {
        Layer::ALL.iter().all(|&l| self.get(l) != Mechanism::Unknown)
    }

    /// All eight fully determined specs, `UUU` first.
    pub fn all_determined() -> Vec<Self> {
        let ms = [Mechanism::Undirected, Mechanism::Bidirected];
        let mut out = Vec::with_capacity(8);
        for l in ms {
            for a in ms {
                for y in ms {
                    out.push(Self::new(l, a, y));
                }
            }
        }
        out
    }
}

impl fmt::Display for SegregatedGraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.l.code(), self.a.code(), self.y.code())
    }
}

impl FromStr for SegregatedGraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ms: Vec<Mechanism> = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'U' => Ok(Mechanism::Undirected),
                'B' => Ok(Mechanism::Bidirected),
                '?' => Ok(Mechanism::Unknown),
                other => invalid(format!("unknown mechanism code '{other}' in '{s}'")),
            })
            .collect::<Result<_>>()?;
        match ms.as_slice() {
            &[l, a, y] => Ok(Self::new(l, a, y)),
            _ => invalid(format!("mechanism code '{s}' must have three letters")),
        }
    }
}

/// Vertex id of `layer` for `unit` in graphs built by [`instantiate_sg`].
pub fn sg_vertex(layer: Layer, unit: usize) -> usize {
    3 * unit + layer.index()
}

/// Builds the layered segregated graph for `net` under a fully determined spec.
pub fn instantiate_sg(net: &FriendshipNetwork, spec: &SegregatedGraphSpec) -> Result<MixedGraph> {
    if !spec.is_determined() {
        return Err(Error::Precondition(format!("spec {spec} has an undetermined layer")));
    }
    let n = net.n_units();
    let labels = (0..n).flat_map(|i| Layer::ALL.map(|l| format!("{l}{i}"))).collect();
    let v = sg_vertex;
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push(Edge::directed(v(Layer::L, i), v(Layer::A, i)));
        edges.push(Edge::directed(v(Layer::A, i), v(Layer::Y, i)));
        edges.push(Edge::directed(v(Layer::L, i), v(Layer::Y, i)));
    }
    for (i, j) in net.edges() {
        for (s, t) in [(i, j), (j, i)] {
            edges.push(Edge::directed(v(Layer::L, s), v(Layer::A, t)));
            edges.push(Edge::directed(v(Layer::L, s), v(Layer::Y, t)));
            edges.push(Edge::directed(v(Layer::A, s), v(Layer::Y, t)));
        }
        for layer in Layer::ALL {
            let (a, b) = (v(layer, i), v(layer, j));
            edges.push(match spec.get(layer) {
                Mechanism::Undirected => Edge::undirected(a, b),
                _ => Edge::bidirected(a, b),
            });
        }
    }
    MixedGraph::new(labels, edges)
}

/// A failed segregated-graph property.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Property (i): the pair is joined by something other than a single
    /// edge or a directed + bidirected pair.
    IllegalEdgeCombination { a: usize, b: usize },
    /// Property (ii): vertex touches both a bidirected and an undirected edge.
    BidirectedAndUndirected { vertex: usize },
    /// Property (iii): these vertices lie on or feed a partially directed cycle.
    PartiallyDirectedCycle { vertices: Vec<usize> },
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Checks properties (i)-(iii) of a segregated graph.
pub fn validate_sg(g: &MixedGraph) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    let mut by_pair: std::collections::BTreeMap<(usize, usize), Vec<EdgeKind>> = Default::default();
    for e in g.edges() {
        by_pair.entry((e.from.min(e.to), e.from.max(e.to))).or_default().push(e.kind);
    }
    for (&(a, b), kinds) in &by_pair {
        let ok = match kinds.as_slice() {
            [_] => true,
            [x, y] => matches!(
                (x, y),
                (EdgeKind::Directed, EdgeKind::Bidirected) | (EdgeKind::Bidirected, EdgeKind::Directed)
            ),
            _ => false,
        };
        if !ok {
            violations.push(Violation::IllegalEdgeCombination { a, b });
        }
    }

    for v in 0..g.n_vertices() {
        if !g.spouses(v).is_empty() && !g.undirected_neighbors(v).is_empty() {
            violations.push(Violation::BidirectedAndUndirected { vertex: v });
        }
    }

    // Contract undirected components; a partially directed cycle exists iff a
    // directed edge stays inside a component or the component digraph is cyclic.
    let n = g.n_vertices();
    let mut uf = UnionFind::new(n);
    for e in g.edges().iter().filter(|e| e.kind == EdgeKind::Undirected) {
        uf.union(e.from, e.to);
    }
    let block: Vec<usize> = (0..n).map(|v| uf.find(v)).collect();
    let mut cyclic_blocks = std::collections::BTreeSet::new();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.edges().iter().filter(|e| e.kind == EdgeKind::Directed) {
        let (bf, bt) = (block[e.from], block[e.to]);
        if bf == bt {
            cyclic_blocks.insert(bf);
        } else {
            out[bf].push(bt);
            indegree[bt] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&b| block[b] == b && indegree[b] == 0).collect();
    let mut removed = vec![false; n];
    while let Some(b) = stack.pop() {
        removed[b] = true;
        for &c in &out[b] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                stack.push(c);
            }
        }
    }
    cyclic_blocks.extend((0..n).filter(|&b| block[b] == b && !removed[b]));
    if !cyclic_blocks.is_empty() {
        let vertices = (0..n).filter(|&v| cyclic_blocks.contains(&block[v])).collect();
        violations.push(Violation::PartiallyDirectedCycle { vertices });
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// `s` together with every vertex that has a partially directed walk into `s`.
pub fn anterior(g: &MixedGraph, s: &[usize]) -> Result<Vec<usize>> {
    g.check_vertices(s)?;
    let mut mask = vec![false; g.n_vertices()];
    let mut stack = Vec::new();
    for &v in s {
        if !std::mem::replace(&mut mask[v], true) {
            stack.push(v);
        }
    }
    while let Some(v) = stack.pop() {
        for &u in g.parents(v).iter().chain(g.undirected_neighbors(v)) {
            if !std::mem::replace(&mut mask[u], true) {
                stack.push(u);
            }
        }
    }
    Ok(mask_to_vec(&mask))
}

fn mask_to_vec(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(v, _)| v).collect()
}

/// Undirected graph over a vertex subset of a [`MixedGraph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedGraph {
    vertices: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Edges as `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }
}

/// Augmented graph of the subgraph induced by `s`.
///
/// Undirected components of the induced subgraph are the sections; sections
/// joined by bidirected edges chain into collider runs. Every pair of
/// vertices with an arrowhead into the same run becomes adjacent.
pub fn augment(g: &MixedGraph, s: &[usize]) -> Result<AugmentedGraph> {
    g.check_vertices(s)?;
    let n = g.n_vertices();
    let mut inside = vec![false; n];
    for &v in s {
        inside[v] = true;
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut uf = UnionFind::new(n);
    for e in g.edges() {
        if !(inside[e.from] && inside[e.to]) {
            continue;
        }
        adjacency[e.from].push(e.to);
        adjacency[e.to].push(e.from);
        if e.kind != EdgeKind::Directed {
            uf.union(e.from, e.to);
        }
    }

    // Vertices sending an arrowhead into each run, keyed by run root.
    let mut heads: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for e in g.edges() {
        if !(inside[e.from] && inside[e.to]) {
            continue;
        }
        match e.kind {
            EdgeKind::Directed => heads.entry(uf.find(e.to)).or_default().push(e.from),
            EdgeKind::Bidirected => {
                let run = uf.find(e.to);
                heads.entry(run).or_default().extend([e.from, e.to]);
            }
            EdgeKind::Undirected => {}
        }
    }
    for mut hs in heads.into_values() {
        hs.sort_unstable();
        hs.dedup();
        for (x, &a) in hs.iter().enumerate() {
            for &b in &hs[x + 1..] {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Ok(AugmentedGraph { vertices: mask_to_vec(&inside), adjacency })
}

/// Whether `z` s-separates `x` from `y` in `g`.
pub fn s_separated(g: &MixedGraph, x: &[usize], y: &[usize], z: &[usize]) -> Result<bool> {
    for (name, set) in [("x", x), ("y", y), ("z", z)] {
        g.check_vertices(set).map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))?;
    }
    let overlaps = |a: &[usize], b: &[usize]| a.iter().any(|v| b.contains(v));
    if overlaps(x, y) || overlaps(x, z) || overlaps(y, z) {
        return invalid("x, y and z must be disjoint");
    }
    let query: Vec<usize> = x.iter().chain(y).chain(z).copied().collect();
    let ant = anterior(g, &query)?;
    let aug = augment(g, &ant)?;

    let n = g.n_vertices();
    let mut blocked = vec![false; n];
    for &v in z {
        blocked[v] = true;
    }
    let mut target = vec![false; n];
    for &v in y {
        target[v] = true;
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = x.to_vec();
    for &v in x {
        seen[v] = true;
    }
    while let Some(v) = stack.pop() {
        if target[v] {
            return Ok(false);
        }
        for &w in aug.neighbors(v) {
            if !blocked[w] && !std::mem::replace(&mut seen[w], true) {
                stack.push(w);
            }
        }
    }
    Ok(true)
}

/// An s-separation query `x ⊥ y | z` over graph vertex ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparationQuery {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

impl SeparationQuery {
    pub fn holds_in(&self, g: &MixedGraph) -> Result<bool> {
        s_separated(g, &self.x, &self.y, &self.z)
    }
}

/// The independence that holds in `layer` under contagion but fails under
/// latent confounding, for `unit` of `net`:
///
/// * `L_i ⊥ L_{F2} | L_{F1}`
/// * `A_i ⊥ A_{F2} | A_{F1}, L_{F0..3}`
/// * `Y_i ⊥ Y_{F2} | Y_{F1}, A_{F0..3}, L_{F0..3}`
///
/// Returns `None` when the unit has an empty first or second ring.
pub fn null_independence_query(net: &FriendshipNetwork, layer: Layer, unit: usize) -> Result<Option<SeparationQuery>> {
    net.check_unit(unit)?;
    let rings = net.rings(unit, 3);
    if rings[1].is_empty() || rings[2].is_empty() {
        return Ok(None);
    }
    let vs = |l: Layer, units: &[usize]| units.iter().map(|&u| sg_vertex(l, u)).collect::<Vec<_>>();
    let all: Vec<usize> = rings.concat();
    let mut z = vs(layer, &rings[1]);
    let lower: &[Layer] = match layer {
        Layer::L => &[],
        Layer::A => &[Layer::L],
        Layer::Y => &[Layer::A, Layer::L],
    };
    for &l in lower {
        z.extend(vs(l, &all));
    }
    Ok(Some(SeparationQuery { x: vec![sg_vertex(layer, unit)], y: vs(layer, &rings[2]), z }))
}
