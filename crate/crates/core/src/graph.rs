//! Transition graphs over lattice configurations.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::canonical::Landmark;
use crate::error::{Error, Result};
use crate::geom::IVec3;
use crate::kinematics::{dof_analysis, lattice_centers, FoldState};
use crate::model::Structure;
use crate::moves::{connect, drive_between, enumerate_moves, Move, MoveOptions};
use crate::path::KinePath;
use crate::shape::{canonicalize_centers, detect_isl_centers, CanonicalKey};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLimits {
    pub max_nodes: usize,
    pub max_depth: usize,
    /// Quotient node identity by the 24 lattice rotations as well as translation.
    pub rotations: bool,
}

impl Default for GraphLimits {
    fn default() -> Self {
        GraphLimits { max_nodes: 10_000, max_depth: 64, rotations: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigNode {
    pub id: usize,
    pub key: CanonicalKey,
    pub quarters: Vec<i64>,
    pub centers: Vec<IVec3>,
    pub depth: usize,
    pub dof: usize,
    pub is_bifurcation: bool,
    pub isl_count: usize,
    pub label: Option<String>,
}

impl ConfigNode {
    pub fn has_isl(&self) -> bool {
        self.isl_count > 0
    }

    pub fn fold_state(&self) -> FoldState {
        FoldState::from_quarters(&self.quarters)
    }
}

/// Driven hinge with its angle at the start and end of an edge, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpan {
    pub hinge: usize,
    pub from_deg: f64,
    pub to_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    pub active: Vec<usize>,
    pub path_dof: usize,
    /// Unrestricted null dimension midway along the edge: the DOF of the branch it follows.
    pub generic_dof: usize,
    pub linear: bool,
    pub schedule: Vec<DriveSpan>,
}

impl GraphEdge {
    pub fn other(&self, n: usize) -> usize {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLoop {
    pub label: Option<String>,
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TransitionGraph {
    pub nodes: Vec<ConfigNode>,
    pub edges: Vec<GraphEdge>,
    pub loops: Vec<GraphLoop>,
    pub limits: Option<GraphLimits>,
    /// Set when `max_nodes` cut the search short.
    pub truncated: bool,
    #[serde(skip)]
    index: HashMap<CanonicalKey, usize>,
    #[serde(skip)]
    pairs: HashMap<(usize, usize), usize>,
}

pub fn node_key(s: &Structure, q: &[i64], rotations: bool) -> CanonicalKey {
    canonicalize_centers(&lattice_centers(s, q), rotations)
}

fn edge_from_move(s: &Structure, id: usize, a: usize, b: usize, m: &Move) -> GraphEdge {
    let start = &m.path.states[0];
    let end = m.path.states.last().unwrap();
    // end angles unwrapped relative to the start so the schedule reads as a single turn
    let schedule = m
        .path
        .driven
        .iter()
        .map(|&h| {
            let from = start.gamma[h].to_degrees();
            let mut to = end.gamma[h].to_degrees();
            while to - from > 180.0 {
                to -= 360.0;
            }
            while from - to > 180.0 {
                to += 360.0;
            }
            DriveSpan { hinge: h, from_deg: from, to_deg: to }
        })
        .collect();
    let mid = &m.path.states[m.path.states.len() / 2];
    let generic_dof = dof_analysis(s, mid).map(|r| r.null_dim).unwrap_or(m.path.path_dof);
    GraphEdge {
        id,
        a,
        b,
        active: m.path.active_hinges.clone(),
        path_dof: m.path.path_dof,
        generic_dof,
        linear: m.linear,
        schedule,
    }
}

impl TransitionGraph {
    fn rotations(&self) -> bool {
        self.limits.map(|l| l.rotations).unwrap_or(false)
    }

    /// Rebuild lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.nodes.iter().map(|n| (n.key.clone(), n.id)).collect();
        self.pairs = self.edges.iter().map(|e| ((e.a.min(e.b), e.a.max(e.b)), e.id)).collect();
    }

    pub fn node_by_key(&self, key: &CanonicalKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        self.nodes.iter().find(|n| n.label.as_deref() == Some(label)).map(|n| n.id)
    }

    /// Node id from a label or a hex key.
    pub fn resolve(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.node_by_label(name) {
            return Ok(i);
        }
        self.nodes.iter().find(|n| n.key.to_hex() == name).map(|n| n.id).ok_or_else(|| Error::UnknownKey(name.into()))
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.pairs.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn incident(&self, n: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.a == n || e.b == n).map(|e| e.id).collect()
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.id));
            adj[e.b].push((e.a, e.id));
        }
        for l in &mut adj {
            l.sort_by_key(|&(_, e)| e);
        }
        adj
    }

    pub fn add_node(&mut self, s: &Structure, q: &[i64], depth: usize) -> usize {
        let key = node_key(s, q, self.rotations());
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let centers = lattice_centers(s, q);
        let id = self.nodes.len();
        self.nodes.push(ConfigNode {
            id,
            key: key.clone(),
            quarters: q.to_vec(),
            isl_count: detect_isl_centers(&centers),
            centers,
            depth,
            dof: 0,
            is_bifurcation: false,
            label: None,
        });
        self.index.insert(key, id);
        id
    }

    pub fn add_edge(&mut self, s: &Structure, a: usize, b: usize, m: &Move) -> usize {
        if let Some(e) = self.edge_between(a, b) {
            return e;
        }
        let id = self.edges.len();
        self.edges.push(edge_from_move(s, id, a, b, m));
        self.pairs.insert((a.min(b), a.max(b)), id);
        id
    }

    /// Add the consecutive moves of `route`, labelling its nodes, and record it as a loop when it
    /// returns to its start. Existing edges between the same nodes are reused.
    pub fn insert_route(&mut self, s: &Structure, route: &[Landmark], name: Option<&str>, opts: &MoveOptions) -> Result<Vec<usize>> {
        let mut ids: Vec<usize> = Vec::new();
        let mut edges = Vec::new();
        for (i, l) in route.iter().enumerate() {
            let depth = if i == 0 { 0 } else { self.nodes[ids[i - 1]].depth + 1 };
            let n = self.add_node(s, &l.quarters, depth);
            if self.nodes[n].label.is_none() {
                self.nodes[n].label = Some(l.label.clone());
            }
            ids.push(n);
        }
        for (i, w) in route.windows(2).enumerate() {
            let (a, b) = (ids[i], ids[i + 1]);
            let e = match self.edge_between(a, b) {
                Some(e) => e,
                None => {
                    let m = connect(s, &w[0].quarters, &w[1].quarters, opts).ok_or(Error::Unreachable)?;
                    self.add_edge(s, a, b, &m)
                }
            };
            edges.push(e);
        }
        if ids.len() > 1 && ids.first() == ids.last() {
            self.loops.push(GraphLoop { label: name.map(String::from), nodes: ids.clone(), edges: edges.clone() });
        }
        Ok(edges)
    }

    /// Node DOF, bifurcation flags, and a fundamental cycle basis of unlabelled loops.
    pub fn annotate(&mut self, s: &Structure) -> Result<()> {
        let dofs: Vec<usize> = self
            .nodes
            .iter()
            .map(|n| dof_analysis(s, &n.fold_state()).map(|r| r.null_dim))
            .collect::<Result<_>>()?;
        let mut baseline = vec![None::<usize>; self.nodes.len()];
        for e in &self.edges {
            for n in [e.a, e.b] {
                baseline[n] = Some(baseline[n].map_or(e.generic_dof, |b: usize| b.max(e.generic_dof)));
            }
        }
        for (n, d) in dofs.into_iter().enumerate() {
            self.nodes[n].dof = d;
            self.nodes[n].is_bifurcation = baseline[n].is_some_and(|b| d > b);
        }
        self.loops.retain(|l| l.label.is_some());
        let adj = self.adjacency();
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        let mut tree_edges = HashSet::new();
        for root in 0..self.nodes.len() {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut queue = VecDeque::from([root]);
            while let Some(x) = queue.pop_front() {
                for &(y, e) in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        parent[y] = Some((x, e));
                        tree_edges.insert(e);
                        queue.push_back(y);
                    }
                }
            }
        }
        let to_root = |mut x: usize| {
            let mut p = vec![(x, None)];
            while let Some((px, e)) = parent[x] {
                p.push((px, Some(e)));
                x = px;
            }
            p
        };
        for e in &self.edges {
            if tree_edges.contains(&e.id) {
                continue;
            }
            let pa = to_root(e.a);
            let pb = to_root(e.b);
            let in_b: HashMap<usize, usize> = pb.iter().enumerate().map(|(i, &(n, _))| (n, i)).collect();
            let ia = pa.iter().position(|(n, _)| in_b.contains_key(n)).unwrap();
            let ib = in_b[&pa[ia].0];
            let mut nodes: Vec<usize> = pa[..=ia].iter().map(|p| p.0).rev().collect();
            let mut edges: Vec<usize> = pa[1..=ia].iter().map(|p| p.1.unwrap()).rev().collect();
            nodes.reverse();
            edges.reverse();
            // nodes: a .. lca; continue lca .. b, then close with e
            let mut down_nodes: Vec<usize> = pb[..ib].iter().map(|p| p.0).rev().collect();
            let mut down_edges: Vec<usize> = pb[1..=ib].iter().map(|p| p.1.unwrap()).rev().collect();
            nodes.append(&mut down_nodes);
            edges.append(&mut down_edges);
            edges.push(e.id);
            nodes.push(e.a);
            self.loops.push(GraphLoop { label: None, nodes, edges });
        }
        Ok(())
    }

    /// First edge joining two subtrees that hang off different nodes of `trunk` (a loop such as
    /// RL-1), with neither end on the trunk: a second loop that bypasses the trunk. Returns
    /// `(edge, u, v)` with `u` the shallower end.
    pub fn cross_subtree_edge(&self, trunk: &[usize]) -> Option<(usize, usize, usize)> {
        let adj = self.adjacency();
        let mut attach = vec![usize::MAX; self.nodes.len()];
        let mut dist = vec![usize::MAX; self.nodes.len()];
        let mut tree = HashSet::new();
        let mut queue = VecDeque::new();
        let mut sources: Vec<usize> = trunk.to_vec();
        sources.sort();
        sources.dedup();
        for &t in &sources {
            attach[t] = t;
            dist[t] = 0;
            queue.push_back(t);
        }
        while let Some(x) = queue.pop_front() {
            for &(y, e) in &adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    attach[y] = attach[x];
                    tree.insert(e);
                    queue.push_back(y);
                }
            }
        }
        self.edges
            .iter()
            .filter(|e| !tree.contains(&e.id) && dist[e.a] > 0 && dist[e.b] > 0)
            .filter(|e| attach[e.a] != usize::MAX && attach[e.b] != usize::MAX && attach[e.a] != attach[e.b])
            .map(|e| {
                let (u, v) = if (dist[e.a], e.a) <= (dist[e.b], e.b) { (e.a, e.b) } else { (e.b, e.a) };
                (e.id, u, v)
            })
            .next()
    }

    /// The graph a BFS bounded at `depth` would have produced: nodes up to `depth`, edges leaving
    /// expanded nodes. Labelled loops that survive intact are kept.
    pub fn restrict_depth(&self, s: &Structure, depth: usize) -> Result<TransitionGraph> {
        let keep: Vec<usize> = self.nodes.iter().filter(|n| n.depth <= depth).map(|n| n.id).collect();
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (i, &n) in keep.iter().enumerate() {
            remap[n] = i;
        }
        let mut g = TransitionGraph {
            limits: self.limits.map(|l| GraphLimits { max_depth: depth, ..l }),
            truncated: self.truncated,
            ..Default::default()
        };
        for &n in &keep {
            let mut node = self.nodes[n].clone();
            node.id = remap[n];
            g.nodes.push(node);
        }
        let mut emap = vec![usize::MAX; self.edges.len()];
        for e in &self.edges {
            let (a, b) = (&self.nodes[e.a], &self.nodes[e.b]);
            if remap[e.a] == usize::MAX || remap[e.b] == usize::MAX || a.depth.min(b.depth) >= depth {
                continue;
            }
            let mut e2 = e.clone();
            e2.id = g.edges.len();
            e2.a = remap[e.a];
            e2.b = remap[e.b];
            emap[e.id] = e2.id;
            g.edges.push(e2);
        }
        for l in self.loops.iter().filter(|l| l.label.is_some()) {
            if l.edges.iter().all(|&e| emap[e] != usize::MAX) {
                g.loops.push(GraphLoop {
                    label: l.label.clone(),
                    nodes: l.nodes.iter().map(|&n| remap[n]).collect(),
                    edges: l.edges.iter().map(|&e| emap[e]).collect(),
                });
            }
        }
        g.reindex();
        g.annotate(s)?;
        Ok(g)
    }
}

/// Breadth-first closure of the validated moves from the flat state.
pub fn build_transition_graph(s: &Structure, limits: &GraphLimits, opts: &MoveOptions) -> Result<TransitionGraph> {
    let mut g = TransitionGraph { limits: Some(*limits), ..Default::default() };
    let root = vec![2i64; s.n_hinges()];
    g.add_node(s, &root, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(x) = queue.pop_front() {
        if g.nodes[x].depth >= limits.max_depth {
            continue;
        }
        let q = g.nodes[x].quarters.clone();
        for m in enumerate_moves(s, &q, opts)? {
            let key = node_key(s, &m.to, limits.rotations);
            let y = match g.node_by_key(&key) {
                Some(y) => y,
                None => {
                    if g.nodes.len() >= limits.max_nodes {
                        g.truncated = true;
                        continue;
                    }
                    let y = g.add_node(s, &m.to, g.nodes[x].depth + 1);
                    queue.push_back(y);
                    y
                }
            };
            if y != x {
                g.add_edge(s, x, y, &m);
            }
        }
    }
    g.annotate(s)?;
    Ok(g)
}

/// `Err(LimitExceeded)` when the graph was cut short by `max_nodes`.
pub fn check_complete(g: &TransitionGraph) -> Result<()> {
    if g.truncated {
        Err(Error::LimitExceeded(format!("{} nodes", g.nodes.len())))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub node_count: usize,
    pub edge_count: usize,
    pub bifurcation_count: usize,
    /// Simple paths from the root with 1..=`path_bound` edges.
    pub path_count: u64,
    pub path_bound: usize,
    /// Edge count per path DOF.
    pub dof_histogram: BTreeMap<usize, usize>,
    /// Nodes containing an internal structural loop.
    pub isl_count: usize,
}

pub fn graph_metrics(g: &TransitionGraph, path_bound: usize) -> GraphMetrics {
    let mut hist = BTreeMap::new();
    for e in &g.edges {
        *hist.entry(e.path_dof).or_insert(0) += 1;
    }
    GraphMetrics {
        node_count: g.nodes.len(),
        edge_count: g.edges.len(),
        bifurcation_count: g.nodes.iter().filter(|n| n.is_bifurcation).count(),
        path_count: count_simple_paths(g, path_bound),
        path_bound,
        dof_histogram: hist,
        isl_count: g.nodes.iter().filter(|n| n.has_isl()).count(),
    }
}

fn count_simple_paths(g: &TransitionGraph, bound: usize) -> u64 {
    if g.nodes.is_empty() || bound == 0 {
        return 0;
    }
    let adj = g.adjacency();
    let mut on_path = vec![false; g.nodes.len()];
    fn walk(x: usize, left: usize, adj: &[Vec<(usize, usize)>], on: &mut [bool]) -> u64 {
        if left == 0 {
            return 0;
        }
        on[x] = true;
        let mut n = 0;
        for &(y, _) in &adj[x] {
            if !on[y] {
                n += 1 + walk(y, left - 1, adj, on);
            }
        }
        on[x] = false;
        n
    }
    walk(0, bound, &adj, &mut on_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    FewestSteps,
    FewestActiveDof,
}

/// Optimal edge sequence; ties go to the lexicographically smallest edge-id sequence.
pub fn find_path(g: &TransitionGraph, from: usize, to: usize, objective: Objective) -> Result<Vec<usize>> {
    if from >= g.nodes.len() {
        return Err(Error::UnknownKey(from.to_string()));
    }
    if to >= g.nodes.len() {
        return Err(Error::UnknownKey(to.to_string()));
    }
    let adj = g.adjacency();
    let cost = |e: usize| match objective {
        Objective::FewestSteps => 1,
        Objective::FewestActiveDof => g.edges[e].path_dof.max(1),
    };
    let mut best: HashMap<usize, (usize, Vec<usize>)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0usize, Vec::<usize>::new(), from)));
    while let Some(Reverse((c, path, x))) = heap.pop() {
        if let Some((bc, bp)) = best.get(&x) {
            if (*bc, bp) <= (c, &path) {
                continue;
            }
        }
        best.insert(x, (c, path.clone()));
        if x == to {
            return Ok(path);
        }
        for &(y, e) in &adj[x] {
            let mut p = path.clone();
            p.push(e);
            let nc = c + cost(e);
            if best.get(&y).is_none_or(|(bc, bp)| (nc, &p) < (*bc, bp)) {
                heap.push(Reverse((nc, p, y)));
            }
        }
    }
    Err(Error::Unreachable)
}

/// Node ids visited by an edge sequence starting at `from`.
pub fn path_nodes(g: &TransitionGraph, from: usize, edges: &[usize]) -> Vec<usize> {
    let mut out = vec![from];
    for &e in edges {
        let x = *out.last().unwrap();
        out.push(g.edges[e].other(x));
    }
    out
}

/// Re-run the continuation of edge `e` starting from node `from`.
pub fn edge_path(s: &Structure, g: &TransitionGraph, e: usize, from: usize) -> Result<KinePath> {
    let edge = g.edges.get(e).ok_or(Error::BadIndex(e))?;
    let (qa, qb) = (&g.nodes[edge.a].quarters, &g.nodes[edge.b].quarters);
    let (qa, qb) = if from == edge.a { (qa, qb) } else { (qb, qa) };
    let driven: Vec<usize> = edge.schedule.iter().map(|d| d.hinge).collect();
    drive_between(s, qa, qb, &driven, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_structure, DesignSpec};

    fn ring8() -> Structure {
        build_structure(&DesignSpec::uniform(&[8], 1).unwrap()).unwrap()
    }

    #[test]
    fn root_only_graph() {
        let s = ring8();
        let g = build_transition_graph(&s, &GraphLimits { max_depth: 0, ..Default::default() }, &MoveOptions::default()).unwrap();
        assert_eq!(g.nodes.len(), 1);
        let m = graph_metrics(&g, 4);
        assert_eq!(m.path_count, 0);
        assert!(find_path(&g, 0, 0, Objective::FewestSteps).unwrap().is_empty());
    }

    #[test]
    fn small_graph_is_consistent() {
        let s = ring8();
        let g = build_transition_graph(&s, &GraphLimits { max_depth: 2, ..Default::default() }, &MoveOptions::default()).unwrap();
        assert!(g.nodes.len() > 1);
        for e in &g.edges {
            assert!(e.a < g.nodes.len() && e.b < g.nodes.len() && e.a != e.b);
            assert!(!e.active.is_empty());
        }
        assert!(g.nodes[0].is_bifurcation);
        assert_eq!(g.nodes[0].dof, 5);
        let far = g.nodes.iter().max_by_key(|n| n.depth).unwrap().id;
        let p = find_path(&g, 0, far, Objective::FewestSteps).unwrap();
        assert_eq!(p.len(), g.nodes[far].depth);
        assert_eq!(*path_nodes(&g, 0, &p).last().unwrap(), far);
    }

    #[test]
    fn edges_replay_both_ways() {
        let s = ring8();
        let g = build_transition_graph(&s, &GraphLimits { max_depth: 1, ..Default::default() }, &MoveOptions::default()).unwrap();
        for e in &g.edges {
            let f = edge_path(&s, &g, e.id, e.a).unwrap();
            let b = edge_path(&s, &g, e.id, e.b).unwrap();
            assert_eq!(f.end().lattice_quarters().unwrap(), g.nodes[e.b].quarters);
            assert_eq!(b.end().lattice_quarters().unwrap(), g.nodes[e.a].quarters);
        }
    }
}
