//! Steering sessions over the "metamorph-proto/1" message protocol.
//!
//! A session is a pure state machine: [`Session::handle`] maps one request to the messages it
//! produces. Transport lives elsewhere.

use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_design, rl1_route, Landmark};
use crate::error::{Error, Result};
use crate::geom::IVec3;
use crate::graph::{find_path, node_key, GraphLimits, Objective, TransitionGraph};
use crate::invdesign::{match_shape, target_from_cells, MatchOptions, MatchResult, ShapeDatabase};
use crate::io::{graph_to_json, state_to_json};
use crate::kinematics::{dof_analysis, placement_unchecked, residual_norm, FoldState};
use crate::model::{build_structure, DesignSpec, Structure};
use crate::moves::{connect, enumerate_moves, Move, MoveOptions};
use crate::shape::{detect_isl_centers, mesh_obj};

pub const PROTO_SCHEMA: &str = "metamorph-proto/1";

/// Frames streamed per quarter turn of the largest driven change.
pub const FRAMES_PER_QUARTER: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Request {
    Hello {},
    LoadDesign {
        /// Omitted means the reference ⟨8R,4R⟩ design.
        #[serde(default)]
        design: Option<DesignSpec>,
    },
    State {},
    ListBranches {},
    ApplyBranch { branch: usize },
    Undo {},
    InverseQuery {
        voxels: Vec<IVec3>,
        #[serde(default = "default_top_k")]
        top_k: usize,
    },
    Export { format: ExportFormat },
}

fn default_top_k() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Obj,
    Graph,
    State,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub to_key: String,
    pub to_quarters: Vec<i64>,
    pub active: Vec<usize>,
    pub driven: Vec<usize>,
    pub path_dof: usize,
    /// Null dimension at the target node.
    pub target_dof: usize,
    pub is_bifurcation: bool,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub node_key: String,
    pub label: Option<String>,
    pub quarters: Vec<i64>,
    pub angles_deg: Vec<f64>,
    pub centers: Vec<IVec3>,
    pub dof: usize,
    pub isl_count: usize,
    pub history: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub centers: Vec<[f64; 3]>,
    pub orientations: Vec<[[f64; 3]; 3]>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Response {
    Hello { protocol: String, session: u64 },
    State(StatePayload),
    Branches { branches: Vec<Branch> },
    AnimateFrames { index: usize, total: usize, frame: Frame },
    InverseResult { matches: Vec<MatchResult> },
    Export { format: ExportFormat, content: String },
    Error { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(seq: u64, body: T) -> Self {
        Envelope { schema: PROTO_SCHEMA.into(), seq, body }
    }
}

struct Loaded {
    design: DesignSpec,
    structure: Structure,
    routes: Vec<Landmark>,
    /// Nodes reached so far; edges are the applied moves.
    graph: TransitionGraph,
    current: usize,
    history: Vec<(usize, Vec<i64>)>,
    branches: Vec<(Branch, Move)>,
}

pub struct Session {
    pub id: u64,
    last_seq: Option<u64>,
    loaded: Option<Loaded>,
    opts: MoveOptions,
}

fn error(seq: u64, e: impl ToString) -> Envelope<Response> {
    Envelope::new(seq, Response::Error { message: e.to_string() })
}

fn frame(s: &Structure, st: &FoldState) -> Frame {
    let m = placement_unchecked(s, st);
    Frame {
        centers: m.centers.iter().map(|c| [c.x, c.y, c.z]).collect(),
        orientations: m.orientations.iter().map(|r| [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]).collect(),
        residual: residual_norm(s, st),
    }
}

/// Evenly spaced path states including both ends, at least `FRAMES_PER_QUARTER` per 90°.
fn sample(states: &[FoldState]) -> Vec<&FoldState> {
    let sweep = states[0].max_abs_diff(states.last().unwrap()).to_degrees();
    let want = ((sweep / 90.0).ceil().max(1.0) as usize * FRAMES_PER_QUARTER).min(states.len() - 1).max(1);
    (0..=want).map(|i| &states[i * (states.len() - 1) / want]).collect()
}

impl Session {
    pub fn new(id: u64) -> Session {
        Session { id, last_seq: None, loaded: None, opts: MoveOptions::default() }
    }

    /// Every request yields exactly one final response (possibly an error) carrying its sequence
    /// number; `apply_branch` streams animation frames before it. Engine errors never end the
    /// session.
    pub fn handle(&mut self, msg: &Envelope<Request>) -> Vec<Envelope<Response>> {
        let seq = msg.seq;
        if msg.schema != PROTO_SCHEMA {
            return vec![error(seq, format!("unsupported schema {}", msg.schema))];
        }
        if self.last_seq.is_some_and(|l| seq <= l) {
            return vec![error(seq, format!("sequence number {seq} is not increasing"))];
        }
        self.last_seq = Some(seq);
        match self.dispatch(seq, &msg.body) {
            Ok(out) => out,
            Err(e) => vec![error(seq, e)],
        }
    }

    /// Parse and handle one text message.
    pub fn handle_text(&mut self, text: &str) -> Vec<String> {
        let out = match serde_json::from_str::<Envelope<Request>>(text) {
            Ok(m) => self.handle(&m),
            Err(e) => {
                let seq = serde_json::from_str::<serde_json::Value>(text).ok().and_then(|v| v.get("seq")?.as_u64()).unwrap_or(0);
                vec![error(seq, format!("bad message: {e}"))]
            }
        };
        out.iter().map(|m| serde_json::to_string(m).expect("response serializes")).collect()
    }

    fn loaded(&self) -> Result<&Loaded> {
        self.loaded.as_ref().ok_or_else(|| Error::Parse("no design loaded".into()))
    }

    fn dispatch(&mut self, seq: u64, req: &Request) -> Result<Vec<Envelope<Response>>> {
        let one = |r: Response| Ok(vec![Envelope::new(seq, r)]);
        match req {
            Request::Hello {} => one(Response::Hello { protocol: PROTO_SCHEMA.into(), session: self.id }),
            Request::LoadDesign { design } => {
                let reference = design.is_none() || design.as_ref() == Some(&canonical_design());
                let design = design.clone().unwrap_or_else(canonical_design);
                let structure = build_structure(&design)?;
                let routes = if reference { rl1_route() } else { Vec::new() };
                let mut graph = TransitionGraph::default();
                graph.limits = Some(GraphLimits::default());
                let flat = vec![2i64; structure.n_hinges()];
                let root = graph.add_node(&structure, &flat, 0);
                for l in &routes {
                    if let Some(n) = graph.node_by_key(&node_key(&structure, &l.quarters, false)) {
                        graph.nodes[n].label.get_or_insert(l.label.clone());
                    }
                }
                self.loaded = Some(Loaded { design, structure, routes, graph, current: root, history: Vec::new(), branches: Vec::new() });
                one(Response::State(self.state_payload()?))
            }
            Request::State {} => one(Response::State(self.state_payload()?)),
            Request::ListBranches {} => {
                let branches = self.compute_branches()?;
                let l = self.loaded.as_mut().unwrap();
                l.branches = branches;
                one(Response::Branches { branches: l.branches.iter().map(|(b, _)| b.clone()).collect() })
            }
            Request::ApplyBranch { branch } => {
                let l = self.loaded.as_mut().ok_or_else(|| Error::Parse("no design loaded".into()))?;
                let (b, m) = l.branches.get(*branch).cloned().ok_or(Error::BadIndex(*branch))?;
                let states = sample(&m.path.states);
                let total = states.len();
                let mut out: Vec<Envelope<Response>> = states
                    .iter()
                    .enumerate()
                    .map(|(i, st)| Envelope::new(seq, Response::AnimateFrames { index: i, total, frame: frame(&l.structure, st) }))
                    .collect();
                let from = l.current;
                let to = l.graph.add_node(&l.structure, &b.to_quarters, l.graph.nodes[from].depth + 1);
                if l.graph.nodes[to].label.is_none() {
                    l.graph.nodes[to].label = b.label.clone();
                }
                l.graph.add_edge(&l.structure, from, to, &m);
                l.history.push((from, l.graph.nodes[from].quarters.clone()));
                l.current = to;
                l.branches.clear();
                out.push(Envelope::new(seq, Response::State(self.state_payload()?)));
                Ok(out)
            }
            Request::Undo {} => {
                let l = self.loaded.as_mut().ok_or_else(|| Error::Parse("no design loaded".into()))?;
                let (prev, _) = l.history.pop().ok_or_else(|| Error::Parse("nothing to undo".into()))?;
                l.current = prev;
                l.branches.clear();
                one(Response::State(self.state_payload()?))
            }
            Request::InverseQuery { voxels, top_k } => {
                let l = self.loaded()?;
                let t = target_from_cells(voxels)?;
                let mut g = l.graph.clone();
                g.annotate(&l.structure)?;
                let db = ShapeDatabase::from_graphs(vec![(l.design.clone(), g)]);
                one(Response::InverseResult { matches: match_shape(&db, &t, *top_k, &MatchOptions::default())? })
            }
            Request::Export { format } => {
                let l = self.loaded()?;
                let st = l.graph.nodes[l.current].fold_state();
                let content = match format {
                    ExportFormat::Obj => mesh_obj(&placement_unchecked(&l.structure, &st)),
                    ExportFormat::Graph => graph_to_json(&l.graph),
                    ExportFormat::State => state_to_json(&l.structure, &st)?,
                };
                one(Response::Export { format: *format, content })
            }
        }
    }

    fn state_payload(&self) -> Result<StatePayload> {
        let l = self.loaded()?;
        let n = &l.graph.nodes[l.current];
        let st = n.fold_state();
        Ok(StatePayload {
            node_key: n.key.to_hex(),
            label: n.label.clone(),
            quarters: n.quarters.clone(),
            angles_deg: st.degrees(),
            centers: n.centers.clone(),
            dof: dof_analysis(&l.structure, &st)?.null_dim,
            isl_count: detect_isl_centers(&n.centers),
            history: l.history.len(),
        })
    }

    fn compute_branches(&self) -> Result<Vec<(Branch, Move)>> {
        let l = self.loaded()?;
        let q = l.graph.nodes[l.current].quarters.clone();
        let s = &l.structure;
        let mut moves = Vec::new();
        // reference-route neighbours first, so the demonstrated loop is always offered
        for (i, lm) in l.routes.iter().enumerate() {
            if lm.quarters != q {
                continue;
            }
            for j in [i.wrapping_sub(1), i + 1] {
                if let Some(next) = l.routes.get(j) {
                    if next.quarters != q {
                        if let Some(m) = connect(s, &q, &next.quarters, &self.opts) {
                            moves.push((Some(next.label.clone()), m));
                        }
                    }
                }
            }
        }
        for m in enumerate_moves(s, &q, &self.opts)? {
            moves.push((None, m));
        }
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (label, m) in moves {
            let key = node_key(s, &m.to, false);
            if !seen.insert(key.clone()) {
                continue;
            }
            let target = FoldState::from_quarters(&m.to);
            let target_dof = dof_analysis(s, &target)?.null_dim;
            let mid = &m.path.states[m.path.states.len() / 2];
            let generic = dof_analysis(s, mid).map(|r| r.null_dim).unwrap_or(m.path.path_dof);
            let label = label.or_else(|| l.routes.iter().find(|r| r.quarters == m.to).map(|r| r.label.clone()));
            out.push((
                Branch {
                    id: out.len(),
                    to_key: key.to_hex(),
                    to_quarters: m.to.clone(),
                    active: m.path.active_hinges.clone(),
                    driven: m.path.driven.clone(),
                    path_dof: m.path.path_dof,
                    target_dof,
                    is_bifurcation: target_dof > generic,
                    label,
                },
                m,
            ));
        }
        Ok(out)
    }

    /// Route from the flat node to the current node through the explored graph.
    pub fn replay_plan(&self) -> Result<Vec<usize>> {
        let l = self.loaded()?;
        find_path(&l.graph, 0, l.current, Objective::FewestSteps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(seq: u64, body: Request) -> Envelope<Request> {
        Envelope::new(seq, body)
    }

    fn last_state(out: &[Envelope<Response>]) -> StatePayload {
        match &out.last().unwrap().body {
            Response::State(p) => p.clone(),
            r => panic!("expected state, got {r:?}"),
        }
    }

    #[test]
    fn load_list_apply_undo() {
        let mut s = Session::new(7);
        let small = DesignSpec::uniform(&[8], 1).unwrap();
        let loaded = last_state(&s.handle(&req(1, Request::LoadDesign { design: Some(small) })));
        let out = s.handle(&req(2, Request::ListBranches {}));
        let Response::Branches { branches } = &out[0].body else { panic!() };
        assert!(!branches.is_empty());
        let out = s.handle(&req(3, Request::ApplyBranch { branch: 0 }));
        assert!(out.len() >= FRAMES_PER_QUARTER + 1);
        assert!(out.iter().all(|m| m.seq == 3));
        for m in &out[..out.len() - 1] {
            let Response::AnimateFrames { frame, .. } = &m.body else { panic!() };
            assert!(frame.residual < 1e-6);
        }
        let moved = last_state(&out);
        assert_eq!(moved.node_key, branches[0].to_key);
        let back = last_state(&s.handle(&req(4, Request::Undo {})));
        assert_eq!(back, loaded);
    }

    #[test]
    fn errors_keep_the_session() {
        let mut s = Session::new(1);
        let out = s.handle(&req(1, Request::State {}));
        assert!(matches!(out[0].body, Response::Error { .. }));
        s.handle(&req(2, Request::LoadDesign { design: Some(DesignSpec::uniform(&[4], 1).unwrap()) }));
        let before = last_state(&s.handle(&req(3, Request::State {})));
        let out = s.handle(&req(4, Request::ApplyBranch { branch: 99 }));
        assert!(matches!(out[0].body, Response::Error { .. }) && out.len() == 1);
        assert_eq!(last_state(&s.handle(&req(5, Request::State {}))), before);
        let out = s.handle(&req(5, Request::State {}));
        assert!(matches!(out[0].body, Response::Error { .. }));
    }

    #[test]
    fn text_round_trip() {
        let mut s = Session::new(3);
        let out = s.handle_text(r#"{"schema":"metamorph-proto/1","seq":1,"kind":"hello","payload":{}}"#);
        assert_eq!(out.len(), 1);
        assert!(out[0].contains("\"kind\":\"hello\"") && out[0].contains("\"seq\":1"));
        let out = s.handle_text("{not json");
        assert!(out[0].contains("\"kind\":\"error\""));
    }

    #[test]
    fn reference_design_offers_the_route() {
        let mut s = Session::new(2);
        let flat = last_state(&s.handle(&req(1, Request::LoadDesign { design: None })));
        assert_eq!(flat.label.as_deref(), Some("M_A"));
        let out = s.handle(&req(2, Request::ListBranches {}));
        let Response::Branches { branches } = &out[0].body else { panic!() };
        let b = branches.iter().find(|b| b.label.as_deref() == Some("M_B")).expect("route branch");
        let st = last_state(&s.handle(&req(3, Request::ApplyBranch { branch: b.id })));
        assert_eq!(st.quarters, crate::canonical::landmark("M_B").unwrap());
        assert_eq!(st.label.as_deref(), Some("M_B"));
    }
}
