//! Versioned file formats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuation::{ActuatorAssignment, MotorSchedule};
use crate::error::{Error, Result};
use crate::geom::IVec3;
use crate::graph::{ConfigNode, DriveSpan, GraphLimits, GraphLoop, TransitionGraph};
use crate::invdesign::{DesignRow, ShapeDatabase};
use crate::kinematics::{forward_placement, placement_unchecked, FoldState};
use crate::model::{DesignSpec, Structure};
use crate::shape::CanonicalKey;

pub const STATE_SCHEMA: &str = "metamorph-state/1";
pub const GRAPH_SCHEMA: &str = "metamorph-graph/1";
pub const DB_SCHEMA: &str = "metamorph-db/1";
pub const SCHEDULE_SCHEMA: &str = "metamorph-schedule/1";

fn check(schema: &str, want: &str) -> Result<()> {
    if schema == want {
        Ok(())
    } else {
        Err(Error::Parse(format!("expected schema {want}, found {schema}")))
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub schema: String,
    pub angles_deg: Vec<f64>,
    pub lattice: bool,
    /// Exact integer centres, present on lattice states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<IVec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers_f: Option<Vec<[f64; 3]>>,
    /// Row-major cube rotations.
    pub orientations: Vec<[[f64; 3]; 3]>,
}

pub fn state_doc(s: &Structure, st: &FoldState) -> Result<StateDoc> {
    forward_placement(s, st)?;
    Ok(state_doc_unchecked(s, st))
}

/// As [`state_doc`], for a state whose closure the caller has already judged.
pub fn state_doc_unchecked(s: &Structure, st: &FoldState) -> StateDoc {
    let m = placement_unchecked(s, st);
    let ints = m.int_centers();
    let orientations = m
        .orientations
        .iter()
        .map(|r| {
            let mut o = [[0.0; 3]; 3];
            for (i, row) in o.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = round6(r[(i, j)]);
                }
            }
            o
        })
        .collect();
    StateDoc {
        schema: STATE_SCHEMA.into(),
        angles_deg: st.degrees().into_iter().map(round6).collect(),
        lattice: m.lattice,
        centers_f: if ints.is_some() { None } else { Some(m.centers.iter().map(|c| [round6(c.x), round6(c.y), round6(c.z)]).collect()) },
        centers: ints,
        orientations,
    }
}

pub fn state_to_json(s: &Structure, st: &FoldState) -> Result<String> {
    Ok(serde_json::to_string_pretty(&state_doc(s, st)?)?)
}

/// The fold state of a state document.
pub fn state_from_json(text: &str) -> Result<FoldState> {
    let d: StateDoc = serde_json::from_str(text)?;
    check(&d.schema, STATE_SCHEMA)?;
    Ok(FoldState::from_degrees(&d.angles_deg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub id: usize,
    pub a: String,
    pub b: String,
    pub active: Vec<usize>,
    pub path_dof: usize,
    pub generic_dof: usize,
    pub linear: bool,
    pub schedule: Vec<DriveSpan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub key: String,
    pub centers: Vec<IVec3>,
    pub quarters: Vec<i64>,
    pub depth: usize,
    pub dof: usize,
    pub is_bifurcation: bool,
    pub has_isl: bool,
    pub isl_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<GraphLimits>,
    pub truncated: bool,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    pub loops: Vec<GraphLoop>,
}

pub fn graph_doc(g: &TransitionGraph) -> GraphDoc {
    let hex: Vec<String> = g.nodes.iter().map(|n| n.key.to_hex()).collect();
    GraphDoc {
        schema: GRAPH_SCHEMA.into(),
        limits: g.limits,
        truncated: g.truncated,
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeDoc {
                key: hex[n.id].clone(),
                centers: n.centers.clone(),
                quarters: n.quarters.clone(),
                depth: n.depth,
                dof: n.dof,
                is_bifurcation: n.is_bifurcation,
                has_isl: n.has_isl(),
                isl_count: n.isl_count,
                label: n.label.clone(),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                id: e.id,
                a: hex[e.a].clone(),
                b: hex[e.b].clone(),
                active: e.active.clone(),
                path_dof: e.path_dof,
                generic_dof: e.generic_dof,
                linear: e.linear,
                schedule: e.schedule.clone(),
            })
            .collect(),
        loops: g.loops.clone(),
    }
}

pub fn graph_from_doc(d: GraphDoc) -> Result<TransitionGraph> {
    check(&d.schema, GRAPH_SCHEMA)?;
    let mut g = TransitionGraph::default();
    g.limits = d.limits;
    g.truncated = d.truncated;
    g.loops = d.loops;
    for (id, n) in d.nodes.into_iter().enumerate() {
        // keys are recomputed from the stored centres so a hand-edited file cannot disagree
        let key = crate::shape::canonicalize_centers(&n.centers, d.limits.is_some_and(|l| l.rotations));
        if key.to_hex() != n.key {
            return Err(Error::Parse(format!("node {id}: key does not match its centres")));
        }
        g.nodes.push(ConfigNode {
            id,
            key,
            quarters: n.quarters,
            centers: n.centers,
            depth: n.depth,
            dof: n.dof,
            is_bifurcation: n.is_bifurcation,
            isl_count: n.isl_count,
            label: n.label,
        });
    }
    let index: std::collections::HashMap<String, usize> = g.nodes.iter().map(|n| (n.key.to_hex(), n.id)).collect();
    let find = |k: &str| index.get(k).copied().ok_or_else(|| Error::UnknownKey(k.into()));
    for (id, e) in d.edges.into_iter().enumerate() {
        g.edges.push(crate::graph::GraphEdge {
            id,
            a: find(&e.a)?,
            b: find(&e.b)?,
            active: e.active,
            path_dof: e.path_dof,
            generic_dof: e.generic_dof,
            linear: e.linear,
            schedule: e.schedule,
        });
    }
    let n = g.nodes.len();
    let m = g.edges.len();
    if g.loops.iter().any(|l| l.nodes.iter().any(|&x| x >= n) || l.edges.iter().any(|&x| x >= m)) {
        return Err(Error::Parse("loop references a missing node or edge".into()));
    }
    g.reindex();
    Ok(g)
}

pub fn graph_to_json(g: &TransitionGraph) -> String {
    serde_json::to_string(&graph_doc(g)).expect("graph serializes")
}

pub fn graph_from_json(text: &str) -> Result<TransitionGraph> {
    graph_from_doc(serde_json::from_str(text)?)
}

pub fn save_graph(g: &TransitionGraph, path: &Path) -> Result<()> {
    Ok(fs::write(path, graph_to_json(g))?)
}

pub fn load_graph(path: &Path) -> Result<TransitionGraph> {
    graph_from_json(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DbIndexRow {
    design_id: usize,
    design: DesignSpec,
    graph_file: String,
    partial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DbIndex {
    schema: String,
    rows: Vec<DbIndexRow>,
}

/// A directory with `index.json` and one graph file per design.
pub fn save_database(db: &ShapeDatabase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for r in &db.rows {
        let file = format!("design-{}.graph.json", r.design_id);
        save_graph(&r.graph, &dir.join(&file))?;
        rows.push(DbIndexRow { design_id: r.design_id, design: r.design.clone(), graph_file: file, partial: r.partial });
    }
    let idx = DbIndex { schema: DB_SCHEMA.into(), rows };
    Ok(fs::write(dir.join("index.json"), serde_json::to_string_pretty(&idx)?)?)
}

/// Loading starts a new generation: results matched against the saved copy are stale.
pub fn load_database(dir: &Path) -> Result<ShapeDatabase> {
    let idx: DbIndex = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
    check(&idx.schema, DB_SCHEMA)?;
    let mut rows = Vec::new();
    for r in idx.rows {
        let g = load_graph(&dir.join(&r.graph_file))?;
        rows.push((r.design_id, r.design, g));
    }
    let mut db = ShapeDatabase::from_graphs(rows.iter().map(|(_, d, g)| (d.clone(), g.clone())).collect());
    for (row, (id, _, _)) in db.rows.iter_mut().zip(&rows) {
        row.design_id = *id;
    }
    Ok(db)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub schema: String,
    pub assignment: ActuatorAssignment,
    pub schedule: MotorSchedule,
}

pub fn schedule_to_json(a: &ActuatorAssignment, s: &MotorSchedule) -> String {
    let d = ScheduleDoc { schema: SCHEDULE_SCHEMA.into(), assignment: a.clone(), schedule: s.clone() };
    serde_json::to_string_pretty(&d).expect("schedule serializes")
}

pub fn schedule_from_json(text: &str) -> Result<(ActuatorAssignment, MotorSchedule)> {
    let d: ScheduleDoc = serde_json::from_str(text)?;
    check(&d.schema, SCHEDULE_SCHEMA)?;
    Ok((d.assignment, d.schedule))
}

/// Centres of a row, for callers that only have the database.
pub fn row_centers(row: &DesignRow, key: &CanonicalKey) -> Option<Vec<IVec3>> {
    row.graph.node_by_key(key).map(|i| row.graph.nodes[i].centers.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_transition_graph;
    use crate::model::build_structure;
    use crate::moves::MoveOptions;

    fn ring8() -> Structure {
        build_structure(&DesignSpec::uniform(&[8], 1).unwrap()).unwrap()
    }

    #[test]
    fn state_round_trip() {
        let s = ring8();
        let st = FoldState::from_quarters(&[2, 1, 2, 2, 2, 2, 2, 1]);
        let text = state_to_json(&s, &st).unwrap();
        let d: StateDoc = serde_json::from_str(&text).unwrap();
        assert!(d.lattice && d.centers.is_some());
        assert_eq!(state_from_json(&text).unwrap().lattice_quarters(), st.lattice_quarters());
        assert!(state_from_json(&text.replace(STATE_SCHEMA, "x/9")).is_err());
    }

    #[test]
    fn graph_round_trip() {
        let s = ring8();
        let g = build_transition_graph(&s, &GraphLimits { max_depth: 2, ..Default::default() }, &MoveOptions::default()).unwrap();
        let h = graph_from_json(&graph_to_json(&g)).unwrap();
        assert_eq!(graph_doc(&g), graph_doc(&h));
        assert_eq!(h.node_by_key(&g.nodes[3].key), Some(3));
    }

    #[test]
    fn database_round_trip() {
        let s = ring8();
        let g = build_transition_graph(&s, &GraphLimits { max_depth: 1, ..Default::default() }, &MoveOptions::default()).unwrap();
        let db = ShapeDatabase::from_graphs(vec![(DesignSpec::uniform(&[8], 1).unwrap(), g)]);
        let dir = tempfile::tempdir().unwrap();
        save_database(&db, dir.path()).unwrap();
        let back = load_database(dir.path()).unwrap();
        assert_eq!(back.entry_count(), db.entry_count());
        assert_ne!(back.generation, db.generation);
    }
}
