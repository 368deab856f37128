//! Inverse design: match a voxel target against the reachable shapes of a set of designs.

use std::sync::atomic::{AtomicU64, Ordering};

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{route_steps, PathStep};
use crate::error::{Error, Result};
use crate::geom::{IVec3, Vec3};
use crate::graph::{build_transition_graph, find_path, GraphLimits, Objective, TransitionGraph};
use crate::model::{build_structure, DesignSpec};
use crate::moves::MoveOptions;
use crate::shape::CanonicalKey;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetShape {
    /// Sorted, distinct odd-integer cell centres.
    pub voxels: Vec<IVec3>,
}

/// Nearest odd integer; even integers (exact ties) go up.
pub fn snap_odd(x: f64) -> i64 {
    2 * (x / 2.0).floor() as i64 + 1
}

pub fn voxelize_points(points: &[Vec3]) -> Result<TargetShape> {
    if points.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mut v: Vec<IVec3> = points.iter().map(|p| [snap_odd(p.x), snap_odd(p.y), snap_odd(p.z)]).collect();
    v.sort();
    v.dedup();
    Ok(TargetShape { voxels: v })
}

pub fn target_from_cells(cells: &[IVec3]) -> Result<TargetShape> {
    let pts: Vec<Vec3> = cells.iter().map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect();
    voxelize_points(&pts)
}

/// Cells of edge 2 whose centre lies inside the closed triangle mesh (ray parity).
pub fn voxelize_mesh(verts: &[Vec3], tris: &[[usize; 3]]) -> Result<TargetShape> {
    if tris.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if tris.iter().flatten().any(|&i| i >= verts.len()) {
        return Err(Error::DegenerateMesh("face index out of range".into()));
    }
    let (mut lo, mut hi) = (verts[tris[0][0]], verts[tris[0][0]]);
    for &i in tris.iter().flatten() {
        lo = lo.inf(&verts[i]);
        hi = hi.sup(&verts[i]);
    }
    if (0..3).any(|k| hi[k] - lo[k] < 1e-9) {
        return Err(Error::DegenerateMesh("zero-volume bounding box".into()));
    }
    // skewed direction so the ray misses edges and vertices of axis-aligned meshes
    let dir = Vec3::new(1.0, 0.000_123_7, 0.000_071_3).normalize();
    let range = |k: usize| snap_odd(lo[k] - 1.0)..=snap_odd(hi[k] + 1.0);
    let mut cells = Vec::new();
    for x in range(0).step_by(2) {
        for y in range(1).step_by(2) {
            for z in range(2).step_by(2) {
                let p = Vec3::new(x as f64, y as f64, z as f64);
                let hits = tris.iter().filter(|t| ray_hits(&p, &dir, &verts[t[0]], &verts[t[1]], &verts[t[2]])).count();
                if hits % 2 == 1 {
                    cells.push([x, y, z]);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::DegenerateMesh("mesh encloses no cell centre".into()));
    }
    Ok(TargetShape { voxels: cells })
}

/// Moller-Trumbore, forward hits only.
fn ray_hits(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let (e1, e2) = (b - a, c - a);
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-12 {
        return false;
    }
    let s = o - a;
    let u = s.dot(&p) / det;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) / det;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) / det > 1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub node: usize,
    pub key: CanonicalKey,
    pub centers: Vec<IVec3>,
    /// Edge ids from the flat node.
    pub plan: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignRow {
    pub design_id: usize,
    pub design: DesignSpec,
    pub graph: TransitionGraph,
    pub entries: Vec<DbEntry>,
    /// The graph hit its limits.
    pub partial: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeDatabase {
    pub rows: Vec<DesignRow>,
    pub generation: u64,
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

fn make_row(design_id: usize, design: DesignSpec, graph: TransitionGraph) -> DesignRow {
    let entries = graph
        .nodes
        .iter()
        .filter_map(|n| {
            let plan = find_path(&graph, 0, n.id, Objective::FewestSteps).ok()?;
            Some(DbEntry { node: n.id, key: n.key.clone(), centers: n.centers.clone(), plan })
        })
        .collect();
    DesignRow { design_id, partial: graph.truncated, design, graph, entries }
}

impl ShapeDatabase {
    /// One row per design from prebuilt graphs (node 0 must be the flat state).
    pub fn from_graphs(rows: Vec<(DesignSpec, TransitionGraph)>) -> ShapeDatabase {
        let rows = rows.into_iter().enumerate().map(|(i, (d, g))| make_row(i, d, g)).collect();
        ShapeDatabase { rows, generation: next_generation() }
    }

    /// Drop a design row; results matched before are stale afterwards.
    pub fn purge_row(&mut self, design_id: usize) {
        self.rows.retain(|r| r.design_id != design_id);
        self.generation = next_generation();
    }

    pub fn entry_count(&self) -> usize {
        self.rows.iter().map(|r| r.entries.len()).sum()
    }
}

/// Build every design's transition graph under `limits` and store every node with its root path.
/// Rows cut short by `max_nodes` are kept and marked partial.
pub fn build_database(designs: &[DesignSpec], limits: &GraphLimits, opts: &MoveOptions) -> Result<ShapeDatabase> {
    let graphs: Vec<TransitionGraph> = designs
        .par_iter()
        .map(|d| build_transition_graph(&build_structure(d)?, limits, opts))
        .collect::<Result<_>>()?;
    Ok(ShapeDatabase::from_graphs(designs.iter().cloned().zip(graphs).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Translate both shapes to their centroid-floor anchors before scoring. Off means the
    /// absolute frame.
    pub align: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { align: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub design_id: usize,
    pub node: usize,
    pub key: CanonicalKey,
    pub errf: f64,
    pub exact_position: bool,
    /// `assignment[i]` is the entry column matched to target column `i`; padding columns are
    /// indices past the shorter shape.
    pub assignment: Vec<usize>,
    pub plan: Vec<usize>,
    pub generation: u64,
}

/// Translation by an even vector taking the centroid's floor (rounded down to even) to the origin.
fn anchored(c: &[IVec3]) -> Vec<IVec3> {
    let n = c.len() as f64;
    let shift: Vec<i64> = (0..3)
        .map(|k| {
            let m = c.iter().map(|v| v[k] as f64).sum::<f64>() / n;
            2 * (m / 2.0).floor() as i64
        })
        .collect();
    c.iter().map(|v| [v[0] - shift[0], v[1] - shift[1], v[2] - shift[2]]).collect()
}

fn padded(c: &[IVec3], n: usize, far: i64) -> Vec<IVec3> {
    let mut v = c.to_vec();
    v.resize(n, [far, far, far]);
    v
}

fn frob(c: &[IVec3]) -> f64 {
    c.iter().flat_map(|v| v.iter()).map(|&x| (x * x) as f64).sum::<f64>().sqrt()
}

fn sq(a: &IVec3, b: &IVec3) -> i64 {
    (0..3).map(|k| (a[k] - b[k]).pow(2)).sum()
}

/// Optimal column assignment and the residual matrix norm.
fn assign(t: &[IVec3], d: &[IVec3]) -> (Vec<usize>, f64, i64) {
    let n = t.len();
    let w = Matrix::from_fn(n, n, |(i, j)| sq(&t[i], &d[j]));
    let (total, a) = kuhn_munkres_min(&w);
    let worst = (0..n).map(|i| sq(&t[i], &d[a[i]])).max().unwrap_or(0);
    (a, (total as f64).sqrt(), worst)
}

/// Ranked matches: `errf = ‖T − D‖_F / (‖T‖_F + max ‖D‖_F)` after optimal column assignment,
/// the smaller shape padded with columns at a far point. Ties go to (design id, node key).
pub fn match_shape(db: &ShapeDatabase, t: &TargetShape, top_k: usize, opts: &MatchOptions) -> Result<Vec<MatchResult>> {
    if t.voxels.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let entries: Vec<(&DesignRow, &DbEntry)> = db.rows.iter().flat_map(|r| r.entries.iter().map(move |e| (r, e))).collect();
    if entries.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let frame = |c: &[IVec3]| if opts.align { anchored(c) } else { c.to_vec() };
    let target = frame(&t.voxels);
    let shapes: Vec<Vec<IVec3>> = entries.iter().map(|(_, e)| frame(&e.centers)).collect();
    let reach = shapes.iter().chain(std::iter::once(&target)).flatten().flat_map(|v| v.iter()).map(|x| x.abs()).max().unwrap_or(1);
    let far = 3 * reach.max(1);
    let width = |d: &[IVec3]| d.len().max(target.len());
    let d_max = shapes.iter().map(|d| frob(&padded(d, width(d), far))).fold(0.0, f64::max);
    let mut out: Vec<MatchResult> = entries
        .par_iter()
        .zip(&shapes)
        .map(|((row, e), d)| {
            let n = width(d);
            let tp = padded(&target, n, far);
            let (assignment, resid, worst) = assign(&tp, &padded(d, n, far));
            let denom = frob(&tp) + d_max;
            let errf = if denom > 0.0 { resid / denom } else { 0.0 };
            MatchResult {
                design_id: row.design_id,
                node: e.node,
                key: e.key.clone(),
                errf,
                exact_position: target.len() == d.len() && worst == 0,
                assignment,
                plan: e.plan.clone(),
                generation: db.generation,
            }
        })
        .collect();
    out.sort_by(|a, b| a.errf.total_cmp(&b.errf).then(a.design_id.cmp(&b.design_id)).then_with(|| a.key.cmp(&b.key)));
    out.truncate(top_k);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationPlan {
    pub design_id: usize,
    pub edges: Vec<usize>,
    pub steps: Vec<PathStep>,
}

/// The stored root path of a match, as actuation steps.
pub fn plan_reconfiguration(db: &ShapeDatabase, r: &MatchResult) -> Result<ReconfigurationPlan> {
    if r.generation != db.generation {
        return Err(Error::StaleResult);
    }
    let row = db.rows.iter().find(|row| row.design_id == r.design_id).ok_or(Error::StaleResult)?;
    let e = row.entries.iter().find(|e| e.node == r.node && e.key == r.key).ok_or(Error::StaleResult)?;
    Ok(ReconfigurationPlan { design_id: r.design_id, edges: e.plan.clone(), steps: route_steps(&row.graph, 0, &e.plan) })
}
