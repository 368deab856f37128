//! Adjacent lattice states and the continuous moves that reach them.

use std::collections::{HashMap, HashSet};

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{IVec3, LatticeTf};
use crate::kinematics::{lattice_joint, residual_norm, restricted_null_basis, FoldState, Tolerances};
use crate::model::Structure;
use crate::path::{continue_path, DriveSchedule, KinePath, PathOptions};

/// One hierarchy block's admissible local changes.
#[derive(Clone, Debug)]
struct BlockOption {
    /// Quarter-turn change per hinge of the block (indexed like `BlockSet::hinges`).
    delta: Vec<i8>,
    /// Pose of every block cube relative to the block root cube.
    poses: HashMap<usize, LatticeTf>,
}

struct BlockSet {
    hinges: Vec<usize>,
    root: usize,
    options: Vec<BlockOption>,
}

fn centers_distinct(s: &Structure, poses: &HashMap<usize, LatticeTf>) -> bool {
    let mut seen: HashSet<IVec3> = HashSet::with_capacity(poses.len());
    poses.iter().all(|(&c, p)| seen.insert(p.apply(&s.cubes[c].home_center)))
}

fn hinge_step(s: &Structure, q: &[i64], h: usize, d: i8, from_a: bool) -> LatticeTf {
    lattice_joint(s, h, q[h] + d as i64, if from_a { 1 } else { -1 })
}

/// Level-1 link options: every delta in {-1,0,1}^n closing the link's loop without overlap.
fn link_options(s: &Structure, q: &[i64], link: usize) -> BlockSet {
    let members = s.groups[0][link].members.clone();
    let hinges = s.link_hinges(link);
    let root = members[0];
    let n = hinges.len();
    // walk order: from the root along the hinges as a chain; the last hinge closes the loop
    let mut chain: Vec<(usize, usize, usize, bool)> = Vec::new();
    let mut placed = HashSet::from([root]);
    let mut remaining: Vec<usize> = hinges.clone();
    let mut closing = None;
    while !remaining.is_empty() {
        let pos = remaining.iter().position(|&h| {
            let hs = &s.hinges[h];
            placed.contains(&hs.cube_a) != placed.contains(&hs.cube_b)
        });
        match pos {
            Some(i) => {
                let h = remaining.remove(i);
                let hs = &s.hinges[h];
                let from_a = placed.contains(&hs.cube_a);
                let (p, c) = if from_a { (hs.cube_a, hs.cube_b) } else { (hs.cube_b, hs.cube_a) };
                placed.insert(c);
                chain.push((h, p, c, from_a));
            }
            None => {
                closing = Some(remaining.remove(0));
            }
        }
    }
    let idx: HashMap<usize, usize> = hinges.iter().enumerate().map(|(i, &h)| (h, i)).collect();
    let mut options = Vec::new();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut delta = vec![0i8; n];
        let mut rem = code;
        for d in delta.iter_mut() {
            *d = (rem % 3) as i8 - 1;
            rem /= 3;
        }
        let mut poses = HashMap::from([(root, LatticeTf::IDENTITY)]);
        for &(h, p, c, from_a) in &chain {
            let t = poses[&p].compose(&hinge_step(s, q, h, delta[idx[&h]], from_a));
            poses.insert(c, t);
        }
        if let Some(h) = closing {
            let hs = &s.hinges[h];
            let b = poses[&hs.cube_a].compose(&hinge_step(s, q, h, delta[idx[&h]], true));
            if b != poses[&hs.cube_b] {
                continue;
            }
        }
        if centers_distinct(s, &poses) {
            options.push(BlockOption { delta, poses });
        }
    }
    BlockSet { hinges, root, options }
}

/// Combine sub-block options through the block's own hinges, closing its loop.
fn combine(s: &Structure, q: &[i64], level: usize, block: usize, subs: Vec<BlockSet>) -> BlockSet {
    let grp = &s.groups[level][block];
    let sub_index = |c: usize| subs.iter().position(|b| b.options[0].poses.contains_key(&c)).unwrap();
    let own: Vec<usize> = s
        .hinges
        .iter()
        .filter(|h| h.level as usize == level + 1 && grp.cubes.binary_search(&h.cube_a).is_ok())
        .map(|h| h.id)
        .collect();
    let k = subs.len();
    // order own hinges along the sub-block loop: hinge i joins sub i to sub i+1
    let mut ordered: Vec<(usize, usize, usize, bool)> = Vec::new();
    let mut cur = 0usize;
    let mut used = HashSet::new();
    for _ in 0..own.len() {
        let next = own.iter().copied().find(|h| {
            let hs = &s.hinges[*h];
            !used.contains(h) && (sub_index(hs.cube_a) == cur || sub_index(hs.cube_b) == cur)
        });
        let h = match next {
            Some(h) => h,
            None => break,
        };
        used.insert(h);
        let hs = &s.hinges[h];
        let from_a = sub_index(hs.cube_a) == cur;
        let (exit, entry) = if from_a { (hs.cube_a, hs.cube_b) } else { (hs.cube_b, hs.cube_a) };
        ordered.push((h, exit, entry, from_a));
        cur = sub_index(entry);
    }
    let closed = k > 2;
    // entry cube of sub i is where hinge i-1 lands; sub 0 is entered by the closing hinge
    let entry_of = |i: usize| -> usize {
        if i == 0 {
            if closed {
                ordered[k - 1].2
            } else {
                subs[0].root
            }
        } else {
            ordered[i - 1].2
        }
    };
    let sub_order: Vec<usize> = {
        let mut v = vec![0usize];
        for &(_, _, entry, _) in ordered.iter().take(k - 1) {
            v.push(sub_index(entry));
        }
        v
    };
    // transfer of each option of each sub: entry -> exit
    let transfer = |o: &BlockOption, step: usize| -> LatticeTf {
        let entry = entry_of(step);
        let exit = ordered[step].1;
        o.poses[&entry].inverse().compose(&o.poses[&exit])
    };
    let mut groups: Vec<Vec<(LatticeTf, Vec<usize>)>> = Vec::new();
    for (step, &si) in sub_order.iter().enumerate() {
        let mut m: HashMap<LatticeTf, Vec<usize>> = HashMap::new();
        if step < ordered.len() {
            for (oi, o) in subs[si].options.iter().enumerate() {
                m.entry(transfer(o, step)).or_default().push(oi);
            }
        } else {
            m.insert(LatticeTf::IDENTITY, (0..subs[si].options.len()).collect());
        }
        let mut v: Vec<(LatticeTf, Vec<usize>)> = m.into_iter().collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        groups.push(v);
    }
    let joint = |step: usize, d: i8| {
        let (h, _, _, from_a) = ordered[step];
        hinge_step(s, q, h, d, from_a)
    };
    // enumerate (group choice, delta) per step; closure via a meet in the middle for loops
    type Half = Vec<(Vec<usize>, Vec<i8>)>;
    let expand = |steps: std::ops::Range<usize>| -> Vec<(LatticeTf, Vec<usize>, Vec<i8>)> {
        let mut acc: Vec<(LatticeTf, Vec<usize>, Vec<i8>)> = vec![(LatticeTf::IDENTITY, vec![], vec![])];
        for step in steps {
            let mut next = Vec::new();
            for (t, gs, ds) in &acc {
                for (gi, (tf, _)) in groups[step].iter().enumerate() {
                    let hinge_choices: &[i8] = if step < ordered.len() { &[-1, 0, 1] } else { &[0] };
                    for &d in hinge_choices {
                        let mut t2 = t.compose(tf);
                        if step < ordered.len() {
                            t2 = t2.compose(&joint(step, d));
                        }
                        let mut g2 = gs.clone();
                        g2.push(gi);
                        let mut d2 = ds.clone();
                        if step < ordered.len() {
                            d2.push(d);
                        }
                        next.push((t2, g2, d2));
                    }
                }
            }
            acc = next;
        }
        acc
    };
    let mut combos: Half = Vec::new();
    if closed {
        let mid = k / 2;
        let left = expand(0..mid);
        let right = expand(mid..k);
        let mut index: HashMap<LatticeTf, Vec<usize>> = HashMap::new();
        for (i, (t, _, _)) in right.iter().enumerate() {
            index.entry(*t).or_default().push(i);
        }
        for (tl, gl, dl) in &left {
            if let Some(rs) = index.get(&tl.inverse()) {
                for &ri in rs {
                    let (_, gr, dr) = &right[ri];
                    combos.push(([gl.clone(), gr.clone()].concat(), [dl.clone(), dr.clone()].concat()));
                }
            }
        }
    } else {
        for (_, g, d) in expand(0..k) {
            combos.push((g, d));
        }
    }
    combos.sort();
    let mut hinges: Vec<usize> = Vec::new();
    for sub in &subs {
        hinges.extend(&sub.hinges);
    }
    let own_offset = hinges.len();
    hinges.extend(ordered.iter().map(|o| o.0));
    let sub_offsets: Vec<usize> = subs
        .iter()
        .scan(0usize, |acc, b| {
            let o = *acc;
            *acc += b.hinges.len();
            Some(o)
        })
        .collect();
    let mut options = Vec::new();
    for (gsel, dsel) in combos {
        // cartesian product of the options inside the chosen transfer groups
        let lists: Vec<&Vec<usize>> = gsel.iter().enumerate().map(|(step, &gi)| &groups[step][gi].1).collect();
        let mut counters = vec![0usize; k];
        loop {
            let mut delta = vec![0i8; hinges.len()];
            let mut poses: HashMap<usize, LatticeTf> = HashMap::new();
            let mut frame = LatticeTf::IDENTITY;
            for step in 0..k {
                let si = sub_order[step];
                let o = &subs[si].options[lists[step][counters[step]]];
                delta[sub_offsets[si]..sub_offsets[si] + o.delta.len()].copy_from_slice(&o.delta);
                // sub frame: place its entry cube at `frame`
                let entry = entry_of(step);
                let base = frame.compose(&o.poses[&entry].inverse());
                for (&c, p) in &o.poses {
                    poses.insert(c, base.compose(p));
                }
                if step < ordered.len() {
                    delta[own_offset + step] = dsel[step];
                    frame = poses[&ordered[step].1].compose(&joint(step, dsel[step]));
                }
            }
            if centers_distinct(s, &poses) {
                // re-root at the first sub-block's root cube
                let root = subs[0].root;
                let inv = poses[&root].inverse();
                for p in poses.values_mut() {
                    *p = inv.compose(p);
                }
                options.push(BlockOption { delta, poses });
            }
            let mut i = 0;
            loop {
                if i == k {
                    break;
                }
                counters[i] += 1;
                if counters[i] < lists[i].len() {
                    break;
                }
                counters[i] = 0;
                i += 1;
            }
            if i == k {
                break;
            }
        }
    }
    BlockSet { hinges, root: subs[0].root, options }
}

/// Lattice states whose angles differ from `q` by at most one quarter turn per hinge, that close
/// every loop exactly and place no two cubes at the same centre. Sorted, `q` excluded.
pub fn lattice_neighbours(s: &Structure, q: &[i64]) -> Vec<Vec<i64>> {
    let mut level: Vec<BlockSet> = (0..s.groups[0].len()).map(|l| link_options(s, q, l)).collect();
    for l in 1..s.levels() {
        let mut next = Vec::new();
        let mut pool: Vec<Option<BlockSet>> = level.into_iter().map(Some).collect();
        for (b, grp) in s.groups[l].iter().enumerate() {
            let subs: Vec<BlockSet> = grp.members.iter().map(|&m| pool[m].take().unwrap()).collect();
            next.push(combine(s, q, l, b, subs));
        }
        level = next;
    }
    let top = &level[0];
    let mut out: Vec<Vec<i64>> = top
        .options
        .iter()
        .filter(|o| o.delta.iter().any(|&d| d != 0))
        .map(|o| {
            let mut r = q.to_vec();
            for (i, &h) in top.hinges.iter().enumerate() {
                r[h] = (q[h] + o.delta[i] as i64).rem_euclid(4);
            }
            r
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Neighbours with no smaller valid sub-move: dropping the changed hinges of any other
/// neighbour whose changes are a strict subset (with equal signs) leaves these.
pub fn primitive_neighbours(s: &Structure, q: &[i64]) -> Vec<Vec<i64>> {
    let all = lattice_neighbours(s, q);
    if q.len() > 128 {
        return all;
    }
    let masks: Vec<(u128, u128)> = all
        .iter()
        .map(|y| {
            let (mut up, mut down) = (0u128, 0u128);
            for i in 0..q.len() {
                match (y[i] - q[i]).rem_euclid(4) {
                    1 => up |= 1 << i,
                    3 => down |= 1 << i,
                    _ => {}
                }
            }
            (up, down)
        })
        .collect();
    let keep: Vec<bool> = masks
        .par_iter()
        .map(|&(u, d)| {
            !masks.iter().any(|&(u2, d2)| (u2, d2) != (u, d) && u2 & !u == 0 && d2 & !d == 0)
        })
        .collect();
    all.into_iter().zip(keep).filter_map(|(y, k)| k.then_some(y)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct MoveOptions {
    /// Largest driver set tried for non-linear moves.
    pub max_drivers: usize,
    pub collision: bool,
    /// Only expand moves that do not contain a smaller valid move.
    pub primitive: bool,
}

impl Default for MoveOptions {
    fn default() -> Self {
        MoveOptions { max_drivers: 2, collision: true, primitive: true }
    }
}

/// A validated edge between two adjacent lattice states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub from: Vec<i64>,
    pub to: Vec<i64>,
    pub linear: bool,
    pub path: KinePath,
}

impl Move {
    pub fn active(&self) -> &[usize] {
        &self.path.active_hinges
    }
    pub fn dof(&self) -> usize {
        self.path.path_dof
    }
}

pub fn changed(a: &[i64], b: &[i64]) -> Vec<usize> {
    (0..a.len()).filter(|&i| a[i] != b[i]).collect()
}

/// Unwrapped target angles: each changed hinge moves by exactly one quarter turn.
pub fn target_state(from: &FoldState, a: &[i64], b: &[i64]) -> FoldState {
    let mut t = from.clone();
    for i in 0..a.len() {
        let d = (b[i] - a[i]).rem_euclid(4);
        let step = match d {
            1 => 1.0,
            3 => -1.0,
            0 => 0.0,
            _ => 2.0,
        };
        t.gamma[i] = from.gamma[i] + step * std::f64::consts::FRAC_PI_2;
    }
    t
}

/// Try to join two lattice states by a continuous collision-free path that moves only the
/// hinges whose angles differ: straight-line first, then single and paired drivers.
pub fn connect(s: &Structure, a: &[i64], b: &[i64], opts: &MoveOptions) -> Option<Move> {
    let from = FoldState::from_quarters(a);
    let to = target_state(&from, a, b);
    let c = changed(a, b);
    if c.is_empty() {
        return None;
    }
    let null = restricted_null_basis(s, &from, &c, Tolerances::default().rel_sv);
    let k = null.ncols();
    if k == 0 || !has_monotone_tangent(&null, &c, &from, &to) {
        return None;
    }
    let locked: Vec<usize> = (0..a.len()).filter(|h| !c.contains(h)).collect();
    let popts = PathOptions { locked: locked.clone(), collision: opts.collision, ..PathOptions::default() };
    let linear = [0.25, 0.5, 0.75].iter().all(|&t| {
        let mut st = from.clone();
        for &h in &c {
            st.gamma[h] = from.gamma[h] + (to.gamma[h] - from.gamma[h]) * t;
        }
        residual_norm(s, &st) < 1e-9
    });
    if linear {
        let sched = DriveSchedule::linear(&c, &from, &to);
        return continue_path(s, &from, &sched, Some(&to), &popts)
            .ok()
            .map(|path| Move { from: a.to_vec(), to: b.to_vec(), linear: true, path: finish(path, b) });
    }
    // the restricted null dimension only drops near the start, so k drivers always suffice
    for r in 1..=opts.max_drivers.min(c.len() - 1).min(k) {
        for drivers in combinations(&c, r) {
            let sched = DriveSchedule::linear(&drivers, &from, &to);
            if let Ok(path) = continue_path(s, &from, &sched, Some(&to), &popts) {
                return Some(Move { from: a.to_vec(), to: b.to_vec(), linear: false, path: finish(path, b) });
            }
        }
    }
    None
}

/// A monotone path leaves along a nonzero null vector whose components all point toward the
/// target. Checked as a small LP over null-basis coefficients.
fn has_monotone_tangent(null: &DMatrix<f64>, c: &[usize], from: &FoldState, to: &FoldState) -> bool {
    let rows: Vec<Vec<f64>> = c
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let sign = (to.gamma[h] - from.gamma[h]).signum();
            (0..null.ncols()).map(|j| sign * null[(i, j)]).collect()
        })
        .collect();
    let total: Vec<f64> = (0..null.ncols()).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = total.iter().map(|&t| p.add_var(t, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for r in &rows {
        let row: Vec<_> = vars.iter().zip(r).map(|(&v, &x)| (v, x)).collect();
        p.add_constraint(&row[..], ComparisonOp::Ge, -1e-9);
    }
    let obj: Vec<_> = vars.iter().zip(&total).map(|(&v, &t)| (v, t)).collect();
    p.add_constraint(&obj[..], ComparisonOp::Le, 1.0);
    matches!(p.solve(), Ok(SolveOutcome::Solution(sol)) if sol.objective() > 0.5)
}

/// Continue from lattice state `a` to `b` with `drivers` driven linearly and every unchanged hinge
/// locked. The final state is the canonical lattice representative of `b`.
pub fn drive_between(s: &Structure, a: &[i64], b: &[i64], drivers: &[usize], collision: bool) -> Result<KinePath> {
    let from = FoldState::from_quarters(a);
    let to = target_state(&from, a, b);
    let c = changed(a, b);
    let locked = (0..a.len()).filter(|h| !c.contains(h)).collect();
    let popts = PathOptions { locked, collision, ..PathOptions::default() };
    continue_path(s, &from, &DriveSchedule::linear(drivers, &from, &to), Some(&to), &popts).map(|p| finish(p, b))
}

/// Replace the unwrapped final state by the canonical lattice representative.
fn finish(mut path: KinePath, b: &[i64]) -> KinePath {
    *path.states.last_mut().unwrap() = FoldState::from_quarters(b);
    path
}

pub fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    if r > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = r;
        while i > 0 && idx[i - 1] == items.len() - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every validated move out of lattice state `q`, in neighbour order.
pub fn enumerate_moves(s: &Structure, q: &[i64], opts: &MoveOptions) -> Result<Vec<Move>> {
    if q.len() != s.n_hinges() {
        return Err(Error::StateLength { got: q.len(), want: s.n_hinges() });
    }
    let cands = if opts.primitive { primitive_neighbours(s, q) } else { lattice_neighbours(s, q) };
    Ok(cands.par_iter().filter_map(|b| connect(s, q, b, opts)).collect())
}
