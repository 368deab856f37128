//! Actuator selection, motor schedules and the serial command stream.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{node_key, TransitionGraph};
use crate::moves::{changed, combinations, drive_between};
use crate::model::Structure;

/// Most hinges a single step may drive at once.
pub const MAX_CONCURRENT: usize = 3;

/// One lattice-to-lattice move to be actuated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub from: Vec<i64>,
    pub to: Vec<i64>,
    /// Every hinge that rotates during the step.
    pub active: Vec<usize>,
    pub dof: usize,
}

impl PathStep {
    /// Step along edge `e` leaving node `from`.
    pub fn from_edge(g: &TransitionGraph, e: usize, from: usize) -> PathStep {
        let edge = &g.edges[e];
        let to = edge.other(from);
        PathStep {
            from: g.nodes[from].quarters.clone(),
            to: g.nodes[to].quarters.clone(),
            active: edge.active.clone(),
            dof: edge.path_dof,
        }
    }
}

/// Every step of a node-to-node edge sequence.
pub fn route_steps(g: &TransitionGraph, from: usize, edges: &[usize]) -> Vec<PathStep> {
    let mut at = from;
    edges
        .iter()
        .map(|&e| {
            let st = PathStep::from_edge(g, e, at);
            at = g.edges[e].other(at);
            st
        })
        .collect()
}

/// Smallest driver sets (at least `dof` hinges, at most [`MAX_CONCURRENT`]) that replay the step
/// collision-free, drawn from `candidates` when given.
pub fn driver_sets(s: &Structure, step: &PathStep, candidates: Option<&[usize]>) -> Vec<Vec<usize>> {
    let c: Vec<usize> = changed(&step.from, &step.to)
        .into_iter()
        .filter(|h| candidates.is_none_or(|cs| cs.contains(h)))
        .collect();
    for r in step.dof.max(1)..=MAX_CONCURRENT.min(c.len()) {
        let ok: Vec<Vec<usize>> = combinations(&c, r)
            .into_par_iter()
            .filter(|d| drive_between(s, &step.from, &step.to, d, true).is_ok())
            .collect();
        if !ok.is_empty() {
            return ok;
        }
    }
    Vec::new()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub step: usize,
    pub drivers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorAssignment {
    pub actuated: Vec<usize>,
    pub passive: Vec<usize>,
    pub coverage: Vec<Coverage>,
}

impl ActuatorAssignment {
    /// Motor id of a hinge: its position in the actuated list.
    pub fn motor(&self, hinge: usize) -> Option<usize> {
        self.actuated.iter().position(|&h| h == hinge)
    }
}

fn subset(d: &[usize], h: &BTreeSet<usize>) -> bool {
    d.iter().all(|x| h.contains(x))
}

fn covers(families: &[Vec<Vec<usize>>], h: &BTreeSet<usize>) -> bool {
    families.iter().all(|f| f.iter().any(|d| subset(d, h)))
}

/// Exhaustive search applies when the hinges appearing in any driver set number at most this.
const EXACT_LIMIT: usize = 16;

/// Fewest hinges such that every step has an admissible driver set among them.
///
/// Each step is served by any of its [`driver_sets`]. Small instances are solved exactly, larger
/// ones by greedy weighted cover (new steps served per added hinge).
pub fn assign_actuators(s: &Structure, steps: &[PathStep], candidates: Option<&[usize]>) -> Result<ActuatorAssignment> {
    let families: Vec<Vec<Vec<usize>>> = steps.par_iter().map(|st| driver_sets(s, st, candidates)).collect();
    if let Some(i) = families.iter().position(|f| f.is_empty()) {
        return Err(Error::UncoverablePath(i));
    }
    let universe: Vec<usize> = families.iter().flatten().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let chosen = if universe.len() <= EXACT_LIMIT { exact_cover(&families, &universe) } else { greedy_cover(&families) };
    let coverage = families
        .iter()
        .enumerate()
        .map(|(i, f)| Coverage { step: i, drivers: f.iter().find(|d| subset(d, &chosen)).unwrap().clone() })
        .collect();
    let actuated: Vec<usize> = chosen.into_iter().collect();
    let passive = (0..s.n_hinges()).filter(|h| !actuated.contains(h)).collect();
    Ok(ActuatorAssignment { actuated, passive, coverage })
}

fn exact_cover(families: &[Vec<Vec<usize>>], universe: &[usize]) -> BTreeSet<usize> {
    for k in 0..=universe.len() {
        // combinations come out in lexicographic order, so the first hit is the canonical optimum
        for pick in combinations(universe, k) {
            let h: BTreeSet<usize> = pick.into_iter().collect();
            if covers(families, &h) {
                return h;
            }
        }
    }
    universe.iter().copied().collect()
}

fn greedy_cover(families: &[Vec<Vec<usize>>]) -> BTreeSet<usize> {
    let mut h = BTreeSet::new();
    loop {
        let open: Vec<usize> = (0..families.len()).filter(|&i| !families[i].iter().any(|d| subset(d, &h))).collect();
        if open.is_empty() {
            return h;
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for &i in &open {
            for d in &families[i] {
                let add: Vec<usize> = d.iter().copied().filter(|x| !h.contains(x)).collect();
                let mut h2 = h.clone();
                h2.extend(add.iter().copied());
                let gain = open.iter().filter(|&&j| families[j].iter().any(|d2| subset(d2, &h2))).count();
                let score = gain as f64 / add.len() as f64;
                let better = match &best {
                    None => true,
                    Some((bs, ba)) => score > *bs || (score == *bs && add < *ba),
                };
                if better {
                    best = Some((score, add));
                }
            }
        }
        h.extend(best.unwrap().1);
    }
}

/// A motor set-point: reach `centideg` / 100 degrees at `t_ms`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Keyframe {
    pub t_ms: u64,
    pub hinge: usize,
    pub centideg: i64,
}

impl Keyframe {
    pub fn degrees(&self) -> f64 {
        self.centideg as f64 / 100.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorSchedule {
    pub keyframes: Vec<Keyframe>,
    /// Degrees per second.
    pub omega: f64,
    /// Driven hinges per step.
    pub concurrency: Vec<usize>,
    pub duration_ms: u64,
}

/// A step with the hinges that drive it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivenStep {
    pub from: Vec<i64>,
    pub to: Vec<i64>,
    pub drivers: Vec<usize>,
}

/// Pair each step with the drivers chosen for it in `a`.
pub fn driven_steps(steps: &[PathStep], a: &ActuatorAssignment) -> Vec<DrivenStep> {
    steps
        .iter()
        .zip(&a.coverage)
        .map(|(st, c)| DrivenStep { from: st.from.clone(), to: st.to.clone(), drivers: c.drivers.clone() })
        .collect()
}

fn lattice_centideg(q: i64) -> i64 {
    (q * 9000).rem_euclid(36000)
}

/// Sequence the steps at angular speed `omega`, re-validating every step by continuation at the
/// default 2° resolution. Each step lasts `max |Δγ| / omega`.
pub fn compile_schedule(s: &Structure, steps: &[DrivenStep], omega: f64) -> Result<MotorSchedule> {
    if omega <= 0.0 || !omega.is_finite() {
        return Err(Error::Parse(format!("angular speed {omega}")));
    }
    let mut keyframes = Vec::new();
    let mut concurrency = Vec::new();
    let mut t = 0u64;
    for (i, st) in steps.iter().enumerate() {
        let path = drive_between(s, &st.from, &st.to, &st.drivers, true).map_err(|_| Error::ClosureDrift(i))?;
        if node_key(s, &path.end().lattice_quarters().ok_or(Error::ClosureDrift(i))?, false) != node_key(s, &st.to, false) {
            return Err(Error::ClosureDrift(i));
        }
        let sweep = st.drivers.iter().map(|&h| ((st.to[h] - st.from[h]).rem_euclid(4).min((st.from[h] - st.to[h]).rem_euclid(4)) * 90) as f64);
        let dur = (sweep.fold(0.0, f64::max) / omega * 1000.0).round() as u64;
        for &h in &st.drivers {
            keyframes.push(Keyframe { t_ms: t, hinge: h, centideg: lattice_centideg(st.from[h]) });
            keyframes.push(Keyframe { t_ms: t + dur, hinge: h, centideg: lattice_centideg(st.to[h]) });
        }
        concurrency.push(st.drivers.len());
        t += dur;
    }
    keyframes.sort();
    Ok(MotorSchedule { keyframes, omega, concurrency, duration_ms: t })
}

/// `SET <motor> <angle> <t_ms>` per keyframe, then `RUN`.
pub fn export_commands(sched: &MotorSchedule, a: &ActuatorAssignment) -> Result<String> {
    let mut lines = Vec::with_capacity(sched.keyframes.len() + 1);
    for k in &sched.keyframes {
        let m = a.motor(k.hinge).ok_or(Error::UnassignedHinge(k.hinge))?;
        lines.push(format!("SET {} {:.2} {}", m, k.degrees(), k.t_ms));
    }
    lines.push("RUN".to_string());
    Ok(lines.join("\n"))
}

pub fn parse_commands(text: &str, a: &ActuatorAssignment) -> Result<Vec<Keyframe>> {
    let mut out = Vec::new();
    let mut ran = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if ran {
            return Err(Error::Parse("frame after RUN".into()));
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["RUN"] => ran = true,
            ["SET", m, ang, t] => {
                let bad = |x: &str| Error::Parse(format!("bad field {x:?} in {line:?}"));
                let m: usize = m.parse().map_err(|_| bad(m))?;
                let hinge = *a.actuated.get(m).ok_or_else(|| bad("motor"))?;
                let deg: f64 = ang.parse().map_err(|_| bad(ang))?;
                let t_ms: u64 = t.parse().map_err(|_| bad(t))?;
                out.push(Keyframe { t_ms, hinge, centideg: (deg * 100.0).round() as i64 });
            }
            _ => return Err(Error::Parse(format!("unknown frame {line:?}"))),
        }
    }
    if !ran {
        return Err(Error::Parse("missing RUN".into()));
    }
    Ok(out)
}
