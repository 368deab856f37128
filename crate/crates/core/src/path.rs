//! Continuation along piecewise-linear drive schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{placement_unchecked, residual_norm, restricted_null_dim, solve_free, FoldState, SolveOptions, Tolerances};
use crate::model::Structure;
use crate::shape::continuous_collisions;

/// Driven hinges and their angles (radians) at each waypoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSchedule {
    pub driven: Vec<usize>,
    pub waypoints: Vec<Vec<f64>>,
}

impl DriveSchedule {
    /// Straight-line schedule on `driven` from `from` to `to`.
    pub fn linear(driven: &[usize], from: &FoldState, to: &FoldState) -> Self {
        DriveSchedule {
            driven: driven.to_vec(),
            waypoints: vec![driven.iter().map(|&h| from.gamma[h]).collect(), driven.iter().map(|&h| to.gamma[h]).collect()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathOptions {
    pub max_step: f64,
    pub min_step: f64,
    pub collision: bool,
    /// Hinges held at their starting angle; every other undriven hinge is free.
    pub locked: Vec<usize>,
    pub tol: Tolerances,
    /// Largest accepted change of a free angle per step.
    pub max_jump: f64,
    /// Final states this close to `to` are replaced by `to`.
    pub snap: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            max_step: 2f64.to_radians(),
            min_step: 0.125f64.to_radians(),
            collision: true,
            locked: Vec::new(),
            tol: Tolerances::default(),
            max_jump: 20f64.to_radians(),
            snap: 1e-5,
        }
    }
}

/// A validated continuous path between two states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinePath {
    pub states: Vec<FoldState>,
    pub driven: Vec<usize>,
    pub active_hinges: Vec<usize>,
    pub path_dof: usize,
}

impl KinePath {
    pub fn start(&self) -> &FoldState {
        &self.states[0]
    }
    pub fn end(&self) -> &FoldState {
        self.states.last().unwrap()
    }
    pub fn reversed(&self) -> KinePath {
        let mut p = self.clone();
        p.states.reverse();
        p
    }
}

fn wrapped(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

pub fn angle_distance(a: &FoldState, b: &FoldState) -> f64 {
    a.gamma.iter().zip(&b.gamma).map(|(x, y)| wrapped(x - y).abs()).fold(0.0, f64::max)
}

pub fn continue_path(
    s: &Structure,
    from: &FoldState,
    schedule: &DriveSchedule,
    to: Option<&FoldState>,
    opts: &PathOptions,
) -> Result<KinePath> {
    let n = s.n_hinges();
    if from.len() != n {
        return Err(Error::StateLength { got: from.len(), want: n });
    }
    let mut fixed = vec![false; n];
    for &h in schedule.driven.iter().chain(&opts.locked) {
        if h >= n {
            return Err(Error::BadIndex(h));
        }
        fixed[h] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&h| !fixed[h]).collect();
    let solve = SolveOptions { tol: opts.tol.closure, ..SolveOptions::default() };
    let r0 = residual_norm(s, from);
    if r0 > opts.tol.manifold {
        return Err(Error::NotOnManifold(r0));
    }
    let mut states = vec![from.clone()];
    let mut prev: Option<(FoldState, f64)> = None;
    let n_seg = schedule.waypoints.len().saturating_sub(1);
    for (si, seg) in schedule.waypoints.windows(2).enumerate() {
        let (w0, w1) = (&seg[0], &seg[1]);
        let span = w0.iter().zip(w1).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        if span == 0.0 {
            continue;
        }
        let h_max = (opts.max_step / span).min(1.0);
        let mut h = h_max;
        let mut t = 0.0;
        while t < 1.0 - 1e-15 {
            let t1 = (t + h).min(1.0);
            let cur = states.last().unwrap().clone();
            let mut seed = cur.clone();
            for (k, &hg) in schedule.driven.iter().enumerate() {
                seed.gamma[hg] = w0[k] + (w1[k] - w0[k]) * t1;
            }
            let step_len = (t1 - t) * span;
            if let Some((p, plen)) = &prev {
                let ratio = step_len / plen;
                for &f in &free {
                    seed.gamma[f] = cur.gamma[f] + ratio * (cur.gamma[f] - p.gamma[f]);
                }
            }
            let predicted = seed.clone();
            let attempt = solve_free(s, &seed, &free, &solve).and_then(|st| {
                let jump = free.iter().map(|&f| (st.gamma[f] - cur.gamma[f]).abs()).fold(0.0, f64::max);
                let drift = free.iter().map(|&f| (st.gamma[f] - predicted.gamma[f]).abs()).fold(0.0, f64::max);
                if jump > opts.max_jump || drift > opts.max_jump / 2.0 {
                    Err(Error::NoConvergence(jump))
                } else {
                    Ok(st)
                }
            });
            match attempt {
                Ok(mut st) => {
                    if let Some(target) = to {
                        if si + 1 == n_seg && t1 >= 1.0 && angle_distance(&st, target) <= opts.snap {
                            st = target.clone();
                        }
                    }
                    if opts.collision {
                        let hits = continuous_collisions(&placement_unchecked(s, &st));
                        if !hits.is_empty() {
                            return Err(Error::CollisionOnPath { step: states.len(), pairs: hits });
                        }
                    }
                    prev = Some((cur, step_len));
                    states.push(st);
                    t = t1;
                    h = (h * 2.0).min(h_max);
                }
                Err(e) => {
                    h /= 2.0;
                    if h * span < opts.min_step - 1e-15 {
                        return Err(match e {
                            Error::DrivenOverconstrained(r) => Error::DrivenOverconstrained(r),
                            Error::NoConvergence(r) => Error::NoConvergence(r),
                            other => other,
                        });
                    }
                }
            }
        }
    }
    if let Some(target) = to {
        let d = angle_distance(states.last().unwrap(), target);
        if d > opts.snap {
            return Err(Error::WrongEndpoint(d));
        }
        if states.len() == 1 {
            if d > 0.0 {
                states.push(target.clone());
            }
        } else {
            *states.last_mut().unwrap() = target.clone();
        }
    }
    let start = &states[0];
    let active: Vec<usize> =
        (0..n).filter(|&h| states.iter().any(|st| (st.gamma[h] - start.gamma[h]).abs() > 1e-7)).collect();
    let path_dof = if states.len() > 2 && !active.is_empty() {
        states[1..states.len() - 1]
            .iter()
            .map(|st| restricted_null_dim(s, st, &active, opts.tol.rel_sv))
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    Ok(KinePath { states, driven: schedule.driven.clone(), active_hinges: active, path_dof })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_structure, DesignSpec};

    #[test]
    fn zero_length_schedule() {
        let s = build_structure(&DesignSpec::uniform(&[8], 1).unwrap()).unwrap();
        let flat = FoldState::flat(8);
        let p = continue_path(&s, &flat, &DriveSchedule::linear(&[1], &flat, &flat), Some(&flat), &PathOptions::default()).unwrap();
        assert_eq!(p.states.len(), 1);
        assert_eq!(p.path_dof, 0);
    }

    #[test]
    fn single_fold_line() {
        // the top fold line x = -2 of the all-top 8R block carries hinges 1 and 7
        let s = build_structure(&DesignSpec::uniform(&[8], 1).unwrap()).unwrap();
        let flat = FoldState::flat(8);
        let mut to = flat.clone();
        to.gamma[1] = PI / 2.0;
        to.gamma[7] = PI / 2.0;
        let locked: Vec<usize> = (0..8).filter(|h| ![1, 7].contains(h)).collect();
        let opts = PathOptions { locked, ..PathOptions::default() };
        let p = continue_path(&s, &flat, &DriveSchedule::linear(&[1], &flat, &to), Some(&to), &opts).unwrap();
        assert_eq!(p.active_hinges, vec![1, 7]);
        assert_eq!(p.path_dof, 1);
        assert_eq!(p.states.len(), 46);
    }
}
