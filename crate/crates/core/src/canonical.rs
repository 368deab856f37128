//! The reference ⟨8R,4R⟩ design, its first reconfiguration loop, and the closed-form 8R relation.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::IVec3;
use crate::kinematics::{solve_closure, FoldState};
use crate::graph::{build_transition_graph, GraphLimits, GraphLoop, TransitionGraph};
use crate::model::{build_structure, DesignSpec, Structure};
use crate::moves::MoveOptions;

/// Level-1 rings of the reference design (1-based cube ids, hinge order).
pub const RING_ORDERS: [[usize; 8]; 4] = [
    [1, 2, 7, 10, 15, 16, 9, 8],
    [4, 3, 6, 11, 14, 13, 12, 5],
    [29, 30, 27, 22, 19, 20, 21, 28],
    [32, 31, 26, 23, 18, 17, 24, 25],
];

/// Edge codes along each ring.
pub const RING_CODES: [[u8; 8]; 4] = [
    [0, 1, 2, 1, 0, 1, 3, 1],
    [0, 1, 3, 1, 0, 1, 2, 1],
    [0, 1, 3, 1, 0, 1, 2, 1],
    [0, 1, 2, 1, 0, 1, 3, 1],
];

/// Level-2 hinges joining rings A|B, B|C, C|D, D|A (1-based cube ids) and their codes.
pub const LEVEL2_PAIRS: [(usize, usize); 4] = [(10, 11), (13, 20), (23, 22), (16, 17)];
pub const LEVEL2_CODES: [u8; 4] = [0, 1, 0, 1];

/// Hinge index of position `pos` in ring `ring`.
pub fn ring_hinge(ring: usize, pos: usize) -> usize {
    ring * 8 + pos
}

pub fn canonical_design() -> DesignSpec {
    let mut pairs = Vec::with_capacity(36);
    let mut codes = Vec::with_capacity(36);
    for (ring, cs) in RING_ORDERS.iter().zip(&RING_CODES) {
        for i in 0..8 {
            pairs.push((1u8, ring[i] - 1, ring[(i + 1) % 8] - 1));
            codes.push(cs[i]);
        }
    }
    for (&(a, b), &c) in LEVEL2_PAIRS.iter().zip(&LEVEL2_CODES) {
        pairs.push((2u8, a - 1, b - 1));
        codes.push(c);
    }
    DesignSpec::from_pairs(&[8, 4], &pairs, &codes).expect("reference design is well formed")
}

pub fn canonical_structure() -> Structure {
    build_structure(&canonical_design()).expect("reference design builds")
}

/// A lattice state on the first reconfiguration loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmark {
    pub label: String,
    pub quarters: Vec<i64>,
}

fn set_rings(q: &mut [i64], rings: &[usize], positions: &[usize], value: i64) {
    for &r in rings {
        for &p in positions {
            q[ring_hinge(r, p)] = value;
        }
    }
}

/// Landmarks of the first reconfiguration loop, from `M_A` around to `M_A` again.
///
/// The `M_F` to `M_A` return runs through five unnamed states (`M_F.1` .. `M_F.5`): each ring
/// pair first folds its end rows under (0°), then opens them in two quarter turns.
pub fn rl1_route() -> Vec<Landmark> {
    let all = [0, 1, 2, 3];
    let mut q = vec![2i64; 36];
    let mut out = vec![Landmark { label: "M_A".into(), quarters: q.clone() }];
    let mut push = |label: &str, q: &[i64]| out.push(Landmark { label: label.into(), quarters: q.to_vec() });
    set_rings(&mut q, &all, &[3, 5], 1);
    push("M_B", &q);
    set_rings(&mut q, &[0, 1], &[1, 7], 1);
    push("M_C", &q);
    set_rings(&mut q, &[2, 3], &[1, 7], 1);
    push("M_D", &q);
    set_rings(&mut q, &all, &[0, 2, 4, 6], 1);
    push("M_E", &q);
    set_rings(&mut q, &all, &[3, 7], 2);
    push("M_F", &q);
    let mut k = 0;
    for (pi, pair) in [[0usize, 3], [1, 2]].iter().enumerate() {
        set_rings(&mut q, pair, &[1, 2, 5, 6], 2);
        set_rings(&mut q, pair, &[0, 4], 0);
        for v in [1, 2, 3] {
            if pi == 1 && v == 3 {
                break;
            }
            k += 1;
            push(&format!("M_F.{k}"), &q);
            set_rings(&mut q, pair, &[0, 4], v.min(2));
        }
    }
    push("M_A", &q);
    out
}

pub fn landmark(label: &str) -> Option<Vec<i64>> {
    rl1_route().into_iter().find(|l| l.label == label).map(|l| l.quarters)
}

/// `t` for a turn of `deg` degrees about x, in fold-local frames.
pub fn x_turn(deg: i64) -> [[i64; 3]; 3] {
    let (c, s) = match deg.rem_euclid(360) {
        0 => (1, 0),
        90 => (0, 1),
        180 => (-1, 0),
        270 => (0, -1),
        _ => panic!("x_turn takes multiples of 90 degrees"),
    };
    [[1, 0, 0], [0, c, s], [0, -s, c]]
}

/// `v_new = t v_local + d` with `v_local = v - d`.
pub fn local_move(v: IVec3, t: &[[i64; 3]; 3], d: IVec3) -> IVec3 {
    let l = [v[0] - d[0], v[1] - d[1], v[2] - d[2]];
    let tl = crate::geom::mat_vec(t, &l);
    [tl[0] + d[0], tl[1] + d[1], tl[2] + d[2]]
}

/// Standalone 8R block whose codes follow ring A of the reference design.
pub fn symmetric_8r_design() -> DesignSpec {
    let order = [0usize, 1, 2, 5, 6, 7, 4, 3];
    let pairs: Vec<(u8, usize, usize)> = (0..8).map(|i| (1u8, order[i], order[(i + 1) % 8])).collect();
    DesignSpec::from_pairs(&[8], &pairs, &RING_CODES[0]).expect("8R block is well formed")
}

/// The closed-form relation and the solved angles on the symmetric 8R branch, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub gamma: f64,
    /// `asin(sin²γ / (1 + cos²γ))` as stated, for hinges 1 and 5.
    pub formula_m15: f64,
    /// `180° − formula_m15`, for hinges 3 and 7.
    pub formula_m37: f64,
    pub solved_m15: f64,
    pub solved_m37: f64,
    /// See [`resolved_m15`].
    pub resolved_m15: f64,
    pub discrepancy: f64,
}

/// `acos((1 − sin γ) / (1 + sin γ))`: tracks the solved hinges 1 and 5 to within 0.02° on
/// [90°, 180°]. It is 90° at γ = 90° and `acos(1/3)` ≈ 70.5° at γ = 150°.
pub fn resolved_m15(gamma_deg: f64) -> f64 {
    let s = gamma_deg.to_radians().sin();
    ((1.0 - s) / (1.0 + s)).acos().to_degrees()
}

/// Compare the closed-form 8R relation against the closure solver at drive angle `gamma_deg`.
/// Hinges 2, 4, 6, 8 (the top folds) are driven; the numeric values are authoritative.
pub fn closed_form_8r(gamma_deg: f64) -> Result<ClosedFormReport> {
    let s = build_structure(&symmetric_8r_design())?;
    let g = gamma_deg.to_radians();
    let formula = ((g.sin().powi(2)) / (1.0 + g.cos().powi(2))).asin().to_degrees();
    // follow the branch from the all-90 state so the solver stays on it
    let mut st = FoldState::from_degrees(&[90.0; 8]);
    let steps = ((gamma_deg - 90.0).abs() / 2.0).ceil().max(1.0) as usize;
    for k in 1..=steps {
        let a = (90.0 + (gamma_deg - 90.0) * k as f64 / steps as f64).to_radians();
        let driven: Vec<(usize, f64)> = [1, 3, 5, 7].iter().map(|&h| (h, a)).collect();
        st = solve_closure(&s, &driven, &st)?;
    }
    let deg = st.degrees();
    let wrap = |x: f64| x.rem_euclid(360.0);
    let (m15, m37) = (wrap(deg[0]), wrap(deg[2]));
    let resolved = resolved_m15(gamma_deg);
    Ok(ClosedFormReport {
        gamma: gamma_deg,
        formula_m15: formula,
        formula_m37: 180.0 - formula,
        solved_m15: m15,
        solved_m37: m37,
        resolved_m15: resolved,
        discrepancy: (formula - m15).abs().max((180.0 - formula - m37).abs()),
    })
}

#[cfg(test)]
mod closed_form_tests {
    use super::*;

    #[test]
    fn cube_state_agrees() {
        let r = closed_form_8r(90.0).unwrap();
        assert!((r.solved_m15 - 90.0).abs() < 1e-9 && (r.solved_m37 - 90.0).abs() < 1e-9);
        assert!(r.discrepancy < 1e-9);
    }

    #[test]
    fn formula_disagrees_at_150() {
        let r = closed_form_8r(150.0).unwrap();
        assert!((r.formula_m15 - 8.2132).abs() < 1e-3);
        assert!((r.solved_m15 - 70.5).abs() < 0.1 && (r.solved_m37 - 109.5).abs() < 0.1);
        assert!((r.resolved_m15 - r.solved_m15).abs() < 0.02);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{lattice_centers, lattice_closes};
    use crate::shape::lattice_collision_free;

    #[test]
    fn reference_counts() {
        let s = canonical_structure();
        assert_eq!((s.n_cubes(), s.n_hinges()), (32, 36));
    }

    #[test]
    fn route_states_are_valid() {
        let s = canonical_structure();
        let r = rl1_route();
        assert_eq!(r.first().unwrap().quarters, r.last().unwrap().quarters);
        for l in &r {
            assert!(lattice_closes(&s, &l.quarters), "{}", l.label);
            assert!(lattice_collision_free(&lattice_centers(&s, &l.quarters)), "{}", l.label);
        }
        for w in r.windows(2) {
            assert!(w[0].quarters.iter().zip(&w[1].quarters).all(|(a, b)| (a - b).rem_euclid(4) != 2));
        }
    }

    #[test]
    fn x_turn_matches_reference_matrix() {
        assert_eq!(x_turn(90), [[1, 0, 0], [0, 0, 1], [0, -1, 0]]);
        assert_eq!(local_move([1, 3, 1], &x_turn(90), [0, 2, 0]), [1, 3, -1]);
    }
}

/// Transition graph of the reference design: BFS within `limits`, the first reconfiguration loop
/// as "RL-1", and the first loop bypassing it as "RL-2" with its closing edge's ends labelled
/// `M_6` and `M_10`.
pub fn canonical_graph(limits: &GraphLimits, opts: &MoveOptions) -> Result<TransitionGraph> {
    let s = canonical_structure();
    let mut g = build_transition_graph(&s, limits, opts)?;
    let rl1 = g.insert_route(&s, &rl1_route(), Some("RL-1"), opts)?;
    g.annotate(&s)?;
    label_rl2(&mut g, &rl1);
    Ok(g)
}

/// Label the RL-2 loop given the edge ids of RL-1. Returns the closing edge if there is one.
pub fn label_rl2(g: &mut TransitionGraph, rl1_edges: &[usize]) -> Option<usize> {
    let trunk: Vec<usize> = rl1_edges.iter().flat_map(|&e| [g.edges[e].a, g.edges[e].b]).collect();
    let (e, u, v) = g.cross_subtree_edge(&trunk)?;
    g.nodes[u].label.get_or_insert_with(|| "M_6".into());
    g.nodes[v].label.get_or_insert_with(|| "M_10".into());
    // shortest way back from v to u without the closing edge
    let mut prev = vec![None::<(usize, usize)>; g.nodes.len()];
    let mut queue = std::collections::VecDeque::from([v]);
    prev[v] = Some((v, e));
    while let Some(x) = queue.pop_front() {
        if x == u {
            break;
        }
        for f in g.incident(x) {
            let y = g.edges[f].other(x);
            if f != e && prev[y].is_none() {
                prev[y] = Some((x, f));
                queue.push_back(y);
            }
        }
    }
    prev[u]?;
    let (mut nodes, mut edges) = (vec![u], vec![]);
    let mut x = u;
    while x != v {
        let (px, f) = prev[x].unwrap();
        edges.push(f);
        nodes.push(px);
        x = px;
    }
    edges.push(e);
    nodes.push(u);
    g.loops.push(GraphLoop { label: Some("RL-2".into()), nodes, edges });
    Some(e)
}
