//! Acceptance report: one PASS/FAIL line per criterion. Tolerances and time budgets are pinned
//! below. Exits non-zero if any line fails, except the criteria listed in `KNOWN_UNATTAINABLE`,
//! which still print FAIL.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metamorph::actuation::{assign_actuators, compile_schedule, driven_steps, export_commands, parse_commands, route_steps, PathStep};
use metamorph::canonical::{canonical_graph, canonical_structure, closed_form_8r, landmark, local_move, rl1_route, symmetric_8r_design, x_turn};
use metamorph::graph::{build_transition_graph, edge_path, graph_metrics, GraphLimits, TransitionGraph};
use metamorph::invdesign::{match_shape, target_from_cells, MatchOptions, ShapeDatabase};
use metamorph::kinematics::{dof_analysis_with, jacobian, lattice_centers, residual_norm, residual_vector, solve_closure, FoldState, Tolerances};
use metamorph::model::{build_structure, DesignSpec, Structure};
use metamorph::moves::{changed, connect, MoveOptions};

const REL_SV: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;
const FD_MAX_REL: f64 = 1e-5;
const FD_STATES_PER_DESIGN: usize = 100;
const SCALING_MIN_R2: f64 = 0.9;
const SCALING_DEPTHS: std::ops::RangeInclusive<usize> = 1..=5;
const SCALING_PATH_BOUND: usize = 6;
const CLOSED_FORM_TOL_DEG: f64 = 1e-6;
const MAX_LEVEL1_ACTUATORS: usize = 5;
const MAX_LEVEL2_ACTUATORS: usize = 22;
const MAX_CONCURRENT: usize = 3;
const OMEGA_DEG_S: f64 = 30.0;
const SEED: u64 = 20_240_601;

/// The reference M_E has 31 columns, and some of them break hinge adjacency, so no replay can
/// match it column for column. See README.
const KNOWN_UNATTAINABLE: &[&str] = &["replay-M_D-M_E"];

type V3 = [i64; 3];

const REF_M_A: [V3; 32] = [
    [-7, -3, 1], [-7, -1, 1], [-7, 1, 1], [-7, 3, 1], [-5, 3, 1], [-5, 1, 1], [-5, -1, 1], [-5, -3, 1],
    [-3, -3, 1], [-3, -1, 1], [-3, 1, 1], [-3, 3, 1], [-1, 3, 1], [-1, 1, 1], [-1, -1, 1], [-1, -3, 1],
    [1, -3, 1], [1, -1, 1], [1, 1, 1], [1, 3, 1], [3, 3, 1], [3, 1, 1], [3, -1, 1], [3, -3, 1],
    [5, -3, 1], [5, -1, 1], [5, 1, 1], [5, 3, 1], [7, 3, 1], [7, 1, 1], [7, -1, 1], [7, -3, 1],
];

const REF_M_D: [V3; 32] = [
    [-1, -3, 7], [-1, -1, 7], [-1, 1, 7], [-1, 3, 7], [-3, 3, 5], [-3, 1, 5], [-3, -1, 5], [-3, -3, 5],
    [-3, -3, 3], [-3, -1, 3], [-3, 1, 3], [-3, 3, 3], [-1, 3, 1], [-1, 1, 1], [-1, -1, 1], [-1, -3, 1],
    [1, -3, 1], [1, -1, 1], [1, 1, 1], [1, 3, 1], [3, 3, 3], [3, 1, 3], [3, -1, 3], [3, -3, 3],
    [3, -3, 5], [3, -1, 5], [3, 1, 5], [3, 3, 5], [1, 3, 7], [1, 1, 7], [1, -1, 7], [1, -3, 7],
];

/// As given: 31 columns.
const REF_M_E: [V3; 31] = [
    [-1, -7, 3], [-1, -5, 5], [-1, 5, 5], [-1, 7, 3], [-3, 7, -1], [-3, 3, 5], [-3, -3, 5], [-3, -7, -1],
    [-3, -5, -1], [-3, -1, 3], [-3, 1, 3], [-3, 5, -1], [-1, 3, -1], [-1, 1, 1], [-1, -1, 1], [-1, -3, -1],
    [1, -3, -1], [1, -1, 1], [1, 1, 1], [1, 3, -1], [3, 5, -1], [3, 1, 3], [3, -1, 3], [3, -5, 1],
    [3, -7, 1], [3, -3, 5], [3, 3, 5], [1, 3, 1], [1, 1, 3], [1, -1, 5], [1, -3, 5],
];

struct Report {
    failed: usize,
    unexpected: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String, took: Duration, budget: Option<Duration>) {
        let in_time = budget.is_none_or(|b| took <= b);
        let ok = ok && in_time;
        if !ok {
            self.failed += 1;
            if !KNOWN_UNATTAINABLE.contains(&name) {
                self.unexpected += 1;
            }
        }
        let budget = budget.map(|b| format!(" budget {:.0}s", b.as_secs_f64())).unwrap_or_default();
        println!("{} {name}: {detail} [{:.2}s{budget}]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn ring(n: u8) -> Structure {
    build_structure(&DesignSpec::uniform(&[n], 1).unwrap()).unwrap()
}

fn columns_equal(got: &[V3], want: &[V3]) -> usize {
    got.iter().zip(want).filter(|(a, b)| a == b).count()
}

/// RL-1 as a graph: its landmarks and validated edges only.
fn rl1_graph(s: &Structure) -> (TransitionGraph, Vec<usize>) {
    let mut g = build_transition_graph(s, &GraphLimits { max_depth: 0, ..GraphLimits::default() }, &MoveOptions::default()).unwrap();
    let edges = g.insert_route(s, &rl1_route(), Some("RL-1"), &MoveOptions::default()).unwrap();
    g.annotate(s).unwrap();
    (g, edges)
}

// Independent placement: cube poses by walking hinges from cube 0 with rotations built here,
// then closure as agreement on every hinge.

fn rot(axis: &Vector3<f64>, quarters: i64) -> Matrix3<f64> {
    let u = axis.normalize();
    let (s, c) = match quarters.rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    };
    let k = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

type Pose = (Matrix3<f64>, Vector3<f64>);

fn hinge_motion(s: &Structure, h: usize, q: i64) -> Pose {
    let hs = &s.hinges[h];
    let a = Vector3::new(hs.anchor[0] as f64, hs.anchor[1] as f64, hs.anchor[2] as f64);
    let ax = Vector3::new(hs.axis[0] as f64, hs.axis[1] as f64, hs.axis[2] as f64);
    // opening angle q quarter turns is a rotation by (2 - q) quarter turns
    let r = rot(&ax, 2 - q);
    (r, a - r * a)
}

fn compose(p: &Pose, q: &Pose) -> Pose {
    (p.0 * q.0, p.0 * q.1 + p.1)
}

fn close(a: &Pose, b: &Pose) -> bool {
    (a.0 - b.0).amax() < 1e-9 && (a.1 - b.1).amax() < 1e-9
}

/// Centres of a closed lattice state, or None if some hinge disagrees.
fn oracle_centers(s: &Structure, q: &[i64]) -> Option<Vec<V3>> {
    let n = s.n_cubes();
    let mut pose: Vec<Option<Pose>> = vec![None; n];
    pose[0] = Some((Matrix3::identity(), Vector3::zeros()));
    let mut queue = VecDeque::from([0usize]);
    while let Some(c) = queue.pop_front() {
        for (h, hs) in s.hinges.iter().enumerate() {
            let m = hinge_motion(s, h, q[h]);
            let (other, p) = if hs.cube_a == c {
                (hs.cube_b, compose(pose[c].as_ref().unwrap(), &m))
            } else if hs.cube_b == c {
                let inv = (m.0.transpose(), -(m.0.transpose() * m.1));
                (hs.cube_a, compose(pose[c].as_ref().unwrap(), &inv))
            } else {
                continue;
            };
            match &pose[other] {
                None => {
                    pose[other] = Some(p);
                    queue.push_back(other);
                }
                Some(existing) if !close(existing, &p) => return None,
                _ => {}
            }
        }
    }
    Some(
        s.cubes
            .iter()
            .zip(&pose)
            .map(|(c, p)| {
                let (r, t) = p.as_ref().unwrap();
                let x = r * Vector3::new(c.home_center[0] as f64, c.home_center[1] as f64, c.home_center[2] as f64) + t;
                [x.x.round() as i64, x.y.round() as i64, x.z.round() as i64]
            })
            .collect(),
    )
}

fn shape_id(c: &[V3]) -> Vec<V3> {
    c.iter().map(|v| [v[0] - c[0][0], v[1] - c[0][1], v[2] - c[0][2]]).collect()
}

fn cube20_turn(r: &mut Report) {
    let (got, t) = timed(|| local_move([1, 3, 1], &x_turn(90), [0, 2, 0]));
    r.line("cube20-quarter-turn", got == [1, 3, -1], format!("(1,3,1) -> {got:?}"), t, Some(Duration::from_secs(1)));
}

fn flat_shape(r: &mut Report) {
    let (got, t) = timed(|| {
        let s = canonical_structure();
        lattice_centers(&s, &vec![2; s.n_hinges()])
    });
    let ok = got.len() == 32 && columns_equal(&got, &REF_M_A) == 32;
    r.line("flat-shape-M_A", ok, format!("{}/32 columns equal", columns_equal(&got, &REF_M_A)), t, None);
}

fn replay_md_me(r: &mut Report) {
    let ((d, e, e_quarters_ok), t) = timed(|| {
        let s = canonical_structure();
        let (g, edges) = rl1_graph(&s);
        let mut at = g.node_by_label("M_A").unwrap();
        let mut reached = HashMap::new();
        for &e in &edges {
            let p = edge_path(&s, &g, e, at).unwrap();
            at = g.edges[e].other(at);
            let q = p.end().lattice_quarters().unwrap();
            reached.entry(g.nodes[at].label.clone().unwrap()).or_insert(q);
        }
        let d = lattice_centers(&s, &reached["M_D"]);
        let e = lattice_centers(&s, &reached["M_E"]);
        (d, e, reached["M_E"] == landmark("M_E").unwrap())
    });
    let nd = columns_equal(&d, &REF_M_D);
    let ne = columns_equal(&e, &REF_M_E);
    let ok = nd == 32 && REF_M_E.len() == 32 && ne == 32 && e_quarters_ok;
    r.line(
        "replay-M_D-M_E",
        ok,
        format!("M_D {nd}/32 columns; M_E {ne}/{} reference columns (the reference has {} of 32)", REF_M_E.len(), REF_M_E.len()),
        t,
        Some(Duration::from_secs(30)),
    );
}

fn dof_table(r: &mut Report) {
    let (got, t) = timed(|| {
        let tol = Tolerances { rel_sv: REL_SV, ..Tolerances::default() };
        [4u8, 6, 8].map(|n| {
            let s = ring(n);
            dof_analysis_with(&s, &FoldState::flat(s.n_hinges()), &tol).unwrap().null_dim
        })
    });
    r.line("dof-table-4-6-8", got == [2, 3, 5], format!("null_dim {got:?}"), t, Some(Duration::from_secs(5)));
}

fn transition_dof(r: &mut Report) {
    let (got, t) = timed(|| {
        let s = canonical_structure();
        let route = rl1_route();
        let idx = |l: &str| route.iter().position(|x| x.label == l).unwrap();
        let segments = [(idx("M_D"), idx("M_E")), (idx("M_E"), idx("M_F")), (idx("M_F"), route.len() - 1)];
        segments.map(|(a, b)| {
            let mut dof = 0;
            let mut joints = BTreeSet::new();
            for w in route[a..=b].windows(2) {
                let m = connect(&s, &w[0].quarters, &w[1].quarters, &MoveOptions::default()).expect("segment edge");
                dof = dof.max(m.dof());
                joints.extend(m.active().iter().copied());
            }
            (dof, joints.len())
        })
    });
    let ok = got == [(2, 16), (2, 8), (1, 24)];
    r.line("transition-dof-D-E-F-A", ok, format!("(path dof, rotated joints) {got:?}"), t, None);
}

fn brute_force(r: &mut Report) {
    let (res, t) = timed(|| {
        let mut out = Vec::new();
        for (name, d) in [("uniform", DesignSpec::uniform(&[8], 1).unwrap()), ("symmetric", symmetric_8r_design())] {
            let s = build_structure(&d).unwrap();
            // exhaustive lattice states that close and do not overlap, one per shape
            let mut states: Vec<(Vec<i64>, Vec<V3>)> = Vec::new();
            let mut seen = BTreeSet::new();
            for code in 0..4usize.pow(8) {
                let q: Vec<i64> = (0..8).map(|i| ((code >> (2 * i)) & 3) as i64).collect();
                let Some(c) = oracle_centers(&s, &q) else { continue };
                if c.iter().collect::<BTreeSet<_>>().len() != c.len() {
                    continue;
                }
                if seen.insert(shape_id(&c)) {
                    states.push((q, c));
                }
            }
            // reachable part: validated continuations between quarter-turn neighbours
            let flat = states.iter().position(|(q, _)| q.iter().all(|&x| x == 2)).unwrap();
            let mut comp = vec![false; states.len()];
            comp[flat] = true;
            let mut queue = VecDeque::from([flat]);
            while let Some(i) = queue.pop_front() {
                for j in 0..states.len() {
                    let near = states[i].0.iter().zip(&states[j].0).all(|(a, b)| (a - b).rem_euclid(4) != 2);
                    if comp[j] || !near || changed(&states[i].0, &states[j].0).is_empty() {
                        continue;
                    }
                    if connect(&s, &states[i].0, &states[j].0, &MoveOptions::default()).is_some() {
                        comp[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            let oracle: BTreeSet<Vec<V3>> = states.iter().zip(&comp).filter(|(_, &c)| c).map(|((_, c), _)| shape_id(c)).collect();
            let g = build_transition_graph(&s, &GraphLimits::default(), &MoveOptions::default()).unwrap();
            let engine: BTreeSet<Vec<V3>> = g.nodes.iter().map(|n| shape_id(&oracle_centers(&s, &n.quarters).unwrap())).collect();
            out.push((name, states.len(), oracle.len(), engine.len(), oracle == engine));
        }
        out
    });
    let ok = res.iter().all(|x| x.4);
    let detail = res.iter().map(|(n, all, o, e, _)| format!("{n}: {all} closed shapes, {o} reachable, graph {e}")).collect::<Vec<_>>().join("; ");
    r.line("brute-force-8r-node-set", ok, detail, t, Some(Duration::from_secs(60)));
}

fn random_states(s: &Structure, rng: &mut ChaCha8Rng, n: usize) -> Vec<FoldState> {
    let mut out = Vec::new();
    let mut st = FoldState::flat(s.n_hinges());
    let tol = Tolerances { rel_sv: REL_SV, ..Tolerances::default() };
    let mut tries = 0;
    while out.len() < n && tries < 50 * n {
        tries += 1;
        let basis = dof_analysis_with(s, &st, &tol).unwrap().null_basis;
        if basis.ncols() == 0 {
            st = FoldState::flat(s.n_hinges());
            continue;
        }
        let w: Vec<f64> = (0..basis.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = &basis * nalgebra::DVector::from_vec(w);
        let step = rng.gen_range(0.05..0.3) / v.amax().max(1e-12);
        let mut order: Vec<usize> = (0..s.n_hinges()).collect();
        order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
        // drive few hinges: the null space at a singular state can exceed the real mobility
        let k = rng.gen_range(1..=basis.ncols().min(2));
        let driven: Vec<(usize, f64)> = order[..k].iter().map(|&h| (h, st.gamma[h] + step * v[h])).collect();
        match solve_closure(s, &driven, &st) {
            Ok(next) if residual_norm(s, &next) < 1e-9 => {
                st = next;
                out.push(st.clone());
            }
            _ => st = FoldState::flat(s.n_hinges()),
        }
    }
    out
}

fn jacobian_check(r: &mut Report) {
    let ((worst, count), t) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for s in [ring(6), ring(8), canonical_structure()] {
            for st in random_states(&s, &mut rng, FD_STATES_PER_DESIGN) {
                count += 1;
                let j = jacobian(&s, &st);
                let scale = j.amax().max(1.0);
                for h in 0..s.n_hinges() {
                    let (mut p, mut m) = (st.clone(), st.clone());
                    p.gamma[h] += FD_STEP;
                    m.gamma[h] -= FD_STEP;
                    let fd = (residual_vector(&s, &p) - residual_vector(&s, &m)) / (2.0 * FD_STEP);
                    worst = worst.max((fd - j.column(h)).amax() / scale);
                }
            }
        }
        (worst, count)
    });
    let ok = count == 3 * FD_STATES_PER_DESIGN && worst < FD_MAX_REL;
    r.line("jacobian-finite-difference", ok, format!("{count} states, max relative error {worst:.2e} (limit {FD_MAX_REL:e})"), t, None);
}

fn scaling(r: &mut Report) {
    let ((bif, paths, r2), t) = timed(|| {
        let s = canonical_structure();
        let deepest = *SCALING_DEPTHS.end();
        let full = canonical_graph(&GraphLimits { max_depth: deepest, ..GraphLimits::default() }, &MoveOptions::default()).unwrap();
        let mut bif = Vec::new();
        let mut paths = Vec::new();
        for d in SCALING_DEPTHS {
            let g = if d == deepest { full.clone() } else { full.restrict_depth(&s, d).unwrap() };
            let m = graph_metrics(&g, SCALING_PATH_BOUND);
            bif.push(m.bifurcation_count as f64);
            paths.push(m.path_count as f64);
        }
        let r2 = r_squared(&bif, &paths);
        (bif, paths, r2)
    });
    r.line(
        "scaling-paths-vs-bifurcations",
        r2 > SCALING_MIN_R2,
        format!("bifurcations {bif:?}, paths {paths:?}, R^2 {r2:.3}"),
        t,
        None,
    );
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn closed_form(r: &mut Report) {
    let ((at90, at150), t) = timed(|| (closed_form_8r(90.0).unwrap(), closed_form_8r(150.0).unwrap()));
    let ok = (at90.solved_m15 - 90.0).abs() < CLOSED_FORM_TOL_DEG
        && (at90.solved_m37 - 90.0).abs() < CLOSED_FORM_TOL_DEG
        && at150.discrepancy.is_finite();
    r.line(
        "closed-form-8r-report",
        ok,
        format!(
            "90: solver {:.4}/{:.4}; 150: formula {:.2}/{:.2}, solver {:.2}/{:.2}, discrepancy {:.2} deg",
            at90.solved_m15, at90.solved_m37, at150.formula_m15, at150.formula_m37, at150.solved_m15, at150.solved_m37, at150.discrepancy
        ),
        t,
        None,
    );
}

fn inverse_design(r: &mut Report) {
    let ((exact, moved), t) = timed(|| {
        let s = canonical_structure();
        let (g, _) = rl1_graph(&s);
        let me = g.node_by_label("M_E").unwrap();
        let db = ShapeDatabase::from_graphs(vec![(metamorph::canonical::canonical_design(), g)]);
        let cells = lattice_centers(&s, &landmark("M_E").unwrap());
        let best = |cells: &[V3]| match_shape(&db, &target_from_cells(cells).unwrap(), 1, &MatchOptions::default()).unwrap().remove(0);
        let exact = best(&cells);
        let occupied: BTreeSet<V3> = cells.iter().copied().collect();
        let mut moved = cells.clone();
        let i = (0..cells.len()).find(|&i| !occupied.contains(&[cells[i][0], cells[i][1], cells[i][2] + 2])).unwrap();
        moved[i][2] += 2;
        let perturbed = best(&moved);
        ((exact.node == me, exact.errf, exact.exact_position), (perturbed.node == me, perturbed.errf))
    });
    let ok = exact.0 && exact.1 == 0.0 && exact.2 && moved.0 && moved.1 > 0.0;
    r.line(
        "inverse-design-ME",
        ok,
        format!("exact: M_E {} errf {} exact_position {}; one voxel moved: M_E {} errf {:.4}", exact.0, exact.1, exact.2, moved.0, moved.1),
        t,
        Some(Duration::from_secs(30)),
    );
}

fn actuation(r: &mut Report) {
    let (res, t) = timed(|| {
        let mut level1 = Vec::new();
        for d in [DesignSpec::uniform(&[8], 1).unwrap(), symmetric_8r_design()] {
            let s = build_structure(&d).unwrap();
            let g = build_transition_graph(&s, &GraphLimits::default(), &MoveOptions::default()).unwrap();
            let steps: Vec<PathStep> = g.edges.iter().map(|e| PathStep::from_edge(&g, e.id, e.a)).collect();
            level1.push(assign_actuators(&s, &steps, None).unwrap().actuated.len());
        }
        let s = canonical_structure();
        let (g, edges) = rl1_graph(&s);
        let steps = route_steps(&g, g.node_by_label("M_A").unwrap(), &edges);
        let a = assign_actuators(&s, &steps, None).unwrap();
        let sched = compile_schedule(&s, &driven_steps(&steps, &a), OMEGA_DEG_S).unwrap();
        let text = export_commands(&sched, &a).unwrap();
        let back = parse_commands(&text, &a).unwrap();
        let round_trip = back == sched.keyframes && export_commands(&metamorph::actuation::MotorSchedule { keyframes: back, ..sched.clone() }, &a).unwrap() == text;
        (level1, a.actuated.len(), *sched.concurrency.iter().max().unwrap(), round_trip)
    });
    let (level1, level2, conc, rt) = res;
    let ok = level1.iter().all(|&n| n <= MAX_LEVEL1_ACTUATORS) && level2 <= MAX_LEVEL2_ACTUATORS && conc <= MAX_CONCURRENT && rt;
    r.line(
        "actuation-counts",
        ok,
        format!("8R graphs {level1:?} (<= {MAX_LEVEL1_ACTUATORS}), RL-1 {level2} (<= {MAX_LEVEL2_ACTUATORS}), max concurrent {conc} (<= {MAX_CONCURRENT}), round trip {rt}"),
        t,
        None,
    );
}

fn physical_scope(r: &mut Report) {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap_or_default();
    let ok = readme.contains("Not reproduced");
    r.line("physical-results-out-of-scope", ok, "load, speed, deployment time and volume ratio are documented as not reproduced".into(), Duration::ZERO, None);
}

fn main() {
    let mut r = Report { failed: 0, unexpected: 0 };
    cube20_turn(&mut r);
    flat_shape(&mut r);
    replay_md_me(&mut r);
    dof_table(&mut r);
    transition_dof(&mut r);
    brute_force(&mut r);
    jacobian_check(&mut r);
    scaling(&mut r);
    closed_form(&mut r);
    inverse_design(&mut r);
    actuation(&mut r);
    physical_scope(&mut r);
    println!("{} failed ({} known unattainable)", r.failed, r.failed - r.unexpected);
    if r.unexpected > 0 {
        std::process::exit(1);
    }
}
