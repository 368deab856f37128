use metamorph::actuation::{assign_actuators, compile_schedule, driven_steps, route_steps};
use metamorph::graph::{build_transition_graph, find_path, GraphLimits, Objective};
use metamorph::invdesign::{build_database, match_shape, plan_reconfiguration, target_from_cells, MatchOptions};
use metamorph::io::{graph_from_json, graph_to_json, load_database, save_database};
use metamorph::model::{build_structure, DesignSpec};
use metamorph::moves::MoveOptions;
use metamorph::session::{Envelope, Request, Response, Session};

fn ring8() -> DesignSpec {
    DesignSpec::uniform(&[8], 1).unwrap()
}

#[test]
fn design_to_schedule() {
    let d = ring8();
    let s = build_structure(&d).unwrap();
    let g = build_transition_graph(&s, &GraphLimits::default(), &MoveOptions::default()).unwrap();
    let g = graph_from_json(&graph_to_json(&g)).unwrap();
    let far = (0..g.nodes.len()).max_by_key(|&n| (g.nodes[n].depth, n)).unwrap();
    let edges = find_path(&g, 0, far, Objective::FewestSteps).unwrap();
    assert_eq!(edges.len(), g.nodes[far].depth);
    let steps = route_steps(&g, 0, &edges);
    let a = assign_actuators(&s, &steps, None).unwrap();
    let sched = compile_schedule(&s, &driven_steps(&steps, &a), 45.0).unwrap();
    assert_eq!(sched.concurrency.len(), steps.len());
    assert!(sched.duration_ms > 0);
}

#[test]
fn database_on_disk_matches_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    let db = build_database(&[ring8()], &GraphLimits::default(), &MoveOptions::default()).unwrap();
    save_database(&db, dir.path()).unwrap();
    let db = load_database(dir.path()).unwrap();
    let row = &db.rows[0];
    let target = row.graph.nodes.last().unwrap();
    let t = target_from_cells(&target.centers.iter().map(|c| [c[0] + 4, c[1] - 2, c[2]]).collect::<Vec<_>>()).unwrap();
    let best = match_shape(&db, &t, 1, &MatchOptions::default()).unwrap().remove(0);
    assert_eq!(best.errf, 0.0);
    let plan = plan_reconfiguration(&db, &best).unwrap();
    assert_eq!(plan.steps.len(), row.graph.nodes[best.node].depth);
}

fn replay() -> (String, Vec<f64>) {
    let mut s = Session::new(1);
    let msgs = [
        Request::LoadDesign { design: Some(ring8()) },
        Request::ListBranches {},
        Request::ApplyBranch { branch: 0 },
        Request::ListBranches {},
        Request::ApplyBranch { branch: 1 },
    ];
    let mut last = None;
    for (i, m) in msgs.into_iter().enumerate() {
        for out in s.handle(&Envelope::new(i as u64 + 1, m)) {
            assert!(!matches!(out.body, Response::Error { .. }), "{:?}", out.body);
            if let Response::State(p) = out.body {
                last = Some(p);
            }
        }
    }
    let p = last.unwrap();
    let flat: Vec<f64> = p.centers.iter().flat_map(|c| c.iter().map(|&x| x as f64)).collect();
    (p.node_key, flat)
}

#[test]
fn session_replay_is_deterministic() {
    assert_eq!(replay(), replay());
}
