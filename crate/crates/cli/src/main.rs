use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use metamorph::actuation::{assign_actuators, compile_schedule, driven_steps, export_commands, route_steps};
use metamorph::canonical::{canonical_design, canonical_graph};
use metamorph::graph::{build_transition_graph, find_path, graph_metrics, path_nodes, GraphLimits, Objective, TransitionGraph};
use metamorph::invdesign::{build_database, match_shape, target_from_cells, voxelize_mesh, MatchOptions, TargetShape};
use metamorph::io::{load_database, load_graph, save_database, save_graph, schedule_from_json, schedule_to_json, state_doc_unchecked, state_from_json};
use metamorph::kinematics::{residual_norm, FoldState};
use metamorph::model::{build_structure, enumerate_designs, DesignSpec, Vary};
use metamorph::moves::MoveOptions;
use metamorph::shape::{mesh_obj, parse_obj};
use metamorph::{kinematics, Error};

mod serve;

#[derive(Parser)]
#[command(name = "metamorph", version, about = "Cube-based origami metastructures: kinematics, transition graphs, inverse design, actuation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Global {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Closure residual accepted for a placed state.
    #[arg(long, global = true, env = "METAMORPH_TOL", default_value_t = 1e-6)]
    tol: f64,
    /// Graph search limits, e.g. `nodes=5000,depth=3`.
    #[arg(long, global = true, default_value = "")]
    limits: String,
    /// Seed for sampled output.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Design(DesignCmd),
    #[command(subcommand)]
    Graph(GraphCmd),
    #[command(subcommand)]
    Shape(ShapeCmd),
    #[command(subcommand)]
    Invdesign(InvCmd),
    #[command(subcommand)]
    Actuate(ActCmd),
    /// Serve the steering protocol over websockets.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Subcommand)]
enum DesignCmd {
    /// Check a design file (or `canonical`) and print its size.
    Validate { design: String },
    /// List design variants of a base design.
    Enumerate {
        design: String,
        #[arg(long)]
        placements: bool,
        #[arg(long)]
        flips: bool,
        /// Drop variants equal up to relabelling.
        #[arg(long)]
        dedupe: bool,
        /// Print a seeded random sample of this size.
        #[arg(long)]
        sample: Option<usize>,
        /// Stop after this many variants.
        #[arg(long, default_value_t = 10_000)]
        max: usize,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Build the transition graph of a design.
    Build {
        design: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Allow moves that contain smaller moves.
        #[arg(long)]
        full: bool,
    },
    Metrics {
        graph: PathBuf,
        /// Longest simple path counted.
        #[arg(long, default_value_t = 6)]
        bound: usize,
    },
    /// Shortest route between two nodes (labels or keys).
    Path {
        graph: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, value_enum, default_value_t = Obj::Steps)]
        objective: Obj,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Obj {
    Steps,
    Dof,
}

#[derive(Args)]
struct StateArg {
    /// Comma-separated hinge angles in degrees.
    #[arg(long, conflicts_with_all = ["quarters", "state"])]
    degrees: Option<String>,
    /// Comma-separated hinge angles in quarter turns (2 = flat).
    #[arg(long, conflicts_with = "state")]
    quarters: Option<String>,
    /// State file.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ShapeCmd {
    /// Place a state and report its closure residual and cube centres.
    Place {
        design: String,
        #[command(flatten)]
        st: StateArg,
    },
    /// Write a state as a triangle mesh.
    Export {
        design: String,
        #[command(flatten)]
        st: StateArg,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum InvCmd {
    BuildDb {
        #[arg(required = true)]
        designs: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Rank reachable shapes against a target (voxel JSON list or OBJ mesh).
    Match {
        db: PathBuf,
        target: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
}

#[derive(Args)]
struct RouteArg {
    design: String,
    graph: PathBuf,
    /// Comma-separated node labels or keys to visit in order.
    #[arg(long, conflicts_with = "loop_")]
    route: Option<String>,
    /// A labelled loop of the graph.
    #[arg(long = "loop")]
    loop_: Option<String>,
}

#[derive(Subcommand)]
enum ActCmd {
    /// Smallest actuated hinge set covering a route.
    Assign {
        #[command(flatten)]
        r: RouteArg,
    },
    /// Timed motor schedule for a route.
    Compile {
        #[command(flatten)]
        r: RouteArg,
        /// Degrees per second.
        #[arg(long, default_value_t = 30.0)]
        omega: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Controller command stream of a schedule file.
    Export { schedule: PathBuf },
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Engine(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Engine(e.to_string())
    }
}

type Out = std::result::Result<(), Fail>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Engine(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_design(arg: &str) -> std::result::Result<DesignSpec, Fail> {
    if arg == "canonical" {
        return Ok(canonical_design());
    }
    let text = std::fs::read_to_string(arg)?;
    Ok(DesignSpec::from_json(&text)?)
}

fn is_canonical(d: &DesignSpec) -> bool {
    *d == canonical_design()
}

fn limits(g: &Global) -> std::result::Result<GraphLimits, Fail> {
    let mut l = GraphLimits::default();
    for part in g.limits.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Fail::Usage(format!("bad limit `{part}`")))?;
        let n = || v.parse::<usize>().map_err(|_| Fail::Usage(format!("bad limit value `{v}`")));
        match k {
            "nodes" => l.max_nodes = n()?,
            "depth" => l.max_depth = n()?,
            "rotations" => l.rotations = v == "true" || v == "1",
            _ => return Err(Fail::Usage(format!("unknown limit `{k}`"))),
        }
    }
    Ok(l)
}

fn csv<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, Fail> {
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|_| Fail::Usage(format!("bad number `{x}`")))).collect()
}

fn read_state(a: &StateArg, n: usize) -> std::result::Result<FoldState, Fail> {
    let st = if let Some(d) = &a.degrees {
        FoldState::from_degrees(&csv::<f64>(d)?)
    } else if let Some(q) = &a.quarters {
        FoldState::from_quarters(&csv::<i64>(q)?)
    } else if let Some(p) = &a.state {
        state_from_json(&std::fs::read_to_string(p)?)?
    } else {
        FoldState::flat(n)
    };
    if st.len() != n {
        return Err(Error::StateLength { got: st.len(), want: n }.into());
    }
    Ok(st)
}

fn print(g: &Global, value: serde_json::Value, text: impl FnOnce() -> String) {
    if g.json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn resolve_route(g: &TransitionGraph, r: &RouteArg) -> std::result::Result<(usize, Vec<usize>), Fail> {
    if let Some(name) = &r.loop_ {
        let l = g.loops.iter().find(|l| l.label.as_deref() == Some(name.as_str())).ok_or_else(|| Fail::Usage(format!("no loop `{name}`")))?;
        return Ok((l.nodes[0], l.edges.clone()));
    }
    let route = r.route.as_deref().ok_or_else(|| Fail::Usage("give --route or --loop".into()))?;
    let stops: Vec<usize> = route.split(',').map(|n| g.resolve(n.trim())).collect::<metamorph::Result<_>>()?;
    if stops.len() < 2 {
        return Err(Fail::Usage("a route needs two stops".into()));
    }
    let mut edges = Vec::new();
    for w in stops.windows(2) {
        edges.extend(find_path(g, w[0], w[1], Objective::FewestSteps)?);
    }
    Ok((stops[0], edges))
}

fn run(cli: Cli) -> Out {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Design(DesignCmd::Validate { design }) => {
            let d = load_design(&design)?;
            let s = build_structure(&d)?;
            print(g, json!({"cubes": s.n_cubes(), "hinges": s.n_hinges(), "loops": s.loops.len(), "levels": s.levels()}), || {
                format!("{} cubes, {} hinges", s.n_cubes(), s.n_hinges())
            });
        }
        Cmd::Design(DesignCmd::Enumerate { design, placements, flips, dedupe, sample, max }) => {
            let d = load_design(&design)?;
            let mut all: Vec<DesignSpec> = enumerate_designs(&d, Vary { placements, flips }, dedupe).take(max).collect();
            if let Some(k) = sample {
                all.shuffle(&mut ChaCha8Rng::seed_from_u64(g.seed));
                all.truncate(k);
            }
            if g.json {
                let docs: Vec<serde_json::Value> = all.iter().map(|d| serde_json::from_str(&d.to_json()).unwrap()).collect();
                println!("{}", serde_json::Value::Array(docs));
            } else {
                for d in &all {
                    let codes: Vec<String> = d.placements().iter().map(u8::to_string).collect();
                    println!("{}", codes.join(""));
                }
                eprintln!("{} designs", all.len());
            }
        }
        Cmd::Graph(GraphCmd::Build { design, out, full }) => {
            let d = load_design(&design)?;
            let l = limits(g)?;
            let opts = MoveOptions { primitive: !full, ..MoveOptions::default() };
            let graph = if is_canonical(&d) && !l.rotations {
                canonical_graph(&l, &opts)?
            } else {
                build_transition_graph(&build_structure(&d)?, &l, &opts)?
            };
            save_graph(&graph, &out)?;
            print(g, json!({"nodes": graph.nodes.len(), "edges": graph.edges.len(), "loops": graph.loops.len(), "truncated": graph.truncated}), || {
                format!("{} nodes, {} edges{}", graph.nodes.len(), graph.edges.len(), if graph.truncated { " (truncated)" } else { "" })
            });
        }
        Cmd::Graph(GraphCmd::Metrics { graph, bound }) => {
            let graph = load_graph(&graph)?;
            let m = graph_metrics(&graph, bound);
            print(g, serde_json::to_value(&m).unwrap(), || {
                format!(
                    "nodes {}\nedges {}\nbifurcations {}\npaths (<= {} edges) {}\nisl nodes {}",
                    m.node_count, m.edge_count, m.bifurcation_count, m.path_bound, m.path_count, m.isl_count
                )
            });
        }
        Cmd::Graph(GraphCmd::Path { graph, from, to, objective }) => {
            let graph = load_graph(&graph)?;
            let (a, b) = (graph.resolve(&from)?, graph.resolve(&to)?);
            let obj = match objective {
                Obj::Steps => Objective::FewestSteps,
                Obj::Dof => Objective::FewestActiveDof,
            };
            let edges = find_path(&graph, a, b, obj)?;
            let nodes = path_nodes(&graph, a, &edges);
            let name = |n: usize| graph.nodes[n].label.clone().unwrap_or_else(|| graph.nodes[n].key.to_hex()[..12].to_string());
            let loops: Vec<&str> =
                graph.loops.iter().filter(|l| l.label.is_some() && edges.iter().any(|e| l.edges.contains(e))).map(|l| l.label.as_deref().unwrap()).collect();
            print(g, json!({"edges": edges, "nodes": nodes, "loops": loops}), || {
                let names: Vec<String> = nodes.iter().map(|&n| name(n)).collect();
                let mut s = format!("{} ({} edges)", names.join(" -> "), edges.len());
                if !loops.is_empty() {
                    s += &format!(" via {}", loops.join(", "));
                }
                s
            });
        }
        Cmd::Shape(ShapeCmd::Place { design, st }) => {
            let s = build_structure(&load_design(&design)?)?;
            let st = read_state(&st, s.n_hinges())?;
            let r = residual_norm(&s, &st);
            if r > g.tol {
                return Err(Error::NotOnManifold(r).into());
            }
            let doc = state_doc_unchecked(&s, &st);
            print(g, serde_json::to_value(&doc).unwrap(), || {
                let m = kinematics::placement_unchecked(&s, &st);
                let mut out = format!("residual {r:.3e}\n");
                for (i, c) in m.centers.iter().enumerate() {
                    out += &format!("{} {:.6} {:.6} {:.6}\n", i + 1, c.x, c.y, c.z);
                }
                out.trim_end().to_string()
            });
        }
        Cmd::Shape(ShapeCmd::Export { design, st, out }) => {
            let s = build_structure(&load_design(&design)?)?;
            let st = read_state(&st, s.n_hinges())?;
            let r = residual_norm(&s, &st);
            if r > g.tol {
                return Err(Error::NotOnManifold(r).into());
            }
            std::fs::write(&out, mesh_obj(&kinematics::placement_unchecked(&s, &st)))?;
            print(g, json!({"written": out}), || format!("wrote {}", out.display()));
        }
        Cmd::Invdesign(InvCmd::BuildDb { designs, out }) => {
            let ds: Vec<DesignSpec> = designs.iter().map(|d| load_design(d)).collect::<std::result::Result<_, _>>()?;
            let db = build_database(&ds, &limits(g)?, &MoveOptions::default())?;
            save_database(&db, &out)?;
            print(g, json!({"designs": db.rows.len(), "entries": db.entry_count()}), || {
                format!("{} designs, {} shapes", db.rows.len(), db.entry_count())
            });
        }
        Cmd::Invdesign(InvCmd::Match { db, target, top_k }) => {
            let db = load_database(&db)?;
            let t = read_target(&target)?;
            let ms = match_shape(&db, &t, top_k, &MatchOptions::default())?;
            print(g, serde_json::to_value(&ms).unwrap(), || {
                ms.iter()
                    .map(|m| format!("design {} node {} errf {:.4}{}", m.design_id, m.node, m.errf, if m.exact_position { " exact" } else { "" }))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Cmd::Actuate(ActCmd::Assign { r }) => {
            let s = build_structure(&load_design(&r.design)?)?;
            let graph = load_graph(&r.graph)?;
            let (from, edges) = resolve_route(&graph, &r)?;
            let a = assign_actuators(&s, &route_steps(&graph, from, &edges), None)?;
            print(g, serde_json::to_value(&a).unwrap(), || format!("{} actuated hinges: {:?}", a.actuated.len(), a.actuated));
        }
        Cmd::Actuate(ActCmd::Compile { r, omega, out }) => {
            let s = build_structure(&load_design(&r.design)?)?;
            let graph = load_graph(&r.graph)?;
            let (from, edges) = resolve_route(&graph, &r)?;
            let steps = route_steps(&graph, from, &edges);
            let a = assign_actuators(&s, &steps, None)?;
            let sched = compile_schedule(&s, &driven_steps(&steps, &a), omega)?;
            std::fs::write(&out, schedule_to_json(&a, &sched))?;
            print(g, json!({"actuated": a.actuated, "keyframes": sched.keyframes.len(), "duration_ms": sched.duration_ms}), || {
                format!("{} motors, {} keyframes, {} ms", a.actuated.len(), sched.keyframes.len(), sched.duration_ms)
            });
        }
        Cmd::Actuate(ActCmd::Export { schedule }) => {
            let (a, sched) = schedule_from_json(&std::fs::read_to_string(&schedule)?)?;
            println!("{}", export_commands(&sched, &a)?);
        }
        Cmd::Serve { port, host } => serve::run(&host, port)?,
    }
    Ok(())
}

fn read_target(p: &Path) -> std::result::Result<TargetShape, Fail> {
    let text = std::fs::read_to_string(p)?;
    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
        let (v, t) = parse_obj(&text)?;
        return Ok(voxelize_mesh(&v, &t)?);
    }
    let cells: Vec<[i64; 3]> = serde_json::from_str(&text).map_err(|e| Fail::Usage(format!("target: {e}")))?;
    Ok(target_from_cells(&cells)?)
}
