use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metamorph"));
    c.env_remove("METAMORPH_TOL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn canonical_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../designs/canonical.json")
}

fn bent_state() -> String {
    let mut d = vec!["180"; 36];
    d[0] = "170";
    d.join(",")
}

#[test]
fn validate_reference_design() {
    let o = run(&["design", "validate", canonical_file().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "32 cubes, 36 hinges");
    let o = run(&["--json", "design", "validate", "canonical"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["hinges"], 36);
}

#[test]
fn exit_codes() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["--limits", "depth", "graph", "build", "canonical", "-o", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["shape", "place", "canonical", "--degrees", &bent_state()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn tolerance_precedence() {
    let bent = bent_state();
    let args = ["shape", "place", "canonical", "--degrees", bent.as_str()];
    assert_eq!(bin().args(args).env("METAMORPH_TOL", "10").output().unwrap().status.code(), Some(0));
    let mut with_flag = vec!["--tol", "1e-9"];
    with_flag.extend(args);
    assert_eq!(bin().args(&with_flag).env("METAMORPH_TOL", "10").output().unwrap().status.code(), Some(2));
    let mut loose = vec!["--tol", "10"];
    loose.extend(args);
    assert_eq!(run(&loose).status.code(), Some(0));
}

#[test]
fn rl2_route_and_json_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let g = g.to_str().unwrap();
    let o = run(&["--limits", "depth=2", "--json", "graph", "build", "canonical", "-o", g]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(g).unwrap()).unwrap();
    assert_eq!(doc["schema"], "metamorph-graph/1");

    let o = run(&["--json", "graph", "path", g, "--from", "M_6", "--to", "M_10"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["edges"].as_array().unwrap().len(), 1);
    assert_eq!(v["loops"], serde_json::json!(["RL-2"]));

    let o = run(&["--json", "shape", "place", "canonical"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "metamorph-state/1");

    let s = dir.path().join("s.json");
    let o = run(&["actuate", "compile", "canonical", g, "--loop", "RL-1", "-o", s.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&s).unwrap()).unwrap();
    assert_eq!(doc["schema"], "metamorph-schedule/1");
    let o = run(&["actuate", "export", s.to_str().unwrap()]);
    assert!(stdout(&o).trim_end().ends_with("RUN"));
}

#[test]
fn database_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    let o = run(&["--limits", "depth=1", "invdesign", "build-db", "canonical", "-o", db.to_str().unwrap()]);
    assert!(o.status.success());
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(db.join("index.json")).unwrap()).unwrap();
    assert_eq!(index["schema"], "metamorph-db/1");
    let o = run(&["--json", "shape", "place", "canonical"]);
    let state: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, state["centers"].to_string()).unwrap();
    let o = run(&["--json", "invdesign", "match", db.to_str().unwrap(), t.to_str().unwrap(), "--top-k", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["errf"], 0.0);
    assert_eq!(v[0]["exact_position"], true);
}

#[test]
fn serve_speaks_the_protocol() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin().args(["serve", "--port", &port.to_string()]).stderr(std::process::Stdio::null()).spawn().unwrap();
    let url = format!("ws://127.0.0.1:{port}");
    let mut ws = None;
    for _ in 0..100 {
        if let Ok((s, _)) = tungstenite::connect(&url) {
            ws = Some(s);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    let mut ws = ws.expect("server accepts connections");
    let mut ask = |text: &str| {
        ws.send(tungstenite::Message::text(text)).unwrap();
        let reply = ws.read().unwrap();
        serde_json::from_str::<serde_json::Value>(reply.to_text().unwrap()).unwrap()
    };
    let r = ask(r#"{"schema":"metamorph-proto/1","seq":1,"kind":"hello","payload":{}}"#);
    assert_eq!(r["kind"], "hello");
    assert_eq!(r["seq"], 1);
    let r = ask(r#"{"schema":"metamorph-proto/1","seq":2,"kind":"undo","payload":{}}"#);
    assert_eq!(r["kind"], "error");
    let r = ask(r#"{"schema":"metamorph-proto/1","seq":3,"kind":"load_design","payload":{}}"#);
    assert_eq!(r["kind"], "state");
    assert_eq!(r["payload"]["label"], "M_A");
    child.kill().unwrap();
    let _ = child.wait();
}
