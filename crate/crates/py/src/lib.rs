//! Python module `metamorph_py`. Designs, graphs and states cross the boundary as JSON text in
//! the engine's own schemas.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use metamorph::actuation::{assign_actuators, route_steps};
use metamorph::canonical::{canonical_design, canonical_graph};
use metamorph::graph::{build_transition_graph, find_path, graph_metrics, GraphLimits, Objective};
use metamorph::invdesign::{build_database, match_shape, target_from_cells, MatchOptions};
use metamorph::io::{graph_from_json, graph_to_json, state_to_json};
use metamorph::kinematics::{dof_analysis, placement_unchecked, residual_norm, FoldState};
use metamorph::model::{build_structure, DesignSpec, Structure};
use metamorph::moves::MoveOptions;

fn err(e: metamorph::Error) -> PyErr {
    match e {
        metamorph::Error::Parse(_) | metamorph::Error::StateLength { .. } | metamorph::Error::UnknownKey(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load_design(json: Option<&str>) -> PyResult<DesignSpec> {
    match json {
        None => Ok(canonical_design()),
        Some(j) => DesignSpec::from_json(j).map_err(err),
    }
}

fn structure(json: Option<&str>) -> PyResult<Structure> {
    build_structure(&load_design(json)?).map_err(err)
}

fn state(s: &Structure, degrees: Option<Vec<f64>>) -> PyResult<FoldState> {
    let st = degrees.map(|d| FoldState::from_degrees(&d)).unwrap_or_else(|| FoldState::flat(s.n_hinges()));
    if st.len() != s.n_hinges() {
        return Err(PyValueError::new_err(format!("expected {} angles, got {}", s.n_hinges(), st.len())));
    }
    Ok(st)
}

/// Design document of the reference two-level design.
#[pyfunction]
fn canonical_design_json() -> String {
    canonical_design().to_json()
}

/// Design document with every hinge of the given edge code, e.g. `uniform_design_json([8], 1)`.
#[pyfunction]
fn uniform_design_json(motifs: Vec<u8>, code: u8) -> PyResult<String> {
    DesignSpec::uniform(&motifs, code).map(|d| d.to_json()).map_err(err)
}

/// `(cubes, hinges)` of a design; the reference design when omitted.
#[pyfunction]
#[pyo3(signature = (design=None))]
fn validate_design(design: Option<&str>) -> PyResult<(usize, usize)> {
    let s = structure(design)?;
    Ok((s.n_cubes(), s.n_hinges()))
}

/// Cube centres of a state and its closure residual.
#[pyfunction]
#[pyo3(signature = (degrees=None, design=None))]
fn place(degrees: Option<Vec<f64>>, design: Option<&str>) -> PyResult<(Vec<[f64; 3]>, f64)> {
    let s = structure(design)?;
    let st = state(&s, degrees)?;
    let m = placement_unchecked(&s, &st);
    Ok((m.centers.iter().map(|c| [c.x, c.y, c.z]).collect(), residual_norm(&s, &st)))
}

/// State document of a closed state.
#[pyfunction]
#[pyo3(signature = (degrees=None, design=None))]
fn state_json(degrees: Option<Vec<f64>>, design: Option<&str>) -> PyResult<String> {
    let s = structure(design)?;
    let st = state(&s, degrees)?;
    state_to_json(&s, &st).map_err(err)
}

/// Instantaneous degrees of freedom of a closed state.
#[pyfunction]
#[pyo3(signature = (degrees=None, design=None))]
fn dof(degrees: Option<Vec<f64>>, design: Option<&str>) -> PyResult<usize> {
    let s = structure(design)?;
    let st = state(&s, degrees)?;
    dof_analysis(&s, &st).map(|r| r.null_dim).map_err(err)
}

/// Graph document of the transition graph within `max_depth` moves of flat.
#[pyfunction]
#[pyo3(signature = (max_depth, design=None, max_nodes=10_000))]
fn build_graph(py: Python<'_>, max_depth: usize, design: Option<&str>, max_nodes: usize) -> PyResult<String> {
    let d = design.map(DesignSpec::from_json).transpose().map_err(err)?;
    let limits = GraphLimits { max_nodes, max_depth, ..GraphLimits::default() };
    let opts = MoveOptions::default();
    let g = py.allow_threads(|| match &d {
        None => canonical_graph(&limits, &opts),
        Some(d) => build_transition_graph(&build_structure(d)?, &limits, &opts),
    });
    Ok(graph_to_json(&g.map_err(err)?))
}

/// Edge ids of a fewest-step route between two nodes given by label or key.
#[pyfunction]
fn shortest_path(graph: &str, from: &str, to: &str) -> PyResult<Vec<usize>> {
    let g = graph_from_json(graph).map_err(err)?;
    let (a, b) = (g.resolve(from).map_err(err)?, g.resolve(to).map_err(err)?);
    find_path(&g, a, b, Objective::FewestSteps).map_err(err)
}

/// Graph metrics as a JSON object.
#[pyfunction]
#[pyo3(signature = (graph, path_bound=6))]
fn metrics(graph: &str, path_bound: usize) -> PyResult<String> {
    let g = graph_from_json(graph).map_err(err)?;
    Ok(serde_json::to_string(&graph_metrics(&g, path_bound)).expect("metrics serialize"))
}

/// Actuated hinges covering a labelled loop of the graph.
#[pyfunction]
#[pyo3(signature = (graph, loop_label, design=None))]
fn actuators(graph: &str, loop_label: &str, design: Option<&str>) -> PyResult<Vec<usize>> {
    let s = structure(design)?;
    let g = graph_from_json(graph).map_err(err)?;
    let l = g
        .loops
        .iter()
        .find(|l| l.label.as_deref() == Some(loop_label))
        .ok_or_else(|| PyValueError::new_err(format!("no loop {loop_label}")))?;
    assign_actuators(&s, &route_steps(&g, l.nodes[0], &l.edges), None).map(|a| a.actuated).map_err(err)
}

/// Best matches of a voxel target among shapes reachable within `max_depth`, as JSON.
#[pyfunction]
#[pyo3(signature = (voxels, max_depth, top_k=5, design=None))]
fn match_target(voxels: Vec<[i64; 3]>, max_depth: usize, top_k: usize, design: Option<&str>) -> PyResult<String> {
    let d = load_design(design)?;
    let limits = GraphLimits { max_depth, ..GraphLimits::default() };
    let db = build_database(&[d], &limits, &MoveOptions::default()).map_err(err)?;
    let t = target_from_cells(&voxels).map_err(err)?;
    let ms = match_shape(&db, &t, top_k, &MatchOptions::default()).map_err(err)?;
    Ok(serde_json::to_string(&ms).expect("matches serialize"))
}

#[pymodule]
pub fn metamorph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(canonical_design_json, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_design_json, m)?)?;
    m.add_function(wrap_pyfunction!(validate_design, m)?)?;
    m.add_function(wrap_pyfunction!(place, m)?)?;
    m.add_function(wrap_pyfunction!(state_json, m)?)?;
    m.add_function(wrap_pyfunction!(dof, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(shortest_path, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(actuators, m)?)?;
    m.add_function(wrap_pyfunction!(match_target, m)?)?;
    Ok(())
}
