use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_from_python() {
    Python::with_gil(|py| {
        let m = pyo3::wrap_pymodule!(metamorph_py::metamorph_py)(py);
        let env = PyDict::new_bound(py);
        env.set_item("mm", m).unwrap();
        py.run_bound(
            r#"
assert mm.validate_design() == (32, 36)
ring = mm.uniform_design_json([4], 1)
assert mm.dof(design=ring) == 2
centers, r = mm.place([90.0, 180.0, 90.0, 180.0], ring)
assert r < 1e-9, r
try:
    mm.dof([180.0], ring)
    raise SystemExit("short state accepted")
except ValueError:
    pass
"#,
            Some(&env),
            None,
        )
        .unwrap();
    });
}
