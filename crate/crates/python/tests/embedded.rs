use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_works_in_embedded_interpreter() {
    use psicert_py::psicert_py;
    pyo3::append_to_inittab!(psicert_py);
    Python::initialize();
    Python::attach(|py| {
        let locals = PyDict::new(py);
        py.run(
            c"import psicert_py as pc
h = pc.hoeffding_bound(50, 0.1)
sol = pc.solve_qp([[1.0, 0.0]], [2.0])
cfg = pc.ExperimentConfig('{\"groups\": 1, \"rollouts_per_group\": 3, \"system\": {\"horizon_steps\": 4}}')
report = pc.certify(cfg)
",
            None,
            Some(&locals),
        )
        .unwrap();
        let h: f64 = locals.get_item("h").unwrap().unwrap().extract().unwrap();
        assert!((h - 0.17308).abs() < 5e-5);
        let status: String = py.eval(c"sol.status", None, Some(&locals)).unwrap().extract().unwrap();
        assert_eq!(status, "optimal");
        let total: usize = py.eval(c"report['total_rollouts']", None, Some(&locals)).unwrap().extract().unwrap();
        assert_eq!(total, 3);
    });
}
