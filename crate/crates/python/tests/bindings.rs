use pyo3::prelude::*;
use pyo3::types::PyDict;
use hapc::hapc as hapc_module;

#[test]
fn module_round_trip() {
    pyo3::append_to_inittab!(hapc_module);
    Python::attach(|py| {
        let locals = PyDict::new(py);
        py.run(
            cr##"
import hapc
sc = hapc.Scenario.reference().with_override("min_pt_gain=3.8e4")
fixed = hapc.solve_fixed(sc)
dyn = hapc.solve_dynamic(sc)
assert fixed.audit_pass and dyn.audit_pass
assert dyn.total_su_rate >= fixed.total_su_rate
assert "su_first" in dyn.ordering
assert fixed.ordering == ["pt_first", "pt_first"]
assert fixed.iterations == len(fixed.trace) and fixed.converged
slacks = dict(hapc.audit(sc, fixed.allocation))
assert slacks["rate_gain"] > -1e-7
same = hapc.Scenario.from_json(sc.to_json())
assert same.min_pt_gain == 38000.0
try:
    hapc.solve_fixed(sc.with_override("min_pt_gain=1e7"))
    raise AssertionError("expected infeasible")
except hapc.InfeasibleError:
    pass
try:
    sc.with_override("eh_efficiency=3")
    raise AssertionError("expected a value error")
except ValueError:
    pass
csv = hapc.run_experiment("fig2")
assert csv.startswith("# schema=1")
single = hapc.Scenario.reference_single()
assert hapc.grid_oracle(single, 9).total_su_rate <= hapc.solve_fixed(single).total_su_rate * 1.001
rate = hapc.exhaustive_sic_oracle(single).total_su_rate
"##,
            None,
            Some(&locals),
        )
        .unwrap();
        let rate: f64 = locals.get_item("rate").unwrap().unwrap().extract().unwrap();
        assert!(rate > 0.0);
    });
}
