"""Smoke test of the hapc extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/hapc-*.whl
"""

import hapc


def main() -> None:
    sc = hapc.Scenario.reference()
    fixed = hapc.solve_fixed(sc)
    print(f"fixed ordering      {fixed.total_su_rate:10.1f} bit/s in {fixed.iterations} iterations")
    assert fixed.converged and fixed.audit_pass

    base = hapc.traditional_baseline(sc)
    print(f"backscatter only    {base.total_su_rate:10.1f} bit/s ({fixed.total_su_rate / base.total_su_rate:.0f}x lower)")
    assert fixed.total_su_rate > 10 * base.total_su_rate

    edge = sc.with_override("min_pt_gain=3.8e4")
    a = hapc.solve_fixed(edge)
    b = hapc.solve_dynamic(edge)
    print(f"near the edge       fixed {a.total_su_rate:.1f}, dynamic {b.total_su_rate:.1f} {b.ordering}")
    assert b.total_su_rate >= a.total_su_rate

    worst = min(hapc.audit(edge, b.allocation, b.ordering), key=lambda kv: kv[1])
    print(f"tightest constraint {worst[0]} ({worst[1]:.2e})")

    try:
        hapc.solve_fixed(sc.with_override("min_pt_gain=1e7"))
    except hapc.InfeasibleError as e:
        print(f"infeasible target   {e}")
    else:
        raise AssertionError("expected InfeasibleError")

    csv = hapc.run_experiment("fig4")
    assert csv.splitlines()[0] == "# schema=1"
    print(f"fig4 sweep          {len(csv.splitlines()) - 2} rows")
    print("ok")


if __name__ == "__main__":
    main()
