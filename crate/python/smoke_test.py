"""Smoke test for the homlab_py extension module.

Build the module and put it on the path first:

    cargo build -p homlab-py --features extension-module
    cp target/debug/libhomlab_py.so python/homlab_py.so
    python3 python/smoke_test.py
"""

import math
import random
import sys

import homlab_py as hl

TOL = 1e-10
CONSTANT = {"kind": "constant", "matrix": [[2.0, 0.0], [0.0, 2.0]]}


def close(a, b, tol=TOL):
    return abs(a - b) <= tol


def check_constant_field():
    field = hl.CoefficientField.generate(2, 2, 0, CONSTANT)
    assert field.cell_count == 81 and field.side == 9
    a = hl.coarse_grain(field)["a"]
    expected = [[2.0, 0, 0, 0], [0, 2.0, 0, 0], [0, 0, 0.5, 0], [0, 0, 0, 0.5]]
    assert all(close(a[i][j], expected[i][j]) for i in range(4) for j in range(4)), a
    rng = random.Random(1)
    for _ in range(10):
        p = [rng.uniform(-1, 1) for _ in range(2)]
        q = [rng.uniform(-1, 1) for _ in range(2)]
        want = sum(x * x for x in p) + sum(y * y for y in q) / 4.0 - sum(x * y for x, y in zip(p, q))
        assert close(hl.j_value(field, p, q), want)
    ell = hl.ellipticity(field)
    assert close(ell["lambda_s"], 2.0) and close(ell["Lambda_t"], 2.0), ell
    assert hl.hierarchy_report(field)["passed"]


def check_norms():
    ones = [1.0] * 81
    t = 0.4
    assert close(hl.b_norm(ones, 2, 2, t), 1.0 / (1.0 - 3.0 ** (-2 * t)), 1e-9)
    assert hl.ring_norm([0.0] * 81, 2, 2, 0.5) == 0.0


def check_laminate_and_estimate():
    a_bar = hl.laminate_a_bar(2, 1.0, 4.0)
    assert close(a_bar[0][0], 1.6) and close(a_bar[1][1], 2.5)
    est = hl.estimate_abar(2, CONSTANT, 2, 3, seed=4)
    assert close(est["a_bar"][0][0], 2.0) and close(est["a_bar"][1][0], 0.0)
    assert est["bounds"]["passed"]


def check_zero_oscillation():
    records = hl.homogenization_errors(
        2, CONSTANT, [[2.0, 0.0], [0.0, 2.0]], {"family": "affine", "p": [1.0, 0.5]}, 0.5, 1, 2, seed=3
    )
    assert [r["n"] for r in records] == [1, 2]
    for r in records:
        assert r["failure"] is None and r["grad_err"] <= TOL and r["flux_err"] <= TOL, r


def check_cascade_and_errors():
    m = hl.cascade_moment(0.0, 2.0, 1000)
    assert m["mean"] == 1.0 and m["passed"]
    m = hl.cascade_moment(0.25, 2.0, 20000, seed=5)
    assert abs(m["mean"] - math.exp(0.25**2)) <= 4 * m["se"], m
    try:
        hl.CoefficientField.generate(2, 1, 0, {"kind": "checkerboard", "low": -1.0, "high": 2.0})
    except ValueError:
        pass
    else:
        raise AssertionError("negative conductivity accepted")
    assert hl.run_cli(["--help"]) == 0


def main():
    checks = [check_constant_field, check_norms, check_laminate_and_estimate, check_zero_oscillation, check_cascade_and_errors]
    for check in checks:
        check()
        print(f"ok   {check.__name__}")
    print(f"{len(checks)} checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
