#!/usr/bin/env python3
"""Smoke test of the polysweep_py extension module.

Build and run:

    cargo build -p polysweep-py --release
    mkdir -p python/_build
    cp target/release/libpolysweep_py.so python/_build/polysweep_py.so
    PYTHONPATH=python/_build python3 python/smoke_test.py
"""

import json
import math
import sys

import polysweep_py as ps


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    s5 = math.sqrt(5.0)
    rows = [[-1.0 / s5, -2.0 / s5]]
    offsets = [-2.0 / s5]

    # Projection of the origin onto {x1 + 2 x2 >= 2}.
    point, mults = ps.project(rows, offsets, [0.0, 0.0])
    assert close(point[0], 0.4, 1e-10) and close(point[1], 0.8, 1e-10), point
    assert close(mults[0], 2.0 / s5, 1e-10), mults

    # Active sets: interior, boundary, infeasible.
    assert ps.active_set(rows, offsets, [1.5, 1.0], 1e-9) == []
    assert ps.active_set(rows, offsets, [1.0, 0.5], 1e-9) == [0]
    try:
        ps.active_set(rows, offsets, [0.0, 0.0], 1e-9)
        raise AssertionError("expected infeasible-point error")
    except ValueError:
        pass

    # Multiplier recovery on the boundary.
    v = [0.2 * rows[0][0], 0.2 * rows[0][1]]
    eta = ps.normal_cone_multipliers(rows, offsets, [1.0, 0.5], v, 1e-8)
    assert close(eta[0], 0.2, 1e-8), eta

    # Qualification checks.
    holds, licq, cert = ps.check_plicq(rows, offsets, [1.0, 0.5], 1e-9)
    assert holds and licq and cert is None
    value, unbounded = ps.slater_margin(rows, offsets)
    assert unbounded and value is None

    # Orthant coderivative descriptor.
    desc = json.loads(ps.coderiv_orthant([0.0], [0.0], [1.0], 1e-10))
    assert desc["Constrained"]["nonneg_indices"] == [0], desc

    # Showcase problem: simulate the optimal controls.
    prob = ps.example8_problem()
    ref = ps.example8_reference(64)
    controls = json.dumps({"u": [[-1.0, -1.0], [-0.4, 0.1]]})
    quad = json.loads(ps.simulate(prob, controls))
    assert close(quad["x"][1][0], 1.0, 1e-12) and close(quad["x"][1][1], 0.5, 1e-12)
    assert close(quad["x"][2][0], 0.82, 1e-12) and close(quad["x"][2][1], 0.59, 1e-12)
    assert close(quad["eta"][1][0], 0.04, 1e-12)

    # Reduced solve and the shooting solver agree on the cost.
    ctrl, cost, eta_steps = ps.solve_reduced(prob, ref, 2)
    assert close(cost, 2.205, 1e-12), cost
    assert close(ctrl[1][0], -0.4, 1e-12) and close(ctrl[1][1], 0.1, 1e-12)
    assert close(eta_steps[1], 0.04, 1e-12)
    shoot_cost, solution = ps.solve(prob, ref, 2, 8, 0)
    assert close(shoot_cost, 2.205, 1e-9), shoot_cost
    assert close(ps.cost(prob, ref, solution), shoot_cost, 1e-12)

    # Certificate at the exact optimum: residual ~ 0 with positive lambda.
    exact = ps.simulate(prob, controls)
    residual, lam, _cert = ps.find_certificate(prob, ref, exact)
    assert residual <= 1e-8, residual
    assert lam > 0.0 and close(lam, 0.3125, 1e-6), lam

    # A detuned candidate is rejected.
    bad = ps.simulate(prob, json.dumps({"u": [[-1.0, -1.0], [0.0, 0.0]]}))
    residual_bad, _, _ = ps.find_certificate(prob, ref, bad)
    assert residual_bad > 1e-3, residual_bad

    print("polysweep_py smoke test: all checks passed")


if __name__ == "__main__":
    sys.exit(main())
