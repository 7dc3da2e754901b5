"""Smoke test for the plqsqp Python extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math

import plqsqp_py

P1 = {
    "phi": {"c": 2.0, "l": [-2.0], "Q": [[1.0]]},
    "Phi": [{"c": -1.0, "l": [1.0], "Q": [[0.0]]}],
    "g": {
        "m": 1,
        "pieces": [
            {"C": {"A": [[1.0]], "b": [0.0], "E": [], "d": []}, "A": [[0.0]], "a": [0.0], "alpha": 0.0}
        ],
    },
}


def main():
    p1 = plqsqp_py.Problem.from_json(json.dumps(P1))
    assert (p1.n, p1.m) == (1, 1)
    assert abs(p1.kkt_residual([1.1], [1.0]) - 0.2) < 1e-12

    res = p1.solve([0.0], [0.0])
    assert res["iterations"] == 1, res
    assert math.isclose(res["x"][0], 1.0, abs_tol=1e-10)
    assert res["residuals"][-1] <= 1e-10

    p2 = plqsqp_py.generate("critical_showcase")
    verdicts = {c: r for c, r, _ in p2.diagnose([0.0], [-1.0])}
    assert verdicts["noncritical"] == "fails", verdicts
    assert verdicts["unique_multiplier"] == "fails", verdicts

    nlp = plqsqp_py.generate("nlp", n=3, m=2, s=1, seed=4)
    xbar, lbar = nlp.reference
    out = nlp.solve([v + 0.05 for v in xbar], lbar, mode="bfgs")
    assert out["residuals"][-1] <= 1e-10, out
    assert plqsqp_py.Problem.from_json(nlp.to_json()).to_json() == nlp.to_json()

    try:
        plqsqp_py.Problem.from_json("{")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed JSON accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
