"""Smoke test for the drsc_py extension.

Build and install with `pip install --no-build-isolation -e crates/py`,
then run `python crates/py/python/smoke_test.py`.
"""

import json
import math

import drsc_py

TWO_SG = {
    "buses": [1, 2, 3],
    "branches": [
        {"from": 1, "to": 2, "x": 0.10},
        {"from": 2, "to": 3, "x": 0.12},
        {"from": 1, "to": 3, "x": 0.15},
    ],
    "sgs": [{"bus": 1, "Xg": 0.25}, {"bus": 2, "Xg": 0.30}],
    "gfm": [],
    "gfl": [{"bus": 3, "V": 1.0, "capacity": 1.0}],
}


def main():
    net = json.dumps(TWO_SG)
    both = drsc_py.gscr(net, [1.0, 1.0], [1.0])
    one = drsc_py.gscr(net, [1.0, 0.0], [1.0])
    assert both > one > 0.0, (both, one)

    try:
        drsc_py.k_eta(1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("eta outside (0, 1) must raise ValueError")
    assert math.isclose(drsc_py.k_eta(0.8), 2.0), drsc_py.k_eta(0.8)

    m = drsc_py.desk_coefficient_moments(0.05)
    n = len(m["mu"])
    assert n > 0 and len(m["sigma"]) == n

    rep = drsc_py.desk_validate(n_samples=500, seed=1)
    assert rep["mape_mu"] < 10.0, rep

    none = drsc_py.desk_schedule("none")
    dro = drsc_py.desk_schedule("dro")
    assert dro["cost"] >= none["cost"] - 1e-6, (none["cost"], dro["cost"])
    print(f"gscr {both:.3f}/{one:.3f}  mape_mu {rep['mape_mu']:.2f}%  "
          f"cost none {none['cost']:.2f} dro {dro['cost']:.2f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
