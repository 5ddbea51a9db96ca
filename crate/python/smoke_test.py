"""Smoke test for the pyflatsample extension.

Build first:  pip install -e crates/python --no-build-isolation
"""

import math
import tempfile
from pathlib import Path

import pyflatsample as fs


def check_model():
    p = fs.VtolParams()
    x = [0.3, -0.2, 0.4, 0.1, 0.0, -0.2]
    back = p.original_state(p.flat_state(x))
    assert max(abs(a - b) for a, b in zip(x, back)) < 1e-12

    u = [5.0, 4.5]
    ts = 0.05
    nxt = p.implicit_step(x, u, ts)
    f = p.dynamics(nxt, u)
    assert max(abs(n - a - ts * b) for n, a, b in zip(nxt, x, f)) < 1e-10

    hover = p.m * p.g / (2 * math.cos(p.alpha))
    assert abs(p.hover_thrust() - hover) < 1e-12


def check_parameterization():
    p = fs.VtolParams()
    ts = 0.1
    for scheme, expected in [("implicit", (-3, 1)), ("explicit", (0, 4))]:
        lo, hi = p.window_range(scheme, ts)
        assert (lo, hi) == expected, (scheme, lo, hi)
        window = [[0.3 * (k * ts) ** 2, 0.1 * (k * ts) ** 2] for k in range(lo, hi + 1)]
        state, inp = p.parameterize(window, scheme, ts)
        assert len(state) == 6 and len(inp) == 2
        assert all(math.isfinite(v) for v in state + inp)


def check_simulation():
    cfg = fs.SimConfig("duration = 2.0\ntn = 1e-3\n")
    cfg.validate()
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "run.csv"
        cols, metrics = fs.simulate(cfg, str(out))
        assert out.exists() and out.with_suffix(".meta.json").exists()
        header = out.read_text().splitlines()[0].split(",")
        assert header == list(fs.COLUMNS)
    assert len(cols["k"]) == 21
    assert metrics["bounded"] and metrics["fault_count"] == 0

    imp, exp = fs.compare(fs.SimConfig("tn = 1e-3\n"))
    for m in (imp, exp):
        assert m["bounded"] and m["flat_settling_index"] is not None, m

    try:
        fs.SimConfig("sample_time = 0.1\n")
    except ValueError as e:
        assert "sample_time" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def check_validation():
    results = fs.validate()
    for name, passed, detail in results:
        print(f"  {'PASS' if passed else 'FAIL'} {name}: {detail}")
    assert results and all(r[1] for r in results)


if __name__ == "__main__":
    for check in (check_model, check_parameterization, check_simulation, check_validation):
        check()
        print(f"ok {check.__name__}")
