"""Smoke test for the fxmm extension module.

Build and run from the repository root:

    cargo build --release -p fxmm-py --features extension-module
    cp target/release/libfxmm.so python/fxmm.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fxmm  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    fx = fxmm.load_config()
    c = fxmm.coeffs(fx)
    assert close(c["omega"], 560.0, 0.01), c["omega"]
    assert close(c["top_of_book_spread"], 0.5, 0.1)
    assert close(2 * c["a0"] * c["omega"], fx.gamma * fx.sigma**2, 1e-12)
    assert math.isclose(fxmm.coeffs(fx.with_param("beta", c["omega"]))["b0"], 0.5)

    curve = fxmm.IntensityCurve(2000.0, -1.0, 7.0, 1.0)
    h, d = curve.hamiltonian(0.0)
    assert close(d, curve.delta_zero, 1e-9) and h > 0
    assert close(curve.intensity(0.0), 2000.0 / (1 + math.e**-1), 1e-12)

    smoke = fxmm.load_config(os.path.join(ROOT, "configs", "smoke.toml"))
    sol = fxmm.solve(smoke)
    assert sol.stationary, sol.report
    assert sol.quote(0, "ask", -5.0) > sol.quote(0, "ask", 5.0)
    lo, hi = sol.zone_band(0.0)
    assert math.isclose(lo, -hi, rel_tol=1e-9), (lo, hi)
    assert sol.speed(10.0) < 0 < sol.speed(-10.0)
    base = fxmm.solve(smoke, "baseline")
    assert base.speed(0.0) is None

    exp = fxmm.shock_experiment(smoke, paths=200, seed=3)
    again = fxmm.shock_experiment(smoke, paths=200, seed=3)
    assert exp["transient"]["position"]["mean"] == again["transient"]["position"]["mean"]
    assert exp["transient"]["position"]["mean"][0] == smoke.sizes[-1]
    try:
        fxmm.shock_experiment(smoke, paths=0)
    except ValueError as e:
        assert "at least 1 path" in str(e)
    else:
        raise AssertionError("paths=0 accepted")

    print(
        f"ok: omega {c['omega']:.2f}, zone {lo:.3f}..{hi:.3f}, "
        f"shock P&L transient {exp['transient_mean_pnl']:.3f} ac {exp['ac_mean_pnl']:.3f}"
    )


if __name__ == "__main__":
    main()
