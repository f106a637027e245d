"""Smoke test for the darkmatter_py extension.

Build with `maturin develop` (or copy the built shared library next to this
file as darkmatter_py.so) and run `python smoke_test.py`.
"""

import math

import darkmatter_py as dm


def main():
    cfg = dm.Config()
    assert abs(cfg.horizon - 0.25) < 1e-15

    try:
        dm.Config('{"params": {"rhoVol": 2.0}}')
    except ValueError as e:
        assert "rhoVol" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    kou_p, kou_q = dm.JumpLaw.kou(0.4, 25.0, 20.0), dm.JumpLaw.kou(0.4, 20.0, 20.0)
    cf = dm.crossing_rp(1.03, 1.0, kou_p, 2.0, kou_q)
    quad = dm.crossing_rp_quadrature(1.03, 1.0, kou_p, 2.0, kou_q)
    assert cf < 0 and abs(cf - quad) < 1e-10 * abs(cf), (cf, quad)

    jumpy = cfg.with_jumps(1.0, kou_p, 2.0, kou_q)
    p = dm.simulate(jumpy, "P", 20_000, 50, seed=7)
    q = dm.simulate(jumpy, "Q", 20_000, 50, seed=7)
    assert p.n_paths == 20_000 and q.measure == "Q"
    mean_q = sum(q.terminal()) / q.n_paths
    assert abs(mean_q - 1.0) < 0.01, mean_q

    dmr = dm.dark_matter_rp(p, q, 1.03)
    est, se = dmr["darkMatterRP"]
    assert math.isfinite(est) and se > 0
    reports = dm.premia_reports(p, q, 1.05, 0.95)
    assert set(reports) == {"call", "put", "straddle"}, set(reports)

    cols = p.decompose(1.02, "call", 0.01)
    assert len(cols["residual"]) == p.n_paths

    price = dm.bs_price(1.0, 1.0, 0.2, 1.0)
    assert abs(dm.implied_vol(price, 1.0, 1.0, 1.0) - 0.2) < 1e-8
    assert dm.omega(1.0) == 2.0

    mean, se, lag = dm.newey_west_mean([1.0, 2.0, 3.0, 4.0], lag=0)
    assert mean == 2.5 and abs(se - math.sqrt(5 / 16)) < 1e-15 and lag == 0
    lo, hi = dm.bootstrap_ci([0.25] * 20, "circular", 200, block=3.0)
    assert lo == hi == 0.25

    table = dm.synthetic_table(150, seed=3)
    assert table.splitlines()[0].startswith("state,tercile,regime")
    print("smoke test passed")


if __name__ == "__main__":
    main()
