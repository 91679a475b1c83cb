"""Smoke test for the Python bindings: generate data, run each estimator."""

import math

import _tmlecvx as t


def test_version():
    assert isinstance(t.__version__, str) and t.__version__


def test_missing_mean():
    d = t.gen_missing(500, "D1", 42)
    assert d.x.shape == (500, 2)
    truth = t.missing_mean_truth()
    assert 0.3 < truth < 0.4
    for impl in (1, 2, 3, 4):
        r = t.estimate_missing(d, impl=impl, spec="i")
        assert 0.0 < r["psi_hat"] < 1.0
        assert r["ci_lower"] < r["psi_hat"] < r["ci_upper"]
        assert r["converged"]
        if impl <= 2:
            assert r["n_iter"] <= 2


def test_missing_mean_determinism():
    a = t.gen_missing(200, "D2", 7)
    b = t.gen_missing(200, "D2", 7)
    assert (a.x == b.x).all() and (a.y == b.y).all() and (a.m == b.m).all()


def test_median():
    d = t.gen_median(150, 1, 11)
    r = t.estimate_median(d)
    bt = r["beta_tmle"]
    assert all(math.isfinite(v) for v in bt)
    assert abs(bt[0] - 1.5) < 3.0 and abs(bt[1] - 2.5) < 3.0


def test_shift():
    d = t.gen_shift(1500, 3)
    r = t.estimate_shift(d)
    assert 0.0 < r["psi_hat"] < 1.0
    assert r["converged"]
    truth = t.shift_true_value()
    assert abs(r["psi_hat"] - truth) < 0.1


def test_efficiency_bound():
    v, se = t.efficiency_bound_oracle("D1", 50000, 5)
    assert abs(v - 0.34) < 0.05


if __name__ == "__main__":
    fails = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"{name}: ok")
            except Exception as exc:  # noqa: BLE001
                print(f"{name}: FAILED: {exc!r}")
                fails += 1
    raise SystemExit(1 if fails else 0)
