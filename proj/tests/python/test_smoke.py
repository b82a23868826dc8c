import json
import math

import numpy as np
import pytest

import marginflow as mf


def test_layer_identity_against_numpy():
    weights = mf.init_network([3, 4, 1], seed=7, scale=1.0)
    x = np.array([0.9, -0.3, 0.4])
    f = mf.forward(weights, x)

    # Recompute the forward pass independently.
    h = weights[0] @ x
    h = np.maximum(h, 0.0)
    ref = float((weights[1] @ h)[0])
    assert f == pytest.approx(ref, rel=1e-12)

    res = mf.structural_residual(weights, x)
    assert np.max(res) <= 1e-10 * max(abs(f), 1e-30)


def test_gradients_match_numpy_fd():
    weights = mf.init_network([2, 3, 1], seed=11, scale=1.0)
    x = np.array([0.8, 0.5])
    grads = mf.grad_weights(weights, x)
    step = 1e-6
    for k, w in enumerate(weights):
        fd = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                bumped = [m.copy() for m in weights]
                bumped[k][i, j] += step
                fp = mf.forward(bumped, x)
                bumped[k][i, j] -= 2 * step
                fm = mf.forward(bumped, x)
                fd[i, j] = (fp - fm) / (2 * step)
        assert np.max(np.abs(fd - grads[k])) <= 1e-5


def test_dataset_and_margin_oracle():
    spec = {"source": "gaussian-blobs", "n": 12, "d": 2, "gap": 2.0, "seed": 4}
    x, y = mf.make_dataset(json.dumps(spec))
    assert x.shape == (12, 2)
    assert set(np.unique(y)) == {-1.0, 1.0}

    direction, margin, support = mf.hard_margin_direction(x, y)
    assert abs(np.linalg.norm(direction) - 1.0) <= 1e-9
    assert margin > 0.0
    assert len(support) >= 1
    assert np.min(y * (x @ direction)) == pytest.approx(margin, abs=1e-9)


def test_tiny_run_config():
    cfg = {
        "name": "smoke",
        "seed": 3,
        "data": {"source": "two-point-1d", "x1": 1.0, "x2": 2.0},
        "model": {"dims": [1, 1]},
        "flow": {"kind": "unconstrained"},
        "policy": {"h": 0.001, "stop_time": 10.0, "record_every": 100},
        "analyses": [{"type": "equilibrium_1d", "max_err": 1e-4}],
    }
    summary = json.loads(mf.run_config(json.dumps(cfg)))
    assert summary["pass"] is True
    assert summary["stop_reason"] == "horizon"
    eq = summary["analyses"][0]
    assert eq["err"] <= 1e-4
    assert eq["w_star"] == pytest.approx(math.log(2.0) / 3.0, abs=1e-12)


def test_fit_rate_recovers_log_law():
    t = np.logspace(0.5, 4, 40)
    v = 2.5 * np.log(t) + 0.7
    fit = mf.fit_rate(list(t), list(v), "c_log_t")
    assert fit["a"] == pytest.approx(2.5, abs=1e-9)
    assert fit["c"] == pytest.approx(0.7, abs=1e-9)
    assert fit["r2"] > 1 - 1e-12


def test_li_round_trip():
    z = 25.0
    assert mf.li_inverse(mf.li(z)) == pytest.approx(z, rel=1e-9)


def test_verify_suite():
    ok, text = mf.verify("structural")
    assert ok
    assert "[PASS]" in text
