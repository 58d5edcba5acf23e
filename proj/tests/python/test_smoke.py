import math

import numpy as np
import pytest

import entlab


def test_policy_and_task_basics():
    p = entlab.SoftmaxPolicy(np.array([[math.log(2.0), 0.0]]))
    assert np.allclose(p.probabilities, [[2.0 / 3.0, 1.0 / 3.0]])
    bandit = entlab.builtin_task("bandit2")
    assert entlab.expected_reward(bandit, p) == pytest.approx(2.0 / 3.0)
    table = entlab.evaluate_policy(bandit, p)
    assert np.allclose(table["advantages"], [[1.0 / 3.0, -2.0 / 3.0]])
    assert entlab.SoftmaxPolicy(1, 4).state_entropy(0) == pytest.approx(math.log(4.0))


def test_training_collapses_entropy():
    records = entlab.run_experiment({"task": "bandit2", "eta": 0.5, "steps": 500, "log_every": 1})
    assert records[0]["type"] == "header"
    final = records[-1]
    assert final["type"] == "final"
    assert final["steps_completed"] == 500
    steps = [r for r in records if r["type"] == "step"]
    assert len(steps) == 500
    assert steps[-1]["expected_reward"] >= 0.99
    summary = entlab.trace_summary(records)
    assert summary["pearson_dH_vs_cov"] >= 0.9
    assert "r_squared" in summary["exp_fit"]
    assert entlab.trace_to_csv(records).count("\n") == 501


def test_determinism_and_digest():
    cfg = {"task": "bandit10", "steps": 40, "mode": "sampled", "batch_size": 16, "rng_seed": 3}
    assert entlab.run_experiment(cfg) == entlab.run_experiment(cfg)
    assert entlab.config_digest(cfg) == entlab.config_digest(dict(cfg))
    assert entlab.config_digest(cfg) != entlab.config_digest({**cfg, "rng_seed": 4})


def test_validation_errors_surface():
    with pytest.raises(ValueError, match="rule.alpha"):
        entlab.run_experiment({"task": "bandit2", "rule": {"variant": "entropy_reg", "alpha": -0.1}})
    with pytest.raises(ValueError):
        entlab.effective_covariance([0.1, 0.2], [0, 1])


def test_fit_and_effective_covariance():
    h = np.linspace(0.0, 2.0, 12)
    a, b, r2 = entlab.fit_exponential_law(list(h), list(-0.3 * np.exp(h) + 0.9))
    assert a == pytest.approx(0.3, abs=1e-9)
    assert b == pytest.approx(0.9, abs=1e-9)
    assert r2 == pytest.approx(1.0)
    assert entlab.effective_covariance([1.0, 2.0, 3.0], [2]) == pytest.approx(1.5)


def test_probe_stability_reports_witnesses():
    out = entlab.probe_stability({"task": "bandit10", "steps": 50}, 0.01)
    for key in ("base", "reg", "klcov"):
        assert out[key]["kl_at_gamma"] <= 0.01 < out[key]["kl_at_double"]
