"""Entropy-dynamics laboratory for tabular softmax policies."""

import json

from ._core import (
    EntlabError,
    NumericError,
    SoftmaxPolicy,
    TabularTask,
    ValidationError,
    builtin_task,
    effective_covariance,
    evaluate_policy,
    expected_reward,
    fit_exponential_law,
    make_bandit,
    policy_gradient,
)
from . import _core

__all__ = [
    "EntlabError",
    "NumericError",
    "SoftmaxPolicy",
    "TabularTask",
    "ValidationError",
    "builtin_task",
    "config_digest",
    "effective_covariance",
    "evaluate_policy",
    "expected_reward",
    "fit_exponential_law",
    "make_bandit",
    "policy_gradient",
    "probe_stability",
    "run_experiment",
    "trace_summary",
    "trace_to_csv",
    "verify",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def run_experiment(config, base_dir=""):
    """Run a config (dict or JSON text); returns the trace as a list of JSONL records."""
    return [json.loads(line) for line in _core.run_experiment(_dump(config), base_dir).splitlines()]


def _jsonl(records):
    return "".join(json.dumps(r) + "\n" for r in records)


def trace_summary(records):
    return json.loads(_core.trace_summary(_jsonl(records)))


def trace_to_csv(records):
    return _core.trace_to_csv(_jsonl(records))


def config_digest(config):
    return _core.config_digest(_dump(config))


def probe_stability(config, epsilon):
    return json.loads(_core.probe_stability(_dump(config), epsilon))


def verify(self_check=False):
    return json.loads(_core.verify(self_check))
