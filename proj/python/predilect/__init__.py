"""Python access to the PREDILECT core: environments, feedback parsing and
the learning loop. Configs and logs are plain dicts."""

import json

from . import _predilect
from ._predilect import (
    PredilectError,
    best_window,
    build_prompt,
    mock_llm,
    preference_probability,
)

__all__ = [
    "Environment",
    "PredilectError",
    "best_window",
    "build_prompt",
    "curves_csv",
    "default_config",
    "force_csv",
    "mock_llm",
    "parse_llm_response",
    "preference_probability",
    "run_experiment",
]


def default_config():
    return json.loads(_predilect.default_config())


def normalize_config(config=None):
    """Fill in defaults; raises PredilectError on unknown keys."""
    return json.loads(_predilect.normalize_config(json.dumps(config or {})))


def parse_llm_response(raw, features):
    return json.loads(_predilect.parse_llm_response(raw, list(features)))


def run_experiment(config=None, out_dir="", resume=False):
    """Runs the loop with oracle or LLM feedback and returns the log."""
    return json.loads(_predilect.run_experiment(json.dumps(config or {}), str(out_dir), resume))


def curves_csv(logs):
    return _predilect.curves_csv([json.dumps(l) for l in logs])


def force_csv(logs):
    return _predilect.force_csv([json.dumps(l) for l in logs])


class Environment:
    """One environment instance; `config` follows the experiment config layout."""

    def __init__(self, env="pointreach", config=None):
        cfg = dict(config or {})
        cfg.setdefault("loop", {})
        cfg["loop"] = dict(cfg["loop"], env=env)
        self._env = _predilect.Environment(json.dumps(cfg))

    name = property(lambda self: self._env.name)
    observation_dim = property(lambda self: self._env.observation_dim)
    action_dim = property(lambda self: self._env.action_dim)

    def reset(self, seed=0):
        return self._env.reset(seed)

    def step(self, action):
        return self._env.step(list(action))

    def true_reward(self):
        return self._env.true_reward()

    def frame(self):
        return json.loads(self._env.frame())
