"""Cooperative environments behind one stateful adapter interface.

Adapters wrap the pure environment functions with episode state so the
training loop, evaluator and bridge share a single contract: ``reset(seed)``
returns (observations, encoded state); ``step(actions)`` returns
(observations, encoded state, team reward, done). After a step, ``truncated``
tells whether a done flag came from the step limit rather than true
termination (the TD bootstrap treats only the latter as terminal).
"""
from __future__ import annotations

import numpy as np

from . import lbf as _lbf
from .lbf import (LbfConfig, LbfState, PlacementError, encode_state,
                  lbf_concept_labels, lbf_reset, lbf_step, observations,
                  random_lbf_state, ACTION_NAMES, CONCEPT_NAMES, N_CONCEPTS)
from .matrix import MatrixGame, matrix_game_payoff, optimal_joint_action

__all__ = [
    "LbfConfig", "LbfState", "PlacementError", "MatrixGame", "LbfEnv",
    "MatrixEnv", "make_env", "encode_state", "lbf_concept_labels",
    "lbf_reset", "lbf_step", "observations", "random_lbf_state",
    "matrix_game_payoff", "optimal_joint_action", "ACTION_NAMES",
    "CONCEPT_NAMES", "N_CONCEPTS",
]


class LbfEnv:
    def __init__(self, cfg: LbfConfig):
        self.cfg = cfg
        self.n_agents = cfg.n_agents
        self.n_actions = _lbf.N_ACTIONS
        self.obs_dim = cfg.obs_dim
        self.state_dim = cfg.state_dim
        self.episode_limit = cfg.episode_limit
        self.n_concepts = N_CONCEPTS
        self.state: LbfState | None = None
        self.truncated = False

    def reset(self, seed: int):
        self.state, obs = lbf_reset(self.cfg, seed)
        self.truncated = False
        return obs, encode_state(self.cfg, self.state)

    def step(self, actions):
        self.state, obs, reward, done = lbf_step(self.cfg, self.state, actions)
        # done with food left means the step limit cut the episode short
        self.truncated = bool(done and np.any(self.state.food_alive))
        return obs, encode_state(self.cfg, self.state), reward, done

    def concept_labels(self) -> np.ndarray:
        return lbf_concept_labels(self.state)


class MatrixEnv:
    """One-step matrix game; constant observation and state vectors."""

    def __init__(self, game: MatrixGame):
        self.cfg = game
        self.n_agents = 2
        self.n_actions = game.n_actions
        self.obs_dim = 1
        self.state_dim = 1
        self.episode_limit = 1
        self.n_concepts = 0
        self._done = True
        self.truncated = False

    def reset(self, seed: int):
        self._done = False
        return np.ones((2, 1)), np.ones(1)

    def step(self, actions):
        if self._done:
            raise ValueError("MatrixEnv.step: episode already done")
        self._done = True
        reward = matrix_game_payoff(self.cfg, actions)
        return np.ones((2, 1)), np.ones(1), reward, True

    def concept_labels(self) -> np.ndarray:
        return np.zeros(0)


def make_env(env_cfg):
    if isinstance(env_cfg, LbfConfig):
        return LbfEnv(env_cfg)
    if isinstance(env_cfg, MatrixGame):
        return MatrixEnv(env_cfg)
    raise TypeError(f"make_env: unsupported env config {type(env_cfg).__name__}")
