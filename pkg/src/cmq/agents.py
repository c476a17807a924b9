"""Per-agent recurrent utility networks and epsilon-greedy action selection.

One parameter set is shared by all agents; each agent's identity and last
action enter as one-hot blocks appended to its observation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .nets import ParamSet


@dataclass(frozen=True)
class AgentSpec:
    obs_dim: int
    n_actions: int
    n_agents: int
    hidden: int = 64

    def __post_init__(self):
        if min(self.obs_dim, self.n_actions, self.n_agents, self.hidden) < 1:
            raise ValueError("AgentSpec: all dimensions must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.n_actions + self.n_agents


def init_agent_params(spec: AgentSpec, seed: int) -> ParamSet:
    """Observation trunk -> gated recurrent cell -> per-action heads."""
    rng = np.random.default_rng(seed)
    h = spec.hidden
    p = ParamSet(meta={"spec": spec, "seed": seed})
    p.add("fc1.w", nets.uniform_init(rng, (h, spec.input_dim), spec.input_dim))
    p.add("fc1.b", np.zeros(h))
    p.add("gru.wx", nets.uniform_init(rng, (3 * h, h), h))
    p.add("gru.wh", nets.uniform_init(rng, (3 * h, h), h))
    p.add("gru.bx", np.zeros(3 * h))
    p.add("gru.bh", np.zeros(3 * h))
    p.add("fc2.w", nets.uniform_init(rng, (spec.n_actions, h), h))
    p.add("fc2.b", np.zeros(spec.n_actions))
    return p


def agent_q(params, x, h_prev):
    """Utilities for one recurrent step; returns (q, new hidden).

    ``x`` is a built agent input row (or a batch of rows); rows for several
    agents and episodes may be stacked, the cell treats them independently.
    """
    z = ad.relu(ad.linear(params["fc1.w"], x, params["fc1.b"]))
    h = nets.gru_step(params, z, h_prev)
    q = ad.linear(params["fc2.w"], h, params["fc2.b"])
    return q, h


def init_hidden(spec: AgentSpec, rows: int) -> np.ndarray:
    return np.zeros((rows, spec.hidden))


def build_agent_inputs(spec: AgentSpec, obs: np.ndarray,
                       last_actions=None) -> np.ndarray:
    """Stack observation, last-action one-hot and agent-id one-hot per agent.

    ``last_actions`` of None (episode start) leaves the action block zero.
    """
    n = spec.n_agents
    if obs.shape != (n, spec.obs_dim):
        raise ad.ShapeError(
            f"build_agent_inputs: expected obs ({n}, {spec.obs_dim}), got {obs.shape}")
    out = np.zeros((n, spec.input_dim))
    out[:, :spec.obs_dim] = obs
    if last_actions is not None:
        for i, a in enumerate(last_actions):
            out[i, spec.obs_dim + int(a)] = 1.0
    out[:, spec.obs_dim + spec.n_actions:] = np.eye(n)
    return out


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 50_000

    def __post_init__(self):
        if self.decay_steps < 1 or not (0.0 <= self.end <= self.start <= 1.0):
            raise ValueError("EpsilonSchedule: need 0 <= end <= start <= 1, decay_steps >= 1")

    def value(self, step: int) -> float:
        if step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * (step / self.decay_steps)


def select_action(q, eps: float, rng: np.random.Generator | None = None,
                  avail=None) -> int:
    """Epsilon-greedy over available actions; greedy ties go to the lowest index.

    eps=0 is fully deterministic and consumes no random draws, so greedy
    evaluation needs no generator at all.
    """
    qv = ad.value_of(q)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"select_action: eps {eps} outside [0, 1]")
    if avail is None:
        avail = np.ones(qv.shape[-1], dtype=bool)
    avail = np.asarray(avail, dtype=bool)
    choices = np.flatnonzero(avail)
    if choices.size == 0:
        raise ValueError("select_action: no available action")
    if eps > 0.0 and rng.random() < eps:
        return int(choices[rng.integers(choices.size)])
    return int(np.argmax(np.where(avail, qv, -np.inf)))
