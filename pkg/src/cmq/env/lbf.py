"""Level-based foraging grid world with ground-truth cooperation concepts.

Pure functions over an immutable state record; every function that needs
grid geometry or level bounds takes the config explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP, DOWN, LEFT, RIGHT, EAT, NOOP = range(6)
N_ACTIONS = 6
ACTION_NAMES = ("up", "down", "left", "right", "eat", "noop")
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}

N_CONCEPTS = 4
CONCEPT_NAMES = ("solo_food_adjacent", "coop_food_present",
                 "agents_converging", "all_food_eaten")


class PlacementError(RuntimeError):
    """Grid too small to place all entities under the spacing rules."""


@dataclass(frozen=True)
class LbfConfig:
    grid_w: int = 8
    grid_h: int = 8
    n_agents: int = 2
    n_foods: int = 2
    max_agent_level: int = 2
    episode_limit: int = 50
    view_range: int = 2
    coop_penalty: float = -0.002
    force_coop: bool = True

    def __post_init__(self):
        if self.grid_w < 4 or self.grid_h < 4:
            raise ValueError(f"LbfConfig: grid must be at least 4x4, got {self.grid_w}x{self.grid_h}")
        if self.n_agents < 1 or self.n_foods < 1:
            raise ValueError("LbfConfig: need at least one agent and one food")
        if self.episode_limit < 1 or self.view_range < 1 or self.max_agent_level < 1:
            raise ValueError("LbfConfig: episode_limit, view_range, max_agent_level must be >= 1")
        if self.force_coop and self.n_agents < 2:
            raise ValueError("LbfConfig: force_coop requires at least two agents")

    @property
    def max_food_level(self) -> int:
        # largest level _sample_levels can produce; normalizer for encodings
        return 2 * self.max_agent_level

    @property
    def obs_dim(self) -> int:
        side = 2 * self.view_range + 1
        return 3 * side * side + 3

    @property
    def state_dim(self) -> int:
        return 3 * self.n_agents + 4 * self.n_foods + 1


@dataclass(frozen=True)
class LbfState:
    """Snapshot of one episode; arrays are never mutated after construction."""

    agent_xy: np.ndarray     # (n, 2) int
    agent_levels: np.ndarray  # (n,) int
    food_xy: np.ndarray      # (f, 2) int, frozen for dead foods
    food_levels: np.ndarray  # (f,) int, frozen for dead foods
    food_alive: np.ndarray   # (f,) bool
    t: int


def _place_entities(cfg: LbfConfig, rng: np.random.Generator):
    """Food cells pairwise Chebyshev >= 2 apart, agents on the remaining cells.

    A cooperative food placed flush against another food could lose the two
    orthogonal neighbours a pair of eaters needs; the spacing rule keeps
    every sampled episode solvable.
    """
    cells = [(x, y) for y in range(cfg.grid_h) for x in range(cfg.grid_w)]
    food_xy: list[tuple[int, int]] = []
    for _ in range(cfg.n_foods):
        open_cells = [c for c in cells
                      if all(max(abs(c[0] - fx), abs(c[1] - fy)) >= 2 for fx, fy in food_xy)]
        if not open_cells:
            raise PlacementError(
                f"cannot place {cfg.n_foods} spaced foods on a {cfg.grid_w}x{cfg.grid_h} grid")
        food_xy.append(open_cells[int(rng.integers(len(open_cells)))])
    taken = set(food_xy)
    free = [c for c in cells if c not in taken]
    agent_xy: list[tuple[int, int]] = []
    for _ in range(cfg.n_agents):
        if not free:
            raise PlacementError(
                f"cannot place {cfg.n_agents} agents on a {cfg.grid_w}x{cfg.grid_h} grid")
        agent_xy.append(free.pop(int(rng.integers(len(free)))))
    return (np.array(agent_xy, dtype=np.int64).reshape(cfg.n_agents, 2),
            np.array(food_xy, dtype=np.int64).reshape(cfg.n_foods, 2))


def _sample_levels(cfg: LbfConfig, rng: np.random.Generator):
    agent_levels = rng.integers(1, cfg.max_agent_level + 1, size=cfg.n_agents)
    strongest = int(agent_levels.max())
    food_levels = rng.integers(1, strongest + 1, size=cfg.n_foods)
    if cfg.force_coop:
        # above any single agent, but within reach of the two strongest
        two_lowest = int(np.sort(agent_levels)[:2].sum())
        food_levels[0] = max(two_lowest, strongest + 1)
    return agent_levels, food_levels


def lbf_reset(cfg: LbfConfig, seed: int):
    """Fresh episode; deterministic for a fixed (cfg, seed)."""
    rng = np.random.default_rng(seed)
    agent_xy, food_xy = _place_entities(cfg, rng)
    agent_levels, food_levels = _sample_levels(cfg, rng)
    state = LbfState(agent_xy=agent_xy, agent_levels=agent_levels,
                     food_xy=food_xy, food_levels=food_levels,
                     food_alive=np.ones(cfg.n_foods, dtype=bool), t=0)
    return state, observations(cfg, state)


def lbf_step(cfg: LbfConfig, state: LbfState, actions):
    """Advance one step; returns (state', observations', reward, done).

    Movement resolves in agent-index order (walls and occupied cells block);
    foods are then consumed in food-index order when the adjacent eaters'
    levels sum to at least the food level, each eater spent on one food.
    """
    n_agents, n_foods = len(state.agent_levels), len(state.food_levels)
    acts = [int(a) for a in actions]
    if len(acts) != n_agents or any(a < 0 or a >= N_ACTIONS for a in acts):
        raise ValueError(f"lbf_step: invalid joint action {acts!r}")
    if state.t >= cfg.episode_limit or not state.food_alive.any():
        raise ValueError("lbf_step: episode already done")

    pos = [(int(x), int(y)) for x, y in state.agent_xy]
    occupied = set(pos)
    occupied.update((int(x), int(y))
                    for (x, y), alive in zip(state.food_xy, state.food_alive) if alive)
    for i, a in enumerate(acts):
        move = _MOVES.get(a)
        if move is None:
            continue
        tgt = (pos[i][0] + move[0], pos[i][1] + move[1])
        if (0 <= tgt[0] < cfg.grid_w and 0 <= tgt[1] < cfg.grid_h
                and tgt not in occupied):
            occupied.discard(pos[i])
            occupied.add(tgt)
            pos[i] = tgt

    alive = state.food_alive.copy()
    reward = 0.0
    consumed = False
    spent = [False] * n_agents
    total_level = float(state.food_levels.sum())
    for j in range(n_foods):
        if not alive[j]:
            continue
        fx, fy = int(state.food_xy[j, 0]), int(state.food_xy[j, 1])
        eaters = [i for i in range(n_agents)
                  if acts[i] == EAT and not spent[i]
                  and abs(pos[i][0] - fx) + abs(pos[i][1] - fy) == 1]
        if eaters and sum(int(state.agent_levels[i]) for i in eaters) >= int(state.food_levels[j]):
            alive[j] = False
            for i in eaters:
                spent[i] = True
            reward += float(state.food_levels[j]) / total_level
            consumed = True
    if not consumed:
        reward = cfg.coop_penalty

    t = state.t + 1
    new = LbfState(agent_xy=np.array(pos, dtype=np.int64),
                   agent_levels=state.agent_levels.copy(),
                   food_xy=state.food_xy.copy(),
                   food_levels=state.food_levels.copy(),
                   food_alive=alive, t=t)
    done = (not alive.any()) or t >= cfg.episode_limit
    return new, observations(cfg, new), float(reward), bool(done)


def lbf_concept_labels(state: LbfState) -> np.ndarray:
    """Four binary cooperation concepts, deterministic in the state.

    c1: some agent is orthogonally adjacent to an alive food it can eat alone;
    c2: some alive food outlevels every single agent; c3: two agents are both
    within Chebyshev distance 2 of the same alive food; c4: all foods eaten.
    """
    alive_idx = np.flatnonzero(state.food_alive)
    c1 = c2 = c3 = False
    strongest = int(state.agent_levels.max())
    for j in alive_idx:
        fx, fy = int(state.food_xy[j, 0]), int(state.food_xy[j, 1])
        lvl = int(state.food_levels[j])
        if lvl > strongest:
            c2 = True
        near = 0
        for i in range(len(state.agent_levels)):
            ax, ay = int(state.agent_xy[i, 0]), int(state.agent_xy[i, 1])
            if abs(ax - fx) + abs(ay - fy) == 1 and int(state.agent_levels[i]) >= lvl:
                c1 = True
            if max(abs(ax - fx), abs(ay - fy)) <= 2:
                near += 1
        if near >= 2:
            c3 = True
    c4 = alive_idx.size == 0
    return np.array([c1, c2, c3, c4], dtype=np.float64)


def observations(cfg: LbfConfig, state: LbfState) -> np.ndarray:
    """Egocentric windows, one row per agent; every value in [0, 1].

    Three stacked channels over the (2R+1)^2 window — alive food levels,
    agent levels, out-of-grid walls — then own level and normalized position.
    """
    side = 2 * cfg.view_range + 1
    food_grid = np.zeros((cfg.grid_h, cfg.grid_w))
    agent_grid = np.zeros((cfg.grid_h, cfg.grid_w))
    for (x, y), lvl, alive in zip(state.food_xy, state.food_levels, state.food_alive):
        if alive:
            food_grid[y, x] = lvl / cfg.max_food_level
    for (x, y), lvl in zip(state.agent_xy, state.agent_levels):
        agent_grid[y, x] = lvl / cfg.max_agent_level

    out = np.zeros((len(state.agent_levels), cfg.obs_dim))
    for i in range(len(state.agent_levels)):
        ax, ay = int(state.agent_xy[i, 0]), int(state.agent_xy[i, 1])
        foods = np.zeros((side, side))
        agents = np.zeros((side, side))
        walls = np.ones((side, side))
        x0, y0 = ax - cfg.view_range, ay - cfg.view_range
        gx0, gy0 = max(0, x0), max(0, y0)
        gx1, gy1 = min(cfg.grid_w, x0 + side), min(cfg.grid_h, y0 + side)
        wy, wx = slice(gy0 - y0, gy1 - y0), slice(gx0 - x0, gx1 - x0)
        foods[wy, wx] = food_grid[gy0:gy1, gx0:gx1]
        agents[wy, wx] = agent_grid[gy0:gy1, gx0:gx1]
        walls[wy, wx] = 0.0
        own = [state.agent_levels[i] / cfg.max_agent_level,
               ax / cfg.grid_w, ay / cfg.grid_h]
        out[i] = np.concatenate([foods.ravel(), agents.ravel(), walls.ravel(), own])
    return out


def encode_state(cfg: LbfConfig, state: LbfState) -> np.ndarray:
    """Flat normalized global state for the mixer; every value in [0, 1]."""
    parts = []
    for (x, y), lvl in zip(state.agent_xy, state.agent_levels):
        parts += [x / cfg.grid_w, y / cfg.grid_h, lvl / cfg.max_agent_level]
    for (x, y), lvl, alive in zip(state.food_xy, state.food_levels, state.food_alive):
        parts += [x / cfg.grid_w, y / cfg.grid_h, lvl / cfg.max_food_level, float(alive)]
    parts.append(state.t / cfg.episode_limit)
    return np.array(parts, dtype=np.float64)


def random_lbf_state(cfg: LbfConfig, rng: np.random.Generator) -> LbfState:
    """Off-trajectory state sampler for held-out concept evaluation.

    Placement and levels follow lbf_reset; each food is alive with
    probability 1/2 and the clock is uniform over the episode.
    """
    agent_xy, food_xy = _place_entities(cfg, rng)
    agent_levels, food_levels = _sample_levels(cfg, rng)
    return LbfState(agent_xy=agent_xy, agent_levels=agent_levels,
                    food_xy=food_xy, food_levels=food_levels,
                    food_alive=rng.random(cfg.n_foods) < 0.5,
                    t=int(rng.integers(0, cfg.episode_limit + 1)))
