"""One-step two-player matrix games; brute-force oracle environments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MatrixGame:
    payoff: np.ndarray  # (|A|, |A|), row = agent 0's action

    def __post_init__(self):
        p = np.asarray(self.payoff, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise ValueError(f"MatrixGame: payoff must be square, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("MatrixGame: payoffs must be finite")
        object.__setattr__(self, "payoff", p)

    @property
    def n_actions(self) -> int:
        return self.payoff.shape[0]


def matrix_game_payoff(game: MatrixGame, joint_action) -> float:
    i, j = (int(a) for a in joint_action)
    n = game.n_actions
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"matrix_game_payoff: joint action ({i}, {j}) outside {n}x{n} game")
    return float(game.payoff[i, j])


def optimal_joint_action(game: MatrixGame) -> tuple[int, int]:
    """Exhaustive-search optimum (lowest indices on ties)."""
    flat = int(np.argmax(game.payoff))
    return flat // game.n_actions, flat % game.n_actions
