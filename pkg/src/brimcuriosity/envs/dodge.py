"""Dodge: hazards scroll in from the right; the agent in the left column must avoid them.

The field is a grid of ``rows x cols`` cells. Every raw frame each hazard
moves one cell left and new hazards spawn at the right edge from the episode
seed alone, so hazard trajectories do not depend on the agent. Surviving a
frame pays 0.1; contact ends the episode with no reward for that frame.
Actions: 0 stay, 1 up, 2 down (one cell per frame).
"""

from __future__ import annotations

import numpy as np

from .base import Environment

CELL = 5
MARGIN = 2
SURVIVAL_REWARD = 0.1

_HAZARD = (255, 50, 50)
_AGENT = (120, 200, 255)
_BORDER = (80, 80, 80)


class DodgeEnv(Environment):
    action_count = 3

    def __init__(self, rows: int = 16, cols: int = 16, spawn_prob: float = 0.25, agent_col: int = 1):
        super().__init__()
        if not 0.0 <= spawn_prob <= 1.0:
            raise ValueError("spawn_prob must lie in [0, 1]")
        if not 0 <= agent_col < cols:
            raise ValueError("agent column outside the field")
        self.rows, self.cols = rows, cols
        self.spawn_prob = spawn_prob
        self.agent_col = agent_col
        self.rng = np.random.default_rng(0)
        self.agent_row = rows // 2
        self.hazards = np.zeros((rows, cols), dtype=bool)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.rows * CELL + 2 * MARGIN, self.cols * CELL + 2 * MARGIN, 3)

    def _reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.agent_row = self.rows // 2
        self.hazards = np.zeros((self.rows, self.cols), dtype=bool)
        return self.render()

    def _advance_hazards(self) -> None:
        self.hazards[:, :-1] = self.hazards[:, 1:]
        self.hazards[:, -1] = False
        if self.rng.random() < self.spawn_prob:
            self.hazards[int(self.rng.integers(self.rows)), -1] = True

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if action == 1:
            self.agent_row = max(self.agent_row - 1, 0)
        elif action == 2:
            self.agent_row = min(self.agent_row + 1, self.rows - 1)
        # a hazard in the cell the agent just entered, or one sliding into it, is a hit
        hit = self.hazards[self.agent_row, self.agent_col]
        self._advance_hazards()
        hit = hit or self.hazards[self.agent_row, self.agent_col]
        if hit:
            return self.render(), 0.0, True
        return self.render(), SURVIVAL_REWARD, False

    def render(self) -> np.ndarray:
        img = np.empty(self.frame_shape, dtype=np.uint8)
        img[...] = _BORDER
        field = np.zeros((self.rows, self.cols, 3), dtype=np.uint8)
        field[self.hazards] = _HAZARD
        field[self.agent_row, self.agent_col] = _AGENT
        img[MARGIN:-MARGIN, MARGIN:-MARGIN] = np.repeat(np.repeat(field, CELL, axis=0), CELL, axis=1)
        return img
