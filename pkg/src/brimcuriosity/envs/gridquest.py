"""GridQuest: a 9x9 tile maze with a key, a locked door, lava and a goal.

Tiles (layout characters):
  ``#`` wall, ``.`` floor, ``L`` lava (entering ends the episode),
  ``K`` key (picked up on entry), ``D`` door (passable only while holding the
  key, which it consumes), ``G`` goal (+1 and the episode ends),
  ``S`` candidate start cell (floor).

The agent moves one tile every ``move_period`` raw frames; with the default
period of 4 and a 4-frame skip, every agent decision moves it one tile.
"""

from __future__ import annotations

import numpy as np

from .base import Environment

DEFAULT_LAYOUT = (
    "LLLLLLLLL",
    "L...L..GL",
    "L.L.L.L.L",
    "L.L.L.L.L",
    "LS..D...L",
    "L.L.L.L.L",
    "L.L.L.L.L",
    "LK..L...L",
    "LLLLLLLLL",
)

TILE = 18
MARGIN = 3

# up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

_COLORS = {
    "#": (96, 96, 96),
    ".": (0, 0, 0),
    "S": (0, 0, 0),
    "L": (230, 60, 20),
    "K": (0, 0, 0),
    "D": (150, 80, 30),
    "G": (40, 200, 60),
}
_KEY = (250, 210, 40)
_AGENT = (70, 130, 255)


def validate_layout(layout) -> None:
    """Reject layouts that are malformed or whose goal cannot be reached from every start."""
    rows = [str(r) for r in layout]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError("layout must be a non-empty rectangle")
    cells = "".join(rows)
    if set(cells) - set(_COLORS):
        raise ValueError(f"unknown tiles {set(cells) - set(_COLORS)}")
    if cells.count("G") != 1 or "S" not in cells:
        raise ValueError("layout needs exactly one goal and at least one start")
    if cells.count("K") < cells.count("D"):
        raise ValueError("every door needs a key")
    starts = [(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == "S"]
    for start in starts:
        if not _goal_reachable(rows, start):
            raise ValueError(f"goal unreachable from start {start}")


def _goal_reachable(rows, start) -> bool:
    # search over (position, keys held, opened doors, taken keys)
    frontier = [(start, 0, frozenset(), frozenset())]
    seen = set(frontier)
    while frontier:
        (r, c), keys, opened, taken = frontier.pop()
        for dr, dc in MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < len(rows) and 0 <= nc < len(rows[0])):
                continue
            ch = rows[nr][nc]
            k, o, t = keys, opened, taken
            if ch in "#L":
                continue
            if ch == "G":
                return True
            if ch == "D" and (nr, nc) not in o:
                if not k:
                    continue
                k, o = k - 1, o | {(nr, nc)}
            if ch == "K" and (nr, nc) not in t:
                k, t = k + 1, t | {(nr, nc)}
            nxt = ((nr, nc), k, o, t)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


class GridQuestEnv(Environment):
    action_count = 4

    def __init__(self, layout=DEFAULT_LAYOUT, move_period: int = 4):
        super().__init__()
        validate_layout(layout)
        self.layout = tuple(str(r) for r in layout)
        self.rows, self.cols = len(self.layout), len(self.layout[0])
        self.move_period = move_period
        self.starts = [(r, c) for r in range(self.rows) for c in range(self.cols) if self.layout[r][c] == "S"]
        self._base = self._render_static()
        self.pos = self.starts[0]
        self.keys = 0
        self.opened: frozenset = frozenset()
        self.taken: frozenset = frozenset()
        self.frame_index = 0

    # ------------------------------------------------------------ dynamics

    def _reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.pos = self.starts[int(rng.integers(len(self.starts)))]
        self.keys = 0
        self.opened = frozenset()
        self.taken = frozenset()
        self.frame_index = 0
        return self.render()

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        moves = self.frame_index % self.move_period == 0
        self.frame_index += 1
        reward, done = 0.0, False
        if moves:
            reward, done = self._move(action)
        return self.render(), reward, done

    def _move(self, action: int) -> tuple[float, bool]:
        dr, dc = MOVES[action]
        r, c = self.pos[0] + dr, self.pos[1] + dc
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            return 0.0, False  # the outside behaves like a wall
        ch = self.layout[r][c]
        if ch == "#":
            return 0.0, False
        if ch == "D" and (r, c) not in self.opened:
            if not self.keys:
                return 0.0, False
            self.keys -= 1
            self.opened = self.opened | {(r, c)}
        self.pos = (r, c)
        if ch == "K" and (r, c) not in self.taken:
            self.keys += 1
            self.taken = self.taken | {(r, c)}
        if ch == "L":
            return 0.0, True
        if ch == "G":
            return 1.0, True
        return 0.0, False

    def state_key(self):
        return (self.pos, self.keys, self.opened, self.taken)

    # ------------------------------------------------------------ rendering

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.rows * TILE + 2 * MARGIN, self.cols * TILE + 2 * MARGIN, 3)

    def _render_static(self) -> np.ndarray:
        img = np.zeros(self.frame_shape, dtype=np.uint8)
        for r, row in enumerate(self.layout):
            for c, ch in enumerate(row):
                img[self._tile(r, c)] = _COLORS[ch]
        return img

    def _tile(self, r: int, c: int, inset: int = 0):
        y, x = MARGIN + r * TILE + inset, MARGIN + c * TILE + inset
        return slice(y, y + TILE - 2 * inset), slice(x, x + TILE - 2 * inset)

    def render(self) -> np.ndarray:
        """Frame for the current state; a pure function of that state."""
        img = self._base.copy()
        for r, c in self.opened:
            img[self._tile(r, c)] = _COLORS["."]
        for r, row in enumerate(self.layout):
            for c, ch in enumerate(row):
                if ch == "K" and (r, c) not in self.taken:
                    img[self._tile(r, c, inset=5)] = _KEY
        img[self._tile(*self.pos, inset=2)] = _AGENT
        if self.keys:
            img[self._tile(*self.pos, inset=7)] = _KEY
        return img
