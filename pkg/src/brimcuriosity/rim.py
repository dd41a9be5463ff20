"""One layer of Recurrent Independent Mechanisms.

A step is three phases: attention over a null-augmented input picks the
``n_active`` modules that attend most to real input, those modules advance
their private LSTM cells on their attended input, and then they read from all
modules through a second attention and add the result residually.

States are batched: ``hidden`` and ``cell`` are [B, n, module_size] and each of
the B rows is an independent stream with its own active set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, LstmParams, Module, attention, module_lstm_step


@dataclass
class RimConfig:
    n_modules: int = 4
    n_active: int = 2
    module_size: int = 32
    input_dim: int = 128
    key_size: int = 32
    value_size: int = 64
    comm_key_size: int = 32

    def __post_init__(self):
        if self.n_modules < 1:
            raise ValueError("n_modules must be positive")
        if not 0 <= self.n_active <= self.n_modules:
            raise ValueError(f"n_active={self.n_active} must lie in [0, n_modules={self.n_modules}]")
        for name in ("module_size", "input_dim", "key_size", "value_size", "comm_key_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class LayerState:
    hidden: Tensor  # [B, n, s]
    cell: Tensor  # [B, n, s]
    active: np.ndarray  # [B, m] module indices, ascending per row
    selection_scores: np.ndarray  # [B, n] attention mass on real input rows

    @property
    def batch(self) -> int:
        return self.hidden.shape[0]


def zero_layer_state(cfg: RimConfig, batch: int, dtype=np.float64) -> LayerState:
    shape = (batch, cfg.n_modules, cfg.module_size)
    return LayerState(
        hidden=Tensor(np.zeros(shape, dtype=dtype)),
        cell=Tensor(np.zeros(shape, dtype=dtype)),
        active=np.zeros((batch, 0), dtype=np.int64),
        selection_scores=np.zeros((batch, cfg.n_modules)),
    )


def rank_modules(null_mass: np.ndarray, n_active: int) -> np.ndarray:
    """Top-``n_active`` modules per row by least mass on the null row, ties to lower index."""
    order = np.argsort(null_mass, axis=-1, kind="stable")[..., :n_active]
    return np.sort(order, axis=-1)


def _pair_index(active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    B, m = active.shape
    return np.repeat(np.arange(B), m), active.reshape(-1)


class RimLayer(Module):
    """``source_dims`` lists the width of each group of real input rows."""

    def __init__(self, cfg: RimConfig, rng: np.random.Generator, source_dims: list[int] | None = None, dtype=np.float64):
        self.cfg = cfg
        dims = list(source_dims) if source_dims is not None else [cfg.input_dim]
        self.source_dims = dims
        self.query = Linear(cfg.module_size, cfg.key_size, rng, dtype)
        self.keys = [Linear(d, cfg.key_size, rng, dtype) for d in dims]
        self.values = [Linear(d, cfg.value_size, rng, dtype) for d in dims]
        self.lstm = LstmParams(cfg.value_size, cfg.module_size, rng, n_modules=cfg.n_modules, dtype=dtype)
        self.comm_query = Linear(cfg.module_size, cfg.comm_key_size, rng, dtype)
        self.comm_key = Linear(cfg.module_size, cfg.comm_key_size, rng, dtype)
        self.comm_value = Linear(cfg.module_size, cfg.module_size, rng, dtype)
        self.dtype = dtype

    def initial_state(self, batch: int) -> LayerState:
        return zero_layer_state(self.cfg, batch, self.dtype)

    def select_active(self, state: LayerState, sources: list) -> tuple[np.ndarray, Tensor, Tensor]:
        """Rank modules against ``sources`` (each [B, rows, dim]).

        Returns (active [B, m], attended inputs [B, n, value_size], scores [B, n, 1 + rows]).
        Column 0 of the scores is the null row.
        """
        if len(sources) != len(self.keys):
            raise ValueError(f"expected {len(self.keys)} input sources, got {len(sources)}")
        B = state.batch
        cfg = self.cfg
        q = self.query(state.hidden)
        null_k = Tensor(np.zeros((B, 1, cfg.key_size), dtype=self.dtype))
        null_v = Tensor(np.zeros((B, 1, cfg.value_size), dtype=self.dtype))
        keys = [null_k] + [proj(src) for proj, src in zip(self.keys, sources)]
        vals = [null_v] + [proj(src) for proj, src in zip(self.values, sources)]
        scores, attended = attention(q, ad.concat(keys, axis=1), ad.concat(vals, axis=1))
        active = rank_modules(scores.data[:, :, 0], cfg.n_active)
        return active, attended, scores

    def independent_update(self, state: LayerState, attended: Tensor, active: np.ndarray) -> LayerState:
        """Advance the LSTM cell of each active module; others are carried over untouched."""
        if active.shape[1] == 0:
            return replace(state, active=active)
        idx = _pair_index(active)
        x = ad.getitem(attended, idx)
        h = ad.getitem(state.hidden, idx)
        c = ad.getitem(state.cell, idx)
        h_new, c_new = module_lstm_step(self.lstm, idx[1], x, h, c)
        return replace(
            state,
            hidden=ad.index_put(state.hidden, idx, h_new),
            cell=ad.index_put(state.cell, idx, c_new),
            active=active,
        )

    def communicate(self, state: LayerState, active: np.ndarray) -> LayerState:
        """Active modules attend over all modules and add the result to their hidden state."""
        B, m = active.shape
        if m == 0:
            return state
        idx = _pair_index(active)
        s = self.cfg.module_size
        h_act = ad.reshape(ad.getitem(state.hidden, idx), (B, m, s))
        _, update = attention(self.comm_query(h_act), self.comm_key(state.hidden), self.comm_value(state.hidden))
        h_new = ad.reshape(h_act + update, (B * m, s))
        return replace(state, hidden=ad.index_put(state.hidden, idx, h_new))

    def step(self, state: LayerState, sources: list) -> LayerState:
        active, attended, scores = self.select_active(state, sources)
        new = self.independent_update(state, attended, active)
        new = self.communicate(new, active)
        new.selection_scores = 1.0 - scores.data[:, :, 0]
        return new
