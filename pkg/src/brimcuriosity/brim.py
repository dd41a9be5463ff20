"""Stacked RIM layers with bottom-up (same step) and top-down (previous step) attention."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module
from .rim import LayerState, RimConfig, RimLayer


@dataclass
class BrimConfig:
    layers: list[RimConfig] = field(default_factory=lambda: [RimConfig()])

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("a stack needs at least one layer")

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass
class StackState:
    layers: list[LayerState]

    @property
    def batch(self) -> int:
        return self.layers[0].batch


class BrimStack(Module):
    """Layer l reads the layer below at time t (the embedding for l = 0) and the
    layer above at time t-1; the top layer reads only from below."""

    def __init__(self, cfg: BrimConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        layers = []
        for l, lc in enumerate(cfg.layers):
            dims = [lc.input_dim if l == 0 else cfg.layers[l - 1].module_size]
            if l + 1 < cfg.depth:
                dims.append(cfg.layers[l + 1].module_size)
            layers.append(RimLayer(lc, rng, source_dims=dims, dtype=dtype))
        self.layers = layers

    def initial_state(self, batch: int) -> StackState:
        return StackState([layer.initial_state(batch) for layer in self.layers])

    def stack_step(self, state: StackState, embedding) -> StackState:
        """Advance every layer one step on ``embedding`` ([B, input_dim])."""
        x = ad.as_tensor(embedding)
        B = state.batch
        if x.shape != (B, self.cfg.layers[0].input_dim):
            raise ad.ShapeError(f"stack_step: embedding {x.shape}, expected {(B, self.cfg.layers[0].input_dim)}")
        new: list[LayerState] = []
        for l, layer in enumerate(self.layers):
            lower = ad.reshape(x, (B, 1, x.shape[1])) if l == 0 else new[l - 1].hidden
            sources = [lower]
            if l + 1 < len(self.layers):
                sources.append(state.layers[l + 1].hidden)
            new.append(layer.step(state.layers[l], sources))
        return StackState(new)

    def read_concat(self, state: StackState, layer: int = -1) -> Tensor:
        """All module hidden vectors of ``layer`` in module order, as [B, n * module_size]."""
        h = state.layers[layer].hidden
        B, n, s = h.shape
        return ad.reshape(h, (B, n * s))

    def output_size(self, layer: int = -1) -> int:
        lc = self.cfg.layers[layer]
        return lc.n_modules * lc.module_size


def reset_rows(state: StackState, mask: np.ndarray) -> StackState:
    """Zero the recurrent state of the streams where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return state
    out = []
    for ls in state.layers:
        m = np.broadcast_to(mask[:, None, None], ls.hidden.shape)
        zeros = Tensor(np.zeros(ls.hidden.shape, dtype=ls.hidden.dtype))
        out.append(
            replace(
                ls,
                hidden=ad.where(m, zeros, ls.hidden),
                cell=ad.where(m, zeros, ls.cell),
                selection_scores=np.where(mask[:, None], 0.0, ls.selection_scores),
            )
        )
    return StackState(out)


def detach_state(state: StackState) -> StackState:
    return StackState([replace(ls, hidden=ls.hidden.detach(), cell=ls.cell.detach()) for ls in state.layers])


def select_rows(state: StackState, rows: np.ndarray) -> StackState:
    """Constant sub-batch of ``state`` (used to replay a subset of streams)."""
    return StackState(
        [
            LayerState(
                hidden=Tensor._wrap(ls.hidden.data[rows].copy()),
                cell=Tensor._wrap(ls.cell.data[rows].copy()),
                active=ls.active[rows].copy(),
                selection_scores=ls.selection_scores[rows].copy(),
            )
            for ls in state.layers
        ]
    )
