"""Neural building blocks on top of :mod:`brimcuriosity.autodiff`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, make_multi_op, make_op


class Module:
    """Parameter container. Parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


def zeros_param(shape, dtype=np.float64) -> Tensor:
    return ad.parameter(np.zeros(shape, dtype=dtype))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = uniform_init(rng, (out_features, in_features), in_features, dtype)
        self.bias = zeros_param((out_features,), dtype)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


# ---------------------------------------------------------------- attention


def attention(queries, keys, values) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention.

    Accepts [q, d], [r, d], [r, v] or the batched [B, q, d], [B, r, d], [B, r, v].
    Returns ``(scores, result)`` with ``scores = softmax(Q K^T / sqrt(d))`` and
    ``result = scores @ V``; both are differentiable.
    """
    q, k, v = ad.as_tensor(queries), ad.as_tensor(keys), ad.as_tensor(values)
    if not (q.ndim == k.ndim == v.ndim) or q.ndim not in (2, 3):
        raise ShapeError(f"attention: expected matching 2-D or 3-D inputs, got {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    if d == 0:
        raise ShapeError("attention: key/query dimension is zero")
    if k.shape[-1] != d:
        raise ShapeError(f"attention: query dim {d} != key dim {k.shape[-1]}")
    if k.shape[-2] < 1 or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: keys {k.shape} and values {v.shape} need the same number (>=1) of rows")
    if q.ndim == 3 and not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"attention: batch sizes differ {q.shape[0]}, {k.shape[0]}, {v.shape[0]}")

    qd, kd, vd = q.data, k.data, v.data
    scale = 1.0 / math.sqrt(d)
    logits = np.matmul(qd, np.swapaxes(kd, -1, -2)) * scale
    scores = ad._softmax_np(logits, -1)
    result = np.matmul(scores, vd)

    def bw(grads):
        g_scores, g_result = grads
        g_v = np.matmul(np.swapaxes(scores, -1, -2), g_result)
        g_s = np.matmul(g_result, np.swapaxes(vd, -1, -2)) + g_scores
        g_logits = scores * (g_s - np.sum(g_s * scores, axis=-1, keepdims=True)) * scale
        g_q = np.matmul(g_logits, kd)
        g_k = np.matmul(np.swapaxes(g_logits, -1, -2), qd)
        return g_q, g_k, g_v

    s, r = make_multi_op((scores, result), (q, k, v), bw)
    return s, r


# ---------------------------------------------------------------- LSTM


class LstmParams(Module):
    """Gate weights for ``n_modules`` independent LSTM cells.

    ``weight[k]`` maps (input ++ hidden) to the four gate pre-activations in the
    order input, forget, output, candidate.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, n_modules: int = 1, dtype=np.float64):
        fan_in = input_size + hidden_size
        self.weight = uniform_init(rng, (n_modules, fan_in, 4 * hidden_size), fan_in, dtype)
        b = np.zeros((n_modules, 4 * hidden_size), dtype=dtype)
        b[:, hidden_size : 2 * hidden_size] = 1.0
        self.bias = ad.parameter(b)
        self.input_size = input_size
        self.hidden_size = hidden_size

    @property
    def n_modules(self) -> int:
        return self.weight.shape[0]


def module_lstm_step(params: LstmParams, module_idx: np.ndarray, x, h, c) -> tuple[Tensor, Tensor]:
    """Row ``p`` of x/h/c is advanced by the private cell ``module_idx[p]``.

    x: [P, input], h and c: [P, hidden]. Cells not named in ``module_idx``
    take no part in the computation and receive no gradient.
    """
    x, h, c = ad.as_tensor(x), ad.as_tensor(h), ad.as_tensor(c)
    s = params.hidden_size
    module_idx = np.asarray(module_idx, dtype=np.int64)
    P = module_idx.shape[0]
    if x.shape != (P, params.input_size) or h.shape != (P, s) or c.shape != (P, s):
        raise ShapeError(
            f"lstm: expected x[{P},{params.input_size}], h/c[{P},{s}], got {x.shape}, {h.shape}, {c.shape}"
        )
    W, b = params.weight, params.bias
    Wd, bd = W.data, b.data
    xh = np.concatenate([x.data, h.data], axis=1)
    z = np.empty((P, 4 * s), dtype=xh.dtype)
    groups = [(k, np.flatnonzero(module_idx == k)) for k in np.unique(module_idx)]
    for k, rows in groups:
        z[rows] = xh[rows] @ Wd[k] + bd[k]
    sg = ad._sigmoid(z[:, : 3 * s])
    i, f, o = sg[:, :s], sg[:, s : 2 * s], sg[:, 2 * s :]
    g = np.tanh(z[:, 3 * s :])
    cd = c.data
    c_new = f * cd + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(grads):
        gh, gc = grads
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * cd * f * (1.0 - f), gh * tc * o * (1.0 - o), dc * i * (1.0 - g * g)], axis=1
        )
        dxh = np.empty_like(xh)
        dW = np.zeros_like(Wd) if W.requires_grad else None
        db = np.zeros_like(bd) if b.requires_grad else None
        for k, rows in groups:
            dzk = dz[rows]
            dxh[rows] = dzk @ Wd[k].T
            if dW is not None:
                dW[k] = xh[rows].T @ dzk
            if db is not None:
                db[k] = dzk.sum(axis=0)
        nx = params.input_size
        return dxh[:, :nx], dxh[:, nx:], dc * f, dW, db

    h_out, c_out = make_multi_op((h_new, c_new), (x, h, c, W, b), bw)
    return h_out, c_out


def lstm_step(params: LstmParams, x, h, c) -> tuple[Tensor, Tensor]:
    """Single LSTM cell step; accepts 1-D vectors or [B, .] batches."""
    if params.n_modules != 1:
        raise ShapeError("lstm_step needs single-cell params; use module_lstm_step for module groups")
    x, h, c = ad.as_tensor(x), ad.as_tensor(h), ad.as_tensor(c)
    if x.ndim == 1:
        hn, cn = lstm_step(params, ad.reshape(x, (1, -1)), ad.reshape(h, (1, -1)), ad.reshape(c, (1, -1)))
        return ad.reshape(hn, (-1,)), ad.reshape(cn, (-1,))
    idx = np.zeros(x.shape[0], dtype=np.int64)
    return module_lstm_step(params, idx, x, h, c)


# ---------------------------------------------------------------- convolution


class Conv2dParams(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator, dtype=np.float64):
        fan_in = in_channels * kernel * kernel
        self.kernels = uniform_init(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
        self.bias = zeros_param((out_channels,), dtype)
        self.stride = int(stride)

    def __call__(self, img) -> Tensor:
        return conv2d(self, img)


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def conv2d(params: Conv2dParams, img) -> Tensor:
    """Valid cross-correlation of [C, H, W] or [N, C, H, W] input."""
    x = ad.as_tensor(img)
    if x.ndim == 3:
        y = conv2d(params, ad.reshape(x, (1,) + x.shape))
        return ad.reshape(y, y.shape[1:])
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected [C,H,W] or [N,C,H,W], got {x.shape}")
    O, C, kh, kw = params.kernels.shape
    N, Cx, H, Wd = x.shape
    if Cx != C:
        raise ShapeError(f"conv2d: input has {Cx} channels, kernels expect {C}")
    if kh > H or kw > Wd:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{Wd}")
    if kh == kw and kh % params.stride == 0:
        return _conv2d_blocked(params, x)
    return _conv2d_im2col(params, x)


def _conv2d_im2col(params: Conv2dParams, x: Tensor) -> Tensor:
    """General path: unfold every receptive field into a row, then one matmul."""
    Wt, bt = params.kernels, params.bias
    O, C, kh, kw = Wt.shape
    s = params.stride
    N, _, H, Wd = x.shape
    Ho, Wo = conv_output_size(H, kh, s), conv_output_size(Wd, kw, s)
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    wf = Wt.data.reshape(O, -1)
    y = cols @ wf.T
    y += bt.data
    out = y.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(Wt.shape) if Wt.requires_grad else None
        gb = g2.sum(axis=0) if bt.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wf).reshape(N, Ho, Wo, C, kh, kw)
            gx = np.zeros(x.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s] += dcols[:, :, :, :, i, j].transpose(
                        0, 3, 1, 2
                    )
        return gx, gw, gb

    return make_op(np.ascontiguousarray(out), (x, Wt, bt), bw)


def _conv2d_blocked(params: Conv2dParams, x: Tensor) -> Tensor:
    """Fast path for square kernels whose size is a multiple of the stride.

    The input is cut into stride x stride blocks (space-to-depth), which turns
    the convolution into a (k/s) x (k/s) stride-1 convolution over blocks. One
    matmul produces every block's contribution to every kernel offset, and the
    output is the sum of q*q shifted slices; no receptive-field copy is made.
    """
    Wt, bt = params.kernels, params.bias
    O, C, k, _ = Wt.shape
    s = params.stride
    q = k // s
    N, _, H, Wd = x.shape
    Ho, Wo = conv_output_size(H, k, s), conv_output_size(Wd, k, s)
    Hb, Wb = Ho + q - 1, Wo + q - 1
    xc = x.data[:, :, : Hb * s, : Wb * s]
    blocks = xc.reshape(N, C, Hb, s, Wb, s).transpose(0, 2, 4, 1, 3, 5).reshape(N * Hb * Wb, C * s * s)
    # wr[(c, u, v), (a, b, o)] = W[o, c, a*s + u, b*s + v]
    wr = Wt.data.reshape(O, C, q, s, q, s).transpose(1, 3, 5, 2, 4, 0).reshape(C * s * s, q * q * O)
    z = (blocks @ wr).reshape(N, Hb, Wb, q, q, O)
    y = np.empty((N, Ho, Wo, O), dtype=z.dtype)
    y[...] = bt.data
    for a in range(q):
        for b in range(q):
            y += z[:, a : a + Ho, b : b + Wo, a, b]
    out = np.ascontiguousarray(y.transpose(0, 3, 1, 2))

    def bw(g):
        gy = g.transpose(0, 2, 3, 1)
        gb = gy.sum(axis=(0, 1, 2)) if bt.requires_grad else None
        gz = np.zeros((N, Hb, Wb, q, q, O), dtype=g.dtype)
        for a in range(q):
            for b in range(q):
                gz[:, a : a + Ho, b : b + Wo, a, b] = gy
        gz = gz.reshape(N * Hb * Wb, q * q * O)
        gw = None
        if Wt.requires_grad:
            gwr = blocks.T @ gz
            gw = gwr.reshape(C, s, s, q, q, O).transpose(5, 0, 3, 1, 4, 2).reshape(Wt.shape)
        gx = None
        if x.requires_grad:
            gblocks = (gz @ wr.T).reshape(N, Hb, Wb, C, s, s).transpose(0, 3, 1, 4, 2, 5).reshape(N, C, Hb * s, Wb * s)
            if gblocks.shape == x.shape:
                gx = gblocks
            else:
                gx = np.zeros(x.shape, dtype=g.dtype)
                gx[:, :, : Hb * s, : Wb * s] = gblocks
        return gx, gw, gb

    return make_op(out, (x, Wt, bt), bw)


# ---------------------------------------------------------------- optimisation


class Adam:
    """Adaptive-moment optimizer; updates ``param.data`` in place from ``param.grad``."""

    def __init__(self, params, lr: float = 2.5e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
