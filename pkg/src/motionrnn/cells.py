"""Recurrent building blocks: ConvLSTM backbone, transient-variation ConvGRU,
and the trending-momentum update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2dParams, conv2d, init_conv
from .tensor import Tensor, concat_channels, narrow, sigmoid, tanh


@dataclass
class LayerState:
    h: Tensor  # hidden
    c: Tensor  # cell memory

    def detach(self) -> "LayerState":
        return LayerState(self.h.detach(), self.c.detach())


@dataclass
class ConvLstmParams:
    """One gate convolution over Concat(x, h) producing 4*Ch channels (i, f, g, o)."""
    gates: Conv2dParams
    hidden: int


def init_convlstm(rng: np.random.Generator, cin: int, hidden: int,
                  kernel: int = 5, dtype=np.float32) -> ConvLstmParams:
    gates = init_conv(rng, 4 * hidden, cin + hidden, kernel,
                      stride=1, padding=kernel // 2, dtype=dtype)
    return ConvLstmParams(gates=gates, hidden=hidden)


def convlstm_step(x: Tensor, prev: LayerState, p: ConvLstmParams):
    """Returns (new_state, o_gate). The output gate is exposed so the caller
    can reuse it for the highway term."""
    if x.shape[-2:] != prev.h.shape[-2:]:
        raise ValueError(f"spatial mismatch: input {x.shape} vs hidden {prev.h.shape}")
    z = conv2d(concat_channels(x, prev.h), p.gates)
    ch = p.hidden
    i = sigmoid(narrow(z, -3, 0, ch))
    f = sigmoid(narrow(z, -3, ch, ch))
    g = tanh(narrow(z, -3, 2 * ch, ch))
    o = sigmoid(narrow(z, -3, 3 * ch, ch))
    c = f * prev.c + i * g
    h = o * tanh(c)
    return LayerState(h, c), o


@dataclass
class TransientLearnerParams:
    """1x1 ConvGRU gates mapping (C/4 + 2k^2) channels -> 2k^2."""
    wu: Conv2dParams  # update gate
    wr: Conv2dParams  # reset gate
    wz: Conv2dParams  # candidate


def init_transient(rng: np.random.Generator, cq: int, k: int, dtype=np.float32) -> TransientLearnerParams:
    cin = cq + 2 * k * k
    cout = 2 * k * k
    return TransientLearnerParams(
        wu=init_conv(rng, cout, cin, 1, dtype=dtype),
        wr=init_conv(rng, cout, cin, 1, dtype=dtype),
        wz=init_conv(rng, cout, cin, 1, dtype=dtype),
    )


def transient_step(enc_h: Tensor, f_prev: Tensor, p: TransientLearnerParams) -> Tensor:
    """One ConvGRU update of the instantaneous offset field."""
    xf = concat_channels(enc_h, f_prev)
    u = sigmoid(conv2d(xf, p.wu))
    r = sigmoid(conv2d(xf, p.wr))
    z = tanh(conv2d(concat_channels(enc_h, r * f_prev), p.wz))
    return u * z + (1.0 - u) * f_prev


@dataclass
class TrendConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


def trend_update(f_prev: Tensor, d_prev: Tensor, cfg: TrendConfig) -> Tensor:
    """Exponential moving estimate of the offset field: D + alpha*(F - D)."""
    if f_prev.shape != d_prev.shape:
        raise ValueError(f"trend shape mismatch: {f_prev.shape} vs {d_prev.shape}")
    return d_prev + cfg.alpha * (f_prev - d_prev)
