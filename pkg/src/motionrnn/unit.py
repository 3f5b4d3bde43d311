"""The motion unit: encode the hidden state, learn transient offsets, keep a
momentum estimate, warp the encoded features along the composed offsets,
decode, and gate against the unit input.

Offset fields have 2k^2 channels: the first k^2 are vertical displacements
(one per neighborhood tap), the last k^2 horizontal, both in pixels of the
encoded (half) resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import TransientLearnerParams, TrendConfig, init_transient, transient_step, trend_update
from .nn import Conv2dParams, Deconv2dParams, conv2d, conv_transpose2d, init_conv, init_deconv
from .tensor import Tensor, _accum, _record, _result, concat_channels, sigmoid


@dataclass
class MotionState:
    f: Tensor          # composed motion filter from the previous step
    d: Tensor | None   # trending momentum (None when the trend path is disabled)

    def detach(self) -> "MotionState":
        return MotionState(self.f.detach(), None if self.d is None else self.d.detach())


@dataclass
class MotionGruParams:
    encoder: Conv2dParams                       # C -> C/4, kernel 4, stride 2
    transient: TransientLearnerParams | None    # None when transient variation is disabled
    w_hm: Conv2dParams                          # C/4 -> k^2, 1x1 (tap mask)
    squeeze: Conv2dParams                       # C/4*k^2 -> C/4, 1x1
    up: Deconv2dParams                          # C/4 -> C, kernel 4, stride 2
    w_hg: Conv2dParams                          # 2C -> C, 1x1 (output gate)
    trend: TrendConfig
    k: int
    d0: Tensor | None                           # learned initial momentum per offset channel


@dataclass
class MotionGruTrace:
    """Intermediates of one forward call, for inspection and tests."""
    f_prime: Tensor | None
    d: Tensor | None
    f: Tensor
    m: Tensor
    warped: Tensor
    g: Tensor


def init_motion_gru(rng: np.random.Generator, channels: int, k: int = 3, alpha: float = 0.5,
                    enable_tv: bool = True, enable_tm: bool = True,
                    dtype=np.float32) -> MotionGruParams:
    if channels % 4:
        raise ValueError(f"channel count {channels} not divisible by 4")
    cq = channels // 4
    kk = k * k
    return MotionGruParams(
        encoder=init_conv(rng, cq, channels, 4, stride=2, padding=1, dtype=dtype),
        transient=init_transient(rng, cq, k, dtype=dtype) if enable_tv else None,
        w_hm=init_conv(rng, kk, cq, 1, dtype=dtype),
        squeeze=init_conv(rng, cq, cq * kk, 1, dtype=dtype),
        up=init_deconv(rng, cq, channels, 4, stride=2, padding=1, dtype=dtype),
        w_hg=init_conv(rng, channels, 2 * channels, 1, dtype=dtype),
        trend=TrendConfig(alpha=alpha),
        k=k,
        d0=Tensor(np.zeros(2 * kk, dtype=dtype), requires_grad=True) if enable_tm else None,
    )


def neighborhood_offsets(k: int) -> list[tuple[int, int]]:
    """Tap displacements of the centered k x k grid, row-major.

    Tap i maps to (floor(i/k) - floor(k/2), i mod k - floor(k/2)), so the
    center tap sits at index (k*k - 1) // 2 and the set enumerates
    {-k//2..k//2}^2 exactly once.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"neighborhood size must be odd and positive, got {k}")
    half = k // 2
    return [(i // k - half, i % k - half) for i in range(k * k)]


def warp(enc_h: Tensor, f: Tensor, k: int) -> Tensor:
    """Bilinear gather of enc_h at offset-displaced tap coordinates.

    Tap i at (m, n) samples enc_h at (m + p_ix - F[i], n + p_iy - F[k^2+i]),
    with coordinates clamped into the frame. Output is tap-last:
    (C, h, w, k^2), batched as (B, C, h, w, k^2). Differentiable in both
    arguments; clamped-out samples get zero offset gradient.
    """
    squeeze = enc_h.ndim == 3
    if squeeze:
        enc_h = enc_h.reshape((1,) + enc_h.shape)
        f = f.reshape((1,) + f.shape)
    B, cq, h, w = enc_h.shape
    kk = k * k
    if f.shape != (B, 2 * kk, h, w):
        raise ValueError(f"offset field shape {f.shape}, expected {(B, 2 * kk, h, w)}")
    taps = np.asarray(neighborhood_offsets(k), dtype=enc_h.dtype)

    x, off = enc_h.data, f.data
    sy = np.arange(h, dtype=x.dtype).reshape(1, 1, h, 1) + taps[:, 0].reshape(1, kk, 1, 1) - off[:, :kk]
    sx = np.arange(w, dtype=x.dtype).reshape(1, 1, 1, w) + taps[:, 1].reshape(1, kk, 1, 1) - off[:, kk:]
    in_y = (sy >= 0) & (sy <= h - 1)
    in_x = (sx >= 0) & (sx <= w - 1)
    syc = np.clip(sy, 0, h - 1)
    sxc = np.clip(sx, 0, w - 1)
    y0 = np.clip(np.floor(syc), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(sxc), 0, max(w - 2, 0))
    wy = (syc - y0).reshape(B, 1, kk, h * w)
    wx = (sxc - x0).reshape(B, 1, kk, h * w)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    hw = h * w
    # second corner collapses onto the first for 1-wide dims (weight is 0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    i00 = (y0 * w + x0).reshape(B, 1, kk, hw)
    i01 = (y0 * w + x1).reshape(B, 1, kk, hw)
    i10 = (y1 * w + x0).reshape(B, 1, kk, hw)
    i11 = (y1 * w + x1).reshape(B, 1, kk, hw)
    ff = x.reshape(B, cq, 1, hw)
    g00 = np.take_along_axis(ff, i00, axis=3)
    g01 = np.take_along_axis(ff, i01, axis=3)
    g10 = np.take_along_axis(ff, i10, axis=3)
    g11 = np.take_along_axis(ff, i11, axis=3)
    out5 = ((1 - wy) * (1 - wx)) * g00 + ((1 - wy) * wx) * g01 \
        + (wy * (1 - wx)) * g10 + (wy * wx) * g11
    data = np.ascontiguousarray(
        out5.reshape(B, cq, kk, h, w).transpose(0, 1, 3, 4, 2))

    out, track = _result(data, enc_h, f, op="warp")
    if track:
        mask_y = in_y.reshape(B, 1, kk, hw).astype(x.dtype)
        mask_x = in_x.reshape(B, 1, kk, hw).astype(x.dtype)

        def bw(g, enc_h=enc_h, f=f):
            gt = np.ascontiguousarray(g.transpose(0, 1, 4, 2, 3)).reshape(B, cq, kk, hw)
            if enc_h.requires_grad:
                base = (np.arange(B).reshape(B, 1, 1, 1) * cq
                        + np.arange(cq).reshape(1, cq, 1, 1)) * hw
                keys = np.concatenate([
                    (base + i00).ravel(), (base + i01).ravel(),
                    (base + i10).ravel(), (base + i11).ravel()])
                vals = np.concatenate([
                    (gt * (1 - wy) * (1 - wx)).ravel(), (gt * (1 - wy) * wx).ravel(),
                    (gt * wy * (1 - wx)).ravel(), (gt * wy * wx).ravel()])
                dx = np.bincount(keys, weights=vals, minlength=B * cq * hw)
                _accum(enc_h, dx.reshape(B, cq, h, w).astype(x.dtype, copy=False))
            if f.requires_grad:
                d_wy = (gt * ((g10 - g00) * (1 - wx) + (g11 - g01) * wx)).sum(axis=1)
                d_wx = (gt * ((g01 - g00) * (1 - wy) + (g11 - g10) * wy)).sum(axis=1)
                dsy = (d_wy * mask_y[:, 0]).reshape(B, kk, h, w)
                dsx = (d_wx * mask_x[:, 0]).reshape(B, kk, h, w)
                # coordinates subtract the offsets, so the sign flips
                _accum(f, np.concatenate([-dsy, -dsx], axis=1))
        _record(out, (enc_h, f), bw)
    return out.reshape(out.shape[1:]) if squeeze else out


def init_motion_state(p: MotionGruParams, batch: int, h2: int, w2: int, dtype=np.float32) -> MotionState:
    """Zero offsets at t=0; the momentum starts from the learned d0 field."""
    kk2 = 2 * p.k * p.k
    f = Tensor(np.zeros((batch, kk2, h2, w2), dtype=dtype))
    if p.d0 is None:
        return MotionState(f=f, d=None)
    zeros = Tensor(np.zeros((batch, kk2, h2, w2), dtype=dtype))
    d = p.d0.reshape((1, kk2, 1, 1)) + zeros
    return MotionState(f=f, d=d)


def motion_gru_forward(h: Tensor, state: MotionState, p: MotionGruParams,
                       h_same_layer_prev: Tensor | None = None):
    """One unit step. Returns (x_out, new_state, trace).

    The gate mixes the decoder output with the unit input; passing
    h_same_layer_prev gates the previous step's hidden instead (the
    cross-time reading), otherwise the current input is used.
    """
    squeeze = h.ndim == 3
    if squeeze:
        h = h.reshape((1,) + h.shape)
        state = MotionState(
            f=state.f.reshape((1,) + state.f.shape),
            d=None if state.d is None else state.d.reshape((1,) + state.d.shape))
        if h_same_layer_prev is not None:
            h_same_layer_prev = h_same_layer_prev.reshape((1,) + h_same_layer_prev.shape)
    B, C, H, W = h.shape
    if C % 4:
        raise ValueError(f"channel count {C} not divisible by 4")
    if H % 2 or W % 2:
        raise ValueError(f"spatial size {H}x{W} must be even")
    cq, kk = C // 4, p.k * p.k

    enc = conv2d(h, p.encoder)  # (B, C/4, H/2, W/2)
    f_prev, d_prev = state.f, state.d

    f_prime = transient_step(enc, f_prev, p.transient) if p.transient is not None else None
    d = trend_update(f_prev, d_prev, p.trend) if d_prev is not None else None
    if f_prime is not None and d is not None:
        f = f_prime + d
    elif f_prime is not None:
        f = f_prime
    elif d is not None:
        f = d
    else:
        raise ValueError("motion unit with both transient and trend paths disabled")

    m = sigmoid(conv2d(enc, p.w_hm))                       # (B, k^2, H/2, W/2)
    h2, w2 = enc.shape[2], enc.shape[3]
    warped = warp(enc, f, p.k)                             # (B, C/4, H/2, W/2, k^2)
    m_tap_last = m.transpose((0, 2, 3, 1)).reshape((B, 1, h2, w2, kk))
    masked = warped * m_tap_last
    folded = masked.transpose((0, 1, 4, 2, 3)).reshape((B, cq * kk, h2, w2))
    dec = conv_transpose2d(conv2d(folded, p.squeeze), p.up)  # (B, C, H, W)

    gated = h if h_same_layer_prev is None else h_same_layer_prev
    g = sigmoid(conv2d(concat_channels(dec, gated), p.w_hg))
    x_out = g * gated + (1.0 - g) * dec

    new_state = MotionState(f=f, d=d)
    trace = MotionGruTrace(f_prime=f_prime, d=d, f=f, m=m, warped=warped, g=g)
    if squeeze:
        x_out = x_out.reshape(x_out.shape[1:])
        new_state = MotionState(
            f=new_state.f.reshape(new_state.f.shape[1:]),
            d=None if new_state.d is None else new_state.d.reshape(new_state.d.shape[1:]))
    return x_out, new_state, trace
