"""Layer primitives: 2-D convolution, transposed convolution, space-to-depth.

Convolution here means cross-correlation (no kernel flip). The forward path
lowers to im2col plus one batched GEMM; the input-gradient path reuses the
same machinery on a zero-stuffed gradient, which also serves directly as the
transposed-convolution forward (the two ops are exact adjoints by
construction). Tensors are (B, C, H, W); a leading batch axis is added and
stripped for 3-D inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _record, _result


@dataclass
class Conv2dParams:
    weight: Tensor  # (Cout, Cin, kh, kw)
    bias: Tensor    # (Cout,)
    stride: int = 1
    padding: int = 0


@dataclass
class Deconv2dParams:
    weight: Tensor  # (Cin, Cout, kh, kw)
    bias: Tensor    # (Cout,)
    stride: int = 1
    padding: int = 0


def init_conv(rng: np.random.Generator, cout: int, cin: int, k: int,
              stride: int = 1, padding: int = 0, dtype=np.float32) -> Conv2dParams:
    """Uniform +-sqrt(1/(Cin*kh*kw)) weights, zero bias."""
    bound = float(np.sqrt(1.0 / (cin * k * k)))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    return Conv2dParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
        stride=stride, padding=padding,
    )


def init_deconv(rng: np.random.Generator, cin: int, cout: int, k: int,
                stride: int = 1, padding: int = 0, dtype=np.float32) -> Deconv2dParams:
    bound = float(np.sqrt(1.0 / (cin * k * k)))
    w = rng.uniform(-bound, bound, size=(cin, cout, k, k)).astype(dtype)
    return Deconv2dParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
        stride=stride, padding=padding,
    )


# ---------------------------------------------------------------------------
# raw numpy kernels (shared by conv2d, conv_transpose2d and their backwards)

def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int):
    """(B,C,Hp,Wp) -> (B, C*kh*kw, Ho*Wo) patch matrix (one copy)."""
    B, C, H, W = xp.shape
    Ho = (H - kh) // s + 1
    Wo = (W - kw) // s + 1
    sb, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (B, C, kh, kw, Ho, Wo), (sb, sc, sh, sw, sh * s, sw * s))
    return win.reshape(B, C * kh * kw, Ho * Wo), Ho, Wo


def _corr(x: np.ndarray, w: np.ndarray, s: int, p: int, want_col: bool = False):
    """Cross-correlate x (B,Ci,H,W) with w (Co,Ci,kh,kw)."""
    Co, Ci, kh, kw = w.shape
    B = x.shape[0]
    if kh == 1 and kw == 1 and s == 1 and p == 0:
        col = x.reshape(B, Ci, -1)
        out = np.matmul(w.reshape(Co, Ci), col)
        return out.reshape(B, Co, x.shape[2], x.shape[3]), (col if want_col else None)
    xp = _pad2d(x, p)
    col, Ho, Wo = _im2col(xp, kh, kw, s)
    out = np.matmul(w.reshape(Co, -1), col).reshape(B, Co, Ho, Wo)
    return out, (col if want_col else None)


def _corr_dw(col: np.ndarray, dout: np.ndarray, wshape) -> np.ndarray:
    B, Co = dout.shape[:2]
    d = np.tensordot(dout.reshape(B, Co, -1), col, axes=([0, 2], [0, 2]))
    return d.reshape(wshape)


def _corr_dx(dout: np.ndarray, w: np.ndarray, s: int, p: int, out_hw) -> np.ndarray:
    """Adjoint of _corr: scatter dout back through w onto an (out_hw) grid.

    Doubles as the forward of conv_transpose2d.
    """
    Co, Ci, kh, kw = w.shape
    B, _, Ho, Wo = dout.shape
    H, W = out_hw
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    if s == 1:
        # full correlation with the flipped kernel, no stuffing needed
        dx, _ = _corr(dout, wt, 1, kh - 1 - p, False)
        return dx
    # Stuff dout onto the stride grid. The buffer spans every input position
    # the kernel can touch (H + 2p - k + 1), which can exceed (Ho-1)s + 1
    # when the conv dropped a remainder; those trailing taps still get grad.
    st = np.zeros((B, Co, H + 2 * p - kh + 1, W + 2 * p - kw + 1), dout.dtype)
    st[:, :, ::s, ::s][:, :, :Ho, :Wo] = dout
    core, _ = _corr(st, wt, 1, kh - 1 - p, False)
    return core


# ---------------------------------------------------------------------------
# tape-aware ops

def _batched(x: Tensor):
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected 3-D or 4-D input, got shape {x.shape}")


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    xb, squeeze = _batched(x)
    w, b, s, pad = p.weight, p.bias, p.stride, p.padding
    Co, Ci, kh, kw = w.shape
    if xb.shape[1] != Ci:
        raise ValueError(f"conv2d channel mismatch: input {xb.shape[1]}, weight wants {Ci}")
    Ho = (xb.shape[2] + 2 * pad - kh) // s + 1
    Wo = (xb.shape[3] + 2 * pad - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d output size {Ho}x{Wo} is empty")
    track_hint = xb.requires_grad or w.requires_grad or b.requires_grad
    data, col = _corr(xb.data, w.data, s, pad, want_col=track_hint)
    data += b.data.reshape(1, Co, 1, 1)
    out, track = _result(data, xb, w, b, op="conv2d")
    if track:
        in_hw = xb.shape[2:]
        def bw(g, xb=xb, w=w, b=b, col=col, s=s, pad=pad, in_hw=in_hw):
            if b.requires_grad:
                _accum(b, g.sum(axis=(0, 2, 3)))
            if w.requires_grad:
                _accum(w, _corr_dw(col, g, w.data.shape))
            if xb.requires_grad:
                _accum(xb, _corr_dx(g, w.data, s, pad, in_hw))
        _record(out, (xb, w, b), bw)
    return out.reshape(out.shape[1:]) if squeeze else out


def conv_transpose2d(x: Tensor, p: Deconv2dParams) -> Tensor:
    xb, squeeze = _batched(x)
    w, b, s, pad = p.weight, p.bias, p.stride, p.padding
    Cin, Cout, kh, kw = w.shape
    if xb.shape[1] != Cin:
        raise ValueError(f"conv_transpose2d channel mismatch: input {xb.shape[1]}, weight wants {Cin}")
    H = (xb.shape[2] - 1) * s - 2 * pad + kh
    W = (xb.shape[3] - 1) * s - 2 * pad + kw
    data = _corr_dx(xb.data, w.data, s, pad, (H, W))
    data += b.data.reshape(1, Cout, 1, 1)
    out, track = _result(data, xb, w, b, op="conv_transpose2d")
    if track:
        def bw(g, xb=xb, w=w, b=b, s=s, pad=pad):
            if b.requires_grad:
                _accum(b, g.sum(axis=(0, 2, 3)))
            need_col = w.requires_grad
            dx, col = _corr(g, w.data, s, pad, want_col=need_col)
            if xb.requires_grad:
                _accum(xb, dx)
            if need_col:
                # adjoint pairing swaps the roles of input and gradient
                _accum(w, _corr_dw(col, xb.data, w.data.shape))
        _record(out, (xb, w, b), bw)
    return out.reshape(out.shape[1:]) if squeeze else out


def space_to_depth(x: Tensor, patch: int) -> Tensor:
    """Rearrange p x p spatial blocks into channels; exact inverse of depth_to_space."""
    if patch == 1:
        return x
    xb, squeeze = _batched(x)
    B, C, H, W = xb.shape
    if H % patch or W % patch:
        raise ValueError(f"patch {patch} does not divide frame {H}x{W}")
    h, w = H // patch, W // patch
    out = xb.reshape((B, C, h, patch, w, patch))
    out = out.transpose((0, 1, 3, 5, 2, 4))
    out = out.reshape((B, C * patch * patch, h, w))
    return out.reshape(out.shape[1:]) if squeeze else out


def depth_to_space(x: Tensor, patch: int) -> Tensor:
    if patch == 1:
        return x
    xb, squeeze = _batched(x)
    B, CP, h, w = xb.shape
    if CP % (patch * patch):
        raise ValueError(f"channels {CP} not divisible by patch^2 {patch * patch}")
    C = CP // (patch * patch)
    out = xb.reshape((B, C, patch, patch, h, w))
    out = out.transpose((0, 1, 4, 2, 5, 3))
    out = out.reshape((B, C, h * patch, w * patch))
    return out.reshape(out.shape[1:]) if squeeze else out
