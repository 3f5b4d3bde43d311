"""Frame metrics (MSE, MAE, PSNR, SSIM, GDL, CSI), sequence-level reports,
and the motion-trend vector-field export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import atomic_write

PSNR_CAP_DB = 99.0


def _pair(pred, target):
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"metric shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def mse(pred, target, reduce: str = "mean") -> float:
    """Squared error per frame; reduce="sum" gives the frame-summed convention
    used by the Moving-MNIST literature, default is the per-pixel mean."""
    p, t = _pair(pred, target)
    d = (p - t) ** 2
    return float(d.sum() if reduce == "sum" else d.mean())


def mae(pred, target, reduce: str = "mean") -> float:
    p, t = _pair(pred, target)
    d = np.abs(p - t)
    return float(d.sum() if reduce == "sum" else d.mean())


def psnr(pred, target, max_val: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """10*log10(max^2/MSE), capped at 99 dB (identical frames hit the cap)."""
    m = mse(pred, target)
    if m == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(max_val * max_val / m))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pred, target, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, max_val: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian-weighted windows, single channel."""
    p, t = _pair(pred, target)
    if p.ndim != 2:
        raise ValueError(f"ssim expects a single-channel 2-D frame, got shape {p.shape}")
    h, w = p.shape
    if h < window or w < window:
        raise ValueError(f"frame {h}x{w} smaller than the {window}x{window} ssim window")
    kern = _gaussian_window(window, sigma)

    def wmean(img):
        sh, sw = img.strides
        ho, wo = h - window + 1, w - window + 1
        win = np.lib.stride_tricks.as_strided(img, (ho, wo, window, window), (sh, sw, sh, sw))
        return np.tensordot(win, kern, axes=([2, 3], [0, 1]))

    mu_p = wmean(p)
    mu_t = wmean(t)
    var_p = wmean(p * p) - mu_p * mu_p
    var_t = wmean(t * t) - mu_t * mu_t
    cov = wmean(p * t) - mu_p * mu_t
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    num = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float((num / den).mean())


def gdl(pred, target, exponent: float = 1.0) -> float:
    """Gradient difference: compares absolute forward differences, summed over pixels."""
    p, t = _pair(pred, target)
    gx = np.abs(np.abs(p[:, 1:] - p[:, :-1]) - np.abs(t[:, 1:] - t[:, :-1]))
    gy = np.abs(np.abs(p[1:, :] - p[:-1, :]) - np.abs(t[1:, :] - t[:-1, :]))
    return float((gx ** exponent).sum() + (gy ** exponent).sum())


def csi(pred, target, threshold: float) -> float:
    """Critical success index on frames binarized at >= threshold.

    Returns 1.0 when hits, misses and false alarms are all zero."""
    p, t = _pair(pred, target)
    bp = p >= threshold
    bt = t >= threshold
    hits = int(np.sum(bp & bt))
    misses = int(np.sum(~bp & bt))
    false_alarms = int(np.sum(bp & ~bt))
    denom = hits + misses + false_alarms
    if denom == 0:
        return 1.0
    return hits / denom


_FRAME_METRICS = {
    "mse": lambda p, t, kw: mse(p, t, reduce=kw["reduce"]),
    "mae": lambda p, t, kw: mae(p, t, reduce=kw["reduce"]),
    "psnr": lambda p, t, kw: psnr(p, t),
    "ssim": lambda p, t, kw: ssim(p, t),
    "gdl": lambda p, t, kw: gdl(p, t),
    "csi": lambda p, t, kw: csi(p, t, kw["threshold"]),
}

METRIC_NAMES = tuple(_FRAME_METRICS)


@dataclass
class MetricReport:
    per_step: dict[str, list[float]]

    @property
    def aggregate(self) -> dict[str, float]:
        return {name: float(np.mean(vals)) for name, vals in self.per_step.items()}

    def write_csv(self, path) -> None:
        lines = ["step,metric,value"]
        for name, vals in self.per_step.items():
            for step, v in enumerate(vals, start=1):
                lines.append(f"{step},{name},{v:.8g}")
        for name, v in self.aggregate.items():
            lines.append(f"all,{name},{v:.8g}")
        with atomic_write(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def evaluate(pred, target, metrics=("mse", "ssim"), threshold: float = 0.5,
             pixel_sums: bool = False) -> MetricReport:
    """Score (B, T, C, H, W) predictions against targets, per horizon step.

    Predictions are clamped to [0, 1] first. A step's value is the mean over
    batch members and channels; the report aggregate is the mean over steps.
    """
    p = np.clip(np.asarray(getattr(pred, "data", pred), dtype=np.float64), 0.0, 1.0)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"evaluate shape mismatch: {p.shape} vs {t.shape}")
    if p.ndim != 5:
        raise ValueError(f"evaluate expects (B,T,C,H,W), got shape {p.shape}")
    for name in metrics:
        if name not in _FRAME_METRICS:
            raise ValueError(f"unknown metric {name!r}, have {sorted(_FRAME_METRICS)}")
    kw = {"threshold": threshold, "reduce": "sum" if pixel_sums else "mean"}
    B, T, C = p.shape[:3]
    per_step = {name: [] for name in metrics}
    for step in range(T):
        for name in metrics:
            fn = _FRAME_METRICS[name]
            vals = [fn(p[b, step, c], t[b, step, c], kw) for b in range(B) for c in range(C)]
            per_step[name].append(float(np.mean(vals)))
    return MetricReport(per_step=per_step)


# ---------------------------------------------------------------------------
# trend field export

def trend_field_export(d, out_base, cell: int = 24) -> tuple[Path, Path]:
    """Write the momentum field as arrows: <base>.csv and <base>.svg.

    The 2k^2 channels split into vertical/horizontal halves; each half is
    averaged over its k^2 taps to a per-pixel (dy, dx). Arrow lengths are
    scaled so the longest is exactly 1 grid cell (all-zero fields stay zero).
    """
    arr = np.asarray(getattr(d, "data", d), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] % 2:
        raise ValueError(f"expected (2k^2, h, w) offsets, got shape {arr.shape}")
    kk = arr.shape[0] // 2
    if int(round(math.sqrt(kk))) ** 2 != kk:
        raise ValueError(f"channel count {arr.shape[0]} is not 2*k^2 for integer k")
    dy = arr[:kk].mean(axis=0)
    dx = arr[kk:].mean(axis=0)
    length = np.hypot(dy, dx)
    peak = float(length.max())
    if peak > 0:
        dy = dy / peak
        dx = dx / peak
    h, w = dy.shape

    out_base = Path(out_base)
    csv_path = out_base.with_suffix(".csv")
    svg_path = out_base.with_suffix(".svg")

    lines = ["row,col,dy,dx"]
    for r in range(h):
        for c in range(w):
            lines.append(f"{r},{c},{dy[r, c]:.8g},{dx[r, c]:.8g}")
    with atomic_write(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    half = 0.45 * cell  # longest arrow stays inside its cell
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell}" '
           f'viewBox="0 0 {w * cell} {h * cell}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for r in range(h):
        for c in range(w):
            x1 = (c + 0.5) * cell
            y1 = (r + 0.5) * cell
            x2 = x1 + dx[r, c] * half
            y2 = y1 + dy[r, c] * half
            svg.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                       'stroke="black" stroke-width="1.5" stroke-linecap="round"/>')
    svg.append("</svg>")
    with atomic_write(svg_path, "w") as fh:
        fh.write("\n".join(svg) + "\n")
    return csv_path, svg_path
