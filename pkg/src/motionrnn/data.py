"""Synthetic moving-digit sequences plus the file formats around them.

Sprites are procedural seven-segment style glyphs rendered from stroke paths
into small bitmaps, then translated, rotated and rescaled per frame by
bilinear resampling. Frames composite sprites by per-pixel max. Real raster
digits (IDX files) can replace the glyphs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .util import atomic_write, derive_seed

VSEQ_MAGIC = b"VSEQ"
VSEQ_VERSION = 1

# segment endpoints in unit glyph coordinates (x right, y down)
_SEG = {
    "a": ((0.25, 0.12), (0.75, 0.12)),
    "b": ((0.75, 0.12), (0.75, 0.50)),
    "c": ((0.75, 0.50), (0.75, 0.88)),
    "d": ((0.25, 0.88), (0.75, 0.88)),
    "e": ((0.25, 0.50), (0.25, 0.88)),
    "f": ((0.25, 0.12), (0.25, 0.50)),
    "g": ((0.25, 0.50), (0.75, 0.50)),
}
_DIGIT_SEGS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abgfcd",
}


@dataclass
class GeneratorConfig:
    size: int = 64
    frames: int = 20
    split: int = 10
    sprites: int = 2
    sprite_size: int = 18
    speed: tuple[float, float] = (1.0, 3.6)
    scale_rate: tuple[float, float] = (0.95, 1.05)
    scale_bounds: tuple[float, float] = (0.6, 1.6)
    spin: tuple[float, float] = (-12.0, 12.0)      # degrees per frame
    thickness: float = 0.10                        # stroke half-width, glyph units
    images: list | None = None                     # optional raster sprites

    def validate(self) -> None:
        if self.size < 8:
            raise ValueError(f"frame size {self.size} too small")
        if not (0 < self.split < self.frames):
            raise ValueError(f"split {self.split} must lie inside 0..{self.frames}")
        if self.sprites < 1:
            raise ValueError("need at least one sprite")
        if not (2 <= self.sprite_size < self.size):
            raise ValueError(f"sprite size {self.sprite_size} vs frame {self.size}")
        for name, (lo, hi) in (("speed", self.speed), ("scale_rate", self.scale_rate),
                               ("scale_bounds", self.scale_bounds), ("spin", self.spin)):
            if lo > hi:
                raise ValueError(f"{name} range {lo}..{hi} is inverted")
        if self.speed[0] < 0 or self.scale_rate[0] <= 0 or self.scale_bounds[0] <= 0:
            raise ValueError("speed, scale_rate and scale_bounds must stay positive")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")


@dataclass
class SequenceBatch:
    frames: np.ndarray      # (B, T, C, H, W), float32 in [0, 1]
    split_index: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 5:
            raise ValueError(f"frames must be (B,T,C,H,W), got {self.frames.shape}")
        if not (0 < self.split_index < self.frames.shape[1]):
            raise ValueError(f"split_index {self.split_index} outside 0..{self.frames.shape[1]}")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"frame values [{lo}, {hi}] leave [0, 1]")

    @property
    def count(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# glyph rendering

def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def glyph_bitmap(digit: int, size: int, thickness: float = 0.10) -> np.ndarray:
    """Rasterize one digit's stroke set to a (size, size) coverage map in [0, 1]."""
    if digit not in _DIGIT_SEGS:
        raise ValueError(f"no glyph for digit {digit}")
    coords = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(coords, coords)  # py is row (y), px is column (x)
    dist = np.full((size, size), np.inf)
    for seg in _DIGIT_SEGS[digit]:
        a, b = _SEG[seg]
        dist = np.minimum(dist, _segment_distance(px, py, a, b))
    aa = 1.0 / size  # one-pixel soft edge
    return np.clip((thickness - dist) / aa + 0.5, 0.0, 1.0).astype(np.float32)


def _bilinear_patch(bmp: np.ndarray, v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sample bmp at real (row=v, col=u); zero outside."""
    h, w = bmp.shape
    inside = (v > -1) & (v < h) & (u > -1) & (u < w)
    vc = np.clip(v, 0, h - 1)
    uc = np.clip(u, 0, w - 1)
    v0 = np.clip(np.floor(vc), 0, max(h - 2, 0)).astype(np.int64)
    u0 = np.clip(np.floor(uc), 0, max(w - 2, 0)).astype(np.int64)
    v1 = np.minimum(v0 + 1, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    fv = vc - v0
    fu = uc - u0
    out = ((1 - fv) * (1 - fu) * bmp[v0, u0] + (1 - fv) * fu * bmp[v0, u1]
           + fv * (1 - fu) * bmp[v1, u0] + fv * fu * bmp[v1, u1])
    # fade the border samples instead of hard-cutting them
    edge = np.minimum(np.minimum(v + 1, h - v), np.minimum(u + 1, w - u))
    out *= np.clip(edge, 0.0, 1.0) * inside
    return out


def _render_sprite(frame: np.ndarray, bmp: np.ndarray, cx: float, cy: float,
                   scale: float, theta: float) -> None:
    size = frame.shape[0]
    s = bmp.shape[0]
    radius = 0.5 * s * scale * 1.5  # rotation-safe bound
    x0, x1 = max(0, int(np.floor(cx - radius))), min(size - 1, int(np.ceil(cx + radius)))
    y0, y1 = max(0, int(np.floor(cy - radius))), min(size - 1, int(np.ceil(cy + radius)))
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    ct, st = np.cos(theta), np.sin(theta)
    dx = xs - cx
    dy = ys - cy
    u = (ct * dx + st * dy) / scale + 0.5 * (s - 1)
    v = (-st * dx + ct * dy) / scale + 0.5 * (s - 1)
    vals = _bilinear_patch(bmp, v, u)
    np.maximum(frame[y0:y1 + 1, x0:x1 + 1], vals, out=frame[y0:y1 + 1, x0:x1 + 1])


def _reflect(x: float, lo: float, hi: float, v: float):
    if x < lo:
        return 2 * lo - x, -v
    if x > hi:
        return 2 * hi - x, -v
    return x, v


def generate_sequence(seed: int, cfg: GeneratorConfig) -> np.ndarray:
    """One deterministic sequence, shape (frames, 1, size, size), float32 in [0, 1]."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    size = cfg.size
    sprites = []
    for _ in range(cfg.sprites):
        if cfg.images:
            bmp = np.asarray(cfg.images[rng.integers(len(cfg.images))], dtype=np.float32)
        else:
            bmp = glyph_bitmap(int(rng.integers(10)), cfg.sprite_size, cfg.thickness)
        margin = min(0.5 * bmp.shape[0], 0.5 * (size - 1))
        pos = rng.uniform(margin, size - 1 - margin, size=2)
        speed = rng.uniform(*cfg.speed)
        direction = rng.uniform(0, 2 * np.pi)
        sprites.append({
            "bmp": bmp,
            "x": pos[0], "y": pos[1],
            "vx": speed * np.cos(direction), "vy": speed * np.sin(direction),
            "scale": 1.0,
            "rate": rng.uniform(*cfg.scale_rate),
            "theta": rng.uniform(0, 2 * np.pi),
            "omega": np.deg2rad(rng.uniform(*cfg.spin)),
        })
    out = np.zeros((cfg.frames, 1, size, size), dtype=np.float32)
    for t in range(cfg.frames):
        frame = out[t, 0]
        for sp in sprites:
            _render_sprite(frame, sp["bmp"], sp["x"], sp["y"], sp["scale"], sp["theta"])
        for sp in sprites:
            sp["scale"] = float(np.clip(sp["scale"] * sp["rate"], *cfg.scale_bounds))
            margin = min(0.5 * sp["bmp"].shape[0] * sp["scale"], 0.5 * (size - 1))
            sp["x"], sp["vx"] = _reflect(sp["x"] + sp["vx"], margin, size - 1 - margin, sp["vx"])
            sp["y"], sp["vy"] = _reflect(sp["y"] + sp["vy"], margin, size - 1 - margin, sp["vy"])
            sp["theta"] += sp["omega"]
    return out


def generate_batch(seed: int, count: int, cfg: GeneratorConfig, workers: int = 1) -> SequenceBatch:
    """Stack `count` sequences; sequence i uses a seed derived from (seed, i)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = [derive_seed(seed, f"sequence-{i}") for i in range(count)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            seqs = list(pool.map(_gen_one, [(s, cfg) for s in seeds], chunksize=8))
    else:
        seqs = [generate_sequence(s, cfg) for s in seeds]
    return SequenceBatch(frames=np.stack(seqs, axis=0), split_index=cfg.split)


def _gen_one(args):
    seed, cfg = args
    return generate_sequence(seed, cfg)


# ---------------------------------------------------------------------------
# file formats

def write_vseq(path, batch: SequenceBatch) -> None:
    dims = batch.frames.shape
    if any(d >= 2 ** 32 for d in dims):
        raise ValueError(f"dimension overflow in {dims}")
    with atomic_write(path, "wb") as fh:
        fh.write(VSEQ_MAGIC)
        fh.write(struct.pack("<7I", VSEQ_VERSION, *dims, batch.split_index))
        fh.write(batch.frames.astype("<f4", copy=False).tobytes())


def read_vseq(path) -> SequenceBatch:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 32:
        raise ValueError(f"vseq header truncated at byte {len(blob)}, need 32")
    if blob[:4] != VSEQ_MAGIC:
        raise ValueError(f"bad vseq magic {blob[:4]!r}, expected {VSEQ_MAGIC!r}")
    version, b, t, c, h, w, split = struct.unpack_from("<7I", blob, 4)
    if version != VSEQ_VERSION:
        raise ValueError(f"unsupported vseq version {version}")
    need = 32 + b * t * c * h * w * 4
    if len(blob) < need:
        raise ValueError(f"vseq payload truncated at byte {len(blob)}, expected {need}")
    frames = np.frombuffer(blob, dtype="<f4", count=b * t * c * h * w, offset=32)
    return SequenceBatch(frames=frames.reshape(b, t, c, h, w).astype(np.float32),
                         split_index=split)


def load_idx_images(path) -> list[np.ndarray]:
    """Parse IDX-format unsigned-byte images, normalized to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ValueError(f"idx header truncated at byte {len(blob)}, need 16")
    magic = int.from_bytes(blob[:4], "big")
    if magic != 0x00000803:
        raise ValueError(f"bad idx magic 0x{magic:08x}, expected 0x00000803")
    n, h, w = struct.unpack_from(">3I", blob, 4)
    need = 16 + n * h * w
    if len(blob) < need:
        raise ValueError(f"idx payload truncated at byte {len(blob)}, expected {need}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=n * h * w, offset=16)
    images = raw.reshape(n, h, w).astype(np.float32) / 255.0
    return [images[i] for i in range(n)]


def export_pgm(frame, path) -> None:
    """Binary PGM, maxval 255, rounding half-up."""
    arr = np.asarray(getattr(frame, "data", frame))
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError(f"pgm export is single-channel, got {arr.shape[0]} channels")
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected (H,W) or (1,H,W) frame, got shape {arr.shape}")
    v = np.clip(arr.astype(np.float64), 0.0, 1.0)
    data = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape
    with atomic_write(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
