"""The stacked predictor: L ConvLSTM blocks, a motion unit on each layer
interface, and the gated highway that carries the previous layer's hidden
past the block output. Also owns checkpoint serialization.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .cells import ConvLstmParams, LayerState, convlstm_step, init_convlstm
from .nn import conv2d, depth_to_space, init_conv, space_to_depth
from .tensor import Tensor
from .unit import (MotionGruParams, MotionState, init_motion_gru,
                   init_motion_state, motion_gru_forward)
from .util import atomic_write, derive_seed

CHECKPOINT_MAGIC = b"MRNN"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 4
    channels: int = 64
    k: int = 3
    alpha: float = 0.5
    patch: int = 1
    enable_mh: bool = True
    enable_tv: bool = True
    enable_tm: bool = True
    in_channels: int = 1
    height: int = 64
    width: int = 64
    lstm_kernel: int = 5
    dtype: str = "float32"

    def units_active(self) -> bool:
        return self.enable_tv or self.enable_tm

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.units_active() and self.layers < 2:
            raise ValueError("motion units sit between layers; need layers >= 2")
        if self.channels % 4:
            raise ValueError(f"channels must be divisible by 4, got {self.channels}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and positive, got {self.k}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.patch < 1:
            raise ValueError(f"patch must be >= 1, got {self.patch}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"patch {self.patch} does not divide {self.height}x{self.width}")
        if self.units_active():
            if (self.height // self.patch) % 2 or (self.width // self.patch) % 2:
                raise ValueError("encoded frame must have even sides for the stride-2 encoder")
        if self.lstm_kernel < 1 or self.lstm_kernel % 2 == 0:
            raise ValueError(f"lstm_kernel must be odd and positive, got {self.lstm_kernel}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


@dataclass
class ModelState:
    layers: list[LayerState]
    motion: list[MotionState | None]

    def detach(self) -> "ModelState":
        return ModelState([s.detach() for s in self.layers],
                          [None if m is None else m.detach() for m in self.motion])


class MotionRnn:
    """Parameters plus the per-step and rollout computation for one config."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(derive_seed(seed, "params"))
        cp = cfg.in_channels * cfg.patch * cfg.patch
        self.embed = _init_1x1(rng, cfg.channels, cp, dtype)
        self.blocks: list[ConvLstmParams] = []
        for _ in range(cfg.layers):
            self.blocks.append(init_convlstm(rng, cfg.channels, cfg.channels,
                                             cfg.lstm_kernel, dtype=dtype))
        self.units: list[MotionGruParams | None] = []
        for _ in range(max(0, cfg.layers - 1)):
            if cfg.units_active():
                self.units.append(init_motion_gru(
                    rng, cfg.channels, cfg.k, cfg.alpha,
                    enable_tv=cfg.enable_tv, enable_tm=cfg.enable_tm, dtype=dtype))
            else:
                self.units.append(None)
        self.readout = _init_1x1(rng, cp, cfg.channels, dtype)

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        _add_conv(out, "embed", self.embed)
        for i, blk in enumerate(self.blocks, start=1):
            _add_conv(out, f"block{i}.gates", blk.gates)
        for i, unit in enumerate(self.units, start=1):
            if unit is None:
                continue
            _add_conv(out, f"unit{i}.encoder", unit.encoder)
            if unit.transient is not None:
                _add_conv(out, f"unit{i}.transient.wu", unit.transient.wu)
                _add_conv(out, f"unit{i}.transient.wr", unit.transient.wr)
                _add_conv(out, f"unit{i}.transient.wz", unit.transient.wz)
            _add_conv(out, f"unit{i}.w_hm", unit.w_hm)
            _add_conv(out, f"unit{i}.squeeze", unit.squeeze)
            _add_conv(out, f"unit{i}.up", unit.up)
            _add_conv(out, f"unit{i}.w_hg", unit.w_hg)
            if unit.d0 is not None:
                out[f"unit{i}.d0"] = unit.d0
        _add_conv(out, "readout", self.readout)
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    # -- forward ----------------------------------------------------------

    def init_state(self, batch: int) -> ModelState:
        cfg = self.cfg
        dtype = np.dtype(cfg.dtype)
        h, w = cfg.height // cfg.patch, cfg.width // cfg.patch
        layers = [LayerState(Tensor(np.zeros((batch, cfg.channels, h, w), dtype)),
                             Tensor(np.zeros((batch, cfg.channels, h, w), dtype)))
                  for _ in range(cfg.layers)]
        motion = [None if u is None else init_motion_state(u, batch, h // 2, w // 2, dtype)
                  for u in self.units]
        return ModelState(layers=layers, motion=motion)

    def step(self, frame: Tensor, state: ModelState):
        """One time step: frame in, next-frame prediction out.

        Returns (pred, new_state, traces) where traces holds one unit trace
        per layer interface (None where the unit is disabled).
        """
        cfg = self.cfg
        x = space_to_depth(frame, cfg.patch)
        x = conv2d(x, self.embed)
        new_layers: list[LayerState] = []
        new_motion: list[MotionState | None] = []
        traces = []
        st, _ = convlstm_step(x, state.layers[0], self.blocks[0])
        new_layers.append(st)
        inp = st.h
        for l in range(1, cfg.layers):
            unit = self.units[l - 1]
            if unit is not None:
                xl, mstate, tr = motion_gru_forward(inp, state.motion[l - 1], unit)
            else:
                xl, mstate, tr = inp, None, None
            new_motion.append(mstate)
            traces.append(tr)
            st, o = convlstm_step(xl, state.layers[l], self.blocks[l])
            h = st.h
            if cfg.enable_mh:
                # the highway bypasses both the unit and the block
                h = h + (1.0 - o) * inp
                st = LayerState(h, st.c)
            new_layers.append(st)
            inp = h
        out = conv2d(inp, self.readout)
        pred = depth_to_space(out, cfg.patch)
        return pred, ModelState(new_layers, new_motion), traces

    def rollout(self, batch, horizon: int, sampling_mask=None, state: ModelState | None = None):
        """Teacher-forced context, then `horizon` rolled-out predictions.

        Over the horizon each step consumes the previous prediction unless the
        sampling mask picks the ground-truth frame instead. The first horizon
        input is always the last context frame, so mask[0] has no effect.
        All recurrent state, offsets included, flows across the boundary.
        """
        frames = np.asarray(batch.frames)
        split = int(batch.split_index)
        if split < 1:
            raise ValueError("rollout needs a non-empty context")
        if sampling_mask is not None:
            sampling_mask = np.asarray(sampling_mask, dtype=bool)
            if len(sampling_mask) != horizon:
                raise ValueError(f"mask length {len(sampling_mask)} != horizon {horizon}")
            if horizon > 1 and sampling_mask[1:].any() and frames.shape[1] < split + horizon - 1:
                raise ValueError("not enough frames for ground-truth sampling over this horizon")
        dt = np.dtype(self.cfg.dtype)
        if state is None:
            state = self.init_state(frames.shape[0])
        x = None
        for t in range(split):
            x, state, _ = self.step(Tensor(frames[:, t].astype(dt, copy=False)), state)
        if horizon == 0:
            return [], state
        preds = [x]
        for j in range(1, horizon):
            if sampling_mask is not None and sampling_mask[j]:
                inp = Tensor(frames[:, split + j - 1].astype(dt, copy=False))
            else:
                inp = preds[j - 1]
            x, state, _ = self.step(inp, state)
            preds.append(x)
        return preds, state

    def predict(self, batch, horizon: int) -> np.ndarray:
        """Autoregressive prediction as a (B, horizon, C, H, W) array, clamped to [0,1]."""
        preds, _ = self.rollout(batch, horizon)
        out = np.stack([np.clip(p.data, 0.0, 1.0) for p in preds], axis=1)
        return out.astype(np.float32, copy=False)


def _init_1x1(rng, cout, cin, dtype):
    return init_conv(rng, cout, cin, 1, dtype=dtype)


def _add_conv(out: dict, prefix: str, p) -> None:
    out[f"{prefix}.weight"] = p.weight
    out[f"{prefix}.bias"] = p.bias


def param_count(cfg: ModelConfig) -> int:
    """Exact scalar parameter count for a config."""
    return MotionRnn(cfg, seed=0).param_count()


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: MotionRnn, path) -> None:
    """magic, version, config JSON, then (name, shape, raw LE scalars) per parameter."""
    cfg_blob = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    le = "<f4" if model.cfg.dtype == "float32" else "<f8"
    with atomic_write(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        params = model.named_parameters()
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype(le, copy=False).tobytes())


def load_checkpoint(path) -> MotionRnn:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)

    def need(ofs, n, what):
        if ofs + n > len(blob):
            raise ValueError(f"checkpoint truncated at byte {len(blob)} while reading {what}")

    need(0, 12, "header")
    if view[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {bytes(view[:4])!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", view, 8)
    ofs = 12
    need(ofs, cfg_len, "config")
    cfg_dict = json.loads(bytes(view[ofs:ofs + cfg_len]).decode())
    ofs += cfg_len
    try:
        cfg = ModelConfig(**cfg_dict)
    except TypeError as e:
        raise ValueError(f"checkpoint config does not match ModelConfig: {e}") from None
    model = MotionRnn(cfg, seed=0)
    params = model.named_parameters()
    le = np.dtype("<f4" if cfg.dtype == "float32" else "<f8")
    need(ofs, 4, "parameter count")
    (n_params,) = struct.unpack_from("<I", view, ofs)
    ofs += 4
    seen = set()
    for _ in range(n_params):
        need(ofs, 2, "parameter name length")
        (name_len,) = struct.unpack_from("<H", view, ofs)
        ofs += 2
        need(ofs, name_len, "parameter name")
        name = bytes(view[ofs:ofs + name_len]).decode()
        ofs += name_len
        need(ofs, 1, f"rank of {name}")
        (ndim,) = struct.unpack_from("<B", view, ofs)
        ofs += 1
        need(ofs, 4 * ndim, f"shape of {name}")
        shape = struct.unpack_from(f"<{ndim}I", view, ofs)
        ofs += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if ofs + count * le.itemsize > len(blob):
            raise ValueError(f"checkpoint truncated at byte {len(blob)} while reading {name}")
        arr = np.frombuffer(blob, dtype=le, count=count, offset=ofs).reshape(shape)
        ofs += count * le.itemsize
        if name not in params:
            raise ValueError(f"checkpoint parameter {name} not present in model")
        if params[name].data.shape != tuple(shape):
            raise ValueError(f"checkpoint shape {tuple(shape)} for {name}, "
                             f"model has {params[name].data.shape}")
        params[name].data = arr.astype(cfg.dtype)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
