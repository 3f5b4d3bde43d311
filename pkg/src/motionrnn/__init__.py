"""Spatiotemporal prediction with motion-decomposed recurrent units on numpy."""

from .cells import (ConvLstmParams, LayerState, TransientLearnerParams,
                    TrendConfig, convlstm_step, init_convlstm, init_transient,
                    transient_step, trend_update)
from .data import (GeneratorConfig, SequenceBatch, export_pgm, generate_batch,
                   generate_sequence, glyph_bitmap, load_idx_images, read_vseq,
                   write_vseq)
from .metrics import (METRIC_NAMES, MetricReport, csi, evaluate, gdl, mae,
                      mse, psnr, ssim, trend_field_export)
from .model import (ModelConfig, ModelState, MotionRnn, load_checkpoint,
                    param_count, save_checkpoint)
from .nn import (Conv2dParams, Deconv2dParams, conv2d, conv_transpose2d,
                 depth_to_space, init_conv, init_deconv, space_to_depth)
from .tensor import (Tape, Tensor, absolute, add, as_tensor, backward, concat,
                     concat_channels, mul, narrow, neg, reshape,
                     set_debug_checks, sigmoid, sub, tanh, tensor_mean,
                     tensor_sum, transpose)
from .train import (AdamState, TrainConfig, TrainResult, adam_step,
                    clip_gradients, evaluate_model, loss_l1l2, sampling_mask,
                    train)
from .unit import (MotionGruParams, MotionGruTrace, MotionState,
                   init_motion_gru, init_motion_state, motion_gru_forward,
                   neighborhood_offsets, warp)
from .util import atomic_write, derive_seed

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "set_debug_checks", "as_tensor",
    "add", "sub", "mul", "neg", "sigmoid", "tanh", "absolute",
    "tensor_sum", "tensor_mean", "reshape", "transpose", "narrow",
    "concat", "concat_channels",
    "Conv2dParams", "Deconv2dParams", "init_conv", "init_deconv",
    "conv2d", "conv_transpose2d", "space_to_depth", "depth_to_space",
    "LayerState", "ConvLstmParams", "init_convlstm", "convlstm_step",
    "TransientLearnerParams", "init_transient", "transient_step",
    "TrendConfig", "trend_update",
    "MotionState", "MotionGruParams", "MotionGruTrace", "init_motion_gru",
    "init_motion_state", "motion_gru_forward", "neighborhood_offsets", "warp",
    "ModelConfig", "ModelState", "MotionRnn", "param_count",
    "save_checkpoint", "load_checkpoint",
    "GeneratorConfig", "SequenceBatch", "glyph_bitmap", "generate_sequence",
    "generate_batch", "write_vseq", "read_vseq", "load_idx_images", "export_pgm",
    "TrainConfig", "TrainResult", "AdamState", "adam_step", "clip_gradients",
    "loss_l1l2", "sampling_mask", "train", "evaluate_model",
    "METRIC_NAMES", "MetricReport", "mse", "mae", "psnr", "ssim", "gdl", "csi",
    "evaluate", "trend_field_export",
    "derive_seed", "atomic_write",
]
