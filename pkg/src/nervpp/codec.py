"""End-to-end encode/decode: train, prune, fine-tune, quantize, entropy-code."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import metrics
from .compression import decode_bytes, encode_bytes, mask_sparsity, prune_l1_global
from .compression.quant import PruneMask, apply_mask
from .model import ArchConfig, ParameterStore, render_video
from .training import EpochRecord, TrainConfig, TrainLog, finetune, train

logger = logging.getLogger(__name__)


@dataclass
class EncodeResult:
    stream: bytes
    bpp: float
    psnr_float: float
    psnr_final: float
    psnr_pruned: Optional[float] = None
    psnr_finetuned: Optional[float] = None
    pruned_weights: int = 0
    conv_weights: int = 0
    train_log: TrainLog = field(default_factory=TrainLog)
    finetune_log: TrainLog = field(default_factory=TrainLog)
    params: Optional[ParameterStore] = None  # what was quantized: fine-tuned if pruning ran
    trained_params: Optional[ParameterStore] = None  # float model before pruning
    mask: Optional[PruneMask] = None

    @property
    def log(self) -> TrainLog:
        """Training and fine-tuning epochs as one log, numbered consecutively."""
        merged = TrainLog(list(self.train_log.records))
        offset = len(self.train_log)
        for r in self.finetune_log.records:
            merged.append(EpochRecord(r.epoch + offset, r.lr, r.loss, r.psnr))
        return merged


def encode_video(
    video: np.ndarray,
    arch: ArchConfig,
    cfg: TrainConfig,
    prune_ratio: float = 0.2,
    epoch_hook: Optional[Callable[[EpochRecord], None]] = None,
) -> EncodeResult:
    """Run train -> prune -> fine-tune -> quantize -> Huffman -> serialize.

    A zero ``prune_ratio`` skips the mask and fine-tune stages. The final
    PSNR is measured on the model decoded back from the produced bytes.
    """
    frames, _, height, width = video.shape
    params, train_log = train(video, arch, cfg, epoch_hook=epoch_hook)
    psnr_float = metrics.psnr(video, render_video(arch, params, frames))
    logger.info("trained: PSNR %.3f dB", psnr_float)
    result = EncodeResult(b"", 0.0, psnr_float, 0.0, train_log=train_log, trained_params=params)
    mask = None
    if prune_ratio > 0:
        mask = prune_l1_global(params, prune_ratio)
        result.pruned_weights, result.conv_weights = mask_sparsity(mask)
        result.psnr_pruned = metrics.psnr(video, render_video(arch, apply_mask(params, mask), frames))
        params, result.finetune_log = finetune(video, arch, cfg, params, mask, epoch_hook=epoch_hook)
        result.psnr_finetuned = metrics.psnr(video, render_video(arch, params, frames))
        logger.info("pruned: %.3f dB, fine-tuned: %.3f dB", result.psnr_pruned, result.psnr_finetuned)
    stream = encode_bytes(params, arch, (frames, height, width), mask)
    _, dec_arch, dec_params = decode_bytes(stream)
    result.stream = stream
    result.bpp = metrics.bpp(len(stream), frames, height, width)
    result.psnr_final = metrics.psnr(video, render_video(dec_arch, dec_params, frames))
    result.params = params
    result.mask = mask
    return result


@dataclass
class DecodeResult:
    frames: np.ndarray
    seconds: float

    @property
    def fps(self) -> float:
        return self.frames.shape[0] / self.seconds if self.seconds > 0 else float("inf")


def decode_stream(data: bytes) -> DecodeResult:
    model, arch, params = decode_bytes(data)
    start = time.perf_counter()
    frames = render_video(arch, params, model.frames)
    return DecodeResult(frames, time.perf_counter() - start)
