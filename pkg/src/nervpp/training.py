"""Overfitting the network to one clip, plus mask-preserving fine-tuning."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import metrics
from . import tensor as tn
from .errors import NumericError, ShapeError
from .model import ArchConfig, ParameterStore, init_params, model_forward, render_video, time_coord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr0: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_w_mae: float = 0.7
    loss_w_ssim: float = 0.3
    finetune_epochs: Optional[int] = None  # None: a tenth of `epochs`
    finetune_lr_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not math.isclose(self.loss_w_mae + self.loss_w_ssim, 1.0, abs_tol=1e-12):
            raise ValueError("loss weights must sum to 1")
        if self.finetune_epochs is not None and self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")

    @property
    def resolved_finetune_epochs(self) -> int:
        if self.finetune_epochs is not None:
            return self.finetune_epochs
        return max(1, self.epochs // 10)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    psnr: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "lr", "loss", "psnr"])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.lr), repr(r.loss), metrics.format_metric(r.psnr)])
        return buf.getvalue()


# -- objective ---------------------------------------------------------------


def loss(pred: tn.Tensor, target: tn.Tensor, w_mae: float = 0.7, w_ssim: float = 0.3) -> tn.Tensor:
    """``w_mae * mean|pred - target| + w_ssim * (1 - SSIM(pred, target))``."""
    pred, target = tn.as_tensor(pred), tn.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: shape mismatch {pred.shape} vs {target.shape}")
    mae = tn.mean(tn.abs_(pred - target))
    return w_mae * mae + w_ssim * (1.0 - metrics.ssim_tensor(pred, target))


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))


# -- optimiser -----------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("adam_step: params, grads and state differ in length")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- loops -------------------------------------------------------------------


def _check_video(video: np.ndarray, arch: ArchConfig) -> np.ndarray:
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[1] != 3:
        raise ShapeError(f"video must be (T, 3, H, W), got {video.shape}")
    arch.check_frame(*video.shape[2:])
    return video


def _run_epochs(
    video: np.ndarray,
    arch: ArchConfig,
    cfg: TrainConfig,
    params: ParameterStore,
    epochs: int,
    lr_at: Callable[[int, int], float],
    rng: np.random.Generator,
    mask: Optional[Mapping[str, np.ndarray]] = None,
    epoch_hook: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainLog:
    frames = video.shape[0]
    total = epochs * frames
    tensors = params.tensors()
    arrays = [t.data for t in tensors]
    state = AdamState.zeros_like(arrays)
    masked = [(params[name].data, keep) for name, keep in (mask or {}).items()]
    log = TrainLog()
    tape = tn.get_tape()
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(frames)
        losses, errs = [], []
        lr = 0.0
        for idx in order:
            lr = lr_at(step, total)
            tape.clear()
            params.zero_grad()
            target = tn.Tensor(video[idx][None])
            pred = model_forward(time_coord(int(idx), frames), arch, params, check=False)
            value = loss(pred, target, cfg.loss_w_mae, cfg.loss_w_ssim)
            if not math.isfinite(value.item()):
                raise NumericError(f"loss became non-finite at epoch {epoch}, step {step}")
            tn.backward(value)
            adam_step(arrays, [t.grad for t in tensors], state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            for arr, keep in masked:
                arr[~keep] = 0.0
            for arr in arrays:
                if not np.all(np.isfinite(arr)):
                    raise NumericError(f"parameters became non-finite at epoch {epoch}, step {step}")
            losses.append(value.item())
            errs.append(float(np.mean((pred.data[0] - video[idx]) ** 2)))
            step += 1
        mse = float(np.mean(errs))
        record = EpochRecord(epoch, lr, float(np.mean(losses)), math.inf if mse == 0 else -10 * math.log10(mse))
        log.append(record)
        logger.debug("epoch %d lr %.3g loss %.5f psnr %.2f", epoch, record.lr, record.loss, record.psnr)
        if epoch_hook is not None:
            epoch_hook(record)
    tape.clear()
    params.zero_grad()
    return log


def train(
    video: np.ndarray,
    arch: ArchConfig,
    cfg: TrainConfig,
    params: Optional[ParameterStore] = None,
    epoch_hook: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[ParameterStore, TrainLog]:
    """Overfit ``arch`` to ``video`` (T, 3, H, W) with Adam and a cosine schedule.

    Each epoch visits every frame once in a seeded random order, one frame per
    step. The schedule spans ``epochs * T`` steps. Deterministic given ``cfg.seed``.
    """
    video = _check_video(video, arch)
    params = init_params(arch, cfg.seed) if params is None else params.copy(requires_grad=True)
    rng = np.random.default_rng([cfg.seed, 1])
    log = _run_epochs(
        video, arch, cfg, params, cfg.epochs, lambda s, n: cosine_lr(s, n, cfg.lr0), rng, epoch_hook=epoch_hook
    )
    return params, log


def finetune(
    video: np.ndarray,
    arch: ArchConfig,
    cfg: TrainConfig,
    params: ParameterStore,
    prune_mask: Mapping[str, np.ndarray],
    epoch_hook: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[ParameterStore, TrainLog]:
    """Continue training at ``lr0 * finetune_lr_scale`` with pruned weights held at zero."""
    video = _check_video(video, arch)
    params = params.copy(requires_grad=True)
    for name, keep in prune_mask.items():
        if name not in params or params[name].shape != keep.shape:
            raise ShapeError(f"prune mask entry {name!r} does not match a parameter")
        params[name].data[~keep] = 0.0
    epochs = cfg.resolved_finetune_epochs
    if epochs == 0:
        return params, TrainLog()
    lr = cfg.lr0 * cfg.finetune_lr_scale
    rng = np.random.default_rng([cfg.seed, 2])
    log = _run_epochs(video, arch, cfg, params, epochs, lambda s, n: lr, rng, prune_mask, epoch_hook)
    return params, log


def evaluate(video: np.ndarray, arch: ArchConfig, params: ParameterStore) -> float:
    """PSNR of the decoded clip against ``video``."""
    video = _check_video(video, arch)
    return metrics.psnr(video, render_video(arch, params, video.shape[0]))
