"""Global L1 unstructured pruning and per-tensor min-max weight quantization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import ParameterStore, is_conv_weight

PruneMask = dict[str, np.ndarray]  # parameter name -> keep flags, conv weights only


def prune_l1_global(params: ParameterStore, ratio: float = 0.20) -> PruneMask:
    """Zero the ``floor(ratio * N)`` smallest-magnitude conv weights across all layers.

    Ties in magnitude resolve by parameter order, then flat index, so the
    mask is fully deterministic. Biases and linear (stem) weights are exempt.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"prune ratio must lie in [0, 1), got {ratio}")
    conv = [(name, t.data) for name, t in params if is_conv_weight(name, t.shape)]
    flat = np.concatenate([np.abs(w).ravel() for _, w in conv]) if conv else np.zeros(0)
    n_prune = int(np.floor(ratio * flat.size))
    keep = np.ones(flat.size, dtype=bool)
    if n_prune:
        # stable sort keeps the (tensor order, flat index) tie-break
        order = np.argsort(flat, kind="stable")
        keep[order[:n_prune]] = False
    mask: PruneMask = {}
    offset = 0
    for name, w in conv:
        mask[name] = keep[offset : offset + w.size].reshape(w.shape)
        offset += w.size
    return mask


def apply_mask(params: ParameterStore, mask: PruneMask) -> ParameterStore:
    out = params.copy()
    for name, keep in mask.items():
        out[name].data[~keep] = 0.0
    return out


def mask_sparsity(mask: PruneMask) -> tuple[int, int]:
    """(pruned, total) conv weight counts."""
    total = sum(k.size for k in mask.values())
    kept = sum(int(k.sum()) for k in mask.values())
    return total - kept, total


@dataclass(frozen=True)
class QuantTensor:
    q: np.ndarray  # uint8 codes, original shape
    scale: float
    min_val: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.q.shape

    def dequantize(self) -> np.ndarray:
        return self.q.astype(np.float64) * self.scale + self.min_val


def _f32_up(x: float) -> float:
    v = np.float32(x)
    if float(v) < x:
        v = np.nextafter(v, np.float32(np.inf))
    return float(v)


def quantize_per_tensor(w: np.ndarray, bits: int = 8) -> QuantTensor:
    """Affine min-max quantization, ``q = round((w - min) / scale)`` (half to even).

    Weights are taken at float32 precision, the precision the bitstream
    stores. ``scale`` is rounded up to the next float32 so the stored
    parameters reproduce the codes exactly while still covering [min, max].
    """
    w = np.asarray(w, dtype=np.float32).astype(np.float64)
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must lie in 2..8, got {bits}")
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot quantize non-finite weights")
    levels = 2**bits - 1
    lo = float(w.min()) if w.size else 0.0
    hi = float(w.max()) if w.size else 0.0
    if hi == lo or w.size == 0:
        scale = 1.0
    else:
        scale = _f32_up((hi - lo) / levels)
        while lo + levels * scale < hi:
            scale = float(np.nextafter(np.float32(scale), np.float32(np.inf)))
    q = np.clip(np.rint((w - lo) / scale), 0, levels).astype(np.uint8)
    return QuantTensor(q, scale, lo)
