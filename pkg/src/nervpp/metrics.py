"""Quality and rate metrics: PSNR, SSIM, MS-SSIM, bpp and Bjontegaard deltas.

Frames are float arrays in [0, 1] shaped (C, H, W) or (T, C, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as tn
from .errors import DataError, ShapeError

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
C1 = K1**2
C2 = K2**2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps."""
    k = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(k**2) / (2.0 * sigma**2))
    return g / g.sum()


def _as_video(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ShapeError(f"expected (C,H,W) or (T,C,H,W) frames, got shape {x.shape}")


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_video(x), _as_video(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """PSNR in dB with peak 1; MSE pooled over every sample. Identical inputs give +inf."""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' Gaussian filtering over the last two axes
    k = g.size
    rows = sliding_window_view(img, k, axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(rows, -1, -2), k, axis=-1) @ g, -1, -2)


def _ssim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (ssim_map, cs_map) for arrays shaped (..., H, W)."""
    g = gaussian_window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    cs = (2.0 * sxy + C2) / (sxx + syy + C2)
    lum = (2.0 * mu_x * mu_y + C1) / (mu_x * mu_x + mu_y * mu_y + C1)
    return lum * cs, cs


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Single-scale SSIM (11x11 Gaussian, sigma 1.5), averaged over channels and frames."""
    x, y = _check_pair(x, y)
    if min(x.shape[-2:]) < WINDOW_SIZE:
        raise ShapeError(f"frame {x.shape[-2:]} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    smap, _ = _ssim_maps(x, y)
    return float(smap.mean(axis=(-2, -1)).mean())


def ms_ssim_scales(height: int, width: int) -> int:
    """Largest scale count (at most 5) whose coarsest level still fits the window."""
    side = min(height, width)
    if side < WINDOW_SIZE:
        raise ShapeError(f"frame {height}x{width} too small for MS-SSIM")
    m = len(MS_SSIM_WEIGHTS)
    while side < WINDOW_SIZE * 2 ** (m - 1):
        m -= 1
    return m


def ms_ssim_weights(scales: int) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    return w / w.sum()


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim(x: np.ndarray, y: np.ndarray, scales: Optional[int] = None) -> float:
    """Multi-scale SSIM with the standard five weights.

    The scale count shrinks (weights renormalised) for small frames.
    Contrast terms are clamped at zero before the fractional powers when more
    than one scale is used; a single scale returns plain SSIM.
    """
    x, y = _check_pair(x, y)
    max_scales = ms_ssim_scales(*x.shape[-2:])
    if scales is None:
        scales = max_scales
    elif not 1 <= scales <= max_scales:
        raise ShapeError(f"{scales} scales requested, frame supports at most {max_scales}")
    weights = ms_ssim_weights(scales)
    terms = []
    for level in range(scales):
        smap, cs = _ssim_maps(x, y)
        if level == scales - 1:
            terms.append(smap.mean(axis=(-2, -1)))
        else:
            terms.append(cs.mean(axis=(-2, -1)))
            x, y = _avg_pool2(x), _avg_pool2(y)
    if scales == 1:
        return float(terms[0].mean())
    stacked = np.maximum(np.stack(terms), 0.0)
    per_channel = np.prod(stacked ** weights[:, None, None], axis=0)
    return float(per_channel.mean())


def ms_ssim_db(value: float) -> float:
    """MS-SSIM expressed in dB, ``-10 log10(1 - value)``."""
    if value >= 1.0:
        return math.inf
    return -10.0 * math.log10(1.0 - value)


def ssim_tensor(x: tn.Tensor, y: tn.Tensor) -> tn.Tensor:
    """Differentiable SSIM for (N, C, H, W) tensors; same definition as :func:`ssim`."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise ShapeError(f"ssim_tensor expects (N,C,H,W), got {x.shape}")
    c = x.shape[1]
    if min(x.shape[-2:]) < WINDOW_SIZE:
        raise ShapeError(f"frame {x.shape[-2:]} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    g = gaussian_window()
    win = tn.Tensor(np.broadcast_to(np.outer(g, g), (c, 1, WINDOW_SIZE, WINDOW_SIZE)))

    def blur(t: tn.Tensor) -> tn.Tensor:
        return tn.conv2d(t, win, groups=c)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sxx = blur(x * x) - mu_xx
    syy = blur(y * y) - mu_yy
    sxy = blur(x * y) - mu_xy
    num = (2.0 * mu_xy + C1) * (2.0 * sxy + C2)
    den = (mu_xx + mu_yy + C1) * (sxx + syy + C2)
    return tn.mean(num / den)


# -- rate ------------------------------------------------------------------


def bpp(stream_bytes: int, frames: int, height: int, width: int) -> float:
    """Bits per pixel of a stream covering ``frames`` frames of ``height`` x ``width``."""
    if frames <= 0 or height <= 0 or width <= 0:
        raise ValueError(f"dimensions must be positive, got T={frames} H={height} W={width}")
    return 8.0 * stream_bytes / (frames * height * width)


# -- Bjontegaard deltas ------------------------------------------------------


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    quality: float

    def __post_init__(self) -> None:
        if not self.bpp > 0:
            raise DataError(f"bpp must be positive, got {self.bpp}")


class RDCurve:
    """At least four RD points with strictly increasing rate and quality."""

    def __init__(self, points: Iterable[RDPoint | tuple[float, float]], label: str = "") -> None:
        pts = [p if isinstance(p, RDPoint) else RDPoint(float(p[0]), float(p[1])) for p in points]
        pts.sort(key=lambda p: p.bpp)
        if len(pts) < 4:
            raise DataError(f"RD curve {label!r} needs at least 4 points, got {len(pts)}")
        rates = np.array([p.bpp for p in pts])
        quals = np.array([p.quality for p in pts])
        if np.any(np.diff(rates) <= 0) or np.any(np.diff(quals) <= 0):
            raise DataError(f"RD curve {label!r} is not strictly increasing in bpp and quality")
        if not np.all(np.isfinite(quals)):
            raise DataError(f"RD curve {label!r} has non-finite quality values")
        self.points = pts
        self.label = label

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def __len__(self) -> int:
        return len(self.points)


def _avg_poly_gap(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray) -> float:
    lo = max(xa.min(), xb.min())
    hi = min(xa.max(), xb.max())
    if not hi > lo:
        raise DataError("RD curves do not overlap")
    pa = np.polyint(np.polyfit(xa, ya, 3))
    pb = np.polyint(np.polyfit(xb, yb, 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    ib = np.polyval(pb, hi) - np.polyval(pb, lo)
    return (ib - ia) / (hi - lo)


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average rate difference (percent) of ``test`` against ``anchor`` at equal quality."""
    gap = _avg_poly_gap(anchor.qualities, np.log10(anchor.rates), test.qualities, np.log10(test.rates))
    return (10.0**gap - 1.0) * 100.0


def bd_psnr(anchor: RDCurve, test: RDCurve) -> float:
    """Average quality difference of ``test`` against ``anchor`` at equal rate."""
    return _avg_poly_gap(np.log10(anchor.rates), anchor.qualities, np.log10(test.rates), test.qualities)


def summarize(reference: np.ndarray, decoded: np.ndarray, per_frame: bool = False) -> list[dict]:
    """PSNR / SSIM / MS-SSIM rows; one per frame when ``per_frame``, then the pooled row."""
    reference, decoded = _check_pair(reference, decoded)
    rows = []
    if per_frame:
        for i, (a, b) in enumerate(zip(reference, decoded)):
            rows.append({"frame": str(i), "psnr": psnr(a, b), "ssim": ssim(a, b), "msssim": ms_ssim(a, b)})
    rows.append(
        {
            "frame": "all",
            "psnr": psnr(reference, decoded),
            "ssim": ssim(reference, decoded),
            "msssim": ms_ssim(reference, decoded),
        }
    )
    return rows


def format_metric(value: float) -> str:
    """Locale-independent text for CSV cells; infinities render as ``inf``."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))
