"""Frame I/O, codec config files, CSV helpers and the synthetic test clip."""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
import re
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from . import metrics
from .errors import DataError
from .model import SIZE_PRESETS, ArchConfig, BlockSpec, preset_config
from .training import TrainConfig

FORMATS = ("raw-rgb24", "png-dir")


@dataclass
class VideoFrames:
    """``data`` is (T, 3, H, W) float64 in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[1] != 3 or self.data.shape[0] < 1:
            raise DataError(f"video must be (T>=1, 3, H, W), got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise DataError("video values must lie in [0, 1]")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.frames, self.height, self.width

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data * 255.0).astype(np.uint8)


def synthetic_clip(frames: int = 8, height: int = 64, width: int = 64) -> VideoFrames:
    """Smooth sinusoidal colour gradients drifting across the frame over time."""
    y, x = np.mgrid[0:height, 0:width]
    x = x / width
    y = y / height
    out = []
    for i in range(frames):
        phase = i / frames
        out.append(
            np.stack(
                [
                    0.5 + 0.4 * np.sin(2 * np.pi * (x + phase)),
                    0.5 + 0.4 * np.cos(2 * np.pi * (y - phase)),
                    0.5 + 0.4 * np.sin(np.pi * (x + y) + 2 * np.pi * phase),
                ]
            )
        )
    return VideoFrames(np.array(out))


# -- atomic file writes --------------------------------------------------------


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- frames ------------------------------------------------------------------


def _natural_key(name: str) -> tuple:
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name))


def read_frames(
    path: str | os.PathLike,
    fmt: str,
    height: Optional[int] = None,
    width: Optional[int] = None,
    frames: Optional[int] = None,
) -> VideoFrames:
    """Load a clip. ``raw-rgb24`` is planar, frame-major uint8 (T, 3, H, W) and needs H and W."""
    path = Path(path)
    if fmt == "raw-rgb24":
        if not height or not width:
            raise DataError("raw-rgb24 input needs explicit height and width")
        try:
            raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        per_frame = 3 * height * width
        if frames is None:
            if raw.size == 0 or raw.size % per_frame:
                raise DataError(f"{path}: {raw.size} bytes is not a whole number of {height}x{width} frames")
            frames = raw.size // per_frame
        if raw.size != frames * per_frame:
            raise DataError(f"{path}: expected {frames * per_frame} bytes for T={frames}, got {raw.size}")
        return VideoFrames(raw.reshape(frames, 3, height, width) / 255.0)
    if fmt == "png-dir":
        if not path.is_dir():
            raise DataError(f"{path} is not a directory")
        files = sorted((p for p in path.iterdir() if p.suffix.lower() == ".png"), key=lambda p: _natural_key(p.name))
        if not files:
            raise DataError(f"no PNG files in {path}")
        arrays = []
        for f in files:
            try:
                with Image.open(f) as img:
                    arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
            except OSError as exc:
                raise DataError(f"cannot read {f}: {exc}") from exc
            if arrays and arr.shape != arrays[0].shape:
                raise DataError(f"{f.name} is {arr.shape[1]}x{arr.shape[0]}, earlier frames differ")
            arrays.append(arr)
        video = np.stack(arrays).transpose(0, 3, 1, 2) / 255.0
        if (height and video.shape[2] != height) or (width and video.shape[3] != width):
            raise DataError(f"frames are {video.shape[2]}x{video.shape[3]}, expected {height}x{width}")
        return VideoFrames(video)
    raise DataError(f"unknown frame format {fmt!r}; choose from {', '.join(FORMATS)}")


def write_frames(video: VideoFrames | np.ndarray, path: str | os.PathLike, fmt: str) -> None:
    if not isinstance(video, VideoFrames):
        video = VideoFrames(np.clip(video, 0.0, 1.0))
    q = video.to_uint8()
    path = Path(path)
    if fmt == "raw-rgb24":
        atomic_write_bytes(path, q.tobytes())
    elif fmt == "png-dir":
        path.mkdir(parents=True, exist_ok=True)
        digits = max(4, len(str(video.frames - 1)))
        for i, frame in enumerate(q):
            buf = io.BytesIO()
            Image.fromarray(frame.transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
            atomic_write_bytes(path / f"frame_{i:0{digits}d}.png", buf.getvalue())
    else:
        raise DataError(f"unknown frame format {fmt!r}; choose from {', '.join(FORMATS)}")


# -- codec config file ---------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    height: int
    width: int
    arch: ArchConfig
    train: TrainConfig
    prune_ratio: float = 0.2


_ARCH_KEYS = {
    "size",
    "variant_star",
    "pe_base",
    "pe_levels",
    "stem_hidden",
    "base_channels",
    "strides",
    "channels",
    "dw_kernel",
    "expansion",
    "head_kernel",
}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_SECTIONS = {"video": {"height", "width"}, "arch": _ARCH_KEYS, "train": _TRAIN_KEYS, "compress": {"prune_ratio"}}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_arch(height: int, width: int, values: dict[str, str]) -> ArchConfig:
    size = values.get("size", "xsmall")
    if size not in SIZE_PRESETS:
        raise ValueError(f"unknown size {size!r}")
    base = preset_config(size, height, width) if not {"strides", "channels"} <= values.keys() else None
    strides = _ints(values["strides"]) if "strides" in values else tuple(b.stride for b in base.blocks)
    channels = _ints(values["channels"]) if "channels" in values else tuple(b.out_channels for b in base.blocks)
    if len(strides) != len(channels):
        raise ValueError("strides and channels must list the same number of blocks")
    up = math.prod(strides)
    if height % up or width % up:
        raise ValueError(f"frame {height}x{width} is not divisible by the total stride {up}")
    dw = int(values.get("dw_kernel", 7))
    expansion = int(values.get("expansion", 4))
    c0 = int(values["base_channels"]) if "base_channels" in values else SIZE_PRESETS[size][0]
    return ArchConfig(
        base_grid=(height // up, width // up),
        base_channels=c0,
        blocks=tuple(BlockSpec(s, c, dw, expansion) for s, c in zip(strides, channels)),
        pe_base=float(values.get("pe_base", 1.25)),
        pe_levels=int(values.get("pe_levels", 40)),
        stem_hidden=int(values.get("stem_hidden", 128)),
        head_kernel=int(values.get("head_kernel", 3)),
        variant_star=_bool(values.get("variant_star", "false")),
    )


def parse_config(text: str) -> CodecConfig:
    """Parse an INI-style codec config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise DataError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SECTIONS:
            raise DataError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - _SECTIONS[section]
        if unknown:
            raise DataError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    if not parser.has_section("video") or not {"height", "width"} <= set(parser["video"]):
        raise DataError("config needs [video] height and width")
    try:
        height = int(parser["video"]["height"])
        width = int(parser["video"]["width"])
        arch = build_arch(height, width, dict(parser["arch"]) if parser.has_section("arch") else {})
        train_vals: dict = {}
        if parser.has_section("train"):
            for key, raw in parser["train"].items():
                if key in ("epochs", "seed"):
                    train_vals[key] = int(raw)
                elif key == "finetune_epochs":
                    train_vals[key] = None if raw.strip().lower() in ("", "auto") else int(raw)
                else:
                    train_vals[key] = float(raw)
        train = TrainConfig(**train_vals)
        prune = float(parser["compress"].get("prune_ratio", 0.2)) if parser.has_section("compress") else 0.2
    except (ValueError, TypeError) as exc:
        raise DataError(f"invalid config value: {exc}") from exc
    if not 0.0 <= prune < 1.0:
        raise DataError(f"prune_ratio must lie in [0, 1), got {prune}")
    return CodecConfig(height, width, arch, train, prune)


def load_config(path: str | os.PathLike) -> CodecConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: CodecConfig) -> str:
    a, t = cfg.arch, cfg.train
    lines = [
        "[video]",
        f"height = {cfg.height}",
        f"width = {cfg.width}",
        "",
        "[arch]",
        f"variant_star = {'true' if a.variant_star else 'false'}",
        f"pe_base = {a.pe_base!r}",
        f"pe_levels = {a.pe_levels}",
        f"stem_hidden = {a.stem_hidden}",
        f"base_channels = {a.base_channels}",
        f"strides = {', '.join(str(b.stride) for b in a.blocks)}",
        f"channels = {', '.join(str(b.out_channels) for b in a.blocks)}",
        f"dw_kernel = {a.blocks[0].dw_kernel if a.blocks else 7}",
        f"expansion = {a.blocks[0].expansion if a.blocks else 4}",
        f"head_kernel = {a.head_kernel}",
        "",
        "[train]",
    ]
    for f in fields(TrainConfig):
        value = getattr(t, f.name)
        lines.append(f"{f.name} = {'auto' if value is None else repr(value)}")
    lines += ["", "[compress]", f"prune_ratio = {cfg.prune_ratio!r}", ""]
    return "\n".join(lines)


def with_train(cfg: CodecConfig, **changes) -> CodecConfig:
    return replace(cfg, train=replace(cfg.train, **changes))


# -- CSV -----------------------------------------------------------------------

RD_COLUMNS = ("label", "bpp", "psnr", "msssim")


def rd_rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RD_COLUMNS)
    for row in rows:
        writer.writerow(
            [row["label"], repr(float(row["bpp"])), metrics.format_metric(row["psnr"]), metrics.format_metric(row["msssim"])]
        )
    return buf.getvalue()


def read_rd_csv(path: str | os.PathLike) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != RD_COLUMNS:
        raise DataError(f"{path}: expected columns {','.join(RD_COLUMNS)}")
    rows = []
    for n, row in enumerate(reader, start=2):
        try:
            rows.append(
                {"label": row["label"], "bpp": float(row["bpp"]), "psnr": float(row["psnr"]), "msssim": float(row["msssim"])}
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{n}: malformed row") from exc
    return rows


def metrics_rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "psnr", "ssim", "msssim"])
    for row in rows:
        writer.writerow(
            [row["frame"], metrics.format_metric(row["psnr"]), metrics.format_metric(row["ssim"]), metrics.format_metric(row["msssim"])]
        )
    return buf.getvalue()
