"""Command-line interface: ``nervpp {encode,decode,eval,rd-sweep,bdrate,info}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as vio
from . import metrics
from .codec import decode_stream, encode_video
from .compression import decode_symbols, deserialize, entropy_bits, histogram, mean_code_length
from .errors import DataError, NervError, NumericError
from .model import SIZE_PRESETS, count_macs_per_pixel, count_params, preset_config
from .training import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("nervpp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _add_video_args(p: argparse.ArgumentParser, name: str = "--input") -> None:
    p.add_argument(name, required=True, help="raw-rgb24 file or directory of PNG frames")
    p.add_argument("--format", choices=vio.FORMATS, default="raw-rgb24")
    p.add_argument("--height", type=int, help="frame height (required for raw-rgb24)")
    p.add_argument("--width", type=int, help="frame width (required for raw-rgb24)")
    p.add_argument("--frames", type=int, help="frame count (raw-rgb24; inferred from file size if omitted)")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="codec config file; flags given explicitly override it")
    p.add_argument("--variant-star", action="store_true", help="use the widened NeRV*++ blocks")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="defaults to $NRVPP_SEED, then 0")
    p.add_argument("--prune-ratio", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nervpp", description="NeRV++ implicit neural video codec")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="overfit a network to a clip and write a .nrv stream")
    _add_video_args(p)
    p.add_argument("--size", choices=sorted(SIZE_PRESETS), help="architecture preset (default xsmall)")
    _add_train_args(p)
    p.add_argument("--output", required=True, help="output .nrv path")
    p.add_argument("--log", help="training log CSV (default: <output stem>.train.csv)")

    p = sub.add_parser("decode", help="decode a .nrv stream to frames")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=vio.FORMATS, default="raw-rgb24")

    p = sub.add_parser("eval", help="PSNR / SSIM / MS-SSIM of decoded frames against a reference")
    _add_video_args(p, "--reference")
    p.add_argument("--decoded", required=True)
    p.add_argument("--decoded-format", choices=vio.FORMATS, help="defaults to --format")
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--output", help="metrics CSV (default: stdout)")

    p = sub.add_parser("rd-sweep", help="encode at several model sizes and write an RD CSV")
    _add_video_args(p)
    p.add_argument("--sizes", default=",".join(SIZE_PRESETS), help="comma-separated presets")
    _add_train_args(p)
    p.add_argument("--label", help="curve label (default nervpp or nervpp-star)")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--keep-dir", help="also write each size's .nrv here")
    p.add_argument("--output", required=True, help="RD CSV path")

    p = sub.add_parser("bdrate", help="Bjontegaard deltas between two RD CSVs")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=("psnr", "msssim"), default="psnr")
    p.add_argument("--anchor-label")
    p.add_argument("--test-label")

    p = sub.add_parser("info", help="dump a .nrv header with complexity figures")
    p.add_argument("--input", required=True)
    return parser


# -- helpers -------------------------------------------------------------------


def _read_video(args: argparse.Namespace, path: str, fmt: Optional[str] = None) -> vio.VideoFrames:
    return vio.read_frames(path, fmt or args.format, args.height, args.width, args.frames)


def _resolve_seed(args: argparse.Namespace) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NRVPP_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"NRVPP_SEED must be an integer, got {env!r}") from None


def _codec_config(args: argparse.Namespace, video: vio.VideoFrames, size: Optional[str]) -> vio.CodecConfig:
    if args.config:
        cfg = vio.load_config(args.config)
        if (cfg.height, cfg.width) != (video.height, video.width):
            raise DataError(
                f"config geometry {cfg.height}x{cfg.width} does not match video {video.height}x{video.width}"
            )
        if args.variant_star:
            cfg = replace(cfg, arch=replace(cfg.arch, variant_star=True))
    else:
        arch = preset_config(size or "xsmall", video.height, video.width, variant_star=args.variant_star)
        cfg = vio.CodecConfig(video.height, video.width, arch, TrainConfig())
    changes = {}
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    seed = _resolve_seed(args)
    if seed is not None:
        changes["seed"] = seed
    if changes:
        cfg = vio.with_train(cfg, **changes)
    if args.prune_ratio is not None:
        if not 0.0 <= args.prune_ratio < 1.0:
            raise UsageError(f"--prune-ratio must lie in [0, 1), got {args.prune_ratio}")
        cfg = replace(cfg, prune_ratio=args.prune_ratio)
    return cfg


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


# -- commands ------------------------------------------------------------------


def cmd_encode(args: argparse.Namespace) -> int:
    video = _read_video(args, args.input)
    cfg = _codec_config(args, video, args.size)
    cfg.arch.check_frame(video.height, video.width)

    def progress(rec) -> None:
        log.info("epoch %d  lr %.3g  loss %.5f  psnr %.3f", rec.epoch, rec.lr, rec.loss, rec.psnr)

    result = encode_video(video.data, cfg.arch, cfg.train, cfg.prune_ratio, epoch_hook=progress)
    out = Path(args.output)
    vio.atomic_write_bytes(out, result.stream)
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".train.csv")
    vio.atomic_write_text(log_path, result.log.to_csv())
    print(f"wrote {out} ({len(result.stream)} bytes)")
    print(f"bpp {result.bpp:.6f}")
    print(f"psnr_float {result.psnr_float:.4f} dB")
    if cfg.prune_ratio > 0:
        print(f"pruned {result.pruned_weights}/{result.conv_weights} conv weights")
        print(f"psnr_pruned {_fmt(result.psnr_pruned)} dB")
        print(f"psnr_finetuned {_fmt(result.psnr_finetuned)} dB")
    print(f"psnr {result.psnr_final:.6f} dB")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    result = decode_stream(data)
    vio.write_frames(result.frames, args.output, args.format)
    t, _, h, w = result.frames.shape
    print(f"decoded {t} frames of {h}x{w} to {args.output}")
    print(f"decode time {result.seconds:.3f} s ({result.fps:.2f} fps)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ref = _read_video(args, args.reference)
    dec = _read_video(args, args.decoded, args.decoded_format)
    if ref.data.shape != dec.data.shape:
        raise DataError(f"reference {ref.data.shape} and decoded {dec.data.shape} differ in shape")
    text = vio.metrics_rows_to_csv(metrics.summarize(ref.data, dec.data, per_frame=args.per_frame))
    if args.output:
        vio.atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sweep_one(job: tuple) -> dict:
    video, size, arch, train_cfg, prune_ratio, label, keep_dir = job
    result = encode_video(video, arch, train_cfg, prune_ratio)
    if keep_dir:
        vio.atomic_write_bytes(Path(keep_dir) / f"{label}-{size}.nrv", result.stream)
    decoded = decode_stream(result.stream).frames
    return {
        "label": label,
        "bpp": result.bpp,
        "psnr": metrics.psnr(video, decoded),
        "msssim": metrics.ms_ssim(video, decoded),
    }


def cmd_rd_sweep(args: argparse.Namespace) -> int:
    video = _read_video(args, args.input)
    sizes = [s.strip() for s in args.sizes.split(",") if s.strip()]
    unknown = [s for s in sizes if s not in SIZE_PRESETS]
    if unknown or not sizes:
        raise UsageError(f"unknown size(s): {', '.join(unknown) or '(none)'}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    label = args.label or ("nervpp-star" if args.variant_star else "nervpp")
    if args.keep_dir:
        Path(args.keep_dir).mkdir(parents=True, exist_ok=True)
    jobs = []
    for size in sizes:
        cfg = _codec_config(args, video, size)
        if args.config:
            # a config pins channels; sizes then vary only through the preset schedule
            arch = preset_config(size, video.height, video.width, variant_star=cfg.arch.variant_star)
        else:
            arch = cfg.arch
        jobs.append((video.data, size, arch, cfg.train, cfg.prune_ratio, label, args.keep_dir))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    rows.sort(key=lambda r: r["bpp"])
    vio.atomic_write_text(args.output, vio.rd_rows_to_csv(rows))
    for size, row in zip(sizes, rows):
        log.info("%s: %.5f bpp, %.3f dB", size, row["bpp"], row["psnr"])
    print(f"wrote {len(rows)} RD points to {args.output}")
    return EXIT_OK


def _curve(path: str, label: Optional[str], metric: str) -> metrics.RDCurve:
    rows = vio.read_rd_csv(path)
    labels = sorted({r["label"] for r in rows})
    if label is None:
        if len(labels) != 1:
            raise DataError(f"{path} holds curves {', '.join(labels) or '(none)'}; pick one with a --*-label flag")
        label = labels[0]
    rows = [r for r in rows if r["label"] == label]
    if not rows:
        raise DataError(f"{path} has no rows labelled {label!r}")
    quality = [r["psnr"] if metric == "psnr" else metrics.ms_ssim_db(r["msssim"]) for r in rows]
    return metrics.RDCurve(zip((r["bpp"] for r in rows), quality), label=label)


def cmd_bdrate(args: argparse.Namespace) -> int:
    anchor = _curve(args.anchor, args.anchor_label, args.metric)
    test = _curve(args.test, args.test_label, args.metric)
    rate = metrics.bd_rate(anchor, test)
    quality = metrics.bd_psnr(anchor, test)
    unit = "dB" if args.metric == "psnr" else "dB (MS-SSIM)"
    print(f"anchor {anchor.label} ({len(anchor)} points), test {test.label} ({len(test)} points), metric {args.metric}")
    print(f"BD-rate {rate:.4f} %")
    print(f"BD-quality {quality:.4f} {unit}")
    return EXIT_OK


def cmd_info(args: argparse.Namespace) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    model = deserialize(data)
    arch = model.arch
    freqs = histogram(np.concatenate([q.ravel() for q in decode_symbols(model)]))
    print(f"file {args.input}: {len(data)} bytes")
    print(f"video {model.frames} frames of {model.height}x{model.width}")
    print(f"bpp {metrics.bpp(len(data), model.frames, model.height, model.width):.6f}")
    print(f"variant {'NeRV*++' if arch.variant_star else 'NeRV++'}")
    print(f"positional encoding base {arch.pe_base} levels {arch.pe_levels}")
    print(f"stem hidden {arch.stem_hidden} -> {arch.base_channels}x{arch.base_grid[0]}x{arch.base_grid[1]}")
    for i, b in enumerate(arch.blocks):
        print(
            f"block {i}: stride {b.stride} channels {b.out_channels} "
            f"dw_kernel {b.dw_kernel} expansion {b.expansion}/{arch.post_expansion(b)}"
        )
    print(f"head kernel {arch.head_kernel}")
    print(f"tensors {len(model.tensors)}")
    print(f"params {count_params(arch)}")
    print(f"macs_per_pixel {count_macs_per_pixel(arch):.4f}")
    print(f"payload {model.payload_bits} bits for {model.num_symbols} symbols")
    print(f"mean code length {mean_code_length(freqs, model.table):.4f} bits, entropy {entropy_bits(freqs):.4f} bits")
    return EXIT_OK


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "rd-sweep": cmd_rd_sweep,
    "bdrate": cmd_bdrate,
    "info": cmd_info,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nervpp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"nervpp {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NervError, ValueError, OSError) as exc:
        print(f"nervpp {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
