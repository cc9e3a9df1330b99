"""Byte layout of ``.nrv`` files.

All integers little-endian, floats IEEE-754 binary32::

    "NRVP" | version u8 | flags u8 (bit0 variant_star)
    pe_base f32 | pe_levels u16 | stem_hidden u16 | h0 u16 | w0 u16 | C0 u16
    n_blocks u8 | n_blocks x (stride u8, out_channels u16, dw_kernel u8, expansion u8)
    head_kernel u8 | T u32 | H u32 | W u32
    n_tensors u16 | n_tensors x (ndims u8, dims u32 x ndims, scale f32, min f32)
    code lengths for symbols 0..255 as (count u8, length u8) runs, ended by (0, 0)
    payload_bits u64 | payload, MSB-first, zero padded to a byte
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from ..errors import DataError
from ..model import ArchConfig, BlockSpec
from .huffman import ALPHABET, HuffmanTable

MAGIC = b"NRVP"
VERSION = 1
FILE_SUFFIX = ".nrv"


@dataclass(frozen=True)
class TensorHeader:
    shape: tuple[int, ...]
    scale: float
    min_val: float

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class CompressedModel:
    arch: ArchConfig
    frames: int
    height: int
    width: int
    tensors: tuple[TensorHeader, ...]
    table: HuffmanTable
    payload_bits: int
    payload: bytes

    @property
    def num_symbols(self) -> int:
        return sum(t.size for t in self.tensors)


def _rle_lengths(lengths: tuple[int, ...]) -> bytes:
    out = bytearray()
    i = 0
    while i < len(lengths):
        run = 1
        while i + run < len(lengths) and run < 255 and lengths[i + run] == lengths[i]:
            run += 1
        out += bytes((run, lengths[i]))
        i += run
    out += b"\x00\x00"
    return bytes(out)


def serialize(model: CompressedModel) -> bytes:
    try:
        return _pack(model)
    except struct.error as exc:
        raise ValueError(f"model does not fit the bitstream field widths: {exc}") from exc


def _pack(model: CompressedModel) -> bytes:
    arch = model.arch
    if len(model.payload) != (model.payload_bits + 7) // 8:
        raise DataError("payload length does not match payload_bits")
    buf = bytearray(MAGIC)
    buf += struct.pack("<BB", VERSION, 1 if arch.variant_star else 0)
    h0, w0 = arch.base_grid
    buf += struct.pack("<fHHHHH", arch.pe_base, arch.pe_levels, arch.stem_hidden, h0, w0, arch.base_channels)
    buf += struct.pack("<B", len(arch.blocks))
    for b in arch.blocks:
        buf += struct.pack("<BHBB", b.stride, b.out_channels, b.dw_kernel, b.expansion)
    buf += struct.pack("<BIII", arch.head_kernel, model.frames, model.height, model.width)
    buf += struct.pack("<H", len(model.tensors))
    for t in model.tensors:
        buf += struct.pack("<B", len(t.shape))
        buf += struct.pack(f"<{len(t.shape)}I", *t.shape)
        buf += struct.pack("<ff", t.scale, t.min_val)
    buf += _rle_lengths(model.table.lengths)
    buf += struct.pack("<Q", model.payload_bits)
    buf += model.payload
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise DataError(f"bitstream truncated at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"bitstream truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def deserialize(data: bytes) -> CompressedModel:
    r = _Reader(bytes(data))
    if r.raw(4) != MAGIC:
        raise DataError("not an NRVP bitstream (bad magic)")
    version, flags = r.take("<BB")
    if version != VERSION:
        raise DataError(f"unsupported bitstream version {version}")
    if flags & ~1:
        raise DataError(f"unknown header flags 0x{flags:02x}")
    pe_base, pe_levels, stem_hidden, h0, w0, c0 = r.take("<fHHHHH")
    (n_blocks,) = r.take("<B")
    try:
        blocks = tuple(BlockSpec(*r.take("<BHBB")) for _ in range(n_blocks))
    except ValueError as exc:
        raise DataError(f"invalid block spec in header: {exc}") from exc
    head_kernel, frames, height, width = r.take("<BIII")
    try:
        arch = ArchConfig(
            base_grid=(h0, w0),
            base_channels=c0,
            blocks=blocks,
            pe_base=pe_base,
            pe_levels=pe_levels,
            stem_hidden=stem_hidden,
            head_kernel=head_kernel,
            variant_star=bool(flags & 1),
        )
    except ValueError as exc:
        raise DataError(f"invalid architecture in header: {exc}") from exc
    if arch.frame_size != (height, width) or frames < 1:
        raise DataError(f"header geometry {frames}x{height}x{width} does not match the architecture")
    (n_tensors,) = r.take("<H")
    tensors = []
    for _ in range(n_tensors):
        (ndims,) = r.take("<B")
        shape = r.take(f"<{ndims}I")
        scale, min_val = r.take("<ff")
        if not (math.isfinite(scale) and math.isfinite(min_val) and scale > 0):
            raise DataError("invalid quantization parameters in header")
        tensors.append(TensorHeader(tuple(shape), scale, min_val))
    lengths: list[int] = []
    while True:
        count, length = r.take("<BB")
        if count == 0 and length == 0:
            break
        if count == 0:
            raise DataError("zero-length run in Huffman table")
        lengths += [length] * count
        if len(lengths) > ALPHABET:
            raise DataError("Huffman table describes more than 256 symbols")
    if len(lengths) != ALPHABET:
        raise DataError(f"Huffman table describes {len(lengths)} symbols, expected {ALPHABET}")
    table = HuffmanTable(tuple(lengths))  # raises DataError on Kraft violation
    (payload_bits,) = r.take("<Q")
    payload = r.raw((payload_bits + 7) // 8)
    if r.pos != len(r.data):
        raise DataError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return CompressedModel(arch, frames, height, width, tuple(tensors), table, payload_bits, payload)

