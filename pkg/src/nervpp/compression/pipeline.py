"""Quantize + entropy-code a parameter store, and invert it."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..model import ArchConfig, ParameterStore, check_params
from .bitstream import CompressedModel, TensorHeader, deserialize, serialize
from .huffman import histogram, huffman_build, huffman_decode, huffman_encode
from .quant import PruneMask, QuantTensor, apply_mask, quantize_per_tensor


def quantize_store(params: ParameterStore, bits: int = 8) -> list[QuantTensor]:
    return [quantize_per_tensor(t.data, bits) for _, t in params]


def compress_pipeline(
    params: ParameterStore,
    arch: ArchConfig,
    dims: tuple[int, int, int],
    mask: PruneMask | None = None,
    bits: int = 8,
) -> CompressedModel:
    """Mask, quantize each tensor to ``bits`` bits and Huffman-code all codes with one table.

    ``dims`` is (T, H, W) of the represented clip.
    """
    check_params(arch, params)
    if mask:
        params = apply_mask(params, mask)
    quant = quantize_store(params, bits)
    symbols = np.concatenate([q.q.ravel() for q in quant])
    table = huffman_build(histogram(symbols))
    payload, nbits = huffman_encode(symbols, table)
    headers = tuple(TensorHeader(q.shape, q.scale, q.min_val) for q in quant)
    frames, height, width = dims
    return CompressedModel(arch, frames, height, width, headers, table, nbits, payload)


def decode_symbols(model: CompressedModel) -> list[np.ndarray]:
    """Huffman-decode the payload into per-tensor uint8 code arrays."""
    flat = huffman_decode(model.payload, model.table, model.num_symbols, model.payload_bits)
    out, offset = [], 0
    for t in model.tensors:
        out.append(flat[offset : offset + t.size].reshape(t.shape))
        offset += t.size
    return out


def decompress(model: CompressedModel) -> tuple[ArchConfig, ParameterStore]:
    """Dequantized parameters, rounded to float32 values."""
    arrays = []
    for header, q in zip(model.tensors, decode_symbols(model)):
        deq = q.astype(np.float64) * header.scale + header.min_val
        arrays.append(deq.astype(np.float32).astype(np.float64))
    try:
        params = ParameterStore.from_arrays(model.arch, arrays)
    except ValueError as exc:
        raise DataError(f"tensor table does not match the architecture: {exc}") from exc
    return model.arch, params


def encode_bytes(
    params: ParameterStore,
    arch: ArchConfig,
    dims: tuple[int, int, int],
    mask: PruneMask | None = None,
) -> bytes:
    return serialize(compress_pipeline(params, arch, dims, mask))


def decode_bytes(data: bytes) -> tuple[CompressedModel, ArchConfig, ParameterStore]:
    model = deserialize(data)
    arch, params = decompress(model)
    return model, arch, params
