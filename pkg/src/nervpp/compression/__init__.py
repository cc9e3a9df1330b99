"""Model compression: pruning, quantization, Huffman coding and the ``.nrv`` format."""

from .bitstream import FILE_SUFFIX, CompressedModel, TensorHeader, deserialize, serialize
from .huffman import (
    HuffmanTable,
    entropy_bits,
    histogram,
    huffman_build,
    huffman_decode,
    huffman_encode,
    mean_code_length,
)
from .pipeline import compress_pipeline, decode_bytes, decode_symbols, decompress, encode_bytes, quantize_store
from .quant import PruneMask, QuantTensor, apply_mask, mask_sparsity, prune_l1_global, quantize_per_tensor

__all__ = [
    "FILE_SUFFIX",
    "CompressedModel",
    "TensorHeader",
    "serialize",
    "deserialize",
    "HuffmanTable",
    "huffman_build",
    "huffman_encode",
    "huffman_decode",
    "histogram",
    "entropy_bits",
    "mean_code_length",
    "compress_pipeline",
    "decompress",
    "decode_symbols",
    "encode_bytes",
    "decode_bytes",
    "quantize_store",
    "PruneMask",
    "QuantTensor",
    "apply_mask",
    "mask_sparsity",
    "prune_l1_global",
    "quantize_per_tensor",
]
