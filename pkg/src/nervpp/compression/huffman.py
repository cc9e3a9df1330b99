"""Canonical, length-limited Huffman coding over byte symbols (0..255)."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError

ALPHABET = 256
MAX_CODE_LENGTH = 16


def _huffman_lengths(freqs: Sequence[int]) -> list[int]:
    lengths = [0] * len(freqs)
    live = [s for s, f in enumerate(freqs) if f > 0]
    if len(live) == 1:
        lengths[live[0]] = 1
        return lengths
    # (weight, tiebreak, symbols); tiebreak keeps the merge order deterministic
    heap = [(freqs[s], s, [s]) for s in live]
    heapq.heapify(heap)
    counter = ALPHABET
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        for s in s1:
            lengths[s] += 1
        for s in s2:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, counter, s1 + s2))
        counter += 1
    return lengths


def _package_merge_lengths(freqs: Sequence[int], limit: int) -> list[int]:
    """Optimal code lengths no longer than ``limit`` (package-merge)."""
    live = sorted((f, s) for s, f in enumerate(freqs) if f > 0)
    n = len(live)
    if n > 2**limit:
        raise ValueError(f"{n} symbols cannot be coded with lengths <= {limit}")
    leaves = [(f, (s,)) for f, s in live]
    current = list(leaves)
    for _ in range(limit - 1):
        packages = [
            (current[i][0] + current[i + 1][0], current[i][1] + current[i + 1][1])
            for i in range(0, len(current) - 1, 2)
        ]
        current = sorted(leaves + packages, key=lambda item: item[0])
    lengths = [0] * len(freqs)
    for _, symbols in current[: 2 * n - 2]:
        for s in symbols:
            lengths[s] += 1
    return lengths


@dataclass(frozen=True)
class HuffmanTable:
    """Code lengths per symbol (0 = absent); codewords follow canonically."""

    lengths: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.lengths) != ALPHABET:
            raise DataError(f"Huffman table needs {ALPHABET} lengths, got {len(self.lengths)}")
        if any(not 0 <= n <= MAX_CODE_LENGTH for n in self.lengths):
            raise DataError(f"Huffman code lengths must lie in 0..{MAX_CODE_LENGTH}")
        if not any(self.lengths):
            raise DataError("Huffman table has no symbols")
        if self.kraft_sum() > 1.0:
            raise DataError(f"Huffman lengths violate the Kraft inequality (sum {self.kraft_sum()})")

    def kraft_sum(self) -> float:
        return sum(2.0**-n for n in self.lengths if n)

    def symbols(self) -> list[int]:
        """Symbols in canonical order: by length, then by value."""
        return sorted((s for s, n in enumerate(self.lengths) if n), key=lambda s: (self.lengths[s], s))

    def codes(self) -> dict[int, tuple[int, int]]:
        """Map symbol -> (codeword, length)."""
        out = {}
        code = 0
        prev = 0
        for s in self.symbols():
            n = self.lengths[s]
            code <<= n - prev
            out[s] = (code, n)
            code += 1
            prev = n
        return out

    def code_strings(self) -> dict[int, str]:
        return {s: format(c, f"0{n}b") for s, (c, n) in self.codes().items()}


def huffman_build(freqs: Sequence[int] | np.ndarray) -> HuffmanTable:
    freqs = [int(f) for f in freqs]
    if len(freqs) != ALPHABET:
        raise ValueError(f"histogram must have {ALPHABET} bins, got {len(freqs)}")
    if any(f < 0 for f in freqs) or not any(freqs):
        raise ValueError("histogram needs non-negative counts and at least one nonzero bin")
    lengths = _huffman_lengths(freqs)
    if max(lengths) > MAX_CODE_LENGTH:
        lengths = _package_merge_lengths(freqs, MAX_CODE_LENGTH)
    return HuffmanTable(tuple(lengths))


def histogram(symbols: Iterable[int] | np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(symbols, dtype=np.int64).ravel(), minlength=ALPHABET)


def huffman_encode(symbols: Sequence[int] | np.ndarray, table: HuffmanTable) -> tuple[bytes, int]:
    """Return the MSB-first packed bitstream (zero padded) and its length in bits."""
    codes = table.code_strings()
    parts = []
    for s in np.asarray(symbols, dtype=np.int64).ravel().tolist():
        try:
            parts.append(codes[s])
        except KeyError:
            raise ValueError(f"symbol {s} has no code in the table") from None
    bits = "".join(parts)
    nbits = len(bits)
    if nbits == 0:
        return b"", 0
    pad = (-nbits) % 8
    return int(bits + "0" * pad, 2).to_bytes((nbits + pad) // 8, "big"), nbits


def huffman_decode(data: bytes, table: HuffmanTable, count: int, nbits: int | None = None) -> np.ndarray:
    """Decode ``count`` symbols; raises :class:`DataError` on truncated input."""
    if nbits is None:
        nbits = 8 * len(data)
    if nbits > 8 * len(data):
        raise DataError(f"payload declares {nbits} bits but only {8 * len(data)} are present")
    # one lookup of the next MAX_CODE_LENGTH bits resolves each symbol
    lut_sym = np.full(1 << MAX_CODE_LENGTH, -1, dtype=np.int32)
    lut_len = np.zeros(1 << MAX_CODE_LENGTH, dtype=np.int32)
    for s, (code, n) in table.codes().items():
        lo = code << (MAX_CODE_LENGTH - n)
        hi = (code + 1) << (MAX_CODE_LENGTH - n)
        lut_sym[lo:hi] = s
        lut_len[lo:hi] = n
    bits = np.concatenate(
        [np.unpackbits(np.frombuffer(data, dtype=np.uint8)), np.zeros(MAX_CODE_LENGTH, dtype=np.uint8)]
    ).astype(np.int64)
    # window[p] = next MAX_CODE_LENGTH bits starting at bit p, as an integer
    windows = np.zeros(bits.size - MAX_CODE_LENGTH + 1, dtype=np.int64)
    for k in range(MAX_CODE_LENGTH):
        windows |= bits[k : k + windows.size] << (MAX_CODE_LENGTH - 1 - k)
    windows = windows.tolist()
    syms, lens = lut_sym.tolist(), lut_len.tolist()
    out = np.empty(count, dtype=np.uint8)
    pos = 0
    for i in range(count):
        w = windows[pos] if pos < len(windows) else 0
        n = lens[w]
        if n == 0 or pos + n > nbits:
            raise DataError(f"bitstream truncated or corrupt after {i} of {count} symbols")
        out[i] = syms[w]
        pos += n
    return out


def mean_code_length(freqs: Sequence[int] | np.ndarray, table: HuffmanTable) -> float:
    freqs = np.asarray(freqs, dtype=np.float64)
    return float(np.dot(freqs, np.asarray(table.lengths)) / freqs.sum())


def entropy_bits(freqs: Sequence[int] | np.ndarray) -> float:
    """Shannon entropy of the empirical distribution, in bits per symbol."""
    freqs = np.asarray(freqs, dtype=np.float64)
    p = freqs[freqs > 0] / freqs.sum()
    return float(-(p * np.log2(p)).sum()) if p.size > 1 else 0.0


__all__ = [
    "HuffmanTable",
    "huffman_build",
    "huffman_encode",
    "huffman_decode",
    "histogram",
    "mean_code_length",
    "entropy_bits",
]
