"""Plain bit vector with constant-time rank and near-constant select.

Bits are packed little-endian into 64-bit words.  A rank directory stores
the cumulative set-bit count at every 512-bit superblock boundary, so
rank1 touches at most one directory entry plus eight words.  select1
binary-searches the directory and scans within one superblock.
"""

from __future__ import annotations

import struct

import numpy as np

_SUPERBLOCK_BITS = 512
_WORDS_PER_SB = _SUPERBLOCK_BITS // 64

try:
    _bitwise_count = np.bitwise_count
except AttributeError:  # numpy < 2.0
    _BYTE_POP = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1)

    def _bitwise_count(words):
        by = words.view(np.uint8).reshape(-1, 8)
        return _BYTE_POP[by].sum(1).astype(np.uint64)


def _pack(bits: np.ndarray) -> np.ndarray:
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, np.uint8)])
    return packed.view("<u8").astype(np.uint64)


class BitVector:
    __slots__ = ("nbits", "words", "_rank_dir", "_ones")

    def __init__(self, nbits: int, words: np.ndarray):
        self.nbits = nbits
        self.words = np.ascontiguousarray(words, dtype=np.uint64)
        self._rank_dir = self._build_rank_dir()
        self._ones = int(self._rank_dir[-1]) if len(self._rank_dir) else 0

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "BitVector":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(len(bits), _pack(bits))

    def _build_rank_dir(self) -> np.ndarray:
        # entry i = set bits before superblock i; one trailing total entry
        per_word = _bitwise_count(self.words).astype(np.uint64)
        n_sb = (len(self.words) + _WORDS_PER_SB - 1) // _WORDS_PER_SB
        pad = n_sb * _WORDS_PER_SB - len(per_word)
        if pad:
            per_word = np.concatenate([per_word, np.zeros(pad, np.uint64)])
        per_sb = per_word.reshape(-1, _WORDS_PER_SB).sum(1)
        out = np.zeros(n_sb + 1, dtype=np.uint32)
        np.cumsum(per_sb, out=out[1:])
        return out

    def __len__(self) -> int:
        return self.nbits

    @property
    def ones(self) -> int:
        return self._ones

    def get(self, i: int) -> int:
        if not 0 <= i < self.nbits:
            raise IndexError(i)
        return (int(self.words[i >> 6]) >> (i & 63)) & 1

    def rank1(self, i: int) -> int:
        """Number of set bits in [0, i)."""
        if not 0 <= i <= self.nbits:
            raise IndexError(i)
        sb = i >> 9
        total = int(self._rank_dir[sb])
        w = i >> 6
        for wi in range(sb << 3, w):
            total += int(self.words[wi]).bit_count()
        rem = i & 63
        if rem and w < len(self.words):
            total += (int(self.words[w]) & ((1 << rem) - 1)).bit_count()
        return total

    def select1(self, k: int) -> int:
        """Position of the k-th set bit, 0-based."""
        if not 0 <= k < self._ones:
            raise IndexError(f"select1({k}) on vector with {self._ones} set bits")
        sb = int(np.searchsorted(self._rank_dir, k, side="right")) - 1
        rem = k - int(self._rank_dir[sb])
        for wi in range(sb << 3, len(self.words)):
            word = int(self.words[wi])
            pc = word.bit_count()
            if rem < pc:
                for _ in range(rem):
                    word &= word - 1
                return (wi << 6) + (word & -word).bit_length() - 1
            rem -= pc
        raise AssertionError("rank directory inconsistent")

    def positions(self) -> np.ndarray:
        """Indices of all set bits (cached); feeds derived query structures."""
        if self._ones == 0:
            return np.empty(0, dtype=np.int64)
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little", count=self.nbits)
        return np.flatnonzero(bits).astype(np.int64)

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.words.view(np.uint8), bitorder="little", count=self.nbits)

    @property
    def size_bytes(self) -> int:
        return 8 + 8 * len(self.words) + 4 * len(self._rank_dir)

    def serialize(self) -> bytes:
        return (
            struct.pack("<Q", self.nbits)
            + self.words.astype("<u8").tobytes()
            + self._rank_dir.astype("<u4").tobytes()
        )

    @classmethod
    def read_from(cls, buf: bytes, offset: int) -> tuple["BitVector", int]:
        (nbits,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        n_words = (nbits + 63) // 64
        n_dir = (n_words + _WORDS_PER_SB - 1) // _WORDS_PER_SB + 1
        end_words = offset + 8 * n_words
        end_dir = end_words + 4 * n_dir
        if end_dir > len(buf):
            raise ValueError("truncated bit-vector section")
        words = np.frombuffer(buf, "<u8", count=n_words, offset=offset).astype(np.uint64)
        bv = cls(nbits, words)
        stored = np.frombuffer(buf, "<u4", count=n_dir, offset=end_words)
        if not np.array_equal(stored, bv._rank_dir):
            raise ValueError("rank directory does not match bit data")
        return bv, end_dir
