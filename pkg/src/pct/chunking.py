"""Splitting an encoded key set into balanced dictionary chunks.

The server's trajectory set rarely fits a trusted-memory budget in one
piece, so the sorted unique keys are cut into contiguous runs of
near-equal size and one trie is built per run.  Because runs partition
the sorted key space, a single comparison against the run boundaries
routes any membership probe to the one chunk that could hold it, while
batch intersection protocols may still scan every chunk on purpose.

A build is persisted as one file per chunk plus a small plain-text
manifest carrying the encoding parameters and the chunk file list.
"""

from __future__ import annotations

import os
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .dictionary import SuccinctTrie, build_trie
from .encoding import EncodingParams, MixMode, encode_points

DEFAULT_ENCLAVE_BUDGET = 96 * 2**20


@dataclass
class ChunkedDictionary:
    params: EncodingParams
    chunks: list[SuccinctTrie]
    chunk_boundaries: list[bytes | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.chunk_boundaries:
            self.chunk_boundaries = [
                c.first_key() if c.key_count else None for c in self.chunks
            ]

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    @property
    def key_count(self) -> int:
        return sum(c.key_count for c in self.chunks)

    @property
    def key_width(self) -> int:
        return self.params.hash_width_bytes

    def membership(self, key: bytes) -> bool:
        """Point probe routed to the single chunk that could hold the key."""
        if len(key) != self.key_width:
            raise ValueError("key width mismatch")
        bounds = [b for b in self.chunk_boundaries if b is not None]
        i = bisect_right(bounds, key) - 1
        if i < 0:
            return False
        return self.chunks[i].contains(key)

    def serialized_chunk_sizes(self) -> list[int]:
        return [c.size_bytes for c in self.chunks]


def dedup_sorted_keys(mat: np.ndarray) -> np.ndarray:
    """Sorted unique rows of a key matrix, byte-lexicographic order."""
    mat = np.ascontiguousarray(mat, dtype=np.uint8)
    n, w = mat.shape
    if n == 0:
        return mat
    if w <= 8:
        full = np.zeros((n, 8), dtype=np.uint8)
        full[:, 8 - w :] = mat
        uniq = np.unique(full.view(">u8").reshape(n))
        out = uniq.astype(">u8").view(np.uint8).reshape(-1, 8)
        return np.ascontiguousarray(out[:, 8 - w :])
    uniq = np.unique(mat.view([("", np.uint8)] * w).reshape(n))
    return uniq.view(np.uint8).reshape(-1, w)


def split_counts(total: int, n_chunks: int) -> list[int]:
    """Contiguous run lengths differing by at most one."""
    if n_chunks < 1:
        raise ValueError("n_chunks must be at least 1")
    base, rem = divmod(total, n_chunks)
    return [base + 1 if i < rem else base for i in range(n_chunks)]


def build_chunked_dictionary(keys: np.ndarray, params: EncodingParams,
                             n_chunks: int) -> ChunkedDictionary:
    """Dedup, sort, split and build one trie per run of unique keys."""
    uniq = dedup_sorted_keys(keys)
    counts = split_counts(len(uniq), n_chunks)
    chunks = []
    at = 0
    for c in counts:
        chunks.append(build_trie(uniq[at : at + c], key_width=params.hash_width_bytes))
        at += c
    return ChunkedDictionary(params, chunks)


def map_to_chunked_dictionary(t, lat, lng, params: EncodingParams,
                              n_chunks: int) -> ChunkedDictionary:
    """Encode raw samples and build the chunked dictionary over them.

    Samples outside the tracing period or coordinate domain are rejected
    with the index of the first offender.
    """
    mat = encode_points(t, lat, lng, params, validate=True)
    return build_chunked_dictionary(mat, params, n_chunks)


# ---------------------------------------------------------------------------
# chunk-count planning


def estimate_bytes_per_key(keys: np.ndarray, sample: int = 65536) -> float:
    """Measured trie bytes per key on a thinned sample of the unique keys.

    Thinning breaks some prefix sharing, so the estimate errs high, which
    only makes the planner conservative.
    """
    uniq = dedup_sorted_keys(keys)
    if len(uniq) == 0:
        return float(uniq.shape[1] + 4)
    step = max(1, len(uniq) // sample)
    picked = uniq[::step]
    trie = build_trie(picked)
    return trie.size_bytes / len(picked)


def plan_chunk_count(total_keys: int, bytes_per_key: float, budget_bytes: int,
                     reserved_query_bytes: int = 0) -> int:
    """Smallest chunk count whose per-chunk bytes fit the remaining budget."""
    usable = budget_bytes - reserved_query_bytes
    if usable <= 0:
        raise ValueError("reserved query bytes exhaust the whole budget")
    if total_keys == 0:
        return 1
    import math

    return max(1, math.ceil(total_keys * bytes_per_key / usable))


# ---------------------------------------------------------------------------
# manifest and chunk files


@dataclass
class Manifest:
    params: EncodingParams
    chunk_paths: list[str]
    theta_doe: int | None = None
    sampling_interval: int | None = None


def save_chunked_dictionary(cd: ChunkedDictionary, directory: str, *,
                            theta_doe: int | None = None,
                            sampling_interval: int | None = None) -> str:
    """Write chunk files plus manifest under a directory; returns manifest path."""
    os.makedirs(os.path.join(directory, "chunks"), exist_ok=True)
    rel_paths = []
    for i, chunk in enumerate(cd.chunks):
        rel = os.path.join("chunks", f"chunk_{i:04d}.pctf")
        with open(os.path.join(directory, rel), "wb") as f:
            f.write(chunk.serialize())
        rel_paths.append(rel)
    manifest_path = os.path.join(directory, "manifest.txt")
    p = cd.params
    lines = [
        f"theta_geo = {p.theta_geo}",
        f"theta_time = {p.theta_time}",
        f"t_start = {p.t_start}",
        f"t_end = {p.t_end}",
        f"mix_mode = {p.mix_mode.value}",
    ]
    if theta_doe is not None:
        lines.append(f"theta_doe = {theta_doe}")
    if sampling_interval is not None:
        lines.append(f"sampling_interval = {sampling_interval}")
    lines.append("")
    lines.extend(rel_paths)
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return manifest_path


def read_manifest(path: str) -> Manifest:
    header: dict[str, str] = {}
    chunk_paths: list[str] = []
    in_header = True
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if in_header:
                if not line:
                    in_header = False
                    continue
                if "=" not in line:
                    raise ValueError(f"malformed manifest header line: {line!r}")
                k, _, v = line.partition("=")
                header[k.strip()] = v.strip()
            elif line:
                chunk_paths.append(line)
    try:
        params = EncodingParams(
            theta_geo=int(header["theta_geo"]),
            theta_time=int(header["theta_time"]),
            t_start=int(header["t_start"]),
            t_end=int(header["t_end"]),
            mix_mode=MixMode(header.get("mix_mode", "interleave")),
        )
    except KeyError as e:
        raise ValueError(f"manifest missing required key {e.args[0]}") from None
    theta_doe = int(header["theta_doe"]) if "theta_doe" in header else None
    interval = int(header["sampling_interval"]) if "sampling_interval" in header else None
    return Manifest(params, chunk_paths, theta_doe, interval)


def load_chunked_dictionary(manifest_path: str) -> tuple[ChunkedDictionary, Manifest]:
    mf = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    chunks = []
    for rel in mf.chunk_paths:
        with open(os.path.join(base, rel), "rb") as f:
            chunks.append(SuccinctTrie.deserialize(f.read()))
    return ChunkedDictionary(mf.params, chunks), mf
