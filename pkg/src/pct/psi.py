"""Set-intersection protocols over chunked trajectory dictionaries.

Three decision rules, all driven by membership of client cell hashes in
the server's dictionary:

* ``st_psi``: a client is positive when any of its values is present.
* ``st_psi_doe``: membership is taken per value across the whole
  dictionary first, then the ordered membership sequence is scanned for
  runs.  Each matched sample contributes one sampling interval; a miss
  resets the run.  Positive when some run accumulates at least
  ``theta_doe`` seconds of overlap.
* ``nfp_st_psi``: each value probes its own cell plus the up-to-26
  adjacent cells, removing boundary-straddling false negatives.

With ``constant_scan`` enabled (the default) every value of every query
is probed against every chunk regardless of earlier hits, so the probe
count is a pure function of the input sizes.  Disabling it allows
dropping already-positive clients between chunks for st_psi and nfp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunking import ChunkedDictionary
from .encoding import EncodingParams, decode_cells, encode_cells
from .dictionary import sort_order

MODE_STPSI = "stpsi"
MODE_DOE = "doe"
MODE_NFP = "nfp"
ALL_MODES = (MODE_STPSI, MODE_DOE, MODE_NFP)


class FingerprintMismatch(ValueError):
    """Query batch was encoded under different parameters than the server."""


@dataclass(frozen=True)
class Query:
    """One client's encoded values, time-ascending as sampled."""

    client_id: str
    values: np.ndarray  # (k, hash_width_bytes) uint8


@dataclass
class QueryBatch:
    queries: list[Query]
    params_fingerprint: bytes


@dataclass(frozen=True)
class MatchResult:
    client_id: str
    positive: bool
    mode: str


@dataclass
class PsiConfig:
    constant_scan: bool = True
    theta_doe: int = 0
    sampling_interval: int = 60

    def __post_init__(self):
        if self.theta_doe < 0:
            raise ValueError("theta_doe must be non-negative")
        if self.sampling_interval <= 0:
            raise ValueError("sampling_interval must be positive")


@dataclass
class PsiStats:
    """Instrumentation: one probe = one value tested against one chunk."""

    probes: int = 0


def make_batch(queries: list[Query], params: EncodingParams) -> QueryBatch:
    return QueryBatch(list(queries), params.fingerprint())


def _check_batch(batch: QueryBatch, r: ChunkedDictionary) -> None:
    if batch.params_fingerprint != r.params.fingerprint():
        raise FingerprintMismatch(
            "query batch parameters do not match the server dictionary"
        )
    w = r.key_width
    for q in batch.queries:
        v = q.values
        if v.ndim != 2 or v.shape[1] != w:
            raise ValueError(
                f"client {q.client_id!r}: values are {v.shape} bytes wide, "
                f"dictionary keys are {w}"
            )


def _stack_values(batch: QueryBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All values concatenated, per-row client index, per-client row counts."""
    counts = np.array([len(q.values) for q in batch.queries], dtype=np.int64)
    if counts.sum() == 0:
        w = batch.queries[0].values.shape[1] if batch.queries else 1
        return np.empty((0, w), np.uint8), np.empty(0, np.int64), counts
    mat = np.concatenate([np.ascontiguousarray(q.values, np.uint8)
                          for q in batch.queries if len(q.values)])
    client_idx = np.repeat(np.arange(len(counts)), counts)
    return mat, client_idx, counts


def _full_membership(r: ChunkedDictionary, mat: np.ndarray,
                     stats: PsiStats | None) -> np.ndarray:
    """Membership of every row against the union of chunks, all chunks probed."""
    m = len(mat)
    member = np.zeros(m, dtype=bool)
    if m == 0:
        return member
    order = sort_order(mat)
    sp = np.ascontiguousarray(mat[order])
    hit_sorted = np.zeros(m, dtype=bool)
    for chunk in r.chunks:
        hit_sorted |= chunk.contains_many(sp, presorted=True)
        if stats is not None:
            stats.probes += m
    member[order] = hit_sorted
    return member


def st_psi(batch: QueryBatch, r: ChunkedDictionary, cfg: PsiConfig,
           stats: PsiStats | None = None) -> list[MatchResult]:
    """Positive iff any client value is a member of the union of chunks."""
    _check_batch(batch, r)
    mat, client_idx, counts = _stack_values(batch)
    n_clients = len(batch.queries)
    positive = np.zeros(n_clients, dtype=bool)
    if cfg.constant_scan:
        member = _full_membership(r, mat, stats)
        if member.any():
            np.logical_or.at(positive, client_idx[member], True)
    else:
        rows_mat = mat
        rows_client = client_idx
        for chunk in r.chunks:
            if len(rows_mat) == 0:
                break
            hit = chunk.contains_many(rows_mat)
            if stats is not None:
                stats.probes += len(rows_mat)
            if hit.any():
                np.logical_or.at(positive, rows_client[hit], True)
                keep = ~positive[rows_client]
                rows_mat = rows_mat[keep]
                rows_client = rows_client[keep]
    return [MatchResult(q.client_id, bool(positive[i]), MODE_STPSI)
            for i, q in enumerate(batch.queries)]


def run_scan(member: np.ndarray, client_idx: np.ndarray, n_clients: int,
             theta_doe: int, sampling_interval: int) -> np.ndarray:
    """Per-client run accumulation over an ordered membership sequence.

    A run is a maximal stretch of consecutive matched values within one
    client's sequence; it accumulates sampling_interval seconds per value
    and a miss resets it.  Returns the per-client positive flags.
    """
    positive = np.zeros(n_clients, dtype=bool)
    if len(member) == 0 or not member.any():
        return positive
    prev_same_run = np.empty(len(member), dtype=bool)
    prev_same_run[0] = False
    prev_same_run[1:] = member[:-1] & (client_idx[1:] == client_idx[:-1])
    run_start = member & ~prev_same_run
    run_id = np.cumsum(run_start)
    lengths = np.bincount(run_id[member])[1:]  # run ids are 1-based
    run_client = client_idx[run_start]
    ok = lengths * sampling_interval >= theta_doe
    if ok.any():
        np.logical_or.at(positive, run_client[ok], True)
    return positive


def st_psi_doe(batch: QueryBatch, r: ChunkedDictionary, cfg: PsiConfig,
               stats: PsiStats | None = None) -> list[MatchResult]:
    """Duration-of-exposure rule over the ordered membership sequence.

    Membership is resolved against the whole dictionary before any run is
    scored, so runs are unaffected by how keys landed in chunks.  This
    mode always scans every chunk: run structure needs every value's
    membership regardless of early hits.
    """
    _check_batch(batch, r)
    mat, client_idx, counts = _stack_values(batch)
    member = _full_membership(r, mat, stats)
    positive = run_scan(member, client_idx, len(batch.queries),
                        cfg.theta_doe, cfg.sampling_interval)
    return [MatchResult(q.client_id, bool(positive[i]), MODE_DOE)
            for i, q in enumerate(batch.queries)]


_NEIGHBOR_OFFSETS = np.array(
    [(0, 0, 0)]
    + [(dx, dy, dt)
       for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dt in (-1, 0, 1)
       if (dx, dy, dt) != (0, 0, 0)],
    dtype=np.int64,
)


def _neighbor_matrix(mat: np.ndarray, params: EncodingParams) -> np.ndarray:
    """27 probe rows per value: the cell itself first, then its neighbors.

    Out-of-range neighbors keep the probe slot (constant scan issues all
    27) but probe the center cell again, which cannot change the result.
    """
    x, y, tc = decode_cells(mat, params)
    size = 1 << params.theta_geo
    tcs = 1 << params.time_bits
    nx = x[None, :] + _NEIGHBOR_OFFSETS[:, 0:1]
    ny = y[None, :] + _NEIGHBOR_OFFSETS[:, 1:2]
    nt = tc[None, :] + _NEIGHBOR_OFFSETS[:, 2:3]
    valid = ((nx >= 0) & (nx < size) & (ny >= 0) & (ny < size)
             & (nt >= 0) & (nt < tcs))
    nx = np.where(valid, nx, x[None, :])
    ny = np.where(valid, ny, y[None, :])
    nt = np.where(valid, nt, tc[None, :])
    return encode_cells(nx.ravel(), ny.ravel(), nt.ravel(), params)


def nfp_st_psi(batch: QueryBatch, r: ChunkedDictionary, cfg: PsiConfig,
               stats: PsiStats | None = None) -> list[MatchResult]:
    """st_psi with each value additionally probing its adjacent cells."""
    _check_batch(batch, r)
    mat, client_idx, counts = _stack_values(batch)
    n_clients = len(batch.queries)
    positive = np.zeros(n_clients, dtype=bool)
    if len(mat) == 0:
        return [MatchResult(q.client_id, False, MODE_NFP) for q in batch.queries]
    probes = _neighbor_matrix(mat, r.params)  # offset-major: 27 blocks of m rows
    probe_client = np.tile(client_idx, len(_NEIGHBOR_OFFSETS))
    if cfg.constant_scan:
        member = _full_membership(r, probes, stats)
        if member.any():
            np.logical_or.at(positive, probe_client[member], True)
    else:
        rows_mat = probes
        rows_client = probe_client
        for chunk in r.chunks:
            if len(rows_mat) == 0:
                break
            hit = chunk.contains_many(rows_mat)
            if stats is not None:
                stats.probes += len(rows_mat)
            if hit.any():
                np.logical_or.at(positive, rows_client[hit], True)
                keep = ~positive[rows_client]
                rows_mat = rows_mat[keep]
                rows_client = rows_client[keep]
    return [MatchResult(q.client_id, bool(positive[i]), MODE_NFP)
            for i, q in enumerate(batch.queries)]


def run_protocol(mode: str, batch: QueryBatch, r: ChunkedDictionary,
                 cfg: PsiConfig, stats: PsiStats | None = None) -> list[MatchResult]:
    if mode == MODE_STPSI:
        return st_psi(batch, r, cfg, stats)
    if mode == MODE_DOE:
        return st_psi_doe(batch, r, cfg, stats)
    if mode == MODE_NFP:
        return nfp_st_psi(batch, r, cfg, stats)
    raise ValueError(f"unknown mode {mode!r}, expected one of {ALL_MODES}")
