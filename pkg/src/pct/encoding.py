"""Spatiotemporal cell encoding for trajectory samples.

A sample (t, lat, lng) is mapped to one cell of a three-dimensional grid:
Web-Mercator tile column/row at zoom ``theta_geo`` and a time cell of
``2**(32 - theta_time)`` seconds within a fixed tracing period.  The three
per-axis bit strings are mixed into a single bit string and packed
big-endian into a fixed number of bytes, so byte-lexicographic order equals
bit-string order and nearby cells share long prefixes.

Scalar functions work on one sample and mirror the stage-by-stage pipeline
(``quadkey_encode`` -> ``periodic_encode`` -> ``bit_mix`` -> ``byte_encode``).
The ``encode_points``/``encode_cells``/``decode_cells`` entry points are the
vectorized bulk equivalents used by the dictionary and intersection layers.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

# Northern/southern limit of the square Web-Mercator map.
MAX_LATITUDE = 360.0 * math.atan(math.exp(math.pi)) / math.pi - 90.0

MAX_ZOOM = 31

# Time cells are carved out of an unsigned 32-bit second counter.
_EPOCH_BITS = 32

# Circumference of the WGS84 equator, for approximate cell-size reporting.
_EARTH_CIRCUMFERENCE_M = 40075016.686


class MixMode(Enum):
    """How the x/y/t bit strings are combined into one."""

    INTERLEAVE = "interleave"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class TrajectoryPoint:
    """One trajectory sample: epoch seconds plus WGS84 degrees."""

    t: int
    lat: float
    lng: float


@dataclass(frozen=True)
class CellCoords:
    """Grid cell named by a hash: tile column, tile row, time-cell index."""

    x: int
    y: int
    tc: int


@dataclass(frozen=True)
class EncodingParams:
    """Grid resolution and tracing period shared by clients and server.

    theta_geo:  zoom level, cells are 1/2**theta_geo of the mercator map side
    theta_time: time resolution, cells last 2**(32 - theta_time) seconds
    t_start, t_end: tracing period bounds in epoch seconds, t_start < t_end
    mix_mode:   bit mixing strategy for the three axis strings
    """

    theta_geo: int
    theta_time: int
    t_start: int
    t_end: int
    mix_mode: MixMode = MixMode.INTERLEAVE

    def __post_init__(self) -> None:
        if isinstance(self.mix_mode, str):
            object.__setattr__(self, "mix_mode", MixMode(self.mix_mode.lower()))
        if not 1 <= self.theta_geo <= MAX_ZOOM:
            raise ValueError(f"theta_geo must be in [1, {MAX_ZOOM}], got {self.theta_geo}")
        if not 1 <= self.theta_time <= _EPOCH_BITS:
            raise ValueError(f"theta_time must be in [1, {_EPOCH_BITS}], got {self.theta_time}")
        if self.t_start >= self.t_end:
            raise ValueError("t_start must be strictly before t_end")
        if self.time_bits < 1:
            raise ValueError(
                "period too short for theta_time: "
                f"bit_length(t_end - t_start)={self.period_bits} does not exceed "
                f"the {self.time_shift}-bit cell shift"
            )

    @property
    def period_bits(self) -> int:
        """Bit length of the tracing period in seconds."""
        return (self.t_end - self.t_start).bit_length()

    @property
    def time_shift(self) -> int:
        return _EPOCH_BITS - self.theta_time

    @property
    def time_bits(self) -> int:
        """Width of the time-cell index in bits."""
        return self.period_bits - self.time_shift

    @property
    def total_bits(self) -> int:
        return 2 * self.theta_geo + self.time_bits

    @property
    def hash_width_bytes(self) -> int:
        return (self.total_bits + 7) // 8

    @property
    def time_cell_seconds(self) -> int:
        return 1 << self.time_shift

    def fingerprint(self) -> bytes:
        """16-byte digest binding all fields; guards client/server agreement."""
        packed = struct.pack(
            "<HHqqB",
            self.theta_geo,
            self.theta_time,
            self.t_start,
            self.t_end,
            1 if self.mix_mode is MixMode.INTERLEAVE else 2,
        )
        return hashlib.sha256(packed).digest()[:16]


def approx_cell_side_meters(theta_geo: int) -> float:
    """Equatorial side length of one spatial cell, for reporting only."""
    return _EARTH_CIRCUMFERENCE_M / (1 << theta_geo)


def approx_time_cell_seconds(theta_time: int) -> int:
    return 1 << (_EPOCH_BITS - theta_time)


# ---------------------------------------------------------------------------
# scalar pipeline


def tile_fractions(lat: float, lng: float) -> tuple[float, float]:
    """Map degrees to [0, 1] x [0, 1] mercator map fractions.

    Latitude is clipped to the mercator limit and longitude to [-180, 180];
    callers that need strict domain validation check before encoding.
    """
    lat = min(MAX_LATITUDE, max(-MAX_LATITUDE, lat))
    lng = min(180.0, max(-180.0, lng))
    px = (lng + 180.0) / 360.0
    sin_lat = math.sin(lat * math.pi / 180.0)
    py = 0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)
    return px, py


def tile_coords(lat: float, lng: float, theta_geo: int) -> tuple[float, float]:
    """Continuous tile coordinates at the given zoom (cell side = 1 unit)."""
    px, py = tile_fractions(lat, lng)
    size = float(1 << theta_geo)
    return px * size, py * size


def tile_xy(lat: float, lng: float, theta_geo: int) -> tuple[int, int]:
    """Integer tile column/row at the given zoom."""
    if not (math.isfinite(lat) and math.isfinite(lng)):
        raise ValueError(f"latitude/longitude must be finite, got ({lat}, {lng})")
    fx, fy = tile_coords(lat, lng, theta_geo)
    last = (1 << theta_geo) - 1
    x = min(last, max(0, math.floor(fx)))
    y = min(last, max(0, math.floor(fy)))
    return x, y


def quadkey_encode(lat: float, lng: float, theta_geo: int) -> tuple[str, str]:
    """Encode degrees into theta_geo-bit tile column/row bit strings."""
    if not 1 <= theta_geo <= MAX_ZOOM:
        raise ValueError(f"theta_geo must be in [1, {MAX_ZOOM}], got {theta_geo}")
    x, y = tile_xy(lat, lng, theta_geo)
    return format(x, "b").zfill(theta_geo), format(y, "b").zfill(theta_geo)


def periodic_encode(t: int, t_start: int, t_end: int, theta_time: int) -> str:
    """Encode an epoch second into its time-cell index bit string.

    The cell index is (t - t_start) >> (32 - theta_time), written with
    exactly bit_length(t_end - t_start) - (32 - theta_time) bits.
    """
    if t_start >= t_end:
        raise ValueError("t_start must be strictly before t_end")
    if not 1 <= theta_time <= _EPOCH_BITS:
        raise ValueError(f"theta_time must be in [1, {_EPOCH_BITS}], got {theta_time}")
    shift = _EPOCH_BITS - theta_time
    width = (t_end - t_start).bit_length() - shift
    if width < 1:
        raise ValueError("period too short for theta_time: time cell index has no bits")
    if not t_start <= t <= t_end:
        raise ValueError(f"t={t} outside tracing period [{t_start}, {t_end}]")
    return format((t - t_start) >> shift, "b").zfill(width)


def bit_mix(xbits: str, ybits: str, tbits: str, mix_mode: MixMode = MixMode.INTERLEAVE) -> str:
    """Combine the three axis strings into one.

    INTERLEAVE takes one bit from x, y, t in turn, skipping a stream once it
    is exhausted, so unequal lengths are allowed.  SEQUENTIAL concatenates.
    """
    if isinstance(mix_mode, str):
        mix_mode = MixMode(mix_mode.lower())
    if mix_mode is MixMode.SEQUENTIAL:
        return xbits + ybits + tbits
    streams = (xbits, ybits, tbits)
    picked = []
    i = 0
    while True:
        advanced = False
        for s in streams:
            if i < len(s):
                picked.append(s[i])
                advanced = True
        if not advanced:
            return "".join(picked)
        i += 1


def byte_encode(bits: str) -> bytes:
    """Pack a bit string big-endian, zero bits prepended to a byte multiple."""
    if not bits:
        return b""
    width = (len(bits) + 7) // 8
    return int(bits, 2).to_bytes(width, "big")


def trajectory_hash(point: TrajectoryPoint, params: EncodingParams) -> bytes:
    """Full scalar pipeline: one sample to its fixed-width cell hash."""
    xbits, ybits = quadkey_encode(point.lat, point.lng, params.theta_geo)
    tbits = periodic_encode(point.t, params.t_start, params.t_end, params.theta_time)
    return byte_encode(bit_mix(xbits, ybits, tbits, params.mix_mode))


def cell_of_point(point: TrajectoryPoint, params: EncodingParams) -> CellCoords:
    """Grid cell a sample falls in, without going through the bit pipeline."""
    x, y = tile_xy(point.lat, point.lng, params.theta_geo)
    if not params.t_start <= point.t <= params.t_end:
        raise ValueError(f"t={point.t} outside tracing period")
    return CellCoords(x, y, (point.t - params.t_start) >> params.time_shift)


def encode_cell(cell: CellCoords, params: EncodingParams) -> bytes:
    """Hash for an explicit grid cell."""
    size = 1 << params.theta_geo
    tcs = 1 << params.time_bits
    if not (0 <= cell.x < size and 0 <= cell.y < size):
        raise ValueError(f"tile coords out of range for zoom {params.theta_geo}: {cell}")
    if not 0 <= cell.tc < tcs:
        raise ValueError(f"time cell out of range: {cell.tc}")
    xbits = format(cell.x, "b").zfill(params.theta_geo)
    ybits = format(cell.y, "b").zfill(params.theta_geo)
    tbits = format(cell.tc, "b").zfill(params.time_bits)
    return byte_encode(bit_mix(xbits, ybits, tbits, params.mix_mode))


def decode_cell(value: bytes, params: EncodingParams) -> CellCoords:
    """Invert a hash back to its grid cell.

    Rejects values of the wrong width and values with nonzero padding bits.
    """
    if len(value) != params.hash_width_bytes:
        raise ValueError(
            f"hash is {len(value)} bytes, params require {params.hash_width_bytes}"
        )
    v = int.from_bytes(value, "big")
    total = params.total_bits
    if v >> total:
        raise ValueError("nonzero padding bits in hash value")
    lay = _layout(params.theta_geo, params.time_bits, params.mix_mode)
    x = y = tc = 0
    for p in lay.pos_x:
        x = (x << 1) | ((v >> (total - 1 - int(p))) & 1)
    for p in lay.pos_y:
        y = (y << 1) | ((v >> (total - 1 - int(p))) & 1)
    for p in lay.pos_t:
        tc = (tc << 1) | ((v >> (total - 1 - int(p))) & 1)
    return CellCoords(x, y, tc)


def neighbor_hashes(value: bytes, params: EncodingParams) -> set[bytes]:
    """Hashes of the up-to-26 grid cells adjacent to the value's cell.

    Neighbors falling outside the grid on any axis are omitted; the center
    cell itself is not included.
    """
    c = decode_cell(value, params)
    size = 1 << params.theta_geo
    tcs = 1 << params.time_bits
    out = set()
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dt in (-1, 0, 1):
                if dx == dy == dt == 0:
                    continue
                x, y, tc = c.x + dx, c.y + dy, c.tc + dt
                if 0 <= x < size and 0 <= y < size and 0 <= tc < tcs:
                    out.add(encode_cell(CellCoords(x, y, tc), params))
    return out


# ---------------------------------------------------------------------------
# bit layout shared by the scalar decoder and the bulk paths


@dataclass(frozen=True)
class _BitLayout:
    # output bit index (0 = most significant of the packed string) of each
    # stream bit, MSB-first per stream
    pos_x: tuple[int, ...]
    pos_y: tuple[int, ...]
    pos_t: tuple[int, ...]


@lru_cache(maxsize=None)
def _layout(theta_geo: int, time_bits: int, mix_mode: MixMode) -> _BitLayout:
    if mix_mode is MixMode.SEQUENTIAL:
        px = tuple(range(theta_geo))
        py = tuple(range(theta_geo, 2 * theta_geo))
        pt = tuple(range(2 * theta_geo, 2 * theta_geo + time_bits))
        return _BitLayout(px, py, pt)
    lengths = (theta_geo, theta_geo, time_bits)
    positions: tuple[list[int], list[int], list[int]] = ([], [], [])
    k = 0
    i = 0
    while any(i < n for n in lengths):
        for s in range(3):
            if i < lengths[s]:
                positions[s].append(k)
                k += 1
        i += 1
    return _BitLayout(tuple(positions[0]), tuple(positions[1]), tuple(positions[2]))


# ---------------------------------------------------------------------------
# bulk paths


def tile_coords_bulk(lat: np.ndarray, lng: np.ndarray, theta_geo: int) -> tuple[np.ndarray, np.ndarray]:
    """Bulk continuous tile coordinates (cell side = 1 unit)."""
    lat = np.clip(lat, -MAX_LATITUDE, MAX_LATITUDE)
    lng = np.clip(lng, -180.0, 180.0)
    px = (lng + 180.0) / 360.0
    sin_lat = np.sin(lat * (math.pi / 180.0))
    py = 0.5 - np.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)
    size = float(1 << theta_geo)
    return px * size, py * size


def _tile_xy_bulk(lat: np.ndarray, lng: np.ndarray, theta_geo: int) -> tuple[np.ndarray, np.ndarray]:
    fx, fy = tile_coords_bulk(lat, lng, theta_geo)
    last = (1 << theta_geo) - 1
    x = np.clip(np.floor(fx), 0, last).astype(np.int64)
    y = np.clip(np.floor(fy), 0, last).astype(np.int64)
    return x, y


def ints_to_keys(values: np.ndarray, width: int) -> np.ndarray:
    """uint64 packed-hash integers to an (n, width) uint8 key matrix."""
    full = np.ascontiguousarray(values, dtype=np.uint64).astype(">u8")
    mat = full.view(np.uint8).reshape(-1, 8)
    return np.ascontiguousarray(mat[:, 8 - width :])


def keys_to_ints(keys: np.ndarray) -> np.ndarray:
    """(n, width) uint8 key matrix to uint64 integers; width must be <= 8."""
    keys = np.ascontiguousarray(keys, dtype=np.uint8)
    n, w = keys.shape
    if w > 8:
        raise ValueError(f"key width {w} exceeds 8 bytes, no integer form")
    full = np.zeros((n, 8), dtype=np.uint8)
    full[:, 8 - w :] = keys
    return full.view(">u8").reshape(n).astype(np.uint64)


def encode_cells(x: np.ndarray, y: np.ndarray, tc: np.ndarray, params: EncodingParams) -> np.ndarray:
    """Bulk cell coordinates to an (n, hash_width_bytes) uint8 key matrix."""
    total = params.total_bits
    lay = _layout(params.theta_geo, params.time_bits, params.mix_mode)
    if total <= 64:
        out = np.zeros(len(x), dtype=np.uint64)
        for src, positions, width in (
            (x, lay.pos_x, params.theta_geo),
            (y, lay.pos_y, params.theta_geo),
            (tc, lay.pos_t, params.time_bits),
        ):
            src = np.asarray(src).astype(np.uint64)
            for j, p in enumerate(positions):
                bit = (src >> np.uint64(width - 1 - j)) & np.uint64(1)
                out |= bit << np.uint64(total - 1 - p)
        return ints_to_keys(out, params.hash_width_bytes)
    # wide layouts are rare; fall back to the scalar path row by row
    rows = [
        encode_cell(CellCoords(int(a), int(b), int(c)), params)
        for a, b, c in zip(x, y, tc)
    ]
    return np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(-1, params.hash_width_bytes)


def decode_cells(keys: np.ndarray, params: EncodingParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bulk inverse of encode_cells; validates width and padding bits."""
    keys = np.asarray(keys, dtype=np.uint8)
    if keys.ndim != 2 or keys.shape[1] != params.hash_width_bytes:
        raise ValueError(
            f"key matrix width {keys.shape} does not match params "
            f"({params.hash_width_bytes} bytes)"
        )
    total = params.total_bits
    lay = _layout(params.theta_geo, params.time_bits, params.mix_mode)
    if total <= 64:
        v = keys_to_ints(keys)
        if len(v) and total < 64 and int((v >> np.uint64(total)).max()):
            raise ValueError("nonzero padding bits in hash value")
        outs = []
        for positions, width in (
            (lay.pos_x, params.theta_geo),
            (lay.pos_y, params.theta_geo),
            (lay.pos_t, params.time_bits),
        ):
            acc = np.zeros(len(v), dtype=np.uint64)
            for j, p in enumerate(positions):
                bit = (v >> np.uint64(total - 1 - p)) & np.uint64(1)
                acc |= bit << np.uint64(width - 1 - j)
            outs.append(acc.astype(np.int64))
        return outs[0], outs[1], outs[2]
    cells = [decode_cell(row.tobytes(), params) for row in keys]
    x = np.array([c.x for c in cells], dtype=np.int64)
    y = np.array([c.y for c in cells], dtype=np.int64)
    tc = np.array([c.tc for c in cells], dtype=np.int64)
    return x, y, tc


def encode_points(
    t: np.ndarray,
    lat: np.ndarray,
    lng: np.ndarray,
    params: EncodingParams,
    *,
    validate: bool = True,
) -> np.ndarray:
    """Bulk samples to key matrix; the workhorse behind dictionary builds.

    With validate=True, samples outside the tracing period or longitude
    domain and non-finite coordinates are rejected, reporting the index of
    the first offending sample.
    """
    t = np.asarray(t, dtype=np.int64)
    lat = np.asarray(lat, dtype=np.float64)
    lng = np.asarray(lng, dtype=np.float64)
    if not (len(t) == len(lat) == len(lng)):
        raise ValueError("t, lat, lng must have equal lengths")
    if validate:
        bad = np.flatnonzero(~(np.isfinite(lat) & np.isfinite(lng)))
        if len(bad):
            i = int(bad[0])
            raise ValueError(f"point {i}: non-finite coordinates ({lat[i]}, {lng[i]})")
        bad = np.flatnonzero((lng < -180.0) | (lng > 180.0))
        if len(bad):
            i = int(bad[0])
            raise ValueError(f"point {i}: longitude {lng[i]} outside [-180, 180]")
        bad = np.flatnonzero((t < params.t_start) | (t > params.t_end))
        if len(bad):
            i = int(bad[0])
            raise ValueError(
                f"point {i}: t={t[i]} outside tracing period "
                f"[{params.t_start}, {params.t_end}]"
            )
    x, y = _tile_xy_bulk(lat, lng, params.theta_geo)
    tc = (t - params.t_start) >> params.time_shift
    return encode_cells(x, y, tc, params)
