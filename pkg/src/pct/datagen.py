"""Seeded synthetic trajectories and dataset CSV I/O.

The generator is a hotspot-biased random walk: each user dwells near one
of a handful of attraction points and occasionally relocates.  That is
not a faithful human-mobility model, but it produces the property the
dictionary layer cares about: many users revisiting the same places at
the same times, hence heavily shared key prefixes.

Datasets are held column-wise (one numpy array per field) because the
experiment sizes run to tens of millions of points; per-point objects
are materialized only on request.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .encoding import MAX_LATITUDE, TrajectoryPoint

CSV_COLUMNS = ["user_id", "unix_epoch_s", "latitude", "longitude"]
_METERS_PER_DEG_LAT = 111320.0


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 100
    duration_s: int = 14 * 86400
    sampling_interval_s: int = 60
    t_start: int = 1_600_000_000
    lat_min: float = 35.50
    lat_max: float = 35.80
    lng_min: float = 139.50
    lng_max: float = 139.90
    n_hotspots: int = 40
    stickiness: float = 0.9
    speed_min_mps: float = 0.5
    speed_max_mps: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 0:
            raise ValueError("n_users must be non-negative")
        if self.sampling_interval_s <= 0:
            raise ValueError("sampling_interval_s must be positive")
        if self.duration_s <= 0 or self.duration_s % self.sampling_interval_s:
            raise ValueError(
                "duration_s must be a positive multiple of sampling_interval_s"
            )
        if not (-MAX_LATITUDE <= self.lat_min < self.lat_max <= MAX_LATITUDE):
            raise ValueError("latitude box invalid or outside mercator domain")
        if not (-180.0 <= self.lng_min < self.lng_max <= 180.0):
            raise ValueError("longitude box invalid")
        if self.n_hotspots < 1:
            raise ValueError("need at least one hotspot")
        if not 0.0 <= self.stickiness <= 1.0:
            raise ValueError("stickiness must be in [0, 1]")
        if not 0.0 <= self.speed_min_mps <= self.speed_max_mps:
            raise ValueError("speed bounds invalid")

    @property
    def n_points(self) -> int:
        return self.duration_s // self.sampling_interval_s


@dataclass
class Dataset:
    """Per-user trajectories, user-major and column-wise."""

    user_ids: list[str]
    counts: np.ndarray  # points per user
    t: np.ndarray  # int64 epoch seconds
    lat: np.ndarray
    lng: np.ndarray
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])
        if self.offsets[-1] != len(self.t) or not (
            len(self.t) == len(self.lat) == len(self.lng)
        ):
            raise ValueError("column lengths do not match user counts")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_points(self) -> int:
        return int(self.offsets[-1])

    def user_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def user_arrays(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.user_slice(i)
        return self.t[s], self.lat[s], self.lng[s]

    def user_points(self, i: int) -> list[TrajectoryPoint]:
        t, lat, lng = self.user_arrays(i)
        return [
            TrajectoryPoint(int(a), float(b), float(c))
            for a, b, c in zip(t, lat, lng)
        ]

    def to_pairs(self) -> list[tuple[str, list[TrajectoryPoint]]]:
        return [(uid, self.user_points(i)) for i, uid in enumerate(self.user_ids)]

    @classmethod
    def from_pairs(cls, pairs: list[tuple[str, list[TrajectoryPoint]]]) -> "Dataset":
        ids = [uid for uid, _ in pairs]
        counts = np.array([len(pts) for _, pts in pairs], dtype=np.int64)
        flat = [p for _, pts in pairs for p in pts]
        t = np.array([p.t for p in flat], dtype=np.int64)
        lat = np.array([p.lat for p in flat], dtype=np.float64)
        lng = np.array([p.lng for p in flat], dtype=np.float64)
        return cls(ids, counts, t, lat, lng)


def generate(cfg: GeneratorConfig) -> Dataset:
    """Run the walk; same config (including seed) gives identical output."""
    rng = np.random.default_rng(cfg.seed)
    n, steps = cfg.n_users, cfg.n_points
    hot_lat = rng.uniform(cfg.lat_min, cfg.lat_max, cfg.n_hotspots)
    hot_lng = rng.uniform(cfg.lng_min, cfg.lng_max, cfg.n_hotspots)
    assign = rng.integers(0, cfg.n_hotspots, n)
    # start scattered around the assigned hotspot
    lat = hot_lat[assign] + rng.normal(0, 0.002, n)
    lng = hot_lng[assign] + rng.normal(0, 0.002, n)
    np.clip(lat, cfg.lat_min, cfg.lat_max, out=lat)
    np.clip(lng, cfg.lng_min, cfg.lng_max, out=lng)

    out_lat = np.empty((n, steps))
    out_lng = np.empty((n, steps))
    deg_lat_per_m = 1.0 / _METERS_PER_DEG_LAT
    for k in range(steps):
        out_lat[:, k] = lat
        out_lng[:, k] = lng
        step_m = rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps, n) \
            * cfg.sampling_interval_s
        dwell = rng.random(n) < cfg.stickiness
        # dwellers wobble a little; movers head for their hotspot
        jitter_m = step_m * 0.05
        cos_lat = np.cos(np.radians(lat))
        deg_lng_per_m = deg_lat_per_m / np.maximum(cos_lat, 1e-6)
        noise = rng.normal(0, 1, (2, n))
        dlat = hot_lat[assign] - lat
        dlng = hot_lng[assign] - lng
        dist_deg = np.hypot(dlat, dlng)
        step_lat_deg = step_m * deg_lat_per_m
        arrived = dist_deg <= step_lat_deg
        scale = np.where(arrived, 1.0, np.divide(
            step_lat_deg, dist_deg, out=np.ones(n), where=dist_deg > 0))
        move_lat = np.where(dwell, noise[0] * jitter_m * deg_lat_per_m, dlat * scale)
        move_lng = np.where(dwell, noise[1] * jitter_m * deg_lng_per_m, dlng * scale)
        lat = np.clip(lat + move_lat, cfg.lat_min, cfg.lat_max)
        lng = np.clip(lng + move_lng, cfg.lng_min, cfg.lng_max)
        # movers that reached their hotspot pick a new destination
        switch = arrived & ~dwell
        if switch.any():
            assign = np.where(
                switch, rng.integers(0, cfg.n_hotspots, n), assign
            )

    user_ids = [f"u{i:05d}" for i in range(n)]
    counts = np.full(n, steps, dtype=np.int64)
    t = np.tile(
        cfg.t_start + np.arange(steps, dtype=np.int64) * cfg.sampling_interval_s, n
    )
    return Dataset(user_ids, counts, t, out_lat.ravel(), out_lng.ravel())


# ---------------------------------------------------------------------------
# CSV I/O


def write_csv(ds: Dataset, path: str) -> None:
    df = pd.DataFrame(
        {
            "user_id": np.repeat(np.array(ds.user_ids, dtype=object), ds.counts),
            "unix_epoch_s": ds.t,
            "latitude": ds.lat,
            "longitude": ds.lng,
        }
    )
    df.to_csv(path, index=False, float_format="%.7f", lineterminator="\n")


def read_csv(path: str) -> Dataset:
    """Parse a dataset; malformed rows are reported with their line number."""
    if os.path.getsize(path) == 0:
        return Dataset([], np.zeros(0, np.int64), np.zeros(0, np.int64),
                       np.zeros(0), np.zeros(0))
    try:
        df = pd.read_csv(path, dtype={"user_id": str}, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise ValueError(f"malformed CSV: {e}") from None
    if list(df.columns) != CSV_COLUMNS:
        raise ValueError(
            f"expected columns {CSV_COLUMNS}, found {list(df.columns)}"
        )
    if len(df) == 0:
        return Dataset([], np.zeros(0, np.int64), np.zeros(0, np.int64),
                       np.zeros(0), np.zeros(0))
    t = pd.to_numeric(df["unix_epoch_s"], errors="coerce")
    lat = pd.to_numeric(df["latitude"], errors="coerce")
    lng = pd.to_numeric(df["longitude"], errors="coerce")
    bad = df["user_id"].isna() | t.isna() | lat.isna() | lng.isna()
    if bad.any():
        # +2: header line plus 1-based numbering
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        raise ValueError(f"line {line}: malformed row")
    frac = (t.to_numpy(np.float64) % 1.0) != 0
    if frac.any():
        line = int(np.flatnonzero(frac)[0]) + 2
        raise ValueError(f"line {line}: timestamp is not an integer")

    codes, uniques = pd.factorize(df["user_id"])
    order = np.argsort(codes, kind="stable")  # group users, keep row order
    counts = np.bincount(codes)
    return Dataset(
        [str(u) for u in uniques],
        counts.astype(np.int64),
        t.to_numpy(np.int64)[order],
        lat.to_numpy(np.float64)[order],
        lng.to_numpy(np.float64)[order],
    )
