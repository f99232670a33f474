"""Exact contact ground truth and accuracy evaluation of the protocols.

The exact decision works in continuous tile coordinates at the active
zoom, where one encoding cell has side exactly 1.  That makes the
geometry of the cell-based protocols directly comparable: a spatial
threshold of 1 cell unit is the side of the cell the encoder snaps to,
and the false-positive bounds below fall out of block geometry.

Everything here is brute force on purpose: it is the reference the
protocols are judged against, so it shares no code with them beyond the
coordinate projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chunking import build_chunked_dictionary
from .encoding import (
    EncodingParams,
    TrajectoryPoint,
    _tile_xy_bulk,
    encode_points,
    tile_coords_bulk,
)
from .psi import (
    MODE_DOE,
    MODE_NFP,
    MODE_STPSI,
    PsiConfig,
    Query,
    make_batch,
    run_protocol,
)

_U_BLOCK = 512
_V_BLOCK = 8192


@dataclass(frozen=True)
class ExactThresholds:
    """Ground-truth proximity thresholds.

    theta_geo_cells is measured in cell-side units at the active zoom;
    theta_time_s and theta_doe_s in seconds.
    """

    theta_geo_cells: float
    theta_time_s: float
    theta_doe_s: float = 0.0

    def __post_init__(self):
        if self.theta_geo_cells < 0 or self.theta_time_s < 0 or self.theta_doe_s < 0:
            raise ValueError("thresholds must be non-negative")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def rates(self) -> dict[str, float]:
        n = self.total
        if n == 0:
            return {"tp": 0.0, "tn": 0.0, "fp": 0.0, "fn": 0.0}
        return {"tp": self.tp / n, "tn": self.tn / n,
                "fp": self.fp / n, "fn": self.fn / n}


def _traj_arrays(points: list[TrajectoryPoint], params: EncodingParams):
    t = np.array([p.t for p in points], dtype=np.int64)
    lat = np.array([p.lat for p in points], dtype=np.float64)
    lng = np.array([p.lng for p in points], dtype=np.float64)
    fx, fy = tile_coords_bulk(lat, lng, params.theta_geo)
    return t, fx, fy, lat, lng


def contact_flags(Xu: list[TrajectoryPoint], Xv: list[TrajectoryPoint],
                  th: ExactThresholds, params: EncodingParams) -> np.ndarray:
    """Per-sample truth: is Xu[i] within both thresholds of some Xv point."""
    flags = np.zeros(len(Xu), dtype=bool)
    if not Xu or not Xv:
        return flags
    tu, fxu, fyu, _, _ = _traj_arrays(Xu, params)
    tv, fxv, fyv, _, _ = _traj_arrays(Xv, params)
    g2 = th.theta_geo_cells * th.theta_geo_cells
    for a in range(0, len(tu), _U_BLOCK):
        b = min(a + _U_BLOCK, len(tu))
        hit = np.zeros(b - a, dtype=bool)
        for c in range(0, len(tv), _V_BLOCK):
            d = min(c + _V_BLOCK, len(tv))
            dx = fxu[a:b, None] - fxv[None, c:d]
            dy = fyu[a:b, None] - fyv[None, c:d]
            dt = np.abs(tu[a:b, None] - tv[None, c:d])
            ok = (dx * dx + dy * dy <= g2) & (dt <= th.theta_time_s)
            hit |= ok.any(axis=1)
        flags[a:b] = hit
    return flags


def exact_contact(Xu: list[TrajectoryPoint], Xv: list[TrajectoryPoint],
                  th: ExactThresholds, params: EncodingParams) -> bool:
    """True iff some pair of samples is within both thresholds."""
    return bool(contact_flags(Xu, Xv, th, params).any())


def exact_contact_doe(Xu: list[TrajectoryPoint], Xv: list[TrajectoryPoint],
                      th: ExactThresholds, params: EncodingParams,
                      sampling_interval_s: int = 60) -> bool:
    """Duration-of-exposure truth over time-ordered Xu.

    A contact run is a maximal stretch of consecutive in-contact samples
    with no timestamp gap larger than the sampling interval; each sample
    contributes one interval.  True iff some run reaches theta_doe_s.
    """
    if not Xu:
        return False
    t = np.array([p.t for p in Xu], dtype=np.int64)
    if len(t) > 1 and (np.diff(t) < 0).any():
        raise ValueError("Xu must be time-ordered")
    flags = contact_flags(Xu, Xv, th, params)
    if not flags.any():
        return False
    prev_ok = flags[:-1] & (np.diff(t) <= sampling_interval_s)
    run_start = flags.copy()
    run_start[1:] &= ~prev_ok
    run_id = np.cumsum(run_start)
    lengths = np.bincount(run_id[flags])[1:]
    return bool((lengths * sampling_interval_s >= th.theta_doe_s).any())


# ---------------------------------------------------------------------------
# protocol evaluation


@dataclass(frozen=True)
class FalseCase:
    """Nearest-pair distances behind one wrong protocol answer.

    For a false positive the minima run over the pairs that could have
    triggered the protocol (same cell, or same-or-adjacent for the
    neighborhood variant); for a false negative over the pairs that made
    the exact answer positive.  Each field is an independent minimum.
    """

    client_id: str
    kind: str  # "fp" or "fn"
    planar_cells: float
    time_s: float
    mixed: float  # min over pairs of sqrt(planar^2 + dt^2)


def nfp_fp_bound(th: ExactThresholds) -> float:
    """Worst mixed-norm distance an adjacent-cell pair can have."""
    return 2.0 * math.sqrt(2.0 * th.theta_geo_cells ** 2 + th.theta_time_s ** 2)


@dataclass
class EvaluationReport:
    mode: str
    thresholds: ExactThresholds
    matrix: ConfusionMatrix
    false_cases: list[FalseCase]
    decisions: list[tuple[str, bool, bool]]  # client_id, protocol, truth

    def to_text(self) -> str:
        m, r = self.matrix, self.matrix.rates()
        lines = [
            f"mode: {self.mode}   queries: {m.total}",
            f"counts  tp {m.tp}   tn {m.tn}   fp {m.fp}   fn {m.fn}",
            "rates   tp {tp:.4f}   tn {tn:.4f}   fp {fp:.4f}   fn {fn:.4f}".format(**r),
        ]
        fps = [c for c in self.false_cases if c.kind == "fp"]
        fns = [c for c in self.false_cases if c.kind == "fn"]
        if fps:
            planar = [c.planar_cells for c in fps]
            mixed = [c.mixed for c in fps]
            lines.append(
                f"false positives: nearest planar {min(planar):.3f}..{max(planar):.3f}"
                f" cells, nearest mixed {min(mixed):.3f}..{max(mixed):.3f}"
            )
        if fns:
            planar = [c.planar_cells for c in fns]
            dts = [c.time_s for c in fns]
            lines.append(
                f"false negatives: nearest planar {min(planar):.3f}..{max(planar):.3f}"
                f" cells, nearest time {min(dts):.1f}..{max(dts):.1f} s"
            )
        return "\n".join(lines)

    def matrix_csv(self) -> str:
        m, r = self.matrix, self.matrix.rates()
        return (
            "mode,queries,tp,tn,fp,fn,tp_rate,tn_rate,fp_rate,fn_rate\n"
            f"{self.mode},{m.total},{m.tp},{m.tn},{m.fp},{m.fn},"
            f"{r['tp']:.6f},{r['tn']:.6f},{r['fp']:.6f},{r['fn']:.6f}\n"
        )

    def false_cases_csv(self) -> str:
        rows = ["client_id,kind,planar_cells,time_s,mixed"]
        for c in self.false_cases:
            rows.append(
                f"{c.client_id},{c.kind},{c.planar_cells:.6f},"
                f"{c.time_s:.3f},{c.mixed:.6f}"
            )
        return "\n".join(rows) + "\n"


def _cells(points, params):
    t, _, _, lat, lng = _traj_arrays(points, params)
    x, y = _tile_xy_bulk(lat, lng, params.theta_geo)
    tc = (t - params.t_start) >> params.time_shift
    return x, y, tc


def _false_case(client_id: str, kind: str, mode: str,
                Xu: list[TrajectoryPoint], Xv: list[TrajectoryPoint],
                th: ExactThresholds, params: EncodingParams) -> FalseCase:
    tu, fxu, fyu, latu, lngu = _traj_arrays(Xu, params)
    tv, fxv, fyv, latv, lngv = _traj_arrays(Xv, params)
    xu, yu, tcu = _cells(Xu, params)
    xv, yv, tcv = _cells(Xv, params)
    best_planar = math.inf
    best_time = math.inf
    best_mixed = math.inf
    g2 = th.theta_geo_cells * th.theta_geo_cells
    for a in range(0, len(tu), _U_BLOCK):
        b = min(a + _U_BLOCK, len(tu))
        for c in range(0, len(tv), _V_BLOCK):
            d = min(c + _V_BLOCK, len(tv))
            dx = fxu[a:b, None] - fxv[None, c:d]
            dy = fyu[a:b, None] - fyv[None, c:d]
            planar = np.sqrt(dx * dx + dy * dy)
            dt = np.abs(tu[a:b, None] - tv[None, c:d]).astype(np.float64)
            if kind == "fp":
                cdx = np.abs(xu[a:b, None] - xv[None, c:d])
                cdy = np.abs(yu[a:b, None] - yv[None, c:d])
                cdt = np.abs(tcu[a:b, None] - tcv[None, c:d])
                reach = 1 if mode == MODE_NFP else 0
                mask = (cdx <= reach) & (cdy <= reach) & (cdt <= reach)
            else:
                mask = (planar * planar <= g2) & (dt <= th.theta_time_s)
            if not mask.any():
                continue
            best_planar = min(best_planar, float(planar[mask].min()))
            best_time = min(best_time, float(dt[mask].min()))
            mixed = np.sqrt(planar[mask] ** 2 + dt[mask] ** 2)
            best_mixed = min(best_mixed, float(mixed.min()))
    return FalseCase(client_id, kind, best_planar, best_time, best_mixed)


def evaluate(clients: list[tuple[str, list[TrajectoryPoint]]],
             server: list[TrajectoryPoint],
             params: EncodingParams,
             th: ExactThresholds,
             mode: str = MODE_STPSI,
             *,
             sampling_interval_s: int = 60,
             n_chunks: int = 1,
             constant_scan: bool = True) -> EvaluationReport:
    """Run a protocol end to end on plaintext and score it against the
    exact decision, with nearest-pair diagnostics for every wrong answer."""

    def arrays(pts):
        return (np.array([p.t for p in pts], dtype=np.int64),
                np.array([p.lat for p in pts], dtype=np.float64),
                np.array([p.lng for p in pts], dtype=np.float64))

    st, slat, slng = arrays(server)
    server_mat = encode_points(st, slat, slng, params)
    cd = build_chunked_dictionary(server_mat, params, n_chunks)
    queries = []
    for cid, pts in clients:
        if pts:
            t, lat, lng = arrays(pts)
            queries.append(Query(cid, encode_points(t, lat, lng, params)))
        else:
            queries.append(Query(cid, np.empty((0, params.hash_width_bytes), np.uint8)))
    cfg = PsiConfig(
        constant_scan=constant_scan,
        theta_doe=int(th.theta_doe_s) if mode == MODE_DOE else 0,
        sampling_interval=sampling_interval_s,
    )
    results = run_protocol(mode, make_batch(queries, params), cd, cfg)

    tp = tn = fp = fn = 0
    decisions = []
    false_cases = []
    for (cid, pts), res in zip(clients, results):
        if mode == MODE_DOE:
            truth = exact_contact_doe(pts, server, th, params, sampling_interval_s)
        else:
            truth = exact_contact(pts, server, th, params)
        got = res.positive
        decisions.append((cid, got, truth))
        if got and truth:
            tp += 1
        elif not got and not truth:
            tn += 1
        elif got:
            fp += 1
            false_cases.append(_false_case(cid, "fp", mode, pts, server, th, params))
        else:
            fn += 1
            false_cases.append(_false_case(cid, "fn", mode, pts, server, th, params))
    return EvaluationReport(mode, th, ConfusionMatrix(tp, tn, fp, fn),
                            false_cases, decisions)
