"""Command line front end: pct gen | build | query | eval | bench | serve.

Exit status is 0 on success and 2 on any input or validation error.
Every flag can also come from a config file of key=value lines passed
with --config; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .chunking import (
    DEFAULT_ENCLAVE_BUDGET,
    build_chunked_dictionary,
    estimate_bytes_per_key,
    load_chunked_dictionary,
    plan_chunk_count,
    save_chunked_dictionary,
)
from .datagen import Dataset, GeneratorConfig, generate, read_csv, write_csv
from .enclave import (
    Enclave,
    EnclaveBudget,
    ServiceError,
    decode_response,
    encode_request,
)
from .encoding import EncodingParams, MixMode, TrajectoryPoint, encode_points
from .oracle import ExactThresholds, evaluate
from .psi import ALL_MODES, MODE_STPSI, PsiConfig
from .service import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BATCH_TIMEOUT_S,
    DEFAULT_DAILY_LIMIT,
    PctServer,
    PctService,
)

_MIX = {"interleave": MixMode.INTERLEAVE, "sequential": MixMode.SEQUENTIAL}


def _budget_bytes() -> int:
    raw = os.environ.get("PCT_BUDGET_BYTES")
    if raw is None:
        return DEFAULT_ENCLAVE_BUDGET
    value = int(raw)
    if value <= 0:
        raise ValueError("PCT_BUDGET_BYTES must be a positive integer")
    return value


def _client_id(user_id: str) -> bytes:
    raw = user_id.encode("utf-8")
    if len(raw) > 16:
        raise ValueError(f"user id {user_id!r} longer than 16 bytes")
    return raw.ljust(16, b"\x00")


def _period_from(args, datasets) -> tuple[int, int]:
    t_start, t_end = args.t_start, args.t_end
    if t_start is None:
        t_start = min(int(ds.t.min()) for ds in datasets if ds.n_points)
    if t_end is None:
        t_end = max(int(ds.t.max()) for ds in datasets if ds.n_points) + 1
    return t_start, t_end


def _params_from(args, datasets) -> EncodingParams:
    if getattr(args, "manifest", None):
        _, mf = load_chunked_dictionary(args.manifest)
        return mf.params
    if args.theta_geo is None or args.theta_time is None:
        raise ValueError("need either --manifest or --theta-geo and --theta-time")
    t_start, t_end = _period_from(args, datasets)
    return EncodingParams(args.theta_geo, args.theta_time, t_start, t_end,
                          _MIX[args.mix_mode])


def _encode_queries(ds: Dataset, enclave: Enclave):
    """One session and one sealed request frame per client."""
    frames, sessions, order = [], {}, []
    for i, uid in enumerate(ds.user_ids):
        key = enclave.new_session()
        t, lat, lng = ds.user_arrays(i)
        values = encode_points(t, lat, lng, enclave.params)
        cid = _client_id(uid)
        if cid in sessions:
            raise ValueError(f"duplicate client id {uid!r}")
        frames.append(encode_request(cid, values, key))
        sessions[cid] = key
        order.append((cid, uid))
    return frames, sessions, order


def _int_list(text: str) -> list[int]:
    out = [int(p) for p in text.split(",") if p.strip()]
    if not out or any(v < 1 for v in out):
        raise ValueError(f"expected positive comma-separated integers, got {text!r}")
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = GeneratorConfig(
        n_users=args.users,
        duration_s=args.duration_s,
        sampling_interval_s=args.interval_s,
        t_start=args.t_start,
        lat_min=args.lat_min, lat_max=args.lat_max,
        lng_min=args.lng_min, lng_max=args.lng_max,
        n_hotspots=args.hotspots,
        stickiness=args.stickiness,
        speed_min_mps=args.speed_min,
        speed_max_mps=args.speed_max,
        seed=args.seed,
    )
    ds = generate(cfg)
    write_csv(ds, args.out)
    print(f"wrote {ds.n_users} users, {ds.n_points} points to {args.out}")
    return 0


def cmd_build(args) -> int:
    ds = read_csv(args.data)
    if ds.n_points == 0:
        raise ValueError(f"{args.data} holds no samples")
    t_start, t_end = _period_from(args, [ds])
    params = EncodingParams(args.theta_geo, args.theta_time, t_start, t_end,
                            _MIX[args.mix_mode])
    keys = encode_points(ds.t, ds.lat, ds.lng, params)
    if args.n_chunks is not None:
        n_chunks = args.n_chunks
    else:
        budget = args.budget_bytes if args.budget_bytes else _budget_bytes()
        bpk = estimate_bytes_per_key(keys)
        n_chunks = plan_chunk_count(len(keys), bpk, budget,
                                    args.reserved_query_bytes)
    cd = build_chunked_dictionary(keys, params, n_chunks)
    manifest = save_chunked_dictionary(
        cd, args.out, theta_doe=args.theta_doe,
        sampling_interval=args.sampling_interval)
    total = sum(cd.serialized_chunk_sizes())
    print(f"built {cd.key_count} keys into {cd.n_chunks} chunks "
          f"({total / 2**20:.1f} MiB, width {cd.key_width} B)")
    print(f"manifest: {manifest}")
    return 0


def _cfg_from(args, mf) -> PsiConfig:
    theta_doe = args.theta_doe
    if theta_doe is None:
        theta_doe = mf.theta_doe if mf and mf.theta_doe is not None else 0
    interval = args.sampling_interval
    if interval is None:
        interval = (mf.sampling_interval
                    if mf and mf.sampling_interval is not None else 60)
    return PsiConfig(constant_scan=not args.no_constant_scan,
                     theta_doe=theta_doe, sampling_interval=interval)


def _report_text(n_clients, n_positive, n_rejected, stats, timings, budget) -> str:
    s = budget.snapshot()
    return "\n".join([
        f"clients {n_clients}   positive {n_positive}   rejected {n_rejected}",
        f"probes {stats.probes}",
        ("seconds  upload {query_upload_s:.3f}   query_decrypt {query_decrypt_s:.3f}"
         "   server_decrypt {server_decrypt_s:.3f}   intersection {intersection_s:.3f}"
         ).format(**timings.as_dict()) + f"   total {timings.total():.3f}",
        (f"budget   peak {s['peak_resident_bytes'] / 2**20:.1f} MiB"
         f" of {s['capacity_bytes'] / 2**20:.1f} MiB"
         f"   spill {s['page_spill_bytes']} B"
         f"   ecalls {s['ecall_count']}   ocalls {s['ocall_count']}"),
    ])


def cmd_query(args) -> int:
    cd, mf = load_chunked_dictionary(args.manifest)
    enclave = Enclave.from_plain(cd, EnclaveBudget(_budget_bytes()))
    ds = read_csv(args.client)
    cfg = _cfg_from(args, mf)

    t0 = time.perf_counter()
    frames, sessions, order = _encode_queries(ds, enclave)
    upload_s = time.perf_counter() - t0

    result = enclave.run_batch(frames, args.mode, cfg)
    result.timings.query_upload_s = upload_s

    answers = {}
    for cid, frame in result.responses:
        answers[cid] = decode_response(frame, sessions[cid])
    rows = ["user_id,positive"]
    for cid, uid in order:
        if cid in answers:
            rows.append(f"{uid},{int(answers[cid])}")
    out = "\n".join(rows) + "\n"
    if args.results == "-":
        sys.stdout.write(out)
    else:
        with open(args.results, "w") as f:
            f.write(out)

    report = _report_text(len(frames), sum(answers.values()),
                          len(result.rejected), result.stats,
                          result.timings, enclave.budget)
    for idx, reason in result.rejected:
        report += f"\nrejected frame {idx}: {reason}"
    if args.report == "-":
        print(report, file=sys.stderr)
    else:
        with open(args.report, "w") as f:
            f.write(report + "\n")
    return 0


def cmd_eval(args) -> int:
    client_ds = read_csv(args.client)
    server_ds = read_csv(args.server)
    params = _params_from(args, [client_ds, server_ds])
    th = ExactThresholds(
        theta_geo_cells=args.theta_geo_cells,
        theta_time_s=(args.theta_time_s if args.theta_time_s is not None
                      else params.time_cell_seconds),
        theta_doe_s=args.theta_doe_s,
    )
    server_pts = [TrajectoryPoint(int(a), float(b), float(c))
                  for a, b, c in zip(server_ds.t, server_ds.lat, server_ds.lng)]
    report = evaluate(client_ds.to_pairs(), server_pts, params, th,
                      mode=args.mode,
                      sampling_interval_s=args.sampling_interval,
                      n_chunks=args.n_chunks,
                      constant_scan=not args.no_constant_scan)
    print(report.to_text())
    if args.out_prefix:
        mpath = args.out_prefix + "_matrix.csv"
        fpath = args.out_prefix + "_false_cases.csv"
        with open(mpath, "w") as f:
            f.write(report.matrix_csv())
        with open(fpath, "w") as f:
            f.write(report.false_cases_csv())
        print(f"wrote {mpath} and {fpath}")
    return 0


def cmd_bench(args) -> int:
    server_ds = read_csv(args.server)
    client_ds = read_csv(args.client)
    if server_ds.n_points == 0 or client_ds.n_points == 0:
        raise ValueError("bench needs non-empty server and client data")
    params = _params_from(args, [client_ds, server_ds])
    keys = encode_points(server_ds.t, server_ds.lat, server_ds.lng, params)
    cfg = PsiConfig(constant_scan=not args.no_constant_scan,
                    theta_doe=args.theta_doe or 0,
                    sampling_interval=args.sampling_interval or 60)
    sizes = args.clients or [client_ds.n_users]
    rows = ["n_chunks,n_clients,n_values,probes,peak_mib,"
            "query_upload_s,query_decrypt_s,server_decrypt_s,intersection_s,total_s"]
    for n_chunks in args.n_chunks:
        cd = build_chunked_dictionary(keys, params, n_chunks)
        for n_clients in sizes:
            if n_clients > client_ds.n_users:
                raise ValueError(f"only {client_ds.n_users} client users available")
            sub = Dataset(client_ds.user_ids[:n_clients],
                          client_ds.counts[:n_clients],
                          *(a[: int(client_ds.offsets[n_clients])]
                            for a in (client_ds.t, client_ds.lat, client_ds.lng)))
            enclave = Enclave.from_plain(cd, EnclaveBudget(_budget_bytes()))
            t0 = time.perf_counter()
            frames, sessions, _ = _encode_queries(sub, enclave)
            upload_s = time.perf_counter() - t0
            result = enclave.run_batch(frames, args.mode, cfg)
            tm = result.timings
            tm.query_upload_s = upload_s
            n_values = sum(int(c) for c in sub.counts)
            peak = enclave.budget.peak_resident_bytes / 2**20
            rows.append(
                f"{n_chunks},{n_clients},{n_values},{result.stats.probes},"
                f"{peak:.2f},{tm.query_upload_s:.4f},{tm.query_decrypt_s:.4f},"
                f"{tm.server_decrypt_s:.4f},{tm.intersection_s:.4f},{tm.total():.4f}")
    out = "\n".join(rows) + "\n"
    if args.out == "-":
        sys.stdout.write(out)
    else:
        with open(args.out, "w") as f:
            f.write(out)
    return 0


def cmd_serve(args) -> int:
    cd, mf = load_chunked_dictionary(args.manifest)
    enclave = Enclave.from_plain(cd, EnclaveBudget(_budget_bytes()))
    cfg = _cfg_from(args, mf)
    service = PctService(enclave, args.mode, cfg,
                         batch_size=args.batch_size,
                         batch_timeout_s=args.batch_timeout_s,
                         daily_limit=args.daily_limit)
    server = PctServer(service, args.host, args.port).start()
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
        service.close()
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate synthetic trajectory data")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--users", type=int, default=100)
    p.add_argument("--duration-s", type=int, default=14 * 86400)
    p.add_argument("--interval-s", type=int, default=60)
    p.add_argument("--t-start", type=int, default=1_600_000_000)
    p.add_argument("--lat-min", type=float, default=35.50)
    p.add_argument("--lat-max", type=float, default=35.80)
    p.add_argument("--lng-min", type=float, default=139.50)
    p.add_argument("--lng-max", type=float, default=139.90)
    p.add_argument("--hotspots", type=int, default=40)
    p.add_argument("--stickiness", type=float, default=0.9)
    p.add_argument("--speed-min", type=float, default=0.5)
    p.add_argument("--speed-max", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)


def _add_period_flags(p):
    p.add_argument("--t-start", type=int, default=None,
                   help="tracing period start (default: first sample)")
    p.add_argument("--t-end", type=int, default=None,
                   help="tracing period end, exclusive (default: last sample + 1)")


def _add_build(sub):
    p = sub.add_parser("build", help="encode a CSV and build the chunked dictionary")
    p.add_argument("--data", required=True, help="server-side trajectory CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--theta-geo", type=int, required=True,
                   help="geographic precision (quadkey zoom)")
    p.add_argument("--theta-time", type=int, required=True,
                   help="temporal precision (dropped low bits of epoch seconds)")
    _add_period_flags(p)
    p.add_argument("--mix-mode", choices=sorted(_MIX), default="interleave")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n-chunks", type=int, default=None,
                   help="fixed chunk count")
    g.add_argument("--budget-bytes", type=int, default=None,
                   help="plan chunk count for this trusted-memory budget "
                        "(default: PCT_BUDGET_BYTES or 96 MiB)")
    p.add_argument("--reserved-query-bytes", type=int, default=16 * 2**20,
                   help="budget headroom kept for resident queries when planning")
    p.add_argument("--theta-doe", type=int, default=None,
                   help="exposure duration threshold in seconds, stored in the manifest")
    p.add_argument("--sampling-interval", type=int, default=None,
                   help="sample spacing in seconds, stored in the manifest")
    p.set_defaults(func=cmd_build)


def _add_query_flags(p):
    p.add_argument("--mode", choices=ALL_MODES, default=MODE_STPSI)
    p.add_argument("--theta-doe", type=int, default=None,
                   help="override the manifest's exposure threshold")
    p.add_argument("--sampling-interval", type=int, default=None)
    p.add_argument("--no-constant-scan", action="store_true",
                   help="allow the timing side channel: skip chunks for "
                        "clients that already matched")


def _add_query(sub):
    p = sub.add_parser("query", help="run client trajectories against a built dictionary")
    p.add_argument("--manifest", required=True)
    p.add_argument("--client", required=True, help="client trajectory CSV")
    _add_query_flags(p)
    p.add_argument("--results", default="-", help="results CSV path (- for stdout)")
    p.add_argument("--report", default="-",
                   help="timing/probe/budget report path (- for stderr)")
    p.set_defaults(func=cmd_query)


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a protocol against exact contact truth")
    p.add_argument("--server", required=True, help="server trajectory CSV")
    p.add_argument("--client", required=True, help="client trajectory CSV")
    p.add_argument("--manifest", default=None,
                   help="take encoding parameters from this manifest")
    p.add_argument("--theta-geo", type=int, default=None)
    p.add_argument("--theta-time", type=int, default=None)
    _add_period_flags(p)
    p.add_argument("--mix-mode", choices=sorted(_MIX), default="interleave")
    p.add_argument("--mode", choices=ALL_MODES, default=MODE_STPSI)
    p.add_argument("--theta-geo-cells", type=float, default=1.0,
                   help="exact contact distance in cell sides")
    p.add_argument("--theta-time-s", type=float, default=None,
                   help="exact contact time gap in seconds (default: one time cell)")
    p.add_argument("--theta-doe-s", type=float, default=0.0)
    p.add_argument("--sampling-interval", type=int, default=60)
    p.add_argument("--n-chunks", type=int, default=1)
    p.add_argument("--no-constant-scan", action="store_true")
    p.add_argument("--out-prefix", default=None,
                   help="write <prefix>_matrix.csv and <prefix>_false_cases.csv")
    p.set_defaults(func=cmd_eval)


def _add_bench(sub):
    p = sub.add_parser("bench", help="sweep chunk counts and client sizes; emit phase timings")
    p.add_argument("--server", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--theta-geo", type=int, default=None)
    p.add_argument("--theta-time", type=int, default=None)
    _add_period_flags(p)
    p.add_argument("--mix-mode", choices=sorted(_MIX), default="interleave")
    p.add_argument("--mode", choices=ALL_MODES, default=MODE_STPSI)
    p.add_argument("--theta-doe", type=int, default=None)
    p.add_argument("--sampling-interval", type=int, default=None)
    p.add_argument("--no-constant-scan", action="store_true")
    p.add_argument("--n-chunks", type=_int_list, default=[1],
                   help="comma-separated chunk counts")
    p.add_argument("--clients", type=_int_list, default=None,
                   help="comma-separated client counts (default: all)")
    p.add_argument("--out", default="-", help="output CSV path (- for stdout)")
    p.set_defaults(func=cmd_bench)


def _add_serve(sub):
    p = sub.add_parser("serve", help="serve queries over TCP with request batching")
    p.add_argument("--manifest", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="TCP port (0 picks a free one, printed on start)")
    _add_query_flags(p)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE,
                   help="run a batch as soon as this many queries wait")
    p.add_argument("--batch-timeout-s", type=float, default=DEFAULT_BATCH_TIMEOUT_S,
                   help="or when the oldest query has waited this long")
    p.add_argument("--daily-limit", type=int, default=DEFAULT_DAILY_LIMIT,
                   help="queries allowed per client per day")
    p.set_defaults(func=cmd_serve)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pct", description="private trajectory contact tracing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_gen, _add_build, _add_query, _add_eval, _add_bench, _add_serve):
        add(sub)
    for name, p in sub.choices.items():
        p.add_argument("--config", default=None,
                       help="key=value file of defaults for this subcommand")
    return parser


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags right after the subcommand,
    so anything given explicitly on the command line still wins."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ValueError("--config needs a file path")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    flags: list[str] = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip().replace("_", "-"), value.strip()
            if value.lower() == "true":
                flags.append(f"--{key}")
            elif value.lower() == "false":
                pass
            else:
                flags.extend([f"--{key}", value])
    if not rest:
        return flags
    return rest[:1] + flags + rest[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ServiceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
