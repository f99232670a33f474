"""Talk to a running query service over TCP, end to end.

Starts the batching service in-process, then acts as three different
phone clients: attest, encode the day's trail, send, read the sealed
verdict.  The third client exceeds its daily allowance and is refused
without the enclave ever seeing its query.
"""

import numpy as np

from pct.chunking import map_to_chunked_dictionary
from pct.datagen import GeneratorConfig, generate
from pct.enclave import (
    Enclave,
    HandshakeClient,
    ServiceError,
    decode_hello_reply,
    decode_response,
    encode_hello,
    encode_request,
)
from pct.encoding import EncodingParams, encode_points
from pct.service import PctServer, PctService, request_reply

T0 = 1_600_000_000


def ask(host, port, name, t, lat, lng):
    """One client lifecycle: handshake, then a sealed question."""
    hs = HandshakeClient()
    cid = name.encode().ljust(16, b"\x00")
    [reply] = request_reply(host, port, [encode_hello(cid, hs)])
    record, params = decode_hello_reply(reply)
    key = hs.complete(record)
    values = encode_points(t, lat, lng, params)
    [resp] = request_reply(host, port, [encode_request(cid, values, key)])
    return decode_response(resp, key)


def main():
    params = EncodingParams(22, 24, T0, T0 + 86400)
    ds = generate(GeneratorConfig(n_users=30, duration_s=86400,
                                  sampling_interval_s=60, t_start=T0, seed=4))
    cd = map_to_chunked_dictionary(ds.t, ds.lat, ds.lng, params, n_chunks=3)
    service = PctService(Enclave.from_plain(cd),
                         batch_size=8, batch_timeout_s=0.2, daily_limit=2)
    with PctServer(service) as srv:
        print(f"service on {srv.host}:{srv.port} "
              f"(batches of {service.batch_size} or "
              f"{service.batch_timeout_s}s, {service.daily_limit}/day)\n")

        t, lat, lng = ds.user_arrays(7)
        hit = ask(srv.host, srv.port, "crossed-paths", t[:60], lat[:60], lng[:60])
        print(f"client who shared user 7's morning: positive={hit}")

        rng = np.random.default_rng(1)
        n = 40
        t2 = T0 + np.sort(rng.integers(0, 86400, n)).astype(np.int64)
        clear = ask(srv.host, srv.port, "kept-distance", t2,
                    np.full(n, 35.2), np.full(n, 138.9) + rng.uniform(0, 0.01, n))
        print(f"client who stayed out of town:     positive={clear}")

        print("\nthird ask from one client in a day:")
        for attempt in range(3):
            try:
                ask(srv.host, srv.port, "anxious", t[:5], lat[:5], lng[:5])
                print(f"  attempt {attempt + 1}: answered")
            except ServiceError as e:
                print(f"  attempt {attempt + 1}: refused ({e})")
    service.close()


if __name__ == "__main__":
    main()
