"""One complete trusted-region round: attest, seal, query, account.

Everything the wire carries is shown: the handshake that derives the
session key and returns the encoding parameters, the sealed query, the
sealed verdict, and the budget ledger of boundary crossings.  A tampered
frame demonstrates that modified ciphertext is excluded, not answered.
"""

import numpy as np

from pct.chunking import map_to_chunked_dictionary
from pct.datagen import GeneratorConfig, generate
from pct.enclave import (
    Enclave,
    HEADER_LEN,
    HandshakeClient,
    decode_hello_reply,
    decode_response,
    encode_hello,
    encode_hello_reply,
    encode_request,
)
from pct.encoding import EncodingParams, encode_points

T0 = 1_600_000_000


def main():
    params = EncodingParams(22, 24, T0, T0 + 86400)
    ds = generate(GeneratorConfig(n_users=20, duration_s=86400,
                                  sampling_interval_s=60, t_start=T0, seed=8))
    cd = map_to_chunked_dictionary(ds.t, ds.lat, ds.lng, params, n_chunks=4)
    enclave = Enclave.from_plain(cd)
    print(f"sealed dictionary: {cd.key_count} keys in {cd.n_chunks} chunks")

    # attestation handshake carries the parameters back to the client
    hs = HandshakeClient()
    cid = b"demo-client-0001"
    hello = encode_hello(cid, hs)
    record = enclave.handshake(hello[-32:], hs.client_nonce)
    reply = encode_hello_reply(cid, record, enclave.params)
    got_record, got_params = decode_hello_reply(reply)
    key = hs.complete(got_record)
    assert got_params == params
    print(f"handshake: measurement {record.measurement.hex()[:16]}..., "
          f"session {key.key_id.hex()}")

    # one positive query (a server user's own samples) and one tampered copy
    t, lat, lng = ds.user_arrays(3)
    values = encode_points(t[:50], lat[:50], lng[:50], params)
    frame = encode_request(cid, values, key)
    evil = bytearray(frame)
    evil[HEADER_LEN + 7] ^= 0x40
    print(f"query frame: {len(frame)} bytes "
          f"({len(values)} values x {params.hash_width_bytes} B + overhead)")

    result = enclave.run_batch([frame, bytes(evil)], "stpsi")
    for i, reason in result.rejected:
        print(f"frame {i} rejected: {reason}")
    for rcid, resp in result.responses:
        print(f"{rcid.rstrip(bytes(1)).decode()}: "
              f"positive={decode_response(resp, key)}")

    s = enclave.budget.snapshot()
    print("\nbudget ledger")
    print(f"  capacity  {s['capacity_bytes'] / 2**20:6.1f} MiB")
    print(f"  peak      {s['peak_resident_bytes'] / 2**10:6.1f} KiB "
          f"(queries + one chunk at a time)")
    print(f"  spill     {s['page_spill_bytes']} B")
    print(f"  ecalls    {s['ecall_count']}  (1 query load + "
          f"{cd.n_chunks} chunk loads)")
    print(f"  ocalls    {s['ocall_count']}  (one batch of results)")
    tm = result.timings
    print(f"phases: query_decrypt {tm.query_decrypt_s * 1e3:.1f} ms, "
          f"server_decrypt {tm.server_decrypt_s * 1e3:.1f} ms, "
          f"intersection {tm.intersection_s * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
