import numpy as np
import pytest

from pct.chunking import build_chunked_dictionary
from pct.encoding import EncodingParams, encode_cells
from pct.enclave import (
    HEADER_LEN,
    MAGIC_ERROR,
    MAGIC_HELLO,
    MAGIC_QUERY,
    MAGIC_RESPONSE,
    MEASUREMENT,
    AttestationRecord,
    Enclave,
    EnclaveBudget,
    EncryptedBlob,
    HandshakeClient,
    IntegrityError,
    NonceReuseError,
    ServiceError,
    SessionKey,
    attest_and_exchange,
    decode_hello_reply,
    decode_request,
    decode_response,
    encode_error,
    encode_hello,
    encode_hello_reply,
    encode_request,
    encode_response,
    load_to_enclave,
    open_blob,
    payload_length,
    respond_handshake,
    seal,
    seal_dictionary,
)
from pct.psi import MODE_DOE, MODE_NFP, MODE_STPSI, PsiConfig, Query, make_batch, run_protocol

P = EncodingParams(theta_geo=4, theta_time=28, t_start=0, t_end=255)

HOT = [(5, 5, 3), (5, 5, 4), (6, 6, 1), (7, 7, 2), (2, 9, 10)]
COLD = [(1, 1, 0), (13, 1, 14), (1, 13, 6), (9, 12, 12)]


def cells_to_mat(cells):
    x, y, tc = (np.array(v, dtype=np.int64) for v in zip(*cells))
    return encode_cells(x, y, tc, P)


def make_enclave(n_chunks=3, capacity=None):
    cd = build_chunked_dictionary(cells_to_mat(HOT), P, n_chunks)
    budget = EnclaveBudget(capacity) if capacity else EnclaveBudget()
    return Enclave.from_plain(cd, budget), cd


def fresh_key():
    return SessionKey(b"\x01" * 8, b"\x02" * 16)


# -- channel


def test_seal_open_roundtrip():
    key = fresh_key()
    for pt, ad in [(b"hello", b""), (b"", b"header"), (b"x" * 1000, b"\x00\xff")]:
        blob = seal(pt, key, ad)
        assert open_blob(blob, key) == pt


def test_tampering_rejected_everywhere():
    key = fresh_key()
    blob = seal(b"payload bytes", key, b"associated")
    flip = lambda b, i: b[:i] + bytes([b[i] ^ 1]) + b[i + 1 :]
    for i in range(len(blob.ciphertext)):
        bad = EncryptedBlob(blob.nonce, flip(blob.ciphertext, i), blob.associated_data)
        with pytest.raises(IntegrityError):
            open_blob(bad, key)
    for i in range(len(blob.associated_data)):
        bad = EncryptedBlob(blob.nonce, blob.ciphertext, flip(blob.associated_data, i))
        with pytest.raises(IntegrityError):
            open_blob(bad, key)
    bad = EncryptedBlob(flip(blob.nonce, 3), blob.ciphertext, blob.associated_data)
    with pytest.raises(IntegrityError):
        open_blob(bad, key)


def test_wrong_key_rejected():
    blob = seal(b"secret", fresh_key())
    with pytest.raises(IntegrityError):
        open_blob(blob, SessionKey(b"\x09" * 8, b"\x0a" * 16))


def test_nonce_reuse_refused():
    key = fresh_key()
    nonce = key.next_nonce(0)
    seal(b"first", key, nonce=nonce)
    with pytest.raises(NonceReuseError):
        seal(b"second", key, nonce=nonce)


def test_roles_draw_disjoint_nonces():
    key = fresh_key()
    seen = set()
    for role in (0, 1):
        for _ in range(50):
            n = key.next_nonce(role)
            assert n[0] == role
            seen.add(n)
    assert len(seen) == 100


def test_session_key_validation():
    with pytest.raises(ValueError):
        SessionKey(b"short", b"\x00" * 16)
    with pytest.raises(ValueError):
        SessionKey(b"\x00" * 8, b"short")


# -- handshake


def test_handshakes_yield_distinct_keys():
    k1, _ = attest_and_exchange(b"\x01" * 12)
    k2, _ = attest_and_exchange(b"\x01" * 12)
    assert k1.key_id != k2.key_id
    assert k1.key != k2.key


def test_seeded_handshake_reproducible():
    k1, r1 = attest_and_exchange(b"\x05" * 12, seed=99)
    k2, r2 = attest_and_exchange(b"\x05" * 12, seed=99)
    assert k1.key == k2.key and k1.key_id == k2.key_id
    assert r1 == r2
    k3, _ = attest_and_exchange(b"\x05" * 12, seed=100)
    assert k3.key != k1.key


def test_handshake_then_roundtrip():
    key, record = attest_and_exchange(b"\x07" * 12)
    assert record.measurement == MEASUREMENT
    blob = seal(b"post-handshake traffic", key)
    assert open_blob(blob, key) == b"post-handshake traffic"


def test_two_sided_handshake_agrees():
    client = HandshakeClient(b"\x03" * 12)
    server_key, record = respond_handshake(client.public_bytes, client.client_nonce)
    client_key = client.complete(record)
    assert client_key.key == server_key.key
    blob = seal(b"up", client_key, role=0)
    assert open_blob(blob, server_key) == b"up"


def test_client_rejects_bad_attestation():
    client = HandshakeClient(b"\x03" * 12)
    _, record = respond_handshake(client.public_bytes, client.client_nonce)
    wrong_nonce = AttestationRecord(record.measurement, b"\x00" * 12,
                                    record.key_id, record.public_key)
    with pytest.raises(IntegrityError):
        client.complete(wrong_nonce)
    wrong_meas = AttestationRecord(b"\x00" * 32, record.client_nonce,
                                   record.key_id, record.public_key)
    with pytest.raises(IntegrityError):
        client.complete(wrong_meas)


# -- budget


MB = 2**20


def test_budget_single_chunk_fits():
    b = EnclaveBudget(96 * MB)
    b.load(30 * MB)
    assert b.resident_bytes == 30 * MB
    assert b.page_spill_bytes == 0
    assert b.ecall_count == 1


def test_budget_spill_example():
    b = EnclaveBudget(96 * MB)
    b.load(60 * MB)
    b.load(50 * MB)
    assert b.page_spill_bytes == 14 * MB
    assert b.ecall_count == 2
    b.unload(50 * MB)
    b.unload(60 * MB)
    assert b.resident_bytes == 0
    assert b.page_spill_bytes == 14 * MB  # spill reflects the peak


def test_budget_ecall_counts_loads():
    b = EnclaveBudget()
    for _ in range(7):
        b.load(10)
    assert b.ecall_count == 7


def test_budget_unload_guard():
    b = EnclaveBudget()
    b.load(5)
    with pytest.raises(ValueError):
        b.unload(6)


def test_load_to_enclave():
    b = EnclaveBudget()
    assert load_to_enclave(b"raw bytes", b) == b"raw bytes"
    assert b.resident_bytes == len(b"raw bytes")
    key = fresh_key()
    blob = seal(b"sealed payload", key)
    assert load_to_enclave(blob, b, key) == b"sealed payload"
    assert b.ecall_count == 2
    with pytest.raises(ValueError):
        load_to_enclave(seal(b"x", key), b)  # key required for blobs


# -- wire frames


def test_request_roundtrip():
    key = fresh_key()
    values = cells_to_mat(HOT[:3])
    frame = encode_request(b"\xaa" * 16, values, key)
    assert frame[:4] == MAGIC_QUERY
    assert payload_length(frame[:HEADER_LEN]) == len(frame) - HEADER_LEN
    cid, got_key, got = decode_request(frame, {key.key_id: key})
    assert cid == b"\xaa" * 16
    assert got_key is key
    assert np.array_equal(got, values)


def test_request_empty_values():
    key = fresh_key()
    values = np.empty((0, P.hash_width_bytes), dtype=np.uint8)
    frame = encode_request(b"\xbb" * 16, values, key)
    _, _, got = decode_request(frame, {key.key_id: key})
    assert got.shape == (0, P.hash_width_bytes)


def test_request_tampering_rejected():
    key = fresh_key()
    frame = encode_request(b"\xcc" * 16, cells_to_mat(HOT[:2]), key)
    sessions = {key.key_id: key}
    rng = np.random.default_rng(53)
    for _ in range(300):
        i = int(rng.integers(0, len(frame) * 8))
        bad = bytearray(frame)
        bad[i // 8] ^= 1 << (i % 8)
        with pytest.raises((ValueError, IntegrityError)):
            decode_request(bytes(bad), sessions)


def test_request_unknown_session():
    key = fresh_key()
    frame = encode_request(b"\xdd" * 16, cells_to_mat(HOT[:1]), key)
    with pytest.raises(ValueError, match="unknown session"):
        decode_request(frame, {})


def test_response_roundtrip():
    key = fresh_key()
    for bit in (True, False):
        frame = encode_response(b"\xee" * 16, bit, key)
        assert frame[:4] == MAGIC_RESPONSE
        assert decode_response(frame, key) is bit


def test_response_tampering_rejected():
    key = fresh_key()
    frame = encode_response(b"\xee" * 16, True, key)
    for i in range(len(frame)):
        bad = bytearray(frame)
        bad[i] ^= 0x40
        with pytest.raises((ValueError, IntegrityError, ServiceError)):
            decode_response(bytes(bad), key)


def test_error_frame():
    frame = encode_error(b"\x11" * 16, 3, "daily limit reached")
    assert frame[:4] == MAGIC_ERROR
    assert payload_length(frame[:HEADER_LEN]) == len(frame) - HEADER_LEN
    with pytest.raises(ServiceError) as ei:
        decode_response(frame, fresh_key())
    assert ei.value.code == 3
    assert "daily limit" in ei.value.message


def test_hello_roundtrip():
    hs = HandshakeClient(b"\x04" * 12)
    hello = encode_hello(b"\x22" * 16, hs)
    assert hello[:4] == MAGIC_HELLO
    assert payload_length(hello[:HEADER_LEN]) == 32
    session, record = respond_handshake(hello[HEADER_LEN:], b"\x04" * 12)
    reply = encode_hello_reply(b"\x22" * 16, record, P)
    got_record, got_params = decode_hello_reply(reply)
    assert got_params == P
    assert got_record == record
    assert hs.complete(got_record).key == session.key


def test_payload_length_rejects_unknown_magic():
    frame = encode_error(b"\x00" * 16, 1)
    bad = b"XXXX" + frame[4:HEADER_LEN]
    with pytest.raises(ValueError):
        payload_length(bad)


# -- batch execution


def client_frames(enclave, value_sets):
    """Handshake one session per client, return (frames, keys, ids)."""
    frames, keys, ids = [], [], []
    for i, cells in enumerate(value_sets):
        key = enclave.new_session()
        cid = bytes([i]) * 16
        values = cells_to_mat(cells) if cells else np.empty((0, P.hash_width_bytes), np.uint8)
        frames.append(encode_request(cid, values, key))
        keys.append(key)
        ids.append(cid)
    return frames, keys, ids


VALUE_SETS = [
    [HOT[0], COLD[0]],          # positive
    [COLD[0], COLD[1]],         # negative
    [HOT[1], HOT[2], HOT[3]],   # positive
    [],                         # empty, negative
    [COLD[2]],                  # negative
]


@pytest.mark.parametrize("mode", [MODE_STPSI, MODE_DOE, MODE_NFP])
def test_run_batch_equals_plaintext_psi(mode):
    enclave, cd = make_enclave(n_chunks=3)
    frames, keys, ids = client_frames(enclave, VALUE_SETS)
    cfg = PsiConfig(theta_doe=60)
    result = enclave.run_batch(frames, mode, cfg)
    assert result.rejected == []
    got = {}
    for (cid, frame), key in zip(result.responses, keys):
        got[cid] = decode_response(frame, key)
    batch = make_batch(
        [Query(f"c{i}", cells_to_mat(c) if c else np.empty((0, P.hash_width_bytes), np.uint8))
         for i, c in enumerate(VALUE_SETS)],
        P,
    )
    want = run_protocol(mode, batch, cd, cfg)
    for cid, m in zip(ids, want):
        assert got[cid] == m.positive, (mode, cid.hex())


def test_run_batch_budget_accounting():
    enclave, cd = make_enclave(n_chunks=4)
    frames, keys, ids = client_frames(enclave, VALUE_SETS)
    result = enclave.run_batch(frames, MODE_STPSI)
    b = enclave.budget
    assert b.ecall_count == 1 + 4  # query load + one per chunk
    assert b.ocall_count == 1
    assert b.resident_bytes == 0  # back to baseline
    query_bytes = sum(
        len(c) * P.hash_width_bytes for c in VALUE_SETS
    )
    max_chunk = max(len(c.serialize()) for c in cd.chunks)
    assert b.peak_resident_bytes == query_bytes + max_chunk
    assert b.page_spill_bytes == 0


def test_run_batch_excludes_bad_frames():
    enclave, _ = make_enclave()
    frames, keys, ids = client_frames(enclave, VALUE_SETS)
    frames[1] = frames[1][:-1] + bytes([frames[1][-1] ^ 0xFF])  # corrupt tag
    frames[3] = b"junk"  # not even a header
    result = enclave.run_batch(frames, MODE_STPSI)
    assert sorted(i for i, _ in result.rejected) == [1, 3]
    answered = {cid for cid, _ in result.responses}
    assert answered == {ids[0], ids[2], ids[4]}
    for (cid, frame), key in zip(result.responses, [keys[0], keys[2], keys[4]]):
        decode_response(frame, key)  # still authentic


def test_run_batch_timings_nonnegative():
    enclave, _ = make_enclave()
    frames, _, _ = client_frames(enclave, VALUE_SETS)
    from time import perf_counter

    t0 = perf_counter()
    result = enclave.run_batch(frames, MODE_STPSI)
    wall = perf_counter() - t0
    t = result.timings
    assert t.query_decrypt_s >= 0 and t.server_decrypt_s >= 0
    assert t.intersection_s >= 0 and t.query_upload_s == 0
    assert t.total() <= wall * 1.05


def test_sealed_dictionary_chunk_order_bound():
    # chunks sealed with their index as associated data: swapping two
    # at-rest blobs must break decryption
    enclave, cd = make_enclave(n_chunks=3)
    enclave.sealed.blobs[0], enclave.sealed.blobs[1] = (
        enclave.sealed.blobs[1],
        enclave.sealed.blobs[0],
    )
    frames, keys, _ = client_frames(enclave, [[HOT[0]]])
    with pytest.raises(IntegrityError):
        enclave.run_batch(frames, MODE_STPSI)


def test_stats_probe_counter_through_enclave():
    enclave, _ = make_enclave(n_chunks=3)
    frames, _, _ = client_frames(enclave, VALUE_SETS)
    result = enclave.run_batch(frames, MODE_STPSI)
    total_values = sum(len(c) for c in VALUE_SETS)
    assert result.stats.probes == total_values * 3
