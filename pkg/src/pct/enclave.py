"""Simulated trusted region: AEAD channel, attestation stub, memory budget.

The real deployment target is a hardware enclave; here the trusted region
is an in-process object behind a narrow interface so a TEE backend could
replace it without touching the intersection code.  What is simulated
faithfully:

* every query and response crosses the boundary as an AES-128-GCM blob
  whose associated data is the wire header, so any bit flip is rejected;
* the server dictionary is sealed at rest and decrypted chunk by chunk
  inside the region, never all at once;
* a byte-exact memory budget with ECALL/OCALL counters records the
  residency model (all queries pinned, one chunk at a time).

Attestation is a stub: a fixed measurement plus an ephemeral X25519
exchange stands in for the real protocol, which is out of scope.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
import threading
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .chunking import DEFAULT_ENCLAVE_BUDGET, ChunkedDictionary
from .dictionary import SuccinctTrie
from .encoding import EncodingParams
from .psi import PsiConfig, PsiStats, Query, QueryBatch, run_protocol

MAGIC_QUERY = b"PCTQ"
MAGIC_RESPONSE = b"PCTR"
MAGIC_ERROR = b"PCTE"
MAGIC_HELLO = b"PCTA"
WIRE_VERSION = 1

# magic, version, client_id, key_id, nonce, value_count, key_width
HEADER = struct.Struct("<4sH16s8s12sIB")
HEADER_LEN = HEADER.size  # 47
GCM_TAG_LEN = 16

ROLE_CLIENT = 0
ROLE_ENCLAVE = 1

ERR_MALFORMED = 1
ERR_AUTH = 2
ERR_RATE_LIMIT = 3
ERR_INTERNAL = 4

# stand-in for the enclave image hash a verifier would check
MEASUREMENT = hashlib.sha256(b"pct/enclave-sim/1").digest()


class IntegrityError(Exception):
    """Authentication failed; no plaintext was released."""


class NonceReuseError(ValueError):
    """A nonce was offered twice under one key; sealing refused."""


class ServiceError(Exception):
    """Error reply received from the service."""

    def __init__(self, code: int, message: str = ""):
        super().__init__(f"service error {code}: {message}")
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# session keys and the AEAD channel


class SessionKey:
    """128-bit AES-GCM key with counter nonces, one counter per role.

    The two directions (client seals queries, enclave seals responses)
    draw from disjoint nonce spaces: the first nonce byte is the role,
    the remaining 11 bytes a little-endian counter.  Every nonce that
    has sealed something is remembered and refused a second use.
    """

    __slots__ = ("key_id", "key", "established_at", "_counters", "_used", "_lock")

    def __init__(self, key_id: bytes, key: bytes, established_at: int = 0):
        if len(key_id) != 8:
            raise ValueError("key_id must be 8 bytes")
        if len(key) != 16:
            raise ValueError("key must be 16 bytes")
        self.key_id = key_id
        self.key = key
        self.established_at = established_at
        self._counters = {ROLE_CLIENT: 0, ROLE_ENCLAVE: 0}
        self._used: set[bytes] = set()
        self._lock = threading.Lock()

    def next_nonce(self, role: int) -> bytes:
        with self._lock:
            c = self._counters[role]
            self._counters[role] = c + 1
        return bytes([role]) + c.to_bytes(11, "little")

    def mark_used(self, nonce: bytes) -> None:
        if len(nonce) != 12:
            raise ValueError("nonce must be 12 bytes")
        with self._lock:
            if nonce in self._used:
                raise NonceReuseError(f"nonce reused under key {self.key_id.hex()}")
            self._used.add(nonce)


@dataclass(frozen=True)
class EncryptedBlob:
    nonce: bytes
    ciphertext: bytes  # ciphertext || 16-byte tag
    associated_data: bytes = b""


def seal(plaintext: bytes, key: SessionKey, associated_data: bytes = b"", *,
         role: int = ROLE_CLIENT, nonce: bytes | None = None) -> EncryptedBlob:
    """Encrypt and authenticate; refuses any nonce this key has already used."""
    if nonce is None:
        nonce = key.next_nonce(role)
    key.mark_used(nonce)
    ct = AESGCM(key.key).encrypt(nonce, bytes(plaintext),
                                 associated_data if associated_data else None)
    return EncryptedBlob(nonce, ct, bytes(associated_data))


def open_blob(blob: EncryptedBlob, key: SessionKey) -> bytes:
    """Inverse of seal.  Any modification of nonce, ciphertext, tag or
    associated data fails the tag check and raises IntegrityError."""
    try:
        return AESGCM(key.key).decrypt(
            blob.nonce, blob.ciphertext,
            blob.associated_data if blob.associated_data else None,
        )
    except InvalidTag:
        raise IntegrityError("authentication tag check failed") from None


# ---------------------------------------------------------------------------
# attestation stub


@dataclass(frozen=True)
class AttestationRecord:
    """What the enclave hands back during the (stubbed) handshake."""

    measurement: bytes
    client_nonce: bytes
    key_id: bytes
    public_key: bytes  # enclave's ephemeral X25519 public key


def _seeded_private(label: bytes, seed: int) -> X25519PrivateKey:
    raw = hashlib.sha256(label + seed.to_bytes(8, "little", signed=True)).digest()
    return X25519PrivateKey.from_private_bytes(raw)


def _derive_session(shared: bytes, client_nonce: bytes, pub_client: bytes,
                    pub_enclave: bytes) -> tuple[bytes, bytes]:
    h = hashlib.sha256(
        b"pct-session/1" + shared + client_nonce + pub_client + pub_enclave
    ).digest()
    return h[16:24], h[:16]  # key_id, key


class HandshakeClient:
    """Client half of the key exchange, usable over the wire."""

    def __init__(self, client_nonce: bytes | None = None, *, seed: int | None = None):
        if seed is None:
            self._priv = X25519PrivateKey.generate()
        else:
            self._priv = _seeded_private(b"pct-hs-client", seed)
        self.client_nonce = client_nonce if client_nonce is not None else secrets.token_bytes(12)
        if len(self.client_nonce) != 12:
            raise ValueError("client_nonce must be 12 bytes")

    @property
    def public_bytes(self) -> bytes:
        return self._priv.public_key().public_bytes_raw()

    def complete(self, record: AttestationRecord, established_at: int = 0) -> SessionKey:
        if record.client_nonce != self.client_nonce:
            raise IntegrityError("handshake nonce mismatch")
        if record.measurement != MEASUREMENT:
            raise IntegrityError("unexpected enclave measurement")
        shared = self._priv.exchange(X25519PublicKey.from_public_bytes(record.public_key))
        key_id, key = _derive_session(shared, self.client_nonce,
                                      self.public_bytes, record.public_key)
        if key_id != record.key_id:
            raise IntegrityError("handshake key_id mismatch")
        return SessionKey(key_id, key, established_at)


def respond_handshake(
    pub_client: bytes, client_nonce: bytes, *,
    seed: int | None = None, established_at: int = 0,
) -> tuple[SessionKey, AttestationRecord]:
    """Enclave half: derive the session key and emit the attestation record."""
    if seed is None:
        priv = X25519PrivateKey.generate()
    else:
        priv = _seeded_private(b"pct-hs-enclave", seed)
    pub_enclave = priv.public_key().public_bytes_raw()
    shared = priv.exchange(X25519PublicKey.from_public_bytes(pub_client))
    key_id, key = _derive_session(shared, client_nonce, bytes(pub_client), pub_enclave)
    session = SessionKey(key_id, key, established_at)
    record = AttestationRecord(MEASUREMENT, bytes(client_nonce), key_id, pub_enclave)
    return session, record


def attest_and_exchange(
    client_nonce: bytes, *, seed: int | None = None, established_at: int = 0,
) -> tuple[SessionKey, AttestationRecord]:
    """One-shot handshake with both endpoints in-process.

    With a seed the whole exchange is reproducible; without one the keys
    are fresh randomness.  Both sides are checked to derive the same key.
    """
    client = HandshakeClient(client_nonce, seed=seed)
    session, record = respond_handshake(
        client.public_bytes, client.client_nonce,
        seed=None if seed is None else seed + 1, established_at=established_at,
    )
    mirror = client.complete(record, established_at)
    assert mirror.key == session.key  # both derivations must agree
    return session, record


# ---------------------------------------------------------------------------
# memory budget


class EnclaveBudget:
    """Byte-exact accounting of the trusted memory pool.

    Exceeding capacity does not stop the simulation; the overshoot is
    reported as page_spill_bytes, the analogue of paging overhead.
    """

    def __init__(self, capacity_bytes: int = DEFAULT_ENCLAVE_BUDGET):
        if capacity_bytes <= 0:
            raise ValueError("capacity must be positive")
        self.capacity_bytes = capacity_bytes
        self.resident_bytes = 0
        self.peak_resident_bytes = 0
        self.ecall_count = 0
        self.ocall_count = 0
        self._lock = threading.Lock()

    @property
    def page_spill_bytes(self) -> int:
        return max(0, self.peak_resident_bytes - self.capacity_bytes)

    def load(self, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("negative load")
        with self._lock:
            self.ecall_count += 1
            self.resident_bytes += nbytes
            if self.resident_bytes > self.peak_resident_bytes:
                self.peak_resident_bytes = self.resident_bytes
    def unload(self, nbytes: int) -> None:
        with self._lock:
            if nbytes < 0 or nbytes > self.resident_bytes:
                raise ValueError("unload does not match resident bytes")
            self.resident_bytes -= nbytes

    def ocall(self) -> None:
        with self._lock:
            self.ocall_count += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "capacity_bytes": self.capacity_bytes,
                "resident_bytes": self.resident_bytes,
                "peak_resident_bytes": self.peak_resident_bytes,
                "page_spill_bytes": self.page_spill_bytes,
                "ecall_count": self.ecall_count,
                "ocall_count": self.ocall_count,
            }


def load_to_enclave(payload, budget: EnclaveBudget,
                    key: SessionKey | None = None) -> bytes:
    """Bring data across the boundary: one ECALL, resident grows by the
    decrypted size.  Accepts raw bytes or an EncryptedBlob plus its key."""
    if isinstance(payload, EncryptedBlob):
        if key is None:
            raise ValueError("sealed payload needs its key")
        data = open_blob(payload, key)
    else:
        data = bytes(payload)
    budget.load(len(data))
    return data


# ---------------------------------------------------------------------------
# sealed dataset


@dataclass
class SealedDictionary:
    """Chunk tries encrypted at rest, outside the trusted region."""

    params: EncodingParams
    blobs: list[EncryptedBlob]

    @property
    def n_chunks(self) -> int:
        return len(self.blobs)


def chunk_ad(index: int) -> bytes:
    """Associated data binding a sealed chunk to its position."""
    return b"PCTC" + struct.pack("<I", index)


def seal_dictionary(cd: ChunkedDictionary, server_key: SessionKey) -> SealedDictionary:
    blobs = [
        seal(chunk.serialize(), server_key, chunk_ad(i), role=ROLE_ENCLAVE)
        for i, chunk in enumerate(cd.chunks)
    ]
    return SealedDictionary(cd.params, blobs)


# ---------------------------------------------------------------------------
# wire frames


def _pack_header(magic: bytes, client_id: bytes, key_id: bytes, nonce: bytes,
                 value_count: int, key_width: int) -> bytes:
    return HEADER.pack(magic, WIRE_VERSION, client_id, key_id, nonce,
                       value_count, key_width)


def payload_length(header: bytes) -> int:
    """Bytes that follow a 47-byte header, derivable from the header alone."""
    magic, version, _, _, _, value_count, key_width = HEADER.unpack(header)
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {version}")
    n = value_count * key_width
    if magic in (MAGIC_QUERY, MAGIC_RESPONSE):
        return n + GCM_TAG_LEN
    if magic in (MAGIC_ERROR, MAGIC_HELLO):
        return n
    raise ValueError(f"unknown frame magic {magic!r}")


def encode_request(client_id: bytes, values: np.ndarray, key: SessionKey) -> bytes:
    """Seal a query's hash values; the header doubles as associated data."""
    if len(client_id) != 16:
        raise ValueError("client_id must be 16 bytes")
    values = np.ascontiguousarray(values, dtype=np.uint8)
    if values.ndim != 2:
        raise ValueError("values must be a 2-D key matrix")
    count, width = values.shape
    nonce = key.next_nonce(ROLE_CLIENT)
    header = _pack_header(MAGIC_QUERY, client_id, key.key_id, nonce, count, width)
    blob = seal(values.tobytes(), key, header, nonce=nonce)
    return header + blob.ciphertext


def decode_request(frame: bytes, sessions: dict[bytes, SessionKey]
                   ) -> tuple[bytes, SessionKey, np.ndarray]:
    """Parse and authenticate a query frame against the session table."""
    if len(frame) < HEADER_LEN:
        raise ValueError("frame shorter than header")
    header, ct = frame[:HEADER_LEN], frame[HEADER_LEN:]
    magic, version, client_id, key_id, nonce, count, width = HEADER.unpack(header)
    if magic != MAGIC_QUERY:
        raise ValueError(f"not a query frame: {magic!r}")
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {version}")
    key = sessions.get(key_id)
    if key is None:
        raise ValueError(f"unknown session {key_id.hex()}")
    if len(ct) != count * width + GCM_TAG_LEN:
        raise ValueError("frame length does not match header")
    payload = open_blob(EncryptedBlob(nonce, ct, header), key)
    values = np.frombuffer(payload, dtype=np.uint8).reshape(count, width)
    return client_id, key, values


def encode_response(client_id: bytes, positive: bool, key: SessionKey) -> bytes:
    nonce = key.next_nonce(ROLE_ENCLAVE)
    header = _pack_header(MAGIC_RESPONSE, client_id, key.key_id, nonce, 1, 1)
    blob = seal(b"\x01" if positive else b"\x00", key, header, nonce=nonce)
    return header + blob.ciphertext


def encode_error(client_id: bytes, code: int, message: str = "") -> bytes:
    """Unauthenticated error reply; carries no secrets."""
    payload = bytes([code]) + message.encode()
    header = _pack_header(MAGIC_ERROR, client_id, b"\x00" * 8, b"\x00" * 12,
                          len(payload), 1)
    return header + payload


def decode_response(frame: bytes, key: SessionKey) -> bool:
    """Client-side: returns the match bit, or raises ServiceError/IntegrityError."""
    if len(frame) < HEADER_LEN:
        raise ValueError("frame shorter than header")
    header, ct = frame[:HEADER_LEN], frame[HEADER_LEN:]
    magic, version, _, key_id, nonce, count, width = HEADER.unpack(header)
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {version}")
    if magic == MAGIC_ERROR:
        if not ct:
            raise ServiceError(ERR_INTERNAL, "empty error frame")
        raise ServiceError(ct[0], ct[1:].decode(errors="replace"))
    if magic != MAGIC_RESPONSE:
        raise ValueError(f"not a response frame: {magic!r}")
    if key_id != key.key_id:
        raise ValueError("response for a different session")
    if count * width != 1 or len(ct) != 1 + GCM_TAG_LEN:
        raise ValueError("malformed response frame")
    payload = open_blob(EncryptedBlob(nonce, ct, header), key)
    if payload not in (b"\x00", b"\x01"):
        raise ValueError("unexpected result byte")
    return payload == b"\x01"


def encode_hello(client_id: bytes, hs: HandshakeClient) -> bytes:
    header = _pack_header(MAGIC_HELLO, client_id, b"\x00" * 8, hs.client_nonce, 32, 1)
    return header + hs.public_bytes


_PARAMS_PACK = struct.Struct("<HHqqB")


def encode_hello_reply(client_id: bytes, record: AttestationRecord,
                       params: EncodingParams) -> bytes:
    """Handshake reply carries the enclave key, measurement and the active
    encoding parameters so clients can hash their trajectories correctly."""
    payload = record.public_key + record.measurement + _PARAMS_PACK.pack(
        params.theta_geo, params.theta_time, params.t_start, params.t_end,
        1 if params.mix_mode.value == "interleave" else 0,
    )
    header = _pack_header(MAGIC_HELLO, client_id, record.key_id,
                          record.client_nonce, len(payload), 1)
    return header + payload


def decode_hello_reply(frame: bytes) -> tuple[AttestationRecord, EncodingParams]:
    if len(frame) < HEADER_LEN:
        raise ValueError("frame shorter than header")
    header, payload = frame[:HEADER_LEN], frame[HEADER_LEN:]
    magic, version, _, key_id, nonce, count, width = HEADER.unpack(header)
    if magic == MAGIC_ERROR:
        raise ServiceError(payload[0] if payload else ERR_INTERNAL,
                           payload[1:].decode(errors="replace"))
    if magic != MAGIC_HELLO or version != WIRE_VERSION:
        raise ValueError("not a handshake reply")
    if len(payload) != count * width or len(payload) < 64 + _PARAMS_PACK.size:
        raise ValueError("malformed handshake reply")
    pub, meas = payload[:32], payload[32:64]
    tg, tt, t0, t1, mix = _PARAMS_PACK.unpack(payload[64:64 + _PARAMS_PACK.size])
    params = EncodingParams(theta_geo=tg, theta_time=tt, t_start=t0, t_end=t1,
                            mix_mode="interleave" if mix else "sequential")
    return AttestationRecord(meas, nonce, key_id, pub), params


# ---------------------------------------------------------------------------
# batch execution


@dataclass
class PhaseTimings:
    """Seconds per phase; query_upload is filled in by the transport."""

    query_decrypt_s: float = 0.0
    server_decrypt_s: float = 0.0
    intersection_s: float = 0.0
    query_upload_s: float = 0.0

    def total(self) -> float:
        return (self.query_decrypt_s + self.server_decrypt_s
                + self.intersection_s + self.query_upload_s)

    def as_dict(self) -> dict:
        return {
            "query_upload_s": self.query_upload_s,
            "query_decrypt_s": self.query_decrypt_s,
            "server_decrypt_s": self.server_decrypt_s,
            "intersection_s": self.intersection_s,
        }


@dataclass
class BatchResult:
    responses: list[tuple[bytes, bytes]]  # (client_id, sealed response frame)
    rejected: list[tuple[int, str]]  # (frame index, reason)
    stats: PsiStats
    timings: PhaseTimings
    mode: str


class _LazyChunkDict:
    """Duck-typed stand-in for ChunkedDictionary whose chunk iteration
    decrypts one blob at a time, metering time and budget as it goes."""

    def __init__(self, sealed: SealedDictionary, server_key: SessionKey,
                 budget: EnclaveBudget):
        self._sealed = sealed
        self._server_key = server_key
        self._budget = budget
        self.decrypt_seconds = 0.0

    @property
    def params(self) -> EncodingParams:
        return self._sealed.params

    @property
    def key_width(self) -> int:
        return self._sealed.params.hash_width_bytes

    @property
    def chunks(self):
        return self._iter_chunks()

    def _iter_chunks(self):
        for i, blob in enumerate(self._sealed.blobs):
            t0 = perf_counter()
            # the expected position is asserted here, not read off the blob,
            # so a reordered chunk file fails its tag check
            expected = EncryptedBlob(blob.nonce, blob.ciphertext, chunk_ad(i))
            raw = open_blob(expected, self._server_key)
            # only the AEAD open counts as decrypt time; rebuilding the
            # trie's navigation caches is intersection-side work
            self.decrypt_seconds += perf_counter() - t0
            trie = SuccinctTrie.deserialize(raw)
            self._budget.load(len(raw))
            try:
                yield trie
            finally:
                self._budget.unload(len(raw))


class Enclave:
    """One logical trusted region holding a sealed dictionary.

    Batches run one at a time per instance; independent instances with
    their own budgets may run concurrently.
    """

    def __init__(self, sealed: SealedDictionary, server_key: SessionKey,
                 budget: EnclaveBudget | None = None):
        self.sealed = sealed
        self._server_key = server_key
        self.budget = budget if budget is not None else EnclaveBudget()
        self.sessions: dict[bytes, SessionKey] = {}
        self._run_lock = threading.Lock()

    @classmethod
    def from_plain(cls, cd: ChunkedDictionary,
                   budget: EnclaveBudget | None = None) -> "Enclave":
        server_key = SessionKey(secrets.token_bytes(8), secrets.token_bytes(16))
        return cls(seal_dictionary(cd, server_key), server_key, budget)

    @property
    def params(self) -> EncodingParams:
        return self.sealed.params

    def register_session(self, key: SessionKey) -> None:
        self.sessions[key.key_id] = key

    def handshake(self, pub_client: bytes, client_nonce: bytes, *,
                  seed: int | None = None, established_at: int = 0) -> AttestationRecord:
        session, record = respond_handshake(
            pub_client, client_nonce, seed=seed, established_at=established_at)
        self.register_session(session)
        return record

    def new_session(self, *, seed: int | None = None) -> SessionKey:
        """In-process shortcut: both endpoints share the returned object."""
        nonce = secrets.token_bytes(12) if seed is None else bytes(12)
        session, _ = attest_and_exchange(nonce, seed=seed)
        self.register_session(session)
        return session

    def run_batch(self, frames: list[bytes], mode: str,
                  cfg: PsiConfig | None = None) -> BatchResult:
        """Decrypt queries, intersect against the sealed dictionary chunk by
        chunk, seal one response per authenticated query.

        Frames that fail parsing or authentication are excluded and
        reported; they never abort the batch.
        """
        cfg = cfg if cfg is not None else PsiConfig()
        with self._run_lock:
            return self._run_batch_locked(frames, mode, cfg)

    def _run_batch_locked(self, frames, mode, cfg) -> BatchResult:
        width = self.params.hash_width_bytes
        accepted: list[tuple[bytes, SessionKey, np.ndarray]] = []
        rejected: list[tuple[int, str]] = []
        t0 = perf_counter()
        for i, frame in enumerate(frames):
            try:
                client_id, key, values = decode_request(frame, self.sessions)
            except (ValueError, IntegrityError) as e:
                rejected.append((i, str(e)))
                continue
            if values.shape[1] != width:
                rejected.append((i, f"key width {values.shape[1]}, expected {width}"))
                continue
            accepted.append((client_id, key, values))
        query_decrypt = perf_counter() - t0

        query_bytes = sum(v.nbytes for _, _, v in accepted)
        self.budget.load(query_bytes)  # queries stay resident for the batch
        try:
            batch = QueryBatch(
                [Query(cid.hex(), v) for cid, key, v in accepted],
                self.params.fingerprint(),
            )
            lazy = _LazyChunkDict(self.sealed, self._server_key, self.budget)
            stats = PsiStats()
            t1 = perf_counter()
            results = run_protocol(mode, batch, lazy, cfg, stats)
            intersect = max(0.0, perf_counter() - t1 - lazy.decrypt_seconds)
            responses = [
                (cid, encode_response(cid, m.positive, key))
                for (cid, key, _), m in zip(accepted, results)
            ]
        finally:
            self.budget.unload(query_bytes)
        self.budget.ocall()  # responses leave the region in one crossing
        timings = PhaseTimings(
            query_decrypt_s=query_decrypt,
            server_decrypt_s=lazy.decrypt_seconds,
            intersection_s=intersect,
        )
        return BatchResult(responses, rejected, stats, timings, mode)
