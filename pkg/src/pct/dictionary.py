"""Static membership dictionaries over fixed-width byte keys.

SuccinctTrie is a level-ordered sparse trie: one byte label per edge, a
``louds`` bit vector marking the first label of every node, and a
``has_child`` bit vector saying whether an edge leads deeper.  Keys all
share one width, so leaves are exactly the edges at the last level and no
terminator bytes are stored.  Lookups descend one level per key byte and
never touch the key count, and shared prefixes are stored once, which is
what makes trajectory-derived key sets compress well.

HashDictionary is the baseline: open addressing with linear probing over
the same keys, sized at a fixed load factor.  Its reported size counts the
full backing storage, occupied or not.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .bitvec import BitVector

_MAGIC = b"PCTF"
_VERSION = 1

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _as_key_matrix(keys, key_width=None) -> np.ndarray:
    """Normalize list-of-bytes or array input to an (n, w) uint8 matrix."""
    if isinstance(keys, np.ndarray):
        mat = np.ascontiguousarray(keys, dtype=np.uint8)
        if mat.ndim != 2:
            raise ValueError("key array must be 2-D (n, key_width)")
    else:
        keys = list(keys)
        if not keys:
            if key_width is None:
                raise ValueError("empty key set needs an explicit key_width")
            return np.empty((0, key_width), dtype=np.uint8)
        w = len(keys[0])
        if any(len(k) != w for k in keys):
            raise ValueError("keys must all have the same width")
        mat = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(len(keys), w)
    if key_width is not None and mat.shape[1] != key_width:
        raise ValueError(f"keys are {mat.shape[1]} bytes, expected {key_width}")
    if mat.shape[1] == 0:
        raise ValueError("key width must be positive")
    return mat


def sort_order(mat: np.ndarray) -> np.ndarray:
    """Permutation putting key-matrix rows in byte-lexicographic order."""
    if mat.shape[1] <= 8:
        full = np.zeros((len(mat), 8), dtype=np.uint8)
        full[:, 8 - mat.shape[1] :] = mat
        return np.argsort(full.view(">u8").reshape(len(mat)).astype(np.uint64),
                          kind="stable")
    return np.lexsort(tuple(mat[:, c] for c in reversed(range(mat.shape[1]))))


def _check_sorted_unique(mat: np.ndarray) -> None:
    if len(mat) < 2:
        return
    a = mat[:-1]
    b = mat[1:]
    neq = a != b
    any_neq = neq.any(axis=1)
    if not any_neq.all():
        raise ValueError("duplicate keys in input")
    first = neq.argmax(axis=1)
    rows = np.arange(len(first))
    if (a[rows, first] > b[rows, first]).any():
        raise ValueError("keys must be sorted ascending")


class SuccinctTrie:
    """Immutable exact-membership set of fixed-width byte keys."""

    def __init__(self, key_width: int, key_count: int, labels: np.ndarray,
                 louds: BitVector, has_child: BitVector):
        self.key_width = key_width
        self.key_count = key_count
        self.labels = np.ascontiguousarray(labels, dtype=np.uint8)
        self.louds = louds
        self.has_child = has_child
        self._levels = self._derive_levels()
        self._size_bytes = None

    # -- construction

    @classmethod
    def build(cls, keys, key_width=None) -> "SuccinctTrie":
        mat = _as_key_matrix(keys, key_width)
        _check_sorted_unique(mat)
        n, w = mat.shape
        if n == 0:
            empty = BitVector.from_bits(np.empty(0, np.uint8))
            return cls(w, 0, np.empty(0, np.uint8), empty, empty)
        if n > 1:
            neq = mat[1:] != mat[:-1]
            diff = neq.argmax(axis=1)
        else:
            diff = np.empty(0, np.int64)
        labels_parts = []
        louds_parts = []
        prev_mask = None
        for lvl in range(w):
            mask = np.empty(n, dtype=bool)
            mask[0] = True
            mask[1:] = diff <= lvl
            rows = np.flatnonzero(mask)
            labels_parts.append(mat[rows, lvl])
            if lvl == 0:
                lb = np.zeros(len(rows), dtype=np.uint8)
                lb[0] = 1
            else:
                lb = prev_mask[rows].astype(np.uint8)
            louds_parts.append(lb)
            prev_mask = mask
        labels = np.concatenate(labels_parts)
        louds_bits = np.concatenate(louds_parts)
        hc_bits = np.concatenate(
            [np.ones(len(p), np.uint8) for p in labels_parts[:-1]]
            + [np.zeros(len(labels_parts[-1]), np.uint8)]
        )
        return cls(w, n, labels, BitVector.from_bits(louds_bits), BitVector.from_bits(hc_bits))

    def _derive_levels(self):
        """Split the flat arrays back into per-level search structures.

        Levels are recovered from the louds vector alone: the root owns the
        single first node, and every edge of level L fans out into exactly
        one node of level L+1 (fixed-width keys, so no early leaves).
        """
        n_slots = len(self.labels)
        if n_slots == 0:
            return []
        starts = self.louds.positions()
        sizes = np.diff(starts, append=n_slots)
        levels = []
        g = 0  # next unconsumed node (louds group)
        slot0 = 0
        nodes_here = 1
        for lvl in range(self.key_width):
            if g + nodes_here > len(sizes):
                raise ValueError("corrupt trie: louds structure too short")
            lvl_sizes = sizes[g : g + nodes_here]
            n_lvl = int(lvl_sizes.sum())
            labels_lvl = self.labels[slot0 : slot0 + n_lvl]
            node_of_slot = np.repeat(np.arange(nodes_here, dtype=np.int64), lvl_sizes)
            comp = (node_of_slot << 8) | labels_lvl.astype(np.int64)
            levels.append({"start": slot0, "comp": comp})
            g += nodes_here
            slot0 += n_lvl
            nodes_here = n_lvl
        if g != self.louds.ones or slot0 != n_slots:
            raise ValueError("corrupt trie: level structure does not cover all labels")
        if len(levels[-1]["comp"]) != self.key_count:
            raise ValueError("corrupt trie: leaf count does not match key count")
        return levels

    # -- queries

    def contains(self, key: bytes) -> bool:
        if len(key) != self.key_width:
            raise ValueError(f"key is {len(key)} bytes, trie holds {self.key_width}-byte keys")
        if self.key_count == 0:
            return False
        node = 0
        for lvl, byte in enumerate(key):
            comp = self._levels[lvl]["comp"]
            want = (node << 8) | byte
            slot = int(np.searchsorted(comp, want))
            if slot == len(comp) or comp[slot] != want:
                return False
            node = slot
        return True

    def contains_many(self, keys: np.ndarray, presorted: bool = False) -> np.ndarray:
        """Vectorized membership for an (m, key_width) uint8 matrix.

        Callers probing the same key set against many tries can sort it
        lexicographically once and pass presorted=True; otherwise an
        internal sort keeps the descent merge-friendly.
        """
        keys = np.ascontiguousarray(keys, dtype=np.uint8)
        if keys.ndim != 2 or keys.shape[1] != self.key_width:
            raise ValueError("key matrix width does not match trie")
        m = len(keys)
        if self.key_count == 0 or m == 0:
            return np.zeros(m, dtype=bool)
        if not presorted:
            order = sort_order(keys)
            res = self.contains_many(keys[order], presorted=True)
            out = np.empty(m, dtype=bool)
            out[order] = res
            return out
        # invariant: (node, remaining key bytes) stays lexicographically
        # sorted, because surviving rows are emitted in level-array order
        rows = np.arange(m, dtype=np.int64)
        node = np.zeros(m, dtype=np.int64)
        for lvl in range(self.key_width):
            comp = self._levels[lvl]["comp"]
            want = (node << 8) | keys[rows, lvl].astype(np.int64)
            if len(comp) * 4 <= len(want):
                # small level, large probe set: locate each edge's run of probes
                lo = np.searchsorted(want, comp, side="left")
                hi = np.searchsorted(want, comp, side="right")
                cnts = hi - lo
                nz = np.flatnonzero(cnts)
                if len(nz) == 0:
                    return np.zeros(m, dtype=bool)
                starts = lo[nz]
                c = cnts[nz]
                ends = np.cumsum(c)
                step = np.ones(int(ends[-1]), dtype=np.int64)
                step[0] = starts[0]
                if len(nz) > 1:
                    step[ends[:-1]] = starts[1:] - starts[:-1] - c[:-1] + 1
                pos = np.cumsum(step)
                rows = rows[pos]
                node = np.repeat(nz, c)
            else:
                slot = np.searchsorted(comp, want)
                slot[slot == len(comp)] = 0  # hit check rejects the stand-in
                hit = comp[slot] == want
                rows = rows[hit]
                node = slot[hit]
            if len(rows) == 0:
                return np.zeros(m, dtype=bool)
        out = np.zeros(m, dtype=bool)
        out[rows] = True
        return out

    def first_key(self) -> bytes:
        """Smallest stored key; chunk routing keys off these."""
        if self.key_count == 0:
            raise ValueError("empty trie has no first key")
        # slot 0 of each level always continues the smallest prefix
        return bytes(int(lvl["comp"][0]) & 0xFF for lvl in self._levels)

    def to_matrix(self) -> np.ndarray:
        """Reconstruct the full sorted key matrix (diagnostics and tests)."""
        out = np.empty((self.key_count, self.key_width), dtype=np.uint8)
        if self.key_count == 0:
            return out
        cur = np.arange(self.key_count, dtype=np.int64)
        for lvl in range(self.key_width - 1, -1, -1):
            comp = self._levels[lvl]["comp"][cur]
            out[:, lvl] = (comp & 0xFF).astype(np.uint8)
            cur = comp >> 8
        return out

    # -- size and serialization

    @property
    def size_bytes(self) -> int:
        if self._size_bytes is None:
            self._size_bytes = (
                23  # magic, version, key_width, key_count, n_slots
                + len(self.labels)
                + self.louds.size_bytes
                + self.has_child.size_bytes
                + 4  # crc
            )
        return self._size_bytes

    def serialize(self) -> bytes:
        body = (
            struct.pack("<4sHBQQ", _MAGIC, _VERSION, self.key_width,
                        self.key_count, len(self.labels))
            + self.labels.tobytes()
            + self.louds.serialize()
            + self.has_child.serialize()
        )
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def deserialize(cls, data: bytes) -> "SuccinctTrie":
        if len(data) < 23:
            raise ValueError("truncated trie file")
        magic, version, key_width, key_count, n_slots = struct.unpack_from("<4sHBQQ", data, 0)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, not a dictionary chunk")
        if version != _VERSION:
            raise ValueError(f"unsupported chunk version {version}")
        stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
        if zlib.crc32(data[:-4]) != stored_crc:
            raise ValueError("chunk checksum mismatch, file is corrupt")
        off = 23
        if off + n_slots > len(data):
            raise ValueError("truncated trie file")
        labels = np.frombuffer(data, np.uint8, count=n_slots, offset=off)
        off += n_slots
        louds, off = BitVector.read_from(data, off)
        has_child, off = BitVector.read_from(data, off)
        if off != len(data) - 4:
            raise ValueError("trailing bytes in trie file")
        if louds.nbits != n_slots or has_child.nbits != n_slots:
            raise ValueError("corrupt trie: bit vectors do not align with labels")
        trie = cls(key_width, key_count, labels.copy(), louds, has_child)
        # has_child must be all ones above the leaf level and all zeros on it
        if n_slots:
            n_leaves = len(trie._levels[-1]["comp"])
            if has_child.ones != n_slots - n_leaves or (
                n_leaves and has_child.rank1(n_slots - n_leaves) != n_slots - n_leaves
            ):
                raise ValueError("corrupt trie: has_child pattern invalid")
        return trie


def build_trie(keys, key_width=None) -> SuccinctTrie:
    """Build a trie from strictly ascending, deduplicated fixed-width keys."""
    return SuccinctTrie.build(keys, key_width)


def serialize(trie: SuccinctTrie) -> bytes:
    return trie.serialize()


def deserialize(data: bytes) -> SuccinctTrie:
    return SuccinctTrie.deserialize(data)


def fnv1a_hashes(mat: np.ndarray) -> np.ndarray:
    """FNV-1a over each row of a key matrix, vectorized."""
    h = np.full(len(mat), _FNV_OFFSET, dtype=np.uint64)
    for col in range(mat.shape[1]):
        h ^= mat[:, col].astype(np.uint64)
        h *= _FNV_PRIME
    return h


class HashDictionary:
    """Open-addressing baseline over the same fixed-width keys."""

    def __init__(self, keys, key_width=None, load_factor: float = 0.875):
        mat = _as_key_matrix(keys, key_width)
        _check_sorted_unique(mat)
        n, w = mat.shape
        if not 0.1 <= load_factor < 1.0:
            raise ValueError("load_factor must be in [0.1, 1)")
        cap = 8
        while cap * load_factor < max(n, 1):
            cap *= 2
        self.key_width = w
        self.key_count = n
        self.capacity = cap
        self.load_factor = load_factor
        self._table = np.zeros((cap, w), dtype=np.uint8)
        self._occupied = np.zeros(cap, dtype=bool)
        mask = cap - 1
        occupied = self._occupied
        table = self._table
        # round-based parallel linear probing: per round, the first pending
        # key aiming at each free slot claims it, everyone else advances one
        # slot.  Keys only ever move past occupied slots, so the standard
        # probe-until-empty lookup invariant holds for the finished table.
        cur = (fnv1a_hashes(mat) & np.uint64(mask)).astype(np.int64)
        idx = np.arange(n)
        while idx.size:
            s = cur[idx]
            free = ~occupied[s]
            cand_slots = s[free]
            cand_keys = idx[free]
            uniq_slots, first = np.unique(cand_slots, return_index=True)
            winners = cand_keys[first]
            occupied[uniq_slots] = True
            table[uniq_slots] = mat[winners]
            won = np.zeros(n, dtype=bool)
            won[winners] = True
            idx = idx[~won[idx]]
            cur[idx] = (cur[idx] + 1) & mask

    def contains(self, key: bytes) -> bool:
        if len(key) != self.key_width:
            raise ValueError("key width mismatch")
        row = np.frombuffer(key, dtype=np.uint8)
        mask = self.capacity - 1
        s = int(fnv1a_hashes(row.reshape(1, -1))[0]) & mask
        while self._occupied[s]:
            if bytes(self._table[s]) == key:
                return True
            s = (s + 1) & mask
        return False

    def contains_many(self, keys: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(keys, dtype=np.uint8)
        return np.fromiter(
            (self.contains(row.tobytes()) for row in keys), dtype=bool, count=len(keys)
        )

    @property
    def size_bytes(self) -> int:
        # full backing storage at the configured load factor: one slot of key
        # bytes plus one occupancy byte per slot, plus a small fixed header
        return 16 + self.capacity * (self.key_width + 1)


def size_bytes(d) -> int:
    """Exact storage footprint of either dictionary kind."""
    return d.size_bytes
