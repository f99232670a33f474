"""Compare the succinct trie against a flat hash table on real key sets.

Trajectory keys share long prefixes (nearby cells, consecutive time
slots), which the trie exploits; the open-addressing table pays full
width for every slot at its load factor regardless.
"""

import time

import numpy as np

from pct.chunking import dedup_sorted_keys
from pct.datagen import GeneratorConfig, generate
from pct.dictionary import HashDictionary, build_trie
from pct.encoding import EncodingParams, encode_points

T0 = 1_600_000_000


def one_row(n_users: int):
    days = 2
    cfg = GeneratorConfig(n_users=n_users, duration_s=days * 86400,
                          sampling_interval_s=60, t_start=T0, seed=11)
    ds = generate(cfg)
    params = EncodingParams(24, 22, T0, T0 + days * 86400)
    uniq = dedup_sorted_keys(encode_points(ds.t, ds.lat, ds.lng, params))

    t0 = time.perf_counter()
    trie = build_trie(uniq)
    t_trie = time.perf_counter() - t0
    t0 = time.perf_counter()
    hd = HashDictionary(uniq)
    t_hash = time.perf_counter() - t0

    tb, hb = len(trie.serialize()), hd.size_bytes
    print(f"{n_users:6d} {len(uniq):9d} {tb / 2**20:9.2f} {hb / 2**20:9.2f} "
          f"{tb / hb:7.3f} {tb / len(uniq):8.2f} {t_trie:6.1f}s {t_hash:6.1f}s")

    # both structures answer membership identically
    rng = np.random.default_rng(0)
    probes = np.vstack([uniq[rng.integers(0, len(uniq), 1000)],
                        rng.integers(0, 256, (1000, uniq.shape[1]), np.uint8)])
    assert np.array_equal(trie.contains_many(probes), hd.contains_many(probes))


def main():
    print("users    unique     trie MiB  hash MiB   ratio   B/key   build times")
    for n in (50, 200, 800):
        one_row(n)
    print("\nratio is trie bytes over hash bytes; lower is better.")


if __name__ == "__main__":
    main()
