"""Follow one trajectory sample through every encoding stage.

Shows how (time, lat, lng) becomes a fixed-width byte key: tile
coordinates, quadkey bit strings, the periodic time code, bit
interleaving, and the final big-endian bytes.  Then sweeps precision
parameters to show how the key width responds.
"""

from pct.encoding import (
    EncodingParams,
    MixMode,
    TrajectoryPoint,
    bit_mix,
    byte_encode,
    periodic_encode,
    quadkey_encode,
    tile_xy,
    trajectory_hash,
)

LAT, LNG = 30.4564223, 135.3214557
T = 1_602_324_000
T_START, T_END = 1_601_856_000, 1_603_065_600


def main():
    theta_geo, theta_time = 16, 24
    print(f"sample: t={T}  lat={LAT}  lng={LNG}")
    print(f"precision: theta_geo={theta_geo} (tile zoom), "
          f"theta_time={theta_time}\n")

    x, y = tile_xy(LAT, LNG, theta_geo)
    print(f"tile coordinates at zoom {theta_geo}: x={x}  y={y}")

    kx, ky = quadkey_encode(LAT, LNG, theta_geo)
    print(f"quadkey bit strings:  x={kx}  y={ky}")

    kt = periodic_encode(T, T_START, T_END, theta_time)
    cell_s = 1 << (32 - theta_time)
    print(f"time code: {kt}  (one cell covers {cell_s} s)")

    mixed = bit_mix(kx, ky, kt, MixMode.INTERLEAVE)
    print(f"\ninterleaved ({len(mixed)} bits): {mixed}")
    print(f"bytes: {byte_encode(mixed).hex()}")

    seq = bit_mix(kx, ky, kt, MixMode.SEQUENTIAL)
    print(f"sequential                      : {seq}")

    params = EncodingParams(theta_geo, theta_time, T_START, T_END)
    h = trajectory_hash(TrajectoryPoint(T, LAT, LNG), params)
    print(f"trajectory_hash: {h.hex()}")

    print("\nkey width vs precision over a 14-day period:")
    t0, t1 = 1_600_000_000, 1_600_000_000 + 14 * 86400
    for tg, tt in [(16, 20), (21, 21), (24, 22), (25, 25), (28, 26)]:
        p = EncodingParams(tg, tt, t0, t1)
        print(f"  theta_geo={tg:2d} theta_time={tt:2d} -> "
              f"{p.total_bits:2d} bits, {p.hash_width_bytes} bytes, "
              f"cell {p.time_cell_seconds:5d} s")


if __name__ == "__main__":
    main()
