import numpy as np
import pytest

from pct.datagen import CSV_COLUMNS, Dataset, GeneratorConfig, generate, read_csv, write_csv
from pct.encoding import TrajectoryPoint

CFG = GeneratorConfig(
    n_users=5,
    duration_s=3600,
    sampling_interval_s=60,
    t_start=1_700_000_000,
    seed=42,
)


def test_point_counts_and_timestamps():
    ds = generate(CFG)
    assert ds.n_users == 5
    assert ds.n_points == 5 * 60
    for i in range(ds.n_users):
        t, lat, lng = ds.user_arrays(i)
        assert len(t) == 60
        assert t[0] == CFG.t_start
        assert (np.diff(t) == 60).all()


def test_two_point_example():
    cfg = GeneratorConfig(n_users=1, duration_s=120, sampling_interval_s=60, seed=1)
    ds = generate(cfg)
    assert ds.n_points == 2
    t, _, _ = ds.user_arrays(0)
    assert t.tolist() == [cfg.t_start, cfg.t_start + 60]


def test_points_inside_box():
    ds = generate(CFG)
    assert (ds.lat >= CFG.lat_min).all() and (ds.lat <= CFG.lat_max).all()
    assert (ds.lng >= CFG.lng_min).all() and (ds.lng <= CFG.lng_max).all()


def test_same_seed_identical_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(generate(CFG), str(a))
    write_csv(generate(CFG), str(b))
    assert a.read_bytes() == b.read_bytes()
    other = GeneratorConfig(**{**CFG.__dict__, "seed": 43})
    write_csv(generate(other), str(b))
    assert a.read_bytes() != b.read_bytes()


def test_users_cluster_at_hotspots():
    # with high stickiness most users should stay near their start
    cfg = GeneratorConfig(n_users=50, duration_s=1800, stickiness=0.95, seed=7)
    ds = generate(cfg)
    spans = []
    for i in range(ds.n_users):
        _, lat, lng = ds.user_arrays(i)
        spans.append(float(lat.max() - lat.min() + lng.max() - lng.min()))
    assert np.median(spans) < 0.05  # degrees; box is 0.3 x 0.4


def test_config_validation():
    base = CFG.__dict__
    bad = [
        {"duration_s": 90},  # not a multiple of 60
        {"duration_s": 0},
        {"sampling_interval_s": 0},
        {"lat_min": 40.0, "lat_max": 35.0},
        {"lat_max": 89.0},
        {"lng_min": -200.0},
        {"n_hotspots": 0},
        {"stickiness": 1.5},
        {"speed_min_mps": -1.0},
        {"speed_min_mps": 3.0, "speed_max_mps": 1.0},
        {"n_users": -1},
    ]
    for patch in bad:
        with pytest.raises(ValueError):
            GeneratorConfig(**{**base, **patch})


# -- CSV I/O


def test_roundtrip_identity(tmp_path):
    path = tmp_path / "data.csv"
    ds = generate(CFG)
    write_csv(ds, str(path))
    head = path.read_text().splitlines()[0]
    assert head == ",".join(CSV_COLUMNS)
    back = read_csv(str(path))
    assert back.user_ids == ds.user_ids
    assert np.array_equal(back.t, ds.t)
    # coordinates round-trip exactly at the printed 7 decimals
    path2 = tmp_path / "again.csv"
    write_csv(back, str(path2))
    assert path.read_bytes() == path2.read_bytes()
    assert np.abs(back.lat - ds.lat).max() < 5e-8
    assert np.abs(back.lng - ds.lng).max() < 5e-8


def test_lf_line_endings(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(generate(CFG), str(path))
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    ds = read_csv(str(path))
    assert ds.n_users == 0 and ds.n_points == 0


def test_header_only(tmp_path):
    path = tmp_path / "header.csv"
    path.write_text("user_id,unix_epoch_s,latitude,longitude\n")
    ds = read_csv(str(path))
    assert ds.n_users == 0


def test_missing_field_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "user_id,unix_epoch_s,latitude,longitude\n"
        "u1,1700000000,35.1000000,139.2000000\n"
        "u1,1700000060,35.1000000\n"
        "u1,1700000120,35.1000000,139.2000000\n"
    )
    with pytest.raises(ValueError, match="line 3"):
        read_csv(str(path))


def test_non_numeric_field_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "user_id,unix_epoch_s,latitude,longitude\n"
        "u1,1700000000,35.1000000,139.2000000\n"
        "u1,oops,35.1000000,139.2000000\n"
    )
    with pytest.raises(ValueError, match="line 3"):
        read_csv(str(path))


def test_fractional_timestamp_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "user_id,unix_epoch_s,latitude,longitude\n"
        "u1,1700000000.5,35.1000000,139.2000000\n"
    )
    with pytest.raises(ValueError, match="line 2"):
        read_csv(str(path))


def test_wrong_columns_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("uid,time,lat,lon\nu1,0,1.0,2.0\n")
    with pytest.raises(ValueError, match="expected columns"):
        read_csv(str(path))


def test_interleaved_users_grouped_in_order(tmp_path):
    path = tmp_path / "mix.csv"
    path.write_text(
        "user_id,unix_epoch_s,latitude,longitude\n"
        "b,10,1.0000000,2.0000000\n"
        "a,20,1.1000000,2.1000000\n"
        "b,30,1.2000000,2.2000000\n"
    )
    ds = read_csv(str(path))
    assert ds.user_ids == ["b", "a"]  # first-appearance order
    tb, _, _ = ds.user_arrays(0)
    assert tb.tolist() == [10, 30]  # row order preserved within user


def test_pairs_roundtrip():
    pts = [TrajectoryPoint(10, 35.1, 139.2), TrajectoryPoint(70, 35.2, 139.3)]
    ds = Dataset.from_pairs([("x", pts), ("y", [])])
    assert ds.n_users == 2 and ds.n_points == 2
    pairs = ds.to_pairs()
    assert pairs[0][0] == "x" and pairs[0][1] == pts
    assert pairs[1] == ("y", [])
