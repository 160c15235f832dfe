import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from fastgrasp.dataset import (GraspRecord, ClosingRegionExtract, check_extract, export,
                               extract_from_candidate, import_records, record_from_candidate,
                               regions_path, stats)
from fastgrasp.errors import ValidationError
from fastgrasp.generator import GenOptions, generate, sample_orientations
from fastgrasp.gripper import GripperConfig

FORMATS = ("jsonl", "binary")


def random_records(n, seed=0):
    rng = np.random.default_rng(seed)
    quats = Rotation.random(n, random_state=seed).as_quat(scalar_first=True)
    out = []
    for i in range(n):
        s = float(rng.uniform())
        mu = math.inf if s == 0.0 else float(rng.uniform(0.05, 1.0))
        flags = {"dedup_survivor"} | ({"symmetric"} if i % 2 else set())
        out.append(GraspRecord(f"obj{i % 3}", rng.normal(size=3), quats[i], s, mu,
                               float(rng.uniform(0, 0.04)), float(rng.uniform(0, 0.04)),
                               float(rng.uniform(0, 0.5)), s * float(rng.uniform()),
                               flags, "antipodal_baseline" if i % 5 == 0 else "orientation_sampled"))
    out[0] = GraspRecord("zero", np.zeros(3), [1, 0, 0, 0], 0.0, math.inf, 0.0, 0.0)
    return out


@pytest.mark.parametrize("fmt", FORMATS)
def test_empty_dataset(tmp_path, fmt):
    path = tmp_path / f"empty.{fmt}"
    assert export([], [], path, fmt) == 0
    records, regions = import_records(path)
    assert records == [] and regions == []
    h = stats(records)
    assert h.n_records == 0 and h.score_hist.sum() == 0
    assert math.isnan(h.score_mean)


@pytest.mark.parametrize("fmt", FORMATS)
def test_round_trip_exact(tmp_path, fmt):
    records = random_records(100)
    rng = np.random.default_rng(1)
    regions = [ClosingRegionExtract(i, rng.normal(size=(i % 7 + 1, 3)), np.arange(i % 7 + 1) % 2)
               for i in range(0, 100, 3)]
    path = tmp_path / f"data.{fmt}"
    assert export(records, regions, path, fmt) == 100
    back, back_regions = import_records(path)
    assert back == records
    assert back_regions == regions
    assert math.isinf(back[0].fc_mu_star)


def test_format_sniffed_from_content(tmp_path):
    records = random_records(5)
    path = tmp_path / "data.jsonl"
    export(records, [], path, "binary")
    assert import_records(path)[0] == records


@pytest.mark.parametrize("fmt", FORMATS)
def test_non_unit_quaternion_rejected(tmp_path, fmt):
    records = random_records(10)
    bad = records[4]
    records[4] = GraspRecord(bad.object_id, bad.point, bad.quat * 1.001, bad.score,
                             bad.fc_mu_star, bad.d1, bad.d2)
    path = tmp_path / f"bad.{fmt}"
    with pytest.raises(ValidationError):
        export(records, [], path, fmt)
    assert not path.exists()
    assert not regions_path(path).exists()
    assert list(tmp_path.iterdir()) == []


@pytest.mark.parametrize("field, value", [("final_score", 2.0), ("d1", math.nan),
                                          ("fc_mu_star", math.nan), ("flags", {"bogus"}),
                                          ("flags", {"removed"}), ("provenance", "magic")])
def test_invalid_fields_rejected(tmp_path, field, value):
    rec = random_records(2)[1]
    kwargs = {k: getattr(rec, k) for k in ("object_id", "point", "quat", "score",
                                           "fc_mu_star", "d1", "d2", "weight",
                                           "final_score", "flags", "provenance")}
    kwargs[field] = value
    with pytest.raises(ValidationError):
        export([GraspRecord(**kwargs)], [], tmp_path / "x.jsonl")


def test_dangling_region_rejected(tmp_path):
    ex = ClosingRegionExtract(3, np.zeros((1, 3)), [0])
    with pytest.raises(ValidationError):
        export(random_records(2), [ex], tmp_path / "x.jsonl")


def test_stats_all_ones_single_bin():
    base = random_records(2)[1]
    records = [GraspRecord("a", base.point, base.quat, 1.0, 0.1, 0.01, 0.01)] * 50
    h = stats(records)
    assert h.score_hist[-1] == 50 and h.score_hist.sum() == 50
    assert h.score_mean == 1.0 and h.final_median == 1.0


def test_stats_uniform_within_three_sigma():
    # a per-bin 3 sigma band holds for all 20 bins with probability ~0.95; the seed is fixed
    n = 20000
    scores = np.random.default_rng(0).uniform(size=n)
    base = random_records(2)[1]
    h = stats([GraspRecord("u", base.point, base.quat, float(s), 0.5, 0.0, 0.0) for s in scores])
    p = 1 / 20
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(h.score_hist - n * p) <= 3 * sigma)
    assert h.score_mean == pytest.approx(0.5, abs=3 / math.sqrt(12 * n))


def test_stats_evenly_spread_scores_fill_bins_equally():
    base = random_records(2)[1]
    scores = (np.arange(2000) + 0.5) / 2000
    h = stats([GraspRecord("u", base.point, base.quat, float(s), 0.5, 0.0, 0.0) for s in scores])
    assert np.array_equal(h.score_hist, np.full(20, 100))


def test_stats_skips_removed():
    records = random_records(10)
    flagged = GraspRecord("r", np.zeros(3), [1, 0, 0, 0], 0.5, 0.2, 0.0, 0.0, flags={"removed"})
    h = stats(records + [flagged])
    assert h.n_removed == 1 and h.score_hist.sum() == 10
    assert h.removed_fraction == pytest.approx(1 / 11)


@pytest.mark.parametrize("fmt", FORMATS)
def test_export_byte_identical(tmp_path, fmt):
    records = random_records(30, seed=3)
    a, b = tmp_path / "a", tmp_path / "b"
    export(records, [], a, fmt)
    export(records, [], b, fmt)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("fmt", FORMATS)
def test_extracts_reproject_into_region(tmp_path, fmt, sphere_cloud, gripper):
    cands = generate(sphere_cloud, gripper, sample_orientations(64, 2), GenOptions())
    records = [record_from_candidate("sphere", c) for c in cands]
    regions = [extract_from_candidate(i, c, sphere_cloud) for i, c in enumerate(cands)]
    path = tmp_path / "s"
    export(records, regions, path, fmt)
    back, back_regions = import_records(path)
    assert len(back_regions) == len(cands)
    for ex in back_regions:
        assert check_extract(ex, back[ex.record_ref], gripper)
        assert set(ex.side_labels.tolist()) == {0, 1}
        left = ex.points[ex.side_labels == 0]
        assert np.all(left[:, 1] < 0)


def test_check_extract_catches_outside_point():
    rec = random_records(2)[1]
    ex = ClosingRegionExtract(0, [[0.0, 0.05, 0.0]], [1])
    assert not check_extract(ex, rec, GripperConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(FORMATS))
def test_round_trip_property(tmp_path_factory, seed, fmt):
    records = random_records(5, seed)
    path = tmp_path_factory.mktemp("rt") / "d"
    export(records, [], path, fmt)
    assert import_records(path, fmt)[0] == records
