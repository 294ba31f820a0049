import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lucgen.errors import DomainError
from lucgen.geodata import CommunitySite, GeoPoint, Table, cell_center, grid_cell, make_frame
from lucgen.landuse import (EMPTY, CheckinStats, QualityLabel, build_config, checkin_count,
                            checkin_frequency, diversity, label, label_communities, merge_dominant,
                            poi_proportions, quality, read_config_csv, write_config_csv)

configs = arrays(np.float64, (4, 3, 3), elements=st.floats(0, 50))


def entropy_oracle(totals):
    s = sum(totals)
    if s == 0:
        return 0.0
    return -sum(v / s * math.log(v / s) for v in totals if v > 0) / math.log(len(totals))


def test_diversity_negligible_category():
    c = np.zeros((2, 1, 1))
    c[0, 0, 0], c[1, 0, 0] = 1e3, 5e-324
    assert diversity(c) == 0.0


def test_diversity_examples():
    c = np.zeros((2, 2, 2))
    c[0, 0, 0], c[1, 1, 1] = 3, 1
    assert diversity(c) == pytest.approx(0.8113, abs=1e-4)
    assert diversity(np.zeros((20, 10, 10))) == 0.0
    assert diversity(np.ones((20, 10, 10))) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        diversity(-np.ones((2, 2, 2)))


@given(configs)
def test_diversity_matches_oracle(c):
    d = diversity(c)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(entropy_oracle(c.sum(axis=(1, 2)).tolist()), abs=1e-9)


# counts stay clear of subnormals, where scaling by k < 1 rounds entries to zero
scalable = arrays(np.float64, (4, 3, 3),
                  elements=st.one_of(st.just(0.0), st.floats(1e-6, 50)))


@given(scalable, st.floats(0.01, 100))
def test_diversity_scale_invariant(c, k):
    assert diversity(c * k) == pytest.approx(diversity(c), abs=1e-9)


def test_quality_examples():
    assert quality(0.6, 0.3).Q == pytest.approx(0.4)
    assert quality(0.0, 0.0).Q == 0.0
    assert quality(1.0, 1.0).label == QualityLabel.EXCELLENT
    assert label(0.5) == QualityLabel.TERRIBLE
    with pytest.raises(DomainError):
        quality(1.2, 0.3)


@given(st.floats(0, 1), st.floats(0, 1))
def test_quality_bounds(f, d):
    q = quality(f, d).Q
    assert min(f, d) - 1e-12 <= q <= max(f, d) + 1e-12
    assert q == pytest.approx(quality(d, f).Q)


def test_merge_dominant():
    c = np.zeros((3, 2, 2))
    c[1, 0, 0] = c[2, 0, 0] = 4      # tie between 1 and 2 -> lowest code
    c[2, 1, 1] = 1
    c[0, 0, 1] = 2
    np.testing.assert_array_equal(merge_dominant(c), [[1, 0], [EMPTY, 2]])


@given(configs)
def test_merge_dominant_oracle(c):
    dom = merge_dominant(c)
    for r in range(3):
        for k in range(3):
            col = c[:, r, k].tolist()
            if sum(col) == 0:
                assert dom[r, k] == EMPTY
            else:
                assert dom[r, k] == col.index(max(col))


@given(configs)
def test_proportions(c):
    p = poi_proportions(c)
    if c.sum() > 0:
        assert p.sum() == pytest.approx(1.0)
    else:
        assert np.all(p == 0)


def test_checkin_stats():
    s = CheckinStats.from_counts([10, 20, 30])
    assert s.normalize(20) == 0.5
    assert s.normalize(0) == 0.0 and s.normalize(99) == 1.0
    assert CheckinStats.from_counts([5, 5]).normalize(5) == 0.5


SITE = CommunitySite("a", GeoPoint(39.9, 116.4))


def test_build_config_counts_cells():
    f = make_frame(SITE, 1000.0)
    pts = [cell_center(f, 10, 0, 0), cell_center(f, 10, 0, 0), cell_center(f, 10, 9, 3)]
    lat, lon = f.to_geo(np.array([1200.0]), np.array([0.0]))   # context C5, ignored
    pois = Table("pois", {"lat": [p.lat for p in pts] + [float(lat[0])],
                          "lon": [p.lon for p in pts] + [float(lon[0])], "category": [3, 3, 7, 1]})
    c = build_config(pois, f)
    assert c.shape == (20, 10, 10) and c.sum() == 3
    assert c[3, 0, 0] == 2 and c[7, 9, 3] == 1


def test_checkin_frequency_counts_centre_only():
    f = make_frame(SITE, 1000.0)
    lat, lon = f.to_geo(np.array([0.0, 100.0, 1200.0]), np.array([0.0, 0.0, 0.0]))
    t = Table("checkins", {"lat": lat, "lon": lon, "time": ["2012-03-01T00:00"] * 3})
    assert checkin_count(t, f) == 2
    assert checkin_frequency(t, f, CheckinStats(0.0, 4.0)) == 0.5


def test_config_csv_roundtrip(tmp_path):
    c = np.zeros((20, 10, 10))
    c[2, 3, 4], c[19, 9, 9] = 5, 1
    write_config_csv(tmp_path / "c.csv", c)
    np.testing.assert_array_equal(read_config_csv(tmp_path / "c.csv"), c)


def test_label_communities_matches_recount(small_city):
    city, index = small_city
    corpus = label_communities(city, index=index)
    assert len(corpus.ids) == len(corpus.scores) == corpus.configs.shape[0]
    assert corpus.configs.shape[1:] == (20, 10, 10)
    site = next(index.sites())
    f = make_frame(site)
    want = np.zeros((20, 10, 10))
    for lat, lon, cat in zip(city.pois["lat"], city.pois["lon"], city.pois["category"]):
        cell = grid_cell(GeoPoint(lat, lon), f, 10)
        if cell is not None:
            want[cat, cell[0], cell[1]] += 1
    np.testing.assert_array_equal(corpus.configs[0], want)
    labels = set(corpus.labels)
    assert labels <= {"excellent", "terrible"}
    assert corpus.mask(QualityLabel.EXCELLENT).sum() + corpus.mask(QualityLabel.TERRIBLE).sum() \
        == len(corpus.ids)
