import math

import numpy as np
import pytest

from doatrack.geometry import (
    DoaVector,
    angular_distance,
    angular_to_euclidean,
    euclidean_distance,
    euclidean_to_angular,
    sample_equiangular_grid,
)


def test_angular_distance_identity():
    assert angular_distance(DoaVector(1, 0, 0), DoaVector(1, 0, 0)) == 0.0


def test_angular_distance_orthogonal():
    assert angular_distance(DoaVector(1, 0, 0), DoaVector(0, 1, 0)) == pytest.approx(math.pi / 2)


def test_angular_distance_antipodal():
    assert angular_distance(DoaVector(1, 0, 0), DoaVector(-1, 0, 0)) == pytest.approx(math.pi)


def test_angular_distance_rejects_zero_norm():
    with pytest.raises(ValueError):
        angular_distance(DoaVector(0, 0, 0), DoaVector(1, 0, 0))


def test_euclidean_distance_chord_60deg():
    a = DoaVector.from_azel(0, 0)
    b = DoaVector.from_azel(60, 0)
    assert euclidean_distance(a, b) == pytest.approx(1.0, abs=1e-12)


def test_euclidean_distance_chord_90deg():
    a = DoaVector.from_azel(0, 0)
    b = DoaVector.from_azel(90, 0)
    assert euclidean_distance(a, b) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_euclidean_distance_identical():
    v = DoaVector.from_azel(12, -34)
    assert euclidean_distance(v, v) == 0.0


def test_angular_metric_properties():
    rng = np.random.default_rng(7)
    for _ in range(300):
        pts = []
        for _ in range(3):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            pts.append(DoaVector(*v))
        a, b, c = pts
        dab = angular_distance(a, b)
        dba = angular_distance(b, a)
        assert dab == pytest.approx(dba, abs=1e-12)
        assert 0.0 <= dab <= math.pi
        assert angular_distance(a, a) == 0.0
        assert dab <= angular_distance(a, c) + angular_distance(c, b) + 1e-9


def test_chord_angle_identity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        u = rng.normal(size=3)
        w = rng.normal(size=3)
        u /= np.linalg.norm(u)
        w /= np.linalg.norm(w)
        a, b = DoaVector(*u), DoaVector(*w)
        theta = angular_distance(a, b)
        d = euclidean_distance(a, b)
        assert d * d == pytest.approx(2 - 2 * math.cos(theta), abs=1e-9)
        assert angular_to_euclidean(theta) == pytest.approx(d, abs=1e-9)
        assert euclidean_to_angular(d) == pytest.approx(theta, abs=1e-7)


def test_grid_90deg_has_six_points():
    # 4 equatorial directions plus the two poles, enumerated directly
    grid = sample_equiangular_grid(90)
    assert len(grid) == 6
    arrays = np.array([g.as_array() for g in grid])
    expected = np.array([
        [0, 0, -1], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, 1],
    ])
    for e in expected:
        assert np.min(np.linalg.norm(arrays - e, axis=1)) < 1e-12


def test_grid_30deg_equator_azimuths():
    grid = sample_equiangular_grid(30)
    az_at_equator = sorted(
        round(g.to_azel()[0]) % 360 for g in grid if abs(g.z) < 1e-12
    )
    assert az_at_equator == list(range(0, 360, 30))


def test_grid_contains_integer_degree_pair():
    grid = sample_equiangular_grid(1)
    target = DoaVector.from_azel(17, -42).as_array()
    arrays = np.array([g.as_array() for g in grid])
    assert np.min(np.linalg.norm(arrays - target, axis=1)) < 1e-12


def test_grid_pole_dedup_and_unit_norm():
    for res in (1, 2, 3, 4, 5, 10, 15, 20, 30):
        grid = sample_equiangular_grid(res)
        n_poles = sum(1 for g in grid if abs(abs(g.z) - 1) < 1e-12)
        assert n_poles == (2 if 90 % res == 0 else 0)
        assert all(g.is_unit() for g in grid[:50])


def test_grid_rejects_bad_resolution():
    with pytest.raises(ValueError):
        sample_equiangular_grid(0)
    with pytest.raises(ValueError):
        sample_equiangular_grid(-5)
    with pytest.raises(ValueError):
        sample_equiangular_grid(7)


def test_azel_roundtrip():
    v = DoaVector.from_azel(123.4, -56.7)
    az, el = v.to_azel()
    assert az == pytest.approx(123.4)
    assert el == pytest.approx(-56.7)
    assert v.is_unit()
