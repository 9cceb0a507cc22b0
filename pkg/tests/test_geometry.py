import numpy as np
import pytest

from surrocal.geometry import (polytope_of, in_calibration_set,
                               calibration_set_distance, cells_adjacent,
                               adjacency_pairs, is_full_dimensional)
from surrocal.tasks import build_task, moment, oracle_prediction


def test_simplex_dims():
    for k in range(2, 9):
        _, dec = build_task("multiclass", k=k)
        p = polytope_of(dec)
        assert p.dim_affine == k - 1
        assert p.dim_ambient == k
        assert not is_full_dimensional(dec)


def test_cube_full_dimensional():
    _, dec = build_task("multilabel", k=3)
    p = polytope_of(dec)
    assert p.dim_affine == p.dim_ambient == 3
    assert len(p.vertices) == 8


def test_birkhoff_dimension_numeric():
    # rank of vertex differences, computed numerically
    for m in (2, 3, 4):
        _, dec = build_task("matching", m=m)
        assert polytope_of(dec).dim_affine == (m - 1) ** 2


def test_in_calibration_set_examples():
    _, dec = build_task("multiclass", k=2)
    assert in_calibration_set(dec, np.array([0.6, 0.4]), 1, 0.0)
    # violation 0.2 > 0.1
    assert not in_calibration_set(dec, np.array([0.4, 0.6]), 1, 0.1)
    rng = np.random.default_rng(1)
    _, dec3 = build_task("multiclass", k=3)
    for _ in range(50):
        u = rng.normal(size=3)
        assert in_calibration_set(dec3, u, oracle_prediction(dec3, u), 0.0)


def test_calibration_set_distance_binary_simplex():
    _, dec = build_task("multiclass", k=2)
    # ||psi(1)-psi(2)|| = sqrt(2), cells touch at the uniform point
    for eps in (0.2, 0.5):
        assert calibration_set_distance(dec, 1, eps) == pytest.approx(
            eps / np.sqrt(2), abs=1e-8)
    assert in_calibration_set(dec, np.array([0.5, 0.5]), 1, 0.0)
    assert in_calibration_set(dec, np.array([0.5, 0.5]), 2, 0.0)


def test_calibration_set_distance_hamming():
    # every cell contains the origin, so all deltas vanish and the minimum
    # runs over all |Z|-1 directions: the double flip has the largest
    # embedding gap (norm 1/sqrt(2)), giving sqrt(2) eps, below the
    # one-flip 2 eps contribution
    _, dec = build_task("multilabel", k=2)
    eps = 0.3
    one_flip = eps / 0.5
    diagonal = eps / np.sqrt(0.5)
    got = calibration_set_distance(dec, (1, 1), eps)
    assert got == pytest.approx(min(one_flip, diagonal), abs=1e-8)
    assert got == pytest.approx(np.sqrt(2) * eps, abs=1e-8)


def test_distance_zero_at_zero_eps():
    _, dec = build_task("multiclass", k=3)
    assert calibration_set_distance(dec, 1, 0.0) == pytest.approx(0.0, abs=1e-8)


def test_distance_monotone_and_linear():
    _, dec = build_task("multilabel", k=2)
    eps = np.linspace(0.1, 0.9, 5)
    vals = [calibration_set_distance(dec, (1, -1), float(e)) for e in eps]
    assert np.all(np.diff(vals) >= -1e-12)
    slope = vals[0] / eps[0]
    np.testing.assert_allclose(vals, slope * eps, atol=1e-8)


def test_cells_adjacent_examples():
    _, dec = build_task("multiclass", k=3)
    for z in (1, 2, 3):
        for z2 in (1, 2, 3):
            if z != z2:
                assert cells_adjacent(dec, z, z2)
    _, dech = build_task("multilabel", k=2)
    assert cells_adjacent(dech, (1, 1), (-1, -1))  # meet at the origin
    _, deco = build_task("ordinal", k=3)
    assert cells_adjacent(deco, 1, 3)
    with pytest.raises(ValueError):
        cells_adjacent(dec, 1, 1)


def test_adjacency_pairs_complete_for_desk_losses():
    _, dec = build_task("multilabel", k=2)
    pairs = adjacency_pairs(dec)
    assert len(pairs) == 4 * 3


def test_moment_in_cells_cover():
    rng = np.random.default_rng(3)
    for kind, params in [("multiclass", {"k": 4}), ("ordinal", {"k": 4}),
                         ("ndcg", {"m": 3, "r_max": 2})]:
        task, dec = build_task(kind, **params)
        for _ in range(30):
            q = rng.dirichlet(np.ones(task.Y.cardinality))
            mu = moment(dec, q)
            assert in_calibration_set(dec, mu, oracle_prediction(dec, mu), 0.0)
