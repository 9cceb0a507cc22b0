import numpy as np
import pytest

from surrocal.tasks import (build_task, loss_matrix, moment, bayes_risk,
                            bayes_risk_all, excess_bayes_risk,
                            oracle_prediction, task_to_dict, task_from_dict,
                            check_distribution)

ALL_TASKS = [
    ("multiclass", {"k": 3}),
    ("binary", {}),
    ("binary", {"cost": 0.6}),
    ("multilabel", {"k": 3}),
    ("ordinal", {"k": 5}),
    ("ndcg", {"m": 3, "r_max": 3}),
    ("matching", {"m": 3}),
]


@pytest.mark.parametrize("kind,params", ALL_TASKS)
def test_decomposition_exact(kind, params):
    task, dec = build_task(kind, **params)
    L = loss_matrix(task)
    R = dec.psi_mat @ dec.phi_mat.T + dec.c
    assert np.abs(R - L).max() <= 1e-12


def test_multiclass_identity_and_mismatch():
    task, dec = build_task("multiclass", k=3)
    assert task.eval(2, 2) == 0.0
    assert task.eval(1, 2) == 1.0
    assert np.dot(dec.psi(1), dec.phi(2)) + dec.c == 1.0


def test_hamming_eval():
    task, _ = build_task("multilabel", k=2)
    assert task.eval((1, 1), (1, -1)) == 0.5
    assert task.eval((1, 1), (1, 1)) == 0.0


def test_ordinal_eval():
    task, _ = build_task("ordinal", k=5)
    assert task.eval(1, 3) == 2.0


def test_cost_sensitive_binary():
    task, dec = build_task("binary", cost=0.3)
    assert task.eval(1, -1) == pytest.approx(0.3)
    assert task.eval(-1, 1) == pytest.approx(1.7)
    assert task.eval(1, 1) == 0.0


def test_moment_examples():
    _, dec = build_task("multiclass", k=3)
    np.testing.assert_allclose(moment(dec, np.ones(3) / 3), np.ones(3) / 3)

    _, dech = build_task("multilabel", k=2)
    i = dech.task.Y.index((1, -1))
    q = np.zeros(4)
    q[i] = 1.0
    np.testing.assert_allclose(moment(dech, q), [1.0, -1.0])
    q2 = np.zeros(4)
    q2[dech.task.Y.index((1, 1))] = 0.5
    q2[dech.task.Y.index((-1, -1))] = 0.5
    np.testing.assert_allclose(moment(dech, q2), [0.0, 0.0], atol=1e-15)


def test_bayes_risk_examples():
    _, dec = build_task("binary")
    q = np.array([0.5, 0.5])
    assert bayes_risk(dec, 1, q) == pytest.approx(0.5)
    assert bayes_risk(dec, -1, q) == pytest.approx(0.5)
    assert excess_bayes_risk(dec, 1, q) == pytest.approx(0.0)
    # brute-force oracle over both outputs at q = (0.8, 0.2)
    q = np.array([0.8, 0.2])
    risks = bayes_risk_all(dec, q)
    assert excess_bayes_risk(dec, -1, q) == pytest.approx(
        risks[dec.task.Z.index(-1)] - risks.min()) == pytest.approx(0.6)


def test_ordinal_flat_risk():
    _, dec = build_task("ordinal", k=3)
    q = np.array([0.5, 0.0, 0.5])
    vals = [bayes_risk(dec, z, q) for z in (1, 2, 3)]
    assert vals == pytest.approx([1.0, 1.0, 1.0])
    assert excess_bayes_risk(dec, 1, q) == pytest.approx(0.0)


def test_oracle_prediction_examples():
    _, dec = build_task("multiclass", k=3)
    assert oracle_prediction(dec, np.array([0.2, 0.7, 0.1])) == 2
    _, dech = build_task("multilabel", k=2)
    assert oracle_prediction(dech, np.array([0.3, -0.4])) == (1, -1)
    _, dec2 = build_task("multiclass", k=2)
    assert oracle_prediction(dec2, np.array([0.5, 0.5])) == 1  # canonical tie


def test_bayes_linearity_invariant():
    rng = np.random.default_rng(0)
    task, dec = build_task("ordinal", k=4)
    q1 = rng.dirichlet(np.ones(4))
    q2 = rng.dirichlet(np.ones(4))
    a = 0.3
    for z in task.Z.elements:
        lhs = bayes_risk(dec, z, a * q1 + (1 - a) * q2)
        rhs = a * bayes_risk(dec, z, q1) + (1 - a) * bayes_risk(dec, z, q2)
        assert abs(lhs - rhs) <= 1e-12


def test_param_validation():
    with pytest.raises(ValueError):
        build_task("multiclass", k=1)
    with pytest.raises(ValueError):
        build_task("binary", cost=0.0)
    with pytest.raises(ValueError):
        build_task("matching", m=9)
    with pytest.raises(ValueError):
        build_task("nonsense", k=3)
    with pytest.raises(ValueError):
        build_task("multiclass", k=3, extra=1)


def test_distribution_validation():
    with pytest.raises(ValueError):
        check_distribution(np.array([0.5, 0.6]), 2)
    with pytest.raises(ValueError):
        check_distribution(np.array([-0.1, 1.1]), 2)


def test_serialization_roundtrip():
    task, dec = build_task("ndcg", m=3, r_max=2)
    d = task_to_dict(task)
    task2, dec2 = task_from_dict(d)
    assert task2.name == task.name
    np.testing.assert_allclose(dec2.psi_mat, dec.psi_mat)
    with pytest.raises(ValueError):
        task_from_dict({"kind": "binary", "bogus": 1})


def test_ndcg_normalizer_and_range():
    task, dec = build_task("ndcg", m=3, r_max=3)
    L = loss_matrix(task)
    # a perfect ordering exists for every relevance vector
    assert np.all(L.min(axis=0) <= 1e-12)
    assert np.all(L >= -1e-12) and np.all(L <= 1.0 + 1e-12)


def test_matching_loss_is_hamming_between_permutations():
    task, _ = build_task("matching", m=3)
    assert task.eval((0, 1, 2), (0, 1, 2)) == 0.0
    assert task.eval((0, 1, 2), (1, 0, 2)) == pytest.approx(2 / 3)
