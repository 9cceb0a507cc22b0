import numpy as np
import pytest

from surrocal import potentials as pot
from surrocal.tasks import build_task


def test_quadratic_bregman():
    p = pot.quadratic_potential(2)
    assert pot.bregman(p, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    assert pot.bregman(p, [0.3, -0.2], [0.3, -0.2]) == pytest.approx(0.0)


def test_entropy_bregman_is_kl():
    p = pot.logistic_potential()
    # KL((0.8,0.2) || (0.5,0.5)) in nats
    expected = 0.8 * np.log(1.6) + 0.2 * np.log(0.4)
    assert pot.bregman(p, [0.8], [0.5]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.19274475, abs=1e-7)


def test_strict_convexity_positive():
    rng = np.random.default_rng(0)
    for p in (pot.logistic_potential(), pot.exponential_potential(),
              pot.square_potential()):
        for _ in range(50):
            a, b = rng.uniform(0.05, 0.95, size=2)
            if abs(a - b) > 1e-6:
                assert pot.bregman(p, [a], [b]) > 0


def test_boundary_error_for_legendre():
    p = pot.logistic_potential()
    with pytest.raises(pot.BoundaryError):
        pot.bregman(p, [0.5], [1.0])
    # first argument may sit on the boundary
    assert np.isfinite(pot.bregman(p, [1.0], [0.5]))


def test_legendre_inverse_gradients():
    rng = np.random.default_rng(1)
    for p in (pot.logistic_potential(), pot.exponential_potential(),
              pot.square_potential(), pot.quadratic_potential(3)):
        for _ in range(30):
            if p.dim == 1:
                u = np.array([rng.uniform(0.05, 0.95)])
            else:
                u = rng.normal(size=p.dim)
            back = np.atleast_1d(p.grad_h_star(p.grad_h(u)))
            np.testing.assert_allclose(back, u, atol=1e-8)


def test_exponential_conjugate_closed_form():
    p = pot.exponential_potential()
    # h*(0) = sup 2 sqrt(q(1-q)) = 1
    assert p.h_star(np.array([0.0])) == pytest.approx(1.0)
    v = np.array([0.7])
    q = np.atleast_1d(p.grad_h_star(v))
    assert p.h_star(v) == pytest.approx(float(q * v - p.h(q)), abs=1e-10)


def test_simplex_entropy_duality():
    p = pot.simplex_entropy_potential(3)
    q = np.array([0.2, 0.5, 0.3])
    g = p.grad_h(q)
    np.testing.assert_allclose(p.grad_h_star(g), q, atol=1e-12)
    q2 = np.array([0.4, 0.4, 0.2])
    d = pot.bregman(p, q2, q)
    kl = float(np.sum(q2 * np.log(q2 / q)))
    assert d == pytest.approx(kl, abs=1e-12)


def test_crf_potential_moment_match():
    _, dec = build_task("multilabel", k=2)
    p = pot.crf_potential(dec.phi_mat)
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = rng.normal(size=2)
        mu = p.grad_h_star(v)
        v2 = p.grad_h(mu)
        np.testing.assert_allclose(p.grad_h_star(v2), mu, atol=1e-9)
    with pytest.raises(pot.BoundaryError):
        p.grad_h(np.array([1.5, 0.0]))  # outside the marginal polytope


def test_crf_covariance_psd_and_bounded():
    _, dec = build_task("multiclass", k=4)
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=4) * 3
        cov = pot.crf_covariance(dec.phi_mat, v)
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() >= -1e-12
        assert eigs.max() <= 1.0 + 1e-12  # sup ||phi||^2 = 1 on the simplex


def test_row_softmax_potential():
    p = pot.row_softmax_potential(3)
    rng = np.random.default_rng(4)
    V = rng.normal(size=9)
    P = p.grad_h_star(V).reshape(3, 3)
    np.testing.assert_allclose(P.sum(axis=1), np.ones(3), atol=1e-12)
    back = np.atleast_1d(p.grad_h_star(p.grad_h(P.ravel())))
    np.testing.assert_allclose(back, P.ravel(), atol=1e-10)


def test_strong_convexity_moduli():
    rng = np.random.default_rng(5)
    cases = [(pot.logistic_potential(), "l2"), (pot.exponential_potential(), "l2"),
             (pot.square_potential(), "l2"), (pot.simplex_entropy_potential(3), "l1")]
    for p, norm in cases:
        assert p.norm == norm
        for _ in range(40):
            if p.domain.kind == "simplex":
                a = rng.dirichlet(np.ones(3)) * 0.9 + 0.1 / 3
                b = rng.dirichlet(np.ones(3)) * 0.9 + 0.1 / 3
            else:
                a = np.array([rng.uniform(0.05, 0.95)])
                b = np.array([rng.uniform(0.05, 0.95)])
            d = pot.bregman(p, a, b)
            nrm = np.abs(a - b).sum() if norm == "l1" else np.linalg.norm(a - b)
            assert d >= nrm ** 2 / (2 * p.beta) - 1e-10


def test_isotonic_projection():
    x = np.array([0.1, 0.5, 0.3, 0.9, 0.2])
    y = pot.isotonic_increasing(x)
    assert np.all(np.diff(y) >= -1e-15)
    # projection fixes monotone inputs
    z = np.array([0.1, 0.2, 0.9])
    np.testing.assert_allclose(pot.isotonic_increasing(z), z)


def test_cumulative_logit_link():
    link = pot.cumulative_logit_link(4)
    q = np.array([0.1, 0.4, 0.3, 0.2])
    v = link.forward(q)
    np.testing.assert_allclose(link.inverse(v), q, atol=1e-10)
    # non-monotone scores get repaired to a valid distribution
    q2 = link.inverse(np.array([1.0, -1.0, 0.5]))
    assert np.all(q2 >= 0) and q2.sum() == pytest.approx(1.0)


def test_cumulative_logit_log_probs_tails():
    v = np.array([-6.8, 13.4])
    logp = pot.cumulative_logit_log_probs(v)
    # stable tail: p_3 = sigma(-13.4), no 1 - sigma cancellation
    assert logp[-1] == pytest.approx(-np.logaddexp(0.0, 13.4), abs=1e-12)
    assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-12)
