import numpy as np
import pytest

from surrocal import potentials as pot
from surrocal import surrogates as sg
from surrocal.tasks import build_task, moment


def uniform(n):
    return np.ones(n) / n


# ---------------------------------------------------------------------------
# margin losses


def test_logistic_link_symmetry():
    spec = sg.make_margin("logistic")
    assert spec.link.forward(np.array([0.5]))[0] == pytest.approx(0.0)
    assert spec.link.inverse(np.array([0.0]))[0] == pytest.approx(0.5)


def test_exponential_link_value():
    spec = sg.make_margin("exponential")
    v = spec.link.forward(np.array([0.75]))
    assert v[0] == pytest.approx(0.5 * np.log(3.0), abs=1e-12)


def test_square_margin_eval_grad():
    spec = sg.make_margin("square")
    v = np.array([0.3])
    assert spec.eval(v, 1) == pytest.approx((1 - 0.3) ** 2)
    assert spec.grad_v(v, 1)[0] == pytest.approx(-2 * (1 - 0.3))
    assert spec.eval(v, -1) == pytest.approx((1 + 0.3) ** 2)


def test_hinge_rejected():
    with pytest.raises(ValueError, match="not injective"):
        sg.make_margin("hinge")
    with pytest.raises(ValueError, match="not injective"):
        sg.make_one_vs_all("hinge", 3)


def test_logistic_excess_value():
    # frozen against direct minimization of s(., q): the excess at the
    # score of a 0.75-moment under a uniform conditional
    spec = sg.make_margin("logistic")
    q = uniform(2)
    v = spec.t_of_mu(np.array([0.75, 0.25]))
    numeric = spec.sbar(v, q) - sg.numeric_sbar_min(spec, q)
    assert spec.excess(v, q) == pytest.approx(numeric, abs=1e-9)
    assert spec.excess(v, q) == pytest.approx(0.14384104, abs=1e-7)


def test_excess_zero_at_link_of_moment():
    rng = np.random.default_rng(0)
    for maker in (lambda: sg.make_margin("logistic"),
                  lambda: sg.make_margin("exponential"),
                  lambda: sg.make_one_vs_all("square", 3),
                  lambda: sg.make_cl(3)):
        spec = maker()
        for _ in range(20):
            q = rng.dirichlet(np.ones(spec.task.Y.cardinality))
            assert spec.excess(spec.t_of_mu(q), q) == pytest.approx(0.0, abs=1e-9)


def test_quadratic_excess_shift():
    _, dec = build_task("binary")
    spec = sg.make_quadratic(dec)
    q = uniform(2)
    v = moment(dec, q) + np.array([1.0, 0.0])
    assert spec.excess(v, q) == pytest.approx(0.5, abs=1e-12)


def test_squared_hinge_formula_matches_numeric_min():
    spec = sg.make_margin("squared_hinge")
    rng = np.random.default_rng(1)
    for _ in range(15):
        q1 = rng.uniform(0.05, 0.95)
        v = np.array([rng.uniform(-2.5, 2.5)])
        q = np.array([q1, 1 - q1])
        closed = spec.excess(v, q)
        numeric = spec.sbar(v, q) - sg.numeric_sbar_min(spec, q)
        assert closed == pytest.approx(numeric, abs=1e-7)


def test_modified_huber_formula_matches_numeric_min():
    # validates the clipped-residual form of the excess, including v
    # outside [-1, 1] where the raw in-text expression would disagree
    spec = sg.make_margin("modified_huber")
    rng = np.random.default_rng(2)
    for _ in range(15):
        q1 = rng.uniform(0.05, 0.95)
        v = np.array([rng.uniform(-3.0, 3.0)])
        q = np.array([q1, 1 - q1])
        closed = spec.excess(v, q)
        numeric = spec.sbar(v, q) - sg.numeric_sbar_min(spec, q)
        assert closed == pytest.approx(numeric, abs=1e-7)


def test_squared_hinge_witness_values():
    spec = sg.make_margin("squared_hinge")
    q = np.array([0.9, 0.1])
    v = np.array([2.0])
    # closed-form excess: (0.8 - 2)^2 - 0.9 * 1^2 = 0.54
    assert spec.excess(v, q) == pytest.approx(0.54, abs=1e-12)
    # square-potential Bregman value with the clamped inverse: 4 (0.9 - 1)^2
    u_hat = spec.link.inverse(v)
    bd = pot.bregman(spec.potential, spec.mu_pot(q), u_hat)
    assert bd == pytest.approx(0.04, abs=1e-12)
    assert abs(spec.excess(v, q) - bd) == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# CRF


def test_crf_uniform_moment():
    _, dec = build_task("multiclass", k=3)
    spec = sg.make_crf(dec)
    np.testing.assert_allclose(spec.link.inverse(np.zeros(3)), uniform(3),
                               atol=1e-12)


def test_crf_binary_closed_softmax():
    _, dec = build_task("multiclass", k=2)
    spec = sg.make_crf(dec)
    mu = spec.link.inverse(np.array([np.log(3.0), 0.0]))
    assert mu[0] == pytest.approx(0.75, abs=1e-12)


def test_crf_shift_invariance():
    _, dec = build_task("multiclass", k=3)
    spec = sg.make_crf(dec)
    rng = np.random.default_rng(3)
    v = rng.normal(size=3)
    for yj in range(3):
        s0 = spec.eval_fn(v, yj)
        s1 = spec.eval_fn(v + 2.5, yj)
        assert s0 == pytest.approx(s1, abs=1e-9)


def test_crf_beta_is_sup_phi_norm():
    _, dec = build_task("multilabel", k=2)
    spec = sg.make_crf(dec)
    assert spec.potential.beta_euclidean() == pytest.approx(2.0)  # ||(1,1)||^2
    _, dec2 = build_task("multiclass", k=5)
    assert sg.make_crf(dec2).potential.beta_euclidean() == pytest.approx(1.0)


def test_crf_map_examples():
    _, dec = build_task("multiclass", k=3)
    spec = sg.make_crf(dec)
    rng = np.random.default_rng(4)
    for _ in range(50):
        v = rng.normal(size=3)
        assert sg.crf_map(dec, v) == spec.decode(v)  # argmax = 0-1 decode


def test_crf_map_gamma_scaling():
    _, dec = build_task("multiclass", k=4)
    spec = sg.make_crf(dec)
    rng = np.random.default_rng(5)
    for _ in range(20):
        v = rng.normal(size=4)
        if np.sort(v)[-1] - np.sort(v)[-2] < 0.1:
            continue  # need a unique MAP
        y = sg.crf_map(dec, v)
        vertex = dec.phi(y)
        mu_large = spec.link.inverse(1e3 * v)
        assert np.abs(mu_large - vertex).max() <= 1e-6


def test_crf_map_vs_decode_divergence():
    # with the cube statistic the exponential family factorizes, so MAP and
    # the Hamming decode agree everywhere; a divergence witness exists for
    # the ordinal loss with the simplex statistic, where the Bayes output is
    # a weighted median rather than the mode
    _, dech = build_task("multilabel", k=2)
    spech = sg.make_crf(dech)
    grid = np.linspace(-1, 1, 9)
    for a in grid:
        for b in grid:
            v = np.array([a, b])
            assert sg.crf_map(dech, v) == spech.decode(v)

    from surrocal.tasks import ordinal_simplex_decomposition
    deco = ordinal_simplex_decomposition(3)
    speco = sg.make_crf(deco)
    found = False
    for a in np.linspace(-1, 1, 13):
        for b in np.linspace(-1, 1, 13):
            v = np.array([a, b, 0.0])
            if sg.crf_map(deco, v) != speco.decode(v):
                found = True
                break
        if found:
            break
    assert found


# ---------------------------------------------------------------------------
# phi-calibration machinery


def test_check_phi_calibration_passes():
    for maker in (lambda: sg.make_margin("logistic"),
                  lambda: sg.make_margin("exponential"),
                  lambda: sg.make_margin("square"),
                  lambda: sg.make_quadratic(build_task("multiclass", k=3)[1]),
                  lambda: sg.make_crf(build_task("multiclass", k=3)[1])):
        spec = maker()
        rep = sg.check_phi_calibration(spec, n_samples=400, tol=1e-6, seed=0)
        assert rep["pass"], (spec.name, rep["max_residual"])


def test_check_phi_calibration_fails_with_witness():
    for kind in ("squared_hinge", "modified_huber"):
        spec = sg.make_margin(kind)
        rep = sg.check_phi_calibration(spec, n_samples=400, tol=1e-6, seed=0)
        assert not rep["pass"]
        w = rep["witness"]
        assert abs(w["v"][0]) > 1.0  # witness sits outside the link image
        assert w["residual"] > 1e-3


def test_recover_potential_quadratic():
    _, dec = build_task("binary")
    spec = sg.make_quadratic(dec)
    rng = np.random.default_rng(6)
    qs = rng.dirichlet(np.ones(2), size=40)
    out = sg.recover_potential(spec, np.zeros(2), qs)
    assert out["max_residual"] <= 1e-6


def test_recover_potential_logistic_grid():
    spec = sg.make_margin("logistic")
    qs = [np.array([t, 1 - t]) for t in np.linspace(0.005, 0.995, 101)]
    out = sg.recover_potential(spec, np.array([0.0]), qs)
    assert out["max_residual"] <= 1e-6
    # recovered values equal the negative entropy up to the fitted affine part
    ent = -np.array([q[0] * np.log(q[0]) + q[1] * np.log(q[1]) for q in qs])
    fitted = out["recovered"] - out["affine_coef"][0] \
        - out["moments"][:, 0] * out["affine_coef"][1]
    np.testing.assert_allclose(fitted, -ent, atol=1e-6)


def test_recover_potential_crf():
    _, dec = build_task("multiclass", k=3)
    spec = sg.make_crf(dec)
    rng = np.random.default_rng(7)
    qs = rng.dirichlet(np.ones(3), size=60) * 0.9 + 0.1 / 3
    out = sg.recover_potential(spec, spec.t_of_mu(uniform(3)), qs)
    assert out["max_residual"] <= 1e-6


def test_recover_potential_rejects_bad_anchor():
    spec = sg.make_margin("squared_hinge")
    with pytest.raises(ValueError):
        sg.recover_potential(spec, np.array([2.0]),
                             [np.array([0.5, 0.5])])


def test_catalog_dispatch():
    _, dec = build_task("ordinal", k=4)
    spec = sg.make_by_name("at:square", dec)
    assert spec.dim_v == 3
    spec = sg.make_by_name("cl", dec)
    assert spec.dim_v == 3
    with pytest.raises(ValueError):
        sg.make_by_name("ova:logistic", dec)
    with pytest.raises(ValueError):
        sg.make_by_name("bogus", dec)


def test_ova_eval_structure():
    spec = sg.make_one_vs_all("logistic", 3)
    v = np.array([0.2, -0.5, 1.0])
    y = 2  # second label
    expected = (np.logaddexp(0, 0.5)
                + np.logaddexp(0, 0.2) + np.logaddexp(0, 1.0))
    assert spec.eval(v, y) == pytest.approx(expected, abs=1e-12)


def test_at_eval_structure():
    spec = sg.make_at("square", 3)
    v = np.array([0.5, -0.2])
    # y = 2 has staircase embedding (+1, -1)
    assert spec.eval(v, 2) == pytest.approx((1 - 0.5) ** 2 + (1 - 0.2) ** 2)


def test_cl_eval_is_log_loss_of_threshold_model():
    spec = sg.make_cl(3)
    v = np.array([-0.4, 0.9])
    q = spec.link.inverse(v)
    for yj in range(3):
        assert spec.eval_fn(v, yj) == pytest.approx(-np.log(q[yj]), abs=1e-9)


def test_cl_convex_on_monotone_segments():
    spec = sg.make_cl(4)
    rng = np.random.default_rng(8)
    for _ in range(40):
        a = np.sort(rng.normal(size=3) * 2)
        b = np.sort(rng.normal(size=3) * 2)
        yj = int(rng.integers(4))
        mid = spec.eval_fn((a + b) / 2, yj)
        assert mid <= (spec.eval_fn(a, yj) + spec.eval_fn(b, yj)) / 2 + 1e-10


def test_midpoint_convexity_random_specs():
    rng = np.random.default_rng(9)
    for maker in (lambda: sg.make_margin("logistic"),
                  lambda: sg.make_one_vs_all("square", 3),
                  lambda: sg.make_crf(build_task("multiclass", k=3)[1]),
                  lambda: sg.make_quadratic(build_task("multilabel", k=2)[1])):
        spec = maker()
        for _ in range(30):
            a = rng.normal(size=spec.dim_v) * 2
            b = rng.normal(size=spec.dim_v) * 2
            yj = int(rng.integers(spec.task.Y.cardinality))
            mid = spec.eval_fn((a + b) / 2, yj)
            assert mid <= (spec.eval_fn(a, yj) + spec.eval_fn(b, yj)) / 2 + 1e-10


def test_smoothness_gradient_lipschitz():
    # Legendre-type losses with (1/beta)-strongly-convex potentials have
    # beta-Lipschitz gradients
    rng = np.random.default_rng(10)
    for maker in (lambda: sg.make_margin("logistic"),
                  lambda: sg.make_crf(build_task("multiclass", k=3)[1]),
                  lambda: sg.make_quadratic(build_task("binary")[1])):
        spec = maker()
        beta = spec.potential.beta_euclidean()
        for _ in range(40):
            a = rng.normal(size=spec.dim_v) * 2
            b = rng.normal(size=spec.dim_v) * 2
            yj = int(rng.integers(spec.task.Y.cardinality))
            lhs = np.linalg.norm(spec.grad_fn(a, yj) - spec.grad_fn(b, yj))
            assert lhs <= beta * np.linalg.norm(a - b) + 1e-9
