"""Named invariant suite behind `surrocal verify`.

Each check returns {"pass": bool, "residual": float}; the runner assembles a
machine-readable report that is byte-identical for a fixed seed and
independent of the worker count.
"""

from __future__ import annotations

import numpy as np

from . import calibration as cal
from . import learning as ln
from . import potentials as pot
from . import surrogates as sg
from .decoding import (assignment_by_enumeration, decode_fast,
                       decode_fast_scores, linear_assignment)
from .geometry import calibration_set_distance, polytope_of
from .tasks import build_task, loss_matrix, moment, oracle_prediction

__all__ = ["run_suite", "CHECKS"]


def _result(residual: float, tol: float, **extra):
    out = {"pass": bool(residual <= tol), "residual": float(residual),
           "tolerance": float(tol)}
    out.update(extra)
    return out


def _task_sizes(fast: bool):
    if fast:
        return [("multiclass", {"k": 4}), ("binary", {}),
                ("multilabel", {"k": 3}), ("ordinal", {"k": 4}),
                ("ndcg", {"m": 3, "r_max": 2}), ("matching", {"m": 3})]
    return [("multiclass", {"k": 10}), ("binary", {}),
            ("multilabel", {"k": 8}), ("ordinal", {"k": 10}),
            ("ndcg", {"m": 4, "r_max": 3}), ("matching", {"m": 4})]


def _spec_catalog(fast: bool):
    specs = [sg.make_margin("logistic"), sg.make_margin("exponential"),
             sg.make_margin("square"),
             sg.make_one_vs_all("logistic", 3),
             sg.make_independent_classifiers("square", 2),
             sg.make_at("logistic", 3), sg.make_cl(3),
             sg.make_quadratic(build_task("multiclass", k=3)[1]),
             sg.make_crf(build_task("multiclass", k=3)[1])]
    if not fast:
        specs += [sg.make_one_vs_all("square", 4),
                  sg.make_independent_classifiers("logistic", 3),
                  sg.make_at("square", 4), sg.make_cl(4),
                  sg.make_quadratic(build_task("multilabel", k=2)[1]),
                  sg.make_quadratic(build_task("ndcg", m=3, r_max=2)[1]),
                  sg.make_crf(build_task("multilabel", k=2)[1]),
                  sg.make_rowcrf(build_task("matching", m=3)[1])]
    return specs


def _rng(seed, salt):
    return np.random.Generator(np.random.Philox(key=(seed, salt)))


def _random_q(rng, n_labels, size):
    return rng.dirichlet(np.ones(n_labels), size=size)


def _sample_scores(spec, rng, n):
    return sg._sample_score_box(spec, rng, n)


def _monotone_scores(spec, rng, n):
    V = _sample_scores(spec, rng, n)
    if spec.name == "cl":
        # thresholds sorted and separated: the finite-difference gradient
        # check needs to stay away from degenerate label probabilities
        V = np.sort(V, axis=1) + 0.5 * np.arange(spec.dim_v)
    return V


# ---------------------------------------------------------------------------
# losses


def check_decomposition_exactness(seed, fast):
    worst = 0.0
    for kind, params in _task_sizes(fast):
        task, dec = build_task(kind, **params)
        L = loss_matrix(task)
        R = dec.psi_mat @ dec.phi_mat.T + dec.c
        worst = max(worst, float(np.abs(R - L).max()))
    return _result(worst, 1e-12)


def check_bayes_linearity(seed, fast):
    rng = _rng(seed, 1)
    worst = 0.0
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        n = task.Y.cardinality
        for _ in range(20):
            q1, q2 = _random_q(rng, n, 2)
            a = rng.random()
            mix = a * q1 + (1 - a) * q2
            for z in [task.Z.elements[0], task.Z.elements[-1]]:
                from .tasks import bayes_risk
                lhs = bayes_risk(dec, z, mix)
                rhs = a * bayes_risk(dec, z, q1) + (1 - a) * bayes_risk(dec, z, q2)
                worst = max(worst, abs(lhs - rhs))
    return _result(worst, 1e-12)


def check_moment_accumulation(seed, fast):
    rng = _rng(seed, 2)
    worst = 0.0
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        for q in _random_q(rng, task.Y.cardinality, 10):
            m1 = moment(dec, q)
            m2 = dec.phi_mat[::-1].T @ q[::-1]
            worst = max(worst, float(np.abs(m1 - m2).max()))
    return _result(worst, 1e-12)


def check_bayes_oracle(seed, fast):
    rng = _rng(seed, 3)
    worst = 0.0
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        for q in _random_q(rng, task.Y.cardinality, 50):
            mu = moment(dec, q)
            risks = dec.psi_mat @ mu + dec.c
            worst = max(worst, float(risks[np.argmin(dec.psi_mat @ mu)]
                                     - risks.min()))
    return _result(worst, 0.0)


# ---------------------------------------------------------------------------
# geometry


def check_simplex_dims(seed, fast):
    ks = range(2, 6) if fast else range(2, 9)
    bad = 0
    for k in ks:
        _, dec = build_task("multiclass", k=k)
        if polytope_of(dec).dim_affine != k - 1:
            bad += 1
    return _result(float(bad), 0.0)


def check_cell_cover(seed, fast):
    from .geometry import in_calibration_set
    rng = _rng(seed, 4)
    bad = 0
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        for q in _random_q(rng, task.Y.cardinality, 30):
            mu = moment(dec, q)
            z = oracle_prediction(dec, mu)
            if not in_calibration_set(dec, mu, z, 0.0):
                bad += 1
    return _result(float(bad), 0.0)


def check_distance_monotone(seed, fast):
    _, dec = build_task("multilabel", k=2)
    eps = np.linspace(0.05, 0.8, 6)
    vals = np.array([calibration_set_distance(dec, (1, 1), float(e))
                     for e in eps])
    mono = float(max(0.0, -np.min(np.diff(vals))))
    # all cells meet at the origin here, so the distance is exactly linear
    lin = float(np.abs(vals - vals[0] / eps[0] * eps).max())
    return _result(max(mono, lin), 1e-8)


# ---------------------------------------------------------------------------
# surrogates


def check_gradient_fd(seed, fast):
    rng = _rng(seed, 5)
    n = 30 if fast else 100
    worst = 0.0
    for spec in _spec_catalog(fast):
        V = _monotone_scores(spec, rng, n)
        for v in V:
            yj = int(rng.integers(spec.task.Y.cardinality))
            g = spec.grad_fn(v, yj)
            fd = np.empty_like(np.atleast_1d(g), dtype=float)
            h = 1e-6
            for j in range(spec.dim_v):
                e = np.zeros(spec.dim_v)
                e[j] = h
                fd[j] = (spec.eval_fn(v + e, yj) - spec.eval_fn(v - e, yj)) / (2 * h)
            scale = max(1.0, float(np.abs(fd).max()))
            worst = max(worst, float(np.abs(g - fd).max()) / scale)
    return _result(worst, 1e-6)


def check_minimizer_property(seed, fast):
    rng = _rng(seed, 6)
    n_q = 12 if fast else 40
    worst = 0.0
    for spec in _spec_catalog(fast):
        if not spec.phi_calibrated:
            continue
        for q in _random_q(rng, spec.task.Y.cardinality, n_q):
            v_star = spec.t_of_mu(q)
            direct = spec.sbar(v_star, q)
            numeric = sg.numeric_sbar_min(spec, q, v0=v_star + 0.3,
                                          max_iter=1200)
            worst = max(worst, direct - numeric)
    return _result(worst, 1e-6)


def check_legendre_duality(seed, fast):
    rng = _rng(seed, 7)
    worst = 0.0
    for spec in _spec_catalog(fast):
        p = spec.potential
        if not p.legendre:
            continue
        for q in _random_q(rng, spec.task.Y.cardinality, 20):
            u = spec.mu_pot(0.9 * q + 0.1 / len(q))
            u2 = spec.mu_pot(_random_q(rng, spec.task.Y.cardinality, 1)[0]
                             * 0.9 + 0.1 / spec.task.Y.cardinality)
            # D_h(u, u2) = D_{h*}(grad h(u2), grad h(u))
            d1 = pot.bregman(p, u, u2)
            g_u, g_u2 = (np.atleast_1d(p.grad_h(u)),
                         np.atleast_1d(p.grad_h(u2)))
            d2 = (p.h_star(g_u2) - p.h_star(g_u)
                  - float(np.dot(g_u2 - g_u,
                                 np.atleast_1d(p.grad_h_star(g_u)))))
            worst = max(worst, abs(d1 - d2))
            rt = np.abs(np.atleast_1d(p.grad_h_star(g_u)) - u).max()
            worst = max(worst, float(rt))
    return _result(worst, 1e-8)


def check_link_roundtrip(seed, fast):
    rng = _rng(seed, 8)
    worst = 0.0
    for spec in _spec_catalog(fast):
        for q in _random_q(rng, spec.task.Y.cardinality, 20):
            u = spec.mu_pot(0.98 * q + 0.02 / len(q))
            v = spec.link.forward(u)
            back = np.atleast_1d(spec.link.inverse(np.atleast_1d(v)))
            worst = max(worst, float(np.abs(back - u).max()))
    return _result(worst, 1e-10)


def _strong_convexity_residual(spec, rng, n_pairs, beta=None):
    p = spec.potential
    beta = beta if beta is not None else p.beta
    worst = 0.0
    for _ in range(n_pairs):
        q1, q2 = _random_q(rng, spec.task.Y.cardinality, 2)
        u1 = spec.mu_pot(0.95 * q1 + 0.05 / len(q1))
        u2 = spec.mu_pot(0.95 * q2 + 0.05 / len(q2))
        d = pot.bregman(p, u1, u2)
        diff = np.atleast_1d(u1 - u2)
        nrm = (np.abs(diff).sum() if p.norm == "l1"
               else np.linalg.norm(diff))
        worst = max(worst, nrm ** 2 / (2.0 * beta) - d)
    return worst


def check_strong_convexity(seed, fast):
    rng = _rng(seed, 9)
    worst = 0.0
    for spec in _spec_catalog(fast):
        worst = max(worst, _strong_convexity_residual(spec, rng,
                                                      15 if fast else 40))
    return _result(worst, 1e-9)


def check_fault_injection(seed, fast):
    """Tampering the declared modulus by 10x must trip the strong-convexity
    check (the suite passes when the tampered invariant fails)."""
    rng = _rng(seed, 10)
    spec = sg.make_margin("logistic")
    tampered = _strong_convexity_residual(spec, rng, 40,
                                          beta=spec.potential.beta / 10.0)
    detected = tampered > 1e-9
    return {"pass": bool(detected), "residual": float(tampered),
            "tolerance": 1e-9}


def check_crf_covariance(seed, fast):
    rng = _rng(seed, 11)
    worst = 0.0
    for kind, params in [("multiclass", {"k": 3}), ("multilabel", {"k": 2})]:
        task, dec = build_task(kind, **params)
        bound = float(np.max(np.sum(dec.phi_mat ** 2, axis=1)))
        for _ in range(20 if fast else 60):
            v = rng.normal(size=dec.k_emb) * 2.0
            cov = pot.crf_covariance(dec.phi_mat, v)
            worst = max(worst, float(np.linalg.norm(cov, 2)) - bound)
    return _result(worst, 1e-9)


def check_bd_representation(seed, fast):
    n = 300 if fast else 1000
    ok = True
    worst = 0.0
    for spec in _spec_catalog(fast):
        if not spec.phi_calibrated:
            continue
        rep = sg.check_phi_calibration(spec, n_samples=n, tol=1e-6, seed=seed)
        ok = ok and rep["pass"]
        worst = max(worst, rep["max_residual"])
    for kind in ("squared_hinge", "modified_huber"):
        rep = sg.check_phi_calibration(sg.make_margin(kind), n_samples=n,
                                       tol=1e-6, seed=seed)
        ok = ok and (not rep["pass"])
    return {"pass": bool(ok), "residual": float(worst), "tolerance": 1e-6}


# ---------------------------------------------------------------------------
# calibration


def check_exact_vs_brute(seed, fast):
    eps = np.array([0.2, 0.5, 0.8]) if fast else np.arange(1, 10) / 10.0
    grid = cal.GridSpec(q_resolution=400) if fast else None
    worst = 0.0
    for kind in ("logistic", "square", "exponential"):
        spec = sg.make_margin(kind)
        brute = cal.calib_brute_force(spec, eps, grid)
        exact = np.array([cal.binary_zeta(spec.potential, float(e))
                          for e in eps])
        worst = max(worst, float(np.abs(brute - exact).max()))
    return _result(worst, 2e-3)


def check_bounds_dominance(seed, fast):
    eps = np.array([0.2, 0.5, 0.8])
    worst = 0.0
    jobs = [(sg.make_margin("logistic"), None),
            (sg.make_one_vs_all("square", 3), None),
            (sg.make_crf(build_task("multiclass", k=3)[1]), "crf")]
    grid = cal.GridSpec(q_resolution=60)
    for spec, extra in jobs:
        brute = cal.calib_brute_force(spec, eps, grid)
        for variant in ["generic", "l2_improved"] + ([extra] if extra else []):
            bounds = np.array([cal.calib_lower_bound(spec, float(e), variant)
                               for e in eps])
            worst = max(worst, float(np.max(bounds - brute)))
    return _result(worst, 2e-3)


def check_envelope(seed, fast):
    eps = np.linspace(0.05, 1.0, 20)
    vals = np.where(eps < 0.5, eps ** 2, 0.5 * eps - 0.125)  # convex sample
    c1 = cal.CalibrationCurve(eps, vals, "exact")
    env = cal.convex_envelope(c1)
    worst = float(np.max(env.values - c1.values))
    # concave sample collapses to its chord
    vals2 = np.sqrt(eps)
    env2 = cal.convex_envelope(cal.CalibrationCurve(eps, vals2, "exact"))
    chord = vals2[-1] / eps[-1] * eps
    worst = max(worst, float(np.abs(env2.values - chord).max()))
    slopes = np.diff(env2.values) / np.diff(env2.epsilons)
    worst = max(worst, float(max(0.0, -np.min(np.diff(slopes)))))
    return _result(worst, 1e-9)


def check_low_noise(seed, fast):
    zeta = lambda e: e ** 2 / 8.0
    worst = 0.0
    sym = abs(cal.low_noise_transform(zeta, cal.NoiseModel(1.0, 1.0), 0.3)
              - 0.3 ** 1.5 / 32.0)
    worst = max(worst, sym)
    for p in (1.0, 2.0):
        nm = cal.NoiseModel(p, 1.0)
        for e in np.linspace(1e-3, 1e-2, 7):
            worst = max(worst, zeta(e) - cal.low_noise_transform(zeta, nm, e))
    return _result(worst, 1e-12)


def check_upper_slope(seed, fast):
    eps = np.geomspace(0.01, 0.1, 8)
    spec = sg.make_margin("square")
    grid = cal.GridSpec(q_resolution=2000)
    brute = cal.calib_brute_force(spec, eps, grid)
    rep = cal.quadratic_upper_check(
        cal.CalibrationCurve(eps, brute, "brute_force"))
    ok = rep["pass"] and rep["slope"] <= 2.3
    return {"pass": bool(ok), "residual": float(abs(rep["slope"] - 2.0)),
            "tolerance": 0.3}


# ---------------------------------------------------------------------------
# learning and decoding


def check_krr_paths(seed, fast):
    rng = _rng(seed, 12)
    worst = 0.0
    kernel = ln.KernelSpec("gaussian", bandwidth=1.0)
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        X = rng.normal(size=(40, 2))
        y = rng.integers(0, task.Y.cardinality, size=40)
        model = ln.krr_train(X, y, kernel, 1e-3)
        for x in rng.normal(size=(30 if fast else 100, 2)):
            sa, sb = ln.krr_predict_paths(dec, model, x)
            worst = max(worst, float(np.abs(sa - sb).max()))
            if int(np.argmin(sa)) != int(np.argmin(sb)):
                worst = max(worst, 1.0)
    return _result(worst, 1e-10)


def check_asgd_machinery(seed, fast):
    task, dec = build_task("multiclass", k=3)
    spec = sg.make_crf(dec)
    kernel = ln.KernelSpec("gaussian", bandwidth=1.0)
    syn = ln.make_synthetic(dec, "smooth_logit", d=2, seed=seed, kernel=kernel)
    X, y = syn.sample(300, stream=1)
    D = 0.25  # small radius to force projections
    est, diag = ln.asgd_train(spec, X, y, kernel, D)
    worst = max(0.0, diag["max_grad_norm"] - diag["grad_cap"])
    norm = np.sqrt(est.norm_sq())
    # the averaged iterate stays inside the ball
    worst = max(worst, max(0.0, norm - D - 1e-8))
    ok = diag["n_projections"] > 0
    return {"pass": bool(worst <= 1e-8 and ok), "residual": float(worst),
            "tolerance": 1e-8}


def check_gradient_form(seed, fast):
    rng = _rng(seed, 13)
    worst = 0.0
    for spec in _spec_catalog(fast):
        if not spec.legendre_type:
            continue
        for _ in range(20):
            v = rng.normal(size=spec.dim_v)
            yj = int(rng.integers(spec.task.Y.cardinality))
            lhs = spec.grad_fn(v, yj)
            rhs = (np.atleast_1d(spec.potential.grad_h_star(v))
                   - spec.phi_pot[yj])
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return _result(worst, 1e-12)


def check_fast_generic_decode(seed, fast):
    rng = _rng(seed, 14)
    n = 400 if fast else 2000
    bad = 0
    for spec in _spec_catalog(fast):
        V = _sample_scores(spec, rng, n // 4)
        for v in V:
            if not spec.phi_calibrated:
                continue
            if spec.decode(v) != decode_fast_scores(spec, v):
                bad += 1
    for kind, params in _task_sizes(True):
        task, dec = build_task(kind, **params)
        lo = dec.phi_mat.min(axis=0) - 0.5
        hi = dec.phi_mat.max(axis=0) + 0.5
        for _ in range(n // 4):
            u = rng.uniform(lo, hi)
            z1 = oracle_prediction(dec, u)
            z2 = decode_fast(dec, u)
            if z1 != z2:
                bad += 1
    return _result(float(bad), 0.0)


def check_assignment_oracle(seed, fast):
    rng = _rng(seed, 15)
    bad = 0
    worst = 0.0
    for _ in range(20 if fast else 60):
        m = int(rng.integers(2, 6))
        cost = rng.normal(size=(m, m))
        p1, v1 = linear_assignment(cost)
        p2, v2 = assignment_by_enumeration(cost)
        worst = max(worst, abs(v1 - v2))
        if p1 != p2:
            bad += 1
    return _result(float(bad) + worst, 1e-9)


def check_fisher_consistency(seed, fast):
    rng = _rng(seed, 16)
    n_q = 100 if fast else 1000
    worst = 0.0
    for spec in _spec_catalog(fast):
        if not spec.phi_calibrated:
            continue
        for q in _random_q(rng, spec.task.Y.cardinality, n_q):
            v = spec.t_of_mu(q)
            risks = spec.decomp.psi_mat @ moment(spec.decomp, q) + spec.decomp.c
            worst = max(worst, float(risks[spec.decode_index(v)] - risks.min()))
    return _result(worst, 0.0)


def check_monotone_link_invariance(seed, fast):
    rng = _rng(seed, 17)
    spec = sg.make_one_vs_all("logistic", 4)
    bad = 0
    for _ in range(100):
        v = rng.normal(size=4) * 2
        base = spec.decode(v)
        for f in (np.tanh, lambda t: t ** 3, lambda t: np.exp(t / 2)):
            if spec.task.Z.elements[int(np.argmax(f(v)))] != base:
                bad += 1
    return _result(float(bad), 0.0)


CHECKS = [
    ("losses.decomposition_exactness", check_decomposition_exactness),
    ("losses.bayes_linearity", check_bayes_linearity),
    ("losses.moment_accumulation_order", check_moment_accumulation),
    ("losses.bayes_oracle_optimal", check_bayes_oracle),
    ("geometry.simplex_dims", check_simplex_dims),
    ("geometry.cell_cover", check_cell_cover),
    ("geometry.distance_monotone_linear", check_distance_monotone),
    ("surrogates.gradient_fd", check_gradient_fd),
    ("surrogates.minimizer_property", check_minimizer_property),
    ("surrogates.legendre_duality", check_legendre_duality),
    ("surrogates.link_roundtrip", check_link_roundtrip),
    ("surrogates.strong_convexity", check_strong_convexity),
    ("surrogates.strong_convexity_fault_injection", check_fault_injection),
    ("surrogates.crf_covariance_bound", check_crf_covariance),
    ("surrogates.bd_representation", check_bd_representation),
    ("calibration.exact_vs_brute_binary", check_exact_vs_brute),
    ("calibration.bounds_dominance", check_bounds_dominance),
    ("calibration.convex_envelope", check_envelope),
    ("calibration.low_noise_dominance", check_low_noise),
    ("calibration.quadratic_upper_slope", check_upper_slope),
    ("learning.krr_path_agreement", check_krr_paths),
    ("learning.asgd_projection_and_cap", check_asgd_machinery),
    ("learning.legendre_gradient_form", check_gradient_form),
    ("decoding.fast_generic_agreement", check_fast_generic_decode),
    ("decoding.assignment_vs_enumeration", check_assignment_oracle),
    ("decoding.fisher_consistency", check_fisher_consistency),
    ("decoding.monotone_link_invariance", check_monotone_link_invariance),
]


def run_suite(suite: str = "fast", seed: int = 0) -> dict:
    if suite not in ("fast", "full"):
        raise ValueError("suite must be 'fast' or 'full'")
    fast = suite == "fast"
    checks = {}
    for name, fn in CHECKS:
        checks[name] = fn(seed, fast)
    return {
        "suite": suite,
        "seed": int(seed),
        "checks": checks,
        "all_pass": bool(all(c["pass"] for c in checks.values())),
    }
