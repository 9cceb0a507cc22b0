"""Strictly convex potentials, their conjugates, and link functions.

A potential h is the object carrying all calibration guarantees: the excess
Bayes surrogate risk of a calibrated loss is the Bregman divergence of h
composed with the inverse link.  Potentials here expose h, grad h, the
Fenchel conjugate h*, grad h*, a domain descriptor, and a strong-convexity
modulus beta tagged with its norm (h is (1/beta)-strongly convex).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

__all__ = [
    "Domain",
    "Potential",
    "Link",
    "bregman",
    "clamp01",
    "quadratic_potential",
    "logistic_potential",
    "exponential_potential",
    "square_potential",
    "clipped_square_potential",
    "product_potential",
    "simplex_entropy_potential",
    "crf_potential",
    "row_softmax_potential",
    "identity_link",
    "logistic_link",
    "exponential_link",
    "square_link",
    "clipped_square_link",
    "product_link",
    "cumulative_logit_link",
    "crf_link",
    "isotonic_increasing",
]

EPS_CLAMP = 1e-12


def clamp01(x, eta: float = EPS_CLAMP):
    return np.clip(x, eta, 1.0 - eta)


class BoundaryError(ValueError):
    """Bregman divergence asked to differentiate a Legendre potential on the
    boundary of its domain, where the gradient diverges."""


@dataclass(frozen=True)
class Domain:
    """Descriptor of a potential domain.

    kinds: 'full' (all of R^dim), 'interval_product' (box [lo, hi]^dim),
    'simplex' (probability simplex in R^dim), 'polytope' (hull of vertices),
    'row_stochastic' (product of m simplices, flattened row-major).
    """

    kind: str
    dim: int
    lo: float = 0.0
    hi: float = 1.0
    vertices: Optional[np.ndarray] = None

    def interior_point(self, u: np.ndarray, margin: float = EPS_CLAMP) -> bool:
        u = np.asarray(u, dtype=float)
        if self.kind == "full":
            return True
        if self.kind == "interval_product":
            return bool(np.all(u > self.lo + margin) and np.all(u < self.hi - margin))
        if self.kind == "simplex":
            return bool(np.all(u > margin) and abs(u.sum() - 1.0) < 1e-9)
        if self.kind == "row_stochastic":
            m = int(round(math.isqrt(self.dim)))
            P = u.reshape(m, m)
            return bool(np.all(P > margin)
                        and np.allclose(P.sum(axis=1), 1.0, atol=1e-9))
        if self.kind == "polytope":
            # Interior membership is certified indirectly (moment-matching
            # converges only for relative-interior points).
            return True
        raise ValueError(f"unknown domain kind {self.kind!r}")


@dataclass(frozen=True)
class Potential:
    """Strictly convex differentiable potential with conjugate machinery."""

    h: Callable
    grad_h: Callable
    h_star: Callable
    grad_h_star: Callable
    domain: Domain
    beta: float          # h is (1/beta)-strongly convex w.r.t. `norm`
    norm: str            # 'l1' or 'l2'
    legendre: bool
    dim: int
    name: str
    beta_l2: Optional[float] = None  # always available for Legendre-type specs

    def beta_euclidean(self) -> float:
        if self.norm == "l2":
            return self.beta
        if self.beta_l2 is None:
            raise ValueError(f"potential {self.name} has no Euclidean modulus")
        return self.beta_l2


def bregman(potential: Potential, u_prime, u, margin: float = EPS_CLAMP) -> float:
    """D_h(u', u) = h(u') - h(u) - <u' - u, grad h(u)>.

    The second argument must lie in the domain interior when the potential is
    Legendre (the gradient diverges on the boundary).
    """
    u_prime = np.asarray(u_prime, dtype=float)
    u = np.asarray(u, dtype=float)
    if potential.legendre and not potential.domain.interior_point(u, margin):
        raise BoundaryError(
            f"second Bregman argument lies on the boundary of {potential.name}")
    g = potential.grad_h(u)
    return float(potential.h(u_prime) - potential.h(u) - np.dot(u_prime - u, g))


# ---------------------------------------------------------------------------
# scalar margin potentials (domain parametrized by q = P(Y = 1))


def _as_array(x):
    return np.asarray(x, dtype=float)


def quadratic_potential(dim: int) -> Potential:
    return Potential(
        h=lambda u: 0.5 * float(np.dot(u, u)),
        grad_h=lambda u: _as_array(u).copy(),
        h_star=lambda v: 0.5 * float(np.dot(v, v)),
        grad_h_star=lambda v: _as_array(v).copy(),
        domain=Domain("full", dim),
        beta=1.0, norm="l2", legendre=True, dim=dim, beta_l2=1.0,
        name=f"quadratic_{dim}d",
    )


def _neg_entropy(q):
    q = clamp01(_as_array(q))
    return q * np.log(q) + (1.0 - q) * np.log1p(-q)


def logistic_potential() -> Potential:
    return Potential(
        h=lambda q: float(np.sum(_neg_entropy(q))),
        grad_h=lambda q: np.log(clamp01(_as_array(q))) - np.log1p(-clamp01(_as_array(q))),
        h_star=lambda v: float(np.sum(np.logaddexp(0.0, _as_array(v)))),
        grad_h_star=lambda v: expit(_as_array(v)),
        domain=Domain("interval_product", 1, 0.0, 1.0),
        beta=0.25, norm="l2", legendre=True, dim=1, beta_l2=0.25,
        name="logistic",
    )


def exponential_potential() -> Potential:
    def h(q):
        q = clamp01(_as_array(q))
        return float(np.sum(-2.0 * np.sqrt(q * (1.0 - q))))

    def grad_h(q):
        q = clamp01(_as_array(q))
        return (2.0 * q - 1.0) / np.sqrt(q * (1.0 - q))

    def h_star(v):
        v = _as_array(v)
        return float(np.sum((v + np.sqrt(4.0 + v * v)) / 2.0))

    def grad_h_star(v):
        v = _as_array(v)
        return 0.5 * (1.0 + v / np.sqrt(4.0 + v * v))

    return Potential(h, grad_h, h_star, grad_h_star,
                     Domain("interval_product", 1, 0.0, 1.0),
                     beta=0.25, norm="l2", legendre=True, dim=1, beta_l2=0.25,
                     name="exponential")


def square_potential() -> Potential:
    # -4q(1-q) extends to a globally quadratic function on all of R.
    return Potential(
        h=lambda q: float(np.sum(4.0 * _as_array(q) ** 2 - 4.0 * _as_array(q))),
        grad_h=lambda q: 8.0 * _as_array(q) - 4.0,
        h_star=lambda v: float(np.sum((_as_array(v) + 4.0) ** 2 / 16.0)),
        grad_h_star=lambda v: (_as_array(v) + 4.0) / 8.0,
        domain=Domain("full", 1),
        beta=0.125, norm="l2", legendre=True, dim=1, beta_l2=0.125,
        name="square",
    )


def clipped_square_potential(name: str) -> Potential:
    """Square potential restricted to [0, 1]; used by the margin losses whose
    Bregman representation does not extend beyond the link image."""
    base = square_potential()
    return Potential(base.h, base.grad_h, base.h_star, base.grad_h_star,
                     Domain("interval_product", 1, 0.0, 1.0),
                     beta=0.125, norm="l2", legendre=False, dim=1,
                     beta_l2=0.125, name=name)


def product_potential(base: Potential, k: int, name: str) -> Potential:
    """Coordinate-wise sum of k copies of a scalar potential."""
    dom = Domain(base.domain.kind, k, base.domain.lo, base.domain.hi)
    return Potential(
        h=lambda u: _sum_scalar(base.h, u),
        grad_h=lambda u: base.grad_h(_as_array(u)),
        h_star=lambda v: _sum_scalar(base.h_star, v),
        grad_h_star=lambda v: base.grad_h_star(_as_array(v)),
        domain=dom,
        beta=base.beta, norm=base.norm, legendre=base.legendre, dim=k,
        beta_l2=base.beta_l2, name=name,
    )


def _sum_scalar(fn, u):
    # scalar potentials already sum over coordinates
    return float(fn(_as_array(u)))


def simplex_entropy_potential(k: int) -> Potential:
    """Negative Shannon entropy on the k-simplex (natural log)."""

    def h(q):
        q = clamp01(_as_array(q))
        return float(np.sum(q * np.log(q)))

    def grad_h(q):
        return np.log(clamp01(_as_array(q))) + 1.0

    def h_star(v):
        # Conjugate over the simplex domain; the +1 in grad_h is absorbed by
        # the shift invariance of the softmax.
        return float(logsumexp(_as_array(v)))

    def grad_h_star(v):
        v = _as_array(v)
        w = np.exp(v - logsumexp(v))
        return w / w.sum()

    return Potential(h, grad_h, h_star, grad_h_star, Domain("simplex", k),
                     beta=1.0, norm="l1", legendre=True, dim=k, beta_l2=1.0,
                     name=f"simplex_entropy_{k}")


# ---------------------------------------------------------------------------
# log-partition potential over an enumerated statistic


def crf_log_partition(phi_mat: np.ndarray, v: np.ndarray) -> float:
    return float(logsumexp(phi_mat @ np.asarray(v, dtype=float)))


def crf_marginal(phi_mat: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Marginal inference: mu = sum_y p(y|v) phi(y) with softmax weights."""
    scores = phi_mat @ np.asarray(v, dtype=float)
    scores -= scores.max()
    w = np.exp(scores)
    w /= w.sum()
    return phi_mat.T @ w


def crf_softmax_weights(phi_mat: np.ndarray, v: np.ndarray) -> np.ndarray:
    scores = phi_mat @ np.asarray(v, dtype=float)
    scores -= scores.max()
    w = np.exp(scores)
    return w / w.sum()


def crf_covariance(phi_mat: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = crf_softmax_weights(phi_mat, v)
    mean = phi_mat.T @ w
    centered = phi_mat - mean
    return centered.T @ (centered * w[:, None])


def crf_moment_match(phi_mat: np.ndarray, mu: np.ndarray, tol: float = 1e-10,
                     max_iter: int = 200, ridge: float = 1e-10) -> np.ndarray:
    """Invert marginal inference: find v with grad h*(v) = mu.

    Damped Newton on v -> h*(v) - <mu, v>, whose Hessian is the softmax
    covariance of the statistic.  Converges only for mu in the relative
    interior of the marginal polytope; the solution is unique up to the
    lineality space of the log-partition.
    """
    mu = np.asarray(mu, dtype=float)
    v = np.zeros(phi_mat.shape[1])

    def objective(v):
        return crf_log_partition(phi_mat, v) - float(mu @ v)

    f = objective(v)
    for _ in range(max_iter):
        grad = crf_marginal(phi_mat, v) - mu
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            return v
        H = crf_covariance(phi_mat, v) + ridge * np.eye(len(v))
        step = np.linalg.solve(H, grad)
        alpha = 1.0
        while alpha > 1e-12:
            v_new = v - alpha * step
            f_new = objective(v_new)
            if f_new <= f - 1e-4 * alpha * float(grad @ step):
                v, f = v_new, f_new
                break
            alpha /= 2.0
        else:
            break
    grad = crf_marginal(phi_mat, v) - mu
    if np.linalg.norm(grad) > 1e-6:
        raise BoundaryError(
            "moment matching did not converge; the moment vector is outside "
            "the relative interior of the marginal polytope")
    return v


def crf_potential(phi_mat: np.ndarray, name: str = "crf") -> Potential:
    """Negative maximum-entropy potential of the exponential family with
    sufficient statistic phi, defined on the marginal polytope."""
    phi_mat = np.asarray(phi_mat, dtype=float)
    k = phi_mat.shape[1]
    beta_l2 = float(np.max(np.sum(phi_mat ** 2, axis=1)))
    is_simplex = phi_mat.shape[0] == k and np.array_equal(phi_mat, np.eye(k))

    def grad_h(mu):
        if is_simplex:
            return np.log(clamp01(_as_array(mu))) + 1.0
        return crf_moment_match(phi_mat, mu)

    def h(mu):
        v = grad_h(mu)
        return float(np.dot(v, mu)) - crf_log_partition(phi_mat, v)

    if is_simplex:
        beta, norm = 1.0, "l1"
    else:
        beta, norm = beta_l2, "l2"

    return Potential(
        h=h,
        grad_h=grad_h,
        h_star=lambda v: crf_log_partition(phi_mat, v),
        grad_h_star=lambda v: crf_marginal(phi_mat, v),
        domain=Domain("polytope", k, vertices=phi_mat),
        beta=beta, norm=norm, legendre=True, dim=k, beta_l2=beta_l2,
        name=name,
    )


def row_softmax_potential(m: int) -> Potential:
    """Sum of row entropies on the row-stochastic matrices (flattened)."""

    def h(P):
        P = clamp01(_as_array(P).reshape(m, m))
        return float(np.sum(P * np.log(P)))

    def grad_h(P):
        P = clamp01(_as_array(P).reshape(m, m))
        return (np.log(P) + 1.0).ravel()

    def h_star(V):
        return float(np.sum(logsumexp(_as_array(V).reshape(m, m), axis=1)))

    def grad_h_star(V):
        V = _as_array(V).reshape(m, m)
        W = np.exp(V - logsumexp(V, axis=1, keepdims=True))
        return (W / W.sum(axis=1, keepdims=True)).ravel()

    return Potential(h, grad_h, h_star, grad_h_star,
                     Domain("row_stochastic", m * m),
                     beta=1.0, norm="l1", legendre=True, dim=m * m,
                     beta_l2=1.0, name=f"row_softmax_{m}")


# ---------------------------------------------------------------------------
# links


@dataclass(frozen=True)
class Link:
    """Continuous injective map from the potential domain to scores."""

    forward: Callable
    inverse: Callable
    image: str
    dim_v: int

    def inverse_batch(self, V: np.ndarray) -> np.ndarray:
        return np.vstack([np.atleast_1d(self.inverse(v)) for v in V])

    def forward_batch(self, U: np.ndarray) -> np.ndarray:
        return np.vstack([np.atleast_1d(self.forward(u)) for u in U])


def identity_link(dim: int) -> Link:
    return Link(lambda u: _as_array(u).copy(), lambda v: _as_array(v).copy(),
                "full_space", dim)


def _vector_link(fwd, inv, image, dim):
    return Link(
        forward=lambda u: fwd(_as_array(u)),
        inverse=lambda v: inv(_as_array(v)),
        image=image, dim_v=dim,
    )


def logistic_link(dim: int = 1) -> Link:
    link = _vector_link(lambda q: np.log(clamp01(q)) - np.log1p(-clamp01(q)),
                        expit, "full_space", dim)
    object.__setattr__(link, "inverse_batch", lambda V: expit(np.asarray(V, dtype=float)))
    return link


def exponential_link(dim: int = 1) -> Link:
    link = _vector_link(lambda q: 0.5 * (np.log(clamp01(q)) - np.log1p(-clamp01(q))),
                        lambda v: expit(2.0 * v), "full_space", dim)
    object.__setattr__(link, "inverse_batch",
                       lambda V: expit(2.0 * np.asarray(V, dtype=float)))
    return link


def square_link(dim: int = 1) -> Link:
    link = _vector_link(lambda q: 2.0 * q - 1.0, lambda v: (v + 1.0) / 2.0,
                        "full_space", dim)
    object.__setattr__(link, "inverse_batch",
                       lambda V: (np.asarray(V, dtype=float) + 1.0) / 2.0)
    return link


def clipped_square_link(dim: int = 1) -> Link:
    # Inverse clamps to [0, 1]: the natural continuous extension for the
    # margin losses without a Bregman extension (diagnostics only).
    link = _vector_link(lambda q: 2.0 * q - 1.0,
                        lambda v: np.clip((v + 1.0) / 2.0, 0.0, 1.0),
                        "interval[-1,1]", dim)
    object.__setattr__(link, "inverse_batch",
                       lambda V: np.clip((np.asarray(V, dtype=float) + 1.0) / 2.0, 0.0, 1.0))
    return link


def product_link(base: Link, k: int) -> Link:
    link = Link(base.forward, base.inverse, base.image, k)
    object.__setattr__(link, "inverse_batch",
                       lambda V: base.inverse_batch(np.asarray(V, dtype=float)))
    return link


def isotonic_increasing(x: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    x = np.asarray(x, dtype=float)
    values = list(x[:1])
    weights = [1.0]
    for xi in x[1:]:
        values.append(float(xi))
        weights.append(1.0)
        while len(values) > 1 and values[-2] > values[-1]:
            w = weights[-2] + weights[-1]
            v = (weights[-2] * values[-2] + weights[-1] * values[-1]) / w
            values[-2:] = [v]
            weights[-2:] = [w]
    out = np.empty_like(x)
    i = 0
    for v, w in zip(values, weights):
        n = int(round(w))
        out[i:i + n] = v
        i += n
    return out


def cumulative_logit_log_probs(v: np.ndarray) -> np.ndarray:
    """Stable log label probabilities from monotone thresholds.

    The sigmoid difference factors as sigma(a) sigma(-b) expm1(b - a), which
    avoids the cancellation of 1 - sigma in the tails; each factor is
    evaluated in log space.
    """
    v = _as_array(v)
    logp = np.empty(len(v) + 1)
    logp[0] = -np.logaddexp(0.0, -v[0])
    logp[-1] = -np.logaddexp(0.0, v[-1])
    if len(v) > 1:
        a, b = v[:-1], v[1:]
        gap = np.maximum(b - a, 1e-300)
        logp[1:-1] = (-np.logaddexp(0.0, -a) - np.logaddexp(0.0, b)
                      + np.log(np.expm1(gap)))
    return logp


def cumulative_logit_link(k: int) -> Link:
    """Cumulative-link map between the k-simplex and R^(k-1): the logit of
    the cumulative probabilities.  The inverse repairs non-monotone inputs by
    isotonic projection of the cumulative values before differencing."""

    def forward(q):
        q = _as_array(q)
        F = np.cumsum(q)[:-1]
        F = clamp01(F)
        return np.log(F) - np.log1p(-F)

    def inverse(v):
        v = _as_array(v)
        if np.all(np.diff(v) >= 0):
            q = np.exp(cumulative_logit_log_probs(v))
            q = np.maximum(q, EPS_CLAMP)
            return q / q.sum()
        F = isotonic_increasing(expit(v))
        F_full = np.concatenate([[0.0], np.clip(F, 0.0, 1.0), [1.0]])
        q = np.maximum(np.diff(F_full), EPS_CLAMP)
        return q / q.sum()

    link = Link(forward, inverse, "full_space", k - 1)
    object.__setattr__(link, "inverse_batch",
                       lambda V: np.vstack([inverse(v) for v in np.asarray(V, dtype=float)]))
    return link


def crf_link(potential: Potential) -> Link:
    return Link(potential.grad_h, potential.grad_h_star, "full_space",
                potential.dim)
