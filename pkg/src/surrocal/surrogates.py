"""Catalog of smooth convex surrogate losses with Bregman representations.

Every surrogate bundles a task decomposition, a potential, a link, and (when
the potential lives in different coordinates than the label embedding) an
affine adapter between the two.  The excess Bayes surrogate risk of each
calibrated surrogate equals D_h(mu(q), t^{-1}(v)); that identity is what the
calibration module tests against a brute-force oracle.

Coordinate conventions: margin-family potentials live in per-coordinate
probability space ([0,1]^dim), quadratic/CRF potentials live directly in the
embedding space.  `from_moment` maps an embedding-space moment vector to
potential coordinates; `to_embedding` is its affine right inverse.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

from . import potentials as pot
from .tasks import (AffineDecomposition, TaskLoss, build_task, moment,
                    ordinal_simplex_decomposition)

__all__ = [
    "SurrogateSpec",
    "make_quadratic",
    "make_crf",
    "make_rowcrf",
    "make_margin",
    "make_one_vs_all",
    "make_independent_classifiers",
    "make_at",
    "make_cl",
    "make_by_name",
    "catalog_names",
    "excess_surrogate_risk",
    "numeric_sbar_min",
    "recover_potential",
    "check_phi_calibration",
    "crf_map",
    "MARGIN_KINDS",
]

MARGIN_KINDS = ("logistic", "exponential", "square", "squared_hinge",
                "modified_huber")
CALIBRATED_MARGINS = ("logistic", "exponential", "square")


# ---------------------------------------------------------------------------
# margin building blocks Phi(u), Phi'(u)


def _phi_logistic(u):
    return np.logaddexp(0.0, -np.asarray(u, dtype=float))


def _dphi_logistic(u):
    return -expit(-np.asarray(u, dtype=float))


def _phi_exponential(u):
    return np.exp(-np.asarray(u, dtype=float))


def _dphi_exponential(u):
    return -np.exp(-np.asarray(u, dtype=float))


def _phi_square(u):
    return (1.0 - np.asarray(u, dtype=float)) ** 2


def _dphi_square(u):
    return -2.0 * (1.0 - np.asarray(u, dtype=float))


def _phi_squared_hinge(u):
    return np.maximum(1.0 - np.asarray(u, dtype=float), 0.0) ** 2


def _dphi_squared_hinge(u):
    return -2.0 * np.maximum(1.0 - np.asarray(u, dtype=float), 0.0)


def _phi_modified_huber(u):
    u = np.asarray(u, dtype=float)
    return np.where(u >= 1.0, 0.0,
                    np.where(u <= -1.0, -4.0 * u, (1.0 - u) ** 2))


def _dphi_modified_huber(u):
    u = np.asarray(u, dtype=float)
    return np.where(u >= 1.0, 0.0,
                    np.where(u <= -1.0, -4.0, -2.0 * (1.0 - u)))


_MARGIN_FUNS = {
    "logistic": (_phi_logistic, _dphi_logistic),
    "exponential": (_phi_exponential, _dphi_exponential),
    "square": (_phi_square, _dphi_square),
    "squared_hinge": (_phi_squared_hinge, _dphi_squared_hinge),
    "modified_huber": (_phi_modified_huber, _dphi_modified_huber),
}


def _margin_potential(kind: str) -> pot.Potential:
    if kind == "logistic":
        return pot.logistic_potential()
    if kind == "exponential":
        return pot.exponential_potential()
    if kind == "square":
        return pot.square_potential()
    if kind in ("squared_hinge", "modified_huber"):
        return pot.clipped_square_potential(f"square_clipped[{kind}]")
    raise ValueError(f"unknown margin kind {kind!r}")


def _margin_link(kind: str, dim: int) -> pot.Link:
    if kind == "logistic":
        return pot.logistic_link(dim)
    if kind == "exponential":
        return pot.exponential_link(dim)
    if kind == "square":
        return pot.square_link(dim)
    if kind in ("squared_hinge", "modified_huber"):
        return pot.clipped_square_link(dim)
    raise ValueError(f"unknown margin kind {kind!r}")


def _margin_sbar_min(kind: str, q):
    """min_v [q Phi(v) + (1-q) Phi(-v)], coordinate-wise closed form."""
    q = np.asarray(q, dtype=float)
    if kind == "logistic":
        qc = pot.clamp01(q)
        return -(qc * np.log(qc) + (1 - qc) * np.log1p(-qc))
    if kind == "exponential":
        return 2.0 * np.sqrt(np.clip(q * (1.0 - q), 0.0, None))
    # square, squared_hinge and modified_huber share the minimum 4q(1-q)
    return 4.0 * q * (1.0 - q)


def _squared_hinge_excess(v, q):
    """Closed-form excess Bayes surrogate risk of the squared hinge."""
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    return ((2 * q - 1 - v) ** 2
            - q * np.maximum(v - 1.0, 0.0) ** 2
            - (1 - q) * np.minimum(0.0, v + 1.0) ** 2)


def _modified_huber_excess(v, q):
    """Closed-form excess for modified Huber with T(v) = clip(v, -1, 1).

    The clipped residual term uses |v - T(v)|; this matches the loss itself
    (verified against direct minimization of the Bayes surrogate risk).
    """
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    t = np.clip(v, -1.0, 1.0)
    return (2 * q - 1 - t) ** 2 + 2.0 * np.abs(2 * q - 1 - t) * np.abs(v - t)


# ---------------------------------------------------------------------------
# the spec container


@dataclass
class SurrogateSpec:
    name: str
    task: TaskLoss
    decomp: AffineDecomposition
    potential: pot.Potential
    link: pot.Link
    dim_v: int
    phi_calibrated: bool
    legendre_type: bool
    phi_pot: np.ndarray             # |Y| x dim_pot
    adapter_A: np.ndarray           # to_embedding(u) = A u + b
    adapter_b: np.ndarray
    eval_fn: Callable               # (v, y_index) -> float
    grad_fn: Callable               # (v, y_index) -> ndarray
    excess_fn: Callable             # (v, u_pot) -> float
    excess_matrix_fn: Callable      # (U_pot, V) -> n_u x n_v
    margin_kind: Optional[str] = None

    # -- basic evaluation ---------------------------------------------------

    def eval(self, v, y) -> float:
        return float(self.eval_fn(np.asarray(v, dtype=float),
                                  self.task.Y.index(y)))

    def grad_v(self, v, y) -> np.ndarray:
        return np.atleast_1d(self.grad_fn(np.asarray(v, dtype=float),
                                          self.task.Y.index(y)))

    # -- coordinate adapters --------------------------------------------------

    def from_moment(self, mu: np.ndarray) -> np.ndarray:
        """Embedding-space moment -> potential coordinates (left inverse of
        the affine adapter on the moment span)."""
        mu = np.asarray(mu, dtype=float)
        if self._adapter_trivial():
            return mu.copy()
        return self._adapter_pinv() @ (mu - self.adapter_b)

    def _adapter_trivial(self) -> bool:
        A = self.adapter_A
        return (A.shape[0] == A.shape[1]
                and np.array_equal(A, np.eye(A.shape[0]))
                and not self.adapter_b.any())

    def _adapter_pinv(self) -> np.ndarray:
        if not hasattr(self, "_pinv_cache"):
            self._pinv_cache = np.linalg.pinv(self.adapter_A)
        return self._pinv_cache

    def to_embedding(self, u_pot: np.ndarray) -> np.ndarray:
        return self.adapter_A @ np.asarray(u_pot, dtype=float) + self.adapter_b

    def mu_pot(self, q: np.ndarray) -> np.ndarray:
        return self.from_moment(moment(self.decomp, q))

    @property
    def psi_eff(self) -> np.ndarray:
        """Output embeddings in potential coordinates: ell(z, u_pot) is
        <psi_eff(z), u_pot> + c_eff(z)."""
        return self.decomp.psi_mat @ self.adapter_A

    @property
    def c_eff(self) -> np.ndarray:
        return self.decomp.c + self.decomp.psi_mat @ self.adapter_b

    # -- Bayes surrogate risks ------------------------------------------------

    def sbar(self, v, q) -> float:
        """s(v, q) = E_{Y~q} S(v, Y), by enumeration of Y."""
        v = np.asarray(v, dtype=float)
        q = np.asarray(q, dtype=float)
        vals = np.array([self.eval_fn(v, j) for j in range(len(q))])
        return float(vals @ q)

    def excess(self, v, q) -> float:
        """Excess Bayes surrogate risk delta s(v, q) >= 0."""
        u = self.mu_pot(np.asarray(q, dtype=float))
        return float(self.excess_fn(np.asarray(v, dtype=float), u))

    def excess_from_pot(self, v, u_pot) -> float:
        return float(self.excess_fn(np.asarray(v, dtype=float),
                                    np.asarray(u_pot, dtype=float)))

    def excess_matrix(self, U_pot: np.ndarray, V: np.ndarray) -> np.ndarray:
        return self.excess_matrix_fn(np.asarray(U_pot, dtype=float),
                                     np.asarray(V, dtype=float))

    # -- decoding -------------------------------------------------------------

    def decode_index(self, v) -> int:
        u = self.invert_to_pot(v)
        scores = self.psi_eff @ u + self.c_eff
        return int(np.argmin(scores))

    def decode(self, v):
        return self.task.Z.elements[self.decode_index(v)]

    def invert_to_pot(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if not self.phi_calibrated:
            img = self.link.image
            if img.startswith("interval") and np.any(np.abs(v) > 1.0 + 1e-9):
                raise ValueError(
                    f"{self.name}: score {v} lies outside the link image {img};"
                    " this surrogate has no Bregman extension there")
        return np.atleast_1d(self.link.inverse(v))

    def decode_indices_batch(self, V: np.ndarray) -> np.ndarray:
        U = self.link.inverse_batch(np.asarray(V, dtype=float))
        scores = U @ self.psi_eff.T + self.c_eff
        return np.argmin(scores, axis=1)

    def excess_risk_matrix(self, U_pot: np.ndarray) -> np.ndarray:
        """delta ell(z, u) for all z, rows indexed by moment grid points."""
        risks = U_pot @ self.psi_eff.T + self.c_eff
        return risks - risks.min(axis=1, keepdims=True)

    def t_of_mu(self, q) -> np.ndarray:
        return np.atleast_1d(self.link.forward(self.mu_pot(q)))


# ---------------------------------------------------------------------------
# factories


def _legendre_excess_fns(potential: pot.Potential, h_batch, hstar_batch):
    """delta s(v, u) = h(u) + h*(v) - <u, v> for canonical-link losses."""

    def excess(v, u):
        return potential.h(u) + potential.h_star(v) - float(np.dot(u, v))

    def excess_matrix(U, V):
        return h_batch(U)[:, None] + hstar_batch(V)[None, :] - U @ V.T

    return excess, excess_matrix


def make_quadratic(decomp: AffineDecomposition) -> SurrogateSpec:
    """S(v, y) = 0.5 ||v - phi(y)||^2 with identity link."""
    k = decomp.k_emb
    potential = pot.quadratic_potential(k)
    phi = decomp.phi_mat

    def eval_fn(v, yj):
        d = v - phi[yj]
        return 0.5 * float(d @ d)

    def grad_fn(v, yj):
        return v - phi[yj]

    excess, excess_matrix = _legendre_excess_fns(
        potential,
        h_batch=lambda U: 0.5 * np.sum(U * U, axis=1),
        hstar_batch=lambda V: 0.5 * np.sum(V * V, axis=1),
    )
    return SurrogateSpec(
        name="quadratic", task=decomp.task, decomp=decomp, potential=potential,
        link=pot.identity_link(k), dim_v=k, phi_calibrated=True,
        legendre_type=True, phi_pot=phi.copy(),
        adapter_A=np.eye(k), adapter_b=np.zeros(k),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
    )


def make_crf(decomp: AffineDecomposition) -> SurrogateSpec:
    """CRF / maximum-entropy surrogate over the enumerated statistic:
    S(v, y) = log sum_y' exp<v, phi(y')> - <v, phi(y)>."""
    phi = decomp.phi_mat
    k = decomp.k_emb
    potential = pot.crf_potential(phi, name=f"crf[{decomp.task.name}]")
    is_simplex = phi.shape[0] == k and np.array_equal(phi, np.eye(k))

    def eval_fn(v, yj):
        return pot.crf_log_partition(phi, v) - float(v @ phi[yj])

    def grad_fn(v, yj):
        return pot.crf_marginal(phi, v) - phi[yj]

    if is_simplex:
        def h_batch(U):
            Uc = pot.clamp01(U)
            return np.sum(Uc * np.log(Uc), axis=1)
    else:
        def h_batch(U):
            return np.array([potential.h(u) for u in U])

    def hstar_batch(V):
        return logsumexp(V @ phi.T, axis=1)

    excess, excess_matrix = _legendre_excess_fns(potential, h_batch, hstar_batch)
    return SurrogateSpec(
        name="crf", task=decomp.task, decomp=decomp, potential=potential,
        link=pot.crf_link(potential), dim_v=k, phi_calibrated=True,
        legendre_type=True, phi_pot=phi.copy(),
        adapter_A=np.eye(k), adapter_b=np.zeros(k),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
    )


def make_rowcrf(decomp: AffineDecomposition) -> SurrogateSpec:
    """Independent multinomial-logistic rows for permutation matching."""
    if decomp.task.kind != "matching":
        raise ValueError("rowcrf is defined for matching tasks")
    m = decomp.task.params["m"]
    potential = pot.row_softmax_potential(m)
    phi = decomp.phi_mat
    k = m * m

    def eval_fn(v, yj):
        return potential.h_star(v) - float(v @ phi[yj])

    def grad_fn(v, yj):
        return potential.grad_h_star(v) - phi[yj]

    def h_batch(U):
        Uc = pot.clamp01(U)
        return np.sum(Uc * np.log(Uc), axis=1)

    def hstar_batch(V):
        R = V.reshape(len(V), m, m)
        return np.sum(logsumexp(R, axis=2), axis=1)

    excess, excess_matrix = _legendre_excess_fns(potential, h_batch, hstar_batch)
    return SurrogateSpec(
        name="rowcrf", task=decomp.task, decomp=decomp, potential=potential,
        link=pot.crf_link(potential), dim_v=k, phi_calibrated=True,
        legendre_type=True, phi_pot=phi.copy(),
        adapter_A=np.eye(k), adapter_b=np.zeros(k),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
    )


def _product_margin_excess_fns(kind: str, phi_fun):
    """Excess machinery shared by all decoupled margin families; potential
    coordinates are per-classifier probabilities q_j."""

    def excess(v, u):
        v = np.atleast_1d(v)
        u = np.atleast_1d(u)
        if kind == "squared_hinge":
            return float(np.sum(_squared_hinge_excess(v, u)))
        if kind == "modified_huber":
            return float(np.sum(_modified_huber_excess(v, u)))
        s = float(u @ phi_fun(v) + (1.0 - u) @ phi_fun(-v))
        return s - float(np.sum(_margin_sbar_min(kind, u)))

    def excess_matrix(U, V):
        if kind == "squared_hinge":
            return np.sum(_squared_hinge_excess(V[None, :, :], U[:, None, :]),
                          axis=2)
        if kind == "modified_huber":
            return np.sum(_modified_huber_excess(V[None, :, :], U[:, None, :]),
                          axis=2)
        s = U @ phi_fun(V).T + (1.0 - U) @ phi_fun(-V).T
        return s - np.sum(_margin_sbar_min(kind, U), axis=1, keepdims=True)

    return excess, excess_matrix


def make_margin(kind: str, cost: float = 1.0) -> SurrogateSpec:
    """Binary margin loss S(v, y) = Phi(y v) on the cost-sensitive task.

    logistic / exponential / square are phi-calibrated; squared_hinge and
    modified_huber carry the square potential on [0, 1] but admit no Bregman
    extension (kept for the non-calibration diagnostics); hinge is rejected
    because its link is not injective.
    """
    if kind == "hinge":
        raise ValueError("hinge margin rejected: link not injective")
    if kind not in _MARGIN_FUNS:
        raise ValueError(f"unknown margin kind {kind!r}; options: {MARGIN_KINDS}")
    task, decomp = build_task("binary", cost=cost)
    phi_fun, dphi_fun = _MARGIN_FUNS[kind]

    def eval_fn(v, yj):
        y = 1.0 if yj == 0 else -1.0
        return float(phi_fun(y * v[0]))

    def grad_fn(v, yj):
        y = 1.0 if yj == 0 else -1.0
        return np.array([y * float(dphi_fun(y * v[0]))])

    excess, excess_matrix = _product_margin_excess_fns(kind, phi_fun)
    return SurrogateSpec(
        name=kind, task=task, decomp=decomp,
        potential=_margin_potential(kind), link=_margin_link(kind, 1),
        dim_v=1, phi_calibrated=kind in CALIBRATED_MARGINS,
        legendre_type=(kind == "logistic"),
        phi_pot=np.array([[1.0], [0.0]]),
        adapter_A=np.array([[1.0], [-1.0]]), adapter_b=np.array([0.0, 1.0]),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
        margin_kind=kind,
    )


def make_one_vs_all(margin_kind: str, k: int) -> SurrogateSpec:
    """S(v, y) = Phi(v_y) + sum_{j != y} Phi(-v_j) for multiclass 0-1."""
    if margin_kind == "hinge":
        raise ValueError("hinge margin rejected: link not injective")
    task, decomp = build_task("multiclass", k=k)
    phi_fun, dphi_fun = _MARGIN_FUNS[margin_kind]
    base = _margin_potential(margin_kind)

    def eval_fn(v, yj):
        total = float(np.sum(phi_fun(-v)))
        return total - float(phi_fun(-v[yj])) + float(phi_fun(v[yj]))

    def grad_fn(v, yj):
        g = -np.asarray(dphi_fun(-v), dtype=float)
        g[yj] = float(dphi_fun(v[yj]))
        return g

    excess, excess_matrix = _product_margin_excess_fns(margin_kind, phi_fun)
    return SurrogateSpec(
        name=f"ova:{margin_kind}", task=task, decomp=decomp,
        potential=pot.product_potential(base, k, f"ova_{margin_kind}_{k}"),
        link=pot.product_link(_margin_link(margin_kind, k), k),
        dim_v=k, phi_calibrated=margin_kind in CALIBRATED_MARGINS,
        legendre_type=(margin_kind == "logistic"),
        phi_pot=np.eye(k),
        adapter_A=np.eye(k), adapter_b=np.zeros(k),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
        margin_kind=margin_kind,
    )


def _signed_margin_spec(name, task, decomp, margin_kind, dim) -> SurrogateSpec:
    """Shared construction for independent classifiers over a +/-1 embedding
    (multilabel Hamming and ordinal all-thresholds)."""
    phi_fun, dphi_fun = _MARGIN_FUNS[margin_kind]
    base = _margin_potential(margin_kind)
    signs = decomp.phi_mat  # |Y| x dim in {-1, +1}

    def eval_fn(v, yj):
        return float(np.sum(phi_fun(signs[yj] * v)))

    def grad_fn(v, yj):
        return signs[yj] * np.asarray(dphi_fun(signs[yj] * v), dtype=float)

    excess, excess_matrix = _product_margin_excess_fns(margin_kind, phi_fun)
    return SurrogateSpec(
        name=name, task=task, decomp=decomp,
        potential=pot.product_potential(base, dim, f"{name}_{dim}"),
        link=pot.product_link(_margin_link(margin_kind, dim), dim),
        dim_v=dim, phi_calibrated=margin_kind in CALIBRATED_MARGINS,
        legendre_type=(margin_kind == "logistic"),
        phi_pot=(signs + 1.0) / 2.0,
        adapter_A=2.0 * np.eye(dim), adapter_b=-np.ones(dim),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
        margin_kind=margin_kind,
    )


def make_independent_classifiers(margin_kind: str, k: int) -> SurrogateSpec:
    """S(v, y) = sum_j Phi(y_j v_j) for the Hamming loss."""
    if margin_kind == "hinge":
        raise ValueError("hinge margin rejected: link not injective")
    task, decomp = build_task("multilabel", k=k)
    return _signed_margin_spec(f"indep:{margin_kind}", task, decomp,
                               margin_kind, k)


def make_at(margin_kind: str, k: int) -> SurrogateSpec:
    """All-thresholds ordinal surrogate over the cumulative-sign embedding."""
    if margin_kind == "hinge":
        raise ValueError("hinge margin rejected: link not injective")
    task, decomp = build_task("ordinal", k=k)
    return _signed_margin_spec(f"at:{margin_kind}", task, decomp,
                               margin_kind, k - 1)


def make_cl(k: int) -> SurrogateSpec:
    """Cumulative-link ordinal surrogate with the logistic link.

    Scores are thresholds v in R^(k-1); the inverse link differences the
    sigmoids of the thresholds (with isotonic repair off the monotone cone)
    to produce a label distribution, and the loss is its log-loss.
    """
    decomp = ordinal_simplex_decomposition(k)
    task = decomp.task
    link = pot.cumulative_logit_link(k)
    potential = pot.simplex_entropy_potential(k)

    def eval_fn(v, yj):
        v = np.atleast_1d(v)
        if np.all(np.diff(v) >= 0):
            return -float(pot.cumulative_logit_log_probs(v)[yj])
        return -float(np.log(link.inverse(v)[yj]))

    def grad_fn(v, yj):
        # valid on the monotone cone, where no repair is active
        F = expit(v)
        F_full = np.concatenate([[0.0], F, [1.0]])
        p = max(F_full[yj + 1] - F_full[yj], pot.EPS_CLAMP)
        g = np.zeros(k - 1)
        if yj <= k - 2:
            g[yj] = -F[yj] * (1 - F[yj]) / p
        if yj >= 1:
            g[yj - 1] = F[yj - 1] * (1 - F[yj - 1]) / p
        return g

    def excess(v, u):
        q = pot.clamp01(np.asarray(u, dtype=float))
        p = link.inverse(np.atleast_1d(v))
        return float(np.sum(q * (np.log(q) - np.log(p))))

    def excess_matrix(U, V):
        logP = np.log(link.inverse_batch(V))
        Uc = pot.clamp01(U)
        return np.sum(Uc * np.log(Uc), axis=1)[:, None] - Uc @ logP.T

    return SurrogateSpec(
        name="cl", task=task, decomp=decomp, potential=potential, link=link,
        dim_v=k - 1, phi_calibrated=True, legendre_type=False,
        phi_pot=np.eye(k),
        adapter_A=np.eye(k), adapter_b=np.zeros(k),
        eval_fn=eval_fn, grad_fn=grad_fn,
        excess_fn=excess, excess_matrix_fn=excess_matrix,
    )


# ---------------------------------------------------------------------------
# catalog


def catalog_names() -> list:
    names = ["quadratic", "crf", "rowcrf", "cl"]
    names += list(MARGIN_KINDS)
    names += [f"ova:{m}" for m in MARGIN_KINDS]
    names += [f"indep:{m}" for m in MARGIN_KINDS]
    names += [f"at:{m}" for m in MARGIN_KINDS]
    return names


def make_by_name(name: str, decomp: AffineDecomposition) -> SurrogateSpec:
    """Build a surrogate from its catalog name, attached to a task."""
    kind = decomp.task.kind
    if name == "quadratic":
        return make_quadratic(decomp)
    if name == "crf":
        return make_crf(decomp)
    if name == "rowcrf":
        return make_rowcrf(decomp)
    if name == "cl":
        if kind != "ordinal":
            raise ValueError("cl requires an ordinal task")
        return make_cl(decomp.task.params["k"])
    if name in MARGIN_KINDS or name == "hinge":
        if kind != "binary":
            raise ValueError(f"{name} requires a binary task")
        return make_margin(name, cost=decomp.task.params.get("cost", 1.0))
    if ":" in name:
        family, margin = name.split(":", 1)
        if family == "ova":
            if kind != "multiclass":
                raise ValueError("ova requires a multiclass task")
            return make_one_vs_all(margin, decomp.task.params["k"])
        if family == "indep":
            if kind != "multilabel":
                raise ValueError("indep requires a multilabel task")
            return make_independent_classifiers(margin, decomp.task.params["k"])
        if family == "at":
            if kind != "ordinal":
                raise ValueError("at requires an ordinal task")
            return make_at(margin, decomp.task.params["k"])
    raise ValueError(f"unknown surrogate {name!r}; catalog: {catalog_names()}")


# ---------------------------------------------------------------------------
# generic operations


def excess_surrogate_risk(spec: SurrogateSpec, v, q) -> float:
    """delta s(v, q); closed form for calibrated losses, otherwise the
    family's verified excess formula."""
    return spec.excess(v, q)


def numeric_sbar_min(spec: SurrogateSpec, q, v0=None, tol: float = 1e-10,
                     max_iter: int = 5000) -> float:
    """Minimize s(., q) by backtracking gradient descent (Armijo c = 1e-4).

    Independent of the Bregman machinery; used to validate minimizer
    properties and the closed-form excess expressions.
    """
    q = np.asarray(q, dtype=float)

    def value(v):
        return spec.sbar(v, q)

    def grad(v):
        g = np.zeros(spec.dim_v)
        for j, qj in enumerate(q):
            if qj > 0:
                g += qj * spec.grad_fn(v, j)
        return g

    v = np.zeros(spec.dim_v) if v0 is None else np.asarray(v0, dtype=float)
    f = value(v)
    step = 1.0
    for _ in range(max_iter):
        g = grad(v)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        alpha = step
        while alpha > 1e-16:
            v_new = v - alpha * g
            f_new = value(v_new)
            if f_new <= f - 1e-4 * alpha * gn * gn:
                v, f = v_new, f_new
                step = min(alpha * 2.0, 1e6)
                break
            alpha /= 2.0
        else:
            break
    return f


def recover_potential(spec: SurrogateSpec, v0, qs) -> dict:
    """Recover h up to an affine term via h(mu(q)) = delta s(v0, q).

    Returns the recovered values, the potential's own values on the same
    moments, and the residual after removing the best affine offset.
    """
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    u0 = spec.invert_to_pot(v0)  # raises if v0 is outside the link image
    del u0
    us = np.array([spec.mu_pot(q) for q in qs])
    recovered = np.array([spec.excess(v0, q) for q in qs])
    reference = np.array([spec.potential.h(u) for u in us])
    design = np.hstack([np.ones((len(us), 1)), us])
    coef, *_ = np.linalg.lstsq(design, recovered - reference, rcond=None)
    residual = recovered - reference - design @ coef
    return {
        "moments": us,
        "recovered": recovered,
        "reference": reference,
        "affine_coef": coef,
        "max_residual": float(np.max(np.abs(residual))),
    }


def _sample_score_box(spec: SurrogateSpec, rng, n: int,
                      inflation: float = 3.0) -> np.ndarray:
    """Sample v across V: an inflated box around the link image of mildly
    interior moments."""
    qs = rng.dirichlet(np.ones(spec.task.Y.cardinality), size=64)
    images = np.array([spec.t_of_mu(q) for q in qs])
    lo = images.min(axis=0)
    hi = images.max(axis=0)
    center = (lo + hi) / 2
    half = np.maximum((hi - lo) / 2, 1.0)
    return center + (rng.uniform(-1.0, 1.0, size=(n, spec.dim_v))
                     * inflation * half)


def check_phi_calibration(spec: SurrogateSpec, n_samples: int = 1000,
                          tol: float = 1e-6, seed: int = 0) -> dict:
    """Compare delta s(v, q) against D_h(mu(q), t^{-1}(v)) across V.

    delta s comes from the family's excess formula (validated separately
    against direct minimization); the Bregman side is evaluated through the
    stored potential and link.  A calibrated surrogate must agree everywhere,
    including outside the link image of the marginal polytope.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    V = _sample_score_box(spec, rng, n_samples)
    Q = rng.dirichlet(np.ones(spec.task.Y.cardinality), size=n_samples)
    max_residual = -1.0
    witness = None
    for v, q in zip(V, Q):
        u = spec.mu_pot(q)
        ds = spec.excess_from_pot(v, u)
        u_hat = np.atleast_1d(spec.link.inverse(v))
        try:
            bd = pot.bregman(spec.potential, u, u_hat, margin=1e-13)
        except pot.BoundaryError:
            bd = np.inf
        residual = abs(ds - bd)
        if residual > max_residual:
            max_residual = residual
            witness = {"v": v.copy(), "q": q.copy(), "delta_s": ds,
                       "bregman": bd, "residual": residual}
    return {"pass": bool(max_residual <= tol), "max_residual": max_residual,
            "witness": witness}


def crf_map(decomp: AffineDecomposition, v):
    """MAP assignment argmax_y <phi(y), v>, ties broken canonically."""
    scores = decomp.phi_mat @ np.asarray(v, dtype=float)
    return decomp.task.Y.elements[int(np.argmax(scores))]
