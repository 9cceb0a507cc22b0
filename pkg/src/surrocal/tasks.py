"""Finite discrete prediction tasks and their affine loss decompositions.

A task is a loss L(z, y) on a pair of finite spaces together with an affine
decomposition L(z, y) = <psi(z), phi(y)> + c.  Everything downstream (Bayes
risks, marginal polytopes, calibration functions) is driven by the two
embedding matrices, so tasks are built once and treated as immutable.

Canonical enumeration order is fixed per space kind and shared by every
consumer: tie-breaking always means "first element in enumeration order".
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OutputSpace",
    "TaskLoss",
    "AffineDecomposition",
    "build_task",
    "moment",
    "bayes_risk",
    "bayes_risk_all",
    "excess_bayes_risk",
    "oracle_prediction",
    "oracle_prediction_index",
    "check_distribution",
    "loss_matrix",
    "task_to_dict",
    "task_from_dict",
    "TASK_KINDS",
]

# Enumeration caps keep every brute-force oracle below a few seconds.
MAX_CLASSES = 12
MAX_LABELS = 12
MAX_PERM = 6
MAX_DOCS = 5
MAX_RELEVANCE = 4

TASK_KINDS = ("multiclass", "binary", "multilabel", "ordinal", "ndcg", "matching")


@dataclass(frozen=True)
class OutputSpace:
    """A finite, canonically ordered space of outputs or labels."""

    kind: str
    elements: tuple
    params: dict = field(default_factory=dict)

    @property
    def cardinality(self) -> int:
        return len(self.elements)

    def index(self, element) -> int:
        try:
            return self._index_map[element]
        except AttributeError:
            object.__setattr__(self, "_index_map",
                               {e: i for i, e in enumerate(self.elements)})
            return self._index_map[element]


@dataclass(frozen=True)
class TaskLoss:
    """A discrete loss over Z x Y with a name used in CLI configs."""

    Z: OutputSpace
    Y: OutputSpace
    eval_fn: Callable
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def eval(self, z, y) -> float:
        return float(self.eval_fn(z, y))


@dataclass(frozen=True)
class AffineDecomposition:
    """Embeddings with <psi(z), phi(y)> + c = L(z, y) exactly at desk scale."""

    psi_mat: np.ndarray  # |Z| x k_emb
    phi_mat: np.ndarray  # |Y| x k_emb
    c: float
    task: TaskLoss

    @property
    def k_emb(self) -> int:
        return self.psi_mat.shape[1]

    def psi(self, z) -> np.ndarray:
        return self.psi_mat[self.task.Z.index(z)]

    def phi(self, y) -> np.ndarray:
        return self.phi_mat[self.task.Y.index(y)]


def check_distribution(q: np.ndarray, n: int, tol: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (n,):
        raise ValueError(f"distribution must have shape ({n},), got {q.shape}")
    if np.any(q < -tol):
        raise ValueError("distribution has negative weight")
    if abs(q.sum() - 1.0) > max(tol, 1e-12 * n):
        raise ValueError(f"distribution weights sum to {q.sum()!r}, expected 1")
    return q


# ---------------------------------------------------------------------------
# space constructors


def _multiclass_space(k: int) -> OutputSpace:
    return OutputSpace("multiclass_labels", tuple(range(1, k + 1)), {"k": k})


def _binary_space() -> OutputSpace:
    return OutputSpace("binary_labels", (1, -1))


def _multilabel_space(k: int) -> OutputSpace:
    elements = tuple(itertools.product((1, -1), repeat=k))
    return OutputSpace("multilabel_vectors", elements, {"k": k})


def _ordinal_space(k: int) -> OutputSpace:
    return OutputSpace("ordinal_labels", tuple(range(1, k + 1)), {"k": k})


def _relevance_space(m: int, r_max: int) -> OutputSpace:
    elements = tuple(itertools.product(range(1, r_max + 1), repeat=m))
    return OutputSpace("relevance_scores", elements, {"m": m, "r_max": r_max})


def _permutation_space(m: int) -> OutputSpace:
    # sigma[i] is the (0-based) position assigned to item i.
    elements = tuple(itertools.permutations(range(m)))
    return OutputSpace("permutations", elements, {"m": m})


# ---------------------------------------------------------------------------
# task builders


def _build_multiclass(k: int):
    space = _multiclass_space(k)
    psi = -np.eye(k)
    phi = np.eye(k)
    task = TaskLoss(space, space, lambda z, y: 1.0 * (z != y),
                    f"multiclass01_k{k}", "multiclass", {"k": k})
    return task, AffineDecomposition(psi, phi, 1.0, task)


def _build_binary(cost: float):
    space = _binary_space()
    # Cost-sensitive embedding; cost = 1 recovers the symmetric 0-1 loss.
    psi = np.array([[0.0, cost], [2.0 - cost, 0.0]])
    phi = np.eye(2)

    def eval_fn(z, y):
        if z == y:
            return 0.0
        return cost if y == -1 else 2.0 - cost

    task = TaskLoss(space, space, eval_fn, f"binary_c{cost:g}", "binary",
                    {"cost": cost})
    return task, AffineDecomposition(psi, phi, 0.0, task)


def _build_multilabel(k: int):
    space = _multilabel_space(k)
    vertices = np.array(space.elements, dtype=float)
    psi = -vertices / (2.0 * k)
    phi = vertices.copy()

    def eval_fn(z, y):
        return sum(a != b for a, b in zip(z, y)) / k

    task = TaskLoss(space, space, eval_fn, f"hamming_k{k}", "multilabel",
                    {"k": k})
    return task, AffineDecomposition(psi, phi, 0.5, task)


def _ordinal_sign_embedding(k: int) -> np.ndarray:
    # phi_j(y) = +1 iff y > j, a monotone staircase in {-1,1}^(k-1).
    labels = np.arange(1, k + 1)[:, None]
    thresholds = np.arange(1, k)[None, :]
    return np.where(labels > thresholds, 1.0, -1.0)


def _build_ordinal(k: int):
    space = _ordinal_space(k)
    phi = _ordinal_sign_embedding(k)
    psi = -phi / 2.0
    task = TaskLoss(space, space, lambda z, y: float(abs(z - y)),
                    f"ordinal_abs_k{k}", "ordinal", {"k": k})
    return task, AffineDecomposition(psi, phi, (k - 1) / 2.0, task)


def ordinal_simplex_decomposition(k: int) -> AffineDecomposition:
    """Alternative simplex decomposition of the absolute error: psi(z) = L_z,
    phi(y) = e_y.  Used by the cumulative-link surrogate."""
    task, _ = _build_ordinal(k)
    L = loss_matrix(task)
    return AffineDecomposition(L.copy(), np.eye(k), 0.0, task)


def default_gain(r: float) -> float:
    return 2.0 ** r - 1.0


def default_discount(position: int) -> float:
    # position is 0-based: top slot gets 1 / log2(2) = 1.
    return 1.0 / math.log2(position + 2)


def _build_ndcg(m: int, r_max: int, gain=None, discount=None):
    gain = gain or default_gain
    discount = discount or default_discount
    Z = _permutation_space(m)
    Y = _relevance_space(m, r_max)
    D = np.array([discount(p) for p in range(m)])
    if np.any(np.diff(D) > 0):
        raise ValueError("discount vector must be non-increasing in position")

    gains = np.array([[gain(r) for r in rel] for rel in Y.elements])
    # N(r) pairs the sorted gains with the sorted discounts.
    normalizers = np.sort(gains, axis=1)[:, ::-1] @ np.sort(D)[::-1]
    if np.any(normalizers <= 0):
        raise ValueError("normalizer must be positive; gains must be positive")
    phi = gains / normalizers[:, None]

    psi = np.empty((len(Z.elements), m))
    for i, sigma in enumerate(Z.elements):
        psi[i] = -D[list(sigma)]

    def eval_fn(sigma, rel):
        g = np.array([gain(r) for r in rel])
        n = np.sort(g)[::-1] @ np.sort(D)[::-1]
        return 1.0 - float(g @ D[list(sigma)]) / n

    task = TaskLoss(Z, Y, eval_fn, f"ndcg_m{m}_r{r_max}", "ndcg",
                    {"m": m, "r_max": r_max})
    return task, AffineDecomposition(psi, phi, 1.0, task)


def permutation_matrix(sigma: Sequence[int]) -> np.ndarray:
    m = len(sigma)
    X = np.zeros((m, m))
    X[np.arange(m), list(sigma)] = 1.0
    return X


def _build_matching(m: int):
    space = _permutation_space(m)
    # Row-major flattening of the permutation matrices.
    mats = np.array([permutation_matrix(s).ravel() for s in space.elements])
    psi = -mats / m
    phi = mats.copy()

    def eval_fn(s1, s2):
        return sum(a != b for a, b in zip(s1, s2)) / m

    task = TaskLoss(space, space, eval_fn, f"matching_m{m}", "matching",
                    {"m": m})
    return task, AffineDecomposition(psi, phi, 1.0, task)


def build_task(kind: str, **params):
    """Build a task and its canonical affine decomposition.

    Supported kinds: multiclass(k), binary(cost), multilabel(k), ordinal(k),
    ndcg(m, r_max), matching(m).
    """
    if kind == "multiclass":
        k = int(params.pop("k"))
        _require(not params, f"unexpected params {params}")
        _require(2 <= k <= MAX_CLASSES, f"multiclass needs 2 <= k <= {MAX_CLASSES}")
        return _build_multiclass(k)
    if kind == "binary":
        cost = float(params.pop("cost", 1.0))
        _require(not params, f"unexpected params {params}")
        _require(0.0 < cost <= 1.0, "binary cost must lie in (0, 1]")
        return _build_binary(cost)
    if kind == "multilabel":
        k = int(params.pop("k"))
        _require(not params, f"unexpected params {params}")
        _require(2 <= k <= MAX_LABELS, f"multilabel needs 2 <= k <= {MAX_LABELS}")
        return _build_multilabel(k)
    if kind == "ordinal":
        k = int(params.pop("k"))
        _require(not params, f"unexpected params {params}")
        _require(2 <= k <= MAX_CLASSES, f"ordinal needs 2 <= k <= {MAX_CLASSES}")
        return _build_ordinal(k)
    if kind == "ndcg":
        m = int(params.pop("m"))
        r_max = int(params.pop("r_max"))
        gain = params.pop("gain", None)
        discount = params.pop("discount", None)
        _require(not params, f"unexpected params {params}")
        _require(2 <= m <= MAX_DOCS, f"ndcg needs 2 <= m <= {MAX_DOCS}")
        _require(2 <= r_max <= MAX_RELEVANCE, f"ndcg needs 2 <= r_max <= {MAX_RELEVANCE}")
        return _build_ndcg(m, r_max, gain, discount)
    if kind == "matching":
        m = int(params.pop("m"))
        _require(not params, f"unexpected params {params}")
        _require(2 <= m <= MAX_PERM, f"matching needs 2 <= m <= {MAX_PERM}")
        return _build_matching(m)
    raise ValueError(f"unsupported task kind {kind!r}; known kinds: {TASK_KINDS}")


def _require(cond: bool, message: str):
    if not cond:
        raise ValueError(message)


# ---------------------------------------------------------------------------
# derived quantities


def loss_matrix(task: TaskLoss) -> np.ndarray:
    L = np.empty((task.Z.cardinality, task.Y.cardinality))
    for i, z in enumerate(task.Z.elements):
        for j, y in enumerate(task.Y.elements):
            L[i, j] = task.eval_fn(z, y)
    return L


def moment(decomp: AffineDecomposition, q: np.ndarray) -> np.ndarray:
    """mu(q) = sum_y q(y) phi(y), a point of the marginal polytope."""
    q = check_distribution(q, decomp.phi_mat.shape[0])
    return decomp.phi_mat.T @ q


def bayes_risk_all(decomp: AffineDecomposition, q: np.ndarray) -> np.ndarray:
    return decomp.psi_mat @ moment(decomp, q) + decomp.c


def bayes_risk(decomp: AffineDecomposition, z, q: np.ndarray) -> float:
    return float(bayes_risk_all(decomp, q)[decomp.task.Z.index(z)])


def excess_bayes_risk(decomp: AffineDecomposition, z, q: np.ndarray) -> float:
    risks = bayes_risk_all(decomp, q)
    return float(risks[decomp.task.Z.index(z)] - risks.min())


def oracle_prediction_index(decomp: AffineDecomposition, u: np.ndarray) -> int:
    """argmin_z <psi(z), u>; ties go to the first element in canonical order."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("oracle_prediction requires a finite score vector")
    return int(np.argmin(decomp.psi_mat @ u))


def oracle_prediction(decomp: AffineDecomposition, u: np.ndarray):
    return decomp.task.Z.elements[oracle_prediction_index(decomp, u)]


def oracle_prediction_indices(decomp: AffineDecomposition, U: np.ndarray) -> np.ndarray:
    """Vectorized oracle over rows of U (n x k_emb)."""
    scores = U @ decomp.psi_mat.T
    return np.argmin(scores, axis=1)


# ---------------------------------------------------------------------------
# serialization


def task_to_dict(task: TaskLoss) -> dict:
    return {"kind": task.kind, "params": dict(task.params), "name": task.name}


def task_from_dict(d: dict):
    unknown = set(d) - {"kind", "params", "name"}
    if unknown:
        raise ValueError(f"unknown task keys: {sorted(unknown)}")
    return build_task(d["kind"], **d.get("params", {}))
