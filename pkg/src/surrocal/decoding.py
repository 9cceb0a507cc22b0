"""Decoding maps from scores to discrete outputs.

`decode_generic` is the argmin of <psi(z), t^{-1}(v)> by enumeration; each
task also has a fast decoder that must agree with the generic one exactly,
including tie-breaking (first element in canonical enumeration order).
"""

from __future__ import annotations

import itertools

import numpy as np

from .tasks import AffineDecomposition, oracle_prediction_index
from .surrogates import SurrogateSpec

__all__ = [
    "decode_generic",
    "decode_fast",
    "decode_fast_scores",
    "linear_assignment",
    "assignment_by_enumeration",
    "hungarian",
]


def decode_generic(spec: SurrogateSpec, v):
    """d_{psi,t}(v) = argmin_z <psi(z), t^{-1}(v)> by enumeration.

    Raises for scores outside the link image when the surrogate has no
    Bregman extension there.
    """
    return spec.decode(v)


def decode_fast_scores(spec: SurrogateSpec, v):
    """Fast decoder applied to surrogate scores through the inverse link."""
    u_pot = spec.invert_to_pot(v)
    return decode_fast(spec.decomp, spec.to_embedding(u_pot))


def decode_fast(decomp: AffineDecomposition, u):
    """Task-specialized decoder from an embedding-space score vector.

    multiclass: argmax; binary: cost-weighted sign; multilabel: coordinate
    signs; ordinal: best prefix sum over the staircase embeddings (equal to
    the threshold count 1 + #{u_j > 0} on monotone vectors); ndcg: argsort;
    matching: linear assignment.
    """
    task = decomp.task
    u = np.asarray(u, dtype=float)
    kind = task.kind

    if kind == "multiclass":
        return task.Z.elements[int(np.argmax(u))]
    if kind == "binary":
        cost = task.params.get("cost", 1.0)
        return 1 if cost * u[1] <= (2.0 - cost) * u[0] else -1
    if kind == "multilabel":
        return tuple(1 if x >= 0 else -1 for x in u)
    if kind == "ordinal":
        k = task.params["k"]
        if len(u) == k - 1:
            # cumulative-sign embedding: maximize the prefix sum
            # sum_{j < z} u_j (the threshold count on monotone vectors);
            # first maximizer = smallest z
            prefixes = np.concatenate([[0.0], np.cumsum(u)])
            return int(np.argmax(prefixes)) + 1
        # simplex embedding: risk increments are 2 F_z - total, so the
        # cumulative weights determine the whole risk profile
        F = np.cumsum(u)
        increments = 2.0 * F[:-1] - F[-1]
        risks = np.concatenate([[0.0], np.cumsum(increments)])
        return int(np.argmin(risks)) + 1
    if kind == "ndcg":
        return _decode_sort(u, decomp)
    if kind == "matching":
        m = task.params["m"]
        perm, _ = linear_assignment(-u.reshape(m, m))
        return tuple(perm)
    raise ValueError(f"no fast decoder for task kind {kind!r}")


def _decode_sort(u: np.ndarray, decomp: AffineDecomposition):
    """Sorting decoder for position-discount losses.

    Pairs the largest score with the largest discount.  With strictly
    decreasing discounts and distinct scores the stable argsort already gives
    the canonical (lexicographically smallest) optimum; on ties we fall back
    to linear assignment, which enforces the tie policy explicitly.
    """
    m = len(u)
    discounts = -decomp.psi_mat[decomp.task.Z.index(tuple(range(m)))]
    has_ties = (len(np.unique(u)) < m) or (len(np.unique(discounts)) < m)
    if has_ties:
        perm, _ = linear_assignment(-np.outer(u, discounts))
        return tuple(perm)
    order = np.argsort(-u, kind="stable")
    sigma = np.empty(m, dtype=int)
    sigma[order] = np.arange(m)
    return tuple(int(s) for s in sigma)


# ---------------------------------------------------------------------------
# linear assignment


def hungarian(cost: np.ndarray):
    """O(m^3) augmenting-path Hungarian algorithm (potentials form).

    Returns (assignment, total) where assignment[i] is the column matched to
    row i, minimizing the total cost.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)   # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    total = float(cost[np.arange(n), assignment].sum())
    return assignment.tolist(), total


def linear_assignment(cost: np.ndarray):
    """Minimum-cost assignment returning the lexicographically smallest
    permutation among the optima.

    The optimum value comes from the Hungarian solve; the canonical optimal
    permutation is then built greedily, fixing one row at a time to the
    smallest column that keeps the total optimal.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    m = cost.shape[0]
    _, best = hungarian(cost)
    tol = 1e-9 * (1.0 + abs(best))

    chosen = []
    free_cols = list(range(m))
    prefix = 0.0
    for i in range(m):
        for idx, col in enumerate(free_cols):
            rest_rows = np.arange(i + 1, m)
            rest_cols = [c for c in free_cols if c != col]
            if len(rest_rows):
                sub = cost[np.ix_(rest_rows, rest_cols)]
                _, sub_total = hungarian(sub)
            else:
                sub_total = 0.0
            total = prefix + cost[i, col] + sub_total
            if total <= best + tol:
                chosen.append(col)
                prefix += cost[i, col]
                free_cols.pop(idx)
                break
        else:  # pragma: no cover - optimum must be extendable
            raise RuntimeError("assignment reconstruction failed")
    return chosen, best


def assignment_by_enumeration(cost: np.ndarray):
    """Exhaustive min-cost assignment (oracle for m <= 6); first optimum in
    lexicographic order."""
    cost = np.asarray(cost, dtype=float)
    m = cost.shape[0]
    if m > 6:
        raise ValueError("enumeration oracle limited to m <= 6")
    best_perm = None
    best_val = np.inf
    for perm in itertools.permutations(range(m)):
        val = float(cost[np.arange(m), perm].sum())
        if best_perm is None or val < best_val - 1e-12 * (1.0 + abs(val)):
            best_val = val
            best_perm = perm
    return list(best_perm), best_val
