"""Calibration functions: brute-force oracle, closed forms, and bounds.

The calibration function zeta(eps) is the smallest excess Bayes surrogate
risk compatible with an excess Bayes risk of at least eps.  The brute-force
oracle grids the marginal polytope and the score space, takes the masked
minimum, and polishes the best pair with feasibility-preserving line
searches.  Exact formulas and lower bounds are checked against it.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import potentials as pot
from .geometry import (adjacency_pairs, calibration_set_distance,
                       is_full_dimensional, polytope_of)
from .surrogates import SurrogateSpec, make_by_name
from .tasks import AffineDecomposition, loss_matrix

__all__ = [
    "CalibrationCurve",
    "NoiseModel",
    "GridSpec",
    "calib_brute_force",
    "brute_force_curve",
    "calib_exact_binary",
    "calib_exact_ova",
    "calib_exact_hamming",
    "calib_exact_quadratic",
    "calib_lower_bound",
    "calib_lower_at",
    "binary_zeta",
    "convex_envelope",
    "low_noise_transform",
    "risk_bound_invert",
    "quadratic_upper_check",
    "hard_margin_certificate",
    "estimate_eps0",
    "curves_to_csv",
    "curves_from_csv",
]

FEAS_SLACK = 1e-12


@dataclass
class CalibrationCurve:
    """Sampled (eps, zeta(eps)) pairs with provenance."""

    epsilons: np.ndarray
    values: np.ndarray
    method: str          # brute_force | exact | lower_bound | envelope | low_noise
    task: str = ""
    surrogate: str = ""

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        order = np.argsort(self.epsilons)
        self.epsilons = self.epsilons[order]
        self.values = self.values[order]

    def finite(self) -> "CalibrationCurve":
        mask = np.isfinite(self.values)
        return CalibrationCurve(self.epsilons[mask], self.values[mask],
                                self.method, self.task, self.surrogate)

    def validate(self, tol: float = 1e-9) -> dict:
        v = self.values[np.isfinite(self.values)]
        nonneg = bool(np.all(v >= -tol))
        monotone = bool(np.all(np.diff(v) >= -tol))
        # secant through the two smallest points should extrapolate near 0
        if len(v) >= 2 and self.epsilons[1] > self.epsilons[0]:
            slope = (v[1] - v[0]) / (self.epsilons[1] - self.epsilons[0])
            intercept = v[0] - slope * self.epsilons[0]
            zero_limit = bool(intercept <= max(1e-6, 0.5 * v[0] + tol))
        else:
            zero_limit = True
        return {"nonnegative": nonneg, "monotone": monotone,
                "zero_limit": zero_limit,
                "pass": nonneg and monotone and zero_limit}

    def interp(self, eps: float) -> float:
        """Piecewise-linear value anchored at (0, 0), extended linearly."""
        e = np.concatenate([[0.0], self.epsilons])
        v = np.concatenate([[0.0], self.values])
        if eps <= e[-1]:
            return float(np.interp(eps, e, v))
        slope = (v[-1] - v[-2]) / max(e[-1] - e[-2], 1e-300)
        return float(v[-1] + slope * (eps - e[-1]))


@dataclass(frozen=True)
class NoiseModel:
    p: float
    gamma_p: float
    hard_margin_delta: Optional[float] = None

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("noise exponent p must be nonnegative")
        if self.gamma_p <= 0:
            raise ValueError("gamma_p must be positive")


# ---------------------------------------------------------------------------
# grids


@dataclass
class GridSpec:
    """Brute-force grid resolution.

    q_resolution N grids Prob(Y) at 1/N (the default follows |Y|: 2000 for
    binary, 60 up to |Y| = 4, 24 up to |Y| = 8).  The score grid is the link
    image of the moment grid plus an inflated box probing outside t(M).
    """

    q_resolution: Optional[int] = None
    box_points: Optional[int] = None
    box_inflation: float = 3.0
    include_link_image: bool = True
    chunk_size: int = 1024
    max_moments: int = 600_000

    def resolution_for(self, n_labels: int) -> int:
        if self.q_resolution is not None:
            return self.q_resolution
        if n_labels <= 2:
            return 2000
        if n_labels <= 4:
            return 60
        if n_labels <= 8:
            return 24
        return 12

    def box_points_for(self, dim_v: int) -> int:
        if self.box_points is not None:
            return self.box_points
        return {1: 2001, 2: 41, 3: 17, 4: 11}.get(dim_v, 5)


def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of length `parts` summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def moment_grid(spec: SurrogateSpec, grid: GridSpec) -> np.ndarray:
    """Moments of gridded label distributions, in potential coordinates.

    Multilabel tasks use the equivalent product lattice (moments of product
    distributions at the same per-coordinate resolution) instead of
    enumerating the full simplex grid over 2^k labels.
    """
    n_labels = spec.task.Y.cardinality
    N = grid.resolution_for(n_labels)
    if spec.task.kind == "multilabel":
        per_coord = max(2, N // 2)
        axes = [np.linspace(-1.0, 1.0, per_coord + 1)] * spec.task.params["k"]
        U_emb = np.array(list(itertools.product(*axes)))
        return np.array([spec.from_moment(mu) for mu in U_emb])
    n_points = math.comb(N + n_labels - 1, n_labels - 1)
    if n_points > grid.max_moments:
        raise ValueError(
            f"simplex grid holds {n_points} points for |Y|={n_labels} at "
            f"1/{N}; lower q_resolution")
    comps = np.array(list(_compositions(N, n_labels)), dtype=float) / N
    Phi = spec.decomp.phi_mat
    moments = comps @ Phi
    U = np.array([spec.from_moment(mu) for mu in moments])
    return np.unique(np.round(U, 12), axis=0)


def score_grid(spec: SurrogateSpec, U: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Score-space grid: link image of (interior-clamped) moments plus an
    inflated box."""
    parts = []
    if grid.include_link_image:
        U_int = _clamp_interior(spec, U)
        parts.append(np.array([np.atleast_1d(spec.link.forward(u))
                               for u in U_int]))
    if parts:
        lo = parts[0].min(axis=0)
        hi = parts[0].max(axis=0)
    else:
        lo = -np.ones(spec.dim_v)
        hi = np.ones(spec.dim_v)
    center = (lo + hi) / 2
    half = np.maximum((hi - lo) / 2, 1.0)
    n_box = grid.box_points_for(spec.dim_v)
    axes = [np.linspace(c - grid.box_inflation * h, c + grid.box_inflation * h,
                        n_box) for c, h in zip(center, half)]
    parts.append(np.array(list(itertools.product(*axes))))
    V = np.vstack(parts)
    return np.unique(np.round(V, 12), axis=0)


def _clamp_interior(spec: SurrogateSpec, U: np.ndarray, eta: float = 1e-9):
    dom = spec.potential.domain
    if dom.kind == "interval_product":
        return np.clip(U, dom.lo + eta, dom.hi - eta)
    if dom.kind in ("simplex", "row_stochastic", "polytope"):
        # mix with the grid barycenter to stay in the relative interior
        center = U.mean(axis=0)
        return (1.0 - 1e-7) * U + 1e-7 * center
    return U


def project_moment(spec: SurrogateSpec, u: np.ndarray) -> Optional[np.ndarray]:
    """Project a potential-coordinate point onto the moment set (in potential
    coordinates).  Returns None when no projector is implemented."""
    kind = spec.task.kind
    u = np.asarray(u, dtype=float)
    if kind in ("multilabel",):
        lo, hi = _pot_cube_bounds(spec)
        return np.clip(u, lo, hi)
    if kind == "binary":
        return np.clip(u, 0.0, 1.0)
    if kind == "multiclass" or (kind == "ordinal" and spec.name == "cl") \
            or _is_simplex_coords(spec):
        return _project_simplex(u)
    if kind == "ordinal":
        # staircase moments are non-increasing coordinate vectors
        lo, hi = _pot_cube_bounds(spec)
        dec = -pot.isotonic_increasing(-u)
        return np.clip(dec, lo, hi)
    return None


def _is_simplex_coords(spec: SurrogateSpec) -> bool:
    return spec.potential.domain.kind == "simplex"


def _pot_cube_bounds(spec: SurrogateSpec):
    # potential coordinates are probabilities for margin families, signed
    # cube coordinates for the quadratic / CRF specs
    if spec.adapter_b.any():
        return 0.0, 1.0
    return -1.0, 1.0


def _project_simplex(u: np.ndarray) -> np.ndarray:
    s = np.sort(u)[::-1]
    css = np.cumsum(s) - 1.0
    idx = np.arange(1, len(u) + 1)
    cond = s - css / idx > 0
    rho = idx[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(u - theta, 0.0)


# ---------------------------------------------------------------------------
# brute force


def calib_brute_force(spec: SurrogateSpec, eps, grid: Optional[GridSpec] = None,
                      workers: int = 1, polish: bool = True,
                      return_details: bool = False):
    """Grid infimum of delta s(v, q) subject to delta ell(d(v), q) >= eps.

    `eps` may be a scalar or a list; the grid work is shared across epsilon
    values.  Returns +inf where the feasible set is empty at this
    resolution.  The reported tolerance budget is O(grid step x local
    Lipschitz constant), estimated at the minimizer.
    """
    grid = grid or GridSpec()
    eps_arr = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps_arr <= 0):
        raise ValueError("brute-force calibration needs eps > 0")

    U = moment_grid(spec, grid)
    V = score_grid(spec, U, grid)
    U_hat = spec.link.inverse_batch(V)
    scores_hat = U_hat @ spec.psi_eff.T + spec.c_eff
    z_idx = np.argmin(scores_hat, axis=1)
    dl = spec.excess_risk_matrix(U)  # n_u x |Z|

    # most central score point of each decoded cell: polish seeds (the exact
    # optima sit at cell anchors, which grid argmins often miss)
    center = U.mean(axis=0)
    central_vi = {}
    dists = np.sum((U_hat - center) ** 2, axis=1)
    for z in np.unique(z_idx):
        cols = np.nonzero(z_idx == z)[0]
        central_vi[int(z)] = int(cols[np.argmin(dists[cols])])

    n_v = len(V)
    chunk = grid.chunk_size
    starts = list(range(0, n_v, chunk))

    top_per_chunk = 4
    n_outputs = spec.decomp.psi_mat.shape[0]

    def work(start):
        sl = slice(start, min(start + chunk, n_v))
        E = spec.excess_matrix(U, V[sl])
        zc = z_idx[sl]
        feas = dl[:, zc]  # n_u x chunk of delta ell values
        out = []
        for e in eps_arr:
            masked = np.where(feas >= e - FEAS_SLACK, E, np.inf)
            flat = masked.ravel()
            t = min(top_per_chunk, flat.size)
            cand = np.argpartition(flat, t - 1)[:t]
            entries = []
            for c in cand:
                if np.isfinite(flat[c]):
                    ui, vi = np.unravel_index(int(c), masked.shape)
                    entries.append((float(flat[c]), int(ui), int(vi) + start))
            # best pair per decoded cell: polishing must reach every cell
            for z in range(n_outputs):
                cols = np.nonzero(zc == z)[0]
                if not len(cols):
                    continue
                sub = masked[:, cols]
                flat_idx = int(np.argmin(sub))
                ui, ci = np.unravel_index(flat_idx, sub.shape)
                if np.isfinite(sub[ui, ci]):
                    entries.append((float(sub[ui, ci]), int(ui),
                                    int(cols[ci]) + start))
            entries.sort()
            out.append(entries)
        return out

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunk_results = list(ex.map(work, starts))
    else:
        chunk_results = [work(s) for s in starts]

    # fixed chunk order: worker count cannot change the outcome
    candidates = [[] for _ in eps_arr]
    for res in chunk_results:
        for i, entries in enumerate(res):
            candidates[i].extend(entries)
    values = np.full(len(eps_arr), np.inf)
    argmins = [None] * len(eps_arr)
    for i in range(len(eps_arr)):
        pool = sorted(candidates[i])
        best_per_cell = {}
        for val, ui, vi in pool:
            z = int(z_idx[vi])
            if z not in best_per_cell:
                best_per_cell[z] = (val, ui, vi)
        merged = sorted(set(pool[:8]) | set(best_per_cell.values()))
        candidates[i] = merged
        if merged:
            values[i] = merged[0][0]
            argmins[i] = merged[0][1:]

    details = {"n_moments": len(U), "n_scores": n_v, "polished": polish,
               "tolerance_budget": [], "feasible": []}
    for i, e in enumerate(eps_arr):
        if not np.isfinite(values[i]):
            details["feasible"].append(False)
            details["tolerance_budget"].append(float("nan"))
            continue
        details["feasible"].append(True)
        ui, vi = argmins[i]
        u_best, v_best = U[ui].copy(), V[vi].copy()
        if polish:
            seeds = [(uj, vj) for _, uj, vj in candidates[i]]
            seeds += [(ui, vc) for vc in central_vi.values()]
            for uj, vj in seeds:
                values[i] = min(values[i],
                                _polish_pair(spec, float(e), V[vj], U[uj],
                                             int(z_idx[vj])))
        details["tolerance_budget"].append(
            _tolerance_budget(spec, U, V, u_best, v_best))

    # a feasible point for a larger eps is feasible for all smaller ones
    order = np.argsort(eps_arr)
    vals_sorted = values[order]
    vals_sorted = np.minimum.accumulate(vals_sorted[::-1])[::-1]
    values[order] = vals_sorted

    if return_details:
        return (values if np.ndim(eps) else float(values[0])), details
    return values if np.ndim(eps) else float(values[0])


def _tolerance_budget(spec, U, V, u_best, v_best) -> float:
    # local Lipschitz estimate of delta s at the reported minimizer
    try:
        g = np.linalg.norm(
            np.atleast_1d(spec.link.inverse(v_best)) - u_best)
    except Exception:
        g = 1.0
    def _step(X):
        if len(X) < 2:
            return 0.0
        d = np.diff(np.unique(np.round(X[:, 0], 12)))
        return float(d.min()) if len(d) else 0.0
    step = max(_step(V), _step(U))
    return float(step * max(g, 1e-3))


def _feasible(spec: SurrogateSpec, eps: float, v, u, zi: int) -> bool:
    """Feasibility with the decoded cell pinned to zi.

    v must stay in the (tolerance-closed) cell of zi and the moment u must
    put zi at least eps from optimal.  Pinning the cell keeps the polish
    consistent with the grid phase at exact decoding ties.
    """
    # unchecked inverse: polishing may sit outside a clipped link image
    u_hat = np.atleast_1d(spec.link.inverse(np.atleast_1d(v)))
    rv = spec.psi_eff @ u_hat + spec.c_eff
    if rv[zi] > rv.min() + 1e-9 * (1.0 + abs(float(rv.min()))):
        return False
    risks = spec.psi_eff @ u + spec.c_eff
    return float(risks[zi] - risks.min()) >= eps - FEAS_SLACK


def _line_search_feasible(spec, eps, v, u, zi, target_u=None, target_v=None,
                          iters: int = 45):
    """Largest alpha in [0, 1] along the segment keeping feasibility; returns
    the (v, u) endpoint at that alpha."""
    if target_u is not None:
        move = lambda a: (v, (1 - a) * u + a * target_u)
    else:
        move = lambda a: ((1 - a) * v + a * target_v, u)
    if _feasible(spec, eps, *move(1.0), zi):
        return move(1.0)
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = (lo + hi) / 2
        if _feasible(spec, eps, *move(mid), zi):
            lo = mid
        else:
            hi = mid
    return move(lo)


def _mu_step_exact(spec: SurrogateSpec, eps: float, v: np.ndarray, zi: int):
    """Best feasible moment for fixed scores decoding to cell zi.

    For fixed v, minimizing D_h(mu, t^{-1}(v)) under a single halfspace
    <w, mu> >= tau has the closed form mu(lambda) = grad h*(grad h(a) +
    lambda w); the multiplier is found by bisection against the
    post-projection feasibility predicate.  The feasible set
    delta ell(z_i, .) >= eps is a union of such halfspaces, so we take the
    best over them.
    """
    a_raw = np.atleast_1d(spec.link.inverse(v))
    a = _clamp_interior(spec, a_raw[None, :])[0]
    try:
        g_a = np.atleast_1d(spec.potential.grad_h(a))
    except Exception:
        return None
    best_val, best_u = np.inf, None
    psi = spec.psi_eff
    for zj in range(len(psi)):
        if zj == zi:
            continue
        w = psi[zi] - psi[zj]
        if not np.any(w):
            continue

        def mu_of(lam):
            m = np.atleast_1d(spec.potential.grad_h_star(g_a + lam * w))
            proj = project_moment(spec, m)
            return m if proj is None else proj

        lam_hi = 1.0
        while not _feasible(spec, eps, v, mu_of(lam_hi), zi) and lam_hi < 1e8:
            lam_hi *= 4.0
        if not _feasible(spec, eps, v, mu_of(lam_hi), zi):
            continue
        lo = 0.0
        for _ in range(60):
            mid = (lo + lam_hi) / 2
            if _feasible(spec, eps, v, mu_of(mid), zi):
                lam_hi = mid
            else:
                lo = mid
        cand = mu_of(lam_hi)
        val = spec.excess_from_pot(v, cand)
        if val < best_val:
            best_val, best_u = val, cand
    if best_u is None:
        return None
    return best_val, best_u


def _polish_pair(spec: SurrogateSpec, eps: float, v0, u0, zi: int,
                 rounds: int = 2) -> float:
    """Feasibility-preserving refinement from a grid pair: an exact
    constrained moment step alternating with a score line search."""
    v, u = np.atleast_1d(v0).astype(float), np.atleast_1d(u0).astype(float)
    best = spec.excess_from_pot(v, u) if _feasible(spec, eps, v, u, zi) \
        else np.inf
    for _ in range(rounds):
        try:
            stepped = _mu_step_exact(spec, eps, v, zi)
        except Exception:
            stepped = None
        if stepped is not None and stepped[0] < best:
            best, u = stepped
        elif stepped is None:
            u_tgt = project_moment(spec, np.atleast_1d(spec.link.inverse(v)))
            if u_tgt is not None:
                v, u = _line_search_feasible(spec, eps, v, u, zi,
                                             target_u=u_tgt)
                if _feasible(spec, eps, v, u, zi):
                    best = min(best, spec.excess_from_pot(v, u))
        u_int = _clamp_interior(spec, u[None, :])[0]
        v_tgt = np.atleast_1d(spec.link.forward(u_int))
        v_new, _ = _line_search_feasible(spec, eps, v, u, zi, target_v=v_tgt)
        if _feasible(spec, eps, v_new, u, zi):
            val = spec.excess_from_pot(v_new, u)
            if val < best:
                best, v = val, v_new
    return best


def brute_force_curve(spec: SurrogateSpec, epsilons: Sequence[float],
                      grid: Optional[GridSpec] = None, workers: int = 1) -> CalibrationCurve:
    values = calib_brute_force(spec, np.asarray(epsilons, dtype=float), grid,
                               workers=workers)
    return CalibrationCurve(np.asarray(epsilons, dtype=float), values,
                            "brute_force", spec.task.name, spec.name)


# ---------------------------------------------------------------------------
# exact formulas


def binary_zeta(potential: pot.Potential, eps: float, cost: float = 1.0) -> float:
    """zeta(eps) = min_{a in {-eps, +eps}} D_h((cost + a)/2, cost/2)."""
    if eps == 0:
        return 0.0
    if not 0 < eps <= min(cost, 2.0 - cost) + 1e-12:
        raise ValueError(
            f"eps must lie in (0, {min(cost, 2.0 - cost)}] for cost {cost}")
    vals = []
    for a in (-eps, eps):
        vals.append(pot.bregman(potential, np.array([(cost + a) / 2.0]),
                                np.array([cost / 2.0])))
    return float(min(vals))


calib_exact_binary = binary_zeta


def _margin_scalar_potential(margin_kind: str) -> pot.Potential:
    from .surrogates import _margin_potential
    return _margin_potential(margin_kind)


def calib_exact_ova(margin_kind: str, eps: float) -> float:
    """One-vs-all: zeta = 2 * zeta_bar(eps) (requires a margin whose scalar
    potential has nondecreasing curvature above 1/2: logistic, exponential,
    square)."""
    if margin_kind not in ("logistic", "exponential", "square"):
        raise ValueError(
            "one-vs-all exact form holds for logistic/exponential/square")
    return 2.0 * binary_zeta(_margin_scalar_potential(margin_kind), eps)


def calib_exact_hamming(margin_kind: str, eps: float, k: int) -> float:
    """Independent classifiers on the Hamming loss: zeta = k * zeta_bar(eps)."""
    if margin_kind not in ("logistic", "exponential", "square"):
        raise ValueError(
            "hamming exact form holds for logistic/exponential/square")
    if k < 1:
        raise ValueError("k >= 1")
    return k * binary_zeta(_margin_scalar_potential(margin_kind), eps)


def calib_exact_quadratic(decomp: AffineDecomposition, eps: float) -> dict:
    """Exact quadratic-surrogate calibration on a full-dimensional polytope.

    zeta(eps) = 0.5 * (min over pairs of eps/||psi(z)-psi(z')|| + delta)^2,
    valid for eps up to the loss-row separation min ||L_z - L_z'||_inf; the
    small-eps form drops the deltas and restricts to intersecting cells.
    """
    p = polytope_of(decomp)
    if p.dim_affine != p.dim_ambient:
        raise ValueError(
            f"exact quadratic calibration needs a full-dimensional marginal "
            f"polytope; {decomp.task.name} has affine dimension "
            f"{p.dim_affine} < ambient {p.dim_ambient}")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return {"value": 0.0, "valid": True, "threshold": _row_separation(decomp),
                "small_eps_value": 0.0}
    pairs = adjacency_pairs(decomp)
    dist = min(calibration_set_distance(decomp, z, eps)
               for z in decomp.task.Z.elements)
    psi = decomp.psi_mat
    max_adj = max(np.sum((psi[i] - psi[j]) ** 2) for i, j in pairs)
    threshold = _row_separation(decomp)
    return {
        "value": 0.5 * dist ** 2,
        "valid": bool(eps <= threshold + 1e-12),
        "threshold": threshold,
        "small_eps_value": eps ** 2 / (2.0 * max_adj),
    }


def _row_separation(decomp: AffineDecomposition) -> float:
    L = loss_matrix(decomp.task)
    n = L.shape[0]
    seps = [np.max(np.abs(L[i] - L[j])) for i in range(n) for j in range(i + 1, n)]
    return float(min(seps))


# ---------------------------------------------------------------------------
# lower bounds


def _dual_norms(psi_eff: np.ndarray, norm: str):
    if norm == "l1":
        return float(np.max(np.abs(psi_eff)))       # dual of l1 is l-inf
    return float(np.max(np.linalg.norm(psi_eff, axis=1)))


def calib_lower_bound(spec: SurrogateSpec, eps: float,
                      variant: str = "generic") -> float:
    """Quadratic lower bounds on the calibration function.

    generic: eps^2 / (8 c_psi^2 beta) with the potential's strong-convexity
    tag; l2_improved: eps^2 / (2 beta_2 max ||psi(z)-psi(z')||^2); crf:
    eps^2 / (8 c_psi^2 c_phi^2) with both constants enumerated.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    psi_eff = spec.psi_eff
    if variant == "generic":
        c = _dual_norms(psi_eff, spec.potential.norm)
        return eps ** 2 / (8.0 * c ** 2 * spec.potential.beta)
    if variant == "l2_improved":
        beta2 = spec.potential.beta_euclidean()
        diffs = psi_eff[:, None, :] - psi_eff[None, :, :]
        max_diff = float(np.max(np.sum(diffs ** 2, axis=2)))
        return eps ** 2 / (2.0 * beta2 * max_diff)
    if variant == "crf":
        c_psi = float(np.max(np.linalg.norm(psi_eff, axis=1)))
        c_phi = float(np.max(np.linalg.norm(spec.phi_pot, axis=1)))
        return eps ** 2 / (8.0 * c_psi ** 2 * c_phi ** 2)
    raise ValueError(f"unknown lower-bound variant {variant!r}")


def calib_lower_at(margin_kind: str, eps: float, k: int) -> float:
    """All-thresholds ordinal bound: (k-1) * zeta_bar(eps / (k-1))."""
    if k < 2:
        raise ValueError("k >= 2")
    if eps == 0:
        return 0.0
    return (k - 1) * binary_zeta(_margin_scalar_potential(margin_kind),
                                 eps / (k - 1))


# ---------------------------------------------------------------------------
# curve transforms


def convex_envelope(curve: CalibrationCurve) -> CalibrationCurve:
    """Greatest convex minorant of the sampled points (with the (0,0) anchor):
    the lower convex hull of the graph, re-sampled at the input epsilons."""
    cur = curve.finite()
    xs = np.concatenate([[0.0], cur.epsilons])
    ys = np.concatenate([[0.0], cur.values])
    hull_x, hull_y = _lower_hull(xs, ys)
    env = np.interp(curve.epsilons, hull_x, hull_y)
    env = np.where(np.isfinite(curve.values), np.minimum(env, curve.values),
                   env)
    return CalibrationCurve(curve.epsilons.copy(), env, "envelope",
                            curve.task, curve.surrogate)


def _lower_hull(xs, ys):
    points = sorted(zip(xs, ys))
    hull = []
    for x, y in points:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # pop non-left turns: lower boundary needs increasing slopes
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append((x, y))
    hx = np.array([p[0] for p in hull])
    hy = np.array([p[1] for p in hull])
    return hx, hy


def low_noise_transform(zeta_bar: Callable, noise: NoiseModel, eps: float) -> float:
    """Improved transfer under the p-noise condition:
    zeta^(p)(eps) = (gamma_p eps^p)^(1/(p+1)) zeta_bar((eps/gamma_p)^(1/(p+1)) / 2).

    p = 0 means no assumption: the bound is returned unchanged.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if noise.p == 0:
        return float(zeta_bar(eps))
    p, g = noise.p, noise.gamma_p
    scale = (g * eps ** p) ** (1.0 / (p + 1.0))
    inner = (eps / g) ** (1.0 / (p + 1.0)) / 2.0
    return float(scale * zeta_bar(inner))


def risk_bound_invert(curve: CalibrationCurve, surrogate_excess: float):
    """sup{eps : zeta_bar(eps) <= excess}, conservatively rounded up to the
    next knot so the result stays a valid upper bound on the true excess.

    Returns (eps, saturated); saturated means the excess exceeds the curve
    range and the largest sampled eps is reported.
    """
    cur = curve.finite()
    eps = np.concatenate([[0.0], cur.epsilons])
    vals = np.concatenate([[0.0], cur.values])
    if surrogate_excess < 0:
        return 0.0, False
    if surrogate_excess >= vals[-1]:
        return float(eps[-1]), True
    i = int(np.searchsorted(vals, surrogate_excess, side="right"))
    return float(eps[min(i, len(eps) - 1)]), False


def quadratic_upper_check(curve: CalibrationCurve, min_slope: float = 1.85) -> dict:
    """Fit the log-log slope on the smallest sampled epsilon decade; a
    calibrated surrogate must look at most quadratic near the origin."""
    cur = curve.finite()
    mask = (cur.epsilons <= 10.0 * cur.epsilons.min() + 1e-15) & (cur.values > 0)
    if mask.sum() < 2:
        raise ValueError("need at least two points in the smallest decade")
    slope = float(np.polyfit(np.log(cur.epsilons[mask]),
                             np.log(cur.values[mask]), 1)[0])
    return {"slope": slope, "pass": bool(slope >= min_slope)}


def hard_margin_certificate(spec: SurrogateSpec, V: np.ndarray, Q: np.ndarray,
                            delta: float, zeta_fn: Callable) -> dict:
    """Hard-margin transfer: if every sampled excess surrogate risk is below
    zeta(delta), the decoded predictions must match the Bayes predictions."""
    threshold = float(zeta_fn(delta))
    excesses = np.array([spec.excess(v, q) for v, q in zip(V, Q)])
    certified = bool(np.all(excesses < threshold))
    matches = True
    if certified:
        for v, q in zip(V, Q):
            risks = spec.decomp.psi_mat @ (spec.decomp.phi_mat.T @ q) + spec.decomp.c
            if spec.decode_index(v) != int(np.argmin(risks)):
                matches = False
                break
    return {"certified": certified, "predictions_match": certified and matches,
            "max_excess": float(excesses.max()), "threshold": threshold}


def estimate_eps0(decomp: AffineDecomposition, spec: SurrogateSpec,
                  eps_grid: Sequence[float], grid: Optional[GridSpec] = None,
                  tol: float = 5e-3) -> float:
    """Estimate the largest eps below which the small-eps quadratic formula
    agrees with the brute-force oracle (the existential threshold of the
    exact small-eps result), by scanning from below."""
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))
    brute = calib_brute_force(spec, eps_grid, grid)
    est = 0.0
    for e, b in zip(eps_grid, brute):
        formula = calib_exact_quadratic(decomp, float(e))["small_eps_value"]
        if abs(formula - b) <= tol:
            est = float(e)
        else:
            break
    return est


# ---------------------------------------------------------------------------
# CSV round trip


def curves_to_csv(curves: Sequence[CalibrationCurve]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epsilon", "value", "method", "task", "surrogate"])
    for c in curves:
        for e, v in zip(c.epsilons, c.values):
            writer.writerow([f"{e:.17g}", f"{v:.17g}", c.method, c.task,
                             c.surrogate])
    return buf.getvalue()


def curves_from_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["epsilon", "value", "method", "task", "surrogate"]:
        raise ValueError(f"unexpected curve CSV header: {header}")
    rows = {}
    for e, v, method, task, surrogate in reader:
        rows.setdefault((method, task, surrogate), []).append((float(e), float(v)))
    return [CalibrationCurve(np.array([e for e, _ in pts]),
                             np.array([v for _, v in pts]), m, t, s)
            for (m, t, s), pts in rows.items()]
