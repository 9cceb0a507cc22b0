"""Surrogate-risk minimization: projected averaged SGD in an RKHS and
closed-form kernel ridge regression, on seeded synthetic tasks whose Bayes
predictor is known exactly.

ASGD iterates g_i = Pi_D(g_{i-1} - eta grad S(g_{i-1}(x_i), y_i) (x) k(x_i, .))
live in the span of the seen inputs; coefficients, their running average and
the RKHS norm are maintained incrementally, so a run costs O(n^2) kernel
evaluations and O(n) memory.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .surrogates import SurrogateSpec
from .tasks import AffineDecomposition, TaskLoss, loss_matrix

__all__ = [
    "KernelSpec",
    "median_heuristic",
    "FunctionEstimate",
    "SyntheticTask",
    "make_synthetic",
    "asgd_train",
    "KRRModel",
    "krr_train",
    "krr_predict",
    "krr_predict_paths",
    "evaluate_risks",
    "rkhs_norm_of_bayes",
    "default_radius",
    "dataset_to_csv",
    "dataset_from_csv",
]


@dataclass(frozen=True)
class KernelSpec:
    """Positive-definite kernel with a sup-norm bound kappa >= sup sqrt(k(x,x))."""

    kind: str = "gaussian"   # gaussian | linear
    bandwidth: float = 1.0
    kappa: float = 1.0

    def gram(self, X: np.ndarray, Y: Optional[np.ndarray] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        Y = X if Y is None else np.atleast_2d(Y)
        if self.kind == "gaussian":
            d2 = (np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :]
                  - 2.0 * X @ Y.T)
            return np.exp(-np.maximum(d2, 0.0) / (2.0 * self.bandwidth ** 2))
        if self.kind == "linear":
            return X @ Y.T
        raise ValueError(f"unknown kernel kind {self.kind!r}")

    def diag(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "gaussian":
            return np.ones(len(X))
        return np.sum(X * X, axis=1)


def median_heuristic(X: np.ndarray, cap: int = 256) -> float:
    """Median pairwise distance on a pilot subsample."""
    X = np.atleast_2d(X)[:cap]
    d2 = (np.sum(X * X, axis=1)[:, None] + np.sum(X * X, axis=1)[None, :]
          - 2.0 * X @ X.T)
    d = np.sqrt(np.maximum(d2[np.triu_indices(len(X), k=1)], 0.0))
    med = float(np.median(d)) if len(d) else 1.0
    return med if med > 0 else 1.0


@dataclass
class FunctionEstimate:
    """Vector-valued RKHS function g(x) = sum_i coeffs_i k(x_i, x)."""

    anchors: np.ndarray            # n x d
    coeffs: np.ndarray             # n x dim_v
    kernel: KernelSpec
    rkhs_norm_sq: Optional[float] = None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if len(self.anchors) == 0:
            return np.zeros((len(np.atleast_2d(X)), self.coeffs.shape[1]))
        K = self.kernel.gram(np.atleast_2d(X), self.anchors)
        return K @ self.coeffs

    def norm_sq(self, chunk: int = 2048) -> float:
        """sum_j coeffs_j^T K coeffs_j, computed in anchor chunks."""
        n = len(self.anchors)
        total = 0.0
        for s in range(0, n, chunk):
            K_block = self.kernel.gram(self.anchors[s:s + chunk], self.anchors)
            total += float(np.sum((K_block @ self.coeffs)
                                  * self.coeffs[s:s + chunk]))
        if self.rkhs_norm_sq is None:
            self.rkhs_norm_sq = total
        return total


# ---------------------------------------------------------------------------
# synthetic tasks with known conditionals


@dataclass
class SyntheticTask:
    """Input sampler plus an exact conditional distribution over labels."""

    task: TaskLoss
    decomp: AffineDecomposition
    dim_x: int
    seed: int
    family: str
    conditional_batch: Callable       # (n x d) -> (n x |Y|)
    logit_anchors: Optional[np.ndarray] = None
    logit_coeffs: Optional[np.ndarray] = None
    logit_kernel: Optional[KernelSpec] = None

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.seed, stream)))

    def sample_x(self, n: int, stream: int = 0) -> np.ndarray:
        return self.rng(stream).uniform(-1.0, 1.0, size=(n, self.dim_x))

    def conditional(self, x: np.ndarray) -> np.ndarray:
        return self.conditional_batch(np.atleast_2d(x))[0]

    def mu_star(self, x: np.ndarray) -> np.ndarray:
        return self.decomp.phi_mat.T @ self.conditional(x)

    def f_star_index(self, x: np.ndarray) -> int:
        risks = self.decomp.psi_mat @ self.mu_star(x) + self.decomp.c
        return int(np.argmin(risks))

    def sample(self, n: int, stream: int = 1):
        """Dataset (X, y_indices) drawn from the synthetic distribution."""
        rng = self.rng(stream)
        X = rng.uniform(-1.0, 1.0, size=(n, self.dim_x))
        Q = self.conditional_batch(X)
        cum = np.cumsum(Q, axis=1)
        r = rng.random(n)
        y_idx = np.sum(cum < r[:, None], axis=1)
        return X, np.minimum(y_idx, Q.shape[1] - 1)

    def margin(self, x: np.ndarray) -> float:
        """gamma(x) = min_{z != f*(x)} delta ell(z, rho(.|x))."""
        risks = self.decomp.psi_mat @ self.mu_star(x) + self.decomp.c
        order = np.sort(risks)
        return float(order[1] - order[0])


def make_synthetic(decomp: AffineDecomposition, family: str, d: int, seed: int,
                   kernel: Optional[KernelSpec] = None, n_anchors: int = 24,
                   amplitude: float = 1.5, hard_margin_delta: float = 0.4,
                   mixture_width: float = 0.8) -> SyntheticTask:
    """Synthetic joint distributions with exactly known conditionals.

    smooth_logit: label logits are finite kernel expansions (so the Bayes
    scores of canonical-link surrogates sit inside the training RKHS);
    hard_margin(delta): smooth_logit conditionals mixed toward the Bayes
    vertex until every margin is at least delta; mixture: softmax of
    negative squared distances to per-label centers.
    """
    task = decomp.task
    n_labels = task.Y.cardinality
    rng = np.random.Generator(np.random.Philox(key=(seed, 987)))
    kernel = kernel or KernelSpec("gaussian", bandwidth=np.sqrt(d))

    if family in ("smooth_logit", "hard_margin"):
        anchors = rng.uniform(-1.0, 1.0, size=(n_anchors, d))
        coeffs = rng.normal(size=(n_anchors, n_labels))
        coeffs *= amplitude / max(np.abs(coeffs).sum(axis=0).max(), 1e-12)

        def logits(X):
            return kernel.gram(np.atleast_2d(X), anchors) @ coeffs

        def smooth_conditional(X):
            L = logits(X)
            L = L - L.max(axis=1, keepdims=True)
            Q = np.exp(L)
            return Q / Q.sum(axis=1, keepdims=True)

        if family == "smooth_logit":
            return SyntheticTask(task, decomp, d, seed, family,
                                 smooth_conditional, anchors, coeffs, kernel)

        if task.Z.elements != task.Y.elements:
            raise ValueError("hard_margin needs matching output/label spaces")
        psi, c = decomp.psi_mat, decomp.c
        Phi = decomp.phi_mat

        def hard_conditional(X):
            Q = smooth_conditional(X)
            out = np.empty_like(Q)
            for i, q in enumerate(Q):
                out[i] = _push_margin(q, psi, Phi, c, hard_margin_delta)
            return out

        return SyntheticTask(task, decomp, d, seed, family, hard_conditional,
                             anchors, coeffs, kernel)

    if family == "mixture":
        centers = rng.uniform(-1.0, 1.0, size=(n_labels, d))

        def mixture_conditional(X):
            X = np.atleast_2d(X)
            d2 = (np.sum(X * X, axis=1)[:, None]
                  + np.sum(centers * centers, axis=1)[None, :]
                  - 2.0 * X @ centers.T)
            L = -d2 / (2.0 * mixture_width ** 2)
            L -= L.max(axis=1, keepdims=True)
            Q = np.exp(L)
            return Q / Q.sum(axis=1, keepdims=True)

        return SyntheticTask(task, decomp, d, seed, family, mixture_conditional)

    raise ValueError(f"unknown synthetic family {family!r}")


def _push_margin(q, psi, Phi, c, delta):
    """Mix q toward the point mass at its Bayes label until the margin
    clears delta (bisection; exact for losses where mixing preserves the
    optimum)."""
    def margin_of(qq):
        risks = psi @ (Phi.T @ qq) + c
        srt = np.sort(risks)
        return srt[1] - srt[0]

    if margin_of(q) >= delta:
        return q
    risks = psi @ (Phi.T @ q) + c
    zi = int(np.argmin(risks))
    # point mass on the label matching the optimal output (Z = Y tasks share
    # one enumeration, so the indices line up)
    target = np.zeros_like(q)
    target[zi] = 1.0
    if margin_of(target) < delta:
        raise ValueError(
            f"requested margin {delta} exceeds the vertex margin "
            f"{margin_of(target):.4g} of this loss")
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if margin_of((1 - mid) * q + mid * target) >= delta:
            hi = mid
        else:
            lo = mid
    return (1 - hi) * q + hi * target


# ---------------------------------------------------------------------------
# ASGD


def asgd_train(spec: SurrogateSpec, X: np.ndarray, y_idx: np.ndarray,
               kernel: KernelSpec, D: float, n: Optional[int] = None,
               record_trace: bool = False):
    """Projected averaged stochastic gradient descent on a Legendre-type
    surrogate over the vector-valued RKHS induced by `kernel`.

    Uses the constant step 2 / (beta kappa^2 C^2 sqrt(n)) with
    C^2 = 1 + sup_y ||phi(y) - grad h*(0)|| / (kappa beta D); each iterate
    appends one anchor and the ball projection rescales all coefficients.
    Returns (estimate, diagnostics).
    """
    if not spec.legendre_type:
        raise ValueError(
            f"ASGD requires a Legendre-type surrogate (grad S = grad h*(v) - "
            f"phi(y)); {spec.name} is not")
    if D <= 0:
        raise ValueError("projection radius D must be positive")
    X = np.atleast_2d(X)
    n = len(X) if n is None else n
    if n < 1 or len(X) < n:
        raise ValueError("need n >= 1 samples")

    beta = spec.potential.beta_euclidean()
    kappa = kernel.kappa
    phi_pot = spec.phi_pot
    origin_moment = np.atleast_1d(spec.potential.grad_h_star(np.zeros(spec.dim_v)))
    c_phi_h = float(np.max(np.linalg.norm(phi_pot - origin_moment, axis=1)))
    C2 = 1.0 + c_phi_h / (kappa * beta * D)
    C = np.sqrt(C2)
    eta = 2.0 / (beta * kappa ** 2 * C2 * np.sqrt(n))
    grad_cap = kappa * (kappa * beta * D + c_phi_h)

    dim_v = spec.dim_v
    A = np.zeros((n, dim_v))        # current iterate coefficients
    S = np.zeros((n, dim_v))        # running sum of iterates
    diag_k = kernel.diag(X[:n])
    norm_sq = 0.0
    n_proj = 0
    max_grad = 0.0
    loss_sum = 0.0
    trace = []

    grad_h_star = spec.potential.grad_h_star
    for i in range(n):
        x = X[i:i + 1]
        if i > 0:
            k_vec = kernel.gram(x, X[:i])[0]
            g_x = A[:i].T @ k_vec
        else:
            g_x = np.zeros(dim_v)
        mu_hat = np.atleast_1d(grad_h_star(g_x))
        grad = mu_hat - phi_pot[y_idx[i]]
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite surrogate gradient at "
                                     f"iteration {i}")
        gnorm_G = np.sqrt(diag_k[i]) * float(np.linalg.norm(grad))
        max_grad = max(max_grad, gnorm_G)
        if record_trace:
            loss_sum += spec.eval_fn(g_x, int(y_idx[i]))

        # g_i = g_{i-1} + delta with delta = -eta grad (x) k(x_i, .)
        delta = -eta * grad
        norm_sq += (2.0 * float(g_x @ delta)
                    + diag_k[i] * float(delta @ delta))
        A[i] = delta
        if norm_sq > D * D:
            scale = D / np.sqrt(norm_sq)
            A[:i + 1] *= scale
            norm_sq = D * D
            n_proj += 1
        S[:i + 1] += A[:i + 1]
        if record_trace:
            trace.append((i + 1, loss_sum / (i + 1), float(np.sqrt(max(norm_sq, 0.0)))))

    estimate = FunctionEstimate(X[:n].copy(), S / n, kernel)
    diagnostics = {
        "eta": eta, "C": C, "beta": beta, "kappa": kappa,
        "grad_cap": grad_cap, "max_grad_norm": max_grad,
        "cap_violated": bool(max_grad > grad_cap + 1e-9),
        "n_projections": n_proj, "trace": trace,
    }
    return estimate, diagnostics


def eq15_bound(spec: SurrogateSpec, kernel: KernelSpec, D: float, C: float,
               n: int) -> float:
    """True-excess-risk bound 4 kappa c_psi beta D C / n^(1/4)."""
    c_psi = float(np.max(np.linalg.norm(spec.psi_eff, axis=1)))
    beta = spec.potential.beta_euclidean()
    return 4.0 * kernel.kappa * c_psi * beta * D * C / n ** 0.25


# ---------------------------------------------------------------------------
# kernel ridge regression


@dataclass
class KRRModel:
    X: np.ndarray
    y_idx: np.ndarray
    kernel: KernelSpec
    lam: float
    _factor: tuple = field(repr=False, default=None)

    def alpha(self, x: np.ndarray) -> np.ndarray:
        """(K + n lambda I)^{-1} K_x for a single query point."""
        return self.alpha_batch(np.atleast_2d(x))[:, 0]

    def alpha_batch(self, Xq: np.ndarray) -> np.ndarray:
        K_x = self.kernel.gram(self.X, np.atleast_2d(Xq))
        return cho_solve(self._factor, K_x)


def krr_train(X: np.ndarray, y_idx: np.ndarray, kernel: KernelSpec,
              lam: float) -> KRRModel:
    """Factor K + n lambda I once; alpha(x) is then a cheap solve per query."""
    if lam <= 0:
        raise ValueError("ridge parameter must be positive")
    X = np.atleast_2d(X)
    n = len(X)
    if n < 1:
        raise ValueError("need at least one training point")
    K = kernel.gram(X)
    M = K + n * lam * np.eye(n)
    cond = float(np.linalg.cond(M))
    if cond > 1e12:
        warnings.warn(f"kernel system condition estimate {cond:.2e} exceeds 1e12")
    try:
        factor = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise np.linalg.LinAlgError(f"singular kernel system: {exc}")
    return KRRModel(X, np.asarray(y_idx, dtype=int), kernel, lam, factor)


def krr_predict_paths(decomp: AffineDecomposition, model: KRRModel,
                      x: np.ndarray):
    """Output scores along both prediction paths.

    Path A weighs loss-matrix rows by alpha; path B decodes the weighted
    label embedding.  The affine decomposition makes them identical up to
    float accumulation order.
    """
    a = model.alpha(x)
    L = loss_matrix(decomp.task)
    scores_a = L[:, model.y_idx] @ a
    mu_hat = decomp.phi_mat[model.y_idx].T @ a
    scores_b = decomp.psi_mat @ mu_hat + decomp.c * float(a.sum())
    return scores_a, scores_b


def krr_predict(decomp: AffineDecomposition, model: KRRModel, x: np.ndarray):
    """argmin_z sum_i alpha_i(x) L(z, y_i), ties canonical."""
    scores_a, _ = krr_predict_paths(decomp, model, x)
    return decomp.task.Z.elements[int(np.argmin(scores_a))]


# ---------------------------------------------------------------------------
# risk evaluation


def evaluate_risks(spec: SurrogateSpec, estimate, synthetic: SyntheticTask,
                   n_eval: int = 2000, stream: int = 7, workers: int = 1) -> dict:
    """Monte-Carlo excess risks against the known conditionals.

    The expectation over labels is exact (the conditional is known); only
    the input distribution is sampled.  Reduction order is fixed by chunk
    index, so the worker count cannot change the result.
    """
    X = synthetic.sample_x(n_eval, stream=stream)
    Q = synthetic.conditional_batch(X)
    V = estimate(X) if callable(estimate) else np.atleast_2d(estimate)
    psi, c = synthetic.decomp.psi_mat, synthetic.decomp.c
    Phi = synthetic.decomp.phi_mat

    chunk = 256
    starts = list(range(0, n_eval, chunk))

    def work(s):
        sl = slice(s, min(s + chunk, n_eval))
        te, se = [], []
        for v, q in zip(V[sl], Q[sl]):
            risks = psi @ (Phi.T @ q) + c
            zi = spec.decode_index(v)
            te.append(float(risks[zi] - risks.min()))
            se.append(spec.excess(v, q))
        return np.array(te), np.array(se)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    true_ex = np.concatenate([p[0] for p in parts])
    sur_ex = np.concatenate([p[1] for p in parts])
    return {
        "true_excess": float(true_ex.mean()),
        "true_excess_se": float(true_ex.std(ddof=1) / np.sqrt(n_eval)),
        "surrogate_excess": float(sur_ex.mean()),
        "surrogate_excess_se": float(sur_ex.std(ddof=1) / np.sqrt(n_eval)),
        "n_eval": n_eval,
    }


def rkhs_norm_of_bayes(spec: SurrogateSpec, synthetic: SyntheticTask,
                       kernel: KernelSpec, n_pilot: int = 256,
                       stream: int = 3, lam: float = 1e-6) -> float:
    """||g*||_G estimated by ridge regression onto exact Bayes scores.

    For canonical-link surrogates on smooth_logit tasks the exact expansion
    is available and is used directly.
    """
    if (synthetic.logit_coeffs is not None and spec.name == "crf"
            and synthetic.logit_kernel == kernel
            and spec.task.kind == "multiclass"):
        K = kernel.gram(synthetic.logit_anchors)
        Cf = synthetic.logit_coeffs
        return float(np.sqrt(np.sum((K @ Cf) * Cf)))
    X = synthetic.sample_x(n_pilot, stream=stream)
    targets = np.array([spec.t_of_mu(q)
                        for q in synthetic.conditional_batch(X)])
    K = kernel.gram(X)
    coef = np.linalg.solve(K + n_pilot * lam * np.eye(n_pilot), targets)
    return float(np.sqrt(np.sum((K @ coef) * coef)))


def default_radius(spec: SurrogateSpec, synthetic: SyntheticTask,
                   kernel: KernelSpec) -> float:
    """1.5 x the estimated RKHS norm of the Bayes scores."""
    return 1.5 * rkhs_norm_of_bayes(spec, synthetic, kernel)


# ---------------------------------------------------------------------------
# dataset CSV round trip


def _encode_label(task: TaskLoss, y) -> list:
    if task.kind in ("multiclass", "ordinal", "binary"):
        return [y]
    return list(y)


def _label_width(task: TaskLoss) -> int:
    if task.kind in ("multiclass", "ordinal", "binary"):
        return 1
    if task.kind in ("multilabel",):
        return task.params["k"]
    return task.params["m"]


def dataset_to_csv(task: TaskLoss, X: np.ndarray, y_idx: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = X.shape[1]
    width = _label_width(task)
    writer.writerow([f"x{j + 1}" for j in range(d)]
                    + [f"y{j + 1}" for j in range(width)])
    for x, yi in zip(X, y_idx):
        y = task.Y.elements[int(yi)]
        writer.writerow([f"{v:.17g}" for v in x] + _encode_label(task, y))
    return buf.getvalue()


def dataset_from_csv(task: TaskLoss, text: str):
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    d = sum(1 for h in header if h.startswith("x"))
    X, y_idx = [], []
    width = _label_width(task)
    for row in reader:
        X.append([float(v) for v in row[:d]])
        raw = [int(float(v)) for v in row[d:d + width]]
        y = raw[0] if width == 1 else tuple(raw)
        y_idx.append(task.Y.index(y))
    return np.array(X), np.array(y_idx, dtype=int)
