"""Coordinate-ascent variational fit of the zero-inflated probabilistic PCA model.

Each outer iteration classifies the zero cells (pi set to 0 or 1 by
thresholding the optimal pi), runs one sweep over the continuous blocks and
then refits the intercepts jointly. The ELBO is recorded after the
intercept step; iteration stops when its relative change falls below `tol`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .elbo import VariationalParams, elbo_lpnm, pi_hat
from .errors import NonFiniteError, ValidationError
from .model import CountMatrix, Hyperparams, ModelParams, _softmax
from .optim import BLOCK_NAMES

INIT_VARIANCE = 0.5


@dataclass(frozen=True)
class FitOptions:
    max_outer_iter: int = 200
    tol: float = 1e-6
    inner_tol: float = 1e-6
    inner_max_iter: int = 200
    seed: int = 0
    jacobi: bool = False

    def __post_init__(self):
        if self.max_outer_iter < 1 or self.inner_max_iter < 1:
            raise ValidationError("iteration limits must be positive")
        if not (self.tol > 0 and self.inner_tol > 0):
            raise ValidationError("tolerances must be positive")


@dataclass(frozen=True)
class FitResult:
    theta_hat: ModelParams
    delta_hat: VariationalParams
    F_hat: np.ndarray
    rho_hat: np.ndarray
    elbo_trace: np.ndarray
    converged: bool
    iterations: int
    # ELBO right after each classification step, before the continuous sweep
    elbo_after_classification: np.ndarray = field(default_factory=lambda: np.empty(0))
    # solver outcomes per block kind: columns converged, max_iter, line search, non-finite
    block_status: dict = field(default_factory=dict)
    repaired_rows: tuple = ()
    wall_time: float = 0.0

    @property
    def eta_hat(self) -> np.ndarray:
        return self.theta_hat.eta


def estimate_eta(gamma1, gamma2) -> np.ndarray:
    g1 = np.asarray(gamma1, dtype=float)
    g2 = np.asarray(gamma2, dtype=float)
    return g1 / (g1 + g2)


def _spectral_start(x: np.ndarray, k: int):
    """Top-k SVD of the column-centred log1p counts, split as m r^T."""
    n, p = x.shape
    y = np.log1p(x)
    y -= y.mean(axis=0)
    U, S, Vt = np.linalg.svd(y, full_matrices=False)
    U, S, V = U[:, :k], S[:k], Vt[:k].T
    # fix the sign so the largest-magnitude loading of each component is positive
    idx = np.argmax(np.abs(V), axis=0)
    sgn = np.where(V[idx, np.arange(k)] < 0, -1.0, 1.0)
    U, V = U * sgn, V * sgn
    keep = S > max(S[0] if S.size else 0.0, 1.0) * max(n, p) * np.finfo(float).eps
    m = np.where(keep, U * np.sqrt(n), 0.0)
    r = np.where(keep, V * S / np.sqrt(n), 0.0)
    return m, r


def initialize(counts: CountMatrix, hyper: Hyperparams, seed: int = 0):
    """Deterministic starting point (delta0, beta0_0).

    The start does not draw random numbers; `seed` is accepted so callers can
    treat the initialiser like the other seeded stages.
    """
    hyper.check_against(counts)
    x = np.asarray(counts.x)
    n, p = x.shape
    colsum = x.sum(axis=0) + 0.5
    beta0 = np.log(colsum) - np.log(colsum.sum())
    beta0 -= beta0.mean()
    m, r = _spectral_start(x, hyper.k)
    zeros = (x == 0).sum(axis=0)
    delta = VariationalParams(
        pi=np.where(x == 0, 0.5, 0.0),
        r=r,
        lambda2=np.full((p, hyper.k), INIT_VARIANCE),
        m=m,
        sigma2=np.full((n, hyper.k), INIT_VARIANCE),
        gamma1=hyper.alpha1 + zeros,
        gamma2=hyper.alpha2 + (n - zeros),
    )
    return delta, beta0


def classify_pi(pi_hat_values, pi0: float, zero_mask=None) -> np.ndarray:
    """Threshold the optimal pi at pi0; positive-count cells always get 0."""
    if not 0.0 < pi0 < 1.0:
        raise ValidationError("pi0 must lie in (0, 1)")
    ph = np.asarray(pi_hat_values, dtype=float)
    out = (ph >= pi0).astype(float)
    if zero_mask is not None:
        out[~np.asarray(zero_mask)] = 0.0
    return out


def _repair_rows(pi: np.ndarray, ph: np.ndarray) -> list[int]:
    """Reopen the most plausible cell of any row classified as all-structural."""
    bad = np.flatnonzero(np.all(pi >= 1.0, axis=1))
    for i in bad:
        pi[i, np.argmin(ph[i])] = 0.0
    return [int(i) for i in bad]


def _snapshot(pi, beta0, r, l2, m, s2, g1, g2):
    return dict(pi=pi.copy(), beta0=beta0.copy(), r=r.copy(), lambda2=l2.copy(), m=m.copy(),
                sigma2=s2.copy(), gamma1=g1.copy(), gamma2=g2.copy())


def fit(counts: CountMatrix, hyper: Hyperparams, options: FitOptions | None = None) -> FitResult:
    options = FitOptions() if options is None else options
    start = time.perf_counter()
    delta0, beta0_0 = initialize(counts, hyper, options.seed)

    X = np.array(counts.x)
    M = np.array(counts.depths)
    zero = X == 0
    pi = np.array(delta0.pi)
    beta0 = np.array(beta0_0)
    r = np.array(delta0.r)
    l2 = np.array(delta0.lambda2)
    m = np.array(delta0.m)
    s2 = np.array(delta0.sigma2)
    g1 = np.array(delta0.gamma1)
    g2 = np.array(delta0.gamma2)
    sb = np.array(hyper.sigma_beta, dtype=float)
    stats = np.zeros((len(BLOCK_NAMES), 4), dtype=np.int64)

    def current():
        return VariationalParams(pi=pi, r=r, lambda2=l2, m=m, sigma2=s2, gamma1=g1, gamma2=g2)

    def evaluate(stage):
        try:
            value = elbo_lpnm(counts, current(), beta0, hyper).total
        except (ValidationError, ArithmeticError) as exc:
            raise NonFiniteError(f"ELBO undefined after {stage}: {exc}",
                                 snapshot=_snapshot(pi, beta0, r, l2, m, s2, g1, g2)) from exc
        if not np.isfinite(value):
            raise NonFiniteError(f"ELBO is not finite after {stage}",
                                 snapshot=_snapshot(pi, beta0, r, l2, m, s2, g1, g2))
        return value

    trace, classified, repaired = [], [], set()
    converged = False
    it = 0
    for it in range(1, options.max_outer_iter + 1):
        ph = pi_hat(counts, current(), beta0)
        pi[:] = classify_pi(ph, hyper.pi0, zero)
        repaired.update(_repair_rows(pi, ph))
        classified.append(evaluate("classification"))

        _kernels.sweep(X, M, pi, beta0, r, l2, m, s2, g1, g2, sb, float(hyper.alpha1),
                       float(hyper.alpha2), options.inner_tol, options.inner_max_iter,
                       options.jacobi, stats)
        _kernels.update_beta0(X, M, pi, beta0, r, l2, m, s2, options.inner_tol,
                              options.inner_max_iter, stats)
        trace.append(evaluate("the sweep"))
        if it > 1 and abs(trace[-1] - trace[-2]) < options.tol * abs(trace[-2]):
            converged = True
            break

    delta = current()
    eta = estimate_eta(g1, g2)
    return FitResult(
        theta_hat=ModelParams(beta0=beta0.copy(), B=r.copy(), eta=np.clip(eta, 1e-12, 1 - 1e-12)),
        delta_hat=delta,
        F_hat=m.copy(),
        rho_hat=_softmax(beta0[None, :] + m @ r.T),
        elbo_trace=np.array(trace),
        converged=converged,
        iterations=it,
        elbo_after_classification=np.array(classified),
        block_status={name: stats[b].copy() for b, name in enumerate(BLOCK_NAMES)},
        repaired_rows=tuple(sorted(repaired)),
        wall_time=time.perf_counter() - start,
    )
