"""Block-coordinate subproblems of the variational fit and their solver.

Each block (gamma1_j, gamma2_j, r_j, lambda2_j, m_i, sigma2_i, beta0) is an
ascent problem in a handful of variables with everything else frozen. The
objectives and gradients live in `_kernels` so that the fitter and this
module share one code path; a BlockProblem here is a closure over an
immutable snapshot of the current state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from ._kernels import (
    BLOCK_BETA0,
    BLOCK_GAMMA1,
    BLOCK_GAMMA2,
    BLOCK_LAMBDA2,
    BLOCK_M,
    BLOCK_R,
    BLOCK_SIGMA2,
    GAMMA_LO,
    STATUS_CONVERGED,
    STATUS_NONFINITE,
    VAR_HI,
    VAR_LO,
)
from .elbo import VariationalParams
from .errors import NonFiniteError, SingularityError, ValidationError
from .model import CountMatrix, Hyperparams

BLOCK_NAMES = ("gamma1", "gamma2", "r", "lambda2", "m", "sigma2", "beta0")


@dataclass(frozen=True)
class BlockProblem:
    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    x0: np.ndarray | None = None
    name: str = "problem"
    # compiled fast path, set by the block constructors below
    kind: int | None = field(default=None, repr=False)
    ctx: tuple | None = field(default=None, repr=False)

    @property
    def bounded(self) -> bool:
        return self.lower is not None or self.upper is not None

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.dim, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.dim, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is not None:
            return _kernels.block_vg(self.kind, x, self.ctx)
        return self.objective(x), np.asarray(self.gradient(x), dtype=float)


@dataclass(frozen=True)
class OptimizerReport:
    solution: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    final_grad_norm: float
    status: int = STATUS_CONVERGED


def projected_grad_norm(x, g, lower, upper) -> float:
    return float(np.max(np.abs(np.clip(x + g, lower, upper) - x), initial=0.0))


def bounded_quasi_newton(problem: BlockProblem, x0=None, tol: float = 1e-6,
                         max_iter: int = 200) -> OptimizerReport:
    """Maximise a block objective by BFGS, projected onto the box if it has one.

    A line-search failure is not an error: the best iterate is returned with
    converged=False.
    """
    x0 = problem.x0 if x0 is None else x0
    if x0 is None:
        raise ValidationError("no starting point given")
    x0 = np.array(x0, dtype=float).reshape(problem.dim)
    lo, hi = problem.bounds()
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValidationError("starting point lies outside the box")
    if problem.kind is not None:
        x, f, g, it, status = _kernels.qn_ascent_blocks(
            problem.kind, x0, lo, hi, problem.bounded, tol, max_iter, problem.ctx
        )
    else:
        x, f, g, it, status = _kernels.qn_ascent(
            _python_vg, x0, lo, hi, problem.bounded, tol, max_iter, (problem,)
        )
    if status == STATUS_NONFINITE:
        raise NonFiniteError(f"{problem.name}: objective or gradient not finite at x0")
    gnorm = projected_grad_norm(x, g, lo, hi)
    return OptimizerReport(
        solution=x,
        objective_value=float(f),
        iterations=int(it),
        converged=status == STATUS_CONVERGED,
        final_grad_norm=gnorm,
        status=int(status),
    )


def _python_vg(x, problem):
    return problem.objective(x), np.asarray(problem.gradient(x), dtype=float)


def grad_check(problem: BlockProblem, point, step: float = 1e-5) -> float:
    """Largest relative discrepancy between the analytic and central-difference gradient.

    The relative error of coordinate a is |fd_a - g_a| / max(1, |g_a|).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValidationError("step must lie in [1e-7, 1e-3]")
    x = np.array(point, dtype=float).reshape(problem.dim)
    lo, hi = problem.bounds()
    if np.any(x - step <= lo) or np.any(x + step >= hi):
        raise ValidationError("point is not strictly feasible for this step")
    g = np.asarray(problem.gradient(x), dtype=float)
    worst = 0.0
    for a in range(problem.dim):
        e = np.zeros(problem.dim)
        e[a] = step
        fd = (problem.objective(x + e) - problem.objective(x - e)) / (2 * step)
        worst = max(worst, abs(fd - g[a]) / max(1.0, abs(g[a])))
    return worst


# ---------------------------------------------------------------------------
# block constructors


def _state(counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams):
    if delta.pi.shape != counts.x.shape:
        raise ValidationError("pi does not match the count matrix")
    if np.any(delta.sigma2[:, None, :] * delta.lambda2[None, :, :] >= 1.0):
        raise SingularityError("sigma2 * lambda2 >= 1 for some (i, j)")
    beta0 = np.zeros(counts.p) if beta0 is None else np.array(beta0, dtype=float)
    return _kernels.make_ctx(
        np.array(counts.x), np.array(counts.depths), np.array(delta.pi), beta0,
        np.array(delta.r), np.array(delta.lambda2), np.array(delta.m), np.array(delta.sigma2),
        np.array(hyper.sigma_beta), float(hyper.alpha1), float(hyper.alpha2),
    )


def _problem(kind, ctx, dim, x0, lower=None, upper=None, name=""):
    def objective(x):
        return float(_kernels.block_vg(kind, np.asarray(x, dtype=float), ctx)[0])

    def gradient(x):
        return _kernels.block_vg(kind, np.asarray(x, dtype=float), ctx)[1].copy()

    return BlockProblem(dim=dim, objective=objective, gradient=gradient, lower=lower,
                        upper=upper, x0=np.array(x0, dtype=float), name=name, kind=kind, ctx=ctx)


def _column_rest(ctx, j):
    X, M, pi, beta0, r, l2, m, s2 = ctx[:8]
    A = _kernels.log_weights(pi, beta0, _kernels.mgf_matrix(m, s2, r, l2))
    return _kernels.rest_logsumexp(A, j)


def gamma1_block(j: int, counts: CountMatrix, delta: VariationalParams, hyper: Hyperparams) -> BlockProblem:
    ctx = _kernels.with_index(_state(counts, delta, None, hyper), j, np.zeros(counts.n),
                              float(delta.gamma2[j]))
    return _problem(BLOCK_GAMMA1, ctx, 1, [delta.gamma1[j]], lower=np.array([GAMMA_LO]),
                    name=f"gamma1[{j}]")


def gamma2_block(j: int, counts: CountMatrix, delta: VariationalParams, hyper: Hyperparams) -> BlockProblem:
    ctx = _kernels.with_index(_state(counts, delta, None, hyper), j, np.zeros(counts.n),
                              float(delta.gamma1[j]))
    return _problem(BLOCK_GAMMA2, ctx, 1, [delta.gamma2[j]], lower=np.array([GAMMA_LO]),
                    name=f"gamma2[{j}]")


def r_block(j: int, counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams) -> BlockProblem:
    base = _state(counts, delta, beta0, hyper)
    ctx = _kernels.with_index(base, j, _column_rest(base, j), 0.0)
    return _problem(BLOCK_R, ctx, delta.k, delta.r[j], name=f"r[{j}]")


def lambda2_block(j: int, counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams) -> BlockProblem:
    base = _state(counts, delta, beta0, hyper)
    ctx = _kernels.with_index(base, j, _column_rest(base, j), 0.0)
    k = delta.k
    return _problem(BLOCK_LAMBDA2, ctx, k, delta.lambda2[j], lower=np.full(k, VAR_LO),
                    upper=np.full(k, VAR_HI), name=f"lambda2[{j}]")


def m_block(i: int, counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams) -> BlockProblem:
    ctx = _kernels.with_index(_state(counts, delta, beta0, hyper), i, np.zeros(counts.n), 0.0)
    return _problem(BLOCK_M, ctx, delta.k, delta.m[i], name=f"m[{i}]")


def sigma2_block(i: int, counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams) -> BlockProblem:
    ctx = _kernels.with_index(_state(counts, delta, beta0, hyper), i, np.zeros(counts.n), 0.0)
    k = delta.k
    return _problem(BLOCK_SIGMA2, ctx, k, delta.sigma2[i], lower=np.full(k, VAR_LO),
                    upper=np.full(k, VAR_HI), name=f"sigma2[{i}]")


def beta0_block(counts: CountMatrix, delta: VariationalParams, beta0=None) -> BlockProblem:
    """All p intercepts as one problem; the objective is invariant to a common shift."""
    hyper = Hyperparams(k=delta.k)
    base = _state(counts, delta, beta0, hyper)
    X, M, pi, b0, r, l2, m, s2, sb, log_rest, _, _, other, a1, a2, idx = base
    logw0 = _kernels.log_weights(pi, np.zeros(counts.p), _kernels.mgf_matrix(m, s2, r, l2))
    ctx = (X, M, pi, b0, r, l2, m, s2, sb, log_rest, X.sum(axis=0), logw0, other, a1, a2, idx)
    return _problem(BLOCK_BETA0, ctx, counts.p, b0, name="beta0")


def all_blocks(counts, delta, beta0, hyper, j: int = 0, i: int = 0) -> dict[str, BlockProblem]:
    return {
        "gamma1": gamma1_block(j, counts, delta, hyper),
        "gamma2": gamma2_block(j, counts, delta, hyper),
        "r": r_block(j, counts, delta, beta0, hyper),
        "lambda2": lambda2_block(j, counts, delta, beta0, hyper),
        "m": m_block(i, counts, delta, beta0, hyper),
        "sigma2": sigma2_block(i, counts, delta, beta0, hyper),
        "beta0": beta0_block(counts, delta, beta0),
    }
