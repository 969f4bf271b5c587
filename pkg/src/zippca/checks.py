"""Random gradient checks over all seven block problems."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .elbo import VariationalParams
from .model import CountMatrix, Hyperparams
from .optim import BLOCK_NAMES, BlockProblem, all_blocks, grad_check


@dataclass(frozen=True)
class GradcheckResult:
    max_error: dict
    failures: list = field(default_factory=list)  # (block, point seed, error)

    @property
    def passed(self) -> bool:
        return not self.failures


def random_instance(seed: int, n: int = 10, p: int = 15, k: int = 3):
    """A random count matrix and a strictly interior variational state."""
    rng = np.random.default_rng(seed)
    while True:
        x = rng.poisson(rng.uniform(0.5, 8.0, size=p), size=(n, p))
        x[rng.random((n, p)) < 0.25] = 0
        if x.sum(axis=1).all() and x.sum(axis=0).all():
            break
    counts = CountMatrix(x)
    zero = x == 0
    delta = VariationalParams(
        pi=np.where(zero, rng.uniform(0.05, 0.95, size=(n, p)), 0.0),
        r=rng.normal(0.0, 0.5, size=(p, k)),
        lambda2=rng.uniform(0.05, 0.95, size=(p, k)),
        m=rng.normal(0.0, 1.0, size=(n, k)),
        sigma2=rng.uniform(0.05, 0.95, size=(n, k)),
        gamma1=rng.uniform(0.5, 5.0, size=p),
        gamma2=rng.uniform(0.5, 5.0, size=p),
    )
    beta0 = rng.normal(0.0, 0.5, size=p)
    hyper = Hyperparams(k=k, sigma_beta=rng.uniform(0.5, 2.0, size=k),
                        alpha1=rng.uniform(0.5, 3.0), alpha2=rng.uniform(0.5, 3.0))
    i, j = int(rng.integers(n)), int(rng.integers(p))
    return counts, delta, beta0, hyper, i, j


def flip_first_sign(problem: BlockProblem) -> BlockProblem:
    """The same problem with the first gradient coordinate negated."""
    def gradient(x):
        g = np.array(problem.gradient(x), dtype=float)
        g[0] = -g[0]
        return g
    return replace(problem, gradient=gradient, kind=None, ctx=None)


def run_gradcheck(points: int = 100, seed: int = 0, n: int = 10, p: int = 15, k: int = 3,
                  step: float = 1e-5, threshold: float = 1e-4,
                  corrupt: bool = False) -> GradcheckResult:
    worst = {name: 0.0 for name in BLOCK_NAMES}
    failures = []
    for t in range(points):
        point_seed = seed + t
        counts, delta, beta0, hyper, i, j = random_instance(point_seed, n, p, k)
        for name, problem in all_blocks(counts, delta, beta0, hyper, j=j, i=i).items():
            if corrupt:
                problem = flip_first_sign(problem)
            err = grad_check(problem, problem.x0, step)
            worst[name] = max(worst[name], err)
            if not err < threshold:
                failures.append((name, point_seed, err))
    return GradcheckResult(max_error=worst, failures=failures)
