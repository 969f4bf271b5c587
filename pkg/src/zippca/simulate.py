"""Synthetic zero-inflated count data for the two simulation scenarios.

Scenario S1: beta0_j = 2, B_jl ~ U(-1, 1), eta_j = 0.25.
Scenario S2: beta0_j = 2, B_jl ~ N(0, 0.1), eta_j ~ Beta(2, 3).
Both: f_i ~ N(0, I_k), M_i ~ U(800, 1000) rounded, z_ij ~ Bern(eta_j).

Draws come from numpy's PCG64 generator seeded with `seed`, in the order
eta, B, then for each sample f_i, z_i, M_i, x_i. If some taxon ends up with
no reads at all, the per-sample draws are repeated from the same stream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import CountMatrix, LatentState, ModelParams, zero_inflated_compositions

INTERCEPT = 2.0
DEPTH_RANGE = (800.0, 1000.0)
MAX_REDRAWS = 100


class Scenario(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    n: int
    p: int
    k: int
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        except ValueError:
            raise ValidationError(f"unknown scenario {self.scenario!r}") from None
        for name in ("n", "p", "k"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.k >= self.p:
            raise ValidationError(f"k={self.k} must be smaller than p={self.p}")


@dataclass(frozen=True)
class SimulatedDataset:
    counts: CountMatrix
    truth_theta: ModelParams
    truth_latent: LatentState
    config: ScenarioConfig


def _draw_samples(rng, n, p, k, beta0, B, eta):
    F = np.empty((n, k))
    Z = np.empty((n, p), dtype=np.int8)
    x = np.empty((n, p), dtype=np.int64)
    for i in range(n):
        F[i] = rng.standard_normal(k)
        z = rng.random(p) < eta
        while z.all():
            z = rng.random(p) < eta
        Z[i] = z
        depth = int(np.rint(rng.uniform(*DEPTH_RANGE)))
        rho = zero_inflated_compositions(Z[i], beta0, B, F[i])
        x[i] = rng.multinomial(depth, rho)
    return F, Z, x


def generate(config: ScenarioConfig) -> SimulatedDataset:
    rng = np.random.default_rng(config.seed)
    n, p, k = config.n, config.p, config.k
    if config.scenario is Scenario.S1:
        eta = np.full(p, 0.25)
        B = rng.uniform(-1.0, 1.0, size=(p, k))
    else:
        eta = rng.beta(2.0, 3.0, size=p)
        B = rng.normal(0.0, np.sqrt(0.1), size=(p, k))
    beta0 = np.full(p, INTERCEPT)

    # an all-zero column cannot be fitted; when one occurs the per-sample
    # blocks are drawn again from the same stream, keeping eta and B
    for _ in range(MAX_REDRAWS):
        F, Z, x = _draw_samples(rng, n, p, k, beta0, B, eta)
        if np.all(x.sum(axis=0) > 0):
            break
    else:
        raise ValidationError("could not draw a dataset without an all-zero column")
    return SimulatedDataset(
        counts=CountMatrix(x),
        truth_theta=ModelParams(beta0=beta0, B=B, eta=eta),
        truth_latent=LatentState(F=F, Z=Z),
        config=config,
    )


def zero_fraction(data: SimulatedDataset) -> float:
    return float(np.mean(data.counts.x == 0))
