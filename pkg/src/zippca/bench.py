"""Replication harness: simulate, fit and score RMSEs against the truth."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import orthogonal_procrustes

from .errors import ValidationError
from .fit import FitOptions, fit
from .model import Hyperparams
from .simulate import Scenario, ScenarioConfig, generate

# Beta prior used when fitting each scenario; S2 draws eta from Beta(2, 3),
# S1 fixes eta at 0.25, the mean of Beta(1, 3)
SCENARIO_PRIORS = {"S1": (1.0, 3.0), "S2": (2.0, 3.0)}
RMSE_FIELDS = ("rmse_beta0", "rmse_eta", "rmse_B", "rmse_F")


def rmse(truth, estimate) -> float:
    """Root mean squared error over all entries, with no alignment."""
    t = np.asarray(truth, dtype=float)
    e = np.asarray(estimate, dtype=float)
    if t.shape != e.shape:
        raise ValidationError(f"shape mismatch: truth {t.shape} vs estimate {e.shape}")
    return float(np.sqrt(np.mean((e - t) ** 2)))


@dataclass(frozen=True)
class BenchConfig:
    scenarios: tuple = ("S2",)
    ks: tuple = (2,)
    np_pairs: tuple = ((50, 100),)
    replications: int = 100
    fit_options: FitOptions = field(default_factory=FitOptions)
    base_seed: int = 0
    sigma_beta: float | None = None
    # "mean": mean of per-replication RMSEs; "pooled": RMSE of all errors pooled
    aggregate: str = "mean"
    align: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.aggregate not in ("mean", "pooled"):
            raise ValidationError("aggregate must be 'mean' or 'pooled'")
        for s in self.scenarios:
            Scenario(s)
        object.__setattr__(self, "scenarios", tuple(Scenario(s).value for s in self.scenarios))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        object.__setattr__(self, "np_pairs", tuple((int(a), int(b)) for a, b in self.np_pairs))
        for k in self.ks:
            for n, p in self.np_pairs:
                if not 1 <= k < p:
                    raise ValidationError(f"k={k} must lie in [1, p={p})")

    def cells(self):
        return [(s, n, p, k) for s in self.scenarios for n, p in self.np_pairs for k in self.ks]


@dataclass(frozen=True)
class CellRecord:
    scenario: str
    n: int
    p: int
    k: int
    replications: int
    rmse_beta0: float
    rmse_eta: float
    rmse_B: float
    rmse_F: float
    n_converged: int
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class RmseReport:
    records: tuple

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def cell(self, scenario, n, p, k) -> CellRecord:
        for rec in self.records:
            if (rec.scenario, rec.n, rec.p, rec.k) == (scenario, n, p, k):
                return rec
        raise KeyError((scenario, n, p, k))

    def to_csv(self) -> str:
        head = "scenario,n,p,k,replications," + ",".join(RMSE_FIELDS) + ",n_converged"
        lines = [head]
        for r in self.records:
            vals = ",".join(f"{getattr(r, f):.10g}" for f in RMSE_FIELDS)
            lines.append(f"{r.scenario},{r.n},{r.p},{r.k},{r.replications},{vals},{r.n_converged}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        cols = ["scenario", "(n,p)", "k", "beta0", "eta", "B", "F", "converged"]
        rows = [
            [r.scenario, f"({r.n},{r.p})", str(r.k)]
            + [f"{getattr(r, f):.4f}" for f in RMSE_FIELDS]
            + [f"{r.n_converged}/{r.replications}"]
            for r in self.records
        ]
        widths = [max(len(c), *(len(row[a]) for row in rows)) if rows else len(c)
                  for a, c in enumerate(cols)]
        fmt = lambda row: "  ".join(v.rjust(w) for v, w in zip(row, widths))
        out = [fmt(cols), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        return "\n".join(out) + "\n"


def _replicate(task):
    scenario, n, p, k, seed, options, sigma_beta, align = task
    data = generate(ScenarioConfig(scenario, n, p, k, seed=seed))
    a1, a2 = SCENARIO_PRIORS[scenario]
    sb = None if sigma_beta is None else np.full(k, float(sigma_beta))
    res = fit(data.counts, Hyperparams(k=k, sigma_beta=sb, alpha1=a1, alpha2=a2), options)
    B_hat, F_hat = res.theta_hat.B, res.F_hat
    if align:
        R, _ = orthogonal_procrustes(F_hat, data.truth_latent.F)
        B_hat, F_hat = B_hat @ R, F_hat @ R
    truth = data.truth_theta
    sq = np.array([
        np.mean((res.theta_hat.beta0 - truth.beta0) ** 2),
        np.mean((res.eta_hat - truth.eta) ** 2),
        np.mean((B_hat - truth.B) ** 2),
        np.mean((F_hat - data.truth_latent.F) ** 2),
    ])
    return sq, res.converged


def run_benchmark(config: BenchConfig, workers: int | None = None) -> RmseReport:
    """Score every grid cell; replication r of each cell uses seed base_seed + r."""
    if workers is None:
        workers = os.cpu_count() or 1
    records = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for scenario, n, p, k in config.cells():
            start = time.perf_counter()
            tasks = [(scenario, n, p, k, config.base_seed + r, config.fit_options,
                      config.sigma_beta, config.align) for r in range(config.replications)]
            # map preserves task order, so the reduction below is scheduling-independent
            results = list(pool.map(_replicate, tasks)) if pool else [_replicate(t) for t in tasks]
            sq = np.array([r[0] for r in results])
            if config.aggregate == "mean":
                agg = np.sqrt(sq).mean(axis=0)
            else:
                agg = np.sqrt(sq.mean(axis=0))
            records.append(CellRecord(
                scenario, n, p, k, config.replications, *map(float, agg),
                n_converged=int(sum(r[1] for r in results)),
                wall_time=time.perf_counter() - start,
            ))
    finally:
        if pool is not None:
            pool.shutdown()
    return RmseReport(tuple(records))
