"""Mean-field evidence lower bound and the Poisson-equivalence quantities.

The variational family is

    q(b_j) = N(r_j, diag lambda2_j),   q(f_i) = N(m_i, diag sigma2_i),
    q(z_ij) = Bern(pi_ij),             q(eta_j) = Beta(gamma1_j, gamma2_j).

`elbo_lpnm` evaluates the closed-form bound. Like the model's own
derivation, it drops the additive constants that do not depend on any
parameter (Gaussian normalisers and the multinomial coefficient), and it
bounds E log sum_j (1 - z_ij) exp(.) by Jensen, which brings in the
log-MGF term L_ij.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import DegenerateSupportError, SingularityError, ValidationError
from .model import CountMatrix, Hyperparams, _frozen
from .special import digamma, log_beta, log_factorial

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class VariationalParams:
    pi: np.ndarray
    r: np.ndarray
    lambda2: np.ndarray
    m: np.ndarray
    sigma2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            val = np.asarray(getattr(self, f.name), dtype=float)
            if f.name in ("r", "lambda2", "m", "sigma2") and val.ndim == 1:
                val = val[:, None]
            if not np.all(np.isfinite(val)):
                raise ValidationError(f"{f.name} has non-finite entries")
            object.__setattr__(self, f.name, _frozen(val))
        n, p = self.pi.shape
        k = self.r.shape[1]
        if self.r.shape != (p, k) or self.lambda2.shape != (p, k):
            raise ValidationError("r and lambda2 must be p x k")
        if self.m.shape != (n, k) or self.sigma2.shape != (n, k):
            raise ValidationError("m and sigma2 must be n x k")
        if self.gamma1.shape != (p,) or self.gamma2.shape != (p,):
            raise ValidationError("gamma1 and gamma2 must have length p")
        if np.any((self.pi < 0) | (self.pi > 1)):
            raise ValidationError("pi must lie in [0, 1]")
        if np.any(self.gamma1 <= 0) or np.any(self.gamma2 <= 0):
            raise ValidationError("gamma1 and gamma2 must be positive")
        # the closed boundary is tolerated here (limit cases in tests);
        # the fitter keeps both inside (0, 1)
        for name in ("lambda2", "sigma2"):
            v = getattr(self, name)
            if np.any((v < 0) | (v >= 1)):
                raise ValidationError(f"{name} must lie in (0, 1)")

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    @property
    def p(self) -> int:
        return self.pi.shape[1]

    @property
    def k(self) -> int:
        return self.r.shape[1]

    def replace(self, **changes) -> "VariationalParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return VariationalParams(**values)


@dataclass(frozen=True)
class ElboBreakdown:
    total: float
    loading_prior: float
    factor_prior: float
    beta_functions: float
    multinomial: float
    bernoulli: float
    beta_cross: float

    def components(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "total"}


def _check_shapes(counts: CountMatrix, delta: VariationalParams, beta0) -> np.ndarray:
    beta0 = np.asarray(beta0, dtype=float)
    if delta.pi.shape != counts.x.shape:
        raise ValidationError(f"pi {delta.pi.shape} does not match counts {counts.x.shape}")
    if beta0.shape != (counts.p,):
        raise ValidationError("beta0 must have length p")
    return beta0


def log_mgf_term(m_i, sigma2_i, r_j, lambda2_j) -> float:
    """L_ij = log E exp(f_i . b_j) under the factorised Gaussian q."""
    arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (m_i, sigma2_i, r_j, lambda2_j)]
    if len({a.shape for a in arrs}) != 1:
        raise ValidationError("all four arguments must have length k")
    if np.any(arrs[1] * arrs[3] >= 1.0):
        raise SingularityError("sigma2 * lambda2 >= 1")
    return float(_kernels.log_mgf(*arrs))


def mgf_matrix(delta: VariationalParams) -> np.ndarray:
    if np.any(delta.sigma2[:, None, :] * delta.lambda2[None, :, :] >= 1.0):
        raise SingularityError("sigma2 * lambda2 >= 1 for some (i, j)")
    return _kernels.mgf_matrix(delta.m, delta.sigma2, delta.r, delta.lambda2)


def _log_normaliser(delta: VariationalParams, beta0: np.ndarray, L: np.ndarray) -> np.ndarray:
    """log sum_j (1 - pi_ij) exp(beta0_j + L_ij), one value per sample."""
    logw = _kernels.log_weights(delta.pi, beta0, L)
    out = _kernels.row_logsumexp(logw)
    if np.any(np.isneginf(out)):
        bad = np.flatnonzero(np.isneginf(out)).tolist()
        raise DegenerateSupportError(f"rows {bad} have pi = 1 for every taxon")
    return out


def _xlogx(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def _shared_terms(counts, delta, beta0, hyper):
    """Everything but the multinomial normaliser, common to both bounds."""
    sb = hyper.sigma_beta
    loading = -0.5 * np.sum(
        np.sum((delta.r**2 + delta.lambda2) / sb, axis=1) - np.sum(np.log(delta.lambda2), axis=1)
    )
    factor = -0.5 * np.sum(
        np.sum(delta.m**2 + delta.sigma2, axis=1) - np.sum(np.log(delta.sigma2), axis=1)
    )
    psi1 = digamma(delta.gamma1)
    psi2 = digamma(delta.gamma2)
    psis = digamma(delta.gamma1 + delta.gamma2)
    pi = delta.pi
    bern = np.sum(
        pi * (psi1 - psis) + (1 - pi) * (psi2 - psis) - _xlogx(pi) - _xlogx(1 - pi)
    )
    cross = np.sum((hyper.alpha1 - delta.gamma1) * (psi1 - psis) + (hyper.alpha2 - delta.gamma2) * (psi2 - psis))
    betaf = np.sum(log_beta(delta.gamma1, delta.gamma2)) - counts.p * float(
        log_beta(hyper.alpha1, hyper.alpha2)
    )
    linear = np.sum(counts.x * (beta0[None, :] + delta.m @ delta.r.T))
    return loading, factor, betaf, bern, cross, linear


def elbo_lpnm(counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams) -> ElboBreakdown:
    """Closed-form ELBO of the zero-inflated multinomial factor model."""
    beta0 = _check_shapes(counts, delta, beta0)
    L = mgf_matrix(delta)
    lognorm = _log_normaliser(delta, beta0, L)
    loading, factor, betaf, bern, cross, linear = _shared_terms(counts, delta, beta0, hyper)
    multinomial = linear - np.sum(counts.depths * lognorm)
    parts = dict(
        loading_prior=float(loading),
        factor_prior=float(factor),
        beta_functions=float(betaf),
        multinomial=float(multinomial),
        bernoulli=float(bern),
        beta_cross=float(cross),
    )
    total = float(np.sum(np.array(list(parts.values()))))
    return ElboBreakdown(total=total, **parts)


def alpha0_hat(counts: CountMatrix, delta: VariationalParams, beta0, i: int | None = None):
    """Profiled Poisson sample offset log{M_i / sum_j (1 - pi_ij) exp(beta0_j + L_ij)}.

    Returns a scalar for a given `i`, else the length-n vector.
    """
    beta0 = _check_shapes(counts, delta, beta0)
    out = np.log(counts.depths) - _log_normaliser(delta, beta0, mgf_matrix(delta))
    if i is None:
        return out
    return float(out[i])


def pi_hat(counts: CountMatrix, delta: VariationalParams, beta0) -> np.ndarray:
    """Optimal q(z_ij = 1) under the Poisson form, exactly 0 on positive counts."""
    beta0 = _check_shapes(counts, delta, beta0)
    L = mgf_matrix(delta)
    a0 = np.log(counts.depths) - _log_normaliser(delta, beta0, L)
    expo = np.minimum(a0[:, None] + beta0[None, :] + L, EXP_CLAMP)
    logit = digamma(delta.gamma1)[None, :] - digamma(delta.gamma2)[None, :] + np.exp(expo)
    return np.where(counts.x > 0, 0.0, expit(logit))


def elbo_poisson(counts: CountMatrix, delta: VariationalParams, beta0, alpha0, hyper: Hyperparams) -> float:
    """ELBO of the zero-inflated Poisson factor model with sample offsets alpha0.

    The expected Poisson rate carries the (1 - pi_ij) factor of q(z_ij = 0);
    this is what makes the profiled offset equal `alpha0_hat`.
    """
    beta0 = _check_shapes(counts, delta, beta0)
    alpha0 = np.asarray(alpha0, dtype=float)
    if alpha0.shape != (counts.n,):
        raise ValidationError("alpha0 must have length n")
    L = mgf_matrix(delta)
    loading, factor, betaf, bern, cross, linear = _shared_terms(counts, delta, beta0, hyper)
    x = counts.x
    expo = np.minimum(alpha0[:, None] + beta0[None, :] + L, EXP_CLAMP)
    poisson = (
        linear
        + np.sum(x * alpha0[:, None])
        - np.sum((1 - delta.pi) * np.exp(expo))
        - np.sum(log_factorial(x))
    )
    total = np.array([loading, factor, betaf, bern, cross, poisson])
    return float(np.sum(total))


def poisson_equivalence_constant(counts: CountMatrix) -> float:
    """elbo_lpnm - elbo_poisson(alpha0_hat) = sum_i M_i - sum_ij [x_ij log M_i - log x_ij!]."""
    x = counts.x
    return float(
        np.sum(counts.depths)
        - np.sum(x * np.log(counts.depths)[:, None])
        + np.sum(log_factorial(x))
    )


def mc_elbo_oracle(counts: CountMatrix, delta: VariationalParams, beta0, hyper: Hyperparams,
                   samples: int = 100_000, seed=None, chunk: int = 10_000) -> tuple[float, float]:
    """Monte-Carlo estimate of the same bound as `elbo_lpnm`, with its standard error.

    Every latent block is drawn from q and the log densities of p and q are
    evaluated pointwise (scipy.stats), so the digamma, log-beta and log-MGF
    closed forms are not used. The multinomial normaliser is estimated as
    log of the sample mean of sum_j (1 - z_ij) exp(beta0_j + f_i . b_j),
    with a delta-method standard error. The Gaussian normalising constants
    dropped by the closed form are subtracted at the end.
    """
    from scipy import stats

    if samples < 1000:
        raise ValidationError("samples must be at least 1000")
    beta0 = _check_shapes(counts, delta, beta0)
    rng = np.random.default_rng(seed)
    x, M = counts.x, counts.depths
    n, p, k = delta.n, delta.p, delta.k
    sb = hyper.sigma_beta
    lam2 = np.maximum(delta.lambda2, 1e-8)
    sig2 = np.maximum(delta.sigma2, 1e-8)
    pi = delta.pi

    h_parts = []
    y_parts = []
    done = 0
    while done < samples:
        s = min(chunk, samples - done)
        done += s
        b = delta.r[None] + np.sqrt(lam2)[None] * rng.standard_normal((s, p, k))
        f = delta.m[None] + np.sqrt(sig2)[None] * rng.standard_normal((s, n, k))
        eta = rng.beta(delta.gamma1, delta.gamma2, size=(s, p))
        z = (rng.random((s, n, p)) < pi[None]).astype(float)

        logits = np.einsum("sik,sjk->sij", f, b)
        h = np.einsum("ij,sij->s", x, beta0[None, None, :] + logits)
        eta_c = np.clip(eta, 1e-300, 1 - 1e-16)
        h += np.einsum("sij,sj->s", z, np.log(eta_c)) + np.einsum("sij,sj->s", 1 - z, np.log1p(-eta_c))
        h += stats.norm.logpdf(b, 0.0, np.sqrt(sb)).sum(axis=(1, 2))
        h += stats.beta.logpdf(eta_c, hyper.alpha1, hyper.alpha2).sum(axis=1)
        h += stats.norm.logpdf(f).sum(axis=(1, 2))
        h -= stats.norm.logpdf(b, delta.r[None], np.sqrt(lam2)[None]).sum(axis=(1, 2))
        h -= stats.beta.logpdf(eta_c, delta.gamma1, delta.gamma2).sum(axis=1)
        h -= stats.norm.logpdf(f, delta.m[None], np.sqrt(sig2)[None]).sum(axis=(1, 2))
        logq_z = np.where(z == 1, np.log(np.where(pi > 0, pi, 1.0))[None], np.log(np.where(pi < 1, 1 - pi, 1.0))[None])
        h -= logq_z.sum(axis=(1, 2))

        shift = beta0[None, None, :] + logits
        top = shift.max()
        y = np.sum((1 - z) * np.exp(shift - top), axis=2)
        h_parts.append(h)
        y_parts.append((y, top))

    h = np.concatenate(h_parts)
    top = max(t for _, t in y_parts)
    y = np.concatenate([yy * np.exp(t - top) for yy, t in y_parts])
    ybar = y.mean(axis=0)
    if np.any(ybar <= 0):
        raise DegenerateSupportError("a sample has no taxon with q(z = 0) > 0")
    mean = h.mean() - np.sum(M * (np.log(ybar) + top))
    influence = h - (y / ybar) @ M
    stderr = influence.std(ddof=1) / np.sqrt(len(h))
    dropped = (p + n) * k / 2.0 - 0.5 * p * np.sum(np.log(sb))
    return float(mean - dropped), float(stderr)
