"""Domain types and composition geometry for the zero-inflated factor model.

Counts x (n x p) follow a multinomial with depth M_i and cell probabilities

    rho_ij = (1 - z_ij) exp(beta0_j + f_i . b_j) / sum_l (1 - z_il) exp(beta0_l + f_i . b_l)

where z_ij ~ Bern(eta_j) marks structural zeros, f_i ~ N(0, I_k) and
b_j ~ N(0, diag(sigma_beta)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSupportError, DomainError, ValidationError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CountMatrix:
    """n x p read counts with per-sample sequencing depths."""

    x: np.ndarray
    depths: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 2:
            raise ValidationError(f"counts must be 2-d, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("counts contain non-finite entries")
        if np.any(x < 0):
            raise ValidationError("counts must be nonnegative")
        if np.any(x != np.round(x)):
            raise ValidationError("counts must be integers")
        depths = x.sum(axis=1)
        if np.any(depths <= 0):
            bad = np.flatnonzero(depths <= 0).tolist()
            raise ValidationError(f"rows with zero total count: {bad}")
        if np.any(x.sum(axis=0) <= 0):
            bad = np.flatnonzero(x.sum(axis=0) <= 0).tolist()
            raise ValidationError(f"columns with zero total count: {bad}")
        object.__setattr__(self, "x", _frozen(x.astype(np.float64)))
        object.__setattr__(self, "depths", _frozen(depths.astype(np.float64)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def zero_mask(self) -> np.ndarray:
        return self.x == 0


@dataclass(frozen=True)
class Hyperparams:
    k: int
    sigma_beta: np.ndarray | None = None
    alpha1: float = 1.0
    alpha2: float = 1.0
    pi0: float = 0.5

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        sb = np.ones(self.k) if self.sigma_beta is None else np.asarray(self.sigma_beta, float)
        if sb.ndim == 0:
            sb = np.full(self.k, float(sb))
        if sb.shape != (self.k,) or np.any(sb <= 0) or not np.all(np.isfinite(sb)):
            raise ValidationError("sigma_beta must be k positive reals")
        object.__setattr__(self, "sigma_beta", _frozen(sb))
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValidationError("Beta prior parameters must be positive")
        if not 0.0 < self.pi0 < 1.0:
            raise ValidationError("pi0 must lie in (0, 1)")

    def check_against(self, counts: CountMatrix) -> None:
        if self.k >= counts.p:
            raise ValidationError(f"k={self.k} must be smaller than p={counts.p}")


@dataclass(frozen=True)
class ModelParams:
    beta0: np.ndarray
    B: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        beta0 = np.asarray(self.beta0, float)
        B = np.atleast_2d(np.asarray(self.B, float))
        eta = np.asarray(self.eta, float)
        p = beta0.shape[0]
        if beta0.ndim != 1 or B.shape[0] != p or eta.shape != (p,):
            raise ValidationError("beta0, B and eta disagree on p")
        if np.any((eta <= 0) | (eta >= 1)):
            raise ValidationError("eta must lie in (0, 1)")
        for name, val in (("beta0", beta0), ("B", B), ("eta", eta)):
            object.__setattr__(self, name, _frozen(val))


@dataclass(frozen=True)
class LatentState:
    F: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z)
        if np.any((Z != 0) & (Z != 1)):
            raise ValidationError("Z must be binary")
        object.__setattr__(self, "F", _frozen(np.atleast_2d(np.asarray(self.F, float))))
        object.__setattr__(self, "Z", _frozen(Z.astype(np.int8)))

    def check_against(self, counts: CountMatrix) -> None:
        if np.any((self.Z == 1) & (counts.x > 0)):
            raise ValidationError("Z marks a structural zero on a positive count")


def alr(rho) -> np.ndarray:
    """Additive log-ratio transform with the last component as reference."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or rho.size < 2:
        raise ValidationError("alr needs a 1-d vector with at least two parts")
    if np.any(rho <= 0):
        raise DomainError("alr is defined on the open simplex only")
    if abs(rho.sum() - 1.0) > 1e-12:
        raise ValidationError(f"composition sums to {rho.sum()!r}, not 1")
    return np.log(rho[:-1]) - np.log(rho[-1])


def alr_inv(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise ValidationError("alr_inv needs a 1-d vector")
    if not np.all(np.isfinite(mu)):
        raise ValidationError("alr_inv input must be finite")
    logits = np.append(mu, 0.0)
    return _softmax(logits)


def _softmax(logits, mask=None, axis=-1):
    logits = np.asarray(logits, dtype=float)
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    top = np.max(logits, axis=axis, keepdims=True)
    w = np.exp(logits - top)
    return w / w.sum(axis=axis, keepdims=True)


def _check_loadings(beta0, B, F):
    beta0 = np.asarray(beta0, dtype=float)
    B = np.asarray(B, dtype=float)
    F = np.asarray(F, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if beta0.ndim != 1 or B.ndim != 2 or B.shape[0] != beta0.shape[0]:
        raise ValidationError(f"beta0 {beta0.shape} and B {B.shape} disagree on p")
    if F.shape[-1] != B.shape[1]:
        raise ValidationError(f"F {F.shape} and B {B.shape} disagree on k")
    return beta0, B, F


def underlying_compositions(beta0, B, F) -> np.ndarray:
    """Zero-free compositions rho0 (n x p), one softmax row per sample."""
    beta0, B, F = _check_loadings(beta0, B, np.atleast_2d(F))
    return _softmax(beta0[None, :] + F @ B.T, axis=1)


def zero_inflated_compositions(z, beta0, B, f_i) -> np.ndarray:
    """Masked softmax for one sample: taxa with z_j = 1 get exactly zero mass."""
    beta0, B, f_i = _check_loadings(beta0, B, f_i)
    z = np.asarray(z)
    if z.shape != beta0.shape:
        raise ValidationError("z must have length p")
    keep = z == 0
    if not keep.any():
        raise DegenerateSupportError("every taxon is masked as a structural zero")
    return _softmax(beta0 + B @ f_i, mask=keep)
