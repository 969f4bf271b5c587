"""Digamma, trigamma and log-beta for use inside numba kernels.

scipy.special cannot be called from nopython code, so the three functions
needed by the Beta-factor terms are implemented here with the usual
recurrence-then-asymptotic-series approach.
"""

import math

import numba as nb
import numpy as np

_EULER = 0.57721566490153286061

# Bernoulli-number coefficients of the asymptotic expansions.
_PSI_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


@nb.njit(cache=True)
def digamma_scalar(x):
    if x <= 0.0 and x == math.floor(x):
        return np.nan
    if x < 0.0:
        # reflection
        return digamma_scalar(1.0 - x) - math.pi / math.tan(math.pi * x)
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    z = 1.0 / (x * x)
    series = 0.0
    for c in _PSI_COEF[::-1]:
        series = series * z + c
    return acc + math.log(x) - 0.5 / x - z * series


@nb.njit(cache=True)
def trigamma_scalar(x):
    if x <= 0.0 and x == math.floor(x):
        return np.nan
    if x < 0.0:
        s = math.pi / math.sin(math.pi * x)
        return -trigamma_scalar(1.0 - x) + s * s
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    z = 1.0 / (x * x)
    series = 0.0
    for c in _TRIGAMMA_COEF[::-1]:
        series = series * z + c
    return acc + 1.0 / x + 0.5 * z + z / x * series


@nb.njit(cache=True)
def log_beta_scalar(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@nb.vectorize(["float64(float64)"], cache=True)
def digamma(x):
    return digamma_scalar(x)


@nb.vectorize(["float64(float64)"], cache=True)
def trigamma(x):
    return trigamma_scalar(x)


@nb.vectorize(["float64(float64, float64)"], cache=True)
def log_beta(a, b):
    return log_beta_scalar(a, b)


@nb.vectorize(["float64(float64)"], cache=True)
def log_factorial(x):
    return math.lgamma(x + 1.0)
