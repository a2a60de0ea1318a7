"""Brute-force ground truth for small problems.

Tensor-grid trapezoidal quadrature of posterior moments (up to 3 dimensions),
central finite differences, and toy targets with closed-form moments that
plug into the samplers in place of a Poisson likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class QuadratureSpec:
    """``grid`` holds one (lower, upper, points) triple per dimension.

    ``log_density`` maps an (N, d) array of nodes to N log-densities when
    ``vectorized``; otherwise it is called once per node with a length-d vector.
    """

    grid: tuple
    log_density: Callable
    vectorized: bool = True

    def __post_init__(self):
        if not 1 <= len(self.grid) <= 3:
            raise ValueError("quadrature supports 1 to 3 dimensions")
        for lo, hi, n in self.grid:
            if n < 64:
                raise ValueError(f"need at least 64 points per dimension, got {n}")
            if not hi > lo:
                raise ValueError(f"empty interval [{lo}, {hi}]")


class QuadratureResult(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    log_normalizer: float
    # largest density on the grid faces relative to the peak; < 1e-6 means tails are covered
    boundary_ratio: float


def _trapezoid_weights(lo, hi, n):
    nodes = np.linspace(lo, hi, n)
    w = np.full(n, (hi - lo) / (n - 1))
    w[0] = w[-1] = w[0] / 2
    return nodes, w


def quadrature_moments(spec: QuadratureSpec) -> QuadratureResult:
    axes, weights = zip(*(_trapezoid_weights(*g) for g in spec.grid))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    if spec.vectorized:
        logp = np.asarray(spec.log_density(pts), dtype=np.float64).reshape(mesh[0].shape)
    else:
        logp = np.array([spec.log_density(p) for p in pts], dtype=np.float64).reshape(mesh[0].shape)
    if np.any(np.isnan(logp)) or np.any(logp == np.inf):
        raise ValueError("log-density returned NaN or +inf on the grid")
    lmax = np.max(logp)
    if not np.isfinite(lmax):
        raise FloatingPointError("total mass underflows: log-density is -inf everywhere on the grid")
    dens = np.exp(logp - lmax)
    w = weights[0]
    for wk in weights[1:]:
        w = np.multiply.outer(w, wk)
    mass = np.sum(w * dens)
    if not mass > 0:
        raise FloatingPointError("total mass underflow")
    p = (w * dens).ravel() / mass
    mean = p @ pts
    centred = pts - mean
    cov = (centred * p[:, None]).T @ centred

    face = 0.0
    for ax in range(dens.ndim):
        face = max(face, dens.take(0, axis=ax).max(), dens.take(-1, axis=ax).max())
    return QuadratureResult(mean, cov, float(lmax + np.log(mass)), float(face))


def fd_gradient(f: Callable, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value in the stencil of coordinate {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return g


class GaussianTarget:
    """N(mean, var I) posing as a likelihood; the quadratic potential used for exactness checks."""

    def __init__(self, mean=0.0, var=1.0):
        self.mean = mean
        self.var = var

    def grad_log_lik(self, x):
        return (self.mean - x) / self.var

    def log_density(self, x):
        return -0.5 * np.sum((np.asarray(x) - self.mean) ** 2, axis=-1) / self.var


class GammaTarget:
    """Gamma(shape a, rate b) on the positive half-line, element-wise."""

    def __init__(self, a=3.0, rate=2.0):
        self.a = a
        self.rate = rate

    def grad_log_lik(self, x):
        return (self.a - 1.0) / x - self.rate

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            val = (self.a - 1.0) * np.log(x) - self.rate * x
        return np.where(x > 0, val, -np.inf).sum(axis=-1)

    @property
    def mean(self):
        return self.a / self.rate

    @property
    def var(self):
        return self.a / self.rate**2


def ula_stationary_variance(var: float, delta: float) -> float:
    """Exact stationary variance of Euler-Maruyama Langevin on N(0, var): var / (1 - delta / (2 var))."""
    return var / (1.0 - delta / (2.0 * var))
