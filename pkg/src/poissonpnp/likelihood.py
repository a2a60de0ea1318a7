"""Poisson observation model with the beta-regularized log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ForwardOperator

BETA_FLOOR = 1e-12


@dataclass(frozen=True)
class PoissonModel:
    """y ~ Poisson(alpha * A x); likelihood smoothed by adding ``beta`` inside the log."""

    operator: ForwardOperator
    alpha: float
    beta: float
    y: np.ndarray

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != tuple(self.operator.out_shape):
            raise ValueError(f"y has shape {y.shape}, operator output is {self.operator.out_shape}")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("y must hold non-negative integer counts")
        object.__setattr__(self, "y", y)

    def with_beta(self, beta: float) -> "PoissonModel":
        return PoissonModel(self.operator, self.alpha, beta, self.y)

    def log_lik(self, x) -> float:
        return log_lik(self, x)

    def grad_log_lik(self, x) -> np.ndarray:
        return grad_log_lik(self, x)

    def lipschitz_bound(self) -> float:
        return lipschitz_bound(self)


def simulate(x_true, operator: ForwardOperator, alpha: float, rng_seed) -> np.ndarray:
    """Draw y with independent Poisson(alpha * (A x)_i) entries.

    ``rng_seed`` may be an int or a numpy Generator.
    """
    mean = alpha * operator.apply(np.asarray(x_true, dtype=np.float64))
    # circular FFT convolution leaves ~1e-17 negative dust on zero regions
    mean[(mean < 0) & (mean > -1e-12)] = 0.0
    if np.any(mean < 0):
        raise ValueError(f"negative Poisson mean {mean.min():.3g}; x_true or operator is invalid")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.poisson(mean).astype(np.float64)


def log_lik(model: PoissonModel, x) -> float:
    """sum_i y_i log(alpha (Ax)_i + beta) - alpha (Ax)_i - beta; -inf outside the positive orthant."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        return -np.inf
    ax = model.alpha * model.operator.apply(x)
    arg = ax + model.beta
    y = model.y
    pos = y > 0
    if np.any(arg[pos] <= 0):
        return -np.inf
    with np.errstate(divide="ignore"):
        logs = np.where(pos, y * np.log(np.where(pos, arg, 1.0)), 0.0)
    return float(np.sum(logs - ax - model.beta))


def grad_log_lik(model: PoissonModel, x) -> np.ndarray:
    """A^T [alpha y / (alpha A x + beta) - alpha]."""
    ax = model.alpha * model.operator.apply(x)
    denom = ax + model.beta
    if np.any(denom[model.y > 0] <= 0):
        raise ZeroDivisionError("alpha*Ax + beta vanishes where y > 0; use beta > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(model.y > 0, model.y / denom, 0.0)
    return model.operator.adjoint(model.alpha * (ratio - 1.0))


def lipschitz_bound(model: PoissonModel) -> float:
    """alpha^2 max(y) / beta^2 * ||A A^T||."""
    if model.beta <= 0:
        raise ValueError("Lipschitz bound is undefined for beta = 0")
    return model.alpha**2 * float(np.max(model.y)) / model.beta**2 * model.operator.norm_sq()


def default_beta(y) -> float:
    """1% of the mean observed intensity."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty observation")
    return max(0.01 * float(np.mean(y)), BETA_FLOOR)
