"""Separable Legendre-type mirror maps.

The Hessian is never formed; maps expose its diagonal and the action of its
square root on a noise draw.
"""

from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    pass


class MirrorMap:
    name = "abstract"

    def grad(self, x):
        raise NotImplementedError

    def grad_conj(self, y):
        raise NotImplementedError

    def hess_diag(self, x):
        raise NotImplementedError

    def hess_sqrt_noise(self, x, xi):
        raise NotImplementedError


class QuadraticMap(MirrorMap):
    """phi(x) = |x|^2 / 2; recovers Euclidean Langevin."""

    name = "quadratic"

    def grad(self, x):
        return np.asarray(x, dtype=np.float64)

    def grad_conj(self, y):
        return np.asarray(y, dtype=np.float64)

    def hess_diag(self, x):
        return np.ones_like(x, dtype=np.float64)

    def hess_sqrt_noise(self, x, xi):
        return np.asarray(xi, dtype=np.float64)


class BurgMap(MirrorMap):
    """Burg entropy phi(x) = -sum_i log x_i on the open positive orthant.

    Convex, with grad phi(x) = -1/x, Hessian diag(1/x^2), and dual domain the
    open negative orthant where grad phi*(y) = -1/y.
    """

    name = "burg"

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("Burg map needs strictly positive x")
        return -1.0 / x

    def grad_conj(self, y):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y >= 0):
            raise DomainError("dual point outside the negative orthant")
        return -1.0 / y

    def hess_diag(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("Burg map needs strictly positive x")
        return 1.0 / (x * x)

    def hess_sqrt_noise(self, x, xi):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("Burg map needs strictly positive x")
        return xi / x


_MAPS = {"burg": BurgMap, "quadratic": QuadraticMap}


def mirror_map(kind: str) -> MirrorMap:
    try:
        return _MAPS[kind]()
    except KeyError:
        raise ValueError(f"unknown mirror map {kind!r}; choose from {sorted(_MAPS)}") from None


def mirror_grad(m: MirrorMap, x):
    return m.grad(x)


def mirror_grad_conj(m: MirrorMap, y):
    return m.grad_conj(y)


def hess_sqrt_noise(m: MirrorMap, x, xi):
    return m.hess_sqrt_noise(x, xi)
