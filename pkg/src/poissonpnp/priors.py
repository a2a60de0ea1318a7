"""Denoisers and the prior scores derived from them.

Euclidean denoisers carry a noise variance ``epsilon`` and give the score of
the Gaussian-smoothed prior through Tweedie's identity. Bregman denoisers
carry an inverse scale ``gamma`` and are paired with a mirror map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .mirror import BurgMap, MirrorMap


class Denoiser:
    kind = "abstract"
    epsilon: float | None = None
    gamma: float | None = None
    # Lipschitz constant of the denoiser map, used for the step-size bound
    lipschitz: float = 1.0

    def denoise(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_bregman(self) -> bool:
        return self.gamma is not None


class GaussianDenoiser(Denoiser):
    """Exact MMSE denoiser for the prior N(mean, var I) under N(0, epsilon I) noise."""

    kind = "gaussian-analytic"

    def __init__(self, mean, var: float, epsilon: float):
        if not var > 0 or not epsilon > 0:
            raise ValueError("var and epsilon must be positive")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = float(var)
        self.epsilon = float(epsilon)
        self.lipschitz = self.var / (self.var + self.epsilon)

    def denoise(self, x):
        return (self.var * x + self.epsilon * self.mean) / (self.var + self.epsilon)

    def log_smoothed_density(self, x) -> float:
        """log p_eps(x) with p_eps = N(mean, (var + epsilon) I)."""
        v = self.var + self.epsilon
        r = np.asarray(x, dtype=np.float64) - self.mean
        return float(-0.5 * np.sum(r * r) / v - 0.5 * r.size * np.log(2 * np.pi * v))

    def smoothed_score(self, x):
        return (self.mean - x) / (self.var + self.epsilon)


class GMMDenoiser(Denoiser):
    """Exact MMSE denoiser for a pixel-wise independent Gaussian mixture prior.

    Every pixel follows sum_k w_k N(m_k, v_k). Component means may be scalars
    or arrays broadcastable to the image.
    """

    kind = "gmm-analytic"

    def __init__(self, weights, means, variances, epsilon: float):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        v = np.asarray(variances, dtype=np.float64)
        if v.shape != w.shape or np.any(v <= 0):
            raise ValueError("need one positive variance per component")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.weights = w
        self.means = [np.asarray(m, dtype=np.float64) for m in means]
        if len(self.means) != len(w):
            raise ValueError("need one mean per component")
        self.variances = v
        self.epsilon = float(epsilon)
        # the MMSE map of a mixture is not a contraction; keep the nominal value
        self.lipschitz = 1.0

    def _log_joint(self, x):
        """log w_k + log N(x; m_k, v_k + eps) per component, stacked on axis 0."""
        s = self.variances + self.epsilon
        with np.errstate(divide="ignore"):
            consts = np.log(self.weights) - 0.5 * np.log(2 * np.pi * s)
        return np.stack([c - 0.5 * (x - mk) ** 2 / sk for c, mk, sk in zip(consts, self.means, s)])

    def _resp(self, x):
        logs = self._log_joint(x)
        r = np.exp(logs - logs.max(axis=0))
        r /= r.sum(axis=0)
        return r

    def denoise(self, x):
        resp = self._resp(x)
        out = np.zeros_like(x, dtype=np.float64)
        for r, mk, vk in zip(resp, self.means, self.variances):
            out += r * ((vk * x + self.epsilon * mk) / (vk + self.epsilon))
        return out

    def log_smoothed_density(self, x) -> float:
        return float(np.sum(logsumexp(self._log_joint(np.asarray(x, dtype=np.float64)), axis=0)))

    def smoothed_score(self, x):
        resp = self._resp(x)
        s = self.variances + self.epsilon
        return sum(r * (mk - x) / sk for r, mk, sk in zip(resp, self.means, s))


class BregmanDenoiser(Denoiser):
    """Wraps a callable z -> B_gamma(z) trained for a Bregman noise model."""

    kind = "bregman"

    def __init__(self, fn, gamma: float):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.fn = fn
        self.gamma = float(gamma)

    def denoise(self, x):
        return np.asarray(self.fn(x), dtype=np.float64)


def denoise(d: Denoiser, x) -> np.ndarray:
    return d.denoise(np.asarray(x, dtype=np.float64))


def tweedie_score(d: Denoiser, x) -> np.ndarray:
    """(D_eps(x) - x) / eps."""
    if d.is_bregman:
        raise TypeError("Bregman denoiser: use bregman_score with a mirror map")
    x = np.asarray(x, dtype=np.float64)
    return (d.denoise(x) - x) / d.epsilon


def bregman_score(d: Denoiser, mirror: MirrorMap, z) -> np.ndarray:
    """-gamma * Hess phi(z) (z - B_gamma(z))."""
    if not d.is_bregman:
        raise TypeError("bregman_score needs a denoiser with a gamma parameter")
    z = np.asarray(z, dtype=np.float64)
    return -d.gamma * mirror.hess_diag(z) * (z - d.denoise(z))


def prior_score(d: Denoiser | None, x, mirror: MirrorMap | None = None):
    """Score of the smoothed prior for any denoiser kind; zero when ``d`` is None."""
    if d is None:
        return np.zeros_like(x)
    if d.is_bregman:
        return bregman_score(d, mirror if mirror is not None else BurgMap(), x)
    return tweedie_score(d, x)


# Dihedral group of the square acting on the two trailing (spatial) axes.
# Each entry maps to (forward, inverse).
def _rot(k):
    return (lambda a: np.rot90(a, k, axes=(-2, -1)), lambda a: np.rot90(a, -k, axes=(-2, -1)))


def _transpose(a):
    return np.swapaxes(a, -2, -1)


def _antitranspose(a):
    return np.rot90(np.swapaxes(a, -2, -1), 2, axes=(-2, -1))


_ELEMENTS = {
    "identity": (lambda a: a, lambda a: a),
    "rot90": _rot(1),
    "rot180": _rot(2),
    "rot270": _rot(3),
    "flip_h": (lambda a: a[..., ::-1], lambda a: a[..., ::-1]),
    "flip_v": (lambda a: a[..., ::-1, :], lambda a: a[..., ::-1, :]),
    "transpose": (_transpose, _transpose),
    "antitranspose": (_antitranspose, _antitranspose),
}
# elements that keep a non-square grid's shape
FLIP_SUBGROUP = ("identity", "flip_h", "flip_v", "rot180")
DIHEDRAL = tuple(_ELEMENTS)


@dataclass
class EquivarianceGroup:
    """Random draws from the dihedral group of the square (one instance per chain)."""

    elements: tuple = DIHEDRAL
    seed: int | None = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        unknown = set(self.elements) - set(_ELEMENTS)
        if unknown:
            raise ValueError(f"unknown group elements: {sorted(unknown)}")
        self.rng = np.random.default_rng(self.seed)

    def forward(self, name, x):
        return np.ascontiguousarray(_ELEMENTS[name][0](x))

    def inverse(self, name, x):
        return np.ascontiguousarray(_ELEMENTS[name][1](x))

    def draw(self, shape) -> str:
        elems = self.elements
        if shape[-1] != shape[-2]:
            elems = tuple(e for e in elems if e in FLIP_SUBGROUP)
        return elems[self.rng.integers(len(elems))]


def equivariant_denoise(d: Denoiser, g: EquivarianceGroup, x, element: str | None = None):
    """T_g^{-1} D(T_g x) for one g drawn uniformly (or the given ``element``)."""
    x = np.asarray(x, dtype=np.float64)
    name = element if element is not None else g.draw(x.shape)
    return g.inverse(name, d.denoise(g.forward(name, x)))


class EquivariantDenoiser(Denoiser):
    """Denoiser randomized by a one-sample average over a transformation group."""

    def __init__(self, base: Denoiser, group: EquivarianceGroup):
        self.base = base
        self.group = group
        self.kind = base.kind
        self.epsilon = base.epsilon
        self.gamma = base.gamma
        self.lipschitz = base.lipschitz

    def denoise(self, x):
        return equivariant_denoise(self.base, self.group, x)
