"""Constrained plug-and-play Langevin kernels and chain orchestration.

Four kernels share one drift, grad log-likelihood + rho * prior score:

* ``rpnp-ula``    Euler-Maruyama step followed by reflection into a box
* ``ppnp-ula``    Euler-Maruyama step followed by projection onto a box
* ``rpnp-skrock`` s-stage stochastic Runge-Kutta-Chebyshev step with reflections
* ``pnp-mla``     Euler-Maruyama step in the dual space of a mirror map

The likelihood object only needs a ``grad_log_lik(x)`` method, so toy targets
with closed-form moments can be plugged in the same way as a PoissonModel.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .likelihood import PoissonModel
from .mirror import BurgMap, MirrorMap
from .priors import Denoiser, prior_score

log = logging.getLogger(__name__)

KERNELS = ("rpnp-ula", "ppnp-ula", "rpnp-skrock", "pnp-mla")
MLA_BETA = 1e-8
_NOISE_BATCH = 4096


class ChainDivergence(RuntimeError):
    """Raised when a drift or stage value becomes non-finite."""

    def __init__(self, message, iteration=None, stage=None):
        super().__init__(message)
        self.iteration = iteration
        self.stage = stage

    def __str__(self):
        where = []
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.stage is not None:
            where.append(f"stage {self.stage}")
        msg = super().__str__()
        return f"{msg} ({', '.join(where)})" if where else msg


@dataclass(frozen=True)
class BoxConstraint:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"box needs lower < upper, got [{self.lower}, {self.upper}]")

    def project(self, x):
        # minimum/maximum skip np.clip's dispatch overhead, which dominates on tiny arrays
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def reflect(self, x):
        a, b = self.lower, self.upper
        r = 2.0 * np.minimum(np.maximum(x, a), b) - x
        if r.min() < a or r.max() > b:
            # excursion beyond one box width: fold with the triangle wave of period 2(b - a)
            w = b - a
            out = (r < a) | (r > b)
            t = np.mod(x[out] - a, 2.0 * w)
            r[out] = a + w - np.abs(t - w)
        return r

    def contains(self, x) -> bool:
        return bool(np.all((x >= self.lower) & (x <= self.upper)))


def project_box(c: BoxConstraint, x):
    return c.project(np.asarray(x, dtype=np.float64))


def reflect_box(c: BoxConstraint, x):
    return c.reflect(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class ChainConfig:
    delta: float
    n_iter: int
    rho: float = 1.0
    s: int = 10
    eta: float = 0.05
    seed: int = 0
    burn_in: int = 0
    thin: int = 1
    chain_index: int = 0
    # dual components at or above -dual_floor are clamped before the Burg inverse
    dual_floor: float = 1e-8
    # beta used by PnP-MLA; None keeps the model's own beta
    mla_beta: float | None = MLA_BETA
    # reproduce the printed SKROCK box literally (minus on the likelihood term)
    literal_box_signs: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.n_iter < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need n_iter >= 0, burn_in >= 0, thin >= 1")
        if self.s < 2 or not self.eta > 0:
            raise ValueError("SKROCK needs s >= 2 and eta > 0")


@dataclass
class ChainState:
    x: np.ndarray
    k: int
    rng: np.random.Generator


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Counter-based stream for chain ``chain_index`` of a run seeded with ``seed``.

    The Philox key is the pair (seed, chain_index), so chains never share a stream.
    """
    key = np.array([seed % 2**64, chain_index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SkrockCoeffs:
    s: int
    eta: float
    l_s: float
    omega0: float
    omega1: float
    mu1: float
    nu1: float
    k1: float
    cheb: np.ndarray  # T_0..T_s at omega0
    mu: np.ndarray  # index j = 2..s used; entries 0, 1 are nan
    nu: np.ndarray
    k: np.ndarray


def chebyshev_t(n: int, x: float) -> np.ndarray:
    """T_0(x)..T_n(x) by the three-term recurrence."""
    t = np.empty(n + 1)
    t[0] = 1.0
    if n >= 1:
        t[1] = x
    for j in range(2, n + 1):
        t[j] = 2.0 * x * t[j - 1] - t[j - 2]
    return t


def chebyshev_t_prime(n: int, x: float) -> float:
    """T_n'(x) by differentiating the recurrence."""
    t = chebyshev_t(n, x)
    d = np.zeros(n + 1)
    if n >= 1:
        d[1] = 1.0
    for j in range(2, n + 1):
        d[j] = 2.0 * t[j - 1] + 2.0 * x * d[j - 1] - d[j - 2]
    return float(d[n])


def skrock_coeffs(s: int, eta: float) -> SkrockCoeffs:
    if s < 2:
        raise ValueError(f"SKROCK needs at least 2 stages, got s={s}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    l_s = (s - 0.5) ** 2 * (2.0 - 4.0 / 3.0 * eta) - 1.5
    w0 = 1.0 + eta / s**2
    t = chebyshev_t(s, w0)
    w1 = t[s] / chebyshev_t_prime(s, w0)
    mu = np.full(s + 1, np.nan)
    nu = np.full(s + 1, np.nan)
    k = np.full(s + 1, np.nan)
    for j in range(2, s + 1):
        mu[j] = 2.0 * w1 * t[j - 1] / t[j]
        nu[j] = 2.0 * w0 * t[j - 1] / t[j]
        k[j] = 1.0 - nu[j]
    return SkrockCoeffs(
        s=s, eta=eta, l_s=l_s, omega0=w0, omega1=w1,
        mu1=w1 / w0, nu1=s * w1 / 2.0, k1=s * w1 / w0,
        cheb=t, mu=mu, nu=nu, k=k,
    )


def _drift_parts(model, denoiser, rho, mirror=None):
    def lik(x):
        return model.grad_log_lik(x)

    if denoiser is None:
        return lik, None

    def prior(x):
        return rho * prior_score(denoiser, x, mirror)

    return lik, prior


def _checked(v, stage=None):
    if not np.isfinite(v).all():
        raise ChainDivergence("non-finite drift", stage=stage)
    return v


class _Kernel:
    """One kernel bound to a problem: ``step(x, z)`` returns the next state."""

    nfe_per_step = 1

    def step(self, x, z):
        raise NotImplementedError


class _EulerKernel(_Kernel):
    def __init__(self, model, denoiser, constraint, cfg, op):
        self.lik, self.prior = _drift_parts(model, denoiser, cfg.rho)
        self.delta = cfg.delta
        self.sq = np.sqrt(2.0 * cfg.delta)
        self.op = op
        self.nfe_per_step = 1 if denoiser is not None else 0

    def step(self, x, z):
        g = self.lik(x)
        if self.prior is not None:
            g = g + self.prior(x)
        _checked(g)
        x = x + self.delta * g + self.sq * z
        return self.op(x) if self.op is not None else x


class _SkrockKernel(_Kernel):
    def __init__(self, model, denoiser, constraint, cfg):
        self.c = skrock_coeffs(cfg.s, cfg.eta)
        self.lik, self.prior = _drift_parts(model, denoiser, cfg.rho)
        self.lik_sign = -1.0 if cfg.literal_box_signs else 1.0
        self.delta = cfg.delta
        self.sq = np.sqrt(2.0 * cfg.delta)
        self.refl = constraint.reflect if constraint is not None else (lambda v: v)
        self.nfe_per_step = cfg.s if denoiser is not None else 0

    def _drift(self, x, stage):
        g = self.lik_sign * self.lik(x)
        if self.prior is not None:
            g = g + self.prior(x)
        return _checked(g, stage)

    def step(self, x, z):
        c, d = self.c, self.delta
        noise = self.sq * z
        w1 = self.refl(x + c.nu1 * noise)
        k_prev2 = x
        k_prev = self.refl(x + c.mu1 * d * self._drift(w1, 1) + c.k1 * noise)
        for j in range(2, c.s + 1):
            kj = c.mu[j] * d * self._drift(k_prev, j) + c.nu[j] * k_prev + c.k[j] * k_prev2
            if not np.all(np.isfinite(kj)):
                raise ChainDivergence("non-finite stage value", stage=j)
            k_prev2, k_prev = k_prev, self.refl(kj)
        return k_prev


class _MirrorKernel(_Kernel):
    def __init__(self, model, denoiser, mirror, cfg):
        self.mirror = mirror
        self.lik, self.prior = _drift_parts(model, denoiser, cfg.rho, mirror)
        self.delta = cfg.delta
        self.sq = np.sqrt(2.0 * cfg.delta)
        self.floor = -cfg.dual_floor if isinstance(mirror, BurgMap) else None
        self.nfe_per_step = 1 if denoiser is not None else 0

    def step(self, x, z):
        m = self.mirror
        g = self.lik(x)
        if self.prior is not None:
            g = g + self.prior(x)
        _checked(g)
        y = m.grad(x) + self.delta * g + self.sq * m.hess_sqrt_noise(x, z)
        if not np.all(np.isfinite(y)):
            raise ChainDivergence("non-finite dual value")
        if self.floor is not None:
            y = np.minimum(y, self.floor)
        return m.grad_conj(y)


def _mla_model(model, cfg):
    if cfg.mla_beta is not None and isinstance(model, PoissonModel):
        return model.with_beta(cfg.mla_beta)
    return model


def make_kernel(name, model, denoiser, cfg, constraint=None, mirror=None) -> _Kernel:
    if name == "rpnp-ula":
        return _EulerKernel(model, denoiser, constraint, cfg, constraint.reflect if constraint else None)
    if name == "ppnp-ula":
        return _EulerKernel(model, denoiser, constraint, cfg, constraint.project if constraint else None)
    if name == "rpnp-skrock":
        return _SkrockKernel(model, denoiser, constraint, cfg)
    if name == "pnp-mla":
        return _MirrorKernel(_mla_model(model, cfg), denoiser, mirror or BurgMap(), cfg)
    raise ValueError(f"unknown kernel {name!r}; choose from {KERNELS}")


def _single_step(name, state, model, denoiser, cfg, constraint=None, mirror=None):
    kern = make_kernel(name, model, denoiser, cfg, constraint, mirror)
    z = state.rng.standard_normal(state.x.shape)
    try:
        x = kern.step(state.x, z)
    except ChainDivergence as exc:
        exc.iteration = state.k + 1
        raise
    return ChainState(x=x, k=state.k + 1, rng=state.rng)


def step_rpnp_ula(state, model, denoiser, c, cfg) -> ChainState:
    return _single_step("rpnp-ula", state, model, denoiser, cfg, constraint=c)


def step_ppnp_ula(state, model, denoiser, c, cfg) -> ChainState:
    return _single_step("ppnp-ula", state, model, denoiser, cfg, constraint=c)


def step_rpnp_skrock(state, model, denoiser, c, cfg) -> ChainState:
    return _single_step("rpnp-skrock", state, model, denoiser, cfg, constraint=c)


def step_pnp_mla(state, model, denoiser, mirror, cfg) -> ChainState:
    return _single_step("pnp-mla", state, model, denoiser, cfg, mirror=mirror)


# ---------------------------------------------------------------- step sizes


def delta_l(model: PoissonModel, denoiser: Denoiser | None) -> float:
    """1 / (L_lik + L_denoiser / eps), the conservative PnP-ULA step bound."""
    lip = model.lipschitz_bound()
    if denoiser is not None:
        eps = denoiser.epsilon if not denoiser.is_bregman else 1.0 / denoiser.gamma
        lip += denoiser.lipschitz / eps
    return 1.0 / lip


def resolve_delta(kernel: str, c: float, model, denoiser, s=10, eta=0.05) -> float:
    """delta = c * delta_L for ULA/MLA kernels, c * l_s * delta_L for SKROCK."""
    base = delta_l(model, denoiser)
    if kernel == "rpnp-skrock":
        return c * skrock_coeffs(s, eta).l_s * base
    return c * base


def _warn_step_size(kernel, model, denoiser, cfg):
    if not isinstance(model, PoissonModel) or model.beta <= 0 or kernel == "pnp-mla":
        return
    bound = delta_l(model, denoiser)
    if kernel == "rpnp-skrock":
        bound *= skrock_coeffs(cfg.s, cfg.eta).l_s
    if cfg.delta > bound:
        log.warning("step size %.3g exceeds the theoretical bound %.3g (x%.3g)", cfg.delta, bound, cfg.delta / bound)


# ---------------------------------------------------------------- orchestration


def initial_state(kernel: str, model: PoissonModel, constraint: BoxConstraint | None) -> np.ndarray:
    """A^T y / (alpha ||A||^2), projected into the box (Euclidean) or floored at 0.01 (mirror)."""
    x0 = model.operator.adjoint(model.y) / (model.alpha * model.operator.norm_sq())
    if kernel == "pnp-mla":
        return np.maximum(x0, 0.01)
    return constraint.project(x0) if constraint is not None else x0


@dataclass
class ChainReport:
    kernel: str
    delta: float
    n_iter: int
    n_samples: int
    nfe: int
    wall_clock: float
    x_final: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def iterations_per_sec(self) -> float:
        return self.n_iter / self.wall_clock if self.wall_clock > 0 else float("inf")

    def as_dict(self) -> dict:
        d = {
            "kernel": self.kernel,
            "status": self.status,
            "delta": repr(self.delta),
            "n_iter": self.n_iter,
            "n_samples": self.n_samples,
            "nfe": self.nfe,
            "wall_clock_s": f"{self.wall_clock:.3f}",
            "iterations_per_sec": f"{self.iterations_per_sec:.1f}",
        }
        d.update(self.extra)
        return d


def run_chain(
    kernel: str,
    model,
    denoiser: Denoiser | None,
    cfg: ChainConfig,
    accumulators=(),
    constraint: BoxConstraint | None = None,
    mirror: MirrorMap | None = None,
    x0=None,
    callback=None,
) -> ChainReport:
    """Run ``cfg.n_iter`` iterations, feeding post-burn-in thinned samples to ``accumulators``.

    ``callback(k, x)`` is invoked after every iteration. Noise is drawn in
    batches from the chain's Philox stream, which yields the same numbers as
    one draw per step.
    """
    kern = make_kernel(kernel, model, denoiser, cfg, constraint, mirror)
    if x0 is None:
        x = initial_state(kernel, model, constraint)
    else:
        x = np.array(x0, dtype=np.float64)
    _warn_step_size(kernel, model, denoiser, cfg)
    rng = chain_rng(cfg.seed, cfg.chain_index)
    accumulators = list(accumulators)
    n_samples = 0
    shape = x.shape
    t0 = time.perf_counter()
    k = 0
    try:
        while k < cfg.n_iter:
            batch = min(_NOISE_BATCH, cfg.n_iter - k)
            zs = rng.standard_normal((batch,) + shape)
            for z in zs:
                k += 1
                x = kern.step(x, z)
                if k > cfg.burn_in and (k - cfg.burn_in) % cfg.thin == 0:
                    n_samples += 1
                    for acc in accumulators:
                        acc.update(x)
                if callback is not None:
                    callback(k, x)
    except ChainDivergence as exc:
        exc.iteration = k
        raise
    wall = time.perf_counter() - t0
    report = ChainReport(
        kernel=kernel, delta=cfg.delta, n_iter=cfg.n_iter, n_samples=n_samples,
        nfe=cfg.n_iter * kern.nfe_per_step, wall_clock=wall, x_final=x,
    )
    for acc in accumulators:
        if hasattr(acc, "variance"):
            report.mean = acc.mean.copy() if n_samples else None
            report.std = np.sqrt(acc.variance()) if n_samples > 1 else None
            break
    if n_samples == 0:
        report.status = "insufficient samples"
    return report


def run_chains(kernel, model, denoiser, cfg, n_chains, make_accumulators, workers=1, **kwargs):
    """Run independent chains (chain_index 0..n_chains-1) and return (reports, per-chain accumulators).

    ``make_accumulators()`` builds a fresh accumulator list for each chain;
    merge them afterwards with ``WelfordAccumulator.merge``.
    """
    accs = [list(make_accumulators()) for _ in range(n_chains)]

    def one(i):
        return run_chain(kernel, model, denoiser, replace(cfg, chain_index=i), accs[i], **kwargs)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, range(n_chains)))
    else:
        reports = [one(i) for i in range(n_chains)]
    return reports, accs

