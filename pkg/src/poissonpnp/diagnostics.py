"""Streaming posterior statistics, mixing diagnostics and image metrics."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.signal import convolve2d


class DegenerateSeriesWarning(RuntimeWarning):
    pass


class WelfordAccumulator:
    """Single-pass mean and sum of squared deviations, element-wise."""

    def __init__(self, shape=None):
        self.shape = tuple(shape) if shape is not None else None
        self.count = 0
        self.mean = None
        self.m2 = None

    def update(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.mean is None:
            if self.shape is not None and x.shape != self.shape:
                raise ValueError(f"sample shape {x.shape} != accumulator shape {self.shape}")
            self.shape = x.shape
            self.count = 1
            self.mean = x.copy()
            self.m2 = np.zeros_like(x)
            return self
        if x.shape != self.shape:
            raise ValueError(f"sample shape {x.shape} != accumulator shape {self.shape}")
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)
        return self

    def variance(self, ddof=1):
        if self.count <= ddof:
            raise ValueError(f"need more than {ddof} samples for a variance")
        return self.m2 / (self.count - ddof)

    def std(self, ddof=1):
        return np.sqrt(self.variance(ddof))

    def merge(self, other: "WelfordAccumulator") -> "WelfordAccumulator":
        """Combine two accumulators (pairwise update of Chan et al.)."""
        out = WelfordAccumulator(self.shape or other.shape)
        if other.count == 0:
            out.count, out.mean, out.m2 = self.count, _copy(self.mean), _copy(self.m2)
            return out
        if self.count == 0:
            out.count, out.mean, out.m2 = other.count, _copy(other.mean), _copy(other.m2)
            return out
        n = self.count + other.count
        d = other.mean - self.mean
        out.count = n
        out.mean = self.mean + d * (other.count / n)
        out.m2 = self.m2 + other.m2 + d * d * (self.count * other.count / n)
        return out


def _copy(a):
    return None if a is None else a.copy()


def welford_update(acc: WelfordAccumulator, x) -> WelfordAccumulator:
    return acc.update(x)


def block_mean(x, s: int):
    """Average over non-overlapping s x s blocks of the trailing two axes, cropping remainders."""
    if s == 1:
        return x
    h, w = x.shape[-2] // s * s, x.shape[-1] // s * s
    x = x[..., :h, :w]
    return x.reshape(x.shape[:-2] + (h // s, s, w // s, s)).mean(axis=(-3, -1))


class MultiscaleStd:
    """One Welford accumulator per block scale; std maps of block-mean samples.

    Images whose sides are not multiples of a scale are cropped at the
    bottom/right for that scale (listed in ``cropped``).
    """

    def __init__(self, scales=(1, 2, 4, 8)):
        self.scales = tuple(int(s) for s in scales)
        self.accs = {s: WelfordAccumulator() for s in self.scales}
        self.cropped: list[int] = []

    def update(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.count == 0:
            self.cropped = [s for s in self.scales if x.shape[-2] % s or x.shape[-1] % s]
        for s, acc in self.accs.items():
            acc.update(block_mean(x, s))
        return self

    @property
    def count(self):
        return self.accs[self.scales[0]].count

    def std_maps(self) -> dict:
        return {s: acc.std() for s, acc in self.accs.items()}


def multiscale_std(samples, scales=(1, 2, 4, 8)) -> dict:
    ms = MultiscaleStd(scales)
    for x in samples:
        ms.update(x)
    return ms.std_maps()


class TraceBuffer:
    """Stores the first ``capacity`` samples of selected pixels (flat indices)."""

    def __init__(self, capacity: int, indices=None):
        self.capacity = int(capacity)
        self.indices = None if indices is None else np.asarray(indices, dtype=np.intp)
        self._buf = None
        self.length = 0

    def update(self, x):
        flat = np.asarray(x).ravel()
        if self._buf is None:
            if self.indices is None:
                self.indices = np.arange(flat.size)
            if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= flat.size):
                raise IndexError("tracked pixel index outside the image")
            self._buf = np.empty((self.capacity, self.indices.size))
        if self.length < self.capacity:
            self._buf[self.length] = flat[self.indices]
            self.length += 1
        return self

    def series(self, pixel: int) -> np.ndarray:
        """Trace of flat pixel index ``pixel``."""
        (pos,) = np.nonzero(self.indices == pixel)
        if pos.size == 0:
            raise KeyError(f"pixel {pixel} is not tracked")
        return self._buf[: self.length, pos[0]].copy()

    def array(self) -> np.ndarray:
        return self._buf[: self.length].copy()


def acf(series, max_lag: int) -> np.ndarray:
    """Biased autocorrelation c(l)/c(0) via a zero-padded FFT of the centred series.

    A constant series gives zeros beyond lag 0 and a DegenerateSeriesWarning.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n <= max_lag:
        raise ValueError(f"series of length {n} too short for max_lag {max_lag}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series has non-finite values")
    x = x - x.mean()
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    c0 = np.dot(x, x)
    if c0 == 0.0:
        warnings.warn("zero-variance series; ACF is degenerate", DegenerateSeriesWarning)
        return out
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    c = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    out[1:] = c[1:] / c[0]
    return out


def integrated_autocorr_time(series, window: float = 5.0) -> float:
    """tau = 1 + 2 sum_l rho(l), truncated at the first lag M with M >= window * tau(M)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    max_lag = min(x.size - 1, 1 << 16)
    while True:
        rho = acf(x, max_lag)
        tau = 2.0 * np.cumsum(rho) - 1.0
        ok = np.arange(max_lag + 1) >= window * tau
        if ok.any():
            return float(max(tau[int(np.argmax(ok))], 1e-12))
        if max_lag == x.size - 1:
            warnings.warn("series too short for a reliable autocorrelation time", DegenerateSeriesWarning)
            return float(tau[-1])
        max_lag = min(x.size - 1, 4 * max_lag)


def mc_standard_error(samples) -> np.ndarray:
    """Per-column Monte Carlo standard error of the mean, sd * sqrt(tau / n)."""
    s = np.asarray(samples, dtype=np.float64)
    s = s.reshape(len(s), -1)
    taus = np.array([integrated_autocorr_time(s[:, j]) for j in range(s.shape[1])])
    return s.std(axis=0, ddof=1) * np.sqrt(taus / len(s))


def select_extreme_pixels(acc: WelfordAccumulator) -> tuple[int, int]:
    """Flat indices of the largest (slow) and smallest (fast) empirical variance."""
    var = acc.variance().ravel()
    return int(np.argmax(var)), int(np.argmin(var))


def psnr(xhat, x, max_val: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(xhat, dtype=np.float64) - np.asarray(x, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 20.0 * np.log10(max_val / np.sqrt(mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(xhat, x, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM with a Gaussian window; multi-channel inputs are channel-averaged.

    Accepts (H, W) or (C, H, W). Images smaller than the window use global statistics.
    """
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = _gaussian_window(win_size, sigma)
    scores = []
    for ac, bc in zip(a, b):
        if min(ac.shape) < win_size:
            mx, my = ac.mean(), bc.mean()
            vx, vy = ac.var(), bc.var()
            cxy = np.mean((ac - mx) * (bc - my))
            s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
            scores.append(float(s))
            continue

        def filt(img):
            return convolve2d(img, win, mode="valid")

        mx, my = filt(ac), filt(bc)
        vx = filt(ac * ac) - mx * mx
        vy = filt(bc * bc) - my * my
        cxy = filt(ac * bc) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        scores.append(float(s.mean()))
    return float(np.mean(scores))


def log_grid(n: int, points: int = 50) -> np.ndarray:
    """Roughly log-spaced distinct integers in [1, n]."""
    if n < 1:
        return np.zeros(0, dtype=int)
    return np.unique(np.round(np.logspace(0, np.log10(n), points)).astype(int))


def nfe_to_fraction_of_peak(nfe, psnr_curve, fraction: float = 0.98):
    """First NFE at which the (cumulative-mean) PSNR curve reaches ``fraction`` of its peak."""
    psnr_curve = np.asarray(psnr_curve, dtype=np.float64)
    finite = np.isfinite(psnr_curve)
    if not finite.any():
        return None
    peak = psnr_curve[finite].max()
    hit = np.nonzero(finite & (psnr_curve >= fraction * peak))[0]
    return int(np.asarray(nfe)[hit[0]])
