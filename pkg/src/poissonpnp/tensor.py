"""Image tensors and linear forward operators.

Images are float64 numpy arrays of shape ``(channels, height, width)``.
Operators act channel-wise on such arrays; the blur operator uses circular
(periodic) boundaries so that its adjoint and spectral norm are exact.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import scipy.fft as sfft


class ShapeError(ValueError):
    pass


def as_image(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a finite float64 array of shape (C, H, W).

    2D input is promoted to a single channel. If ``shape`` is given the flat
    data is reshaped row-major to it.
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"data of length {arr.size} cannot fill shape {shape}")
        arr = arr.reshape(shape)
    elif arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) image, got array of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite entries")
    return arr


def _check_shape(x: np.ndarray, expected: tuple, what: str) -> None:
    if x.shape != expected:
        raise ShapeError(f"{what}: got shape {x.shape}, operator expects {expected}")


class ForwardOperator:
    """Linear map between image spaces.

    Subclasses implement ``_apply`` and ``_adjoint``; ``norm_sq`` defaults to
    power iteration on A^T A.
    """

    in_shape: tuple
    out_shape: tuple

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _check_shape(x, self.in_shape, "apply")
        return self._apply(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        _check_shape(y, self.out_shape, "adjoint")
        return self._adjoint(y)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    def norm_sq(self) -> float:
        return power_iteration_norm_sq(self)


def power_iteration_norm_sq(op: ForwardOperator, tol=1e-9, max_iter=10_000, seed=0) -> float:
    """Estimate ||A^T A||_2 by power iteration.

    Emits a RuntimeWarning and returns the current estimate if ``max_iter``
    is hit before the relative change drops below ``tol``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = op._adjoint(op._apply(v))
        new = float(np.vdot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if est > 0 and abs(new - est) <= tol * abs(new):
            return new
        est = new
    warnings.warn("power iteration hit its iteration cap before converging", RuntimeWarning)
    return est


class IdentityOperator(ForwardOperator):
    def __init__(self, shape):
        self.in_shape = self.out_shape = tuple(shape)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()

    def norm_sq(self) -> float:
        return 1.0


class MatrixOperator(ForwardOperator):
    """Dense matrix acting on the flattened image; for tiny test problems."""

    def __init__(self, matrix, in_shape, out_shape=None):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape) if out_shape is not None else (1, 1, self.matrix.shape[0])
        if self.matrix.shape != (int(np.prod(self.out_shape)), int(np.prod(self.in_shape))):
            raise ShapeError(
                f"matrix {self.matrix.shape} incompatible with shapes {self.in_shape} -> {self.out_shape}"
            )

    def _apply(self, x):
        return (self.matrix @ x.ravel()).reshape(self.out_shape)

    def _adjoint(self, y):
        return (self.matrix.T @ y.ravel()).reshape(self.in_shape)

    def norm_sq(self) -> float:
        return float(np.linalg.norm(self.matrix, 2) ** 2)


def _embed_kernel(kernel: np.ndarray, hw: tuple) -> np.ndarray:
    """Place a center-anchored kernel on an HxW periodic grid with its center at (0, 0)."""
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    rows = (np.arange(kh) - ch) % hw[0]
    cols = (np.arange(kw) - cw) % hw[1]
    grid = np.zeros(hw)
    np.add.at(grid, (rows[:, None], cols[None, :]), kernel)
    return grid


class BlurOperator(ForwardOperator):
    """Circular convolution with a point-spread function, applied per channel."""

    def __init__(self, kernel, shape):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be 2D")
        if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            kernel = pad_to_odd(kernel)
        self.kernel = kernel
        self.in_shape = self.out_shape = tuple(shape)
        hw = self.in_shape[1:]
        self.freq_response = sfft.rfft2(_embed_kernel(kernel, hw))
        self._conj_response = np.conj(self.freq_response)
        self._full_response = sfft.fft2(_embed_kernel(kernel, hw))

    def _apply(self, x):
        return sfft.irfft2(sfft.rfft2(x) * self.freq_response, s=x.shape[1:])

    def _adjoint(self, y):
        return sfft.irfft2(sfft.rfft2(y) * self._conj_response, s=y.shape[1:])

    def norm_sq(self) -> float:
        return float(np.max(np.abs(self._full_response) ** 2))


def pad_to_odd(kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    return np.pad(kernel, ((0, 1 - kh % 2), (0, 1 - kw % 2)))


def normalize_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError(f"kernel must be 2D, got shape {kernel.shape}")
    if np.any(kernel < 0):
        raise ValueError("kernel has negative entries")
    total = kernel.sum()
    if total <= 0:
        raise ValueError("kernel is all zeros")
    return pad_to_odd(kernel / total)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return normalize_kernel(np.outer(g, g))


def delta_kernel(size: int = 1) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


_IMAGE_SUFFIXES = {".png", ".pgm", ".pnm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


def load_kernel(path) -> np.ndarray:
    """Read a blur kernel from a text grid or a grayscale image, normalized to sum 1."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"kernel file not found: {path}")
    if path.suffix.lower() in _IMAGE_SUFFIXES:
        from PIL import Image

        with Image.open(path) as im:
            raw = np.asarray(im.convert("L"), dtype=np.float64)
    else:
        text = path.read_text()
        delimiter = "," if "," in text else None
        try:
            raw = np.loadtxt(path, delimiter=delimiter, ndmin=2)
        except ValueError as exc:
            raise ValueError(f"cannot parse kernel grid in {path}: {exc}") from exc
    return normalize_kernel(raw)
