"""Waveforms and the forward Malacopula filter.

A filter holds K branches of L coefficients. Branch k raises the input to the
k-th power and convolves it with its Bartlett-windowed coefficients; the branch
outputs are summed and the sum is normalized by its peak absolute value.
"""

import logging
from typing import Literal

import numpy as np
import scipy.signal
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import DEFAULT_SAMPLE_RATE, DIRECT_CONV_CROSSOVER, NORM_EPS
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ConvMethod = Literal["auto", "direct", "fft"]


def _frozen_array(value, ndim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


class Signal(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate_hz: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)

    @field_validator("samples", mode="before")
    @classmethod
    def _samples(cls, value) -> np.ndarray:
        return _frozen_array(value, 1, "samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    def with_samples(self, samples: np.ndarray) -> "Signal":
        return Signal(samples=samples, sample_rate_hz=self.sample_rate_hz)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0


class MalacopulaFilter(BaseModel):
    """Coefficient matrix c (K x L); the Bartlett window is implied by L."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coeffs: np.ndarray

    @field_validator("coeffs", mode="before")
    @classmethod
    def _coeffs(cls, value) -> np.ndarray:
        arr = _frozen_array(value, 2, "coeffs")
        K, L = arr.shape
        if K < 1 or L < 1:
            raise ValueError(f"filter needs K >= 1 and L >= 1, got shape {arr.shape}")
        if L % 2 == 0:
            raise ValueError(f"filter length L must be odd, got {L}")
        return arr

    @property
    def K(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def L(self) -> int:
        return int(self.coeffs.shape[1])

    @property
    def window(self) -> np.ndarray:
        return bartlett_window(self.L)

    def kernels(self) -> np.ndarray:
        """Effective impulse responses w * c_k, one row per branch."""
        return self.coeffs * self.window[np.newaxis, :]


def bartlett_window(L: int) -> np.ndarray:
    """Triangular window, peak 1 at the center; ``[1.0]`` for L = 1."""
    if L < 1:
        raise InvalidArgumentError(f"window length must be >= 1, got {L}")
    return np.bartlett(L).astype(np.float64)


def _power(samples: np.ndarray, k: int) -> np.ndarray:
    # iterated products keep the sign of negative samples exact
    out = samples.copy()
    for _ in range(k - 1):
        out *= samples
    return out


def branch_powers(samples: np.ndarray, K: int) -> list[np.ndarray]:
    """[x, x^2, ..., x^K] by successive multiplication."""
    powers = [samples.astype(np.float64, copy=True)]
    for _ in range(K - 1):
        powers.append(powers[-1] * samples)
    return powers


def polynomial_branch(x: Signal, k: int) -> Signal:
    if k < 1:
        raise InvalidArgumentError(f"branch order must be >= 1, got {k}")
    return x.with_samples(_power(x.samples, k))


def _convolve_same_array(samples: np.ndarray, h: np.ndarray, method: ConvMethod = "auto") -> np.ndarray:
    L = h.shape[0]
    if L < 1 or L % 2 == 0:
        raise InvalidArgumentError(f"kernel length must be odd and >= 1, got {L}")
    N = samples.shape[0]
    half = (L - 1) // 2
    # out[n] = sum_i h[i] * x[n + i - half], i.e. a full convolution with the reversed kernel
    reversed_h = h[::-1]
    if method == "auto":
        method = "direct" if N * L < DIRECT_CONV_CROSSOVER else "fft"
    if method == "direct":
        full = np.convolve(samples, reversed_h, mode="full")
    elif method == "fft":
        full = scipy.signal.oaconvolve(samples, reversed_h, mode="full")
    else:
        raise InvalidArgumentError(f"unknown convolution method '{method}'")
    return full[half : half + N]


def convolve_same(x: Signal, h, method: ConvMethod = "auto") -> Signal:
    """Centered same-length convolution with zero padding; a centered unit impulse is the identity."""
    kernel = np.asarray(h, dtype=np.float64)
    if kernel.ndim != 1:
        raise InvalidArgumentError(f"kernel must be 1-dimensional, got shape {kernel.shape}")
    return x.with_samples(_convolve_same_array(x.samples, kernel, method))


def _hammerstein_array(samples: np.ndarray, kernels: np.ndarray, method: ConvMethod = "auto") -> np.ndarray:
    out = np.zeros_like(samples, dtype=np.float64)
    for branch, h in zip(branch_powers(samples, kernels.shape[0]), kernels):
        out += _convolve_same_array(branch, h, method)
    return out


def hammerstein_forward(x: Signal, f: MalacopulaFilter, method: ConvMethod = "auto") -> Signal:
    """mc(x) = sum_k x^k conv (w * c_k); length is preserved."""
    if len(x) == 0:
        raise InvalidArgumentError("cannot filter an empty signal")
    return x.with_samples(_hammerstein_array(x.samples, f.kernels(), method))


def _linf_normalize_array(samples: np.ndarray) -> tuple[np.ndarray, float, bool]:
    peak = float(np.max(np.abs(samples)))
    if peak <= NORM_EPS:
        return samples, peak, False
    return samples / peak, peak, True


def linf_normalize(y: Signal) -> Signal:
    if len(y) == 0:
        raise InvalidArgumentError("cannot normalize an empty signal")
    normalized, peak, scaled = _linf_normalize_array(y.samples)
    if not scaled:
        logger.debug(f"Peak {peak:.3e} below guard {NORM_EPS}; passing signal through unscaled")
    return y.with_samples(normalized)


def malacopula_apply(x: Signal, f: MalacopulaFilter, method: ConvMethod = "auto") -> Signal:
    """The attack transform MC(x) = mc(x) / max|mc(x)|."""
    return linf_normalize(hammerstein_forward(x, f, method))
