import numpy as np

from malacopula.hammerstein import Signal
from malacopula.seeding import make_rng


def random_signal(n: int, seed: int, sample_rate_hz: int = 16000) -> Signal:
    return Signal(samples=make_rng(seed).uniform(-1.0, 1.0, n), sample_rate_hz=sample_rate_hz)


def tone(freq_hz: float, seconds: float = 1.0, phase: float = 0.0, noise_seed: int | None = None) -> Signal:
    t = np.arange(int(seconds * 16000)) / 16000
    x = 0.9 * np.sin(2 * np.pi * freq_hz * t + phase)
    if noise_seed is not None:
        x = x + 1e-3 * make_rng(noise_seed).standard_normal(t.shape[0])
    return Signal(samples=x)
