"""Differentiable spectral speaker embedders.

Pipeline: Hann-windowed frames -> power spectrum -> triangular mel filterbank
-> log(MEL_EPS + .) -> per-band mean and standard deviation over frames ->
per-half centering -> fixed seeded projection. Every stage is smooth, so
``embedding_vjp`` differentiates the whole chain analytically.
"""

import functools
import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, field_validator

from .config import MEL_EPS, STD_EPS, EmbedderConfig
from .errors import InvalidArgumentError
from .hammerstein import Signal, _frozen_array
from .seeding import make_rng

logger = logging.getLogger(__name__)


class Embedding(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, value) -> np.ndarray:
        return _frozen_array(value, 1, "embedding values")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=32)
def mel_filterbank(cfg: EmbedderConfig) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist."""
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(cfg.sample_rate_hz / 2), cfg.mel_bands + 2))
    bank = np.zeros((cfg.mel_bands, n_bins))
    for b in range(cfg.mel_bands):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        bank[b] = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


@functools.lru_cache(maxsize=32)
def projection_matrix(cfg: EmbedderConfig) -> np.ndarray:
    n_stats = 2 * cfg.mel_bands
    W = make_rng(cfg.projection_seed).standard_normal((cfg.embedding_dim, n_stats)) / np.sqrt(n_stats)
    W.setflags(write=False)
    return W


@functools.lru_cache(maxsize=32)
def _hann(frame_length: int) -> np.ndarray:
    w = scipy.signal.get_window("hann", frame_length, fftbins=True)
    w.setflags(write=False)
    return w


def config_hash(cfg: EmbedderConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode("utf-8")).hexdigest()


def projection_hash(cfg: EmbedderConfig) -> str:
    return hashlib.sha256(projection_matrix(cfg).tobytes()).hexdigest()


@dataclass
class EmbedderCache:
    """Forward intermediates kept for the reverse pass."""

    cfg: EmbedderConfig
    n_samples: int
    spectrum: np.ndarray  # (T, B) complex DFT of windowed frames
    mel: np.ndarray  # (T, M) mel band powers
    log_mel: np.ndarray  # (T, M)
    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)
    embedding: np.ndarray  # (D,)

    @property
    def n_frames(self) -> int:
        return int(self.mel.shape[0])


def _frame_starts(n_samples: int, cfg: EmbedderConfig) -> np.ndarray:
    n_frames = 1 + (n_samples - cfg.frame_length) // cfg.hop_length
    return np.arange(n_frames) * cfg.hop_length


def _embed_array(samples: np.ndarray, cfg: EmbedderConfig) -> EmbedderCache:
    if samples.shape[0] < cfg.frame_length:
        raise InvalidArgumentError(
            f"signal of {samples.shape[0]} samples is shorter than one frame ({cfg.frame_length})"
        )
    frames = sliding_window_view(samples, cfg.frame_length)[:: cfg.hop_length] * _hann(cfg.frame_length)
    spectrum = scipy.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg).T
    log_mel = np.log(MEL_EPS + mel)
    mean = log_mel.mean(axis=0)
    std = np.sqrt(((log_mel - mean) ** 2).mean(axis=0) + STD_EPS)
    stats = np.concatenate([mean - mean.mean(), std - std.mean()])
    embedding = projection_matrix(cfg) @ stats
    return EmbedderCache(
        cfg=cfg,
        n_samples=int(samples.shape[0]),
        spectrum=spectrum,
        mel=mel,
        log_mel=log_mel,
        mean=mean,
        std=std,
        embedding=embedding,
    )


def _check_rate(x: Signal, cfg: EmbedderConfig) -> None:
    if x.sample_rate_hz != cfg.sample_rate_hz:
        raise InvalidArgumentError(
            f"signal sample rate {x.sample_rate_hz} Hz does not match embedder rate {cfg.sample_rate_hz} Hz"
        )


def embed_with_cache(x: Signal, cfg: EmbedderConfig) -> tuple[Embedding, EmbedderCache]:
    _check_rate(x, cfg)
    cache = _embed_array(x.samples, cfg)
    return Embedding(values=cache.embedding), cache


def extract_embedding(x: Signal, cfg: EmbedderConfig) -> Embedding:
    return embed_with_cache(x, cfg)[0]


def embedding_vjp(cache: EmbedderCache, grad_embedding: np.ndarray) -> np.ndarray:
    """Pull d(loss)/d(embedding) back to d(loss)/d(samples)."""
    cfg = cache.cfg
    M = cfg.mel_bands
    T = cache.n_frames

    g_stats = projection_matrix(cfg).T @ grad_embedding
    g_mean = g_stats[:M] - g_stats[:M].mean()
    g_std = g_stats[M:] - g_stats[M:].mean()

    g_var = g_std / (2.0 * cache.std)
    g_log = (g_mean[np.newaxis, :] + 2.0 * g_var[np.newaxis, :] * (cache.log_mel - cache.mean)) / T
    g_mel = g_log / (MEL_EPS + cache.mel)
    g_power = g_mel @ mel_filterbank(cfg)

    # P = |X|^2 on the one-sided bins: dP/dframe[j] = 2 Re(X[k] e^{+2 pi i jk/n})
    weighted = 2.0 * g_power * cache.spectrum
    g_frames = cfg.fft_size * scipy.fft.ifft(weighted, n=cfg.fft_size, axis=1).real[:, : cfg.frame_length]
    g_frames *= _hann(cfg.frame_length)

    g_samples = np.zeros(cache.n_samples)
    starts = _frame_starts(cache.n_samples, cfg)
    # indices are unique for a fixed offset, so fancy-index accumulation is exact
    for offset in range(cfg.frame_length):
        g_samples[starts + offset] += g_frames[:, offset]
    return g_samples


def _as_vector(value) -> np.ndarray:
    if isinstance(value, Embedding):
        return value.values
    return np.asarray(value, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    u, v = _as_vector(a), _as_vector(b)
    if u.shape != v.shape:
        raise InvalidArgumentError(f"embedding dimensions differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InvalidArgumentError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_similarity_grad(a, b) -> tuple[float, np.ndarray]:
    """Cosine similarity and its gradient with respect to the first argument."""
    u, v = _as_vector(a), _as_vector(b)
    cs = cosine_similarity(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    return cs, v / (nu * nv) - cs * u / (nu * nu)


def average_enrolment(embeddings: Sequence[Embedding]) -> Embedding:
    """Elementwise mean; a cancelling set yields a zero vector that cosine scoring rejects."""
    if not embeddings:
        raise InvalidArgumentError("cannot average an empty list of enrolment embeddings")
    dims = {e.dim for e in embeddings}
    if len(dims) != 1:
        raise InvalidArgumentError(f"enrolment embeddings have mixed dimensions {sorted(dims)}")
    return Embedding(values=np.mean(np.stack([e.values for e in embeddings]), axis=0))


def embed_many(signals: Sequence[Signal], cfg: EmbedderConfig) -> list[Embedding]:
    return [extract_embedding(s, cfg) for s in signals]
