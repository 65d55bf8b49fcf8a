"""Per-(speaker, attack) filter optimisation with Adam."""

import logging
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .config import EmbedderConfig, TrainingConfig
from .embedder import Embedding
from .errors import InvalidArgumentError
from .gradients import Gradient, backward, forward_with_tape
from .hammerstein import MalacopulaFilter, Signal, _frozen_array
from .seeding import make_rng

logger = logging.getLogger(__name__)

# init_filter and the epoch shuffle draw from separate streams of the same seed
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1
INIT_NOISE = 1e-4


class AdamState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @field_validator("m", "v", mode="before")
    @classmethod
    def _moments(cls, value) -> np.ndarray:
        return _frozen_array(value, 2, "Adam moment")

    @classmethod
    def zeros(cls, K: int, L: int) -> "AdamState":
        return cls(m=np.zeros((K, L)), v=np.zeros((K, L)))


class FilterCheckpoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    batch: int | None = None
    filter: MalacopulaFilter
    mean_loss: float


def init_filter(K: int, L: int, seed: int) -> MalacopulaFilter:
    """Identity first branch (center tap 1) plus seeded noise of magnitude <= 1e-4 on the others."""
    if K < 1:
        raise InvalidArgumentError(f"branch count must be >= 1, got {K}")
    if L < 1 or L % 2 == 0:
        raise InvalidArgumentError(f"filter length must be odd and >= 1, got {L}")
    coeffs = np.zeros((K, L))
    coeffs[0, (L - 1) // 2] = 1.0
    if K > 1:
        coeffs[1:] = make_rng(seed, _INIT_STREAM).uniform(-INIT_NOISE, INIT_NOISE, size=(K - 1, L))
    return MalacopulaFilter(coeffs=coeffs)


def adam_step(
    f: MalacopulaFilter, g: Gradient, st: AdamState, cfg: TrainingConfig
) -> tuple[MalacopulaFilter, AdamState]:
    """Bias-corrected Adam update; returns the new filter and state."""
    if g.d_coeffs.shape != f.coeffs.shape or st.m.shape != f.coeffs.shape:
        raise InvalidArgumentError(
            f"shape mismatch: filter {f.coeffs.shape}, gradient {g.d_coeffs.shape}, state {st.m.shape}"
        )
    grad = g.d_coeffs
    t = st.step + 1
    m = cfg.adam_beta1 * st.m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * st.v + (1.0 - cfg.adam_beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    coeffs = f.coeffs - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return MalacopulaFilter(coeffs=coeffs), AdamState(m=m, v=v, step=t)


def loss_and_gradient(
    batch: Sequence[Signal], f: MalacopulaFilter, target: Embedding, emb: EmbedderConfig
) -> tuple[list[float], Gradient]:
    """Per-utterance losses and the arithmetic mean gradient over the batch.

    Utterances are processed independently, so lengths may differ.
    """
    losses = []
    total = np.zeros_like(f.coeffs)
    for utt in batch:
        loss, tape = forward_with_tape(utt, f, emb, target)
        losses.append(loss)
        total += backward(tape).d_coeffs
    return losses, Gradient(d_coeffs=total / len(batch))


def train_filter(
    spoof_utts: Sequence[Signal],
    enrol_embedding: Embedding,
    cfg: TrainingConfig,
    f_A: EmbedderConfig,
    on_checkpoint: Callable[[FilterCheckpoint], None] | None = None,
) -> list[FilterCheckpoint]:
    """Optimise one filter on all spoofs of a (speaker, attack) pair.

    One checkpoint per epoch (or per batch with ``checkpoint_every="batch"``);
    the embedder is only read, never updated.
    """
    if not spoof_utts:
        raise InvalidArgumentError("train_filter needs at least one spoofed utterance")

    f = init_filter(cfg.K, cfg.L, cfg.seed)
    state = AdamState.zeros(cfg.K, cfg.L)
    rng = make_rng(cfg.seed, _SHUFFLE_STREAM)
    checkpoints: list[FilterCheckpoint] = []

    def emit(checkpoint: FilterCheckpoint) -> None:
        checkpoints.append(checkpoint)
        if on_checkpoint is not None:
            on_checkpoint(checkpoint)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(spoof_utts))
        epoch_losses: list[float] = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [spoof_utts[i] for i in order[start : start + cfg.batch_size]]
            losses, grad = loss_and_gradient(batch, f, enrol_embedding, f_A)
            f, state = adam_step(f, grad, state, cfg)
            epoch_losses.extend(losses)
            if cfg.checkpoint_every == "batch":
                emit(FilterCheckpoint(epoch=epoch, batch=b, filter=f, mean_loss=float(np.mean(losses))))
        mean_loss = float(np.mean(epoch_losses))
        logger.debug(f"Epoch {epoch}/{cfg.epochs}: mean loss {mean_loss:.6f}")
        if cfg.checkpoint_every == "epoch":
            emit(FilterCheckpoint(epoch=epoch, filter=f, mean_loss=mean_loss))
    return checkpoints
