"""Checkpoint selection under a second embedder by signed Wasserstein distance.

Scores are cosine similarities. Selection works in distance space
(d = 1 - CS): a positive signed value means the filtered spoofs sit further
from the enrolment than bona fide target trials do, so smaller is better.
"""

import logging
from typing import Literal, Sequence

import numpy as np
import scipy.stats
from pydantic import BaseModel, field_validator

from .config import EmbedderConfig
from .embedder import Embedding, average_enrolment, cosine_similarity, embed_many, extract_embedding
from .errors import InvalidArgumentError
from .hammerstein import MalacopulaFilter, Signal, malacopula_apply
from .trainer import FilterCheckpoint

logger = logging.getLogger(__name__)

ScoreLabel = Literal["target-bona-fide", "spoof-filtered", "spoof-baseline"]
ScoreSpace = Literal["distance", "similarity"]


class ScoreDistribution(BaseModel):
    scores: list[float]
    label: ScoreLabel

    @field_validator("scores")
    @classmethod
    def _bounded(cls, scores: list[float]) -> list[float]:
        if not scores:
            raise ValueError("a score distribution needs at least one score")
        if any(not (-1.0 <= s <= 1.0) for s in scores):
            raise ValueError("cosine scores must lie in [-1, 1]")
        return scores

    def values(self, space: ScoreSpace = "similarity") -> np.ndarray:
        scores = np.asarray(self.scores, dtype=np.float64)
        return 1.0 - scores if space == "distance" else scores


class SelectionRecord(BaseModel):
    epoch: int
    batch: int | None = None
    signed_wasserstein: float
    spoof_median: float
    target_median: float


def score_distribution(
    utts: Sequence[Signal],
    enrol: Embedding,
    f_B: EmbedderConfig,
    filter: MalacopulaFilter | None = None,
) -> ScoreDistribution:
    if not utts:
        raise InvalidArgumentError("score_distribution needs at least one utterance")
    if filter is not None:
        utts = [malacopula_apply(u, filter) for u in utts]
    scores = [cosine_similarity(extract_embedding(u, f_B), enrol) for u in utts]
    return ScoreDistribution(scores=scores, label="spoof-baseline" if filter is None else "spoof-filtered")


def wasserstein_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """W1 between two empirical distributions: the integral of |F_a - F_b|.

    Exact for every pair of sizes: equal sizes give the mean absolute
    difference of the sorted samples, and unequal sizes are not resampled at
    max(|a|, |b|) interpolated quantiles.
    """
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgumentError("wasserstein_1d needs two non-empty samples")
    return float(scipy.stats.wasserstein_distance(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def signed_wasserstein(
    spoof: ScoreDistribution, target: ScoreDistribution, space: ScoreSpace = "distance"
) -> float:
    """+W1 when the spoof median exceeds the target median in ``space``, otherwise -W1 (ties negative)."""
    s, t = spoof.values(space), target.values(space)
    magnitude = wasserstein_1d(s, t)
    sign = 1.0 if np.median(s) > np.median(t) else -1.0
    return sign * magnitude


def select_best(
    checkpoints: Sequence[FilterCheckpoint],
    spoof_utts: Sequence[Signal],
    target_utts: Sequence[Signal],
    enrol_utts: Sequence[Signal],
    f_B: EmbedderConfig,
) -> tuple[FilterCheckpoint, list[SelectionRecord]]:
    """Checkpoint with the minimum signed distance-space Wasserstein value; earliest wins ties."""
    if not checkpoints:
        raise InvalidArgumentError("select_best needs at least one checkpoint")
    if not spoof_utts or not target_utts or not enrol_utts:
        raise InvalidArgumentError("select_best needs non-empty spoof, target and enrolment lists")

    enrol = average_enrolment(embed_many(enrol_utts, f_B))
    target = ScoreDistribution(
        scores=[cosine_similarity(e, enrol) for e in embed_many(target_utts, f_B)],
        label="target-bona-fide",
    )
    target_median = float(np.median(target.values("distance")))

    records = []
    for checkpoint in checkpoints:
        spoof = score_distribution(spoof_utts, enrol, f_B, checkpoint.filter)
        records.append(
            SelectionRecord(
                epoch=checkpoint.epoch,
                batch=checkpoint.batch,
                signed_wasserstein=signed_wasserstein(spoof, target),
                spoof_median=float(np.median(spoof.values("distance"))),
                target_median=target_median,
            )
        )

    def rank(index: int) -> tuple[float, int, int]:
        r = records[index]
        return (r.signed_wasserstein, r.epoch, -1 if r.batch is None else r.batch)

    best = min(range(len(checkpoints)), key=rank)
    logger.debug(
        f"Selected epoch {records[best].epoch} with signed Wasserstein {records[best].signed_wasserstein:.6f}"
    )
    return checkpoints[best], records
