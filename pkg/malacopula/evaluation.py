"""spf-EER evaluation: target bona fide trials are positives, spoofed trials negatives."""

import logging
from typing import Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from .config import BONA_FIDE, EmbedderConfig
from .embedder import Embedding, average_enrolment, cosine_similarity, extract_embedding
from .errors import InvalidArgumentError, MissingUtteranceError
from .hammerstein import MalacopulaFilter, Signal, malacopula_apply
from .protocol import ProtocolEntry, TrialProtocol

logger = logging.getLogger(__name__)

TrialLabel = Literal["target", "spoof"]
Corpus = Mapping[str, Signal]
FilterMap = Mapping[tuple[str, str], MalacopulaFilter]


class Trial(BaseModel):
    model_config = ConfigDict(frozen=True)

    speaker_id: str
    utterance_id: str
    attack_id: str
    label: TrialLabel
    score: float


class AttackResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    attack_id: str
    eer: float
    threshold: float
    n_target: int
    n_spoof: int


class EvalReport(BaseModel):
    """Pooled and per-attack spf-EER for one embedder role and condition.

    EER lies in [0, 1]; values above 0.5 mean spoofs outscore targets and are
    reported as they are.
    """

    model_config = ConfigDict(frozen=True)

    role: str
    condition: str
    pooled_eer: float
    pooled_threshold: float
    n_target: int
    n_spoof: int
    per_attack: list[AttackResult]

    def attack(self, attack_id: str) -> AttackResult:
        for result in self.per_attack:
            if result.attack_id == attack_id:
                return result
        raise KeyError(attack_id)


class SeparationReport(BaseModel):
    same_speaker_mean: float
    cross_speaker_mean: float | None

    @property
    def margin(self) -> float | None:
        if self.cross_speaker_mean is None:
            return None
        return self.same_speaker_mean - self.cross_speaker_mean


def compute_eer(positive_scores: Sequence[float], negative_scores: Sequence[float]) -> tuple[float, float]:
    """Interpolated equal error rate and its threshold (higher score = more target-like).

    FAR(t) = fraction of negatives >= t, FRR(t) = fraction of positives < t,
    evaluated at every distinct score plus a threshold above all scores. The
    EER is where the segment joining consecutive (FAR, FRR) points crosses
    FAR = FRR. Past the largest score the threshold stays at that score.
    """
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgumentError("compute_eer needs non-empty positive and negative score lists")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise InvalidArgumentError("compute_eer needs finite scores")

    thresholds = np.unique(np.concatenate([pos, neg]))
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    far = np.append((neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size, 0.0)
    frr = np.append(np.searchsorted(pos_sorted, thresholds, side="left") / pos.size, 1.0)
    at = np.append(thresholds, thresholds[-1])

    diff = far - frr
    # diff[0] == 1 and diff[-1] == -1, so a crossing always exists
    j = int(np.argmax(diff <= 0.0))
    if diff[j] == 0.0:
        return float(far[j]), float(at[j])
    alpha = diff[j - 1] / (diff[j - 1] - diff[j])
    eer = far[j - 1] + alpha * (far[j] - far[j - 1])
    threshold = at[j - 1] + alpha * (at[j] - at[j - 1])
    return float(eer), float(threshold)


def _signal(corpus: Corpus, entry: ProtocolEntry) -> Signal:
    try:
        return corpus[entry.utterance_id]
    except KeyError:
        raise MissingUtteranceError(
            f"trial {entry.role} {entry.speaker_id} {entry.utterance_id} {entry.attack_id} "
            f"references an utterance missing from the corpus ({entry.path})"
        ) from None


def enrolment_embedding(protocol: TrialProtocol, corpus: Corpus, speaker_id: str, emb: EmbedderConfig) -> Embedding:
    entries = protocol.select("enrol", speaker_id)
    if not entries:
        raise InvalidArgumentError(f"speaker {speaker_id} has no enrolment utterances")
    return average_enrolment([extract_embedding(_signal(corpus, e), emb) for e in entries])


def score_trials(
    protocol: TrialProtocol, corpus: Corpus, emb: EmbedderConfig, filters: FilterMap | None = None
) -> list[Trial]:
    """Score every target and spoof trial against its speaker's averaged enrolment.

    Spoofs are passed through the matching (speaker, attack) filter when one exists.
    """
    filters = filters or {}
    trials = []
    for speaker in protocol.speakers():
        enrol = enrolment_embedding(protocol, corpus, speaker, emb)
        for entry in protocol.select("target", speaker):
            score = cosine_similarity(extract_embedding(_signal(corpus, entry), emb), enrol)
            trials.append(
                Trial(speaker_id=speaker, utterance_id=entry.utterance_id, attack_id=BONA_FIDE, label="target", score=score)
            )
        for entry in protocol.select("spoof", speaker):
            x = _signal(corpus, entry)
            f = filters.get((speaker, entry.attack_id))
            if f is not None:
                x = malacopula_apply(x, f)
            score = cosine_similarity(extract_embedding(x, emb), enrol)
            trials.append(
                Trial(
                    speaker_id=speaker,
                    utterance_id=entry.utterance_id,
                    attack_id=entry.attack_id,
                    label="spoof",
                    score=score,
                )
            )
    return trials


def report_from_trials(trials: Sequence[Trial], role: str, condition: str) -> EvalReport:
    """Pooled EER over all spoofs, and per attack each attack's spoofs against all targets."""
    positives = [t.score for t in trials if t.label == "target"]
    spoofs = [t for t in trials if t.label == "spoof"]
    if not positives or not spoofs:
        raise InvalidArgumentError(
            f"cannot compute spf-EER from {len(positives)} target and {len(spoofs)} spoof trials"
        )
    pooled_eer, pooled_threshold = compute_eer(positives, [t.score for t in spoofs])

    per_attack = []
    for attack in sorted({t.attack_id for t in spoofs}):
        negatives = [t.score for t in spoofs if t.attack_id == attack]
        eer, threshold = compute_eer(positives, negatives)
        per_attack.append(
            AttackResult(attack_id=attack, eer=eer, threshold=threshold, n_target=len(positives), n_spoof=len(negatives))
        )
    logger.debug(f"{role}/{condition}: pooled spf-EER {pooled_eer:.4f} over {len(trials)} trials")
    return EvalReport(
        role=role,
        condition=condition,
        pooled_eer=pooled_eer,
        pooled_threshold=pooled_threshold,
        n_target=len(positives),
        n_spoof=len(spoofs),
        per_attack=per_attack,
    )


def evaluate_protocol(
    protocol: TrialProtocol,
    corpus: Corpus,
    f_test: EmbedderConfig,
    filters: FilterMap | None = None,
    role: str = "f_test",
) -> EvalReport:
    condition = "filtered" if filters else "baseline"
    return report_from_trials(score_trials(protocol, corpus, f_test, filters), role, condition)


def speaker_separation(protocol: TrialProtocol, corpus: Corpus, emb: EmbedderConfig) -> SeparationReport:
    """Mean same-speaker versus cross-speaker bona fide score against each enrolment."""
    speakers = protocol.speakers()
    targets = {s: [extract_embedding(_signal(corpus, e), emb) for e in protocol.select("target", s)] for s in speakers}
    same: list[float] = []
    cross: list[float] = []
    for speaker in speakers:
        enrol = enrolment_embedding(protocol, corpus, speaker, emb)
        for other, embeddings in targets.items():
            scores = [cosine_similarity(e, enrol) for e in embeddings]
            (same if other == speaker else cross).extend(scores)
    if not same:
        raise InvalidArgumentError("speaker separation needs target utterances")
    if not cross:
        logger.warning("Single-speaker protocol: no cross-speaker trials to compare against")
    return SeparationReport(
        same_speaker_mean=float(np.mean(same)),
        cross_speaker_mean=float(np.mean(cross)) if cross else None,
    )
