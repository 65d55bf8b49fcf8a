import numpy as np
import pytest
from pydantic import ValidationError

from malacopula.config import F_A, F_B, AttackSpec, TrainingConfig
from malacopula.corpus import generate_spoof, generate_utterance, make_speaker_profiles
from malacopula.embedder import average_enrolment, cosine_similarity, embed_many, extract_embedding
from malacopula.errors import InvalidArgumentError
from malacopula.hammerstein import MalacopulaFilter, malacopula_apply
from malacopula.seeding import make_rng
from malacopula.selection import (
    ScoreDistribution,
    score_distribution,
    select_best,
    signed_wasserstein,
    wasserstein_1d,
)
from malacopula.trainer import FilterCheckpoint, init_filter, train_filter


def cdf_integral_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Integral of |F_a - F_b| over the merged support, interval by interval."""
    points = np.sort(np.concatenate([a, b]))
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        Fa = np.mean(a <= lo)
        Fb = np.mean(b <= lo)
        total += abs(Fa - Fb) * (hi - lo)
    return total


def dist(scores, label="spoof-filtered") -> ScoreDistribution:
    return ScoreDistribution(scores=scores, label=label)


# --- wasserstein_1d ---


def test_wasserstein_matches_cdf_oracle():
    rng = make_rng(77)
    for _ in range(1000):
        a = rng.uniform(-1, 1, int(rng.integers(1, 40)))
        b = rng.normal(0.2, 0.3, int(rng.integers(1, 40)))
        assert abs(wasserstein_1d(a, b) - cdf_integral_oracle(a, b)) < 1e-6


def test_wasserstein_examples():
    assert wasserstein_1d([0.0], [1.0]) == pytest.approx(1.0)
    assert wasserstein_1d([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0
    assert wasserstein_1d([0.0, 1.0], [0.5]) == pytest.approx(0.5)


def test_wasserstein_metric_properties():
    rng = make_rng(78)
    for _ in range(50):
        a, b, c = (rng.standard_normal(int(rng.integers(2, 20))) for _ in range(3))
        assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(b, a), abs=1e-12)
        assert wasserstein_1d(a, b) >= 0.0
        assert wasserstein_1d(a, c) <= wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-12


@pytest.mark.parametrize("delta", [-0.7, 0.0, 0.013, 2.5])
def test_wasserstein_translation(delta):
    a = make_rng(79).standard_normal(25)
    assert wasserstein_1d(a, a + delta) == pytest.approx(abs(delta), abs=1e-9)


def test_wasserstein_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        wasserstein_1d([], [0.1])


# --- signed_wasserstein ---


def test_signed_wasserstein_similarity_space():
    spoof = dist([0.2, 0.3, 0.4])
    target = dist([0.7, 0.8, 0.9], "target-bona-fide")
    assert signed_wasserstein(spoof, target, space="similarity") == pytest.approx(-0.5)
    assert signed_wasserstein(target, spoof, space="similarity") == pytest.approx(0.5)


def test_signed_wasserstein_distance_space_penalises_far_spoofs():
    spoof = dist([0.2, 0.3, 0.4])
    target = dist([0.7, 0.8, 0.9], "target-bona-fide")
    # spoof distances sit above the target distances
    assert signed_wasserstein(spoof, target) == pytest.approx(0.5)


def test_signed_wasserstein_median_tie_is_negative():
    spoof = dist([0.1, 0.5, 0.9])
    target = dist([0.4, 0.5, 0.6], "target-bona-fide")
    value = signed_wasserstein(spoof, target)
    assert value < 0
    assert abs(value) == pytest.approx(wasserstein_1d([0.1, 0.5, 0.9], [0.4, 0.5, 0.6]))


def test_identical_distributions_give_zero():
    assert signed_wasserstein(dist([0.3, 0.6]), dist([0.3, 0.6], "target-bona-fide")) == 0.0


def test_score_distribution_validation():
    with pytest.raises(ValidationError):
        dist([])
    with pytest.raises(ValidationError):
        dist([1.5])


# --- score_distribution / select_best ---


@pytest.fixture(scope="module")
def selection_data():
    profile = make_speaker_profiles(1, seed=21)[0]
    utts = [generate_utterance(profile, 0.5, utt_seed=s, peak=1.0) for s in range(6)]
    return utts[:2], utts[2:4], utts[4:]


def test_score_distribution_singleton_matches_direct_computation(selection_data):
    enrol_utts, targets, _ = selection_data
    enrol = average_enrolment(embed_many(enrol_utts, F_B))
    d = score_distribution(targets[:1], enrol, F_B)
    assert d.scores == [cosine_similarity(extract_embedding(targets[0], F_B), enrol)]
    assert d.label == "spoof-baseline"


def test_identity_filter_matches_no_filter(selection_data):
    enrol_utts, targets, _ = selection_data
    enrol = average_enrolment(embed_many(enrol_utts, F_B))
    plain = score_distribution(targets, enrol, F_B)
    filtered = score_distribution(targets, enrol, F_B, init_filter(1, 257, seed=0))
    np.testing.assert_allclose(filtered.scores, plain.scores, atol=1e-10)


def test_score_distribution_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        score_distribution([], None, F_B)


def checkpoint(epoch: int, coeffs) -> FilterCheckpoint:
    return FilterCheckpoint(epoch=epoch, filter=MalacopulaFilter(coeffs=coeffs), mean_loss=0.0)


def test_select_best_single_checkpoint(selection_data):
    enrol_utts, targets, spoofs = selection_data
    only = checkpoint(1, [[1.0]])
    best, records = select_best([only], spoofs, targets, enrol_utts, F_B)
    assert best is only
    assert len(records) == 1 and records[0].epoch == 1


def test_select_best_prefers_bona_fide_like_spoofs(selection_data):
    enrol_utts, targets, spoofs = selection_data
    identity = checkpoint(2, [[1.0]])
    # cubing distorts the spectrum, so its spoofs drift away from the enrolment
    distorting = checkpoint(1, [[0.0], [0.0], [1.0]])
    best, records = select_best([distorting, identity], spoofs, targets, enrol_utts, F_B)
    assert best is identity
    assert [r.epoch for r in records] == [1, 2]


def test_select_best_earliest_epoch_wins_ties(selection_data):
    enrol_utts, targets, spoofs = selection_data
    checkpoints = [checkpoint(3, [[1.0]]), checkpoint(1, [[1.0]]), checkpoint(2, [[1.0]])]
    best, _ = select_best(checkpoints, spoofs, targets, enrol_utts, F_B)
    assert best.epoch == 1


def test_select_best_is_order_invariant(selection_data):
    enrol_utts, targets, spoofs = selection_data
    checkpoints = [checkpoint(1, [[0.0], [1.0]]), checkpoint(2, [[1.0]]), checkpoint(3, [[0.5], [0.5]])]
    forward, _ = select_best(checkpoints, spoofs, targets, enrol_utts, F_B)
    reverse, _ = select_best(checkpoints[::-1], spoofs, targets, enrol_utts, F_B)
    assert forward.epoch == reverse.epoch


def test_select_best_rejects_empty_inputs(selection_data):
    enrol_utts, targets, spoofs = selection_data
    with pytest.raises(InvalidArgumentError):
        select_best([], spoofs, targets, enrol_utts, F_B)
    with pytest.raises(InvalidArgumentError):
        select_best([checkpoint(1, [[1.0]])], [], targets, enrol_utts, F_B)


def test_selected_epoch_matches_independent_recomputation(selection_data):
    enrol_utts, targets, _ = selection_data
    profile = make_speaker_profiles(1, seed=21)[0]
    attack = AttackSpec(attack_id="A01", kind="detune", severity=0.05)
    spoofs = [generate_spoof(profile, attack, utt_seed=300 + s, duration_s=0.5) for s in range(3)]
    enrol_A = average_enrolment(embed_many(enrol_utts, F_A))
    checkpoints = train_filter(spoofs, enrol_A, TrainingConfig(epochs=5, batch_size=2, K=2, L=33, seed=4), F_A)

    enrol_B = average_enrolment(embed_many(enrol_utts, F_B))
    target_d = np.array([1.0 - cosine_similarity(extract_embedding(x, F_B), enrol_B) for x in targets])
    values = []
    for c in checkpoints:
        spoof_d = np.array(
            [1.0 - cosine_similarity(extract_embedding(malacopula_apply(x, c.filter), F_B), enrol_B) for x in spoofs]
        )
        sign = 1.0 if np.median(spoof_d) > np.median(target_d) else -1.0
        values.append(sign * cdf_integral_oracle(spoof_d, target_d))

    best, records = select_best(checkpoints, spoofs, targets, enrol_utts, F_B)
    assert best.epoch == checkpoints[int(np.argmin(values))].epoch
    np.testing.assert_allclose([r.signed_wasserstein for r in records], values, atol=1e-9)
