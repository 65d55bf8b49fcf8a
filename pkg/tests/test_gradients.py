import dataclasses

import numpy as np
import pytest

from malacopula import gradients
from malacopula.embedder import Embedding, extract_embedding
from malacopula.errors import InternalError, InvalidArgumentError
from malacopula.gradients import backward, check_gradient, forward_with_tape, objective
from malacopula.hammerstein import MalacopulaFilter, malacopula_apply
from malacopula.seeding import make_rng
from malacopula.trainer import init_filter

from tests.signals import random_signal


def random_filter(K: int, L: int, seed: int, scale: float = 0.3) -> MalacopulaFilter:
    base = init_filter(K, L, seed).coeffs
    return MalacopulaFilter(coeffs=base + scale * make_rng(seed, 99).standard_normal((K, L)))


def random_target(dim: int, seed: int) -> Embedding:
    return Embedding(values=make_rng(seed, 7).standard_normal(dim))


# --- forward_with_tape ---


def test_loss_is_zero_against_own_embedding(tiny_embedder):
    x = random_signal(64, seed=1)
    f = random_filter(2, 5, seed=1)
    own = extract_embedding(malacopula_apply(x, f), tiny_embedder)
    loss, _ = forward_with_tape(x, f, tiny_embedder, own)
    assert loss == pytest.approx(0.0, abs=1e-10)


def test_loss_is_two_against_antipodal_embedding(tiny_embedder):
    x = random_signal(64, seed=2)
    f = random_filter(2, 5, seed=2)
    own = extract_embedding(malacopula_apply(x, f), tiny_embedder)
    loss, _ = forward_with_tape(x, f, tiny_embedder, Embedding(values=-own.values))
    assert loss == pytest.approx(2.0, abs=1e-10)


def test_tape_replay_reproduces_loss(tiny_embedder):
    x = random_signal(100, seed=3)
    f = random_filter(3, 9, seed=3)
    target = random_target(8, seed=3)
    loss, tape = forward_with_tape(x, f, tiny_embedder, target)
    assert abs(tape.replay() - loss) < 1e-12
    assert abs(objective(x, f, tiny_embedder, target) - loss) < 1e-12
    assert 0.0 <= loss <= 2.0


def test_forward_rejects_dimension_mismatch(tiny_embedder):
    with pytest.raises(InvalidArgumentError):
        forward_with_tape(random_signal(64, seed=0), random_filter(1, 3, 0), tiny_embedder, random_target(5, 0))


def test_taped_branches_follow_power_structure(tiny_embedder):
    x = random_signal(64, seed=4)
    doubled = x.with_samples(2.0 * x.samples)
    f = random_filter(3, 5, seed=4)
    target = random_target(8, seed=4)
    _, tape = forward_with_tape(x, f, tiny_embedder, target)
    _, tape2 = forward_with_tape(doubled, f, tiny_embedder, target)
    for k in range(3):
        np.testing.assert_allclose(tape2.branches[k], 2.0 ** (k + 1) * tape.branches[k], rtol=1e-14)


# --- backward ---


def test_gradient_vanishes_at_optimum(tiny_embedder):
    x = random_signal(64, seed=5)
    f = random_filter(2, 5, seed=5)
    own = extract_embedding(malacopula_apply(x, f), tiny_embedder)
    _, tape = forward_with_tape(x, f, tiny_embedder, own)
    assert backward(tape).norm < 1e-6


def test_gradient_ignores_target_scale(tiny_embedder):
    x = random_signal(64, seed=6)
    f = random_filter(2, 5, seed=6)
    target = random_target(8, seed=6)
    _, tape = forward_with_tape(x, f, tiny_embedder, target)
    _, scaled = forward_with_tape(x, f, tiny_embedder, Embedding(values=10.0 * target.values))
    np.testing.assert_allclose(backward(scaled).d_coeffs, backward(tape).d_coeffs, atol=1e-10)


def test_backward_is_deterministic(tiny_embedder):
    _, tape = forward_with_tape(random_signal(80, seed=7), random_filter(3, 5, 7), tiny_embedder, random_target(8, 7))
    np.testing.assert_array_equal(backward(tape).d_coeffs, backward(tape).d_coeffs)


def test_backward_shape_matches_filter(tiny_embedder):
    f = random_filter(3, 9, seed=8)
    _, tape = forward_with_tape(random_signal(64, seed=8), f, tiny_embedder, random_target(8, 8))
    assert backward(tape).d_coeffs.shape == f.coeffs.shape


def test_backward_rejects_corrupted_tape(tiny_embedder):
    _, tape = forward_with_tape(random_signal(64, seed=9), random_filter(2, 5, 9), tiny_embedder, random_target(8, 9))
    with pytest.raises(InternalError):
        backward(dataclasses.replace(tape, branches=tape.branches[:1]))
    with pytest.raises(InternalError):
        backward(dataclasses.replace(tape, pre_norm=tape.pre_norm[:-1]))


# --- check_gradient ---


def test_small_instance_matches_finite_differences(tiny_embedder):
    report = check_gradient(
        random_signal(64, seed=10), random_filter(2, 5, 10), tiny_embedder, random_target(8, 10), tolerance=1e-4
    )
    assert report.passed, report
    assert report.checked + report.skipped_degenerate >= report.checked > 0


def test_identity_filter_passes_check(tiny_embedder):
    report = check_gradient(random_signal(128, seed=11), init_filter(1, 5, 0), tiny_embedder, random_target(8, 11))
    assert report.passed, report


def test_zero_filter_is_flagged_degenerate(tiny_embedder):
    report = check_gradient(
        random_signal(64, seed=12), MalacopulaFilter(coeffs=np.zeros((2, 5))), tiny_embedder, random_target(8, 12)
    )
    assert report.degenerate
    assert report.checked == 0
    assert not report.passed


def test_large_filter_sampled_coordinates(tiny_embedder):
    f = random_filter(5, 257, seed=13, scale=0.01)
    report = check_gradient(random_signal(512, seed=13), f, tiny_embedder, random_target(8, 13), max_coordinates=64)
    assert report.passed, report
    assert report.checked == 64


def test_check_gradient_rejects_non_positive_step(tiny_embedder):
    with pytest.raises(InvalidArgumentError):
        check_gradient(random_signal(64, 0), init_filter(1, 3, 0), tiny_embedder, random_target(8, 0), step=0.0)


def test_gradient_check_on_seeded_instances(tiny_embedder):
    rng = make_rng(314)
    failures = []
    for i in range(100):
        N = int(rng.integers(32, 513))
        K = int(rng.choice([1, 3, 5]))
        L = int(rng.choice([3, 5, 9]))
        report = check_gradient(
            random_signal(N, seed=1000 + i),
            random_filter(K, L, seed=1000 + i),
            tiny_embedder,
            random_target(8, seed=1000 + i),
            step=1e-4,
            tolerance=1e-3,
        )
        if not report.degenerate and not report.passed:
            failures.append((i, N, K, L, report.max_relative_error))
    assert not failures


def test_centre_tap_only_filter_passes_check(tiny_embedder):
    # L=3 Bartlett window zeroes both outer taps and the centre tap cancels under normalization
    for seed in range(5):
        report = check_gradient(
            random_signal(200, seed=2000 + seed), random_filter(1, 3, seed=2000 + seed), tiny_embedder, random_target(8, seed)
        )
        assert report.passed, report
        assert report.max_relative_error < 1e-3


def test_degenerate_check_does_not_embed_silence(tiny_embedder, mocker):
    spy = mocker.spy(gradients, "forward_with_tape")
    report = check_gradient(
        random_signal(64, seed=14), MalacopulaFilter(coeffs=np.zeros((1, 3))), tiny_embedder, random_target(8, 14)
    )
    assert report.degenerate
    assert report.skipped_degenerate == 3
    spy.assert_not_called()
