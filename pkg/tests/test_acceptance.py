"""End-to-end runs on the default corpus. Slow: select with ``pytest -m acceptance``."""

import numpy as np
import pytest

from malacopula.config import FULL_GRID, ExperimentConfig
from malacopula.formats import read_records
from malacopula.pipeline import BASELINE, cmd_gen_corpus, cmd_report, cmd_score_and_eer, cmd_train

pytestmark = pytest.mark.acceptance


def run_experiment(root, corpus_dir, workers: int, grid) -> ExperimentConfig:
    cfg = ExperimentConfig(corpus_dir=corpus_dir, output_dir=root, grid=grid, workers=workers)
    cmd_train(cfg)
    cmd_score_and_eer(cfg, filtered=True)
    cmd_report(cfg.output_dir)
    return cfg


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    cmd_gen_corpus(ExperimentConfig(corpus_dir=path))
    return path


@pytest.fixture(scope="module")
def default_run(tmp_path_factory, corpus_dir):
    return run_experiment(tmp_path_factory.mktemp("run"), corpus_dir, workers=4, grid=[(257, 5)])


def pooled_gains(run_dir) -> dict[str, float]:
    summary = cmd_report(run_dir)
    return next(row.gain for row in summary.rows if row.condition == "L257_K5")


def test_filters_raise_pooled_eer_under_test_embedder(default_run):
    assert pooled_gains(default_run.output_dir)["f_test"] >= 0.10


def test_training_embedder_gains_at_least_as_much(default_run):
    gains = pooled_gains(default_run.output_dir)
    assert gains["f_test"] > 0
    assert gains["f_A"] >= gains["f_test"]


def test_training_loss_does_not_diverge(default_run):
    curves = sorted((default_run.output_dir / "diagnostics").rglob("*.train.tsv"))
    assert len(curves) == 8 * 4
    for path in curves:
        losses = [float(row["mean_loss"]) for row in read_records(path)]
        assert np.mean(losses[-5:]) <= np.mean(losses[:5]), path.name


@pytest.mark.parametrize("workers", [1, 8])
def test_runs_are_bit_identical_across_worker_counts(default_run, tmp_path, corpus_dir, workers):
    other = run_experiment(tmp_path / f"workers{workers}", corpus_dir, workers=workers, grid=[(257, 5)])
    for sub in ("filters", "scores", "reports"):
        produced = sorted((default_run.output_dir / sub).rglob("*.*"))
        assert produced
        for path in produced:
            twin = other.output_dir / path.relative_to(default_run.output_dir)
            assert twin.read_bytes() == path.read_bytes(), str(path)


def test_full_grid_has_at_most_one_inversion(tmp_path, corpus_dir):
    cfg = run_experiment(tmp_path / "grid", corpus_dir, workers=8, grid=FULL_GRID)
    summary = cmd_report(cfg.output_dir)
    assert [row.condition for row in summary.rows][0] == BASELINE
    assert len(summary.rows) == 1 + len(FULL_GRID)
    assert summary.grid_inversions <= 1
