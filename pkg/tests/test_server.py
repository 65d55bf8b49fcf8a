import json
from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest

from malacopula.errors import CellFailure, DataFormatError, InvalidArgumentError
from malacopula.evaluation import EvalReport, SeparationReport
from malacopula.pipeline import RunSummary, SummaryRow
from malacopula.server import apply_filter, generate_corpus, report, score_and_eer, train_filters


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(f'corpus_dir = "{tmp_path / "corpus"}"\noutput_dir = "{tmp_path / "run"}"\nworkers = 1\n')
    return path


# --- generate_corpus ---
@pytest.mark.asyncio
async def test_generate_corpus_reports_health(config_file):
    health = SeparationReport(same_speaker_mean=0.9, cross_speaker_mean=0.5)
    with patch("malacopula.server.cmd_gen_corpus", return_value=health) as cmd:
        result = await generate_corpus(config_path=str(config_file), out_dir=None)
    cfg, out_dir = cmd.call_args.args
    assert cfg.workers == 1
    assert out_dir is None
    assert json.loads(result)["margin"] == pytest.approx(0.4)


@pytest.mark.asyncio
async def test_generate_corpus_passes_out_dir(config_file, tmp_path):
    health = SeparationReport(same_speaker_mean=0.9, cross_speaker_mean=None)
    with patch("malacopula.server.cmd_gen_corpus", return_value=health) as cmd:
        result = await generate_corpus(config_path=str(config_file), out_dir=str(tmp_path / "elsewhere"))
    assert cmd.call_args.args[1] == tmp_path / "elsewhere"
    assert json.loads(result)["margin"] is None


@pytest.mark.asyncio
async def test_generate_corpus_missing_config(tmp_path):
    result = await generate_corpus(config_path=str(tmp_path / "absent.toml"), out_dir=None)
    assert result.startswith("SYSTEM_ERROR: A data file is missing or malformed")


# --- train_filters ---
@pytest.mark.asyncio
async def test_train_filters_applies_grid_and_workers(config_file, tmp_path):
    paths = [tmp_path / "run" / "filters" / "L9_K2" / "S01_A01.mcf"]
    with patch("malacopula.server.cmd_train", return_value=paths) as cmd:
        result = await train_filters(config_path=str(config_file), grid="9:2", workers=3, skip_existing=True)
    cfg = cmd.call_args.args[0]
    assert cfg.grid == [(9, 2)]
    assert cfg.workers == 3
    assert cmd.call_args.kwargs == {"skip_existing": True}
    assert json.loads(result) == {"filters": [str(paths[0])]}


@pytest.mark.asyncio
async def test_train_filters_lists_failed_cells(config_file):
    failure = CellFailure({"L9_K2/S02_A01": "RuntimeError: diverged"})
    with patch("malacopula.server.cmd_train", side_effect=failure):
        result = await train_filters(config_path=str(config_file), grid=None, workers=None, skip_existing=False)
    assert result.startswith("SYSTEM_ERROR: Some training cells failed.")
    assert "L9_K2/S02_A01" in result


@pytest.mark.asyncio
async def test_train_filters_bad_grid(config_file):
    result = await train_filters(config_path=str(config_file), grid="256:5", workers=None, skip_existing=False)
    assert result.startswith("SYSTEM_ERROR: Invalid arguments or configuration")


# --- apply_filter ---
@pytest.mark.asyncio
async def test_apply_filter_success(tmp_path):
    out = tmp_path / "out.wav"
    with patch("malacopula.server.cmd_apply", return_value=out) as cmd:
        result = await apply_filter(filter_file="f.mcf", in_wav="in.wav", out_wav=str(out))
    cmd.assert_called_once_with(Path("f.mcf"), Path("in.wav"), out)
    assert result == f"Wrote {out}"


@pytest.mark.asyncio
async def test_apply_filter_bad_wav():
    with patch("malacopula.server.cmd_apply", side_effect=DataFormatError("expected mono audio", "in.wav")):
        result = await apply_filter(filter_file="f.mcf", in_wav="in.wav", out_wav="out.wav")
    assert "in.wav: expected mono audio" in result


# --- score_and_eer ---
@pytest.mark.asyncio
async def test_score_and_eer_returns_reports(config_file):
    baseline = EvalReport(
        role="f_test", condition="baseline", pooled_eer=0.1, pooled_threshold=0.8, n_target=4, n_spoof=4, per_attack=[]
    )
    with patch("malacopula.server.cmd_score_and_eer", return_value=[baseline]) as cmd:
        result = await score_and_eer(config_path=str(config_file), filtered=True, grid=None)
    assert cmd.call_args.kwargs == {"filtered": True}
    assert json.loads(result)[0]["pooled_eer"] == 0.1


@pytest.mark.asyncio
async def test_score_and_eer_without_filters(config_file):
    error = InvalidArgumentError("--filtered requested but no filter files exist for L257_K5")
    with patch("malacopula.server.cmd_score_and_eer", side_effect=error):
        result = await score_and_eer(config_path=str(config_file), filtered=True, grid=None)
    assert result.startswith("SYSTEM_ERROR: Invalid arguments")
    assert "L257_K5" in result


# --- report ---
@pytest.mark.asyncio
async def test_report_returns_summary(tmp_path):
    summary = RunSummary(
        rows=[SummaryRow(condition="baseline", pooled_eer={"f_test": 0.1}, gain={"f_test": 0.0})],
        grid_inversions=0,
        per_attack={"f_test": {"baseline": {"A01": 0.1}}},
        per_attack_gain={"f_test": {"baseline": {"A01": 0.0}}},
    )
    with patch("malacopula.server.cmd_report", return_value=summary):
        result = await report(run_dir=str(tmp_path))
    assert json.loads(result)["rows"][0]["condition"] == "baseline"


@pytest.mark.asyncio
async def test_report_unexpected_error(tmp_path):
    with patch("malacopula.server.cmd_report", MagicMock(side_effect=RuntimeError("boom"))):
        result = await report(run_dir=str(tmp_path))
    assert result == "SYSTEM_ERROR: An unexpected error occurred in 'report'. Details: boom"
