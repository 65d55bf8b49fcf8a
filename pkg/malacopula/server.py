import functools
import json
import logging
from pathlib import Path

import anyio.to_thread
from mcp.server.fastmcp import FastMCP
from pydantic import Field, ValidationError

from .config import ExperimentConfig, load_config, parse_grid
from .errors import CellFailure, DataFormatError, MalacopulaError
from .pipeline import cmd_apply, cmd_gen_corpus, cmd_report, cmd_score_and_eer, cmd_train

logger = logging.getLogger(__name__)

mcp = FastMCP("malacopula")


def handle_pipeline_error(func):
    """Turn pipeline exceptions into SYSTEM_ERROR strings for the calling model."""

    @functools.wraps(func)
    async def wrapper(*args, **kwargs):
        try:
            return await func(*args, **kwargs)
        except (ValidationError, ValueError) as e:
            logger.error(f"Invalid arguments in tool '{func.__name__}': {e}")
            return f"SYSTEM_ERROR: Invalid arguments or configuration: {e}"
        except (DataFormatError, OSError) as e:
            logger.error(f"Data error in tool '{func.__name__}': {e}")
            return f"SYSTEM_ERROR: A data file is missing or malformed: {e}"
        except CellFailure as e:
            logger.error(f"Training cells failed in tool '{func.__name__}': {e}")
            return f"SYSTEM_ERROR: Some training cells failed. Details: {json.dumps(e.failures, indent=2)}"
        except MalacopulaError as e:
            logger.error(f"Pipeline error in tool '{func.__name__}': {e}")
            return f"SYSTEM_ERROR: {e}"
        except Exception as e:
            logger.exception(f"An unexpected error occurred in tool '{func.__name__}': {e}")
            return f"SYSTEM_ERROR: An unexpected error occurred in '{func.__name__}'. Details: {e}"

    return wrapper


def _config(config_path: str | None, grid: str | None = None, workers: int | None = None) -> ExperimentConfig:
    return load_config(config_path, grid=parse_grid(grid) if grid else None, workers=workers)


@mcp.tool()
@handle_pipeline_error
async def generate_corpus(
    config_path: str | None = Field(default=None, description="TOML experiment file; defaults when omitted."),
    out_dir: str | None = Field(default=None, description="Corpus directory (default: corpus_dir of the config)."),
) -> str:
    """Generate the synthetic speaker corpus and report its speaker-separation health."""
    cfg = _config(config_path)
    health = await anyio.to_thread.run_sync(cmd_gen_corpus, cfg, Path(out_dir) if out_dir else None)
    return json.dumps(health.model_dump() | {"margin": health.margin}, indent=2)


@mcp.tool()
@handle_pipeline_error
async def train_filters(
    config_path: str | None = None,
    grid: str | None = Field(default=None, description="Filter grid as L:K[,L:K...], e.g. 257:5."),
    workers: int | None = Field(default=None, ge=1),
    skip_existing: bool = Field(default=False, description="Reuse cells whose filter file already exists."),
) -> str:
    """Train and select one filter per (speaker, attack, L, K) cell. Long-running."""
    cfg = _config(config_path, grid, workers)
    paths = await anyio.to_thread.run_sync(functools.partial(cmd_train, cfg, skip_existing=skip_existing))
    return json.dumps({"filters": [str(p) for p in paths]}, indent=2)


@mcp.tool()
@handle_pipeline_error
async def apply_filter(
    filter_file: str = Field(description="Path to a .mcf filter file."),
    in_wav: str = Field(description="16-bit mono WAV input."),
    out_wav: str = Field(description="Where to write the filtered WAV."),
) -> str:
    """Apply a trained filter to one WAV file."""
    out = await anyio.to_thread.run_sync(cmd_apply, Path(filter_file), Path(in_wav), Path(out_wav))
    return f"Wrote {out}"


@mcp.tool()
@handle_pipeline_error
async def score_and_eer(
    config_path: str | None = None,
    filtered: bool = Field(default=False, description="Also score spoofs passed through the trained filters."),
    grid: str | None = None,
) -> str:
    """Score all trials and compute pooled and per-attack spf-EER for each embedder role."""
    cfg = _config(config_path, grid)
    reports = await anyio.to_thread.run_sync(functools.partial(cmd_score_and_eer, cfg, filtered=filtered))
    return json.dumps([r.model_dump() for r in reports], indent=2)


@mcp.tool()
@handle_pipeline_error
async def report(run_dir: str = Field(description="Run directory holding scores/.")) -> str:
    """Summarise a run: baseline versus each filter grid cell, plus per-attack spf-EER."""
    summary = await anyio.to_thread.run_sync(cmd_report, Path(run_dir))
    return summary.model_dump_json(indent=2)
