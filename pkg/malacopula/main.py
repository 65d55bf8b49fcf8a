import logging
import sys
from pathlib import Path
from typing import Annotated, Optional

import click
import typer
from pydantic import ValidationError

from .config import EXIT_CODES, ExperimentConfig, load_config, parse_grid
from .errors import CellFailure, DataFormatError, InvalidArgumentError
from .pipeline import cmd_apply, cmd_gen_corpus, cmd_report, cmd_score_and_eer, cmd_train

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="malacopula",
    help="Train, select and evaluate adversarial Hammerstein filters against speaker embedders.",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="TOML experiment file.")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Global seed override.")]
GridOption = Annotated[Optional[str], typer.Option("--grid", help="Filter grid as L:K[,L:K...].")]


def _config(path: Path | None, seed: int | None = None, grid: str | None = None, workers: int | None = None) -> ExperimentConfig:
    return load_config(path, seed=seed, grid=parse_grid(grid) if grid else None, workers=workers)


@app.callback()
def _setup(verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")] = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        stream=sys.stderr,
    )


@app.command("gen-corpus")
def gen_corpus(
    config: ConfigOption = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Corpus directory (default: corpus_dir).")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Corpus seed override.")] = None,
) -> None:
    """Generate the synthetic corpus and its protocol."""
    cfg = _config(config)
    if seed is not None:
        cfg = cfg.model_copy(update={"corpus": cfg.corpus.model_copy(update={"seed": seed})})
    health = cmd_gen_corpus(cfg, out)
    typer.echo(f"same-speaker mean {health.same_speaker_mean:.4f}")
    if health.margin is not None:
        typer.echo(f"separation margin {health.margin:.4f}")


@app.command()
def train(
    config: ConfigOption = None,
    seed: SeedOption = None,
    grid: GridOption = None,
    workers: Annotated[Optional[int], typer.Option("--workers", help="Worker processes.")] = None,
    skip_existing: Annotated[bool, typer.Option("--skip-existing", help="Reuse completed cells.")] = False,
) -> None:
    """Train and select one filter per (speaker, attack, L, K) cell."""
    paths = cmd_train(_config(config, seed, grid, workers), skip_existing=skip_existing)
    typer.echo(f"{len(paths)} filter file(s)")


@app.command()
def apply(
    filter_file: Path,
    in_wav: Path,
    out_wav: Path,
    config: ConfigOption = None,
) -> None:
    """Apply a filter file to a 16-bit mono WAV file."""
    cfg = _config(config)
    cmd_apply(filter_file, in_wav, out_wav, cfg.corpus.sample_rate_hz)


@app.command()
def score(
    config: ConfigOption = None,
    grid: GridOption = None,
    filtered: Annotated[bool, typer.Option("--filtered", help="Also score with trained filters.")] = False,
) -> None:
    """Write score files and spf-EER reports for baseline (and filtered) spoofs."""
    cfg = _config(config, grid=grid)
    for report in cmd_score_and_eer(cfg, filtered=filtered):
        typer.echo(f"{report.condition:>12} {report.role:>7} pooled spf-EER {100 * report.pooled_eer:6.2f}%")


@app.command()
def report(run_dir: Path) -> None:
    """Summarise a run directory into a comparison table and per-attack series."""
    summary = cmd_report(run_dir)
    typer.echo((run_dir / "summary" / "table.txt").read_text(encoding="utf-8"), nl=False)
    if summary.grid_inversions > 1:
        raise typer.Exit(EXIT_CODES.cell)


@app.command()
def serve() -> None:
    """Run the tool server over stdio."""
    from .server import mcp

    logger.info("Starting malacopula tool server")
    mcp.run()


def main() -> int:
    """Main entry point for the package."""
    try:
        result = app(standalone_mode=False)
    except (click.UsageError, ValidationError, InvalidArgumentError, ValueError) as e:
        logger.error(f"{e}")
        return EXIT_CODES.usage
    except (DataFormatError, OSError) as e:
        logger.error(f"{e}")
        return EXIT_CODES.data
    except CellFailure as e:
        logger.error(f"{e}")
        return EXIT_CODES.cell
    except click.Abort:
        return EXIT_CODES.usage
    return result if isinstance(result, int) else EXIT_CODES.success


if __name__ == "__main__":
    sys.exit(main())
