"""Experiment orchestration: corpus -> train/select per cell -> score -> report.

Run directory layout under ``config.output_dir``:
    config.json
    filters/L<L>_K<K>/<speaker>_<attack>.mcf
    diagnostics/L<L>_K<K>/<speaker>_<attack>.train.tsv, .select.tsv
    scores/<condition>/<role>.scores
    reports/<condition>/<role>.report
    summary/table.txt, summary/per_attack_<role>.tsv
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel, ConfigDict

from .config import ROLES, EmbedderRole, ExperimentConfig
from .corpus import build_protocol, load_corpus
from .embedder import average_enrolment, embed_many
from .errors import CellFailure, DataFormatError, InvalidArgumentError
from .evaluation import EvalReport, SeparationReport, report_from_trials, score_trials, speaker_separation
from .formats import (
    make_filter_file,
    read_filter_file,
    read_scores,
    read_wav,
    write_filter_file,
    write_records,
    write_report,
    write_scores,
    write_wav,
)
from .hammerstein import MalacopulaFilter, malacopula_apply
from .protocol import TrialProtocol, read_protocol
from .seeding import derive_seed
from .selection import select_best
from .trainer import train_filter

logger = logging.getLogger(__name__)

BASELINE = "baseline"
HEALTH_MARGIN = 0.1
PROTOCOL_FILE = "protocol.txt"
HEALTH_FILE = "health.txt"


class CellSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    speaker_id: str
    attack_id: str
    L: int
    K: int

    @property
    def key(self) -> str:
        return f"{condition_name(self.L, self.K)}/{self.speaker_id}_{self.attack_id}"


def condition_name(L: int, K: int) -> str:
    return f"L{L}_K{K}"


def filter_path(output_dir: Path, cell: CellSpec) -> Path:
    return output_dir / "filters" / condition_name(cell.L, cell.K) / f"{cell.speaker_id}_{cell.attack_id}.mcf"


def _diagnostics_path(output_dir: Path, cell: CellSpec, kind: str) -> Path:
    return output_dir / "diagnostics" / condition_name(cell.L, cell.K) / f"{cell.speaker_id}_{cell.attack_id}.{kind}.tsv"


def cell_seed(global_seed: int, cell: CellSpec) -> int:
    """Seed from the cell identity, never from dispatch order."""
    return derive_seed(global_seed, cell.speaker_id, cell.attack_id, cell.L, cell.K)


def _load_protocol(config: ExperimentConfig) -> TrialProtocol:
    return read_protocol(config.corpus_dir / PROTOCOL_FILE)


# Corpus


def cmd_gen_corpus(config: ExperimentConfig, out_dir: Path | None = None) -> SeparationReport:
    """Generate the synthetic corpus and record its speaker-separation health under f_test."""
    out_dir = out_dir or config.corpus_dir
    protocol = build_protocol(config.corpus, out_dir)
    health = speaker_separation(protocol, load_corpus(protocol, out_dir), config.embedders.f_test)
    lines = [f"same_speaker_mean {health.same_speaker_mean!r}"]
    if health.margin is not None:
        lines += [f"cross_speaker_mean {health.cross_speaker_mean!r}", f"margin {health.margin!r}"]
        if health.margin < HEALTH_MARGIN:
            logger.warning(f"Corpus speaker separation {health.margin:.4f} is below {HEALTH_MARGIN}")
    (out_dir / HEALTH_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Corpus ready in {out_dir}")
    return health


# Training


def train_cell(config: ExperimentConfig, cell: CellSpec, protocol: TrialProtocol) -> Path:
    """Train under f_A, select under f_B and write the selected filter with its diagnostics."""
    spoof_entries = protocol.select("spoof", cell.speaker_id, cell.attack_id)
    enrol_entries = protocol.select("enrol", cell.speaker_id)
    target_entries = protocol.select("target", cell.speaker_id)
    if not spoof_entries or not enrol_entries or not target_entries:
        raise InvalidArgumentError(f"cell {cell.key} lacks spoof, enrolment or target utterances")

    def read(entries) -> list:
        return [read_wav(config.corpus_dir / e.path) for e in entries]

    spoofs, enrol, targets = read(spoof_entries), read(enrol_entries), read(target_entries)
    f_A, f_B = config.embedders.f_A, config.embedders.f_B
    training = config.training.model_copy(update={"K": cell.K, "L": cell.L, "seed": cell_seed(config.seed, cell)})

    checkpoints = train_filter(spoofs, average_enrolment(embed_many(enrol, f_A)), training, f_A)
    best, records = select_best(checkpoints, spoofs, targets, enrol, f_B)

    out = config.output_dir
    write_records(
        _diagnostics_path(out, cell, "train"),
        ("epoch", "batch", "mean_loss"),
        [(c.epoch, c.batch, c.mean_loss) for c in checkpoints],
    )
    write_records(
        _diagnostics_path(out, cell, "select"),
        ("epoch", "batch", "signed_wasserstein", "spoof_median", "target_median"),
        [(r.epoch, r.batch, r.signed_wasserstein, r.spoof_median, r.target_median) for r in records],
    )
    path = filter_path(out, cell)
    write_filter_file(path, make_filter_file(best.filter, cell.speaker_id, cell.attack_id, best.epoch, f_A, f_B))
    logger.info(f"Cell {cell.key}: selected epoch {best.epoch}")
    return path


def _run_cell(config: ExperimentConfig, cell: CellSpec, protocol: TrialProtocol) -> tuple[str, str | None]:
    try:
        train_cell(config, cell, protocol)
        return cell.key, None
    except Exception as e:
        logger.exception(f"Cell {cell.key} failed: {e}")
        return cell.key, f"{type(e).__name__}: {e}"


def plan_cells(protocol: TrialProtocol, grid: Sequence[tuple[int, int]]) -> list[CellSpec]:
    return [
        CellSpec(speaker_id=speaker, attack_id=attack, L=L, K=K)
        for L, K in grid
        for speaker, attack in protocol.cells()
    ]


def cmd_train(config: ExperimentConfig, skip_existing: bool = False) -> list[Path]:
    """Train every (speaker, attack, L, K) cell; raises CellFailure listing the cells that failed."""
    protocol = _load_protocol(config)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    (config.output_dir / "config.json").write_text(
        config.model_dump_json(indent=2, exclude={"workers"}) + "\n", encoding="utf-8"
    )

    cells = plan_cells(protocol, config.grid)
    todo = [c for c in cells if not (skip_existing and filter_path(config.output_dir, c).exists())]
    if len(todo) < len(cells):
        logger.info(f"Skipping {len(cells) - len(todo)} completed cell(s)")
    logger.info(f"Training {len(todo)} cell(s) with {config.workers} worker(s)")

    if config.workers == 1 or len(todo) <= 1:
        results = [_run_cell(config, cell, protocol) for cell in todo]
    else:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(todo))) as pool:
            results = list(pool.map(_run_cell, [config] * len(todo), todo, [protocol] * len(todo)))

    failures = {key: reason for key, reason in results if reason is not None}
    if failures:
        raise CellFailure(failures)
    return [filter_path(config.output_dir, c) for c in cells]


def load_filters(config: ExperimentConfig, L: int, K: int) -> dict[tuple[str, str], MalacopulaFilter]:
    directory = config.output_dir / "filters" / condition_name(L, K)
    filters = {}
    for path in sorted(directory.glob("*.mcf")):
        filter_file = read_filter_file(path, config.embedders.f_A, config.embedders.f_B)
        header = filter_file.header
        if (header.L, header.K) != (L, K):
            raise DataFormatError(f"filter shape K={header.K}, L={header.L} does not belong in {directory.name}", path)
        filters[(header.speaker_id, header.attack_id)] = filter_file.filter
    return filters


# Apply


def cmd_apply(filter_file: Path, in_wav: Path, out_wav: Path, sample_rate_hz: int | None = None) -> Path:
    """Filter one WAV file; output peak 1.0 maps to full scale minus one LSB."""
    f = read_filter_file(filter_file).filter
    x = read_wav(in_wav)
    if sample_rate_hz is not None and x.sample_rate_hz != sample_rate_hz:
        raise DataFormatError(f"sample rate {x.sample_rate_hz} Hz, expected {sample_rate_hz} Hz", in_wav)
    write_wav(out_wav, malacopula_apply(x, f))
    return out_wav


# Scoring


def _score_condition(
    config: ExperimentConfig,
    protocol: TrialProtocol,
    corpus: dict,
    condition: str,
    filters: dict[tuple[str, str], MalacopulaFilter] | None,
    roles: Sequence[EmbedderRole],
) -> list[EvalReport]:
    reports = []
    for role in roles:
        trials = score_trials(protocol, corpus, config.embedders.for_role(role), filters)
        write_scores(config.output_dir / "scores" / condition / f"{role}.scores", trials)
        report = report_from_trials(trials, role, condition)
        write_report(config.output_dir / "reports" / condition / f"{role}.report", report)
        logger.info(f"{condition} {role}: pooled spf-EER {100 * report.pooled_eer:.2f}%")
        reports.append(report)
    return reports


def cmd_score_and_eer(
    config: ExperimentConfig,
    filtered: bool = False,
    grid: Sequence[tuple[int, int]] | None = None,
    roles: Sequence[EmbedderRole] = ROLES,
) -> list[EvalReport]:
    """Score the baseline and, with ``filtered``, every grid cell's filters under each embedder role."""
    protocol = _load_protocol(config)
    corpus = load_corpus(protocol, config.corpus_dir)
    reports = _score_condition(config, protocol, corpus, BASELINE, None, roles)
    if not filtered:
        return reports
    for L, K in grid or config.grid:
        filters = load_filters(config, L, K)
        if not filters:
            raise InvalidArgumentError(
                f"--filtered requested but no filter files exist for {condition_name(L, K)} in {config.output_dir}"
            )
        reports += _score_condition(config, protocol, corpus, condition_name(L, K), filters, roles)
    return reports


# Report


class SummaryRow(BaseModel):
    condition: str
    pooled_eer: dict[str, float]
    gain: dict[str, float]


class RunSummary(BaseModel):
    rows: list[SummaryRow]
    grid_inversions: int
    per_attack: dict[str, dict[str, dict[str, float]]]  # role -> condition -> attack -> EER
    per_attack_gain: dict[str, dict[str, dict[str, float]]]  # same keys, EER minus baseline EER


def _condition_order(name: str) -> tuple[int, int, int]:
    if name == BASELINE:
        return (0, 0, 0)
    L, K = name[1:].split("_K")
    return (1, int(L), int(K))


def count_grid_inversions(summary_rows: Sequence[SummaryRow], role: str = "f_test") -> int:
    """Times the pooled gain drops as K grows at fixed L."""
    by_length: dict[int, list[tuple[int, float]]] = {}
    for row in summary_rows:
        if row.condition == BASELINE or role not in row.gain:
            continue
        _, L, K = _condition_order(row.condition)
        by_length.setdefault(L, []).append((K, row.gain[role]))
    inversions = 0
    for series in by_length.values():
        series.sort()
        inversions += sum(1 for (_, a), (_, b) in zip(series, series[1:]) if b < a)
    return inversions


def cmd_report(run_dir: Path) -> RunSummary:
    """Rebuild reports from the score files and write the comparison table and per-attack series."""
    scores_dir = run_dir / "scores"
    conditions = sorted((p.name for p in scores_dir.glob("*") if p.is_dir()), key=_condition_order)
    if BASELINE not in conditions:
        raise DataFormatError("missing baseline scores; run the score command first", scores_dir / BASELINE)

    reports: dict[str, dict[str, EvalReport]] = {}
    missing = []
    for condition in conditions:
        for role in ROLES:
            path = scores_dir / condition / f"{role}.scores"
            if not path.exists():
                missing.append(str(path))
                continue
            report = report_from_trials(read_scores(path), role, condition)
            write_report(run_dir / "reports" / condition / f"{role}.report", report)
            reports.setdefault(condition, {})[role] = report
    if missing:
        raise DataFormatError("missing score files: " + ", ".join(missing), scores_dir)

    baseline = reports[BASELINE]
    rows = []
    for condition in conditions:
        pooled = {role: r.pooled_eer for role, r in reports[condition].items()}
        gain = {role: pooled[role] - baseline[role].pooled_eer for role in pooled}
        rows.append(SummaryRow(condition=condition, pooled_eer=pooled, gain=gain))

    inversions = count_grid_inversions(rows)
    if inversions == 1:
        logger.warning("Pooled gain decreases once as K grows at fixed L")
    elif inversions > 1:
        logger.warning(f"Pooled gain decreases {inversions} times as K grows at fixed L")

    per_attack = {
        role: {
            condition: {a.attack_id: a.eer for a in reports[condition][role].per_attack} for condition in conditions
        }
        for role in ROLES
    }
    per_attack_gain = {
        role: {
            condition: {a: eer - by_condition[BASELINE].get(a, eer) for a, eer in eers.items()}
            for condition, eers in by_condition.items()
        }
        for role, by_condition in per_attack.items()
    }
    summary = RunSummary(
        rows=rows, grid_inversions=inversions, per_attack=per_attack, per_attack_gain=per_attack_gain
    )
    _write_summary(run_dir / "summary", summary)
    return summary


def _write_summary(directory: Path, summary: RunSummary) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    header = ["condition"] + [f"{role}_eer_%" for role in ROLES] + [f"{role}_gain_pp" for role in ROLES]
    lines = ["  ".join(f"{h:>14}" for h in header)]
    for row in summary.rows:
        cells = [row.condition] + [f"{100 * row.pooled_eer[r]:.2f}" for r in ROLES] + [
            f"{100 * row.gain[r]:+.2f}" for r in ROLES
        ]
        lines.append("  ".join(f"{c:>14}" for c in cells))
    lines.append(f"grid_inversions {summary.grid_inversions}")
    (directory / "table.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    for role, by_condition in summary.per_attack.items():
        gains = summary.per_attack_gain[role]
        attacks = sorted({a for eers in by_condition.values() for a in eers})
        columns = ("condition", *attacks, *(f"{a}_gain" for a in attacks))
        rows = [
            (condition, *(eers.get(a) for a in attacks), *(gains[condition].get(a) for a in attacks))
            for condition, eers in by_condition.items()
        ]
        write_records(directory / f"per_attack_{role}.tsv", columns, rows)
