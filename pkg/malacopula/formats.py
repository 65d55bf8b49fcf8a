"""On-disk artifacts: PCM16 WAV, filter files, score files, reports and diagnostic records."""

import logging
import struct
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.io.wavfile
from pydantic import BaseModel, ConfigDict, ValidationError

from .config import BONA_FIDE, PCM_LIMIT, PCM_SCALE, EmbedderConfig
from .embedder import config_hash
from .errors import DataFormatError
from .evaluation import AttackResult, EvalReport, Trial
from .hammerstein import MalacopulaFilter, Signal

logger = logging.getLogger(__name__)

FILTER_MAGIC = b"MALACOPULA"
FILTER_FORMAT_VERSION = 1
_HEADER_LENGTH = struct.Struct("<I")


# WAV


def read_wav(path: Path) -> Signal:
    """Read a mono PCM16 WAV file as floats with x = q / 32766."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError as e:
        raise DataFormatError("no such WAV file", path) from e
    except (OSError, ValueError) as e:
        raise DataFormatError(f"unreadable WAV file: {e}", path) from e
    if data.dtype != np.int16:
        raise DataFormatError(f"expected 16-bit PCM samples, got {data.dtype}", path)
    if data.ndim != 1:
        raise DataFormatError(f"expected mono audio, got {data.shape[1]} channels", path)
    if data.shape[0] == 0:
        raise DataFormatError("WAV file holds no samples", path)
    return Signal(samples=data.astype(np.float64) / PCM_SCALE, sample_rate_hz=int(rate))


def quantize(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(samples * PCM_SCALE), -PCM_LIMIT, PCM_LIMIT).astype("<i2")


def write_wav(path: Path, x: Signal) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        scipy.io.wavfile.write(path, x.sample_rate_hz, quantize(x.samples))
    except OSError as e:
        raise OSError(f"cannot write WAV file {path}: {e}") from e


# Filter files


class FilterHeader(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    format_version: int = FILTER_FORMAT_VERSION
    K: int
    L: int
    speaker_id: str
    attack_id: str
    selected_epoch: int
    f_A_hash: str
    f_B_hash: str


class FilterFile(BaseModel):
    model_config = ConfigDict(frozen=True)

    header: FilterHeader
    filter: MalacopulaFilter


def make_filter_file(
    f: MalacopulaFilter, speaker_id: str, attack_id: str, selected_epoch: int, f_A: EmbedderConfig, f_B: EmbedderConfig
) -> FilterFile:
    header = FilterHeader(
        K=f.K,
        L=f.L,
        speaker_id=speaker_id,
        attack_id=attack_id,
        selected_epoch=selected_epoch,
        f_A_hash=config_hash(f_A),
        f_B_hash=config_hash(f_B),
    )
    return FilterFile(header=header, filter=f)


def write_filter_file(path: Path, filter_file: FilterFile) -> None:
    header = filter_file.header.model_dump_json().encode("utf-8")
    payload = np.ascontiguousarray(filter_file.filter.coeffs, dtype="<f8").tobytes(order="C")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_bytes(FILTER_MAGIC + _HEADER_LENGTH.pack(len(header)) + header + payload)
    except OSError as e:
        raise OSError(f"cannot write filter file {path}: {e}") from e


def read_filter_file(
    path: Path, f_A: EmbedderConfig | None = None, f_B: EmbedderConfig | None = None
) -> FilterFile:
    """Read a filter file; warns when the recorded embedder hashes differ from ``f_A``/``f_B``."""
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read filter file: {e}", path) from e
    if not blob.startswith(FILTER_MAGIC):
        raise DataFormatError("not a filter file (bad magic)", path)
    offset = len(FILTER_MAGIC)
    if len(blob) < offset + _HEADER_LENGTH.size:
        raise DataFormatError("truncated header", path)
    (length,) = _HEADER_LENGTH.unpack_from(blob, offset)
    offset += _HEADER_LENGTH.size
    try:
        header = FilterHeader.model_validate_json(blob[offset : offset + length])
    except ValidationError as e:
        raise DataFormatError(f"invalid header: {e.errors()[0]['msg']}", path) from e
    if header.format_version != FILTER_FORMAT_VERSION:
        raise DataFormatError(f"unsupported format version {header.format_version}", path)
    payload = blob[offset + length :]
    expected = header.K * header.L * 8
    if len(payload) != expected:
        raise DataFormatError(f"payload holds {len(payload)} bytes, header implies {expected}", path)
    coeffs = np.frombuffer(payload, dtype="<f8").reshape(header.K, header.L)
    try:
        f = MalacopulaFilter(coeffs=coeffs)
    except ValidationError as e:
        raise DataFormatError(f"invalid coefficients: {e.errors()[0]['msg']}", path) from e

    for role, cfg, recorded in (("f_A", f_A, header.f_A_hash), ("f_B", f_B, header.f_B_hash)):
        if cfg is not None and config_hash(cfg) != recorded:
            logger.warning(f"{path}: filter was trained with a different {role} configuration")
    return FilterFile(header=header, filter=f)


# Score files


def trial_line(t: Trial) -> str:
    # repr round-trips a float64 exactly
    return f"{t.speaker_id} {t.utterance_id} {t.attack_id} {t.label} {t.score!r}"


def write_scores(path: Path, trials: Iterable[Trial]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text("".join(trial_line(t) + "\n" for t in trials), encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write score file {path}: {e}") from e


def read_scores(path: Path) -> list[Trial]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read score file: {e}", path) from e
    trials = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != 5:
            raise DataFormatError(f"expected 5 space-separated fields, got {len(fields)}", path, number)
        speaker, utt, attack, label, raw = fields
        if label not in ("target", "spoof"):
            raise DataFormatError(f"unknown label '{label}'", path, number)
        if (label == "target") != (attack == BONA_FIDE):
            raise DataFormatError(f"label '{label}' inconsistent with attack id '{attack}'", path, number)
        try:
            score = float(raw)
        except ValueError as e:
            raise DataFormatError(f"score '{raw}' is not a number", path, number) from e
        if not np.isfinite(score):
            raise DataFormatError(f"score '{raw}' is not finite", path, number)
        trials.append(Trial(speaker_id=speaker, utterance_id=utt, attack_id=attack, label=label, score=score))
    return trials


# Reports


_REPORT_KEYS = ("role", "condition", "pooled_eer", "pooled_threshold", "n_target", "n_spoof")
_TABLE_HEADER = "attack_id eer threshold n_target n_spoof"


def write_report(path: Path, report: EvalReport) -> None:
    lines = []
    for key in _REPORT_KEYS:
        value = getattr(report, key)
        lines.append(f"{key} {value!r}" if isinstance(value, float) else f"{key} {value}")
    lines.append(_TABLE_HEADER)
    for r in report.per_attack:
        lines.append(f"{r.attack_id} {r.eer!r} {r.threshold!r} {r.n_target} {r.n_spoof}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write report {path}: {e}") from e


def read_report(path: Path) -> EvalReport:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read report: {e}", path) from e
    values: dict[str, str] = {}
    per_attack = []
    in_table = False
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line == _TABLE_HEADER:
            in_table = True
            continue
        fields = line.split(" ")
        try:
            if in_table:
                attack, eer, threshold, n_target, n_spoof = fields
                per_attack.append(
                    AttackResult(
                        attack_id=attack,
                        eer=float(eer),
                        threshold=float(threshold),
                        n_target=int(n_target),
                        n_spoof=int(n_spoof),
                    )
                )
            else:
                key, value = fields
                if key not in _REPORT_KEYS:
                    raise DataFormatError(f"unknown key '{key}'", path, number)
                values[key] = value
        except ValueError as e:
            raise DataFormatError(f"malformed line: {line!r}", path, number) from e
    missing = [key for key in _REPORT_KEYS if key not in values]
    if missing:
        raise DataFormatError(f"missing keys {missing}", path)
    try:
        return EvalReport.model_validate({**values, "per_attack": per_attack})
    except ValidationError as e:
        raise DataFormatError(f"invalid report: {e.errors()[0]['msg']}", path) from e


# Diagnostic records


def write_records(path: Path, columns: tuple[str, ...], rows: Iterable[tuple]) -> None:
    """Tab-separated records with a header line; floats written with repr."""
    def cell(value) -> str:
        if value is None:
            return "-"
        return repr(value) if isinstance(value, float) else str(value)

    lines = ["\t".join(columns)] + ["\t".join(cell(v) for v in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write records {path}: {e}") from e


def read_records(path: Path) -> list[dict[str, str]]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read records: {e}", path) from e
    if not lines:
        raise DataFormatError("empty record file", path)
    columns = lines[0].split("\t")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(columns):
            raise DataFormatError(f"expected {len(columns)} fields, got {len(fields)}", path, number)
        rows.append(dict(zip(columns, fields)))
    return rows

