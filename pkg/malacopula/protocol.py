"""Trial protocol: enrolment, target and spoof utterances keyed by speaker and attack.

File format, one entry per line, single spaces:
    role speaker_id utterance_id attack_id path
with role in {enrol, target, spoof} and attack_id "-" for bona fide entries.
Paths are relative to the protocol file's directory.
"""

import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .config import BONA_FIDE
from .errors import DataFormatError

logger = logging.getLogger(__name__)

Role = Literal["enrol", "target", "spoof"]


class ProtocolEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    speaker_id: str
    utterance_id: str
    attack_id: str
    path: str

    @model_validator(mode="after")
    def _attack_matches_role(self) -> "ProtocolEntry":
        if self.role == "spoof" and self.attack_id == BONA_FIDE:
            raise ValueError(f"spoof entry {self.utterance_id} needs an attack id")
        if self.role != "spoof" and self.attack_id != BONA_FIDE:
            raise ValueError(f"bona fide entry {self.utterance_id} must use attack id '{BONA_FIDE}'")
        for name in ("speaker_id", "utterance_id", "attack_id", "path"):
            value = getattr(self, name)
            if not value or any(c.isspace() for c in value):
                raise ValueError(f"{name} must be a non-empty token without whitespace, got {value!r}")
        return self

    def to_line(self) -> str:
        return f"{self.role} {self.speaker_id} {self.utterance_id} {self.attack_id} {self.path}"


class TrialProtocol(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: list[ProtocolEntry]

    @model_validator(mode="after")
    def _unique_utterances(self) -> "TrialProtocol":
        seen: set[str] = set()
        for entry in self.entries:
            if entry.utterance_id in seen:
                raise ValueError(f"duplicate utterance id {entry.utterance_id}")
            seen.add(entry.utterance_id)
        return self

    def speakers(self) -> list[str]:
        return sorted({e.speaker_id for e in self.entries})

    def attacks(self) -> list[str]:
        return sorted({e.attack_id for e in self.entries if e.role == "spoof"})

    def select(self, role: Role, speaker_id: str | None = None, attack_id: str | None = None) -> list[ProtocolEntry]:
        return [
            e
            for e in self.entries
            if e.role == role
            and (speaker_id is None or e.speaker_id == speaker_id)
            and (attack_id is None or e.attack_id == attack_id)
        ]

    def cells(self) -> list[tuple[str, str]]:
        """(speaker, attack) pairs that have spoofed utterances, sorted."""
        return sorted({(e.speaker_id, e.attack_id) for e in self.entries if e.role == "spoof"})


def write_protocol(protocol: TrialProtocol, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text("".join(e.to_line() + "\n" for e in protocol.entries), encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write protocol file {path}: {e}") from e


def read_protocol(path: Path) -> TrialProtocol:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read protocol: {e}", path) from e

    entries = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != 5:
            raise DataFormatError(f"expected 5 space-separated fields, got {len(fields)}", path, number)
        try:
            entries.append(
                ProtocolEntry(
                    role=fields[0], speaker_id=fields[1], utterance_id=fields[2], attack_id=fields[3], path=fields[4]
                )
            )
        except ValidationError as e:
            raise DataFormatError(f"invalid entry: {e.errors()[0]['msg']}", path, number) from e
    try:
        protocol = TrialProtocol(entries=entries)
    except ValidationError as e:
        raise DataFormatError(e.errors()[0]["msg"], path) from e
    logger.debug(f"Read {len(entries)} protocol entries from {path}")
    return protocol
