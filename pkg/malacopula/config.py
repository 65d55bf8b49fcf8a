import os
import tomllib
from pathlib import Path
from typing import Final, Literal, NamedTuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ExitCodes(NamedTuple):
    success: int
    usage: int      # bad flags, invalid config, violated preconditions
    data: int       # unreadable or malformed files
    cell: int       # at least one training cell failed


EXIT_CODES: Final = ExitCodes(success=0, usage=1, data=2, cell=3)

# Signal core
DEFAULT_SAMPLE_RATE: Final = 16000
NORM_EPS: Final = 1e-9  # L-inf normalization passes signals through below this peak
DIRECT_CONV_CROSSOVER: Final = 50_000  # N * L below which direct convolution is used

# Embedder numerics
MEL_EPS: Final = 1e-8
STD_EPS: Final = 1e-8

# PCM16: peak 1.0 maps to full scale minus one LSB
PCM_SCALE: Final = 32766.0
PCM_LIMIT: Final = 32767

# Worker pool size for cmd_train; override with MALACOPULA_WORKERS
DEFAULT_WORKERS: Final = int(os.getenv("MALACOPULA_WORKERS", str(os.cpu_count() or 1)))

# Filter grid explored for the pooled comparison: L in {257, 1025}, K in {1, 3, 5}
FULL_GRID: Final = [(257, 1), (257, 3), (257, 5), (1025, 1), (1025, 3), (1025, 5)]
DEFAULT_GRID: Final = [(257, 5)]

BONA_FIDE: Final = "-"

EmbedderRole = Literal["f_A", "f_B", "f_test"]
ROLES: Final[tuple[EmbedderRole, ...]] = ("f_A", "f_B", "f_test")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EmbedderConfig(_Strict):
    frame_length: int = Field(gt=0)
    hop_length: int = Field(gt=0)
    fft_size: int = Field(gt=0)
    mel_bands: int = Field(gt=0)
    embedding_dim: int = Field(gt=0)
    projection_seed: int = Field(ge=0)
    sample_rate_hz: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)

    @model_validator(mode="after")
    def _check_shape(self) -> "EmbedderConfig":
        if self.fft_size < self.frame_length:
            raise ValueError(f"fft_size ({self.fft_size}) must be >= frame_length ({self.frame_length})")
        if self.mel_bands >= self.fft_size / 2:
            raise ValueError(f"mel_bands ({self.mel_bands}) must be < fft_size/2 ({self.fft_size / 2})")
        if self.embedding_dim > 2 * self.mel_bands:
            raise ValueError(
                f"embedding_dim ({self.embedding_dim}) must be <= 2*mel_bands ({2 * self.mel_bands})"
            )
        return self


# Train / select / test extractors
F_A: Final = EmbedderConfig(
    frame_length=400, hop_length=160, fft_size=512, mel_bands=24, embedding_dim=32, projection_seed=101
)
F_B: Final = EmbedderConfig(
    frame_length=512, hop_length=200, fft_size=512, mel_bands=32, embedding_dim=24, projection_seed=202
)
F_TEST: Final = EmbedderConfig(
    frame_length=400, hop_length=200, fft_size=512, mel_bands=28, embedding_dim=28, projection_seed=303
)


class EmbedderRoles(_Strict):
    f_A: EmbedderConfig = F_A
    f_B: EmbedderConfig = F_B
    f_test: EmbedderConfig = F_TEST

    def for_role(self, role: EmbedderRole) -> EmbedderConfig:
        return getattr(self, role)


class TrainingConfig(_Strict):
    epochs: int = Field(default=60, gt=0)
    batch_size: int = Field(default=12, gt=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    K: int = Field(default=5, ge=1)
    L: int = Field(default=257, ge=1)
    seed: int = Field(default=0, ge=0)
    checkpoint_every: Literal["epoch", "batch"] = "epoch"

    @field_validator("L")
    @classmethod
    def _odd_length(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"filter length L must be odd, got {value}")
        return value


AttackKind = Literal["detune", "amplitude_warp", "noise_mix", "component_swap"]


class AttackSpec(_Strict):
    attack_id: str = Field(pattern=r"^A\d{2}$")
    kind: AttackKind
    severity: float = Field(gt=0)

    @model_validator(mode="after")
    def _swap_ratio(self) -> "AttackSpec":
        if self.kind == "component_swap" and self.severity > 1:
            raise ValueError(f"component_swap severity is a mixing ratio in (0, 1], got {self.severity}")
        return self


DEFAULT_ATTACKS: Final = [
    AttackSpec(attack_id="A01", kind="detune", severity=0.04),
    AttackSpec(attack_id="A02", kind="amplitude_warp", severity=0.8),
    AttackSpec(attack_id="A03", kind="noise_mix", severity=0.3),
    AttackSpec(attack_id="A04", kind="component_swap", severity=0.4),
]


class CorpusConfig(_Strict):
    n_speakers: int = Field(default=8, ge=1)
    n_enrol: int = Field(default=3, ge=1)
    n_target: int = Field(default=10, ge=1)
    n_spoof_per_attack: int = Field(default=10, ge=1)
    duration_s: float = Field(default=1.0, ge=0.5)
    sample_rate_hz: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)
    peak: float = Field(default=0.9, gt=0, le=1)
    seed: int = Field(default=2024, ge=0)
    attacks: list[AttackSpec] = Field(default_factory=lambda: list(DEFAULT_ATTACKS), min_length=1)

    @field_validator("attacks")
    @classmethod
    def _unique_ids(cls, attacks: list[AttackSpec]) -> list[AttackSpec]:
        ids = [a.attack_id for a in attacks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"attack ids must be unique, got {ids}")
        return attacks


class ExperimentConfig(_Strict):
    corpus_dir: Path = Path("corpus")
    output_dir: Path = Path("runs/default")
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    embedders: EmbedderRoles = Field(default_factory=EmbedderRoles)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    grid: list[tuple[int, int]] = Field(default_factory=lambda: list(DEFAULT_GRID), min_length=1)
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("grid")
    @classmethod
    def _valid_cells(cls, grid: list[tuple[int, int]]) -> list[tuple[int, int]]:
        for L, K in grid:
            if L < 1 or L % 2 == 0:
                raise ValueError(f"grid filter length must be a positive odd integer, got L={L}")
            if K < 1:
                raise ValueError(f"grid branch count must be >= 1, got K={K}")
        if len(set(grid)) != len(grid):
            raise ValueError(f"grid cells must be unique, got {grid}")
        return grid


def load_config(path: Path | str | None = None, **overrides) -> ExperimentConfig:
    """Read a TOML experiment file (or the defaults) and apply top-level overrides.

    Unknown keys anywhere in the document are rejected by validation.
    """
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    data.update({key: value for key, value in overrides.items() if value is not None})
    return ExperimentConfig.model_validate(data)


def parse_grid(text: str) -> list[tuple[int, int]]:
    """Parse ``"257:5,1025:3"`` into ``[(257, 5), (1025, 3)]``."""
    cells = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            length, depth = item.split(":")
            cells.append((int(length), int(depth)))
        except ValueError as e:
            raise ValueError(f"grid cell '{item}' is not of the form L:K") from e
    return cells
