"""Deterministic synthetic speakers and spoofing attacks.

A speaker is a source-filter voice: aspiration noise plus a vibrato harmonic
series at the speaker's pitch, shaped by a smooth spectral envelope made of a
few formant-like resonances over a floor, under a slow amplitude envelope.
Attacks re-synthesize the target speaker and then distort it: detune the
resonances, warp their gains, mix in white noise or blend in a decoy speaker.
"""

import logging
from pathlib import Path

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import BONA_FIDE, DEFAULT_SAMPLE_RATE, AttackSpec, CorpusConfig
from .errors import InvalidArgumentError
from .formats import read_wav, write_wav
from .hammerstein import Signal
from .protocol import ProtocolEntry, TrialProtocol, write_protocol
from .seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

MIN_COMPONENT_HZ = 200.0
MAX_COMPONENT_HZ = 5000.0
MIN_DURATION_S = 0.5

# spectral envelope level between resonances, relative to a unit-gain resonance
ENVELOPE_FLOOR = 0.02
# harmonic source RMS relative to the aspiration noise
VOICED_WEIGHT = 0.5
VIBRATO_DEPTH = 0.03
VIBRATO_HZ = 5.0

_PROFILE_STREAM = 0
_ATTACK_STREAM = 1
_DECOY_STREAM = 2


class SpeakerProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    speaker_id: str
    frequencies: list[float] = Field(min_length=1)
    bandwidths: list[float] = Field(min_length=1)
    amplitudes: list[float] = Field(min_length=1)
    pitch_hz: float = Field(gt=0)
    envelope_hz: float = Field(gt=0)
    noise_floor: float = Field(ge=0)
    seed: int = Field(ge=0)

    @model_validator(mode="after")
    def _components(self) -> "SpeakerProfile":
        if not len(self.frequencies) == len(self.bandwidths) == len(self.amplitudes):
            raise ValueError("frequencies, bandwidths and amplitudes must have the same length")
        return self


def _draw_profile(rng: np.random.Generator, speaker_id: str, sample_rate: int) -> SpeakerProfile:
    top = min(MAX_COMPONENT_HZ, 0.45 * sample_rate)
    n = int(rng.integers(3, 6))
    # log-uniform so low formant-like regions are not crowded out
    frequencies = np.sort(np.exp(rng.uniform(np.log(MIN_COMPONENT_HZ), np.log(top), size=n)))
    return SpeakerProfile(
        speaker_id=speaker_id,
        frequencies=frequencies.tolist(),
        bandwidths=rng.uniform(80.0, 250.0, size=n).tolist(),
        amplitudes=rng.uniform(0.3, 1.0, size=n).tolist(),
        pitch_hz=float(rng.uniform(90.0, 250.0)),
        envelope_hz=float(rng.uniform(3.0, 6.0)),
        noise_floor=float(rng.uniform(1e-3, 3e-3)),
        seed=int(rng.integers(0, 2**31)),
    )


def make_speaker_profiles(n_speakers: int, seed: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[SpeakerProfile]:
    if n_speakers < 1:
        raise InvalidArgumentError(f"need at least one speaker, got {n_speakers}")
    rng = make_rng(seed, _PROFILE_STREAM)
    profiles: list[SpeakerProfile] = []
    while len(profiles) < n_speakers:
        profile = _draw_profile(rng, f"S{len(profiles) + 1:02d}", sample_rate)
        if any(p.frequencies == profile.frequencies for p in profiles):
            continue
        profiles.append(profile)
    return profiles


def spectral_envelope(
    freqs_hz: np.ndarray, centers: np.ndarray, bandwidths: np.ndarray, amplitudes: np.ndarray
) -> np.ndarray:
    """Magnitude response: Gaussian resonances summed over a flat floor."""
    env = np.full(freqs_hz.shape, ENVELOPE_FLOOR)
    for fc, bw, a in zip(centers, bandwidths, amplitudes):
        env += a * np.exp(-0.5 * ((freqs_hz - fc) / bw) ** 2)
    return env


def _source(rng: np.random.Generator, pitch_hz: float, n_samples: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n_samples) / sample_rate
    f0 = pitch_hz * (1.0 + VIBRATO_DEPTH * np.sin(2 * np.pi * VIBRATO_HZ * t + rng.uniform(0.0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    n_harmonics = max(1, int(0.45 * sample_rate / (pitch_hz * (1.0 + VIBRATO_DEPTH))))
    voiced = np.zeros(n_samples)
    for h in range(1, n_harmonics + 1):
        voiced += np.sin(h * phase + rng.uniform(0.0, 2 * np.pi))
    voiced *= VOICED_WEIGHT * np.sqrt(2.0 / n_harmonics)
    return rng.standard_normal(n_samples) + voiced


def _synthesize(
    profile: SpeakerProfile,
    rng: np.random.Generator,
    n_samples: int,
    sample_rate: int,
    frequency_scale: float = 1.0,
    amplitude_scale: np.ndarray | None = None,
) -> np.ndarray:
    n_components = len(profile.frequencies)
    centers = np.asarray(profile.frequencies) * frequency_scale * (1.0 + rng.uniform(-0.01, 0.01, n_components))
    centers = np.minimum(centers, 0.45 * sample_rate)
    amps = np.asarray(profile.amplitudes) * (1.0 + rng.uniform(-0.1, 0.1, n_components))
    if amplitude_scale is not None:
        amps = amps * amplitude_scale
    pitch = profile.pitch_hz * (1.0 + rng.uniform(-0.01, 0.01))

    source = _source(rng, pitch, n_samples, sample_rate)
    bins = scipy.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    envelope = spectral_envelope(bins, centers, np.asarray(profile.bandwidths), amps)
    x = scipy.fft.irfft(scipy.fft.rfft(source) * envelope, n=n_samples)

    t = np.arange(n_samples) / sample_rate
    x *= 1.0 + 0.5 * np.sin(2 * np.pi * profile.envelope_hz * t + rng.uniform(0.0, 2 * np.pi))
    x += profile.noise_floor * float(np.std(x)) * rng.standard_normal(n_samples)
    return x


def _peak_normalize(samples: np.ndarray, peak: float) -> np.ndarray:
    top = float(np.max(np.abs(samples)))
    if top == 0.0:
        return samples
    return samples * (peak / top)


def _n_samples(duration_s: float, sample_rate: int) -> int:
    if duration_s < MIN_DURATION_S:
        raise InvalidArgumentError(f"utterances must last at least {MIN_DURATION_S} s, got {duration_s}")
    return int(round(duration_s * sample_rate))


def generate_utterance(
    profile: SpeakerProfile,
    duration_s: float,
    utt_seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    peak: float = 0.9,
) -> Signal:
    """Bona fide utterance with per-utterance jitter (frequency +/-1%, amplitude +/-10%), peak-normalized."""
    n = _n_samples(duration_s, sample_rate)
    x = _synthesize(profile, make_rng(profile.seed, utt_seed), n, sample_rate)
    return Signal(samples=_peak_normalize(x, peak), sample_rate_hz=sample_rate)


def decoy_profile(target_profile: SpeakerProfile, attack: AttackSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> SpeakerProfile:
    rng = make_rng(target_profile.seed, _DECOY_STREAM, int(attack.attack_id[1:]))
    return _draw_profile(rng, f"{target_profile.speaker_id}_{attack.attack_id}_decoy", sample_rate)


def generate_spoof(
    target_profile: SpeakerProfile,
    attack: AttackSpec,
    utt_seed: int,
    duration_s: float = 1.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    peak: float = 0.9,
) -> Signal:
    n = _n_samples(duration_s, sample_rate)
    attack_number = int(attack.attack_id[1:])
    rng = make_rng(target_profile.seed, _ATTACK_STREAM, attack_number, utt_seed)
    s = attack.severity

    if attack.kind == "detune":
        x = _synthesize(target_profile, rng, n, sample_rate, frequency_scale=1.0 + s)
    elif attack.kind == "amplitude_warp":
        # fixed per (speaker, attack) so every spoof of the attack shares the warp
        warp_rng = make_rng(target_profile.seed, _ATTACK_STREAM, attack_number)
        warp = np.exp(s * warp_rng.uniform(-1.0, 1.0, len(target_profile.amplitudes)))
        x = _synthesize(target_profile, rng, n, sample_rate, amplitude_scale=warp)
    elif attack.kind == "noise_mix":
        x = _synthesize(target_profile, rng, n, sample_rate)
        rms = float(np.sqrt(np.mean(x * x)))
        x = x + s * rms * rng.standard_normal(n)
    elif attack.kind == "component_swap":
        own = _synthesize(target_profile, rng, n, sample_rate)
        decoy = _synthesize(decoy_profile(target_profile, attack, sample_rate), rng, n, sample_rate)
        x = (1.0 - s) * _peak_normalize(own, 1.0) + s * _peak_normalize(decoy, 1.0)
    else:
        raise InvalidArgumentError(f"unknown attack kind '{attack.kind}'")
    return Signal(samples=_peak_normalize(x, peak), sample_rate_hz=sample_rate)


def build_protocol(cfg: CorpusConfig, out_dir: Path) -> TrialProtocol:
    """Write every utterance to ``out_dir/wav`` and the protocol to ``out_dir/protocol.txt``.

    The same partition serves filter training and evaluation: the attacker
    may use the test speakers' data.
    """
    if cfg.n_speakers == 1:
        logger.warning("Building a single-speaker protocol: no cross-speaker trials will exist")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out_dir}: {e}") from e
    profiles = make_speaker_profiles(cfg.n_speakers, cfg.seed, cfg.sample_rate_hz)
    entries: list[ProtocolEntry] = []

    def emit(role: str, speaker_id: str, utterance_id: str, attack_id: str, x: Signal) -> None:
        rel = f"wav/{utterance_id}.wav"
        write_wav(out_dir / rel, x)
        entries.append(
            ProtocolEntry(role=role, speaker_id=speaker_id, utterance_id=utterance_id, attack_id=attack_id, path=rel)
        )

    def bona_fide(profile: SpeakerProfile, role: str, index: int) -> Signal:
        seed = derive_seed(role, profile.speaker_id, index)
        return generate_utterance(profile, cfg.duration_s, seed, cfg.sample_rate_hz, cfg.peak)

    for profile in profiles:
        spk = profile.speaker_id
        for j in range(cfg.n_enrol):
            emit("enrol", spk, f"{spk}_enrol_{j:02d}", BONA_FIDE, bona_fide(profile, "enrol", j))
        for j in range(cfg.n_target):
            emit("target", spk, f"{spk}_target_{j:02d}", BONA_FIDE, bona_fide(profile, "target", j))
        for attack in cfg.attacks:
            for j in range(cfg.n_spoof_per_attack):
                seed = derive_seed("spoof", spk, attack.attack_id, j)
                x = generate_spoof(profile, attack, seed, cfg.duration_s, cfg.sample_rate_hz, cfg.peak)
                emit("spoof", spk, f"{spk}_{attack.attack_id}_{j:02d}", attack.attack_id, x)
        logger.debug(f"Generated utterances for speaker {spk}")

    protocol = TrialProtocol(entries=entries)
    write_protocol(protocol, out_dir / "protocol.txt")
    logger.info(f"Wrote {len(entries)} utterances for {cfg.n_speakers} speaker(s) to {out_dir}")
    return protocol


def load_corpus(protocol: TrialProtocol, root: Path) -> dict[str, Signal]:
    """Read every utterance named by ``protocol`` relative to ``root``."""
    return {entry.utterance_id: read_wav(root / entry.path) for entry in protocol.entries}
