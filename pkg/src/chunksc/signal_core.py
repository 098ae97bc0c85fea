"""Waveforms, chunk segmentation and chunk activity detection.

Chunk energy is measured as 10*log10(sum(x^2) + ENERGY_FLOOR) in dB. The
activity threshold (default 15 dB) is compared against this quantity; the
floor constant keeps all-zero chunks finite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ChunkLenExceedsSignal, InvalidHop, LengthMismatch

# Additive floor inside the dB conversion; keeps silence finite without
# perturbing audible-level energies.
ENERGY_FLOOR = 1e-12


class ChunkMode(enum.Enum):
    TRAINING = "training"
    INFERENCE = "inference"


@dataclass(frozen=True)
class Waveform:
    """A finite mono signal: float64 samples plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class ChunkingConfig:
    """Chunk length and hop in milliseconds.

    In inference mode the hop is ignored and chunks tile the signal without
    overlap (effective hop == chunk length). A literal hop of zero would make
    the chunk count ceil((T-L)/O + 1) undefined, so "no overlap" is the
    zero-overlap reading used here.
    """

    chunk_len_ms: float = 250.0
    hop_ms: float = 125.0
    mode: ChunkMode = ChunkMode.TRAINING

    def __post_init__(self):
        if self.chunk_len_ms <= 0:
            raise ValueError("chunk_len_ms must be positive")


@dataclass(frozen=True)
class ChunkIndex:
    """Half-open sample range [start, end)."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid chunk range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ActivityConfig:
    """Energy threshold (dB) a chunk must exceed to count as speech-active."""

    eta_db: float = 15.0

    def __post_init__(self):
        if not math.isfinite(self.eta_db):
            raise ValueError("eta_db must be finite")


def samples_from_ms(ms: float, sample_rate: int) -> int:
    """Milliseconds to sample count, rounded to nearest."""
    return int(round(ms * sample_rate / 1000.0))


def make_chunks(n_samples: int, cfg: ChunkingConfig, sample_rate: int) -> list[ChunkIndex]:
    """Segment [0, n_samples) into chunks of length L with hop O.

    Returns exactly ceil((T-L)/O + 1) chunks. Starts advance by exactly the
    hop; the last chunk is truncated at the signal end (never zero-padded, so
    energy statistics stay honest).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    chunk_len = samples_from_ms(cfg.chunk_len_ms, sample_rate)
    if chunk_len > n_samples:
        raise ChunkLenExceedsSignal(
            f"chunk length {chunk_len} samples exceeds signal length {n_samples}"
        )
    if cfg.mode is ChunkMode.INFERENCE:
        hop = chunk_len
    else:
        hop = samples_from_ms(cfg.hop_ms, sample_rate)
        if hop <= 0:
            raise InvalidHop(f"training-mode hop must be positive, got {hop} samples")
        if hop > chunk_len:
            raise InvalidHop("training-mode hop must not exceed the chunk length")
    n_chunks = math.ceil((n_samples - chunk_len) / hop) + 1
    return [
        ChunkIndex(k * hop, min(k * hop + chunk_len, n_samples))
        for k in range(n_chunks)
    ]


def chunk_energy_db(w: Waveform, idx: ChunkIndex) -> float:
    """Chunk energy 10*log10(sum(x^2) + ENERGY_FLOOR) in dB."""
    if idx.end > len(w):
        raise ValueError("chunk index out of bounds")
    x = w.samples[idx.start:idx.end]
    return 10.0 * math.log10(float(np.dot(x, x)) + ENERGY_FLOOR)


def is_active(ws: Waveform, we: Waveform, idx: ChunkIndex, cfg: ActivityConfig) -> bool:
    """True iff both waveforms exceed the energy threshold on this chunk."""
    if len(ws) != len(we):
        raise LengthMismatch(
            f"waveforms differ in length: {len(ws)} vs {len(we)}"
        )
    return (
        chunk_energy_db(ws, idx) > cfg.eta_db
        and chunk_energy_db(we, idx) > cfg.eta_db
    )
