"""SI-SDR, SI-SDR improvement, and chunk-level speaker-confusion statistics.

SI-SNRi and SI-SDRi are treated as the same scale-invariant quantity; there
is a single implementation.

Two improvement conventions coexist deliberately:

* utterance level: SI-SDR(estimate, target) - SI-SDR(mixture, target);
* chunk level: SI-SDR(estimate_k, target_k) - SI-SDR(estimate_k, mixture_k),
  i.e. the subtracted term scores the estimate chunk against the mixture
  chunk as reference.

The chunkwise confusion ratio r_scr is stored in percent; losses convert it
to a [0, 1] fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch, ZeroTarget
from .signal_core import ActivityConfig, ChunkIndex, Waveform, is_active


@dataclass(frozen=True)
class SiSdrConfig:
    """Numerical guards: symmetric dB clamp and a floor inside the ratio."""

    clamp_db: float = 60.0
    eps: float = 1e-12

    def __post_init__(self):
        if self.clamp_db < 30:
            raise ValueError("clamp_db must be >= 30")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class BinEdges:
    """Interior boundaries of the 4 improvement classes.

    Intervals are (-inf, e1], (e1, e2], (e2, e3], (e3, inf): closed on the
    right, open on the left.
    """

    edges: tuple[float, float, float] = (-5.0, 0.0, 5.0)

    def __post_init__(self):
        if len(self.edges) != 3 or not (self.edges[0] < self.edges[1] < self.edges[2]):
            raise ValueError("edges must be 3 strictly increasing values")

    def classify(self, value: float) -> int:
        """Class index 0..3 of a chunkwise improvement value."""
        return int(np.searchsorted(self.edges, value, side="left"))


@dataclass
class ScStatistics:
    """Per-utterance chunkwise speaker-confusion bookkeeping."""

    chunk_sisdri: np.ndarray  # one value per valid chunk, chunk order
    n_sc: int
    n_valid: int
    r_scr: float  # percent in [0, 100]
    class_freq: tuple[int, int, int, int]
    class_sum: tuple[float, float, float, float]
    degenerate: bool = False


def _si_sdr_parts(estimate: np.ndarray, target: np.ndarray, cfg: SiSdrConfig):
    """Shared core: returns (value_db_clamped, alpha, projection, residual,
    num, den, clamped_flag)."""
    if estimate.size != target.size:
        raise LengthMismatch(
            f"estimate has {estimate.size} samples, target has {target.size}"
        )
    target_energy = float(np.dot(target, target))
    if target_energy < cfg.eps:
        raise ZeroTarget("target signal has zero energy")
    alpha = float(np.dot(estimate, target)) / target_energy
    projection = alpha * target
    residual = estimate - projection
    num = float(np.dot(projection, projection))
    den = float(np.dot(residual, residual))
    raw = 10.0 * np.log10((num + cfg.eps) / (den + cfg.eps))
    clamped = abs(raw) >= cfg.clamp_db
    value = float(np.clip(raw, -cfg.clamp_db, cfg.clamp_db))
    return value, alpha, projection, residual, num, den, clamped


def si_sdr(estimate: Waveform, target: Waveform, cfg: SiSdrConfig = SiSdrConfig()) -> float:
    """Scale-invariant SDR of the estimate against the target, in dB.

    Uses the optimal-scaling projection alpha = <e,t>/||t||^2 and returns
    10*log10(||alpha t||^2 / ||alpha t - e||^2), clamped to +-clamp_db.
    """
    value, *_ = _si_sdr_parts(estimate.samples, target.samples, cfg)
    return value


def si_sdr_improvement(
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform,
    cfg: SiSdrConfig = SiSdrConfig(),
) -> float:
    """Utterance-level improvement: si_sdr(estimate, target) - si_sdr(mixture, target)."""
    return si_sdr(estimate, target, cfg) - si_sdr(mixture, target, cfg)


def chunkwise_sisdri(
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform,
    chunks: list[ChunkIndex],
    cfg: SiSdrConfig = SiSdrConfig(),
) -> np.ndarray:
    """Per-chunk SI-SDR(e_k, t_k) - SI-SDR(e_k, y_k), one value per chunk.

    Chunks whose target or mixture slice is numerically silent get a NaN
    sentinel; callers filter those through the activity test.
    """
    if not (len(estimate) == len(target) == len(mixture)):
        raise LengthMismatch("estimate, target and mixture must share length")
    out = np.empty(len(chunks))
    for k, idx in enumerate(chunks):
        e = estimate.samples[idx.start:idx.end]
        t = target.samples[idx.start:idx.end]
        y = mixture.samples[idx.start:idx.end]
        if np.dot(t, t) < cfg.eps or np.dot(y, y) < cfg.eps:
            out[k] = np.nan
            continue
        v_target, *_ = _si_sdr_parts(e, t, cfg)
        v_mix, *_ = _si_sdr_parts(e, y, cfg)
        out[k] = v_target - v_mix
    return out


def sc_statistics(
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform,
    chunks: list[ChunkIndex],
    activity: ActivityConfig = ActivityConfig(),
    cfg: SiSdrConfig = SiSdrConfig(),
    bins: BinEdges = BinEdges(),
) -> ScStatistics:
    """Chunkwise SC bookkeeping over the speech-active chunks.

    N_sc counts valid chunks with negative improvement, N_valid counts chunks
    where both target and estimate pass the energy threshold, and
    r_scr = 100 * N_sc / N_valid. Also fills the 4-class frequency vector and
    the per-class sum of chunkwise improvements.
    """
    values = chunkwise_sisdri(estimate, target, mixture, chunks, cfg)
    active = [is_active(target, estimate, idx, activity) for idx in chunks]
    valid = np.array(
        [v for v, a in zip(values, active) if a and not np.isnan(v)]
    )
    n_valid = valid.size
    if n_valid == 0:
        return ScStatistics(
            chunk_sisdri=valid,
            n_sc=0,
            n_valid=0,
            r_scr=0.0,
            class_freq=(0, 0, 0, 0),
            class_sum=(0.0, 0.0, 0.0, 0.0),
            degenerate=True,
        )
    n_sc = int(np.sum(valid < 0.0))
    freq = [0, 0, 0, 0]
    sums = [0.0, 0.0, 0.0, 0.0]
    for v in valid:
        j = bins.classify(float(v))
        freq[j] += 1
        sums[j] += float(v)
    return ScStatistics(
        chunk_sisdri=valid,
        n_sc=n_sc,
        n_valid=n_valid,
        r_scr=100.0 * n_sc / n_valid,
        class_freq=tuple(freq),
        class_sum=tuple(sums),
    )


@dataclass
class DistributionReport:
    """Corpus-level aggregate of the 4-class chunk distribution."""

    class_freq: tuple[int, int, int, int]
    class_sum: tuple[float, float, float, float]
    sc_class_freq: tuple[int, int]  # the two negative classes only
    n_valid: int
    n_sc: int


def distribution_report(stats: list[ScStatistics]) -> DistributionReport:
    """Element-wise sum of class frequencies across utterances."""
    if not stats:
        raise EmptyInput("distribution_report needs at least one utterance")
    freq = np.zeros(4, dtype=int)
    sums = np.zeros(4)
    n_valid = 0
    n_sc = 0
    for s in stats:
        freq += np.asarray(s.class_freq, dtype=int)
        sums += np.asarray(s.class_sum)
        n_valid += s.n_valid
        n_sc += s.n_sc
    return DistributionReport(
        class_freq=tuple(int(x) for x in freq),
        class_sum=tuple(float(x) for x in sums),
        sc_class_freq=(int(freq[0]), int(freq[1])),
        n_valid=n_valid,
        n_sc=n_sc,
    )
