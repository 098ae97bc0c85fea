"""Training objectives: plain, scaled and weighted negative SI-SDR.

Every loss returns the scalar value together with the analytic gradient with
respect to each estimate sample. Differentiation treats all counting
quantities (the confusion ratio, activity masks, class assignments) as
constants: indicator functions have zero derivative almost everywhere, so
this is the exact gradient away from branch boundaries. Clamp saturation
zeroes the gradient rather than propagating a spurious slope.

The confusion ratio enters the scaled loss as a fraction in [0, 1], keeping
the scaling factor within [gamma1 - gamma2, gamma1 + gamma2].

The weighted loss defaults to SUM_PER_CLASS, where each class contributes
the sum of its chunkwise improvements; the loss is then a per-chunk weighted
mean with heavier weight on confused chunks and a well-defined gradient.
COUNT_PER_CLASS aggregates raw class counts instead; it is piecewise
constant in the estimate (zero gradient) and exists for diagnostics only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoValidChunks
from .metrics import BinEdges, SiSdrConfig, _si_sdr_parts, sc_statistics
from .signal_core import ActivityConfig, ChunkIndex, Waveform

_LN10_OVER_10 = math.log(10.0) / 10.0


class LossKind(enum.Enum):
    PLAIN = "plain"
    SCALE = "scale"
    WEIGHT = "weight"


class WeightMode(enum.Enum):
    SUM_PER_CLASS = "sum"
    COUNT_PER_CLASS = "count"


@dataclass(frozen=True)
class ScaleLossConfig:
    """Scaling factors of the confusion-scaled loss."""

    gamma1: float = 1.0
    gamma2: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma1) and math.isfinite(self.gamma2)):
            raise ValueError("gamma1 and gamma2 must be finite")


@dataclass(frozen=True)
class WeightLossConfig:
    """Per-class weights of the weighted loss, non-increasing and positive."""

    weights: tuple[float, float, float, float] = (5.0, 5.0, 1.0, 1.0)
    mode: WeightMode = WeightMode.SUM_PER_CLASS

    def __post_init__(self):
        w = self.weights
        if len(w) != 4 or not (w[0] >= w[1] >= w[2] >= w[3] > 0):
            raise ValueError("weights must satisfy w0 >= w1 >= w2 >= w3 > 0")


@dataclass
class LossResult:
    """Scalar loss (lower is better) and d loss / d estimate_t."""

    value: float
    grad_estimate: np.ndarray
    degenerate: bool = False


def _si_sdr_value_grad(estimate: np.ndarray, target: np.ndarray, cfg: SiSdrConfig):
    """SI-SDR in dB plus its gradient with respect to the estimate.

    The projection coefficient is differentiated through (full derivative).
    Returns (value, grad, clamped); the gradient is zero when the clamp is
    active.
    """
    value, alpha, projection, residual, num, den, clamped = _si_sdr_parts(
        estimate, target, cfg
    )
    if clamped:
        return value, np.zeros_like(estimate), True
    # d num/de = 2*alpha*t, d den/de = 2*(e - alpha*t); the cross term through
    # alpha in the denominator vanishes because the residual is orthogonal to t.
    grad = (2.0 * alpha / (num + cfg.eps)) * target - (2.0 / (den + cfg.eps)) * residual
    grad /= _LN10_OVER_10
    return value, grad, False


def loss_sisdr(
    estimate: Waveform, target: Waveform, cfg: SiSdrConfig = SiSdrConfig()
) -> LossResult:
    """Negative SI-SDR with its analytic gradient."""
    value, grad, _ = _si_sdr_value_grad(estimate.samples, target.samples, cfg)
    return LossResult(value=-value, grad_estimate=-grad)


def loss_scale_sisdr(
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform,
    chunks: list[ChunkIndex],
    activity: ActivityConfig = ActivityConfig(),
    sisdr_cfg: SiSdrConfig = SiSdrConfig(),
    scale_cfg: ScaleLossConfig = ScaleLossConfig(),
    bins: BinEdges = BinEdges(),
) -> LossResult:
    """Utterance loss -alpha * SI-SDR with alpha driven by the confusion ratio.

    alpha = gamma1 - gamma2*r when SI-SDR >= 0, else gamma1 + gamma2*r, where
    r is the chunkwise confusion ratio as a fraction. alpha is a constant for
    differentiation; when no chunk is valid, r is taken as 0 and the result
    is flagged degenerate.
    """
    result, _ = _scale_full(
        estimate.samples, target, mixture, chunks, activity, sisdr_cfg, scale_cfg, bins
    )
    return result


def _scale_full(
    estimate_arr: np.ndarray,
    target: Waveform,
    mixture: Waveform,
    chunks,
    activity,
    sisdr_cfg,
    scale_cfg,
    bins,
):
    estimate = Waveform(estimate_arr, target.sample_rate)
    stats = sc_statistics(estimate, target, mixture, chunks, activity, sisdr_cfg, bins)
    r = 0.0 if stats.degenerate else stats.r_scr / 100.0
    value, grad, clamped = _si_sdr_value_grad(estimate_arr, target.samples, sisdr_cfg)
    positive = value >= 0.0
    if positive:
        alpha = scale_cfg.gamma1 - scale_cfg.gamma2 * r
    else:
        alpha = scale_cfg.gamma1 + scale_cfg.gamma2 * r
    result = LossResult(
        value=-alpha * value,
        grad_estimate=-alpha * grad,
        degenerate=stats.degenerate,
    )
    signature = (clamped, positive, stats.n_valid, stats.n_sc)
    return result, signature


def loss_weight_sisdr(
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform,
    chunks: list[ChunkIndex],
    activity: ActivityConfig = ActivityConfig(),
    sisdr_cfg: SiSdrConfig = SiSdrConfig(),
    bins: BinEdges = BinEdges(),
    wcfg: WeightLossConfig = WeightLossConfig(),
) -> LossResult:
    """Class-weighted chunkwise loss -(1/N_valid) * sum_j w_j * s_j."""
    result, _ = _weight_full(
        estimate.samples, target, mixture, chunks, activity, sisdr_cfg, bins, wcfg
    )
    return result


def _weight_full(
    estimate_arr: np.ndarray,
    target: Waveform,
    mixture: Waveform,
    chunks,
    activity,
    sisdr_cfg,
    bins,
    wcfg,
):
    from .signal_core import is_active

    estimate = Waveform(estimate_arr, target.sample_rate)
    active = [is_active(target, estimate, idx, activity) for idx in chunks]
    n_valid = sum(active)
    if n_valid == 0:
        raise NoValidChunks("no chunk passed the activity filter")

    grad = np.zeros_like(estimate_arr)
    value = 0.0
    sig_classes = []
    sig_clamps = []
    for idx, act in zip(chunks, active):
        if not act:
            continue
        e = estimate_arr[idx.start:idx.end]
        t = target.samples[idx.start:idx.end]
        y = mixture.samples[idx.start:idx.end]
        v_t, g_t, cl_t = _si_sdr_value_grad(e, t, sisdr_cfg)
        v_m, g_m, cl_m = _si_sdr_value_grad(e, y, sisdr_cfg)
        v = v_t - v_m
        j = bins.classify(v)
        sig_classes.append(j)
        sig_clamps.append((cl_t, cl_m))
        w = wcfg.weights[j]
        if wcfg.mode is WeightMode.SUM_PER_CLASS:
            value += w * v
            grad[idx.start:idx.end] += -(w / n_valid) * (g_t - g_m)
        else:
            value += w
    result = LossResult(value=-value / n_valid, grad_estimate=grad)
    signature = (tuple(active), tuple(sig_classes), tuple(sig_clamps))
    return result, signature


def gradient_check(
    loss_kind: LossKind,
    estimate: Waveform,
    target: Waveform,
    mixture: Waveform | None = None,
    chunks: list[ChunkIndex] | None = None,
    activity: ActivityConfig = ActivityConfig(),
    sisdr_cfg: SiSdrConfig = SiSdrConfig(),
    scale_cfg: ScaleLossConfig = ScaleLossConfig(),
    bins: BinEdges = BinEdges(),
    wcfg: WeightLossConfig = WeightLossConfig(),
    fd_step: float = 1e-6,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    Coordinates where a perturbation of +-fd_step crosses a branch boundary
    (clamp edge, scaling-factor branch, bin edge, activity flip) are skipped:
    the loss is non-differentiable there and finite differences are
    meaningless. Returns 0.0 if every coordinate was skipped.
    """
    if len(estimate) > 512:
        raise ValueError("gradient_check is limited to signals of <= 512 samples")
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")

    def evaluate(arr):
        if loss_kind is LossKind.PLAIN:
            v, _, clamped = _si_sdr_value_grad(arr, target.samples, sisdr_cfg)
            return -v, (clamped,)
        if loss_kind is LossKind.SCALE:
            res, sig = _scale_full(
                arr, target, mixture, chunks, activity, sisdr_cfg, scale_cfg, bins
            )
            return res.value, sig
        res, sig = _weight_full(
            arr, target, mixture, chunks, activity, sisdr_cfg, bins, wcfg
        )
        return res.value, sig

    base = estimate.samples
    if loss_kind is LossKind.PLAIN:
        analytic = loss_sisdr(estimate, target, sisdr_cfg).grad_estimate
    elif loss_kind is LossKind.SCALE:
        analytic = loss_scale_sisdr(
            estimate, target, mixture, chunks, activity, sisdr_cfg, scale_cfg, bins
        ).grad_estimate
    else:
        analytic = loss_weight_sisdr(
            estimate, target, mixture, chunks, activity, sisdr_cfg, bins, wcfg
        ).grad_estimate

    max_rel = 0.0
    for i in range(base.size):
        plus = base.copy()
        plus[i] += fd_step
        minus = base.copy()
        minus[i] -= fd_step
        v_plus, sig_plus = evaluate(plus)
        v_minus, sig_minus = evaluate(minus)
        if sig_plus != sig_minus:
            continue
        numerical = (v_plus - v_minus) / (2.0 * fd_step)
        denom = max(abs(analytic[i]), abs(numerical), 1e-8)
        max_rel = max(max_rel, abs(analytic[i] - numerical) / denom)
    return max_rel
