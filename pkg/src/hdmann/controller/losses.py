"""Differentiable attention head, logarithmic loss and occupancy regularizers.

Every function accepts plain arrays or tracked :class:`Tensor` inputs. Plain
inputs give plain results; tracked inputs give tracked results so the same
code drives both evaluation and training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attention import SharpeningSpec
from ..errors import DegenerateAttentionError, ValidationError
from .autodiff import Tensor, as_tensor, l2_normalize_rows, softabs, softstep

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class RegularizerSpec:
    a: float = 100.0
    delta: float = 1e-4
    weight_oc: float = 10.0
    weight_aux: float = 0.1
    enabled: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.delta > 0):
            raise ValidationError("regularizer stiffness a and half-width delta must be > 0")
        if self.weight_oc < 0 or self.weight_aux < 0:
            raise ValidationError("regularizer weights must be >= 0")


def _out(t: Tensor, tracked: bool):
    if tracked:
        return t
    return float(t.data) if t.data.ndim == 0 else t.data


def _tracked(*xs) -> bool:
    return any(isinstance(x, Tensor) and x.tape is not None for x in xs)


def sharpen_t(alpha: Tensor, spec: SharpeningSpec) -> Tensor:
    if spec.kind == "softabs":
        return softabs(alpha, spec.beta)
    if spec.kind == "exponential":
        return alpha.exp()
    if spec.kind == "absolute":
        return alpha.abs()
    return alpha


def attention_probs(Q, K, labels, m: int, spec: SharpeningSpec):
    """Training-style head: cosine -> sharpen -> normalize -> read out one-hot values.

    Returns ``(P, alpha)`` with ``P`` of shape ``(b, m)`` and raw similarities
    ``alpha`` of shape ``(b, rows)``.
    """
    tracked = _tracked(Q, K)
    Q, K = as_tensor(Q), as_tensor(K)
    labels = np.asarray(labels)
    if labels.shape[0] != K.shape[0]:
        raise ValidationError("one label per support row required")
    V = np.zeros((labels.shape[0], m), dtype=K.data.dtype)
    V[np.arange(labels.shape[0]), labels] = 1
    alpha = l2_normalize_rows(Q) @ l2_normalize_rows(K).T
    eps = sharpen_t(alpha, spec)
    total = eps.sum(axis=1, keepdims=True)
    if np.any(total.data == 0):
        raise DegenerateAttentionError("sharpened scores sum to zero; cannot normalize")
    w = eps / total
    P = w @ V
    return _out(P, tracked), alpha.data


def log_loss(P, Y):
    """Per-query logarithmic loss and the batch loss.

    ``lambda_i = -sum_j [Y log P + (1-Y) log(1-P)]`` with ``P`` clamped to
    ``[1e-7, 1-1e-7]``; the batch loss is ``sum_i lambda_i / m``.
    """
    tracked = _tracked(P)
    P = as_tensor(P)
    Y = np.asarray(Y, dtype=P.data.dtype)
    if P.shape != Y.shape or P.data.ndim != 2:
        raise ValidationError(f"P {P.shape} and Y {Y.shape} must both be (b, m)")
    m = P.shape[1]
    Pc = P.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = Pc.log() * Y + (1.0 - Pc).log() * (1.0 - Y)
    lam = -terms.sum(axis=1)
    avg = lam.sum() * (1.0 / m)
    return _out(lam, tracked), _out(avg, tracked)


def occupancy_loss(K, spec: RegularizerSpec = RegularizerSpec()):
    """Mean over support rows of (soft occupancy - 0.5)^2, a positive penalty."""
    tracked = _tracked(K)
    K = as_tensor(K)
    occ = softstep(K * spec.a).mean(axis=1)
    return _out(((occ - 0.5) ** 2).mean(), tracked)


def aux_loss(K, spec: RegularizerSpec = RegularizerSpec()):
    """Mean softstep bump ``s(a(x+delta)) - s(a(x-delta))``; large only near zero."""
    tracked = _tracked(K)
    K = as_tensor(K)
    bump = softstep((K + spec.delta) * spec.a) - softstep((K - spec.delta) * spec.a)
    return _out(bump.mean(), tracked)


def total_loss(avg_log_loss, K, spec: RegularizerSpec):
    """Log loss plus the weighted regularizers when enabled."""
    if not spec.enabled:
        return avg_log_loss
    return avg_log_loss + occupancy_loss(K, spec) * spec.weight_oc + aux_loss(K, spec) * spec.weight_aux
