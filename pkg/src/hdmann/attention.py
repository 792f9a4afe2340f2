"""Sharpening functions, the attention function and the two ranking criteria."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateAttentionError, ValidationError
from .hdvec import similarity_matrix

SHARPENING_KINDS = ("softabs", "exponential", "absolute", "bypass")


@dataclass(frozen=True)
class SharpeningSpec:
    kind: str = "softabs"
    beta: float = 10.0

    def __post_init__(self):
        if self.kind not in SHARPENING_KINDS:
            raise ValidationError(
                f"unknown sharpening {self.kind!r}; expected one of {SHARPENING_KINDS}"
            )
        if self.kind == "softabs" and not self.beta > 0:
            raise ValidationError("softabs stiffness beta must be > 0")

    @classmethod
    def parse(cls, text: str, beta: float = 10.0) -> "SharpeningSpec":
        aliases = {"exp": "exponential", "softmax": "exponential", "abs": "absolute"}
        return cls(aliases.get(text, text), beta)


def softabs(alpha, beta: float = 10.0):
    """Symmetric double sigmoid centred on +-0.5."""
    a = np.asarray(alpha, dtype=np.float64)
    return expit(beta * (a - 0.5)) + expit(beta * (-a - 0.5))


def softabs_grad(alpha, beta: float = 10.0):
    a = np.asarray(alpha, dtype=np.float64)
    s1 = expit(beta * (a - 0.5))
    s2 = expit(beta * (-a - 0.5))
    return beta * (s1 * (1.0 - s1) - s2 * (1.0 - s2))


def sharpen(alpha, spec: SharpeningSpec = SharpeningSpec()):
    """Apply the sharpening function element-wise (scalar in, scalar out)."""
    a = np.asarray(alpha, dtype=np.float64)
    if spec.kind == "softabs":
        out = softabs(a, spec.beta)
    elif spec.kind == "exponential":
        out = np.exp(a)
    elif spec.kind == "absolute":
        out = np.abs(a)
    else:
        out = a.copy()
    return float(out) if out.ndim == 0 else out


@dataclass
class AttentionResult:
    """Per-query attention trace. Arrays are ``(b, rows)`` for a query batch."""

    similarities: np.ndarray
    sharpened: np.ndarray
    weights: np.ndarray
    normalized: bool = True
    extra: dict = field(default_factory=dict)


def attend(similarities, spec: SharpeningSpec, normalize: bool = True) -> AttentionResult:
    """Sharpen precomputed similarities and optionally normalize each row."""
    alpha = np.asarray(similarities, dtype=np.float64)
    eps = np.asarray(sharpen(alpha, spec), dtype=np.float64).reshape(alpha.shape)
    if normalize:
        total = eps.sum(axis=-1, keepdims=True)
        if np.any(total == 0.0) or not np.all(np.isfinite(total)):
            raise DegenerateAttentionError("sharpened scores sum to zero; cannot normalize")
        w = eps / total
    else:
        w = eps
    return AttentionResult(alpha, eps, w, normalize)


def attention_vector(q, K, mode: str, spec: SharpeningSpec, normalize: bool = True) -> AttentionResult:
    """Attention of query ``q`` (or a batch of queries) over the rows of ``K``.

    Similarities follow the representation: cosine for ``real``, ``a.b/d`` for
    ``bipolar`` and ``2 a.b/d`` for ``binary``.
    """
    K = np.atleast_2d(np.asarray(K))
    if K.shape[0] == 0:
        raise ValidationError("key memory is empty")
    q = np.asarray(q)
    if q.shape[-1] != K.shape[1]:
        raise ValidationError(f"query length {q.shape[-1]} != key length {K.shape[1]}")
    alpha = similarity_matrix(q, K, mode)
    res = attend(alpha, spec, normalize)
    if q.ndim == 1:
        res.similarities = res.similarities[0]
        res.sharpened = res.sharpened[0]
        res.weights = res.weights[0]
    return res


def one_hot(labels, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValidationError(f"labels must lie in [0, {m})")
    V = np.zeros((labels.size, m), dtype=np.float64)
    V[np.arange(labels.size), labels] = 1.0
    return V


def _check_one_hot(V: np.ndarray):
    if V.ndim != 2:
        raise ValidationError("value memory must be a 2-D matrix")
    ok = np.all((V == 0) | (V == 1)) and np.all(V.sum(axis=1) == 1)
    if not ok:
        raise ValidationError("every value-memory row must be one-hot")


def readout(w, V) -> np.ndarray:
    """Weighted sum of one-hot labels: ``p = w . V``."""
    V = np.asarray(V, dtype=np.float64)
    _check_one_hot(V)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != V.shape[0]:
        raise ValidationError(f"{w.shape[-1]} attention weights for {V.shape[0]} memory rows")
    return w @ V


def predict_sum_argmax(p) -> int | np.ndarray:
    """Class with the largest accumulated probability; ties go to the lowest index."""
    p = np.asarray(p)
    if p.shape[-1] == 0:
        raise ValidationError("empty probability vector")
    out = np.argmax(p, axis=-1)
    return int(out) if out.ndim == 0 else out


def predict_global_argmax(w, labels) -> int | np.ndarray:
    """Label of the single strongest memory row; ties go to the lowest row."""
    w = np.asarray(w)
    labels = np.asarray(labels)
    if w.shape[-1] != labels.shape[0]:
        raise ValidationError("weights and labels differ in length")
    out = labels[np.argmax(w, axis=-1)]
    return int(out) if np.ndim(out) == 0 else out


def write_trace_csv(path, rows: Sequence[dict]):
    """Write attention traces: episode, query, label, prediction, alphas, weights.

    Lists are ``;``-joined so each trace is one CSV row.
    """
    fields = ["episode", "query", "label", "prediction", "alphas", "weights", "support_labels"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(
                {
                    "episode": r["episode"],
                    "query": r["query"],
                    "label": r["label"],
                    "prediction": r["prediction"],
                    "alphas": ";".join(repr(float(x)) for x in r["alphas"]),
                    "weights": ";".join(repr(float(x)) for x in r["weights"]),
                    "support_labels": ";".join(str(int(x)) for x in r["support_labels"]),
                }
            )


def read_trace_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(
                {
                    "episode": int(r["episode"]),
                    "query": int(r["query"]),
                    "label": int(r["label"]),
                    "prediction": int(r["prediction"]),
                    "alphas": np.array([float(x) for x in r["alphas"].split(";")]),
                    "weights": np.array([float(x) for x in r["weights"].split(";")]),
                    "support_labels": np.array([int(x) for x in r["support_labels"].split(";")]),
                }
            )
    return out
