"""HD vector representations, transforms and similarity metrics.

Three representations are used throughout the package:

* ``real``    -- controller output, arbitrary finite floats
* ``bipolar`` -- components in {-1, +1}; norm is always sqrt(d)
* ``binary``  -- components in {0, 1}

Vectors are plain numpy arrays in the hot paths. :class:`HDVector` wraps an
array with its representation tag for validation and serialization.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DegenerateInputError, ValidationError

MODES = ("real", "bipolar", "binary")

_MAGIC = b"HDVC"
_FORMAT_VERSION = 1
_TAGS = {"real": 0, "bipolar": 1, "binary": 2}
_HEADER = struct.Struct("<4sBBII")  # magic, version, tag, rows, d
_DTYPES = {"real": np.dtype("<f8"), "bipolar": np.dtype("i1"), "binary": np.dtype("u1")}


def validate(v, mode: str, d: int | None = None) -> np.ndarray:
    """Check ``v`` against the invariants of ``mode`` and return it as an array.

    Works on a single vector or on a matrix of row vectors. When ``d`` is
    given the trailing dimension must match it.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown representation {mode!r}; expected one of {MODES}")
    a = np.asarray(v)
    if a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise ValidationError(f"expected a nonempty vector or matrix, got shape {a.shape}")
    if d is not None and a.shape[-1] != d:
        raise ValidationError(f"dimensionality {a.shape[-1]} does not match configured d={d}")
    if mode == "real":
        a = a.astype(np.float64, copy=False)
        if not np.all(np.isfinite(a)):
            raise ValidationError("real vector has non-finite components")
    elif mode == "bipolar":
        if not np.all((a == 1) | (a == -1)):
            raise ValidationError("bipolar vector components must be -1 or +1")
        a = a.astype(np.int8, copy=False)
    else:
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError("binary vector components must be 0 or 1")
        a = a.astype(np.uint8, copy=False)
    return a


@dataclass(frozen=True)
class HDVector:
    """A vector (or a stack of row vectors) tagged with its representation."""

    components: np.ndarray
    mode: str = "real"

    def __post_init__(self):
        object.__setattr__(self, "components", validate(self.components, self.mode))

    @property
    def d(self) -> int:
        return int(self.components.shape[-1])

    def __eq__(self, other):
        if not isinstance(other, HDVector):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.components.shape == other.components.shape
            and np.array_equal(self.components, other.components)
        )

    __hash__ = None


# --------------------------------------------------------------------------
# transforms


def clip_to_bipolar(v) -> np.ndarray:
    """Component-wise sign; an exact zero maps to +1."""
    a = np.asarray(v)
    if a.size == 0:
        raise ValidationError("cannot clip an empty vector")
    return np.where(a >= 0, 1, -1).astype(np.int8)


def clip_to_binary(v) -> np.ndarray:
    """Step activation: 1 where the component is >= 0, else 0.

    The tie rule matches :func:`clip_to_bipolar` so that
    ``clip_to_binary(v) == bipolar_to_binary(clip_to_bipolar(v))`` for every
    input, zeros included.
    """
    a = np.asarray(v)
    if a.size == 0:
        raise ValidationError("cannot clip an empty vector")
    return (a >= 0).astype(np.uint8)


def bipolar_to_binary(v) -> np.ndarray:
    a = np.asarray(v)
    return ((a.astype(np.int16) + 1) // 2).astype(np.uint8)


def binary_to_bipolar(v) -> np.ndarray:
    a = np.asarray(v)
    return (2 * a.astype(np.int16) - 1).astype(np.int8)


def clip(v, mode: str):
    """Apply the inference-time activation for ``mode`` (identity for real)."""
    if mode == "real":
        return np.asarray(v, dtype=np.float64)
    if mode == "bipolar":
        return clip_to_bipolar(v)
    if mode == "binary":
        return clip_to_binary(v)
    raise ValidationError(f"unknown representation {mode!r}")


# --------------------------------------------------------------------------
# similarities


def cosine_similarity(a, b) -> float:
    """Exact cosine similarity of two nonzero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_matrix(Q, K) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``Q`` and rows of ``K``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    nq = np.linalg.norm(Q, axis=1)
    nk = np.linalg.norm(K, axis=1)
    if np.any(nq == 0.0) or np.any(nk == 0.0):
        raise DegenerateInputError("cosine similarity undefined for a zero-norm vector")
    return (Q @ K.T) / np.outer(nq, nk)


def dot_similarity_bipolar(a, b) -> np.ndarray | float:
    """Constant-scaled dot product ``a.b / d``; equals cosine for bipolar vectors.

    Accepts vectors or matrices of row vectors (returns the pairwise matrix).
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape[-1] != b.shape[-1]:
        raise ValidationError("length mismatch")
    d = a.shape[-1]
    out = (a @ b.T if b.ndim == 2 else a @ b) / d
    return float(out) if np.ndim(out) == 0 else out


def dot_similarity_binary(a, b) -> np.ndarray | float:
    """``(2/d) a.b`` -- approximates ``(alpha_bipolar + 1)/2`` for balanced vectors."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape[-1] != b.shape[-1]:
        raise ValidationError("length mismatch")
    d = a.shape[-1]
    out = 2.0 * (a @ b.T if b.ndim == 2 else a @ b) / d
    return float(out) if np.ndim(out) == 0 else out


def similarity_matrix(Q, K, mode: str) -> np.ndarray:
    """Exact software similarities between query rows and support rows."""
    if mode == "real":
        return cosine_matrix(Q, K)
    Q2 = np.atleast_2d(Q)
    K2 = np.atleast_2d(K)
    if mode == "bipolar":
        return np.asarray(dot_similarity_bipolar(Q2, K2), dtype=np.float64)
    if mode == "binary":
        return np.asarray(dot_similarity_binary(Q2, K2), dtype=np.float64)
    raise ValidationError(f"unknown representation {mode!r}")


def occupancy_ratio(v) -> float | np.ndarray:
    """Fraction of 1-components; per row when given a matrix."""
    a = np.asarray(v)
    if a.size == 0:
        raise ValidationError("occupancy of an empty vector is undefined")
    r = np.count_nonzero(a == 1, axis=-1) / a.shape[-1]
    return float(r) if np.ndim(r) == 0 else r


def random_bipolar(d: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """i.i.d. uniform {-1,+1} vector (or ``count`` row vectors)."""
    if d < 1:
        raise ValidationError("dimensionality must be >= 1")
    shape = (d,) if count is None else (count, d)
    return (2 * rng.integers(0, 2, size=shape, dtype=np.int8) - 1).astype(np.int8)


def random_binary(d: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    return bipolar_to_binary(random_bipolar(d, rng, count))


# --------------------------------------------------------------------------
# serialization


def to_csv_row(v) -> str:
    """One vector as a flat CSV line. Reals use ``repr`` so the round trip is exact."""
    a = np.asarray(v)
    if a.ndim != 1:
        raise ValidationError("to_csv_row expects a single vector")
    if np.issubdtype(a.dtype, np.floating):
        cells = [repr(float(x)) for x in a]
    else:
        cells = [str(int(x)) for x in a]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(cells)
    return buf.getvalue()


def from_csv_row(line: str, mode: str) -> np.ndarray:
    cells = next(csv.reader([line.strip()]))
    if mode == "real":
        return validate(np.array([float(c) for c in cells], dtype=np.float64), mode)
    return validate(np.array([int(c) for c in cells]), mode)


def dumps(vec: HDVector) -> bytes:
    """Compact binary dump: header (magic, version, tag, rows, d) then components."""
    comps = vec.components
    rows = 1 if comps.ndim == 1 else comps.shape[0]
    header = _HEADER.pack(_MAGIC, _FORMAT_VERSION, _TAGS[vec.mode], rows, vec.d)
    body = np.ascontiguousarray(comps, dtype=_DTYPES[vec.mode]).tobytes()
    flag = b"\x00" if comps.ndim == 1 else b"\x01"
    return header + flag + body


def loads(data: bytes, offset: int = 0) -> tuple[HDVector, int]:
    """Inverse of :func:`dumps`; returns the vector and the offset just past it."""
    try:
        magic, version, tag, rows, d = _HEADER.unpack_from(data, offset)
    except struct.error as exc:
        raise ValidationError("truncated HD vector dump") from exc
    if magic != _MAGIC:
        raise ValidationError("not an HD vector dump (bad magic)")
    if version != _FORMAT_VERSION:
        raise ValidationError(f"unsupported dump version {version}")
    modes = {v: k for k, v in _TAGS.items()}
    if tag not in modes:
        raise ValidationError(f"unknown representation tag {tag}")
    mode = modes[tag]
    pos = offset + _HEADER.size
    matrix = data[pos : pos + 1] == b"\x01"
    pos += 1
    dt = _DTYPES[mode]
    n = rows * d
    end = pos + n * dt.itemsize
    if end > len(data):
        raise ValidationError("truncated HD vector dump")
    comps = np.frombuffer(data, dtype=dt, count=n, offset=pos).copy()
    comps = comps.reshape(rows, d) if matrix else comps.reshape(d)
    if mode == "real":
        comps = comps.astype(np.float64)
    return HDVector(comps, mode), end


def stack(vectors: Iterable, mode: str, d: int | None = None) -> np.ndarray:
    """Stack row vectors into a validated matrix."""
    rows = [np.asarray(v) for v in vectors]
    if not rows:
        raise ValidationError("no vectors to stack")
    return validate(np.stack(rows), mode, d)
