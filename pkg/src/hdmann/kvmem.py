"""Key-value episodic memory with an exact or a simulated-PCM similarity backend."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import hdvec, pcm
from .attention import (
    AttentionResult,
    SharpeningSpec,
    attend,
    one_hot,
    predict_global_argmax,
    predict_sum_argmax,
    readout,
)
from .errors import ValidationError

BACKENDS = ("exact", "pcm")
CRITERIA = ("sum_argmax", "global_argmax")

_SNAP_MAGIC = b"HDKV"
_SNAP_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sBII")  # magic, version, m, rows


def parse_criterion(text: str) -> str:
    c = text.replace("-", "_")
    if c not in CRITERIA:
        raise ValidationError(f"unknown criterion {text!r}; expected sum-argmax or global-argmax")
    return c


def relative_labels(classes) -> np.ndarray:
    """Map absolute class ids to 0..m-1 in order of first appearance."""
    order: dict = {}
    out = []
    for c in classes:
        if c not in order:
            order[c] = len(order)
        out.append(order[c])
    return np.asarray(out, dtype=np.int64)


@dataclass
class EpisodeSpec:
    """One m-way n-shot episode: support images/labels and a batch of queries."""

    m: int
    n: int
    b: int
    support_images: np.ndarray
    support_labels: np.ndarray
    query_images: np.ndarray
    query_labels: np.ndarray
    support_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    query_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.b < 1:
            raise ValidationError("m, n and b must be >= 1")
        if len(self.support_labels) != self.m * self.n or len(self.support_images) != self.m * self.n:
            raise ValidationError(f"expected {self.m * self.n} support samples")
        if len(self.query_labels) != self.b or len(self.query_images) != self.b:
            raise ValidationError(f"expected {self.b} query samples")
        if not set(np.unique(self.query_labels)) <= set(np.unique(self.support_labels)):
            raise ValidationError("query classes must be a subset of the support classes")
        if len(self.support_ids) and len(self.query_ids):
            if np.intersect1d(self.support_ids, self.query_ids).size:
                raise ValidationError("support and query samples overlap")


class KeyValueMemory:
    """Write-then-read-many store of support vectors and their one-hot labels.

    Every :meth:`write_support` discards the previous episode. With the
    ``pcm`` backend the keys are also programmed onto a simulated crossbar
    and similarities are read back through it; the value memory is always
    plain software arithmetic.
    """

    def __init__(self, mode: str = "bipolar", backend: str = "exact", *, d: int | None = None,
                 pcm_params: pcm.PcmDeviceParams | None = None, readout_cfg: pcm.ReadoutConfig | None = None,
                 program_rng: np.random.Generator | None = None, read_rng: np.random.Generator | None = None,
                 placement: str = "sequential", spatial_std: float = 0.0):
        if mode not in hdvec.MODES:
            raise ValidationError(f"unknown representation {mode!r}")
        if backend not in BACKENDS:
            raise ValidationError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        if backend == "pcm" and mode == "real":
            raise ValidationError("the pcm backend stores binary or bipolar keys only")
        if placement not in ("sequential", "random"):
            raise ValidationError("placement must be 'sequential' or 'random'")
        self.mode = mode
        self.backend = backend
        self.d = d
        self.pcm_params = pcm_params or pcm.PcmDeviceParams()
        self.readout_cfg = readout_cfg or pcm.ReadoutConfig()
        self.program_rng = program_rng if program_rng is not None else np.random.default_rng(0)
        self.read_rng = read_rng if read_rng is not None else np.random.default_rng(1)
        self.placement = placement
        self.spatial_std = spatial_std
        self.K: np.ndarray | None = None
        self.V: np.ndarray | None = None
        self.labels: np.ndarray | None = None
        self.m = 0
        self.state: pcm.PcmArrayState | None = None

    @property
    def rows(self) -> int:
        return 0 if self.K is None else int(self.K.shape[0])

    @property
    def cells(self) -> int:
        """Number of stored key components (one device each for binary keys)."""
        return 0 if self.K is None else int(self.K.size)

    def write_support(self, vectors, labels, m: int | None = None) -> "KeyValueMemory":
        K = hdvec.validate(np.atleast_2d(np.asarray(vectors)), self.mode, self.d)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != K.shape[0]:
            raise ValidationError(f"{labels.shape[0] if labels.ndim else 0} labels for {K.shape[0]} vectors")
        m = int(labels.max()) + 1 if m is None else int(m)
        if labels.min() < 0 or labels.max() >= m:
            raise ValidationError(f"labels must lie in [0, {m})")
        K = K.copy()
        K.setflags(write=False)
        V = one_hot(labels, m)
        V.setflags(write=False)
        labels = labels.copy()
        labels.setflags(write=False)
        self.state = None
        if self.backend == "pcm":
            st = pcm.program(K, self.mode, self.pcm_params, self.program_rng, placement=self.placement)
            self.state = pcm.apply_spatial_variability(st, self.spatial_std, self.program_rng)
        self.K, self.V, self.labels, self.m = K, V, labels, m
        return self

    def similarities(self, q) -> np.ndarray:
        if self.K is None:
            raise ValidationError("memory is empty; write a support set first")
        q = hdvec.validate(q, self.mode, self.K.shape[1])
        if self.backend == "exact":
            return hdvec.similarity_matrix(q, self.K, self.mode)
        return pcm.similarity_via_crossbar(self.state, q, self.readout_cfg, self.read_rng)

    def query(self, q, spec: SharpeningSpec = SharpeningSpec(), criterion: str = "sum_argmax",
              normalize: bool = True) -> tuple[AttentionResult, int | np.ndarray]:
        """Attend over the stored keys and predict a relative class per query."""
        criterion = parse_criterion(criterion)
        single = np.ndim(q) == 1
        alpha = self.similarities(q)
        res = attend(np.atleast_2d(alpha), spec, normalize)
        p = readout(res.weights, self.V)
        res.extra["p"] = p
        if criterion == "sum_argmax":
            pred = predict_sum_argmax(p)
        else:
            pred = predict_global_argmax(res.weights, self.labels)
        pred = np.asarray(pred)
        if single:
            res.similarities = res.similarities[0]
            res.sharpened = res.sharpened[0]
            res.weights = res.weights[0]
            res.extra["p"] = p[0]
            return res, int(pred[0])
        return res, pred

    # -- snapshots -----------------------------------------------------------

    def snapshot(self) -> bytes:
        """Key dump (HD vector format) followed by the label table."""
        if self.K is None:
            raise ValidationError("memory is empty")
        head = _SNAP_HEADER.pack(_SNAP_MAGIC, _SNAP_VERSION, self.m, self.rows)
        return head + hdvec.dumps(hdvec.HDVector(np.asarray(self.K), self.mode)) + self.labels.astype("<i4").tobytes()

    def restore(self, data: bytes) -> "KeyValueMemory":
        """Rewrite this memory from a snapshot (reprogramming the backend)."""
        K, labels, m = load_snapshot(data)
        if K.mode != self.mode:
            raise ValidationError(f"snapshot holds {K.mode} keys, memory is {self.mode}")
        return self.write_support(K.components, labels, m)


def load_snapshot(data: bytes) -> tuple[hdvec.HDVector, np.ndarray, int]:
    try:
        magic, version, m, rows = _SNAP_HEADER.unpack_from(data, 0)
    except struct.error as exc:
        raise ValidationError("truncated memory snapshot") from exc
    if magic != _SNAP_MAGIC:
        raise ValidationError("not a memory snapshot (bad magic)")
    if version != _SNAP_VERSION:
        raise ValidationError(f"unsupported snapshot version {version}")
    K, pos = hdvec.loads(data, _SNAP_HEADER.size)
    end = pos + 4 * rows
    if end > len(data):
        raise ValidationError("truncated memory snapshot")
    labels = np.frombuffer(data, dtype="<i4", count=rows, offset=pos).astype(np.int64)
    return K, labels, m
