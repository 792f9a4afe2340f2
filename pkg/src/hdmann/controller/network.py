"""Convolutional embedding controller: architecture, parameters, forward pass."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .autodiff import Tape, Tensor, conv2d, dense, maxpool2

# Layer descriptors: ("conv", filters, kernel), ("pool",), ("dense", units).
DESK_LAYERS = (("conv", 16, 5), ("conv", 16, 5), ("pool",), ("conv", 16, 3), ("conv", 16, 3), ("pool",))
FULL_LAYERS = (("conv", 128, 5), ("conv", 128, 5), ("pool",), ("conv", 128, 3), ("conv", 128, 3), ("pool",))
ARCHITECTURES = {"desk": DESK_LAYERS, "full": FULL_LAYERS}

_CKPT_MAGIC = b"HDMC"
_CKPT_VERSION = 1


@dataclass
class Architecture:
    layers: tuple = DESK_LAYERS
    d: int = 512
    input_size: int = 32

    def __post_init__(self):
        self.layers = tuple(tuple(l) for l in self.layers)
        if self.d < 1:
            raise ValidationError("embedding dimensionality d must be >= 1")
        for layer in self.layers:
            if layer[0] not in ("conv", "pool"):
                raise ValidationError(f"unsupported layer {layer!r}")

    def shapes(self) -> list[tuple[str, tuple]]:
        """Parameter names and shapes in creation order."""
        out = []
        c, h = 1, self.input_size
        for i, layer in enumerate(self.layers):
            if layer[0] == "conv":
                _, f, k = layer
                out.append((f"conv{i}.w", (f, c, k, k)))
                out.append((f"conv{i}.b", (f,)))
                c, h = f, h - k + 1
            else:
                h //= 2
            if h < 1:
                raise ValidationError(f"input {self.input_size}px too small for architecture")
        out.append(("dense.w", (c * h * h, self.d)))
        out.append(("dense.b", (self.d,)))
        return out

    def to_json(self) -> dict:
        return {"layers": [list(l) for l in self.layers], "d": self.d, "input_size": self.input_size}

    @classmethod
    def from_json(cls, obj: dict) -> "Architecture":
        return cls(tuple(tuple(l) for l in obj["layers"]), obj["d"], obj["input_size"])


@dataclass
class ControllerParams:
    """Trainable tensors of the embedding with matching gradient buffers."""

    arch: Architecture
    tensors: dict
    grads: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def copy(self) -> "ControllerParams":
        return ControllerParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ControllerParams":
        return ControllerParams(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()})


def init_params(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> ControllerParams:
    """Uniform fan-in scaled weights, zero biases.

    ReLU layers use ``U(-sqrt(6/fan_in), +)``; the linear output layer uses
    ``U(-sqrt(3/fan_in), +)`` so embeddings start with unit-order variance.
    """
    tensors = {}
    for name, shape in arch.shapes():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        gain = 3.0 if name.startswith("dense") else 6.0
        lim = np.sqrt(gain / fan_in)
        tensors[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return ControllerParams(arch, tensors)


def forward(params: ControllerParams, images, tape: Tape | None = None, leaves: dict | None = None):
    """Embed a batch of grayscale images ``(N, H, W)`` (or one ``(H, W)`` image).

    Without a tape returns a plain ``(N, d)`` array. With a tape returns the
    tracked output :class:`Tensor`; ``leaves`` (if given) is filled with the
    parameter leaf tensors so their gradients can be collected.
    """
    arch = params.arch
    x = np.asarray(images, dtype=params.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (arch.input_size, arch.input_size):
        raise ValidationError(
            f"expected images of shape (N, {arch.input_size}, {arch.input_size}), got {np.shape(images)}"
        )
    if tape is not None:
        p = {k: tape.leaf(v, name=k) for k, v in params.tensors.items()}
        if leaves is not None:
            leaves.update(p)
    else:
        p = {k: Tensor(v) for k, v in params.tensors.items()}
    h = Tensor(x[:, None, :, :])
    for i, layer in enumerate(arch.layers):
        if layer[0] == "conv":
            h = conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"]).relu()
        else:
            h = maxpool2(h)
    h = h.reshape(h.shape[0], -1)
    out = dense(h, p["dense.w"], p["dense.b"])
    if tape is not None:
        return out
    return out.data[0] if single else out.data


def collect_grads(params: ControllerParams, leaves: dict):
    for k, leaf in leaves.items():
        if leaf.grad is None:
            params.grads[k].fill(0)
        else:
            params.grads[k][...] = leaf.grad


# --------------------------------------------------------------------------
# checkpoint files


def dumps_checkpoint(params: ControllerParams, meta: dict | None = None) -> bytes:
    """Versioned dump: magic, version, JSON header length, JSON header, raw tensors."""
    names = list(params.tensors)
    header = {
        "arch": params.arch.to_json(),
        "tensors": [[n, list(params.tensors[n].shape), params.tensors[n].dtype.str] for n in names],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<BI", _CKPT_VERSION, len(hbytes)), hbytes]
    for n in names:
        arr = params.tensors[n]
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def loads_checkpoint(data: bytes) -> tuple[ControllerParams, dict]:
    if data[:4] != _CKPT_MAGIC:
        raise ValidationError("not a controller checkpoint (bad magic)")
    if len(data) < 9:
        raise ValidationError("truncated checkpoint")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != _CKPT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    pos = 4 + struct.calcsize("<BI")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for name, shape, dtype in header["tensors"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape))
        if pos + n * dt.itemsize > len(data):
            raise ValidationError("truncated checkpoint")
        tensors[name] = np.frombuffer(data, dtype=dt, count=n, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += n * dt.itemsize
    return ControllerParams(Architecture.from_json(header["arch"]), tensors), header["meta"]


def save_checkpoint(path, params: ControllerParams, meta: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[ControllerParams, dict]:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
