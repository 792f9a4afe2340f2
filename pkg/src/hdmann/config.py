"""Run configuration: a validated ``key = value`` schema with layered sources."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable

from .attention import SHARPENING_KINDS, SharpeningSpec
from .errors import ValidationError
from .hdvec import MODES
from .pcm import PROFILES

OUT_ENV = "HDMANN_OUT"


def _int(lo=None):
    def conv(v):
        try:
            x = int(v)
        except (TypeError, ValueError):
            raise ValidationError(f"expected an integer, got {v!r}") from None
        if lo is not None and x < lo:
            raise ValidationError(f"must be >= {lo}, got {x}")
        return x

    return conv


def _float(lo=None, strict=False):
    def conv(v):
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise ValidationError(f"expected a number, got {v!r}") from None
        if lo is not None and (x < lo or (strict and x == lo)):
            raise ValidationError(f"must be {'>' if strict else '>='} {lo}, got {x}")
        return x

    return conv


def _choice(options):
    def conv(v):
        v = str(v).strip()
        if v not in options:
            raise ValidationError(f"expected one of {sorted(options)}, got {v!r}")
        return v

    return conv


def parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "on", "yes"):
        return True
    if s in ("0", "false", "off", "no"):
        return False
    raise ValidationError(f"expected on/off, got {v!r}")


def parse_problem(v) -> tuple[int, int]:
    """``"5x1"`` -> ``(5, 1)``: ways by shots."""
    if isinstance(v, tuple):
        return v
    try:
        m, n = (int(x) for x in str(v).lower().split("x"))
    except ValueError:
        raise ValidationError(f"problem must look like '5x1' (ways x shots), got {v!r}") from None
    if m < 2 or n < 1:
        raise ValidationError("problem needs at least 2 ways and 1 shot")
    return m, n


def _sharpening(v):
    if isinstance(v, SharpeningSpec):
        return v.kind
    try:
        return SharpeningSpec.parse(str(v).strip()).kind
    except ValidationError:
        raise ValidationError(f"expected one of {SHARPENING_KINDS} (or exp), got {v!r}") from None


def _floats(v):
    if isinstance(v, (list, tuple)):
        vals = [float(x) for x in v]
    else:
        try:
            vals = [float(x) for x in str(v).split(",") if x.strip()]
        except ValueError:
            raise ValidationError(f"expected comma-separated numbers, got {v!r}") from None
    if not vals:
        raise ValidationError("empty list")
    if any(x < 0 for x in vals):
        raise ValidationError("values must be >= 0")
    return tuple(vals)


def _ints(v):
    vals = _floats(v)
    if any(x != int(x) for x in vals):
        raise ValidationError("expected integers")
    return tuple(int(x) for x in vals)


@dataclass(frozen=True)
class Key:
    conv: Callable[[Any], Any]
    default: Any
    help: str


SCHEMA: dict[str, Key] = {
    "d": Key(_int(1), 512, "embedding dimensionality"),
    "arch": Key(_choice({"desk", "full"}), "desk", "controller architecture"),
    "problem": Key(parse_problem, (5, 1), "ways x shots, e.g. 5x1"),
    "batch": Key(_int(1), 32, "queries per episode"),
    "mode": Key(_choice(set(MODES)), "binary", "inference representation"),
    "backend": Key(_choice({"exact", "pcm"}), "exact", "similarity backend"),
    "sharpening": Key(_sharpening, "softabs", "sharpening function"),
    "beta": Key(_float(0, strict=True), 10.0, "softabs stiffness"),
    "criterion": Key(_choice({"sum-argmax", "global-argmax", "sum_argmax", "global_argmax"}), "sum-argmax",
                     "ranking criterion"),
    "regularizer": Key(parse_bool, False, "occupancy regularizers"),
    "pcm_profile": Key(_choice(set(PROFILES)), "table", "PCM parameter profile"),
    "variation": Key(_float(0), None, "override relative programming variability"),
    "read_noise": Key(_float(0), None, "override read noise (uS)"),
    "eval_time": Key(_float(0, strict=True), 20.0, "read time after programming (s)"),
    "adc_bits": Key(_int(1), 8, "ADC resolution"),
    "quantize": Key(parse_bool, True, "quantize device reads"),
    "placement": Key(_choice({"sequential", "random"}), "sequential", "support placement on the crossbar"),
    "seed": Key(_int(0), 0, "root random seed"),
    "episodes": Key(_int(1), 1000, "episodes to train or evaluate"),
    "interval": Key(_int(1), 500, "validation interval (episodes)"),
    "val_episodes": Key(_int(1), 250, "validation episodes per checkpoint"),
    "lr": Key(_float(0, strict=True), 1e-4, "Adam learning rate"),
    "augment": Key(parse_bool, True, "augment training images"),
    "levels": Key(_floats, (0.0, 0.317, 0.5, 1.0), "variation levels for the noise sweep"),
    "layouts": Key(lambda v: tuple(_choice({"binary", "bipolar"})(x) for x in str(v).split(",")) if not
                   isinstance(v, tuple) else v, ("binary", "bipolar"), "crossbar layouts"),
    "co_scale_read_noise": Key(parse_bool, False, "scale read noise with the variation level"),
    "dims": Key(_ints, (16, 64, 512), "dimensionalities for the dimension sweep"),
    "trials": Key(_int(1), 10_000, "Monte-Carlo trials per grid point"),
    "out": Key(str, None, "output directory"),
    "threads": Key(_int(1), 1, "worker threads"),
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc.strerror}") from None
    with fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{ln}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            k = k.replace("-", "_")
            if k not in SCHEMA:
                raise ValidationError(f"{path}:{ln}: unknown key {k!r}")
            out[k] = v
    return out


class RunConfig(dict):
    """Resolved settings: command line over config file over defaults."""

    @classmethod
    def resolve(cls, cli: dict, file_values: dict | None = None) -> "RunConfig":
        cfg = cls()
        cfg.explicit = set()
        file_values = file_values or {}
        for k in cli:
            if k not in SCHEMA:
                raise ValidationError(f"unknown setting {k!r}")
        for k, key in SCHEMA.items():
            if cli.get(k) is not None:
                raw, src = cli[k], "command line"
            elif k in file_values:
                raw, src = file_values[k], "config file"
            else:
                cfg[k] = key.default
                continue
            cfg.explicit.add(k)
            try:
                cfg[k] = key.conv(raw)
            except ValidationError as exc:
                raise ValidationError(f"{k} ({src}): {exc}") from None
        if cfg["out"] is None:
            cfg["out"] = os.environ.get(OUT_ENV, "hdmann-out")
        return cfg

    def __getattr__(self, k):
        try:
            return self[k]
        except KeyError:
            raise AttributeError(k) from None
