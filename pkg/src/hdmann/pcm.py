"""Stochastic phase-change-memory device and crossbar model.

Device conductance after programming follows a power-law drift with three
Gaussian variability sources::

    G(t) = N(0, Gr^2) + G0 * N(1, Gp^2) * t ** (-nu * N(1, nu_var^2))

programming variability ``Gp`` and the per-device drift exponent are drawn
once per programming call; read noise ``Gr`` is drawn afresh on every read.

Internally conductances are kept in units of ``G0`` (a SET device without
variability reads exactly 1.0), so the noise-free path is exact integer
arithmetic. Public currents and exports are in microsiemens with a unit read
voltage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, ValidationError


@dataclass(frozen=True)
class PcmDeviceParams:
    """Model parameters. Conductances in microsiemens, variabilities relative."""

    g0: float = 22.8
    drift_nu: float = 0.0598
    prog_var: float = 0.317
    read_noise: float = 0.496
    drift_var: float = 0.0907
    g_reset: float = 0.0

    def __post_init__(self):
        if not self.g0 > 0:
            raise ValidationError("SET conductance g0 must be > 0")
        for name in ("drift_nu", "prog_var", "read_noise", "drift_var", "g_reset"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    def with_variation(self, level: float, co_scale_read_noise: bool = False) -> "PcmDeviceParams":
        """Copy with programming variability set to ``level``.

        With ``co_scale_read_noise`` the read noise is scaled by the same
        factor relative to this profile's programming variability.
        """
        if level < 0:
            raise ValidationError("variation level must be >= 0")
        rn = self.read_noise
        if co_scale_read_noise:
            rn = self.read_noise * (level / self.prog_var) if self.prog_var > 0 else 0.0
        return replace(self, prog_var=float(level), read_noise=float(rn))


PROFILES = {
    # consolidated parameter table; the default
    "table": PcmDeviceParams(),
    # values quoted alongside the measurement procedure
    "methods": PcmDeviceParams(drift_nu=0.0715, drift_var=0.225, read_noise=0.926),
    "zero-noise": PcmDeviceParams(drift_nu=0.0, prog_var=0.0, read_noise=0.0, drift_var=0.0),
}


def profile(name: str) -> PcmDeviceParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValidationError(f"unknown PCM profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class ReadoutConfig:
    """Read conditions. ``adc_full_scale`` is in units of G0 (signed range)."""

    t: float = 20.0
    adc_bits: int = 8
    adc_full_scale: float = 2.0
    quantize: bool = True

    def __post_init__(self):
        if not self.t > 0:
            raise ValidationError("evaluation time must be > 0")
        if self.adc_bits < 1:
            raise ValidationError("ADC needs at least one bit")
        if not self.adc_full_scale > 0:
            raise ValidationError("ADC full scale must be > 0")


@dataclass(frozen=True)
class PcmArrayState:
    """Programmed region of the crossbar.

    ``g_rel`` and ``nu`` have shape ``(d, columns)``: one column per bitline
    used, components along wordlines. ``column_of`` maps support row ``i`` to
    its column (binary) or to its left column (bipolar; right is ``+1``).
    """

    layout: str
    params: PcmDeviceParams
    g_rel: np.ndarray
    nu: np.ndarray
    set_mask: np.ndarray
    column_of: np.ndarray
    bitline_of: np.ndarray
    wordlines: int = 512
    bitlines: int = 2048
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return int(self.g_rel.shape[0])

    @property
    def rows(self) -> int:
        return int(self.column_of.shape[0])

    @property
    def devices(self) -> int:
        return int(self.g_rel.size)


def _drift_factor(nu: np.ndarray, t: float) -> np.ndarray:
    return np.power(t, -nu)


def sample_device_conductance(params: PcmDeviceParams, t: float, rng: np.random.Generator, size=None):
    """Conductance (uS) of freshly SET devices read once at time ``t``."""
    if not t > 0:
        raise ValidationError("t must be > 0")
    prog = params.g0 * (1.0 + params.prog_var * rng.standard_normal(size))
    nu = params.drift_nu * (1.0 + params.drift_var * rng.standard_normal(size))
    noise = params.read_noise * rng.standard_normal(size)
    return noise + prog * np.power(t, -nu)


def _program(set_mask: np.ndarray, params: PcmDeviceParams, rng, layout, column_of, wordlines, bitlines, placement):
    d, cols = set_mask.shape
    if d > wordlines:
        raise CapacityError(f"vector dimension {d} exceeds {wordlines} wordlines")
    if cols > bitlines:
        raise CapacityError(f"{cols} columns needed but only {bitlines} bitlines available")
    mult = 1.0 + params.prog_var * rng.standard_normal((d, cols))
    g_rel = np.where(set_mask, mult, params.g_reset / params.g0)
    nu = params.drift_nu * (1.0 + params.drift_var * rng.standard_normal((d, cols)))
    if placement == "random":
        bitline_of = rng.permutation(bitlines)[:cols]
    else:
        bitline_of = np.arange(cols)
    return PcmArrayState(
        layout=layout,
        params=params,
        g_rel=g_rel,
        nu=nu,
        set_mask=set_mask,
        column_of=column_of,
        bitline_of=bitline_of,
        wordlines=wordlines,
        bitlines=bitlines,
    )


def program_binary(K, params: PcmDeviceParams, rng: np.random.Generator, *, wordlines=512, bitlines=2048,
                   placement="sequential") -> PcmArrayState:
    """One binary support vector per bitline: 1 -> SET, 0 -> RESET."""
    K = np.atleast_2d(np.asarray(K))
    if not np.all((K == 0) | (K == 1)):
        raise ValidationError("program_binary expects {0,1} support vectors")
    set_mask = K.T.astype(bool)
    column_of = np.arange(K.shape[0])
    return _program(set_mask, params, rng, "binary", column_of, wordlines, bitlines, placement)


def program_bipolar(K, params: PcmDeviceParams, rng: np.random.Generator, *, wordlines=512, bitlines=2048,
                    placement="sequential") -> PcmArrayState:
    """Differential layout: +1 SET on the left bitline of a pair, -1 SET on the right."""
    K = np.atleast_2d(np.asarray(K))
    if not np.all((K == 1) | (K == -1)):
        raise ValidationError("program_bipolar expects {-1,+1} support vectors")
    rows, d = K.shape
    set_mask = np.zeros((d, 2 * rows), dtype=bool)
    set_mask[:, 0::2] = (K == 1).T
    set_mask[:, 1::2] = (K == -1).T
    column_of = 2 * np.arange(rows)
    return _program(set_mask, params, rng, "bipolar", column_of, wordlines, bitlines, placement)


def apply_spatial_variability(state: PcmArrayState, per_bitline_rel_std: float,
                              rng: np.random.Generator) -> PcmArrayState:
    """Scale every bitline's SET multipliers by one ``N(1, std^2)`` draw."""
    if per_bitline_rel_std < 0:
        raise ValidationError("spatial variability std must be >= 0")
    if per_bitline_rel_std == 0:
        return state
    scale = 1.0 + per_bitline_rel_std * rng.standard_normal(state.g_rel.shape[1])
    g_rel = np.where(state.set_mask, state.g_rel * scale[None, :], state.g_rel)
    meta = dict(state.meta, spatial_std=per_bitline_rel_std)
    return replace(state, g_rel=g_rel, meta=meta)


def _quantize(x: np.ndarray, cfg: ReadoutConfig) -> np.ndarray:
    half = 2 ** (cfg.adc_bits - 1)
    step = cfg.adc_full_scale / half
    return np.clip(np.rint(x / step), -half, half - 1) * step


def _read_rel(state: PcmArrayState, U: np.ndarray, cfg: ReadoutConfig, rng: np.random.Generator) -> np.ndarray:
    """Bitline currents in units of G0 for binary voltage rows ``U`` (b, d)."""
    g_t = state.g_rel * _drift_factor(state.nu, cfg.t)
    rn = state.params.read_noise / state.params.g0
    U = np.atleast_2d(U)
    if rn == 0.0 and not cfg.quantize:
        return U.astype(np.float64) @ g_t
    out = np.empty((U.shape[0], g_t.shape[1]))
    for i, u in enumerate(U):
        active = np.flatnonzero(u)
        g = g_t[active]
        if rn > 0.0:
            g = g + rn * rng.standard_normal(g.shape)
        if cfg.quantize:
            g = _quantize(g, cfg)
        out[i] = g.sum(axis=0)
    return out


def crossbar_read(state: PcmArrayState, U, cfg: ReadoutConfig, rng: np.random.Generator) -> np.ndarray:
    """``I = U . G^T`` at time ``cfg.t`` for a batch of binary voltage rows.

    Returns currents in microsiemens (unit read voltage), one column per
    programmed bitline. Each active device gets a fresh read-noise draw and,
    when quantization is on, is digitized before the digital bitline sum.
    """
    U = np.atleast_2d(np.asarray(U))
    if U.shape[1] != state.d:
        raise ValidationError(f"query width {U.shape[1]} != {state.d} programmed wordlines")
    if not np.all((U == 0) | (U == 1)):
        raise ValidationError("crossbar inputs are binary read voltages")
    return _read_rel(state, U, cfg, rng) * state.params.g0


def similarity_via_crossbar(state: PcmArrayState, q, cfg: ReadoutConfig, rng: np.random.Generator) -> np.ndarray:
    """In-memory similarity of query row(s) ``q`` against every stored support.

    Scores are normalized by the mean drifted SET conductance so that the
    noise-free result equals the software dot-product similarity.
    """
    q = np.asarray(q)
    single = q.ndim == 1
    Q = np.atleast_2d(q)
    if Q.shape[1] != state.d:
        raise ValidationError(f"query width {Q.shape[1]} != {state.d}")
    scale = float(np.power(cfg.t, -state.params.drift_nu))
    d = state.d
    if state.layout == "binary":
        if not np.all((Q == 0) | (Q == 1)):
            raise ValidationError("binary layout needs a binary query")
        I = _read_rel(state, Q, cfg, rng)[:, state.column_of]
        scores = 2.0 * (I / scale) / d
    elif state.layout == "bipolar":
        if not np.all((Q == 1) | (Q == -1)):
            raise ValidationError("bipolar layout needs a bipolar query")
        q_pos = (Q == 1).astype(np.uint8)
        q_neg = (Q == -1).astype(np.uint8)
        I_pos = _read_rel(state, q_pos, cfg, rng)
        I_neg = _read_rel(state, q_neg, cfg, rng)
        left = state.column_of
        right = state.column_of + 1
        net = (I_pos[:, left] + I_neg[:, right]) - (I_pos[:, right] + I_neg[:, left])
        scores = (net / scale) / d
    else:
        raise ValidationError(f"unknown layout {state.layout!r}")
    return scores[0] if single else scores


def program(K, layout: str, params: PcmDeviceParams, rng, **kw) -> PcmArrayState:
    if layout == "binary":
        return program_binary(K, params, rng, **kw)
    if layout == "bipolar":
        return program_bipolar(K, params, rng, **kw)
    raise ValidationError(f"unknown layout {layout!r}")


def export_state_csv(state: PcmArrayState, path):
    """One row per device: wordline, bitline, base conductance (uS), drift exponent."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["wordline", "bitline", "base_conductance_uS", "drift_exponent"])
        g = state.g_rel * state.params.g0
        for col in range(state.g_rel.shape[1]):
            bl = int(state.bitline_of[col])
            for wl in range(state.d):
                wr.writerow([wl, bl, repr(float(g[wl, col])), repr(float(state.nu[wl, col]))])
