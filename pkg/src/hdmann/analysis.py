"""Robustness law, Monte-Carlo checks, margin/occupancy statistics and sweeps."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import hdvec, pcm
from . import rng as rngmod
from .attention import SharpeningSpec, predict_global_argmax, predict_sum_argmax
from .controller import Architecture, embed_episode, forward, infer, init_params, run_training
from .dataset import NO_AUGMENT, GlyphDataset, sample_episode
from .errors import ValidationError
from .kvmem import KeyValueMemory, parse_criterion

SIGMA_GRID = {"alpha": (0.1, 0.25, 0.5, 1.0), "d": (128, 512, 2048), "sigma_rel": (0.1, 0.317, 0.5)}
REPORT_SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# similarity spread under programming variability


def sigma_lambda_theory(alpha: float, d: int, sigma_rel: float) -> float:
    """Predicted std of the noisy binary similarity: ``sqrt(2 alpha / d) * sigma_rel``."""
    if alpha < 0:
        raise ValidationError("alpha must be >= 0 (the law is derived for overlap counts)")
    if d < 1:
        raise ValidationError("d must be >= 1")
    if sigma_rel < 0:
        raise ValidationError("sigma_rel must be >= 0")
    return math.sqrt(2.0 * alpha / d) * sigma_rel


@dataclass
class RobustnessPoint:
    alpha: float
    d: int
    sigma_rel: float
    sigma_theory: float
    sigma_empirical: float
    mean_empirical: float
    trials: int

    @property
    def rel_error(self) -> float:
        if self.sigma_theory == 0:
            return 0.0 if self.sigma_empirical == 0 else math.inf
        return abs(self.sigma_empirical - self.sigma_theory) / self.sigma_theory


def overlap_pairs(alpha: float, d: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Balanced binary pairs ``(q, k)`` sharing exactly ``round(alpha d / 2)`` ones."""
    n = int(round(alpha * d / 2))
    half = d // 2
    if n < 0 or n > half:
        raise ValidationError(f"overlap {n} infeasible for balanced vectors with d={d}")
    idx = rng.permuted(np.tile(np.arange(d), (count, 1)), axis=1)
    k = np.zeros((count, d), dtype=np.uint8)
    q = np.zeros((count, d), dtype=np.uint8)
    rows = np.arange(count)[:, None]
    k[rows, idx[:, :half]] = 1
    q[rows, idx[:, :n]] = 1
    q[rows, idx[:, half : half + (half - n)]] = 1
    return q, k


def sigma_lambda_empirical(alpha: float, d: int, sigma_rel: float, trials: int,
                           rng: np.random.Generator, chunk: int = 2000) -> RobustnessPoint:
    """Monte-Carlo spread of ``(2/d) q . k~`` with ``k~`` the SET cells scaled by ``N(1, sigma_rel^2)``."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    theory = sigma_lambda_theory(alpha, d, sigma_rel)
    vals = []
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        q, k = overlap_pairs(alpha, d, c, rng)
        g = k * (1.0 + sigma_rel * rng.standard_normal((c, d)))
        vals.append(2.0 * np.einsum("ij,ij->i", q.astype(np.float64), g) / d)
        done += c
    lam = np.concatenate(vals)
    std = float(lam.std(ddof=1)) if trials > 1 else 0.0
    return RobustnessPoint(alpha, d, sigma_rel, theory, std, float(lam.mean()), trials)


def sigma_lambda_grid(seed: int = 0, trials: int = 10_000, alphas=SIGMA_GRID["alpha"], dims=SIGMA_GRID["d"],
                      sigmas=SIGMA_GRID["sigma_rel"]) -> list[RobustnessPoint]:
    out = []
    for ia, a in enumerate(alphas):
        for id_, d in enumerate(dims):
            for is_, s in enumerate(sigmas):
                g = rngmod.stream(seed, "sigma-lambda", ia, id_, is_)
                out.append(sigma_lambda_empirical(a, d, s, trials, g))
    return out


# --------------------------------------------------------------------------
# margins and occupancy


@dataclass
class MarginReport:
    intra_p10: list
    inter_p90: list
    margins: list
    skipped: int = 0

    @property
    def mean_margin(self) -> float:
        return float(np.mean(self.margins)) if self.margins else math.nan

    @property
    def mean_intra(self) -> float:
        return float(np.mean(self.intra_p10)) if self.intra_p10 else math.nan

    @property
    def mean_inter(self) -> float:
        return float(np.mean(self.inter_p90)) if self.inter_p90 else math.nan


def margin_stats(traces) -> MarginReport:
    """Per episode: 10th percentile of same-class similarities minus 90th of different-class.

    Each trace is a mapping with ``alphas`` (queries x supports), ``query_labels``
    and ``support_labels``. Percentiles interpolate linearly.
    """
    intra, inter, margins = [], [], []
    skipped = 0
    for tr in traces:
        A = np.atleast_2d(np.asarray(tr["alphas"], dtype=np.float64))
        ql = np.atleast_1d(np.asarray(tr["query_labels"]))
        sl = np.asarray(tr["support_labels"])
        same = ql[:, None] == sl[None, :]
        if not same.any() or same.all():
            skipped += 1
            continue
        p10 = float(np.percentile(A[same], 10, method="linear"))
        p90 = float(np.percentile(A[~same], 90, method="linear"))
        intra.append(p10)
        inter.append(p90)
        margins.append(p10 - p90)
    if skipped:
        warnings.warn(f"margin_stats skipped {skipped} single-class episode(s)", stacklevel=2)
    return MarginReport(intra, inter, margins, skipped)


def occupancy_stats(embeddings) -> tuple[float, float]:
    """Mean and std of occupancy ratios of binary row vectors."""
    B = np.atleast_2d(np.asarray(embeddings))
    if not np.all((B == 0) | (B == 1)):
        raise ValidationError("occupancy statistics need binary embeddings")
    occ = B.mean(axis=1)
    return float(occ.mean()), float(occ.std())


def embedding_occupancy(params, images, batch: int = 256) -> tuple[float, float]:
    """Occupancy statistics of clipped controller embeddings of ``images``."""
    rows = []
    for i in range(0, len(images), batch):
        rows.append(hdvec.clip_to_binary(forward(params, images[i : i + batch])))
    return occupancy_stats(np.concatenate(rows))


# --------------------------------------------------------------------------
# accuracy sweeps


@dataclass
class SweepPoint:
    layout: str
    level: float
    mean: float
    std: float
    episodes: int
    criterion: str = "sum_argmax"
    accs: list = field(default_factory=list, repr=False)


def _episode_embeddings(params, ds: GlyphDataset, m, n, b, episodes, seed, split):
    for i in range(episodes):
        ep = sample_episode(ds, split, m, n, b, NO_AUGMENT, rngmod.stream(seed, "episodes", i))
        Ks, Qs = embed_episode(params, ep)
        yield i, ep, Ks, Qs


HARDWARE_ATTENTION = {"binary": (SharpeningSpec("bypass"), False), "bipolar": (SharpeningSpec("absolute"), False)}


def noise_sweep(params, ds: GlyphDataset, *, m: int = 5, n: int = 1, b: int = 32, layouts=("binary", "bipolar"),
                levels=(0.0, 0.317, 0.5, 1.0), episodes: int = 100, seed: int = 0,
                base: pcm.PcmDeviceParams = pcm.PcmDeviceParams(), readout_cfg: pcm.ReadoutConfig = pcm.ReadoutConfig(),
                criteria=("sum_argmax",), co_scale_read_noise: bool = False, split: str = "test",
                include_exact: bool = True) -> list[SweepPoint]:
    """Accuracy versus programming variability on the simulated crossbar.

    Each episode is embedded once and replayed at every level and layout.
    Device draws for an episode and layout come from one stream shared by all
    levels, so levels differ only in the scale of the same perturbations.
    An ``exact`` row (``level = nan``) gives the software reference.
    """
    criteria = tuple(parse_criterion(c) for c in criteria)
    if not set(layouts) <= set(HARDWARE_ATTENTION):
        raise ValidationError(f"layouts must be among {sorted(HARDWARE_ATTENTION)}")
    keys = []
    if include_exact:
        keys += [(lay, math.nan, c) for lay in layouts for c in criteria]
    keys += [(lay, float(lv), c) for lay in layouts for lv in levels for c in criteria]
    accs: dict = {k: [] for k in keys}

    def record(mem, Qc, spec, norm, level, lay, truth):
        res, _ = mem.query(Qc, spec, "sum_argmax", norm)
        preds = {"sum_argmax": predict_sum_argmax(res.extra["p"]),
                 "global_argmax": predict_global_argmax(res.weights, mem.labels)}
        for c in criteria:
            accs[(lay, level, c)].append(float(np.mean(preds[c] == truth)))

    for i, ep, Ks, Qs in _episode_embeddings(params, ds, m, n, b, episodes, seed, split):
        for il, lay in enumerate(layouts):
            spec, norm = HARDWARE_ATTENTION[lay]
            Kc, Qc = hdvec.clip(Ks, lay), hdvec.clip(Qs, lay)
            if include_exact:
                mem = KeyValueMemory(lay, "exact").write_support(Kc, ep.support_labels, m)
                record(mem, Qc, spec, norm, math.nan, lay, ep.query_labels)
            for lv in levels:
                mem = KeyValueMemory(
                    lay, "pcm",
                    pcm_params=base.with_variation(lv, co_scale_read_noise),
                    readout_cfg=readout_cfg,
                    program_rng=rngmod.stream(seed, "pcm-program", i, il),
                    read_rng=rngmod.stream(seed, "pcm-read", i, il),
                ).write_support(Kc, ep.support_labels, m)
                record(mem, Qc, spec, norm, float(lv), lay, ep.query_labels)
    return [
        SweepPoint(lay, lv, float(np.mean(a)), float(np.std(a)), len(a), c, a)
        for (lay, lv, c), a in accs.items()
    ]


def dimension_sweep(train_cfg, ds: GlyphDataset, dims=(16, 64, 512), *, eval_episodes: int = 100,
                    sigma_trials: int = 2000, eval_m: int | None = None, eval_n: int | None = None,
                    eval_b: int | None = None, progress=None) -> list[dict]:
    """Short training run per ``d``; reports accuracy, similarity spread and occupancy."""
    out = []
    m = eval_m or train_cfg.m
    n = eval_n or train_cfg.n
    b = eval_b or train_cfg.b
    for d in dims:
        if d < 8:
            raise ValidationError("dimension sweep needs d >= 8")
        arch = Architecture(train_cfg.arch.layers, d, ds.image_size)
        cfg = replace(train_cfg, arch=arch)
        res = run_training(cfg, ds)
        accs = []
        for i in range(eval_episodes):
            ep = sample_episode(ds, "test", m, n, b, NO_AUGMENT, rngmod.stream(cfg.seed, "episodes", i))
            accs.append(infer(res.params, ep, "real", sharpening=cfg.sharpening, normalize=True))
        point = sigma_lambda_empirical(0.5, d, 0.317, sigma_trials, rngmod.stream(cfg.seed, "sigma-lambda", d))
        test_imgs = np.concatenate([ds.images[c] for c in ds.classes_in("test")])
        init = init_params(arch, rngmod.stream(cfg.seed, "init"))
        _, occ_init = embedding_occupancy(init, test_imgs)
        _, occ_trained = embedding_occupancy(res.params, test_imgs)
        row = {
            "d": d,
            "accuracy_mean": float(np.mean(accs)),
            "accuracy_std": float(np.std(accs)),
            "sigma_theory": point.sigma_theory,
            "sigma_empirical": point.sigma_empirical,
            "occupancy_std_init": occ_init,
            "occupancy_std_trained": occ_trained,
            "occupancy_std_random": 1.0 / (2.0 * math.sqrt(d)),
        }
        out.append(row)
        if progress:
            progress(row)
    return out


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope and R^2 of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    return float(coef[0]), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# --------------------------------------------------------------------------
# outputs


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_csv(path, rows: list[dict], fields: list[str] | None = None):
    if not rows:
        raise ValidationError("nothing to write")
    fields = fields or list(rows[0])
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(r[k]) for k in fields})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))


def robustness_rows(points: list[RobustnessPoint]) -> list[dict]:
    return [dict(asdict(p), rel_error=p.rel_error) for p in points]


def sweep_rows(points: list[SweepPoint]) -> list[dict]:
    return [
        {"layout": p.layout, "level": p.level, "criterion": p.criterion, "mean": p.mean, "std": p.std,
         "episodes": p.episodes}
        for p in points
    ]


def sweep_lookup(points: list[SweepPoint], layout: str, level: float | None, criterion: str = "sum_argmax"):
    for p in points:
        same_level = (level is None and math.isnan(p.level)) or (level is not None and p.level == level)
        if p.layout == layout and same_level and p.criterion == criterion:
            return p
    raise KeyError((layout, level, criterion))
