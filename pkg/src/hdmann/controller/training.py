"""Episodic training loop, validation checkpointing and inference."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .. import hdvec
from .. import rng as rngmod
from ..attention import SharpeningSpec
from ..dataset import NO_AUGMENT, AugmentSpec, GlyphDataset, sample_episode
from ..errors import ValidationError
from ..kvmem import EpisodeSpec, KeyValueMemory, parse_criterion
from .autodiff import Tape
from .losses import RegularizerSpec, attention_probs, log_loss, total_loss
from .network import Architecture, ControllerParams, collect_grads, forward, init_params
from .optim import Adam, AdamConfig

# Inference-time attention defaults per representation.
INFERENCE_DEFAULTS = {
    "real": (SharpeningSpec("absolute"), True),
    "bipolar": (SharpeningSpec("absolute"), False),
    "binary": (SharpeningSpec("bypass"), False),
}


@dataclass
class TrainingConfig:
    max_episodes: int = 5000
    interval: int = 500
    val_episodes: int = 250
    m: int = 5
    n: int = 1
    b: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    sharpening: SharpeningSpec = field(default_factory=SharpeningSpec)
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    arch: Architecture = field(default_factory=Architecture)
    keep_best: bool = True

    def __post_init__(self):
        for name in ("max_episodes", "interval", "val_episodes", "m", "n", "b"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.interval > self.max_episodes:
            raise ValidationError("validation interval exceeds the episode budget")
        AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def checkpoints(self) -> int:
        return self.max_episodes // self.interval


@dataclass
class TrainingStepRecord:
    episode: int
    losses: np.ndarray
    loss: float
    total: float
    P: np.ndarray
    Y: np.ndarray
    accuracy: float


@dataclass
class TrainingResult:
    params: ControllerParams
    best_val_accuracy: float
    best_episode: int
    checkpoints: list  # (episode, validation accuracy)
    log: list  # (episode, loss, train accuracy, val accuracy or None)


def train_episode(params: ControllerParams, opt: Adam, episode: EpisodeSpec,
                  sharpening: SharpeningSpec = SharpeningSpec(),
                  regularizer: RegularizerSpec = RegularizerSpec(), index: int = 0) -> TrainingStepRecord:
    """One support-load / query / update cycle on real-valued keys."""
    mn = episode.m * episode.n
    tape = Tape()
    leaves: dict = {}
    images = np.concatenate([episode.support_images, episode.query_images])
    E = forward(params, images, tape=tape, leaves=leaves)
    K = E[:mn]
    Q = E[mn:]
    mem = KeyValueMemory("real").write_support(K.data.astype(np.float64), episode.support_labels, episode.m)
    before = mem.snapshot()
    P, _ = attention_probs(Q, K, episode.support_labels, episode.m, sharpening)
    Y = np.zeros((episode.b, episode.m), dtype=params.dtype)
    Y[np.arange(episode.b), episode.query_labels] = 1
    lam, avg = log_loss(P, Y)
    total = total_loss(avg, K, regularizer)
    tape.backward(total)
    assert mem.snapshot() == before, "backward pass must not touch the key-value memory"
    collect_grads(params, leaves)
    opt.step(params)
    pred = np.argmax(P.data, axis=1)
    return TrainingStepRecord(
        episode=index,
        losses=lam.data.astype(np.float64),
        loss=float(avg.data),
        total=float(total.data),
        P=P.data.astype(np.float64),
        Y=Y.astype(np.float64),
        accuracy=float(np.mean(pred == episode.query_labels)),
    )


def embed_episode(params: ControllerParams, episode: EpisodeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Real-valued support and query embeddings (float64)."""
    E = forward(params, np.concatenate([episode.support_images, episode.query_images]))
    E = E.astype(np.float64)
    mn = episode.m * episode.n
    return E[:mn], E[mn:]


def classify(Ks, Qs, support_labels, m: int, mode: str = "real", *, memory: KeyValueMemory | None = None,
             sharpening: SharpeningSpec | None = None, normalize: bool | None = None,
             criterion: str = "sum_argmax"):
    """Clip embeddings for ``mode``, write the memory, rank queries.

    Returns ``(predictions, attention result)``.
    """
    spec0, norm0 = INFERENCE_DEFAULTS[mode]
    spec = spec0 if sharpening is None else sharpening
    norm = norm0 if normalize is None else normalize
    mem = memory if memory is not None else KeyValueMemory(mode)
    if mem.mode != mode:
        raise ValidationError(f"memory holds {mem.mode} keys but mode {mode} was requested")
    mem.write_support(hdvec.clip(Ks, mode), support_labels, m)
    res, pred = mem.query(hdvec.clip(Qs, mode), spec, criterion, norm)
    return np.asarray(pred), res


def infer(params: ControllerParams, episode: EpisodeSpec, mode: str = "real", backend: str = "exact",
          criterion: str = "sum_argmax", *, sharpening: SharpeningSpec | None = None,
          normalize: bool | None = None, memory: KeyValueMemory | None = None,
          return_trace: bool = False):
    """Fraction of correctly classified queries in one episode."""
    criterion = parse_criterion(criterion)
    if memory is None:
        memory = KeyValueMemory(mode, backend)
    Ks, Qs = embed_episode(params, episode)
    pred, res = classify(Ks, Qs, episode.support_labels, episode.m, mode, memory=memory,
                         sharpening=sharpening, normalize=normalize, criterion=criterion)
    acc = float(np.mean(pred == episode.query_labels))
    if return_trace:
        return acc, pred, res
    return acc


def validation_episodes(ds: GlyphDataset, cfg: TrainingConfig, split: str = "validation"):
    """Fixed episode set, identical at every checkpoint."""
    for i in range(cfg.val_episodes):
        yield sample_episode(ds, split, cfg.m, cfg.n, cfg.b, NO_AUGMENT, rngmod.stream(cfg.seed, "validation", i))


def evaluate(params: ControllerParams, episodes, sharpening: SharpeningSpec, mode: str = "real") -> float:
    """Mean accuracy of the training-style head (normalized) over ``episodes``."""
    accs = [infer(params, ep, mode, sharpening=sharpening, normalize=True) for ep in episodes]
    return float(np.mean(accs))


def run_training(cfg: TrainingConfig, ds: GlyphDataset, log_path=None, progress=None,
                 on_checkpoint=None) -> TrainingResult:
    """Episodic training with periodic validation; keeps the best checkpoint.

    Validation only reads the parameters. A later checkpoint replaces the
    kept one only when its validation accuracy is strictly higher.
    ``on_checkpoint(episode, params, val)`` sees the live parameters at every
    validation point.
    """
    if ds.classes_in("train").size < cfg.m or ds.classes_in("validation").size < cfg.m:
        raise ValidationError("dataset needs at least m training and m validation classes")
    arch = cfg.arch
    if arch.input_size != ds.image_size:
        arch = Architecture(arch.layers, arch.d, ds.image_size)
    params = init_params(arch, rngmod.stream(cfg.seed, "init"))
    opt = Adam(params, cfg.adam)
    val_eps = list(validation_episodes(ds, cfg))
    best, best_acc, best_ep = params.copy(), -1.0, 0
    checkpoints, log = [], []
    for i in range(1, cfg.max_episodes + 1):
        g = rngmod.stream(cfg.seed, "episodes", i)
        ep = sample_episode(ds, "train", cfg.m, cfg.n, cfg.b, cfg.augment, g)
        rec = train_episode(params, opt, ep, cfg.sharpening, cfg.regularizer, i)
        val = None
        if i % cfg.interval == 0:
            val = evaluate(params, val_eps, cfg.sharpening)
            checkpoints.append((i, val))
            if val > best_acc or not cfg.keep_best:
                best, best_acc, best_ep = params.copy(), val, i
            if on_checkpoint:
                on_checkpoint(i, params, val)
            if progress:
                progress(i, rec, val)
        log.append((i, rec.loss, rec.accuracy, val))
    if log_path is not None:
        write_log(log_path, log)
    return TrainingResult(best, best_acc, best_ep, checkpoints, log)


def write_log(path, log):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["episode", "loss", "train_accuracy", "val_accuracy"])
        for ep, loss, acc, val in log:
            wr.writerow([ep, f"{loss:.6f}", f"{acc:.6f}", "" if val is None else f"{val:.6f}"])
