"""Procedural glyph dataset, augmentation, episode sampling and PGM directory I/O."""

from __future__ import annotations

import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .errors import ValidationError
from .kvmem import EpisodeSpec

SPLITS = ("train", "validation", "test")
TRAIN_FRACTION = 0.6
VALIDATION_FRACTION = 0.15  # of the training classes
MANIFEST = "manifest.tsv"


@dataclass
class GlyphDataset:
    """Classes of grayscale images in ``[0, 1]`` with a split per class.

    ``images[c]`` is an array ``(samples, size, size)`` for class ``c``.
    """

    class_ids: list
    images: list
    splits: list
    image_size: int = 32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.class_ids) == len(self.images) == len(self.splits)):
            raise ValidationError("class ids, images and splits differ in length")
        for s in self.splits:
            if s not in SPLITS:
                raise ValidationError(f"unknown split {s!r}")
        for imgs in self.images:
            if imgs.ndim != 3 or imgs.shape[1:] != (self.image_size, self.image_size):
                raise ValidationError(f"class images must be (k, {self.image_size}, {self.image_size})")

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def samples_per_class(self) -> list[int]:
        return [int(x.shape[0]) for x in self.images]

    def classes_in(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=np.int64)

    def sample_offsets(self) -> np.ndarray:
        """Global id of the first sample of each class."""
        return np.concatenate([[0], np.cumsum(self.samples_per_class())[:-1]]).astype(np.int64)


def assign_splits(num_classes: int, rng: np.random.Generator) -> list[str]:
    """Random 60/40 train/test class split with 15% of training classes held out."""
    order = rng.permutation(num_classes)
    n_train = int(round(TRAIN_FRACTION * num_classes))
    n_val = int(round(VALIDATION_FRACTION * n_train))
    splits = ["test"] * num_classes
    for k, c in enumerate(order[:n_train]):
        splits[c] = "validation" if k < n_val else "train"
    return splits


def hash_split(name: str) -> str:
    """Deterministic split of a class name, same proportions as :func:`assign_splits`."""
    h = (zlib.crc32(name.encode("utf-8")) % 10000) / 10000.0
    if h >= TRAIN_FRACTION:
        return "test"
    return "validation" if h < TRAIN_FRACTION * VALIDATION_FRACTION else "train"


# --------------------------------------------------------------------------
# procedural glyphs


def _class_skeleton(rng: np.random.Generator, size: int) -> list[np.ndarray]:
    """2-4 strokes, each a polyline of control points in pixel coordinates."""
    strokes = []
    lo, hi = 0.2 * size, 0.8 * size
    for _ in range(int(rng.integers(2, 5))):
        if rng.random() < 0.5:
            k = int(rng.integers(2, 5))
            pts = rng.uniform(lo, hi, size=(k, 2))
        else:
            c = rng.uniform(0.35 * size, 0.65 * size, size=2)
            r = rng.uniform(0.12 * size, 0.3 * size)
            a0 = rng.uniform(0, 2 * np.pi)
            sweep = rng.uniform(0.5 * np.pi, 1.6 * np.pi) * rng.choice([-1, 1])
            t = a0 + sweep * np.linspace(0, 1, 5)
            pts = c + r * np.stack([np.cos(t), np.sin(t)], axis=1)
        strokes.append(pts)
    return strokes


def _smooth(pts: np.ndarray, per_seg: int = 6) -> np.ndarray:
    """Densify a control polygon with Catmull-Rom interpolation."""
    if len(pts) < 3:
        return pts
    p = np.vstack([pts[0], pts, pts[-1]])
    t = np.linspace(0, 1, per_seg, endpoint=False)[:, None]
    out = []
    for i in range(1, len(p) - 2):
        p0, p1, p2, p3 = p[i - 1], p[i], p[i + 1], p[i + 2]
        out.append(
            0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2 + (-p0 + 3 * p1 - 3 * p2 + p3) * t**3)
        )
    out.append(pts[-1:])
    return np.vstack(out)


def render_strokes(strokes, size: int = 32, width: float = 1.6) -> np.ndarray:
    """Anti-aliased rasterization: intensity falls off linearly over one pixel."""
    yy, xx = np.mgrid[0:size, 0:size]
    pix = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1).astype(np.float64)
    segs = [_smooth(np.asarray(pts, dtype=np.float64)) for pts in strokes]
    a = np.vstack([p[:-1] for p in segs])
    ab = np.vstack([p[1:] for p in segs]) - a
    L2 = np.maximum((ab**2).sum(axis=1), 1e-12)
    rel = pix[:, None, :] - a[None]
    t = np.clip((rel[..., 0] * ab[:, 0] + rel[..., 1] * ab[:, 1]) / L2, 0.0, 1.0)
    dx = rel[..., 0] - t * ab[:, 0]
    dy = rel[..., 1] - t * ab[:, 1]
    dist = np.sqrt((dx * dx + dy * dy).min(axis=1))
    img = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
    return img.reshape(size, size)


def generate_glyphs(num_classes: int, samples_per_class: int, seed: int, image_size: int = 32,
                    jitter: float = 1.0, width: float = 1.6) -> GlyphDataset:
    """Synthetic alphabet: one random stroke skeleton per class, jittered renderings per sample.

    Each class draws from its own random stream, so adding classes never
    changes existing ones.
    """
    if num_classes < 1 or samples_per_class < 1:
        raise ValidationError("num_classes and samples_per_class must be >= 1")
    if image_size < 8:
        raise ValidationError("image_size must be >= 8")
    if jitter < 0:
        raise ValidationError("jitter must be >= 0")
    images = []
    for c in range(num_classes):
        g = rngmod.stream(seed, "data", c)
        skel = _class_skeleton(g, image_size)
        imgs = np.empty((samples_per_class, image_size, image_size), dtype=np.float32)
        for s in range(samples_per_class):
            shaken = [pts + jitter * g.standard_normal(pts.shape) for pts in skel]
            imgs[s] = render_strokes(shaken, image_size, width)
        images.append(imgs)
    splits = assign_splits(num_classes, rngmod.stream(seed, "data", -1 % (2**32)))
    meta = {"source": "glyphs", "seed": seed, "jitter": jitter, "width": width}
    return GlyphDataset([f"glyph{c:04d}" for c in range(num_classes)], images, splits, image_size, meta)


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    shift_std: float = 2.5
    rot_std: float = math.pi / 12
    enabled: bool = True

    def __post_init__(self):
        if self.shift_std < 0 or self.rot_std < 0:
            raise ValidationError("augmentation standard deviations must be >= 0")


NO_AUGMENT = AugmentSpec(enabled=False)


def affine(image: np.ndarray, shift=(0.0, 0.0), angle: float = 0.0) -> np.ndarray:
    """Rotate about the centre by ``angle`` then shift by ``(dy, dx)``; bilinear, zero fill."""
    img = np.asarray(image)
    h, w = img.shape
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    cs, sn = math.cos(angle), math.sin(angle)
    R = np.array([[cs, -sn], [sn, cs]])
    # output o samples input at R^T (o - c - s) + c
    M = R.T
    offset = c - M @ (c + np.asarray(shift, dtype=np.float64))
    out = ndimage.affine_transform(img.astype(np.float64), M, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def draw_transform(spec: AugmentSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    shift = spec.shift_std * rng.standard_normal(2)
    angle = spec.rot_std * float(rng.standard_normal())
    return shift, angle


def augment(image, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random shift ``N(0, shift_std^2)`` per axis and rotation ``N(0, rot_std^2)``."""
    img = np.asarray(image)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValidationError("augment expects a square grayscale image")
    if not spec.enabled:
        return img.copy()
    shift, angle = draw_transform(spec, rng)
    return affine(img, shift, angle)


# --------------------------------------------------------------------------
# episodes


def sample_episode(ds: GlyphDataset, split: str, m: int, n: int, b: int,
                   augment_spec: AugmentSpec = NO_AUGMENT, rng: np.random.Generator | None = None) -> EpisodeSpec:
    """Draw an m-way n-shot episode with ``b`` queries from the remaining samples.

    Supports are listed class by class; labels are relative (order of first
    appearance). Queries are drawn without replacement from the pooled
    non-support samples of the chosen classes.
    """
    if rng is None:
        raise ValidationError("sample_episode needs an explicit random generator")
    if m < 1 or n < 1 or b < 1:
        raise ValidationError("m, n and b must be >= 1")
    pool = ds.classes_in(split)
    if pool.size < m:
        raise ValidationError(f"split {split!r} has {pool.size} classes, {m} needed")
    need = n + math.ceil(b / m)
    counts = ds.samples_per_class()
    chosen = rng.choice(pool, size=m, replace=False)
    offsets = ds.sample_offsets()
    sup_img, sup_lab, sup_id = [], [], []
    rest = []
    for rel, c in enumerate(chosen):
        if counts[c] < need:
            raise ValidationError(f"class {ds.class_ids[c]} has {counts[c]} samples, {need} needed")
        perm = rng.permutation(counts[c])
        for s in perm[:n]:
            sup_img.append(ds.images[c][s])
            sup_lab.append(rel)
            sup_id.append(offsets[c] + s)
        rest.extend((rel, c, s) for s in perm[n:])
    pick = rng.choice(len(rest), size=b, replace=False)
    q_img, q_lab, q_id = [], [], []
    for k in pick:
        rel, c, s = rest[k]
        q_img.append(ds.images[c][s])
        q_lab.append(rel)
        q_id.append(offsets[c] + s)
    sup_img = np.stack(sup_img)
    q_img = np.stack(q_img)
    if augment_spec.enabled:
        sup_img = np.stack([augment(x, augment_spec, rng) for x in sup_img])
        q_img = np.stack([augment(x, augment_spec, rng) for x in q_img])
    return EpisodeSpec(
        m=m, n=n, b=b,
        support_images=sup_img, support_labels=np.asarray(sup_lab, dtype=np.int64),
        query_images=q_img, query_labels=np.asarray(q_lab, dtype=np.int64),
        support_ids=np.asarray(sup_id, dtype=np.int64), query_ids=np.asarray(q_id, dtype=np.int64),
        classes=np.asarray(chosen, dtype=np.int64),
    )


# --------------------------------------------------------------------------
# PGM directory layout


def read_pgm(path) -> np.ndarray:
    """Parse an 8-bit binary (P5) PGM into a float array in ``[0, 1]``."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: malformed PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValidationError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ValidationError(f"{path}: unsupported PGM geometry or depth")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ValidationError(f"{path}: truncated PGM pixel data")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / maxval).astype(np.float32)


def write_pgm(path, image: np.ndarray):
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def load_image_directory(path) -> GlyphDataset:
    """Load ``path/<class>/*.pgm``; splits come from ``manifest.tsv`` or a name hash."""
    if not os.path.isdir(path):
        raise ValidationError(f"{path} is not a directory")
    classes = sorted(e for e in os.listdir(path) if os.path.isdir(os.path.join(path, e)))
    if not classes:
        raise ValidationError(f"{path}: empty dataset (no class folders)")
    manifest = {}
    mpath = os.path.join(path, MANIFEST)
    if os.path.exists(mpath):
        with open(mpath) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or parts[1] not in SPLITS:
                    raise ValidationError(f"{mpath}:{ln}: expected 'class_id<TAB>split'")
                manifest[parts[0]] = parts[1]
    images, splits, size = [], [], None
    for c in classes:
        cdir = os.path.join(path, c)
        files = sorted(f for f in os.listdir(cdir) if f.lower().endswith(".pgm"))
        if not files:
            raise ValidationError(f"{cdir}: class folder holds no PGM images")
        arr = [read_pgm(os.path.join(cdir, f)) for f in files]
        for a in arr:
            if a.shape[0] != a.shape[1] or (size is not None and a.shape[0] != size):
                raise ValidationError(f"{cdir}: non-uniform image sizes")
            size = a.shape[0]
        images.append(np.stack(arr))
        splits.append(manifest.get(c, hash_split(c)))
    return GlyphDataset(classes, images, splits, size, {"source": os.path.abspath(path)})


def export(ds: GlyphDataset, path):
    """Write ``path/<class>/NNNN.pgm`` plus ``manifest.tsv``."""
    os.makedirs(path, exist_ok=True)
    for cid, imgs in zip(ds.class_ids, ds.images):
        cdir = os.path.join(path, cid)
        os.makedirs(cdir, exist_ok=True)
        for s, img in enumerate(imgs):
            write_pgm(os.path.join(cdir, f"{s:04d}.pgm"), img)
    with open(os.path.join(path, MANIFEST), "w") as fh:
        for cid, sp in zip(ds.class_ids, ds.splits):
            fh.write(f"{cid}\t{sp}\n")
