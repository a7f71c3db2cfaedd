"""Procedural audio-visual scenes and continual-learning task schedules.

A sample is a short "video": flat-colored geometric objects (one archetype
per class: a shape and a hue) drifting over a low-contrast textured
background.  Each frame carries an audio vector built from the prototypes of
the *sounding* classes plus Gaussian noise; silent distractor objects are
drawn but never masked.

Schedules cover four protocols:

``til`` / ``cil``
    disjoint class partitions ``[base, inc, inc, ...]`` of a seeded class
    permutation; single-source samples, first frame supervised.
``dil``
    one fixed class, per-task shifts of palette, texture family and audio
    noise.
``tfcl``
    multi-source, fully supervised, label-free stream.  Each task introduces
    ``base`` (first task) or ``increment`` video identities; a fraction
    ``blur`` of a task's training stream is drawn from neighboring tasks.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .archive import load_archive, save_archive
from .nn import ConfigurationError

SHAPES = ("square", "disc", "triangle", "cross", "diamond", "hbar", "ring")
OBJECT_RADIUS = 3
TEXTURE_FAMILIES = ("grating", "checker", "blobs")
_SPLIT_CODE = {"train": 0, "test": 1}


@dataclass(frozen=True)
class Distribution:
    """Appearance/audio conditions of one task (the DIL shift axes)."""

    hue_shift: float = 0.0
    texture: int = 0
    texture_seed: int = 0
    audio_sigma: float = 0.3


@dataclass
class Sample:
    frames: np.ndarray       # (T, H, W, 3) in [0, 1]
    audio: np.ndarray        # (T, d_raw)
    masks: np.ndarray        # (T, H, W) uint8
    supervised: np.ndarray   # (T,) bool
    class_label: int | None
    source_count: int
    sounding: tuple[int, ...] = ()
    objects: list[dict] = field(default_factory=list)


# -- class archetypes ----------------------------------------------------------
def class_shape(c: int) -> str:
    return SHAPES[c % len(SHAPES)]


def class_color(c: int, n_classes: int, hue_shift: float = 0.0) -> np.ndarray:
    hue = ((c * 0.61803398875) + hue_shift) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95))


def audio_prototypes(n_classes: int, d_raw: int, seed: int) -> np.ndarray:
    """Fixed per-class audio signatures, ``(n_classes, d_raw)``."""
    return np.random.default_rng([seed, n_classes, d_raw]).normal(size=(n_classes, d_raw))


def rasterize(shape: str, cy: int, cx: int, height: int, width: int,
              radius: int = OBJECT_RADIUS) -> np.ndarray:
    """Boolean footprint of a shape centered on pixel ``(cy, cx)``."""
    yy, xx = np.mgrid[0:height, 0:width]
    dy, dx = yy - cy, xx - cx
    r = radius
    if shape == "square":
        m = (np.abs(dy) <= r - 1) & (np.abs(dx) <= r - 1)
    elif shape == "disc":
        m = dy * dy + dx * dx <= r * r
    elif shape == "triangle":
        m = (dy >= -r) & (dy <= r - 1) & (2 * np.abs(dx) <= dy + r)
    elif shape == "cross":
        m = ((np.abs(dx) <= 1) & (np.abs(dy) <= r)) | ((np.abs(dy) <= 1) & (np.abs(dx) <= r))
    elif shape == "diamond":
        m = np.abs(dy) + np.abs(dx) <= r
    elif shape == "hbar":
        m = (np.abs(dx) <= r) & (np.abs(dy) <= 1)
    elif shape == "ring":
        d2 = dy * dy + dx * dx
        m = (d2 <= r * r) & (d2 >= (r - 1.5) ** 2)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return m


def background(height: int, width: int, dist: Distribution, rng: np.random.Generator) -> np.ndarray:
    trng = np.random.default_rng([dist.texture_seed, dist.texture])
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    family = TEXTURE_FAMILIES[dist.texture % len(TEXTURE_FAMILIES)]
    if family == "grating":
        theta = trng.uniform(0, np.pi)
        freq = trng.uniform(0.3, 0.8)
        phase = rng.uniform(0, 2 * np.pi)
        base = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    elif family == "checker":
        size = int(trng.integers(2, 5))
        oy, ox = rng.integers(0, size, size=2)
        base = 2.0 * (((yy + oy) // size + (xx + ox) // size) % 2) - 1.0
    else:
        coarse = rng.normal(size=(height // 4 + 1, width // 4 + 1))
        base = np.kron(coarse, np.ones((4, 4)))[:height, :width]
        base = base / (np.abs(base).max() + 1e-12)
    tint = 0.4 + 0.1 * trng.uniform(-1, 1, size=3)
    gray = 0.4 + 0.12 * base
    img = gray[..., None] * np.ones(3) + (tint - 0.4)
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _place(n: int, height: int, width: int, rng: np.random.Generator, radius: int) -> list[tuple[int, int]]:
    if min(height, width) < 2 * radius + 1:
        raise ConfigurationError(f"{height}x{width} frames are too small for radius-{radius} objects")
    hi = np.array([height, width]) - radius
    for _ in range(200):
        centers = [tuple(int(v) for v in rng.integers(radius, hi)) for _ in range(n)]
        ok = all(
            max(abs(a[0] - b[0]), abs(a[1] - b[1])) > 2 * radius + 1
            for i, a in enumerate(centers) for b in centers[i + 1:]
        )
        if ok:
            return centers
    return []


def generate_sample(
    classes: int | Sequence[int],
    dist: Distribution,
    seed: int | Sequence[int],
    *,
    n_classes: int,
    distractor_pool: Sequence[int] = (),
    max_distractors: int = 2,
    height: int = 16,
    width: int = 16,
    n_frames: int = 3,
    d_raw: int = 16,
    style: str = "ss",
    prototype_seed: int = 1234,
    with_label: bool | None = None,
) -> Sample:
    """Render one scene.

    ``classes`` are the sounding classes (one for single-source scenes).
    Distractors are drawn from ``distractor_pool`` minus the sounding set.
    ``style="ss"`` supervises only the first frame; ``"ms"`` supervises every
    frame and never carries a class label.
    """
    rng = np.random.default_rng(seed)
    sounding = (int(classes),) if np.isscalar(classes) else tuple(int(c) for c in classes)
    if not sounding or len(set(sounding)) != len(sounding):
        raise ValueError(f"need distinct sounding classes, got {sounding}")
    if any(not 0 <= c < n_classes for c in sounding):
        raise ValueError(f"sounding classes {sounding} outside 0..{n_classes - 1}")
    pool = [c for c in distractor_pool if c not in sounding]
    n_distract = int(rng.integers(0, min(max_distractors, len(pool), 3 - len(sounding)) + 1)) if pool else 0
    distractors = [int(c) for c in rng.choice(pool, size=n_distract, replace=False)] if n_distract else []

    r = OBJECT_RADIUS
    centers = []
    while not centers:
        centers = _place(len(sounding) + len(distractors), height, width, rng, r)
        if not centers:
            if not distractors:
                raise ConfigurationError(
                    f"cannot fit {len(sounding)} sounding objects into {height}x{width} frames"
                )
            distractors = distractors[:-1]
    obj_classes = list(sounding) + distractors
    velocity = rng.integers(-1, 2, size=(len(obj_classes), 2))
    hi_y, hi_x = height - 1 - r, width - 1 - r

    frames = np.empty((n_frames, height, width, 3))
    masks = np.zeros((n_frames, height, width), dtype=np.uint8)
    tracks = [[] for _ in obj_classes]
    for t in range(n_frames):
        img = background(height, width, dist, rng)
        # distractors first so sounding objects stay fully visible
        order = list(range(len(sounding), len(obj_classes))) + list(range(len(sounding)))
        for i in order:
            cy = int(np.clip(centers[i][0] + t * velocity[i][0], r, hi_y))
            cx = int(np.clip(centers[i][1] + t * velocity[i][1], r, hi_x))
            tracks[i].append((cy, cx))
            fp = rasterize(class_shape(obj_classes[i]), cy, cx, height, width)
            img[fp] = class_color(obj_classes[i], n_classes, dist.hue_shift)
            if i < len(sounding):
                masks[t][fp] = 1
        frames[t] = img

    protos = audio_prototypes(n_classes, d_raw, prototype_seed)
    signal = protos[list(sounding)].sum(axis=0)
    audio = np.tile(signal, (n_frames, 1))
    if dist.audio_sigma > 0:
        audio = audio + rng.normal(0.0, dist.audio_sigma, size=audio.shape)

    if style == "ss":
        supervised = np.zeros(n_frames, dtype=bool)
        supervised[0] = True
    elif style == "ms":
        supervised = np.ones(n_frames, dtype=bool)
    else:
        raise ValueError(f"unknown style {style!r}")
    label_ok = (style == "ss") if with_label is None else with_label
    label = sounding[0] if label_ok and len(sounding) == 1 else None
    objects = [
        {"class": c, "shape": class_shape(c), "sounding": i < len(sounding), "track": tracks[i]}
        for i, c in enumerate(obj_classes)
    ]
    return Sample(frames, audio, masks, supervised, label, len(sounding), sounding, objects)


# -- schedules -----------------------------------------------------------------
@dataclass(frozen=True)
class Identity:
    """A TF-CL 'video': fixed sounding classes under fixed conditions."""

    sounding: tuple[int, ...]
    dist: Distribution


@dataclass
class TaskSpec:
    task_id: int
    classes: tuple[int, ...]
    n_train: int
    n_test: int
    dist: Distribution
    identities: tuple[Identity, ...] = ()


@dataclass
class ProtocolSchedule:
    protocol: str
    tasks: list[TaskSpec]
    n_classes: int
    split: tuple[int, int]
    blur: float = 0.0
    n_frames: int = 3
    height: int = 16
    width: int = 16
    d_raw: int = 16
    prototype_seed: int = 1234
    seed: int = 0

    @property
    def task_id_at_test(self) -> bool:
        return self.protocol == "til"

    @property
    def style(self) -> str:
        return "ms" if self.protocol == "tfcl" else "ss"

    def seen_classes(self, k: int) -> tuple[int, ...]:
        """Cumulative class set up to and including task ``k``, in arrival order."""
        out: list[int] = []
        for task in self.tasks[: k + 1]:
            out.extend(c for c in task.classes if c not in out)
        return tuple(out)

    def samples(self, k: int, split: str = "train") -> list[Sample]:
        """Deterministically materialize the train or test pool of task ``k``."""
        task = self.tasks[k]
        n = task.n_train if split == "train" else task.n_test
        return [self._sample(task, split, i) for i in range(n)]

    def _sample(self, task: TaskSpec, split: str, i: int) -> Sample:
        key = [self.seed, task.task_id, _SPLIT_CODE[split], i]
        pick = np.random.default_rng(key + [7])
        common = dict(n_classes=self.n_classes, height=self.height, width=self.width,
                      n_frames=self.n_frames, d_raw=self.d_raw, prototype_seed=self.prototype_seed)
        if self.protocol == "tfcl":
            source = task
            if split == "train" and self.blur > 0 and pick.random() < self.blur:
                neighbors = [j for j in (task.task_id - 1, task.task_id + 1) if 0 <= j < len(self.tasks)]
                if neighbors:
                    source = self.tasks[neighbors[int(pick.integers(len(neighbors)))]]
            ident = source.identities[int(pick.integers(len(source.identities)))]
            return generate_sample(ident.sounding, ident.dist, key, style="ms",
                                   distractor_pool=range(self.n_classes), max_distractors=1, **common)
        if self.protocol == "dil":
            pool = [c for c in range(self.n_classes) if c not in task.classes]
            return generate_sample(task.classes[0], task.dist, key, style="ss",
                                   distractor_pool=pool, **common)
        cls = task.classes[int(pick.integers(len(task.classes)))]
        pool = task.classes if len(task.classes) > 1 else range(self.n_classes)
        return generate_sample(cls, task.dist, key, style="ss", distractor_pool=pool, **common)


def split_sizes(n_classes: int, base: int, increment: int) -> list[int]:
    if base < 1 or increment < 1 or base > n_classes or (n_classes - base) % increment:
        raise ConfigurationError(
            f"split {base}-{increment} does not partition {n_classes} classes"
        )
    return [base] + [increment] * ((n_classes - base) // increment)


def build_schedule(
    protocol: str,
    n_classes: int,
    split: tuple[int, int],
    samples: tuple[int, int] = (24, 8),
    seed: int = 0,
    *,
    n_tasks: int | None = None,
    blur: float = 0.25,
    audio_sigma: float = 0.3,
    n_frames: int = 3,
    height: int = 16,
    width: int = 16,
    d_raw: int = 16,
    prototype_seed: int = 1234,
) -> ProtocolSchedule:
    base, inc = split
    n_train, n_test = samples
    rng = np.random.default_rng([seed, 99])
    base_dist = Distribution(audio_sigma=audio_sigma, texture_seed=seed)
    tasks: list[TaskSpec] = []
    if protocol in ("til", "cil"):
        sizes = split_sizes(n_classes, base, inc)
        order = [int(c) for c in rng.permutation(n_classes)]
        start = 0
        for k, size in enumerate(sizes):
            cls = tuple(order[start:start + size])
            start += size
            tasks.append(TaskSpec(k, cls, n_train, n_test, base_dist))
        blur = 0.0
    elif protocol == "dil":
        n = n_tasks or 3
        cls = (int(rng.integers(n_classes)),)
        for k in range(n):
            dist = Distribution(
                hue_shift=0.13 * k,
                texture=k % len(TEXTURE_FAMILIES),
                texture_seed=seed + 17 * k,
                audio_sigma=audio_sigma * (1.0 + 0.5 * k),
            )
            tasks.append(TaskSpec(k, cls, n_train, n_test, dist))
        blur = 0.0
    elif protocol == "tfcl":
        if n_tasks is None:
            raise ConfigurationError("tfcl needs n_tasks")
        if not 0.0 <= blur <= 1.0:
            raise ConfigurationError(f"blur must lie in [0, 1], got {blur}")
        if base < 1 or inc < 1 or n_classes < 2:
            raise ConfigurationError("tfcl needs base, increment >= 1 and at least 2 classes")
        for k in range(n_tasks):
            count = base if k == 0 else inc
            idents = []
            for _ in range(count):
                n_src = 1 if rng.random() < 0.25 else 2
                sounding = tuple(int(c) for c in rng.choice(n_classes, size=n_src, replace=False))
                dist = Distribution(
                    hue_shift=float(rng.uniform(-0.05, 0.05)),
                    texture=int(rng.integers(len(TEXTURE_FAMILIES))),
                    texture_seed=int(rng.integers(1 << 30)),
                    audio_sigma=audio_sigma,
                )
                idents.append(Identity(sounding, dist))
            tasks.append(TaskSpec(k, (), n_train, n_test, base_dist, tuple(idents)))
    else:
        raise ConfigurationError(f"unknown protocol {protocol!r}")
    return ProtocolSchedule(protocol, tasks, n_classes, (base, inc), blur, n_frames,
                            height, width, d_raw, prototype_seed, seed)


def schedule_from_config(cfg, seed: int) -> ProtocolSchedule:
    d, m = cfg.data, cfg.model
    return build_schedule(
        cfg.protocol, d.n_classes, (d.base, d.increment), (d.n_train, d.n_test), seed,
        n_tasks=d.n_tasks, blur=d.blur, audio_sigma=d.audio_sigma, n_frames=d.n_frames,
        height=m.height, width=m.width, d_raw=m.d_raw, prototype_seed=d.prototype_seed,
    )


def with_blur(schedule: ProtocolSchedule, blur: float) -> ProtocolSchedule:
    return replace(schedule, blur=blur)


def stack_samples(samples: Sequence[Sample]) -> dict[str, np.ndarray]:
    return {
        "frames": np.stack([s.frames for s in samples]),
        "audio": np.stack([s.audio for s in samples]),
        "masks": np.stack([s.masks for s in samples]).astype(np.float64),
        "supervised": np.stack([s.supervised for s in samples]),
    }


# -- dataset dump ----------------------------------------------------------------
def dump_schedule(schedule: ProtocolSchedule, path: str | Path) -> Path:
    """Write every task's train and test pool into one archive.

    Per sample ``i`` of task ``k`` and split ``s`` the body holds
    ``k/s/i/frames``, ``/audio``, ``/masks`` and ``/supervised`` tensors; the
    header manifest lists task composition and per-sample labels.
    """
    tensors: dict[str, np.ndarray] = {}
    manifest = []
    for k, task in enumerate(schedule.tasks):
        entry = {"task_id": task.task_id, "classes": list(task.classes),
                 "identities": [list(i.sounding) for i in task.identities],
                 "train": [], "test": []}
        for split in ("train", "test"):
            for i, s in enumerate(schedule.samples(k, split)):
                prefix = f"{k}/{split}/{i}"
                tensors[f"{prefix}/frames"] = s.frames
                tensors[f"{prefix}/audio"] = s.audio
                tensors[f"{prefix}/masks"] = s.masks.astype(np.float64)
                tensors[f"{prefix}/supervised"] = s.supervised.astype(np.float64)
                entry[split].append({"class_label": s.class_label, "source_count": s.source_count,
                                     "sounding": list(s.sounding)})
        manifest.append(entry)
    meta = {
        "protocol": schedule.protocol, "n_classes": schedule.n_classes,
        "split": list(schedule.split), "blur": schedule.blur, "seed": schedule.seed,
        "dims": {"frames": schedule.n_frames, "height": schedule.height,
                 "width": schedule.width, "d_raw": schedule.d_raw},
        "tasks": manifest,
    }
    return save_archive(path, tensors, meta, kind="dataset")


def load_dump(path: str | Path) -> tuple[dict, dict[int, dict[str, list[Sample]]]]:
    """Inverse of :func:`dump_schedule`: ``(meta, {task: {split: [Sample]}})``."""
    tensors, meta, kind = load_archive(path)
    if kind != "dataset":
        raise ValueError(f"{path} holds a {kind!r} archive, not a dataset")
    pools: dict[int, dict[str, list[Sample]]] = {}
    for k, entry in enumerate(meta["tasks"]):
        pools[k] = {}
        for split in ("train", "test"):
            out = []
            for i, info in enumerate(entry[split]):
                prefix = f"{k}/{split}/{i}"
                out.append(Sample(
                    frames=tensors[f"{prefix}/frames"],
                    audio=tensors[f"{prefix}/audio"],
                    masks=tensors[f"{prefix}/masks"].astype(np.uint8),
                    supervised=tensors[f"{prefix}/supervised"].astype(bool),
                    class_label=info["class_label"],
                    source_count=info["source_count"],
                    sounding=tuple(info["sounding"]),
                ))
            pools[k][split] = out
    return meta, pools
