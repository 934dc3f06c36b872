"""Synthetic scenes, two-view augmentation and proposal sampling.

A :class:`Scene` stands in for a raw image: a handful of instances, each with a
box in the unit square and an appearance vector on the unit sphere. Two
independently augmented views of the same scene give instance-level
correspondence for free, which is the self-supervision signal the contrastive
head is trained on.

Everything here is a pure function of its inputs and an integer seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .boxes import Box, cxcywh_to_xywh
from .errors import ArgumentError, ConfigError

EXTENT = (0.0, 1.0)
_EPS = 1e-12


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


@dataclass(frozen=True)
class Instance:
    id: int
    box: Box  # (cx, cy, w, h)
    appearance: np.ndarray
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.box[2] > 0 and self.box[3] > 0):
            raise ArgumentError(f"instance {self.id}: non-positive box size {self.box[2:]}")


@dataclass(frozen=True)
class Scene:
    seed: int
    instances: tuple[Instance, ...]

    def __post_init__(self):
        if len(self.instances) < 1:
            raise ArgumentError("a scene needs at least one instance")
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ArgumentError("instance ids must be unique")
        dims = {inst.appearance.shape for inst in self.instances}
        if len(dims) != 1:
            raise ArgumentError("appearance dimension must be constant within a scene")
        for inst in self.instances:
            if not _inside(inst.box):
                raise ArgumentError(f"instance {inst.id}: box {inst.box} leaves the unit square")

    @property
    def d_raw(self) -> int:
        return int(self.instances[0].appearance.shape[0])

    def instance(self, instance_id: int) -> Instance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)


def _inside(box: Box, tol: float = 1e-9) -> bool:
    cx, cy, w, h = box
    return (cx - w / 2 >= -tol and cx + w / 2 <= 1 + tol
            and cy - h / 2 >= -tol and cy + h / 2 <= 1 + tol)


def generate_scene(seed: int, n_instances: int, d_raw: int,
                   size_range: tuple[float, float] = (0.04, 0.12),
                   max_speed: float = 0.01) -> Scene:
    """Draw ``n_instances`` boxes with unit-norm appearances.

    Appearances are i.i.d. uniform on the sphere in ``d_raw`` dimensions;
    velocities are uniform in ``[-max_speed, max_speed]`` per axis.
    """
    if n_instances < 1:
        raise ArgumentError(f"n_instances must be >= 1, got {n_instances}")
    if d_raw < 2:
        raise ArgumentError(f"d_raw must be >= 2, got {d_raw}")
    lo, hi = size_range
    if not (0 < lo <= hi < 1):
        raise ArgumentError(f"bad size range {size_range}")
    rng = _rng(seed, 0x5CE7E)
    instances = []
    for k in range(n_instances):
        w, h = rng.uniform(lo, hi, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        vx, vy = rng.uniform(-max_speed, max_speed, size=2)
        a = rng.standard_normal(d_raw)
        a /= np.linalg.norm(a)
        instances.append(Instance(k, (float(cx), float(cy), float(w), float(h)), a,
                                  (float(vx), float(vy))))
    return Scene(seed, tuple(instances))


def _reflect(pos: float, vel: float, steps: int, lo: float, hi: float) -> tuple[float, float]:
    target = pos + vel * steps
    if lo <= target <= hi:
        return target, vel
    span = hi - lo
    if span <= _EPS:
        return pos, vel
    u = target - lo
    bounces = math.floor(u / span)
    u = u % (2 * span)
    new = lo + (2 * span - u if u > span else u)
    return min(max(new, lo), hi), (-vel if bounces % 2 else vel)


def advance_scene(scene: Scene, steps: int) -> Scene:
    """Move every instance ``steps`` frames along its velocity, bouncing off the edges."""
    if steps < 0:
        raise ArgumentError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return scene
    moved = []
    for inst in scene.instances:
        cx, cy, w, h = inst.box
        vx, vy = inst.velocity
        cx, vx = _reflect(cx, vx, steps, w / 2, 1 - w / 2)
        cy, vy = _reflect(cy, vy, steps, h / 2, 1 - h / 2)
        moved.append(replace(inst, box=(cx, cy, w, h), velocity=(vx, vy)))
    return Scene(scene.seed, tuple(moved))


# ---------------------------------------------------------------------------
# augmentation


def _check_range(name, rng_, lo_bound=None, positive=False):
    lo, hi = rng_
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name}: invalid range {rng_}", key=name)
    if positive and lo <= 0:
        raise ConfigError(f"{name}: range must be strictly positive, got {rng_}", key=name)
    if lo_bound is not None and lo < lo_bound:
        raise ConfigError(f"{name}: lower bound below {lo_bound}", key=name)


@dataclass(frozen=True)
class AugmentationConfig:
    """Ranges for the geometric and photometric augmentations of one view.

    Geometric transforms act about the centre of the unit square. ``crop`` is
    the kept fraction of each side; ``jitter`` is the resize factor (large-scale
    jittering uses a wide range here). Photometric magnitudes: ``noise`` is the
    Gaussian stddev; ``brightness`` and ``blur`` are upper bounds, each proposal
    draws its own magnitude uniformly in ``[0, bound]``.
    """

    rotation: float = 0.0
    scale: tuple[float, float] = (1.0, 1.0)
    shear: float = 0.0
    translate: float = 0.0
    crop: tuple[float, float] = (1.0, 1.0)
    flip_prob: float = 0.0
    jitter: tuple[float, float] = (1.0, 1.0)
    mixup_prob: float = 0.0
    mixup_weight: tuple[float, float] = (0.6, 0.9)
    noise: float = 0.0
    brightness: float = 0.0
    blur: float = 0.0
    visibility: float = 0.25

    def __post_init__(self):
        for name in ("rotation", "shear", "translate", "noise", "brightness", "blur"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {v}", key=name)
        _check_range("scale", self.scale, positive=True)
        _check_range("jitter", self.jitter, positive=True)
        _check_range("crop", self.crop, positive=True)
        if self.crop[1] > 1.0:
            raise ConfigError("crop fraction cannot exceed 1", key="crop")
        for name in ("flip_prob", "mixup_prob", "visibility"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}", key=name)
        lo, hi = self.mixup_weight
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"mixup_weight must lie in (0, 1), got {self.mixup_weight}",
                              key="mixup_weight")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls()

    @classmethod
    def basic(cls, noise: float = 0.1, brightness: float = 1.0, blur: float = 0.3
              ) -> "AugmentationConfig":
        """Flip, mild resize, color jitter and random crop."""
        return cls(flip_prob=0.5, jitter=(0.8, 1.25), crop=(0.6, 1.0),
                   noise=noise, brightness=brightness, blur=blur)

    @classmethod
    def strong(cls, affine: bool = True, mixup: bool = True, lsj: bool = True,
               **photometric) -> "AugmentationConfig":
        """Basic augmentation plus any subset of random affine, MixUp and large-scale jitter."""
        cfg = cls.basic(**photometric)
        extra = {}
        if affine:
            extra.update(rotation=0.3, scale=(0.8, 1.2), shear=0.1, translate=0.1)
        if mixup:
            extra.update(mixup_prob=0.5)
        if lsj:
            extra.update(jitter=(0.3, 2.0))
        return replace(cfg, **extra)

    @classmethod
    def full(cls, **photometric) -> "AugmentationConfig":
        return cls.strong(True, True, True, **photometric)


@dataclass(frozen=True)
class AffineTransform:
    """``x -> A x + t`` stored as a 2x3 matrix ``[A | t]``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3):
            raise ArgumentError(f"affine matrix must be 2x3, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def about_center(cls, linear: np.ndarray, shift=(0.0, 0.0), center=(0.5, 0.5)):
        c = np.asarray(center, dtype=float)
        t = c - linear @ c + np.asarray(shift, dtype=float)
        return cls(np.hstack([linear, t[:, None]]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def is_invertible(self) -> bool:
        return abs(self.det) > 1e-9

    def then(self, other: "AffineTransform") -> "AffineTransform":
        """Composition applying ``self`` first, then ``other``."""
        a = other.linear @ self.linear
        t = other.linear @ self.offset + other.offset
        return AffineTransform(np.hstack([a, t[:, None]]))

    def inverse(self) -> "AffineTransform":
        if not self.is_invertible():
            raise ArgumentError("affine transform is singular")
        a = np.linalg.inv(self.linear)
        return AffineTransform(np.hstack([a, (-a @ self.offset)[:, None]]))

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.linear.T + self.offset


def sample_affine(config: AugmentationConfig, seed: int) -> AffineTransform:
    """Random rotation/scale/shear/translation about the image centre.

    The linear part is ``R(angle) @ [[s, k], [0, s]]`` so the sampled angle is
    recoverable as ``atan2(A[1,0], A[0,0])``.
    """
    if config.scale[0] <= 0:
        raise ConfigError("scale range must be strictly positive", key="scale")
    rng = _rng(seed, 0xAFF1)
    angle = rng.uniform(-config.rotation, config.rotation)
    s = rng.uniform(*config.scale)
    k = rng.uniform(-config.shear, config.shear)
    tx, ty = rng.uniform(-config.translate, config.translate, size=2)
    c, sn = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -sn], [sn, c]])
    lin = rot @ np.array([[s, k * s], [0.0, s]])
    t =AffineTransform.about_center(lin, (tx, ty))
    if not t.is_invertible():
        raise ConfigError("sampled a singular affine transform")
    return t


def apply_affine(t: AffineTransform, box: Box) -> Box:
    """Axis-aligned hull of the transformed corners of a ``cxcywh`` box."""
    cx, cy, w, h = box
    corners = np.array([[cx - w / 2, cy - h / 2], [cx + w / 2, cy - h / 2],
                        [cx - w / 2, cy + h / 2], [cx + w / 2, cy + h / 2]])
    p = t.apply_points(corners)
    x0, y0 = p.min(axis=0)
    x1, y1 = p.max(axis=0)
    return (float((x0 + x1) / 2), float((y0 + y1) / 2), float(x1 - x0), float(y1 - y0))


PHOTOMETRIC_KINDS = ("noise", "brightness", "blur")


def photometric_perturb(feature: np.ndarray, kind: str, magnitude: float, seed: int = 0
                        ) -> np.ndarray:
    """Appearance-vector analogue of an image corruption.

    ``noise`` adds N(0, magnitude^2) per coordinate, ``brightness`` adds
    ``magnitude`` to every coordinate, ``blur`` mixes each coordinate with its
    two (circular) neighbours using the kernel ``[a, 1-2a, a]`` with
    ``a = magnitude / (1 + 2 magnitude)``.
    """
    if not magnitude >= 0:
        raise ArgumentError(f"magnitude must be >= 0, got {magnitude}")
    x = np.array(feature, dtype=float)
    if magnitude == 0:
        return x
    if kind == "noise":
        return x + _rng(seed, 0x401E).normal(0.0, magnitude, size=x.shape)
    if kind == "brightness":
        return x + magnitude
    if kind in ("blur", "blur-proxy"):
        a = magnitude / (1.0 + 2.0 * magnitude)
        return (1 - 2 * a) * x + a * (np.roll(x, 1) + np.roll(x, -1))
    raise ArgumentError(f"unknown photometric kind {kind!r}")


def perturb_appearance(features: np.ndarray, noise: float, brightness: float, blur: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Row-wise blur, brightness and noise; blur and brightness magnitudes are drawn per row.

    Row ``i`` gets the same result as chaining :func:`photometric_perturb` with
    kinds blur, brightness, noise at its drawn magnitudes.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    n = x.shape[0]
    b = rng.uniform(0.0, blur, size=n) if blur > 0 else np.zeros(n)
    br = rng.uniform(0.0, brightness, size=n) if brightness > 0 else np.zeros(n)
    a = (b / (1.0 + 2.0 * b))[:, None]
    x = (1 - 2 * a) * x + a * (np.roll(x, 1, axis=1) + np.roll(x, -1, axis=1))
    x = x + br[:, None]
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return x


# ---------------------------------------------------------------------------
# views and proposals


@dataclass(frozen=True)
class Proposal:
    instance_id: int
    view_id: int
    box: Box
    raw_feature: np.ndarray
    mix_weight: float = 1.0
    mix_partner: int | None = None


@dataclass(frozen=True)
class ViewPair:
    view1: tuple[Proposal, ...]
    view2: tuple[Proposal, ...]
    correspondence: dict[int, int] = field(default_factory=dict)
    transforms: tuple[AffineTransform, AffineTransform] | None = None


def _sample_view_transform(config: AugmentationConfig, rng: np.random.Generator
                           ) -> AffineTransform:
    t = sample_affine(config, int(rng.integers(0, 2**31)))
    s = rng.uniform(*config.jitter)
    t = t.then(AffineTransform.about_center(np.eye(2) * s))
    if rng.random() < config.flip_prob:
        t = t.then(AffineTransform(np.array([[-1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])))
    f = rng.uniform(*config.crop)
    x0, y0 = rng.uniform(0.0, 1.0 - f, size=2)
    crop = AffineTransform(np.array([[1 / f, 0.0, -x0 / f], [0.0, 1 / f, -y0 / f]]))
    return t.then(crop)


def _transform_boxes(t: AffineTransform, boxes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`apply_affine` over an ``N x 4`` cxcywh array."""
    cx, cy, w, h = boxes.T
    xs = np.stack([cx - w / 2, cx + w / 2, cx - w / 2, cx + w / 2], axis=1)
    ys = np.stack([cy - h / 2, cy - h / 2, cy + h / 2, cy + h / 2], axis=1)
    a, o = t.linear, t.offset
    px = a[0, 0] * xs + a[0, 1] * ys + o[0]
    py = a[1, 0] * xs + a[1, 1] * ys + o[1]
    x0, x1 = px.min(axis=1), px.max(axis=1)
    y0, y1 = py.min(axis=1), py.max(axis=1)
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=1)


def _clip_visible(boxes: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip to the unit square; ``keep`` marks boxes retaining >= ``threshold`` of their area."""
    cx, cy, w, h = boxes.T
    x0, x1 = np.maximum(cx - w / 2, 0.0), np.minimum(cx + w / 2, 1.0)
    y0, y1 = np.maximum(cy - h / 2, 0.0), np.minimum(cy + h / 2, 1.0)
    vw, vh = x1 - x0, y1 - y0
    keep = (vw > 0) & (vh > 0) & (vw * vh >= threshold * w * h)
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, vw, vh], axis=1), keep


def _make_view(scene: Scene, config: AugmentationConfig, view_id: int,
               rng: np.random.Generator) -> tuple[list[Proposal], AffineTransform]:
    t = _sample_view_transform(config, rng)
    mixup = rng.random() < config.mixup_prob
    n = len(scene.instances)
    ids = np.array([inst.id for inst in scene.instances])
    base = np.stack([inst.appearance for inst in scene.instances])
    weights = np.ones(n)
    partners: list[int | None] = [None] * n
    if mixup and n > 1:
        # partner index drawn among the other n-1 instances
        pick = rng.integers(0, n - 1, size=n)
        pick = pick + (pick >= np.arange(n))
        weights = rng.uniform(*config.mixup_weight, size=n)
        base = weights[:, None] * base + (1 - weights[:, None]) * base[pick]
        partners = [int(ids[k]) for k in pick]
    feats = perturb_appearance(base, config.noise, config.brightness, config.blur, rng)
    boxes = np.array([inst.box for inst in scene.instances], dtype=float)
    clipped, keep = _clip_visible(_transform_boxes(t, boxes), config.visibility)
    proposals = [Proposal(int(ids[k]), view_id, tuple(float(v) for v in clipped[k]), feats[k],
                          float(weights[k]), partners[k])
                 for k in range(n) if keep[k]]
    return proposals, t


def make_view_pair(scene: Scene, config: AugmentationConfig, seed: int) -> ViewPair:
    """Two independent augmentations of ``scene`` with their instance correspondence."""
    if scene is None or not scene.instances:
        raise ArgumentError("cannot augment an empty scene")
    v1, t1 = _make_view(scene, config, 1, _rng(seed, scene.seed, 1))
    v2, t2 = _make_view(scene, config, 2, _rng(seed, scene.seed, 2))
    where = {p.instance_id: j for j, p in enumerate(v2)}
    corr = {i: where[p.instance_id] for i, p in enumerate(v1) if p.instance_id in where}
    return ViewPair(tuple(v1), tuple(v2), corr, (t1, t2))


@dataclass(frozen=True)
class ProposalBatch:
    """Flat proposal list; ``pair_index[i]`` says which ViewPair proposal ``i`` came from."""

    proposals: tuple[Proposal, ...]
    pair_index: tuple[int, ...]
    cap: int

    def __post_init__(self):
        if len(self.proposals) > self.cap:
            raise ArgumentError("batch exceeds its cap")

    def __len__(self):
        return len(self.proposals)

    def labels(self) -> np.ndarray:
        """Integer instance labels, unique across view pairs."""
        keys: dict[tuple[int, int], int] = {}
        return np.array([keys.setdefault((pi, p.instance_id), len(keys))
                         for pi, p in zip(self.pair_index, self.proposals)], dtype=np.int64)

    def view_ids(self) -> np.ndarray:
        return np.array([p.view_id for p in self.proposals], dtype=np.int64)

    def features(self) -> np.ndarray:
        return np.stack([p.raw_feature for p in self.proposals])

    def has_positive(self) -> bool:
        return _has_positive(self.labels(), self.view_ids())


def _has_positive(labels, views) -> bool:
    seen = set()
    for lab, v in zip(labels.tolist(), views.tolist()):
        if (lab, 3 - v) in seen:
            return True
        seen.add((lab, v))
    return False


def sample_proposals(pairs: Sequence[ViewPair], cap: int, seed: int,
                     max_retries: int = 10) -> ProposalBatch:
    """Uniformly subsample the proposals of ``pairs`` down to ``cap``.

    If the source has any positive pair the result is guaranteed to contain one:
    the draw is retried ``max_retries`` times and then a pair is forced in.
    """
    if cap < 2:
        raise ArgumentError(f"cap must be >= 2, got {cap}")
    flat, owner = [], []
    for pi, pair in enumerate(pairs):
        for p in (*pair.view1, *pair.view2):
            flat.append(p)
            owner.append(pi)
    n = len(flat)
    if n <= cap:
        return ProposalBatch(tuple(flat), tuple(owner), cap)

    full = ProposalBatch(tuple(flat), tuple(owner), n)
    labels, views = full.labels(), full.view_ids()
    rng = _rng(seed, 0xCA9)
    idx = np.sort(rng.choice(n, size=cap, replace=False))
    if _has_positive(labels, views):
        tries = 0
        while not _has_positive(labels[idx], views[idx]) and tries < max_retries:
            idx = np.sort(rng.choice(n, size=cap, replace=False))
            tries += 1
        if not _has_positive(labels[idx], views[idx]):
            pos = [(i, j) for i in range(n) for j in range(i + 1, n)
                   if labels[i] == labels[j] and views[i] != views[j]]
            i, j = pos[int(rng.integers(len(pos)))]
            rest = np.array([k for k in range(n) if k not in (i, j)])
            keep = rng.choice(rest, size=cap - 2, replace=False)
            idx = np.sort(np.concatenate([keep, [i, j]]))
    return ProposalBatch(tuple(flat[k] for k in idx), tuple(owner[k] for k in idx), cap)


# ---------------------------------------------------------------------------
# video sequences for the tracker benchmark


@dataclass(frozen=True)
class SequenceConfig:
    n_instances: int = 10
    n_frames: int = 50
    d_raw: int = 16
    noise: float = 0.0
    brightness: float = 0.0
    blur: float = 0.0
    score_range: tuple[float, float] = (0.75, 1.0)
    size_range: tuple[float, float] = (0.04, 0.12)
    max_speed: float = 0.01


@dataclass
class SimulatedSequence:
    seed: int
    frames: list  # list of (frame, list[Detection])
    gt: "TrajectorySet"
    scene: Scene


def simulate_sequence(seed: int, cfg: SequenceConfig) -> SimulatedSequence:
    """Render a moving scene into per-frame detections plus ground truth.

    Detection boxes are exact ``xywh`` ground-truth boxes; the detection
    embedding slot carries the raw appearance after photometric perturbation.
    Frames are numbered from 1.
    """
    from .metrics import TrajectorySet
    from .tracker import Detection

    scene0 = generate_scene(seed, cfg.n_instances, cfg.d_raw, cfg.size_range, cfg.max_speed)
    rng = _rng(seed, 0x5E9)
    frames, gt = [], {inst.id + 1: [] for inst in scene0.instances}
    scene = scene0
    for t in range(1, cfg.n_frames + 1):
        if t > 1:
            scene = advance_scene(scene, 1)
        scores = rng.uniform(*cfg.score_range, size=len(scene.instances))
        feats = perturb_appearance(np.stack([inst.appearance for inst in scene.instances]),
                                   cfg.noise, cfg.brightness, cfg.blur, rng)
        dets = []
        for inst, score, feat in zip(scene.instances, scores, feats):
            box = cxcywh_to_xywh(inst.box)
            dets.append(Detection(t, box, float(score), feat))
            gt[inst.id + 1].append((t, box))
        frames.append((t, dets))
    return SimulatedSequence(seed, frames, TrajectorySet(gt), scene0)


# ---------------------------------------------------------------------------
# line-delimited serialization
#
# One JSON object per line. Scene field order:
#   seed, instances=[[id, cx, cy, w, h, vx, vy, [appearance...]], ...]
# ViewPair field order:
#   view1=[[instance_id, cx, cy, w, h, mix_weight, mix_partner, [feature...]], ...],
#   view2=(same), correspondence=[[i, j], ...]


def scene_to_line(scene: Scene) -> str:
    rows = [[inst.id, *inst.box, *inst.velocity, inst.appearance.tolist()]
            for inst in scene.instances]
    return json.dumps({"seed": scene.seed, "instances": rows}, separators=(",", ":"))


def scene_from_line(line: str) -> Scene:
    rec = json.loads(line)
    insts = tuple(Instance(int(r[0]), tuple(float(v) for v in r[1:5]),
                           np.array(r[7], dtype=float), (float(r[5]), float(r[6])))
                  for r in rec["instances"])
    return Scene(int(rec["seed"]), insts)


def write_scenes(path, scenes: Iterable[Scene]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(scene_to_line(s) + "\n")


def read_scenes(path) -> list[Scene]:
    with open(path, encoding="utf-8") as fh:
        return [scene_from_line(line) for line in fh if line.strip()]


def _proposal_row(p: Proposal) -> list:
    return [p.instance_id, *p.box, p.mix_weight, p.mix_partner, p.raw_feature.tolist()]


def _proposal_from_row(row, view_id) -> Proposal:
    return Proposal(int(row[0]), view_id, tuple(float(v) for v in row[1:5]),
                    np.array(row[7], dtype=float), float(row[5]),
                    None if row[6] is None else int(row[6]))


def view_pair_to_line(pair: ViewPair) -> str:
    return json.dumps({"view1": [_proposal_row(p) for p in pair.view1],
                       "view2": [_proposal_row(p) for p in pair.view2],
                       "correspondence": sorted(pair.correspondence.items())},
                      separators=(",", ":"))


def view_pair_from_line(line: str) -> ViewPair:
    rec = json.loads(line)
    return ViewPair(tuple(_proposal_from_row(r, 1) for r in rec["view1"]),
                    tuple(_proposal_from_row(r, 2) for r in rec["view2"]),
                    {int(i): int(j) for i, j in rec["correspondence"]})
