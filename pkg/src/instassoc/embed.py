"""Contrastive instance embeddings.

The head is a small dense network (affine -> tanh -> affine by default) trained
with the temperature-scaled contrastive loss over two-view proposal batches::

    L = - sum_q log( exp(sim(q, q+)/tau) / (exp(sim(q, q+)/tau) + sum_{q-} exp(sim(q, q-)/tau)) )

where ``sim`` is cosine similarity, ``q+`` is the same instance seen in the
other view and ``q-`` ranges over proposals of different instances. Gradients
are analytic; see ``tests/test_embed.py`` for the finite-difference checks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError, FormatError, NumericalDomainError
from .sim import AugmentationConfig, Scene, _rng, make_view_pair, sample_proposals

DEFAULT_TAU = 0.07


# ---------------------------------------------------------------------------
# head


@dataclass
class EmbeddingHead:
    """Dense head; ``layers[i] = (weight[out, in], bias[out])``, tanh between layers."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "tanh"

    def __post_init__(self):
        if not self.layers:
            raise ArgumentError("head needs at least one layer")
        if self.activation not in _ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        prev = None
        clean = []
        for w, b in self.layers:
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ArgumentError(f"bad layer shapes {w.shape}, {b.shape}")
            if prev is not None and w.shape[1] != prev:
                raise ArgumentError("layer dimensions do not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ArgumentError("non-finite head parameters")
            prev = w.shape[0]
            clean.append((w, b))
        self.layers = clean

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @classmethod
    def init(cls, d_raw: int, d_emb: int = 32, hidden: int = 64, seed: int = 0
             ) -> "EmbeddingHead":
        rng = _rng(seed, 0x11EAD)
        dims = [d_raw, hidden, d_emb] if hidden else [d_raw, d_emb]
        layers = [(rng.normal(0.0, 1.0 / math.sqrt(i), size=(o, i)), np.zeros(o))
                  for i, o in zip(dims[:-1], dims[1:])]
        return cls(layers)

    @classmethod
    def identity(cls, d: int) -> "EmbeddingHead":
        return cls([(np.eye(d), np.zeros(d))])

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer]

    def with_params(self, flat: Sequence[np.ndarray]) -> "EmbeddingHead":
        it = iter(flat)
        return EmbeddingHead([(next(it), next(it)) for _ in self.layers], self.activation)

    def copy(self) -> "EmbeddingHead":
        return self.with_params([p.copy() for p in self.params()])

    def __call__(self, features):
        return head_forward(self, features)


def _tanh_grad(y):
    return 1.0 - y * y


_ACTIVATIONS = {"tanh": (np.tanh, _tanh_grad)}


def _forward(head: EmbeddingHead, x: np.ndarray):
    act, _ = _ACTIVATIONS[head.activation]
    inputs = []
    h = x
    for i, (w, b) in enumerate(head.layers):
        inputs.append(h)
        h = h @ w.T + b
        if i < len(head.layers) - 1:
            h = act(h)
    return h, inputs


def _as_matrix(features, width) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ArgumentError(f"expected features of width {width}, got shape {x.shape}")
    return x


def head_forward(head: EmbeddingHead, features) -> np.ndarray:
    """Map an ``N x D_raw`` feature matrix to ``N x D_emb`` embeddings."""
    x = _as_matrix(features, head.in_dim)
    return _forward(head, x)[0]


def backprop_head(head: EmbeddingHead, features, upstream_grad) -> list[np.ndarray]:
    """Parameter gradients, in ``head.params()`` order, for ``sum(upstream * head(features))``."""
    x = _as_matrix(features, head.in_dim)
    g = np.asarray(upstream_grad, dtype=float)
    if g.shape != (x.shape[0], head.out_dim):
        raise ArgumentError(f"upstream gradient shape {g.shape} does not match "
                            f"({x.shape[0]}, {head.out_dim})")
    _, dact = _ACTIVATIONS[head.activation]
    _, inputs = _forward(head, x)
    grads: list[np.ndarray] = []
    for i in range(len(head.layers) - 1, -1, -1):
        w, _ = head.layers[i]
        h_in = inputs[i]
        grads.append(g.sum(axis=0))
        grads.append(g.T @ h_in)
        if i > 0:
            # inputs[i] is the post-activation output of layer i-1
            g = (g @ w) * dact(h_in)
    grads.reverse()
    return grads


# ---------------------------------------------------------------------------
# loss


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise NumericalDomainError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class ContrastiveBatch:
    embeddings: np.ndarray
    instance_ids: np.ndarray
    view_ids: np.ndarray

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=float))
        self.instance_ids = np.asarray(self.instance_ids)
        self.view_ids = np.asarray(self.view_ids)
        n = self.embeddings.shape[0]
        if self.instance_ids.shape != (n,) or self.view_ids.shape != (n,):
            raise ArgumentError("ids must have one entry per embedding row")
        if not np.all(np.isfinite(self.embeddings)):
            raise ArgumentError("non-finite embeddings")


class LossResult(NamedTuple):
    total: float
    n_anchors: int

    @property
    def mean(self) -> float:
        return self.total / self.n_anchors if self.n_anchors else 0.0

    @property
    def empty(self) -> bool:
        return self.n_anchors == 0


def positive_index(instance_ids, view_ids) -> np.ndarray:
    """For each row, the first row of the same instance in the other view, else -1."""
    first: dict[tuple, int] = {}
    for j, key in enumerate(zip(np.asarray(instance_ids).tolist(), np.asarray(view_ids).tolist())):
        first.setdefault(key, j)
    return np.array([first.get((i, v_other), -1) for i, v_other in
                     zip(np.asarray(instance_ids).tolist(),
                         (3 - np.asarray(view_ids)).tolist())], dtype=np.int64)


def _normalize_rows(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms == 0):
        raise NumericalDomainError("zero embedding row in contrastive batch")
    return e / norms[:, None], norms


def _loss_terms(batch: ContrastiveBatch, tau: float):
    if not tau > 0:
        raise ArgumentError(f"temperature must be > 0, got {tau}")
    z, norms = _normalize_rows(batch.embeddings)
    sim = np.clip(z @ z.T, -1.0, 1.0) / tau
    pos = positive_index(batch.instance_ids, batch.view_ids)
    neg = batch.instance_ids[:, None] != batch.instance_ids[None, :]
    return z, norms, sim, pos, neg


def contrastive_loss(batch: ContrastiveBatch, tau: float = DEFAULT_TAU) -> LossResult:
    """Summed contrastive loss over anchors that have a positive."""
    _, _, sim, pos, neg = _loss_terms(batch, tau)
    terms = []
    for i in range(len(pos)):
        p = pos[i]
        if p < 0:
            continue
        logits = np.concatenate(([sim[i, p]], sim[i, neg[i]]))
        m = logits.max()
        lse = m + math.log(math.fsum(np.exp(logits - m)))
        terms.append(max(lse - sim[i, p], 0.0))
    return LossResult(math.fsum(terms), len(terms))


def contrastive_grad(batch: ContrastiveBatch, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Gradient of :func:`contrastive_loss` ``.total`` w.r.t. the embedding matrix."""
    z, norms, sim, pos, neg = _loss_terms(batch, tau)
    n = len(pos)
    g_sim = np.zeros((n, n))
    for i in range(n):
        p = pos[i]
        if p < 0:
            continue
        cols = np.concatenate(([p], np.flatnonzero(neg[i])))
        logits = sim[i, cols]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        w[0] -= 1.0
        g_sim[i, cols] += w
    g_z = (g_sim + g_sim.T) @ z / tau
    radial = np.sum(g_z * z, axis=1, keepdims=True)
    return (g_z - radial * z) / norms[:, None]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    learning_rate: float = 0.04
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ArgumentError("weight_decay must be >= 0")


def sgd_step(head: EmbeddingHead, grads: Sequence[np.ndarray], state: OptimizerState
             ) -> tuple[EmbeddingHead, OptimizerState]:
    """One momentum-SGD step with weight decay folded into the gradient.

    ``v <- momentum * v + (g + wd * p)``; ``p <- p - lr * v``.
    """
    params = head.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ArgumentError("gradient shapes do not match head parameters")
    vel = state.velocity or [np.zeros_like(p) for p in params]
    new_vel = [state.momentum * v + g + state.weight_decay * p
               for v, g, p in zip(vel, grads, params)]
    new_params = [p - state.learning_rate * v for p, v in zip(params, new_vel)]
    return (head.with_params(new_params),
            OptimizerState(state.learning_rate, state.momentum, state.weight_decay, new_vel))


@dataclass
class TrainResult:
    head: EmbeddingHead
    loss_mean: list[float]
    loss_total: list[float]
    n_anchors: list[int]
    batches_per_epoch: int

    def epoch_means(self) -> list[float]:
        k = self.batches_per_epoch
        return [float(np.mean(self.loss_mean[i:i + k])) for i in range(0, len(self.loss_mean), k)]


def lr_at_epoch(base_lr: float, epoch: int, milestones: Sequence[int], gamma: float = 0.1
                ) -> float:
    return base_lr * gamma ** sum(epoch >= m for m in milestones)


def default_milestones(epochs: int) -> tuple[int, ...]:
    """Decay points at 8/12 and 11/12 of the schedule."""
    return tuple(sorted({max(1, round(epochs * 8 / 12)), max(1, round(epochs * 11 / 12))}
                        - {epochs} if epochs > 1 else set()))


def make_batch(scenes: Sequence[Scene], aug: AugmentationConfig, cap: int, seed: int,
               step: int, scenes_per_batch: int):
    rng = _rng(seed, step, 0xBA7C)
    picks = rng.choice(len(scenes), size=min(scenes_per_batch, len(scenes)), replace=False)
    pairs = [make_view_pair(scenes[k], aug, int(rng.integers(0, 2**31))) for k in sorted(picks)]
    return sample_proposals(pairs, cap, int(rng.integers(0, 2**31)))


def train(scenes, aug: AugmentationConfig, head0: EmbeddingHead, opt: OptimizerState,
          tau: float = DEFAULT_TAU, epochs: int = 12, batches_per_epoch: int = 50,
          cap: int = 256, seed: int = 0, scenes_per_batch: int = 4,
          milestones: Sequence[int] | None = None, gamma: float = 0.1) -> TrainResult:
    """Train ``head0`` on two-view batches drawn from ``scenes``.

    The optimised objective is the per-anchor mean loss; the summed loss is
    recorded alongside it. Batches without any positive pair are recorded with
    zero loss and skipped.
    """
    scenes = list(scenes)
    if not scenes:
        raise ArgumentError("no training scenes")
    if epochs < 1:
        raise ArgumentError("epochs must be >= 1")
    if milestones is None:
        milestones = default_milestones(epochs)
    head, state = head0.copy(), opt
    means, totals, counts = [], [], []
    step = 0
    for epoch in range(epochs):
        state = OptimizerState(lr_at_epoch(opt.learning_rate, epoch, milestones, gamma),
                               state.momentum, state.weight_decay, state.velocity)
        for _ in range(batches_per_epoch):
            batch = make_batch(scenes, aug, cap, seed, step, scenes_per_batch)
            step += 1
            x = batch.features()
            emb = head_forward(head, x)
            cb = ContrastiveBatch(emb, batch.labels(), batch.view_ids())
            loss = contrastive_loss(cb, tau)
            means.append(loss.mean)
            totals.append(loss.total)
            counts.append(loss.n_anchors)
            if loss.empty:
                continue
            g_emb = contrastive_grad(cb, tau) / loss.n_anchors
            head, state = sgd_step(head, backprop_head(head, x, g_emb), state)
    return TrainResult(head, means, totals, counts, batches_per_epoch)


# ---------------------------------------------------------------------------
# binary head files
#
# Layout (little-endian):
#   magic  b"IAHEAD\0\0"      8 bytes
#   u32    format version (1)
#   u32    activation code (0 = tanh)
#   u32    number of layers
#   per layer: u32 out_dim, u32 in_dim
#   per layer: weight (out x in, row-major f64), then bias (out f64)

HEAD_MAGIC = b"IAHEAD\0\0"
HEAD_VERSION = 1
_ACT_CODES = {"tanh": 0}


def head_to_bytes(head: EmbeddingHead) -> bytes:
    parts = [HEAD_MAGIC, struct.pack("<III", HEAD_VERSION, _ACT_CODES[head.activation],
                                     len(head.layers))]
    parts += [struct.pack("<II", *w.shape) for w, _ in head.layers]
    for w, b in head.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def head_from_bytes(data: bytes) -> EmbeddingHead:
    if data[:8] != HEAD_MAGIC:
        raise FormatError("not a head file (bad magic)")
    try:
        version, act, n = struct.unpack_from("<III", data, 8)
        if version != HEAD_VERSION:
            raise FormatError(f"unsupported head file version {version}")
        acts = {v: k for k, v in _ACT_CODES.items()}
        if act not in acts:
            raise FormatError(f"unknown activation code {act}")
        off = 20
        shapes = []
        for _ in range(n):
            shapes.append(struct.unpack_from("<II", data, off))
            off += 8
        layers = []
        for o, i in shapes:
            w = np.frombuffer(data, dtype="<f8", count=o * i, offset=off).reshape(o, i)
            off += 8 * o * i
            b = np.frombuffer(data, dtype="<f8", count=o, offset=off)
            off += 8 * o
            layers.append((w.astype(float), b.astype(float)))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated head file: {exc}") from exc
    if off != len(data):
        raise FormatError("trailing bytes in head file")
    return EmbeddingHead(layers, acts[act])


def save_head(path, head: EmbeddingHead) -> None:
    with open(path, "wb") as fh:
        fh.write(head_to_bytes(head))


def load_head(path) -> EmbeddingHead:
    with open(path, "rb") as fh:
        return head_from_bytes(fh.read())
