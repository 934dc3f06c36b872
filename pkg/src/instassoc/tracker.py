"""Online association: duplicate removal, bi-softmax + cosine matching, track management.

Per frame the engine

1. removes duplicate detections with greedy NMS;
2. scores every surviving detection ``r`` against every active track ``t``::

       s1(t, r) = 1/2 [ exp(q_r.q_t) / sum_r' exp(q_r'.q_t) + exp(q_r.q_t) / sum_t' exp(q_r.q_t') ]
       s2(t, r) = cos(q_r, q_t)
       s        = mix * s1 + (1 - mix) * s2          (mix = 0.5 by default)

3. walks detections by descending confidence: the best unconsumed track is
   updated if its score exceeds ``beta`` and the detection confidence exceeds
   ``beta_obj``; otherwise a new track is created if the confidence exceeds
   ``gamma``;
4. drops tracks unmatched for more than ``max_age`` frames.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .boxes import Box, iou
from .errors import ArgumentError, NumericalDomainError, SequencingError, StateError
from .metrics import TrajectorySet

AGGREGATIONS = ("ewa", "latest", "mean")


@dataclass(frozen=True)
class Detection:
    frame: int
    box: Box  # (x, y, w, h)
    score: float
    embedding: np.ndarray

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        if len(box) != 4 or not (box[2] > 0 and box[3] > 0):
            raise ArgumentError(f"detection box needs positive size, got {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ArgumentError(f"detection score must lie in [0, 1], got {self.score}")
        emb = np.asarray(self.embedding, dtype=float).reshape(-1)
        if not np.any(emb):
            raise ArgumentError("detection embedding must be nonzero")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "embedding", emb)


@dataclass
class Track:
    id: int
    memory: deque = field(default_factory=deque)  # (frame, embedding), oldest first
    last_frame: int = 0
    hit_count: int = 0

    def push(self, frame: int, embedding: np.ndarray, capacity: int) -> None:
        if self.memory and frame <= self.memory[-1][0]:
            raise StateError(f"track {self.id}: frame {frame} not after {self.memory[-1][0]}")
        self.memory.append((frame, np.asarray(embedding, dtype=float)))
        while len(self.memory) > capacity:
            self.memory.popleft()
        self.last_frame = frame
        self.hit_count += 1


@dataclass(frozen=True)
class TrackerConfig:
    beta: float = 0.3
    beta_obj: float = 0.5
    gamma: float = 0.7
    nms_iou: float = 0.5
    memory_len: int = 10
    max_age: int = 30
    score_mix: float = 0.5
    aggregation: str = "ewa"
    decay: float = 0.9

    def __post_init__(self):
        for name in ("beta", "beta_obj", "gamma", "nms_iou", "score_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1], got {v}")
        if self.memory_len < 1:
            raise ArgumentError("memory_len must be >= 1")
        if self.max_age < 0:
            raise ArgumentError("max_age must be >= 0")
        if self.aggregation not in AGGREGATIONS:
            raise ArgumentError(f"aggregation must be one of {AGGREGATIONS}")
        if not 0.0 < self.decay <= 1.0:
            raise ArgumentError("decay must lie in (0, 1]")
        if self.gamma < self.beta_obj:
            warnings.warn("gamma < beta_obj: detections too weak to update a track can still "
                          "spawn new ones", stacklevel=3)


@dataclass
class TrackerState:
    tracks: dict[int, Track] = field(default_factory=dict)
    next_id: int = 1
    frame_cursor: int = 0


def _canonical_order(dets: Sequence[Detection]) -> list[int]:
    # score first; content breaks ties so the order does not depend on input position
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box,
                                                   tuple(dets[i].embedding.tolist()), i))


def _nms_indices(dets: Sequence[Detection], nms_iou: float) -> list[int]:
    kept: list[int] = []
    for i in _canonical_order(dets):
        if all(iou(dets[i].box, dets[k].box) < nms_iou for k in kept):
            kept.append(i)
    return kept


def duplicate_removal(dets: Sequence[Detection], nms_iou: float = 0.5) -> list[Detection]:
    """Greedy NMS, highest score first; survivors are returned in that order."""
    return [dets[i] for i in _nms_indices(dets, nms_iou)]


def _emb_matrix(items) -> np.ndarray:
    if isinstance(items, np.ndarray):
        return np.atleast_2d(items).astype(float)
    rows = [it.embedding if isinstance(it, Detection) else it for it in items]
    if not rows:
        return np.zeros((0, 0))
    return np.stack([np.asarray(r, dtype=float) for r in rows])


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def bi_softmax_scores(dets, track_embeddings) -> np.ndarray:
    """``|P| x |T|`` matrix s1 from raw (unnormalised) dot products."""
    q_r, q_t = _emb_matrix(dets), _emb_matrix(track_embeddings)
    if q_r.shape[0] == 0 or q_t.shape[0] == 0:
        return np.zeros((q_r.shape[0], q_t.shape[0]))
    if q_r.shape[1] != q_t.shape[1]:
        raise ArgumentError("detection and track embeddings differ in dimension")
    dots = q_r @ q_t.T
    return 0.5 * (_softmax(dots, axis=0) + _softmax(dots, axis=1))


def cosine_scores(dets, track_embeddings) -> np.ndarray:
    """``|P| x |T|`` matrix s2 of cosine similarities."""
    q_r, q_t = _emb_matrix(dets), _emb_matrix(track_embeddings)
    if q_r.shape[0] == 0 or q_t.shape[0] == 0:
        return np.zeros((q_r.shape[0], q_t.shape[0]))
    nr = np.linalg.norm(q_r, axis=1)
    nt = np.linalg.norm(q_t, axis=1)
    if np.any(nr == 0) or np.any(nt == 0):
        raise NumericalDomainError("cosine score of a zero embedding")
    return np.clip((q_r / nr[:, None]) @ (q_t / nt[:, None]).T, -1.0, 1.0)


def match_scores(s1: np.ndarray, s2: np.ndarray, score_mix: float = 0.5) -> np.ndarray:
    s1, s2 = np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)
    if s1.shape != s2.shape:
        raise ArgumentError(f"score shapes differ: {s1.shape} vs {s2.shape}")
    if score_mix == 1.0:
        return s1.copy()
    return score_mix * s1 + (1.0 - score_mix) * s2


def track_embedding(track: Track, aggregation: str = "ewa", decay: float = 0.9) -> np.ndarray:
    """Representative embedding of a track's memory queue.

    ``ewa`` weights the newest entry 1, the one before ``decay``, then
    ``decay**2`` ... and divides by the weight sum.
    """
    if not track.memory:
        raise StateError(f"track {track.id} has an empty memory")
    embs = [e for _, e in track.memory]
    if aggregation == "latest" or len(embs) == 1:
        return embs[-1].copy()
    if aggregation == "mean":
        return np.mean(embs, axis=0)
    if aggregation != "ewa":
        raise ArgumentError(f"unknown aggregation {aggregation!r}")
    acc = np.zeros_like(embs[-1])
    total = 0.0
    w = 1.0
    for e in reversed(embs):
        acc += w * e
        total += w
        w *= decay
    return acc / total


Assignment = tuple[int, "int | None"]


def associate_frame(state: TrackerState, dets: Sequence[Detection], cfg: TrackerConfig,
                    frame: int | None = None) -> tuple[TrackerState, list[Assignment]]:
    """Process one frame; mutates and returns ``state``.

    Returns one ``(input index, track id or None)`` per input detection, in
    input order. ``frame`` is only needed when ``dets`` is empty (to age tracks).
    """
    frames = {d.frame for d in dets}
    if len(frames) > 1:
        raise ArgumentError(f"detections from several frames in one call: {sorted(frames)}")
    if frames:
        t = frames.pop()
        if frame is not None and frame != t:
            raise ArgumentError(f"frame={frame} disagrees with detections (frame {t})")
    elif frame is not None:
        t = frame
    else:
        return state, []
    if t < state.frame_cursor:
        raise SequencingError(f"frame {t} arrives after frame {state.frame_cursor - 1}")

    assigned: list[int | None] = [None] * len(dets)
    kept = _nms_indices(dets, cfg.nms_iou)  # already in canonical processing order
    track_ids = sorted(state.tracks)
    if kept and track_ids:
        t_emb = np.stack([track_embedding(state.tracks[k], cfg.aggregation, cfg.decay)
                          for k in track_ids])
        d_emb = np.stack([dets[i].embedding for i in kept])
        scores = match_scores(bi_softmax_scores(d_emb, t_emb), cosine_scores(d_emb, t_emb),
                              cfg.score_mix)
    else:
        scores = np.zeros((len(kept), len(track_ids)))

    consumed = np.zeros(len(track_ids), dtype=bool)
    for row, i in enumerate(kept):
        det = dets[i]
        c, col = -math.inf, -1
        if len(track_ids):
            masked = np.where(consumed, -np.inf, scores[row])
            col = int(np.argmax(masked))  # first maximum = smallest track id
            c = float(masked[col])
        if c > cfg.beta and det.score > cfg.beta_obj:
            consumed[col] = True
            tid = track_ids[col]
            state.tracks[tid].push(t, det.embedding, cfg.memory_len)
            assigned[i] = tid
        elif det.score > cfg.gamma:
            tid = state.next_id
            state.next_id += 1
            trk = Track(tid)
            trk.push(t, det.embedding, cfg.memory_len)
            state.tracks[tid] = trk
            assigned[i] = tid

    for tid in [k for k, trk in state.tracks.items() if t - trk.last_frame > cfg.max_age]:
        del state.tracks[tid]
    state.frame_cursor = t + 1
    return state, list(enumerate(assigned))


def run_sequence(frames: Iterable[tuple[int, Sequence[Detection]]], cfg: TrackerConfig
                 ) -> TrajectorySet:
    """Drive :func:`associate_frame` over ``(frame, detections)`` pairs."""
    state = TrackerState()
    out: dict[int, list] = {}
    for t, dets in frames:
        state, assignment = associate_frame(state, dets, cfg, frame=t)
        for i, tid in assignment:
            if tid is not None:
                out.setdefault(tid, []).append((t, dets[i].box, dets[i].score))
    return TrajectorySet(out)
