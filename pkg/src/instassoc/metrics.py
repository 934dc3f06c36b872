"""Identity metrics: IDF1 under optimal trajectory matching, id switches, link accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .boxes import Box, iou
from .errors import ArgumentError


class TrajectorySet:
    """``track id -> [(frame, box, score), ...]`` with strictly increasing frames.

    Points may also be given as ``(frame, box)``; the score then defaults to 1.
    """

    def __init__(self, trajectories: Mapping[int, Sequence] | None = None):
        self._traj: dict[int, list[tuple[int, Box, float]]] = {}
        for tid, pts in (trajectories or {}).items():
            clean = []
            for pt in pts:
                frame, box = int(pt[0]), tuple(float(v) for v in pt[1])
                score = float(pt[2]) if len(pt) > 2 else 1.0
                if clean and frame <= clean[-1][0]:
                    raise ArgumentError(f"trajectory {tid}: frames must strictly increase")
                clean.append((frame, box, score))
            if clean:
                self._traj[int(tid)] = clean

    def __len__(self):
        return len(self._traj)

    def __iter__(self):
        return iter(sorted(self._traj))

    def __getitem__(self, tid) -> list[tuple[int, Box, float]]:
        return self._traj[tid]

    def __eq__(self, other):
        return isinstance(other, TrajectorySet) and self._traj == other._traj

    def ids(self) -> list[int]:
        return sorted(self._traj)

    def items(self):
        return ((k, self._traj[k]) for k in self.ids())

    def n_boxes(self) -> int:
        return sum(len(v) for v in self._traj.values())

    def frames(self) -> list[int]:
        return sorted({f for pts in self._traj.values() for f, _, _ in pts})

    def by_frame(self) -> dict[int, list[tuple[int, Box]]]:
        out: dict[int, list] = {}
        for tid in self.ids():
            for f, box, _ in self._traj[tid]:
                out.setdefault(f, []).append((tid, box))
        return out

    def records(self) -> list[tuple[int, int, Box, float]]:
        """``(frame, id, box, score)`` sorted by frame then id."""
        return sorted((f, tid, box, s) for tid, pts in self._traj.items() for f, box, s in pts)

    @classmethod
    def from_records(cls, records) -> "TrajectorySet":
        traj: dict[int, list] = {}
        for frame, tid, box, score in sorted(records, key=lambda r: (r[1], r[0])):
            traj.setdefault(int(tid), []).append((frame, box, score))
        return cls(traj)

    def relabel(self, mapping: Mapping[int, int]) -> "TrajectorySet":
        return TrajectorySet({mapping[k]: v for k, v in self._traj.items()})

    def without(self, tid: int) -> "TrajectorySet":
        return TrajectorySet({k: v for k, v in self._traj.items() if k != tid})


def frame_overlap(gt_traj, pred_traj, iou_thresh: float = 0.5) -> int:
    """Frames where both trajectories have boxes with IoU >= ``iou_thresh``."""
    if not 0.0 < iou_thresh <= 1.0:
        raise ArgumentError("iou_thresh must lie in (0, 1]")
    pred = {p[0]: p[1] for p in pred_traj}
    return sum(1 for p in gt_traj if p[0] in pred and iou(p[1], pred[p[0]]) >= iou_thresh)


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of an ``N x M`` matrix.

    Returns ``min(N, M)`` ``(row, col)`` pairs sorted by row. Shortest
    augmenting path with dual potentials, O(n^2 m).
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ArgumentError("cost must be a 2-D matrix")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ArgumentError("cost entries must be finite; use a large sentinel instead")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = row (1-based) holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    pairs = [(int(owner[j]) - 1, j - 1) for j in range(1, m + 1) if owner[j]]
    if transposed:
        pairs = [(b, a) for a, b in pairs]
    return sorted(pairs)


def _frame_matches(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float
                   ) -> dict[tuple[int, int], int]:
    """Per-frame greedy one-to-one matching by descending IoU: ``(gt id, frame) -> pred id``."""
    out = {}
    pred_frames = pred.by_frame()
    for f, gts in gt.by_frame().items():
        preds = pred_frames.get(f, [])
        cand = []
        for gid, gbox in gts:
            for pid, pbox in preds:
                o = iou(gbox, pbox)
                if o >= iou_thresh:
                    cand.append((-o, gid, pid))
        used_g, used_p = set(), set()
        for _, gid, pid in sorted(cand):
            if gid in used_g or pid in used_p:
                continue
            used_g.add(gid)
            used_p.add(pid)
            out[(gid, f)] = pid
    return out


def id_switches(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float = 0.5) -> int:
    matches = _frame_matches(gt, pred, iou_thresh)
    total = 0
    for gid, pts in gt.items():
        prev = None
        for f, _, _ in pts:
            pid = matches.get((gid, f))
            if pid is None:
                continue
            if prev is not None and pid != prev:
                total += 1
            prev = pid
    return total


def _link_counts(gt, pred, iou_thresh) -> tuple[int, int]:
    matches = _frame_matches(gt, pred, iou_thresh)
    good = links = 0
    for gid, pts in gt.items():
        for (f0, _, _), (f1, _, _) in zip(pts, pts[1:]):
            links += 1
            a, b = matches.get((gid, f0)), matches.get((gid, f1))
            good += a is not None and a == b
    return good, links


def association_accuracy(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float = 0.5
                         ) -> float:
    """Fraction of consecutive ground-truth links carried by one predicted id."""
    good, links = _link_counts(gt, pred, iou_thresh)
    return good / links if links else 1.0


@dataclass
class MatchReport:
    idf1: float
    idtp: int
    idfp: int
    idfn: int
    id_switches: int = 0
    assoc_accuracy: float = 1.0
    links_correct: int = 0
    links_total: int = 0
    per_sequence: list["MatchReport"] = field(default_factory=list)

    @property
    def idp(self) -> float:
        d = self.idtp + self.idfp
        return self.idtp / d if d else 1.0

    @property
    def idr(self) -> float:
        d = self.idtp + self.idfn
        return self.idtp / d if d else 1.0

    @property
    def mean_idf1(self) -> float:
        if not self.per_sequence:
            return self.idf1
        return float(np.mean([r.idf1 for r in self.per_sequence]))

    def as_dict(self) -> dict:
        return {"idf1": self.idf1, "mean_idf1": self.mean_idf1, "idp": self.idp,
                "idr": self.idr, "idtp": self.idtp, "idfp": self.idfp, "idfn": self.idfn,
                "id_switches": self.id_switches, "assoc_accuracy": self.assoc_accuracy,
                "n_sequences": max(1, len(self.per_sequence))}


def _f1(idtp, idfp, idfn) -> float:
    d = 2 * idtp + idfp + idfn
    return 2 * idtp / d if d else 1.0


def idf1(gt: TrajectorySet, pred: TrajectorySet, iou_thresh: float = 0.5) -> MatchReport:
    """IDF1 with a globally optimal gt/pred trajectory matching, plus diagnostics."""
    gids, pids = gt.ids(), pred.ids()
    idtp = 0
    if gids and pids:
        overlap = np.array([[frame_overlap(gt[g], pred[p], iou_thresh) for p in pids]
                            for g in gids], dtype=float)
        idtp = int(sum(overlap[r, c] for r, c in hungarian(-overlap)))
    idfp = pred.n_boxes() - idtp
    idfn = gt.n_boxes() - idtp
    good, links = _link_counts(gt, pred, iou_thresh)
    return MatchReport(_f1(idtp, idfp, idfn), idtp, idfp, idfn,
                       id_switches(gt, pred, iou_thresh),
                       good / links if links else 1.0, good, links)


def combine_reports(reports: Sequence[MatchReport]) -> MatchReport:
    """Pool counters over sequences; keeps the individual reports."""
    if not reports:
        return MatchReport(1.0, 0, 0, 0)
    tp = sum(r.idtp for r in reports)
    fp = sum(r.idfp for r in reports)
    fn = sum(r.idfn for r in reports)
    good = sum(r.links_correct for r in reports)
    links = sum(r.links_total for r in reports)
    return MatchReport(_f1(tp, fp, fn), tp, fp, fn, sum(r.id_switches for r in reports),
                       good / links if links else 1.0, good, links, list(reports))


