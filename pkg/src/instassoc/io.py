"""Run configuration and interchange files.

Config files are plain ``key = value`` lines grouped under ``[section]``
headers (``sim``, ``augmentation``, ``training``, ``tracker``, ``eval``,
``run``). Key names are unique across sections, so a key may also appear
before any header. ``#`` and ``;`` start comments.

Detection files::

    #instassoc-detections v1 dim=<D>
    frame,x,y,w,h,score,e_1,...,e_D          (one detection per line)

Track / ground-truth files (MOT-style CSV, no header)::

    frame,id,x,y,w,h,score

Reals are written with 17 significant digits so that write-then-read is exact.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (ArgumentError, ConfigFileMissing, ConfigRangeError, ConfigSyntaxError,
                     FormatError, UnknownKeyError)
from .experiment import SimConfig, TrainConfig
from .metrics import MatchReport, TrajectorySet
from .sim import AugmentationConfig
from .tracker import AGGREGATIONS, Detection, TrackerConfig

SECTIONS = ("run", "sim", "augmentation", "training", "tracker", "eval")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# config schema

def _prob(v):
    return 0.0 <= v <= 1.0


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.replace(" ", "").split(","))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    note: str = ""


_F, _I = float, int

SCHEMA: dict[str, Key] = {
    # run
    "seed": Key("run", _I, 0, _nonneg),
    "ablation_seeds": Key("run", _int_list, (0, 1, 2, 3, 4), lambda v: len(v) >= 1),
    # sim
    "n_train_scenes": Key("sim", _I, 200, _pos),
    "train_instances": Key("sim", _I, 24, _pos),
    "d_raw": Key("sim", _I, 16, lambda v: v >= 2),
    "n_eval_sequences": Key("sim", _I, 5, _pos),
    "eval_instances": Key("sim", _I, 10, _pos),
    "n_frames": Key("sim", _I, 50, _pos),
    "noise": Key("sim", _F, 0.1, _nonneg),
    "brightness": Key("sim", _F, 1.0, _nonneg),
    "blur": Key("sim", _F, 0.3, _nonneg),
    "max_speed": Key("sim", _F, 0.01, _nonneg),
    # augmentation
    "affine": Key("augmentation", _bool, True),
    "mixup": Key("augmentation", _bool, True),
    "lsj": Key("augmentation", _bool, True),
    "flip_prob": Key("augmentation", _F, 0.5, _prob),
    "crop_min": Key("augmentation", _F, 0.6, lambda v: 0 < v <= 1),
    "visibility": Key("augmentation", _F, 0.25, _prob),
    "mixup_prob": Key("augmentation", _F, 0.5, _prob),
    "aug_noise": Key("augmentation", _F, 0.1, _nonneg),
    "aug_brightness": Key("augmentation", _F, 1.0, _nonneg),
    "aug_blur": Key("augmentation", _F, 0.3, _nonneg),
    # training
    "tau": Key("training", _F, 0.07, _pos),
    "lr": Key("training", _F, 0.04, _pos),
    "momentum": Key("training", _F, 0.9, lambda v: 0 <= v < 1),
    "weight_decay": Key("training", _F, 1e-4, _nonneg),
    "epochs": Key("training", _I, 6, _pos),
    "batches_per_epoch": Key("training", _I, 50, _pos),
    "cap": Key("training", _I, 256, lambda v: v >= 2),
    "scenes_per_batch": Key("training", _I, 6, _pos),
    "d_emb": Key("training", _I, 32, _pos),
    "hidden": Key("training", _I, 64, _nonneg),
    "lr_decay": Key("training", _F, 0.1, lambda v: 0 < v <= 1),
    "milestones": Key("training", _int_list, None, lambda v: all(m > 0 for m in v)),
    # tracker
    "beta": Key("tracker", _F, 0.3, _prob),
    "beta_obj": Key("tracker", _F, 0.5, _prob),
    "gamma": Key("tracker", _F, 0.7, _prob),
    "nms_iou": Key("tracker", _F, 0.5, _prob),
    "memory_len": Key("tracker", _I, 10, _pos),
    "max_age": Key("tracker", _I, 30, _nonneg),
    "score_mix": Key("tracker", _F, 0.5, _prob),
    "aggregation": Key("tracker", str, "ewa", lambda v: v in AGGREGATIONS),
    "decay": Key("tracker", _F, 0.9, lambda v: 0 < v <= 1),
    # eval
    "iou_thresh": Key("eval", _F, 0.5, lambda v: 0 < v <= 1),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: s.default
                                                            for k, s in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def iou_thresh(self) -> float:
        return self.values["iou_thresh"]

    def sim(self) -> SimConfig:
        return SimConfig(**{f.name: self.values[f.name] for f in fields(SimConfig)})

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(v["tau"], v["lr"], v["momentum"], v["weight_decay"], v["epochs"],
                           v["batches_per_epoch"], v["cap"], v["scenes_per_batch"], v["d_emb"],
                           v["hidden"], v["lr_decay"], v["milestones"])

    def tracker(self) -> TrackerConfig:
        return TrackerConfig(**{f.name: self.values[f.name] for f in fields(TrackerConfig)})

    def augmentation(self) -> AugmentationConfig:
        v = self.values
        cfg = AugmentationConfig.strong(v["affine"], v["mixup"], v["lsj"], noise=v["aug_noise"],
                                        brightness=v["aug_brightness"], blur=v["aug_blur"])
        return replace(cfg, flip_prob=v["flip_prob"], crop=(v["crop_min"], 1.0),
                       visibility=v["visibility"],
                       mixup_prob=v["mixup_prob"] if v["mixup"] else 0.0)

    def with_values(self, **kw) -> "RunConfig":
        for k in kw:
            if k not in SCHEMA:
                raise UnknownKeyError(f"unknown key {k!r}", key=k)
        return RunConfig({**self.values, **kw})


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        for k, entry in SCHEMA.items():
            if entry.section == sec:
                lines.append(f"{k} = {_format_value(cfg.values[k])}")
        lines.append("")
    return "\n".join(lines)


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    values = {k: s.default for k, s in SCHEMA.items()}
    section = None
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigSyntaxError(f"malformed section header {raw.strip()!r}", line=lineno)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise UnknownKeyError(f"unknown section [{section}]", key=section, line=lineno)
            continue
        if "=" not in line:
            raise ConfigSyntaxError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        entry = SCHEMA.get(key)
        if entry is None:
            raise UnknownKeyError(f"unknown key {key!r}", key=key, line=lineno)
        if section is not None and entry.section != section:
            raise UnknownKeyError(f"key {key!r} belongs in [{entry.section}], not [{section}]",
                                  key=key, line=lineno)
        if key in seen:
            raise ConfigSyntaxError(f"duplicate key {key!r} (first set on line {seen[key]})",
                                    key=key, line=lineno)
        seen[key] = lineno
        if entry.parse is _int_list and key == "milestones" and not val:
            values[key] = None
            continue
        try:
            parsed = entry.parse(val)
        except ValueError as exc:
            raise ConfigSyntaxError(f"{key}: cannot parse {val!r} ({exc})", key=key,
                                    line=lineno) from None
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigRangeError(f"{key} must be finite", key=key, line=lineno)
        if entry.check is not None and not entry.check(parsed):
            raise ConfigRangeError(f"{key} = {val} is out of range", key=key, line=lineno)
        values[key] = parsed
    cfg = RunConfig(values)
    try:  # cross-field checks surface through the component constructors
        cfg.augmentation(), cfg.tracker()
    except ArgumentError as exc:
        raise ConfigRangeError(str(exc)) from None
    return cfg


def parse_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigFileMissing(f"config file not found: {path}") from None
    return parse_config_text(text, str(path))


def write_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


# ---------------------------------------------------------------------------
# detections

DET_MAGIC = "#instassoc-detections"
DET_VERSION = "v1"


def write_detections(path, dets: Sequence[Detection], dim: int | None = None) -> None:
    if dim is None:
        if not dets:
            raise ArgumentError("cannot infer the embedding dimension of an empty list")
        dim = len(dets[0].embedding)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{DET_MAGIC} {DET_VERSION} dim={dim}\n")
        last = None
        for d in dets:
            if len(d.embedding) != dim:
                raise ArgumentError(f"embedding of length {len(d.embedding)}, header says {dim}")
            if last is not None and d.frame < last:
                raise ArgumentError("detections must be written in non-decreasing frame order")
            last = d.frame
            fields_ = [str(int(d.frame)), *(_fmt(v) for v in d.box), _fmt(d.score),
                       *(_fmt(v) for v in d.embedding)]
            fh.write(",".join(fields_) + "\n")


def read_detections(path) -> tuple[int, list[Detection]]:
    """Returns ``(dim, detections)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 3 or parts[0] != DET_MAGIC or not parts[2].startswith("dim="):
            raise FormatError("missing or malformed detection header", line=1, path=path)
        if parts[1] != DET_VERSION:
            raise FormatError(f"unsupported detection format {parts[1]}", line=1, path=path)
        try:
            dim = int(parts[2][4:])
        except ValueError:
            raise FormatError("bad dim in header", line=1, path=path) from None
        if dim < 1:
            raise FormatError("dim must be >= 1", line=1, path=path)
        out, last = [], None
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != 6 + dim:
                raise FormatError(f"expected {6 + dim} fields, got {len(cells)}", lineno, path)
            try:
                frame = int(cells[0])
                nums = [float(c) for c in cells[1:]]
            except ValueError as exc:
                raise FormatError(f"unparsable value ({exc})", lineno, path) from None
            if not all(math.isfinite(v) for v in nums):
                raise FormatError("non-finite value", lineno, path)
            if last is not None and frame < last:
                raise FormatError(f"frame {frame} after frame {last}", lineno, path)
            last = frame
            try:
                out.append(Detection(frame, tuple(nums[:4]), nums[4], np.array(nums[5:])))
            except ArgumentError as exc:
                raise FormatError(str(exc), lineno, path) from None
    return dim, out


def group_by_frame(dets: Sequence[Detection], frames: Sequence[int] | None = None):
    """``[(frame, [detections])]`` in frame order; ``frames`` adds empty frames."""
    grouped: dict[int, list[Detection]] = {}
    for f in frames or ():
        grouped.setdefault(int(f), [])
    for d in dets:
        grouped.setdefault(d.frame, []).append(d)
    return sorted(grouped.items())


# ---------------------------------------------------------------------------
# track files

def write_tracks(path, traj: TrajectorySet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame, tid, box, score in traj.records():
            fh.write(",".join([str(frame), str(tid), *(_fmt(v) for v in box), _fmt(score)])
                     + "\n")


def read_tracks(path) -> TrajectorySet:
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != 7:
                raise FormatError(f"expected 7 fields, got {len(cells)}", lineno, path)
            try:
                frame, tid = int(cells[0]), int(cells[1])
                x, y, w, h, s = (float(c) for c in cells[2:])
            except ValueError as exc:
                raise FormatError(f"unparsable value ({exc})", lineno, path) from None
            if tid <= 0:
                raise FormatError(f"track ids must be positive, got {tid}", lineno, path)
            if (frame, tid) in seen:
                raise FormatError(f"duplicate (frame, id) = ({frame}, {tid})", lineno, path)
            if not (w > 0 and h > 0):
                raise FormatError("box needs positive width and height", lineno, path)
            seen.add((frame, tid))
            records.append((frame, tid, (x, y, w, h), s))
    return TrajectorySet.from_records(records)


# ---------------------------------------------------------------------------
# reports and CSVs

def write_report(path, report: MatchReport, extra: dict | None = None) -> None:
    """``key: value`` text report; per-sequence IDF1 listed after the totals."""
    rows = dict(extra or {})
    rows.update(report.as_dict())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in rows.items():
            fh.write(f"{k}: {_fmt(v) if isinstance(v, float) else v}\n")
        for i, r in enumerate(report.per_sequence):
            fh.write(f"sequence_{i}_idf1: {_fmt(r.idf1)}\n")


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ArgumentError("no rows to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()})


def write_loss_csv(path, train_result) -> None:
    k = train_result.batches_per_epoch
    rows = [{"step": i, "epoch": i // k, "loss_mean": m, "loss_total": t, "n_anchors": n}
            for i, (m, t, n) in enumerate(zip(train_result.loss_mean, train_result.loss_total,
                                              train_result.n_anchors))]
    write_csv(path, rows)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
