"""End-to-end runs: simulate -> train -> track -> evaluate, and the ablation sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .embed import DEFAULT_TAU, EmbeddingHead, OptimizerState, TrainResult, head_forward, train
from .metrics import MatchReport, combine_reports, idf1
from .sim import AugmentationConfig, SequenceConfig, SimulatedSequence, generate_scene, \
    simulate_sequence
from .tracker import Detection, TrackerConfig, run_sequence

log = logging.getLogger(__name__)

TRAIN_SEED_BASE = 0
EVAL_SEED_BASE = 500_000
SEED_STRIDE = 1_000_000

PROPOSAL_CAPS = (64, 128, 256)
AUGMENTATION_SUBSETS = {
    "basic": dict(affine=False, mixup=False, lsj=False),
    "affine": dict(affine=True, mixup=False, lsj=False),
    "mixup": dict(affine=False, mixup=True, lsj=False),
    "lsj": dict(affine=False, mixup=False, lsj=True),
    "full": dict(affine=True, mixup=True, lsj=True),
}


@dataclass(frozen=True)
class SimConfig:
    n_train_scenes: int = 200
    train_instances: int = 24
    d_raw: int = 16
    n_eval_sequences: int = 5
    eval_instances: int = 10
    n_frames: int = 50
    noise: float = 0.1
    brightness: float = 1.0
    blur: float = 0.3
    max_speed: float = 0.01

    def sequence_config(self) -> SequenceConfig:
        return SequenceConfig(self.eval_instances, self.n_frames, self.d_raw, self.noise,
                              self.brightness, self.blur, max_speed=self.max_speed)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = DEFAULT_TAU
    lr: float = 0.04
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 6
    batches_per_epoch: int = 50
    cap: int = 256
    scenes_per_batch: int = 6
    d_emb: int = 32
    hidden: int = 64
    lr_decay: float = 0.1
    milestones: tuple[int, ...] | None = None


@dataclass
class ExperimentResult:
    report: MatchReport
    train: TrainResult | None
    head: EmbeddingHead


def train_scene_seeds(seed: int, n: int) -> list[int]:
    return [seed * SEED_STRIDE + TRAIN_SEED_BASE + i for i in range(n)]


def eval_sequence_seeds(seed: int, n: int) -> list[int]:
    return [seed * SEED_STRIDE + EVAL_SEED_BASE + i for i in range(n)]


def embed_frames(frames, head: EmbeddingHead | None):
    """Replace raw features by head embeddings; ``head=None`` passes them through."""
    if head is None:
        return frames
    out = []
    for t, dets in frames:
        if dets:
            emb = head_forward(head, np.stack([d.embedding for d in dets]))
            dets = [Detection(d.frame, d.box, d.score, e) for d, e in zip(dets, emb)]
        out.append((t, dets))
    return out


def evaluate_head(head: EmbeddingHead | None, sim_cfg: SimConfig, tracker_cfg: TrackerConfig,
                  seed: int, iou_thresh: float = 0.5,
                  sequences: Sequence[SimulatedSequence] | None = None) -> MatchReport:
    if sequences is None:
        seq_cfg = sim_cfg.sequence_config()
        sequences = [simulate_sequence(s, seq_cfg)
                     for s in eval_sequence_seeds(seed, sim_cfg.n_eval_sequences)]
    reports = [idf1(seq.gt, run_sequence(embed_frames(seq.frames, head), tracker_cfg),
                    iou_thresh) for seq in sequences]
    return combine_reports(reports)


def train_head(sim_cfg: SimConfig, aug_cfg: AugmentationConfig, train_cfg: TrainConfig,
               seed: int) -> TrainResult:
    scenes = [generate_scene(s, sim_cfg.train_instances, sim_cfg.d_raw,
                             max_speed=sim_cfg.max_speed)
              for s in train_scene_seeds(seed, sim_cfg.n_train_scenes)]
    head0 = EmbeddingHead.init(sim_cfg.d_raw, train_cfg.d_emb, train_cfg.hidden, seed=seed)
    opt = OptimizerState(train_cfg.lr, train_cfg.momentum, train_cfg.weight_decay)
    return train(scenes, aug_cfg, head0, opt, train_cfg.tau, train_cfg.epochs,
                 train_cfg.batches_per_epoch, train_cfg.cap, seed,
                 train_cfg.scenes_per_batch, train_cfg.milestones, train_cfg.lr_decay)


def run_experiment(sim_cfg: SimConfig, aug_cfg: AugmentationConfig, train_cfg: TrainConfig,
                   tracker_cfg: TrackerConfig, seed: int, iou_thresh: float = 0.5
                   ) -> ExperimentResult:
    result = train_head(sim_cfg, aug_cfg, train_cfg, seed)
    report = evaluate_head(result.head, sim_cfg, tracker_cfg, seed, iou_thresh)
    log.info("seed %d: idf1 %.4f, final loss %.4f", seed, report.idf1, result.loss_mean[-1])
    return ExperimentResult(report, result, result.head)


@dataclass
class AblationRow:
    axis: str
    setting: str
    seeds: list[int]
    idf1: list[float] = field(default_factory=list)
    assoc_accuracy: list[float] = field(default_factory=list)
    id_switches: list[int] = field(default_factory=list)
    final_loss: list[float] = field(default_factory=list)

    @property
    def mean_idf1(self) -> float:
        return float(np.mean(self.idf1))

    def as_dict(self) -> dict:
        return {"axis": self.axis, "setting": self.setting, "n_seeds": len(self.seeds),
                "mean_idf1": self.mean_idf1,
                "mean_assoc_accuracy": float(np.mean(self.assoc_accuracy)),
                "mean_id_switches": float(np.mean(self.id_switches)),
                "mean_final_loss": float(np.mean(self.final_loss))}


def _ablation_settings(axis: str, aug_cfg: AugmentationConfig, train_cfg: TrainConfig):
    photometric = dict(noise=aug_cfg.noise, brightness=aug_cfg.brightness, blur=aug_cfg.blur)
    if axis == "proposals":
        return [(str(cap), aug_cfg, replace(train_cfg, cap=cap)) for cap in PROPOSAL_CAPS]
    if axis == "augmentation":
        return [(name, AugmentationConfig.strong(**flags, **photometric), train_cfg)
                for name, flags in AUGMENTATION_SUBSETS.items()]
    raise ValueError(f"unknown ablation axis {axis!r}")


def run_ablation(axis: str, sim_cfg: SimConfig, aug_cfg: AugmentationConfig,
                 train_cfg: TrainConfig, tracker_cfg: TrackerConfig,
                 seeds: Sequence[int], iou_thresh: float = 0.5) -> list[AblationRow]:
    """One row per setting of ``axis``, each averaged over ``seeds``."""
    rows = []
    for name, aug, tcfg in _ablation_settings(axis, aug_cfg, train_cfg):
        row = AblationRow(axis, name, list(seeds))
        for s in seeds:
            res = run_experiment(sim_cfg, aug, tcfg, tracker_cfg, s, iou_thresh)
            row.idf1.append(res.report.idf1)
            row.assoc_accuracy.append(res.report.assoc_accuracy)
            row.id_switches.append(res.report.id_switches)
            row.final_loss.append(float(np.mean(res.train.epoch_means()[-1:])))
        log.info("%s=%s: mean idf1 %.4f", axis, name, row.mean_idf1)
        rows.append(row)
    return rows
