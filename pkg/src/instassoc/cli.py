"""Command-line entry point.

    instassoc simulate [CONFIG] --out DIR
    instassoc train    [CONFIG] --out DIR [--scenes FILE]
    instassoc track    [CONFIG] --detections FILE [...] --out DIR [--head FILE]
    instassoc eval     [CONFIG] --gt FILE --pred FILE [...] --out DIR
    instassoc ablate   [CONFIG] --axis {proposals,augmentation,all} --out DIR
    instassoc gradcheck [--seed N]

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 internal check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .errors import InstAssocError
from .io import (ensure_dir, group_by_frame, parse_config, read_detections, read_tracks,
                 write_config, write_csv, write_detections, write_loss_csv, write_report,
                 write_tracks)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("instassoc")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def cmd_simulate(args, cfg) -> int:
    from .experiment import eval_sequence_seeds, train_scene_seeds
    from .sim import generate_scene, simulate_sequence, write_scenes

    out = ensure_dir(args.out)
    sim = cfg.sim()
    scenes = [generate_scene(s, sim.train_instances, sim.d_raw, max_speed=sim.max_speed)
              for s in train_scene_seeds(cfg.seed, sim.n_train_scenes)]
    write_scenes(os.path.join(out, "train_scenes.jsonl"), scenes)
    seq_cfg = sim.sequence_config()
    for i, s in enumerate(eval_sequence_seeds(cfg.seed, sim.n_eval_sequences)):
        seq = simulate_sequence(s, seq_cfg)
        dets = [d for _, ds in seq.frames for d in ds]
        write_detections(os.path.join(out, f"seq_{i:03d}.det"), dets, sim.d_raw)
        write_tracks(os.path.join(out, f"seq_{i:03d}.gt.csv"), seq.gt)
    write_config(os.path.join(out, "config.txt"), cfg)
    log.info("wrote %d training scenes and %d sequences to %s", len(scenes),
             sim.n_eval_sequences, out)
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .embed import EmbeddingHead, OptimizerState, save_head, train
    from .experiment import train_scene_seeds
    from .sim import generate_scene, read_scenes

    out = ensure_dir(args.out)
    sim, tcfg = cfg.sim(), cfg.train()
    if args.scenes:
        scenes = read_scenes(args.scenes)
    else:
        scenes = [generate_scene(s, sim.train_instances, sim.d_raw, max_speed=sim.max_speed)
                  for s in train_scene_seeds(cfg.seed, sim.n_train_scenes)]
    d_raw = scenes[0].d_raw if scenes else sim.d_raw
    head0 = EmbeddingHead.init(d_raw, tcfg.d_emb, tcfg.hidden, seed=cfg.seed)
    opt = OptimizerState(tcfg.lr, tcfg.momentum, tcfg.weight_decay)
    res = train(scenes, cfg.augmentation(), head0, opt, tcfg.tau, tcfg.epochs,
                tcfg.batches_per_epoch, tcfg.cap, cfg.seed, tcfg.scenes_per_batch,
                tcfg.milestones, tcfg.lr_decay)
    save_head(os.path.join(out, "head.bin"), res.head)
    write_loss_csv(os.path.join(out, "loss.csv"), res)
    epochs = res.epoch_means()
    log.info("trained %d epochs: mean loss %.4f -> %.4f", len(epochs), epochs[0], epochs[-1])
    return EXIT_OK


def _stem(path: str) -> str:
    name = os.path.basename(path)
    for ext in (".det", ".txt", ".csv"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return name


def cmd_track(args, cfg) -> int:
    from .embed import load_head
    from .experiment import embed_frames
    from .tracker import run_sequence

    out = ensure_dir(args.out)
    head = load_head(args.head) if args.head else None
    for path in args.detections:
        dim, dets = read_detections(path)
        if head is not None and head.in_dim != dim:
            raise InstAssocError(f"{path}: features have dimension {dim}, head expects "
                                 f"{head.in_dim}")
        frames = embed_frames(group_by_frame(dets), head)
        traj = run_sequence(frames, cfg.tracker())
        write_tracks(os.path.join(out, _stem(path) + ".tracks.csv"), traj)
        log.info("%s: %d detections -> %d tracks", path, len(dets), len(traj))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .metrics import combine_reports, idf1

    if len(args.gt) != len(args.pred):
        raise _UsageError("--gt and --pred must be given the same number of times")
    out = ensure_dir(args.out)
    reports = [idf1(read_tracks(g), read_tracks(p), cfg.iou_thresh)
               for g, p in zip(args.gt, args.pred)]
    total = combine_reports(reports)
    write_report(os.path.join(out, "report.txt"), total, {"iou_thresh": cfg.iou_thresh})
    write_csv(os.path.join(out, "report.csv"), [total.as_dict()])
    print(f"IDF1 {total.idf1:.4f}  id_switches {total.id_switches}  "
          f"assoc_accuracy {total.assoc_accuracy:.4f}")
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    from .experiment import run_ablation

    out = ensure_dir(args.out)
    axes = ("proposals", "augmentation") if args.axis == "all" else (args.axis,)
    seeds = cfg["ablation_seeds"]
    for axis in axes:
        rows = run_ablation(axis, cfg.sim(), cfg.augmentation(), cfg.train(), cfg.tracker(),
                            seeds, cfg.iou_thresh)
        write_csv(os.path.join(out, f"ablation_{axis}.csv"), [r.as_dict() for r in rows])
        for r in rows:
            print(f"{axis:<13} {r.setting:<8} mean IDF1 {r.mean_idf1:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    for r in results:
        print(f"{r.suite:<12} case {r.case:<2} rel_err {r.rel_error:.3e} "
              f"(tol {r.tol:.0e}) {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="instassoc", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("config", nargs="?", help="key=value config file (defaults if omitted)")
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "generate training scenes, detection files and ground truth")
    sp.add_argument("--out", required=True)
    sp = add("train", cmd_train, "train the embedding head; writes head.bin and loss.csv")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenes", help="scene file from `simulate` (regenerated if omitted)")
    sp = add("track", cmd_track, "associate detections into tracks")
    sp.add_argument("--detections", required=True, action="append")
    sp.add_argument("--head", help="head file; omit to use the file's embeddings as given")
    sp.add_argument("--out", required=True)
    sp = add("eval", cmd_eval, "score track files against ground truth")
    sp.add_argument("--gt", required=True, action="append")
    sp.add_argument("--pred", required=True, action="append")
    sp.add_argument("--out", required=True)
    sp = add("ablate", cmd_ablate, "proposal-cap and augmentation sweeps")
    sp.add_argument("--axis", choices=("proposals", "augmentation", "all"), default="all")
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("gradcheck", help="finite-difference checks of all analytic gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck, config=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        return args.func(args, cfg)
    except _UsageError as exc:
        print(f"instassoc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstAssocError, OSError) as exc:
        print(f"instassoc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
