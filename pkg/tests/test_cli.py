import csv

import pytest

from instassoc import cli, experiment
from instassoc.gradcheck import CheckResult

SMALL = """\
[run]
ablation_seeds = 0
[sim]
n_train_scenes = 12
n_eval_sequences = 2
n_frames = 12
[training]
epochs = 2
batches_per_epoch = 4
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.txt"
    p.write_text(SMALL)
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestExitCodes:
    def test_help(self, capsys):
        assert run("--help") == 0
        assert run("track", "--help") == 0
        assert "--detections" in capsys.readouterr().out

    def test_usage_errors(self, capsys):
        assert run() == 1
        assert run("bogus") == 1
        assert run("track", "--out", "x") == 1  # --detections missing
        assert run("ablate", "--axis", "sideways", "--out", "x") == 1

    def test_validation_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("tau = -1\n")
        assert run("train", bad, "--out", tmp_path / "o") == 2
        assert "tau" in capsys.readouterr().err
        assert run("train", tmp_path / "missing.txt", "--out", tmp_path / "o") == 2
        assert run("track", "--detections", tmp_path / "none.det", "--out", tmp_path / "o") == 2
        garbled = tmp_path / "g.det"
        garbled.write_text("#instassoc-detections v1 dim=2\n1,2,3\n")
        assert run("track", "--detections", garbled, "--out", tmp_path / "o") == 2
        assert "line 2" in capsys.readouterr().err

    def test_eval_needs_pairs(self, tmp_path, fixture_path):
        gt = fixture_path("noise_free_seq0.gt.csv")
        assert run("eval", "--gt", gt, "--gt", gt, "--pred", gt, "--out", tmp_path) == 1

    def test_gradcheck(self, capsys):
        assert run("gradcheck") == 0
        assert "20/20" in capsys.readouterr().out

    def test_gradcheck_failure_exit_code(self, monkeypatch):
        import instassoc.gradcheck as gc
        monkeypatch.setattr(gc, "run_all", lambda seed=0: [CheckResult("x", 0, 1.0, 1e-4)])
        assert run("gradcheck") == 3


class TestGivenObservations:
    def test_noise_free_fixture_scores_perfectly(self, tmp_path, fixture_path, capsys):
        det = fixture_path("noise_free_seq0.det")
        assert run("track", "--detections", det, "--out", tmp_path) == 0
        pred = tmp_path / "noise_free_seq0.tracks.csv"
        assert run("eval", "--gt", fixture_path("noise_free_seq0.gt.csv"), "--pred", pred,
                   "--out", tmp_path) == 0
        report = dict(line.split(": ") for line in
                      (tmp_path / "report.txt").read_text().splitlines())
        assert float(report["idf1"]) == 1.0 and report["id_switches"] == "0"
        assert "IDF1 1.0000" in capsys.readouterr().out

    def test_head_never_invoked_without_head_file(self, tmp_path, fixture_path, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("embedding head called in given-observations mode")
        monkeypatch.setattr(experiment, "head_forward", boom)
        assert run("track", "--detections", fixture_path("noise_free_seq0.det"),
                   "--out", tmp_path) == 0


class TestPipeline:
    def test_simulate_train_track_eval(self, tmp_path, small_cfg):
        sim, trn, trk, ev = (tmp_path / d for d in ("sim", "train", "track", "eval"))
        assert run("simulate", small_cfg, "--out", sim) == 0
        assert sorted(p.name for p in sim.iterdir()) == [
            "config.txt", "seq_000.det", "seq_000.gt.csv", "seq_001.det", "seq_001.gt.csv",
            "train_scenes.jsonl"]
        assert run("train", small_cfg, "--out", trn, "--scenes", sim / "train_scenes.jsonl") == 0
        with open(trn / "loss.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8 and set(rows[0]) == {"step", "epoch", "loss_mean", "loss_total",
                                                   "n_anchors"}
        assert run("track", small_cfg, "--head", trn / "head.bin", "--detections",
                   sim / "seq_000.det", "--detections", sim / "seq_001.det", "--out", trk) == 0
        assert run("eval", small_cfg, "--gt", sim / "seq_000.gt.csv", "--pred",
                   trk / "seq_000.tracks.csv", "--gt", sim / "seq_001.gt.csv", "--pred",
                   trk / "seq_001.tracks.csv", "--out", ev) == 0
        text = (ev / "report.txt").read_text()
        assert "sequence_1_idf1" in text and "n_sequences: 2" in text

    def test_head_dimension_mismatch(self, tmp_path, small_cfg, fixture_path):
        (tmp_path / "c.txt").write_text("[sim]\nd_raw = 4\nn_train_scenes = 2\n"
                                        "[training]\nepochs = 1\nbatches_per_epoch = 1\n")
        assert run("train", tmp_path / "c.txt", "--out", tmp_path) == 0
        assert run("track", "--head", tmp_path / "head.bin", "--detections",
                   fixture_path("noise_free_seq0.det"), "--out", tmp_path) == 2

    def test_ablate_proposals(self, tmp_path, small_cfg, capsys):
        assert run("ablate", small_cfg, "--axis", "proposals", "--out", tmp_path) == 0
        with open(tmp_path / "ablation_proposals.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["setting"] for r in rows] == ["64", "128", "256"]
        assert all(0 <= float(r["mean_idf1"]) <= 1 for r in rows)
