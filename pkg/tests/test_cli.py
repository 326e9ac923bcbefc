import csv
import json

import numpy as np
import pytest
from PIL import Image

from fusionfer import checkpoint
from fusionfer.cli import COMMANDS, COMMON, OPTIONS, main
from fusionfer.features import EmbeddingSet, load_embeddings, save_embeddings
from fusionfer.fusion import FusionConfig, FusionModel
from fusionfer.metrics import PredictionSequence, read_predictions, write_predictions
from fusionfer.synthetic import make_two_view_dataset


@pytest.fixture
def embeddings(tmp_path):
    paired = make_two_view_dataset(16, seed=3)
    save_embeddings(paired.main, tmp_path / "main.bin")
    save_embeddings(paired.aux, tmp_path / "aux.bin")
    return tmp_path


def train_args(d, **over):
    args = {
        "--main": d / "main.bin",
        "--aux": d / "aux.bin",
        "--checkpoint": d / "m.ckpt",
        "--loss-csv": d / "loss.csv",
        "--iters": 10,
        "--batch": 32,
        "--lr": 0.01,
        "--seed": 5,
    }
    args.update(over)
    return ["train-fusion"] + [str(x) for kv in args.items() for x in kv]


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_documents_every_key(command, capsys):
    assert main([command, "--help"]) == 0
    out = " ".join(capsys.readouterr().out.split())
    for key in COMMANDS[command][1] + COMMON:
        o = OPTIONS[key]
        assert o.flag in out and f"[{o.section}] {o.key}" in out


def test_top_level_help(capsys):
    assert main(["--help"]) == 0


def test_usage_errors(tmp_path):
    assert main(["no-such-command"]) == 2
    assert main(["smooth", "--window", "abc"]) == 2
    assert main(["train-fusion"]) == 2


class TestSynthesize:
    def _manifest(self, tmp_path, n=10, broken=()):
        lines = []
        pts = np.stack([np.linspace(4, 59, 68), np.linspace(4, 59, 68)], axis=1).tolist()
        for i in range(n):
            img = (np.arange(64 * 64 * 3) % 256).astype(np.uint8).reshape(64, 64, 3)
            Image.fromarray(img).save(tmp_path / f"f{i}.png")
            present = [True] * 68
            if i in broken:
                present[37] = False
            lines.append(json.dumps({"sample_id": f"f{i}", "image": f"f{i}.png", "label": i % 8,
                                     "points": pts, "present": present}))
        path = tmp_path / "kps.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_all_valid(self, tmp_path, capsys):
        m = self._manifest(tmp_path)
        assert main(["synthesize", "--manifest", str(m), "--out-dir", str(tmp_path / "out")]) == 0
        assert len(list((tmp_path / "out").glob("*_aux.png"))) == 10
        assert "written: 10" in capsys.readouterr().out

    def test_one_filtered(self, tmp_path, capsys):
        m = self._manifest(tmp_path, broken={4})
        assert main(["synthesize", "--manifest", str(m), "--out-dir", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert len(list((tmp_path / "out").glob("*_aux.png"))) == 9
        assert "filtered: 1" in out and "f4: insufficient keypoints" in out
        rows = list(csv.DictReader(open(tmp_path / "out" / "pairs.csv")))
        assert len(rows) == 9

    def test_unreadable_manifest(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        assert main(["synthesize", "--manifest", str(missing), "--out-dir", str(tmp_path)]) == 1
        assert "nope.jsonl" in capsys.readouterr().err
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        assert main(["synthesize", "--manifest", str(bad), "--out-dir", str(tmp_path)]) == 1
        assert "bad.jsonl" in capsys.readouterr().err


def test_sample(embeddings, capsys):
    out = embeddings / "s.bin"
    args = ["sample", "--input", str(embeddings / "main.bin"), "--output", str(out), "--n-per-class", "4", "--seed", "2"]
    assert main(args) == 0
    ds = load_embeddings(out)
    np.testing.assert_array_equal(ds.class_counts(), [4] * 8)
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    assert main(args[:-4] + ["--n-per-class", "100"]) == 1


class TestTrain:
    def test_outputs(self, embeddings):
        assert main(train_args(embeddings)) == 0
        rows = (embeddings / "loss.csv").read_text().splitlines()
        assert rows[0] == "iter,loss" and len(rows) == 11
        assert checkpoint.load_checkpoint(embeddings / "m.ckpt").config.strategy == "Concat"

    def test_replay(self, embeddings):
        assert main(train_args(embeddings)) == 0
        ck, loss = (embeddings / "m.ckpt").read_bytes(), (embeddings / "loss.csv").read_bytes()
        assert main(train_args(embeddings)) == 0
        assert (embeddings / "m.ckpt").read_bytes() == ck
        assert (embeddings / "loss.csv").read_bytes() == loss

    def test_updown_concat_layers(self, embeddings):
        assert main(train_args(embeddings, **{"--strategy": "UpDownConcat"})) == 0
        assert checkpoint.load_checkpoint(embeddings / "m.ckpt").keygen_layers == 3

    def test_config_file_and_override(self, embeddings):
        cfg = embeddings / "run.ini"
        cfg.write_text(
            "[paths]\n"
            f"main_embeddings = {embeddings / 'main.bin'}\n"
            f"aux_embeddings = {embeddings / 'aux.bin'}\n"
            f"checkpoint = {embeddings / 'c.ckpt'}\n"
            f"loss_history = {embeddings / 'c.csv'}\n"
            "[model]\nstrategy = UpDownMean\n"
            "[train]\niters = 4\nlr = 0.01\n"
        )
        assert main(["train-fusion", "--config", str(cfg), "--iters", "3"]) == 0
        assert len((embeddings / "c.csv").read_text().splitlines()) == 4
        assert checkpoint.load_checkpoint(embeddings / "c.ckpt").config.strategy == "UpDownMean"

    def test_empty_dataset(self, tmp_path):
        empty = EmbeddingSet([], [], [], [], np.zeros((0, 8)))
        save_embeddings(empty, tmp_path / "e.bin")
        assert main(train_args(tmp_path, **{"--main": tmp_path / "e.bin", "--aux": tmp_path / "e.bin"})) == 1

    def test_mismatched_views(self, embeddings):
        other = make_two_view_dataset(2, dim=6, seed=0)
        save_embeddings(other.aux, embeddings / "aux6.bin")
        assert main(train_args(embeddings, **{"--aux": embeddings / "aux6.bin"})) == 1

    def test_heads_must_divide(self, embeddings):
        assert main(train_args(embeddings, **{"--n-heads": 3})) == 1


def onehot_fixture(tmp_path, labels, d=8):
    """Embeddings whose main view is 10 * one-hot(label) and a model reading it off directly."""
    n = len(labels)
    ids = [f"s{i}" for i in range(n)]
    vids = ["v0" if i % 2 else "v1" for i in range(n)]
    frames = np.arange(n)[::-1]  # reversed so evaluate must sort
    main_vec = 10.0 * np.eye(d)[labels]
    save_embeddings(EmbeddingSet(ids, vids, frames, labels, main_vec), tmp_path / "main.bin")
    save_embeddings(EmbeddingSet(ids, vids, frames, labels, np.zeros((n, d))), tmp_path / "aux.bin")
    model = FusionModel.init(FusionConfig(d, 2, "Concat"), seed=0)
    for v in model.params.values():
        v[...] = 0.0
    model.params["classifier.0.weight"][:] = np.eye(d)
    model.params["classifier.1.weight"][:] = np.eye(8, d)
    return model


class TestEvaluate:
    def _run(self, d, model):
        checkpoint.save_checkpoint(model, d / "m.ckpt")
        args = ["evaluate", "--main", str(d / "main.bin"), "--aux", str(d / "aux.bin"),
                "--checkpoint", str(d / "m.ckpt"), "--predictions", str(d / "pred.csv"),
                "--report", str(d / "report.txt"), "--report-csv", str(d / "report.csv")]
        return main(args)

    def test_perfect(self, tmp_path):
        labels = np.arange(40) % 8
        assert self._run(tmp_path, onehot_fixture(tmp_path, labels)) == 0
        rows = list(csv.DictReader(open(tmp_path / "report.csv")))
        assert float(rows[0]["MacroF1"]) == 1.0 and float(rows[0]["Accuracy"]) == 1.0
        assert "MacroF1    1.000" in (tmp_path / "report.txt").read_text()
        for seq in read_predictions(tmp_path / "pred.csv"):
            assert np.all(np.diff(seq.frame_index) > 0)
            np.testing.assert_array_equal(seq.pred, seq.gt)

    def test_majority_class_only(self, tmp_path):
        labels = np.arange(40) % 8
        model = onehot_fixture(tmp_path, labels)
        model.params["classifier.1.weight"][:] = 0.0
        model.params["classifier.1.bias"][3] = 1.0
        assert self._run(tmp_path, model) == 0
        row = next(csv.DictReader(open(tmp_path / "report.csv")))
        f1_3 = 2 * 5 / (2 * 5 + 35)
        assert float(row["Surprise"]) == 0.0 and float(row["Fear"]) == pytest.approx(f1_3)
        assert float(row["MacroF1"]) == pytest.approx(f1_3 / 8)

    def test_report_header(self, tmp_path):
        self._run(tmp_path, onehot_fixture(tmp_path, np.arange(8)))
        header = (tmp_path / "report.csv").read_text().splitlines()[0]
        assert header == "Accuracy,Neutral,Anger,Disgust,Fear,Happy,Sad,Surprise,Other,MacroF1"

    def test_dimension_mismatch(self, tmp_path, capsys):
        onehot_fixture(tmp_path, np.arange(8))
        assert self._run(tmp_path, FusionModel.init(FusionConfig(6, 2), seed=0)) == 1
        assert "dim" in capsys.readouterr().err

    def test_report_subcommand(self, tmp_path):
        self._run(tmp_path, onehot_fixture(tmp_path, np.arange(16) % 8))
        assert main(["report", "--predictions", str(tmp_path / "pred.csv"), "--report", str(tmp_path / "r2.txt"),
                     "--report-csv", str(tmp_path / "r2.csv")]) == 0
        assert (tmp_path / "r2.csv").read_text() == (tmp_path / "report.csv").read_text()


class TestSmooth:
    def _write(self, path, labels, video="v"):
        write_predictions(path, [PredictionSequence(video, np.arange(len(labels)), labels, labels)])

    def _labels(self, path):
        return [int(r["pred"]) for r in csv.DictReader(open(path))]

    def test_constant(self, tmp_path):
        self._write(tmp_path / "p.csv", [6] * 120)
        assert main(["smooth", "--predictions", str(tmp_path / "p.csv"), "--smoothed", str(tmp_path / "s.csv")]) == 0
        assert self._labels(tmp_path / "s.csv") == [6] * 120

    def test_k1_identity(self, tmp_path):
        labels = list(np.random.default_rng(0).integers(0, 8, 60))
        self._write(tmp_path / "p.csv", labels)
        args = ["smooth", "--predictions", str(tmp_path / "p.csv"), "--smoothed", str(tmp_path / "s.csv"), "--window", "1"]
        assert main(args) == 0
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()

    def test_spike(self, tmp_path):
        labels = [0] * 5 + [3] + [0] * 5
        self._write(tmp_path / "p.csv", labels)
        args = ["smooth", "--predictions", str(tmp_path / "p.csv"), "--smoothed", str(tmp_path / "s.csv"), "--window", "5"]
        assert main(args) == 0
        assert self._labels(tmp_path / "s.csv") == [0] * 11

    def test_unordered(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text("video_id,frame_index,pred\nv,0,1\nv,2,1\nv,1,1\n")
        assert main(["smooth", "--predictions", str(tmp_path / "p.csv"), "--smoothed", str(tmp_path / "s.csv")]) == 1
        assert "strictly increasing" in capsys.readouterr().err

    def test_videos_independent(self, tmp_path):
        write_predictions(tmp_path / "p.csv", [
            PredictionSequence("a", [0, 1, 2], [1, 1, 1]),
            PredictionSequence("b", [0, 1, 2], [2, 5, 5]),
        ])
        args = ["smooth", "--predictions", str(tmp_path / "p.csv"), "--smoothed", str(tmp_path / "s.csv"), "--window", "50"]
        assert main(args) == 0
        assert self._labels(tmp_path / "s.csv") == [1, 1, 1, 5, 5, 5]
