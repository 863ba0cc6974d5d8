import json
import subprocess
import sys

import numpy as np
import pytest

from latefuse.cli import main
from latefuse.imageprep import ChannelStats, Image, write_pnm


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    (out / "cfg.json").write_text(json.dumps({"n_train": 150, "n_valid": 90, "n_test": 90,
                                              "seed": 4}))
    assert main(["synth", "--config", str(out / "cfg.json"), "--out-dir", str(out)]) == 0
    return out


class TestText:
    def test_clean(self, tmp_path):
        write_jsonl(tmp_path / "in.jsonl", [
            {"id": "1", "text": "RT @u GREAT daaaay http://x.co &amp; the best!!!"},
            {"id": "2", "text": "sooo happppyy"},
            {"id": "3", "text": ""},
        ])
        code = main(["clean-text", "--in", str(tmp_path / "in.jsonl"),
                     "--out", str(tmp_path / "out.jsonl")])
        assert code == 0
        assert [r["text"] for r in read_jsonl(tmp_path / "out.jsonl")] == [
            "great daay best", "soo happyy", ""]

    def test_missing_text_names_line(self, tmp_path, capsys):
        (tmp_path / "in.jsonl").write_text('{"id": "1", "text": "ok"}\n{"id": "2"}\n')
        code = main(["clean-text", "--in", str(tmp_path / "in.jsonl"),
                     "--out", str(tmp_path / "out.jsonl")])
        assert code == 1
        assert "line 2" in capsys.readouterr().err

    def test_empty_file(self, tmp_path):
        (tmp_path / "in.jsonl").write_text("")
        assert main(["clean-text", "--in", str(tmp_path / "in.jsonl"),
                     "--out", str(tmp_path / "out.jsonl")]) == 0
        assert (tmp_path / "out.jsonl").read_text() == ""

    def test_lexicon_classify(self, tmp_path):
        (tmp_path / "lex.tsv").write_text("happy\t0.8\nmeh\t0.2\n")
        write_jsonl(tmp_path / "in.jsonl", [
            {"id": "a", "text": "happy"}, {"id": "b", "text": ""},
            {"id": "c", "text": "meh x"}])
        assert main(["lexicon-classify", "--in", str(tmp_path / "in.jsonl"),
                     "--lexicon", str(tmp_path / "lex.tsv"),
                     "--out", str(tmp_path / "out.jsonl")]) == 0
        rows = read_jsonl(tmp_path / "out.jsonl")
        assert [r["probs"] for r in rows] == [[0, 0, 1], [0, 1, 0], [0, 1, 0]]


class TestImagePrep:
    def make_images(self, folder, values):
        folder.mkdir()
        for i, v in enumerate(values):
            data = np.full((3, 4, 3), float(v))
            data[0, 0] = [v, 255 - v, 7]
            write_pnm(folder / f"img{i}.ppm", Image(data))

    def test_normalize_and_stats(self, tmp_path):
        self.make_images(tmp_path / "imgs", [10, 200])
        code = main(["image-prep", "--in", str(tmp_path / "imgs"), "--out",
                     str(tmp_path / "out"), "--stats", str(tmp_path / "stats.json"),
                     "--size", "8"])
        assert code == 0
        arrays = [np.load(tmp_path / "out" / f"img{i}.npy") for i in range(2)]
        assert arrays[0].shape == (8, 8, 3)
        stacked = np.stack(arrays)
        np.testing.assert_allclose(stacked.mean(axis=(0, 1, 2)), 0, atol=1e-9)
        np.testing.assert_allclose(stacked.std(axis=(0, 1, 2)), 1, atol=1e-9)
        stats = ChannelStats.from_json((tmp_path / "stats.json").read_text())
        assert len(stats.mean) == 3

    def test_stats_reuse_and_lbp(self, tmp_path):
        self.make_images(tmp_path / "imgs", [10, 200, 90])
        main(["image-prep", "--in", str(tmp_path / "imgs"), "--out", str(tmp_path / "a"),
              "--stats", str(tmp_path / "stats.json"), "--size", "6"])
        code = main(["image-prep", "--in", str(tmp_path / "imgs"), "--out",
                     str(tmp_path / "b"), "--stats-in", str(tmp_path / "stats.json"),
                     "--size", "6", "--lbp"])
        assert code == 0
        a = np.load(tmp_path / "a" / "img1.npy")
        b = np.load(tmp_path / "b" / "img1.npy")
        assert b.shape == (6, 6, 4)
        np.testing.assert_array_equal(a, b[:, :, :3])
        assert set(np.unique(b[:, :, 3])) <= set(range(256))

    def test_constant_image_stays_constant(self, tmp_path):
        folder = tmp_path / "imgs"
        folder.mkdir()
        for i, v in enumerate([20.0, 60.0]):
            write_pnm(folder / f"c{i}.ppm", Image(np.full((2, 3, 3), v)))
        assert main(["image-prep", "--in", str(folder), "--out", str(tmp_path / "o"),
                     "--size", "5"]) == 0
        out = np.load(tmp_path / "o" / "c0.npy")
        assert np.ptp(out) == 0


class TestSynth:
    def test_files_and_counts(self, synth_dir):
        rows = read_jsonl(synth_dir / "image.jsonl")
        assert len(rows) == 330
        splits = json.loads((synth_dir / "splits.json").read_text())
        assert [len(splits[k]) for k in ("train", "valid", "test")] == [150, 90, 90]

    def test_deterministic(self, synth_dir, tmp_path):
        main(["synth", "--config", str(synth_dir / "cfg.json"), "--out-dir", str(tmp_path)])
        for name in ("image.jsonl", "text.jsonl", "gold.jsonl", "splits.json"):
            assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()

    def test_invalid_accuracy_is_usage_error(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text('{"acc_img": 0.3}')
        assert main(["synth", "--config", str(tmp_path / "bad.json"),
                     "--out-dir", str(tmp_path / "o")]) == 2
        assert "acc_img" in capsys.readouterr().err


class TestFuseAndPredict:
    def fuse_args(self, d, out, *extra):
        return ["fuse", "--img", str(d / "image.jsonl"), "--text", str(d / "text.jsonl"),
                "--gold", str(d / "gold.jsonl"), "--splits", str(d / "splits.json"),
                "--budget", "4", "--seed", "3", "--out-report", str(out / "report.json"),
                "--out-model", str(out / "model.json"),
                "--out-leaderboard", str(out / "board.json"), *extra]

    def test_round_trip(self, synth_dir, tmp_path, capsys):
        assert main(self.fuse_args(synth_dir, tmp_path)) == 0
        assert capsys.readouterr().out == ""
        report = json.loads((tmp_path / "report.json").read_text())
        assert main(["predict", "--model", str(tmp_path / "model.json"),
                     "--img", str(synth_dir / "image.jsonl"),
                     "--text", str(synth_dir / "text.jsonl"),
                     "--out", str(tmp_path / "pred.jsonl")]) == 0
        labels = {r["id"]: r["label"] for r in read_jsonl(tmp_path / "pred.jsonl")}
        gold = {r["id"]: r["label"] for r in read_jsonl(synth_dir / "gold.jsonl")}
        test_ids = json.loads((synth_dir / "splits.json").read_text())["test"]
        acc = sum(labels[i] == gold[i] for i in test_ids) / len(test_ids)
        assert acc == report["test_accuracy"]["selected"]

    def test_same_seed_same_report(self, synth_dir, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        main(self.fuse_args(synth_dir, tmp_path / "a"))
        main(self.fuse_args(synth_dir, tmp_path / "b"))
        for name in ("report.json", "board.json", "model.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_print_report(self, synth_dir, tmp_path, capsys):
        assert main(self.fuse_args(synth_dir, tmp_path, "--print-report")) == 0
        assert json.loads(capsys.readouterr().out)["w_star"] >= 0

    def test_config_file_and_override(self, synth_dir, tmp_path):
        cfg = {"img": str(synth_dir / "image.jsonl"), "text": str(synth_dir / "text.jsonl"),
               "gold": str(synth_dir / "gold.jsonl"), "splits": str(synth_dir / "splits.json"),
               "budget": 2, "seed": 1, "out-report": str(tmp_path / "r.json")}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert main(["fuse", "--config", str(tmp_path / "cfg.json"), "--budget", "3"]) == 0
        board_size = json.loads((tmp_path / "r.json").read_text())["selected_trial"]["index"]
        assert board_size <= 4

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text('{"bogus": 1}')
        assert main(["fuse", "--config", str(tmp_path / "cfg.json")]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_gold(self, synth_dir, tmp_path, capsys):
        args = self.fuse_args(synth_dir, tmp_path)
        args[args.index("--gold") + 1] = str(tmp_path / "nope.jsonl")
        assert main(args) == 2
        assert "--gold" in capsys.readouterr().err

    def test_one_hot_model_predicts(self, synth_dir, tmp_path):
        assert main(self.fuse_args(synth_dir, tmp_path, "--one-hot")) == 0
        doc = json.loads((tmp_path / "model.json").read_text())
        assert doc["input_encoding"] == "one_hot"
        assert main(["predict", "--model", str(tmp_path / "model.json"),
                     "--img", str(synth_dir / "image.jsonl"),
                     "--text", str(synth_dir / "text.jsonl"),
                     "--out", str(tmp_path / "p.jsonl")]) == 0

    def test_unknown_schema_version(self, synth_dir, tmp_path, capsys):
        (tmp_path / "m.json").write_text('{"schema_version": 99, "family": "GLM"}')
        assert main(["predict", "--model", str(tmp_path / "m.json"),
                     "--img", str(synth_dir / "image.jsonl"),
                     "--text", str(synth_dir / "text.jsonl"),
                     "--out", str(tmp_path / "p.jsonl")]) == 1
        assert "schema_version" in capsys.readouterr().err

    def test_empty_overlap(self, synth_dir, tmp_path, capsys):
        main(self.fuse_args(synth_dir, tmp_path))
        write_jsonl(tmp_path / "other.jsonl", [{"id": "zzz", "probs": [1, 0, 0]}])
        assert main(["predict", "--model", str(tmp_path / "model.json"),
                     "--img", str(synth_dir / "image.jsonl"),
                     "--text", str(tmp_path / "other.jsonl"),
                     "--out", str(tmp_path / "p.jsonl")]) == 1
        assert "share no ids" in capsys.readouterr().err


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "latefuse.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fuse" in proc.stdout
