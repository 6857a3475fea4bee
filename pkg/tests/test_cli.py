import hashlib
import json

import pytest

from gose.cli import DEFAULTS, build_parser, run
from gose.docmodel import load_dataset, save_dataset
from gose.synthgen import GenConfig, generate

GEN_SETS = ["--set", "n_keys=2", "--set", "n_values_per_key=2",
            "--set", "pattern=column", "--set", "n_docs=2"]
TINY_MODEL = ["--set", "d_h=12", "--set", "window=2",
              "--set", "n_global_tokens=2", "--set", "rounds=2",
              "--set", "vocab_size=32"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture()
def dataset(tmp_path):
    out = tmp_path / "data"
    assert run(["generate", "--out", str(out), "--seed", "0"] + GEN_SETS) == 0
    return out / "dataset.jsonl"


class TestGenerate:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["generate", "--out", str(out), "--seed", "3"] + GEN_SETS) == 0
        assert sha(a / "dataset.jsonl") == sha(b / "dataset.jsonl")
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_manifest_records_config_and_seed(self, tmp_path):
        out = tmp_path / "g"
        assert run(["generate", "--out", str(out), "--seed", "9"] + GEN_SETS) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == 9
        assert manifest["config"]["n_keys"] == 2
        assert "config_hash" in manifest

    def test_invalid_pattern_exits_one(self, tmp_path, capsys):
        code = run(["generate", "--out", str(tmp_path / "g"),
                    "--set", "pattern=spiral"])
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestSeedPriority:
    def test_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GOSE_SEED", "42")
        out = tmp_path / "g"
        assert run(["generate", "--out", str(out)] + GEN_SETS) == 0
        assert json.loads((out / "manifest.json").read_text())["seed"] == 42

    def test_flag_beats_set_beats_file_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GOSE_SEED", "1")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 2}))
        out = tmp_path / "g"
        args = ["generate", "--out", str(out), "--config", str(cfg)] + GEN_SETS
        assert run(args) == 0
        assert json.loads((out / "manifest.json").read_text())["seed"] == 2
        assert run(args + ["--set", "seed=3"]) == 0
        assert json.loads((out / "manifest.json").read_text())["seed"] == 3
        assert run(args + ["--set", "seed=3", "--seed", "4"]) == 0
        assert json.loads((out / "manifest.json").read_text())["seed"] == 4

    def test_bad_env_seed_errors(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("GOSE_SEED", "not-a-number")
        assert run(["generate", "--out", str(tmp_path / "g")] + GEN_SETS) == 1


class TestConfigHandling:
    def test_unknown_set_key_rejected(self, tmp_path):
        assert run(["generate", "--out", str(tmp_path / "g"),
                    "--set", "bogus=1"]) == 1

    def test_unknown_file_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(["generate", "--out", str(tmp_path / "g"),
                    "--config", str(cfg)]) == 1

    def test_malformed_json_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run(["generate", "--out", str(tmp_path / "g"),
                    "--config", str(cfg)]) == 1

    def test_missing_config_file(self, tmp_path):
        assert run(["generate", "--out", str(tmp_path / "g"),
                    "--config", str(tmp_path / "nope.json")]) == 1


class TestTrainEval:
    def test_train_then_eval_checkpoint(self, tmp_path, dataset, capsys):
        run_dir = tmp_path / "run"
        code = run(["train", "--out", str(run_dir), "--data", str(dataset),
                    "--seed", "0", "--set", "epochs=2"] + TINY_MODEL)
        assert code == 0
        assert (run_dir / "checkpoint" / "params.bin").is_file()
        assert (run_dir / "run_record.json").is_file()
        eval_dir = tmp_path / "eval"
        code = run(["eval", "--out", str(eval_dir), "--data", str(dataset),
                    "--ckpt", str(run_dir / "checkpoint")])
        assert code == 0
        metrics = json.loads((eval_dir / "metrics.json").read_text())
        assert set(metrics) >= {"precision", "recall", "f1",
                                "crossing_conflict_rate", "recall_by_distance"}

    def test_eval_predictions_equal_gold_gives_perfect_f1(self, tmp_path, dataset):
        docs = load_dataset(dataset)
        preds = [{"doc_id": d.doc_id, "links": [list(l) for l in sorted(d.links)]}
                 for d in docs]
        pred_path = tmp_path / "preds.json"
        pred_path.write_text(json.dumps(preds))
        out = tmp_path / "eval"
        assert run(["eval", "--out", str(out), "--data", str(dataset),
                    "--pred", str(pred_path)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["f1"] == 1.0

    def test_eval_requires_exactly_one_source(self, tmp_path, dataset):
        out = str(tmp_path / "e")
        assert run(["eval", "--out", out, "--data", str(dataset)]) == 1
        assert run(["eval", "--out", out, "--data", str(dataset),
                    "--ckpt", "x", "--pred", "y"]) == 1

    def test_missing_dataset_exits_one(self, tmp_path):
        assert run(["train", "--out", str(tmp_path / "r"),
                    "--data", str(tmp_path / "nope.jsonl")]) == 1

    def test_pred_missing_doc_exits_one(self, tmp_path, dataset):
        pred_path = tmp_path / "preds.json"
        pred_path.write_text(json.dumps([]))
        assert run(["eval", "--out", str(tmp_path / "e"), "--data", str(dataset),
                    "--pred", str(pred_path)]) == 1


class TestGradcheck:
    def test_passes_and_writes_report(self, tmp_path, capsys):
        out = tmp_path / "gc"
        code = run(["gradcheck", "--seed", "0", "--out", str(out),
                    "--set", "gradcheck_entities=4", "--set", "rounds=1",
                    "--set", "vocab_size=16"] + TINY_MODEL[:8])
        assert code == 0
        report = json.loads((out / "gradcheck.json").read_text())
        assert report["passed"]
        assert report["max_rel_err"] < report["tolerance"]
        assert report["worst_param"]

    def test_tight_tolerance_exits_two(self, capsys):
        code = run(["gradcheck", "--seed", "0",
                    "--set", "gradcheck_entities=4", "--set", "rounds=1",
                    "--set", "vocab_size=16", "--set", "gradcheck_tolerance=1e-300"]
                   + TINY_MODEL[:8])
        assert code == 2


class TestParserHygiene:
    def test_every_flag_has_help(self):
        parser = build_parser()
        stack = [parser]
        while stack:
            p = stack.pop()
            for action in p._actions:
                if hasattr(action, "choices") and isinstance(action.choices, dict):
                    stack.extend(action.choices.values())
                    continue
                assert action.help, f"flag {action.option_strings or action.dest} lacks help"

    def test_usage_error_maps_to_one(self, capsys):
        assert run(["train"]) == 1  # missing required flags
        assert run(["no-such-command"]) == 1

    def test_version_exits_zero(self, capsys):
        assert run(["--version"]) == 0
        assert "gose" in capsys.readouterr().out

    def test_defaults_cover_all_set_keys(self):
        # every documented key must survive a --set round trip
        assert "d_h" in DEFAULTS and "seeds" in DEFAULTS
