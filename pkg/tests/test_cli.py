"""
verbose-samples — Command-line surface.

Tests cover:
  - --version, help, selftest
  - config resolution (file < flags, modality defaults, unknown keys)
  - error records and exit codes
  - make-data → train → attack → evaluate on a reduced victim, and
    byte-identical deterministic outputs on re-run
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from verbose_samples import __version__
from verbose_samples.cli import build_parser, main, resolve_config
from verbose_samples.core.config import VictimConfig
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim.checkpoint import save_checkpoint
from verbose_samples.victim.model import build_victim, freeze


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Helpers
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

def _reduced_config(tmp_path: Path) -> Path:
    cfg = {
        "victim": VictimConfig.reduced("image").as_dict(),
        "dataset": {"image_size": 8, "n_samples": 2},
        "train": {"epochs": 1, "n_train": 8, "n_heldout": 2, "batch_size": 4},
        "attack": {"max_length": 8},
        "trials": 1,
        "eval_policy": "greedy",
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def _resolve(argv: list[str]):
    return resolve_config(build_parser().parse_args(argv))


def _video_checkpoint(tmp_path: Path) -> Path:
    victim = freeze(build_victim(VictimConfig.reduced("video", n_frames=3), seed=0))
    return save_checkpoint(victim, tmp_path / "video.ckpt")


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Basics
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestBasics:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert capsys.readouterr().out.strip() == __version__

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 0
        assert "make-data" in capsys.readouterr().out

    def test_selftest(self, capsys):
        assert main(["selftest"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["version"] == __version__
        assert payload["gate"]["passed"] is True
        assert len(payload["lengths"]) == 3


class TestResolveConfig:
    def test_defaults(self):
        cfg = _resolve(["attack"])
        assert cfg.modality == "image"
        assert cfg.attack.schedule.a == (10.0, 0.0, 0.5)
        assert cfg.victim.n_frames == 1

    def test_video_modality_defaults(self):
        cfg = _resolve(["attack", "--modality", "video"])
        assert cfg.victim.kind == "video" and cfg.victim.n_frames == 8
        assert cfg.attack.schedule.a == (10000.0, 0.0, 5.0)
        assert cfg.dataset.kind == "video"

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3, "attack": {"iterations": 50}}))
        cfg = _resolve(["attack", "--config", str(path), "--iterations", "7"])
        assert cfg.seed == 3
        assert cfg.attack.iterations == 7

    def test_file_schedule_kept(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"attack": {"schedule": {"a": [1, 0, 0], "b": [0, 0, 0]}}}))
        cfg = _resolve(["attack", "--config", str(path), "--modality", "video"])
        assert cfg.attack.schedule.a == (1.0, 0.0, 0.0)

    def test_epsilons_in_8bit_units(self):
        cfg = _resolve(["sweep", "--epsilons", "2", "8"])
        assert cfg.epsilons == pytest.approx((2 / 255, 8 / 255))

    def test_modality_follows_video_checkpoint(self, tmp_path):
        ck = str(_video_checkpoint(tmp_path))
        cfg = _resolve(["attack", "--checkpoint", ck, "--data", str(tmp_path / "d")])
        assert cfg.modality == "video"
        assert cfg.attack.schedule.a == (10000.0, 0.0, 5.0)
        assert cfg.attack.schedule.b == (100000.0, 0.0, 500.0)
        assert cfg.victim.kind == "video" and cfg.victim.n_frames == 3
        assert cfg.dataset.kind == "video"

    def test_matching_modality_accepted(self, tmp_path):
        ck = str(_video_checkpoint(tmp_path))
        assert _resolve(["attack", "--checkpoint", ck, "--modality", "video"]).modality == "video"

    def test_modality_contradicting_checkpoint(self, tmp_path):
        ck = str(_video_checkpoint(tmp_path))
        with pytest.raises(VerboseSamplesError) as exc:
            _resolve(["attack", "--checkpoint", ck, "--modality", "image"])
        assert exc.value.code == FailCode.FAIL_CONFIG_INVALID
        assert exc.value.context["checkpoint_kind"] == "video"

    def test_contradiction_exits_2(self, tmp_path, capsys):
        ck = str(_video_checkpoint(tmp_path))
        assert main(["attack", "--checkpoint", ck, "--modality", "image", "--out", str(tmp_path / "o")]) == 2
        assert json.loads(capsys.readouterr().err)["code"] == "FAIL_CONFIG_INVALID"


class TestErrors:
    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["attack", "--out", str(out)]) == 2
        record = json.loads((out / "error.json").read_text())
        assert record["code"] == "FAIL_CONFIG_INVALID"
        assert record["status"] == "error"
        assert json.loads(capsys.readouterr().err)["code"] == "FAIL_CONFIG_INVALID"

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"attak": {}}))
        assert main(["make-data", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_nonexistent_data_path(self, tmp_path):
        out = tmp_path / "run"
        code = main(["attack", "--checkpoint", str(tmp_path / "x.ckpt"), "--data", str(tmp_path / "d"),
                     "--out", str(out)])
        assert code == 2
        assert json.loads((out / "error.json").read_text())["context"]["path"].endswith("x.ckpt")


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# Pipeline
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━

class TestPipeline:
    def test_make_data_is_deterministic(self, tmp_path, capsys):
        cfg = _reduced_config(tmp_path)
        for name in ("a", "b"):
            assert main(["make-data", "--config", str(cfg), "--n", "3", "--seed", "4",
                         "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert a == b and len(a.splitlines()) == 3
        resolved = json.loads((tmp_path / "a" / "resolved_config.json").read_text())
        assert resolved["dataset"]["seed"] == 4

    def test_make_data_video_has_eight_frames(self, tmp_path, capsys):
        out = tmp_path / "video"
        assert main(["make-data", "--modality", "video", "--n", "2", "--out", str(out)]) == 0
        rows = [json.loads(line) for line in (out / "manifest.jsonl").read_text().splitlines()]
        assert all(r["kind"] == "video" and r["shape"][0] == 8 for r in rows)
        assert json.loads((out / "dataset.json").read_text())["kind"] == "video"

    def test_end_to_end(self, tmp_path, capsys):
        cfg = str(_reduced_config(tmp_path))
        data, model, adv = tmp_path / "data", tmp_path / "model", tmp_path / "adv"
        assert main(["make-data", "--config", cfg, "--out", str(data)]) == 0
        assert main(["train", "--config", cfg, "--out", str(model)]) == 0
        ckpt = model / "victim.ckpt"
        assert ckpt.exists()

        assert main(["attack", "--config", cfg, "--checkpoint", str(ckpt), "--data", str(data),
                     "--iterations", "2", "--out", str(adv)]) == 0
        rows = [json.loads(line) for line in (adv / "manifest.jsonl").read_text().splitlines()]
        assert {r["method"] for r in rows} == {"verbose"}
        assert all(r["id"] == f"{r['source_id']}-verbose" for r in rows)
        assert len(list((adv / "histories").glob("*.jsonl"))) == 2

        for name in ("eval1", "eval2"):
            assert main(["evaluate", "--config", cfg, "--checkpoint", str(ckpt), "--data", str(data),
                         "--data", str(adv), "--out", str(tmp_path / name)]) == 0
        e1, e2 = tmp_path / "eval1", tmp_path / "eval2"
        for fname in ("records.jsonl", "summary.csv", "lengths_histogram.csv"):
            assert (e1 / fname).read_bytes() == (e2 / fname).read_bytes()
        summary = json.loads((e1 / "summary.json").read_text())
        assert [r["method"] for r in summary["table"]["rows"]] == ["original", "verbose"]
        assert "mean_latency" not in summary["table"]["columns"]
        assert "verbose" in summary["direction_checks"]
        assert "saliency_entropy_sign_test" in summary["direction_checks"]["verbose"]
        assert "saliency_entropy" in summary["table"]["columns"]
        assert (e1 / "timing.jsonl").exists() and (e1 / "timing_summary.json").exists()

    def test_linearity_from_records(self, tmp_path, capsys):
        records = tmp_path / "points.jsonl"
        records.write_text("".join(
            json.dumps({"length": n, "latency": 0.002 * n + 0.01, "energy": 0.1 * n}) + "\n"
            for n in (4, 8, 16, 32)
        ))
        out = tmp_path / "lin"
        assert main(["linearity", "--records", str(records), "--out", str(out)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["latency"]["r"] == pytest.approx(1.0)
        assert payload["energy"]["slope"] == pytest.approx(0.1)
        assert (out / "linearity_points.csv").exists()
