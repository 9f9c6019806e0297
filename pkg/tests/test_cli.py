"""End-to-end tests of the command-line interface."""

import json

import numpy as np
import pytest

from wtal import cli
from wtal.dataset import Stream, load_dataset
from wtal.errors import ConfigError
from wtal.training import CSV_HEADER, load_checkpoint

SYNTH_FLAGS = [
    "--synth.n_classes", "2", "--synth.d", "4",
    "--synth.source_per_class", "3", "--synth.target_train", "6",
    "--synth.target_test", "4", "--synth.frames", "[8,12]",
]
TRAIN_FLAGS = [
    "--train.iterations", "20", "--train.batch_size", "4",
    "--train.attention_hidden", "4", "--train.classifier_hidden", "6",
]


class TestParseThresholds:
    def test_inclusive_grid(self):
        got = cli.parse_thresholds("0.1:0.9:0.1")
        np.testing.assert_allclose(got, np.arange(1, 10) / 10.0, rtol=0, atol=0)

    def test_comma_list(self):
        assert cli.parse_thresholds("0.5,0.75,0.95") == (0.5, 0.75, 0.95)

    def test_single_value(self):
        assert cli.parse_thresholds("0.5") == (0.5,)

    def test_rejects_bad_specs(self):
        for bad in ("abc", "0.9:0.1:0.1", "0.1:0.9:-0.1", "0:0.9:0.1",
                    "0.5,1.5", "2.0"):
            with pytest.raises(ConfigError):
                cli.parse_thresholds(bad)


class TestResolveConfig:
    def test_defaults(self):
        run_cfg, doc = cli.resolve_config(None, {})
        assert run_cfg.synth.n_classes == 8
        assert run_cfg.train.batch_size == 16
        assert run_cfg.detect.threshold == 0.2
        assert set(doc) == {"synth", "train", "transfer", "kernel", "detect"}

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"synth": {"seed": 3}, "train": {"alpha": 0.5},
                                    "transfer": {"fc2_enabled": False},
                                    "kernel": {"sigma": 2.0}}))
        run_cfg, _ = cli.resolve_config(str(path), {})
        assert run_cfg.synth.seed == 3
        assert run_cfg.train.alpha == 0.5
        assert run_cfg.train.transfer.fc2_enabled is False
        assert run_cfg.train.kernel.sigma == 2.0

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"synth": {"seed": 3}}))
        run_cfg, doc = cli.resolve_config(str(path), {"synth.seed": "5"})
        assert run_cfg.synth.seed == 5
        assert doc["synth"]["seed"] == 5

    def test_tuple_fields_from_json(self):
        run_cfg, _ = cli.resolve_config(None, {"synth.frames": "[8,12]"})
        assert run_cfg.synth.frames == (8, 12)

    def test_bool_and_string_fields(self):
        run_cfg, _ = cli.resolve_config(
            None, {"transfer.enabled": "false", "kernel.sigma": "median",
                   "train.attention_mode": "sigmoid"})
        assert run_cfg.train.transfer.enabled is False
        assert run_cfg.train.kernel.sigma == "median"
        assert run_cfg.train.attention_mode == "sigmoid"

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"optimizer": {}}))
        with pytest.raises(ConfigError, match="unknown config section"):
            cli.resolve_config(str(path), {})

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"learning_rate": 0.1}}))
        with pytest.raises(ConfigError, match="unknown config key"):
            cli.resolve_config(str(path), {})

    def test_type_errors_rejected(self):
        with pytest.raises(ConfigError, match="integer"):
            cli.resolve_config(None, {"synth.seed": "fast"})
        with pytest.raises(ConfigError, match="true/false"):
            cli.resolve_config(None, {"transfer.enabled": "7"})

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError, match="momentum"):
            cli.resolve_config(None, {"train.momentum": "1.5"})

    def test_malformed_config_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{broken")
        with pytest.raises(ConfigError, match="not valid JSON"):
            cli.resolve_config(str(path), {})


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the whole CLI pipeline once at toy scale."""
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "data": root / "data",
        "src": root / "models_src",
        "tgt": root / "models_tgt",
        "det": root / "out" / "detections.json",
        "report": root / "out" / "report.json",
    }
    assert cli.main(["synth", "--out", str(paths["data"])] + SYNTH_FLAGS) == 0
    assert cli.main(["train", "--role", "source", "--data", str(paths["data"]),
                     "--out", str(paths["src"])] + TRAIN_FLAGS) == 0
    assert cli.main(["train", "--role", "target", "--data", str(paths["data"]),
                     "--out", str(paths["tgt"]),
                     "--source-rgb", str(paths["src"] / "source_rgb.ckpt"),
                     "--source-flow", str(paths["src"] / "source_flow.ckpt")]
                    + TRAIN_FLAGS) == 0
    assert cli.main(["detect", "--data", str(paths["data"]),
                     "--ckpt-rgb", str(paths["tgt"] / "target_rgb.ckpt"),
                     "--ckpt-flow", str(paths["tgt"] / "target_flow.ckpt"),
                     "--out", str(paths["det"])]) == 0
    assert cli.main(["eval", "--data", str(paths["data"]),
                     "--detections", str(paths["det"]),
                     "--predictions",
                     str(paths["det"].parent / "detections.predictions.json"),
                     "--out", str(paths["report"])]) == 0
    return paths


class TestPipeline:
    def test_synth_output_loads(self, pipeline):
        data = load_dataset(pipeline["data"])
        assert data.n_classes == 2
        assert len(data.split("source")) == 6
        assert len(data.split("train")) == 6
        assert len(data.split("test")) == 4

    def test_train_writes_checkpoints_and_logs(self, pipeline):
        for role, outdir in (("source", pipeline["src"]), ("target", pipeline["tgt"])):
            for stream in ("rgb", "flow"):
                model, cfg, it = load_checkpoint(outdir / f"{role}_{stream}.ckpt")
                assert model.role == role
                assert model.stream == Stream(stream)
                assert it == cfg.iterations == 20
                log = (outdir / f"{role}_{stream}_loss.csv").read_text().splitlines()
                assert log[0] == CSV_HEADER
                assert len(log) == 21

    def test_source_csv_has_inactive_terms(self, pipeline):
        # source training weights the regularizers by zero and disables the
        # transfer loss; the columns still log the raw per-term means
        rows = (pipeline["src"] / "source_rgb_loss.csv").read_text().splitlines()[1:]
        for row in rows:
            vals = [float(v) for v in row.split(",")[1:]]
            total, l_class, _, sparsity, fc1, fc2 = vals
            assert total == l_class
            np.testing.assert_allclose(sparsity, 1.0, rtol=0, atol=1e-9)
            assert fc1 == 0.0 and fc2 == 0.0

    def test_detections_schema(self, pipeline):
        dets = json.loads(pipeline["det"].read_text())
        assert isinstance(dets, list)
        for det in dets:
            assert set(det) == {"video_id", "class", "t_start", "t_end", "confidence"}

    def test_predictions_sidecar(self, pipeline):
        preds = json.loads(
            (pipeline["det"].parent / "detections.predictions.json").read_text())
        assert len(preds) == 4
        assert {p["video_id"] for p in preds} == \
            {f"test_{i:05d}" for i in range(4)}

    def test_report_artifacts(self, pipeline):
        doc = json.loads(pipeline["report"].read_text())
        assert len(doc["thresholds"]) == 9
        assert len(doc["map_per_threshold"]) == 9
        assert doc["accuracy"]["fused"] is not None
        csv_lines = pipeline["report"].with_suffix(".csv").read_text().splitlines()
        assert csv_lines[0].startswith("iou,mAP,")
        svg = pipeline["report"].with_suffix(".svg").read_text()
        assert svg.startswith("<svg ")

    def test_eval_without_predictions_leaves_accuracy_null(self, pipeline, tmp_path):
        out = tmp_path / "r.json"
        assert cli.main(["eval", "--data", str(pipeline["data"]),
                         "--detections", str(pipeline["det"]),
                         "--thresholds", "0.5", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["accuracy"] == {"rgb": None, "flow": None, "fused": None}

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        data2 = tmp_path / "data2"
        tgt2 = tmp_path / "tgt2"
        det2 = tmp_path / "detections.json"
        assert cli.main(["synth", "--out", str(data2)] + SYNTH_FLAGS) == 0
        assert (data2 / "manifest.json").read_bytes() == \
            (pipeline["data"] / "manifest.json").read_bytes()
        assert cli.main(["train", "--role", "target", "--data", str(data2),
                         "--out", str(tgt2),
                         "--source-rgb", str(pipeline["src"] / "source_rgb.ckpt"),
                         "--source-flow", str(pipeline["src"] / "source_flow.ckpt")]
                        + TRAIN_FLAGS) == 0
        assert (tgt2 / "target_rgb.ckpt").read_bytes() == \
            (pipeline["tgt"] / "target_rgb.ckpt").read_bytes()
        assert cli.main(["detect", "--data", str(data2),
                         "--ckpt-rgb", str(tgt2 / "target_rgb.ckpt"),
                         "--ckpt-flow", str(tgt2 / "target_flow.ckpt"),
                         "--out", str(det2)]) == 0
        assert det2.read_bytes() == pipeline["det"].read_bytes()

    def test_resolved_config_is_logged(self, pipeline, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path / "d"),
                         "--synth.seed", "5"] + SYNTH_FLAGS) == 0
        line = capsys.readouterr().out.splitlines()[0]
        doc = json.loads(line)
        assert doc["command"] == "synth"
        assert doc["config"]["synth"]["seed"] == 5
        assert doc["config"]["synth"]["n_classes"] == 2


class TestCommandFailures:
    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["synth"])
        assert exc.value.code == 2

    def test_unknown_config_key_exits_one(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"bogus": 1}}))
        rc = cli.main(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConfigError"
        assert "bogus" in err["message"]

    def test_missing_dataset_exits_one(self, tmp_path, capsys):
        rc = cli.main(["train", "--role", "source",
                       "--data", str(tmp_path / "nowhere"),
                       "--out", str(tmp_path / "m")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert "error" in err

    def test_swapped_stream_checkpoints_exit_one(self, pipeline, tmp_path, capsys):
        rc = cli.main(["detect", "--data", str(pipeline["data"]),
                       "--ckpt-rgb", str(pipeline["tgt"] / "target_flow.ckpt"),
                       "--ckpt-flow", str(pipeline["tgt"] / "target_rgb.ckpt"),
                       "--out", str(tmp_path / "d.json")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConfigError"
        assert not (tmp_path / "d.json").exists()

    def test_target_transfer_needs_source_checkpoints(self, pipeline, tmp_path, capsys):
        rc = cli.main(["train", "--role", "target", "--data", str(pipeline["data"]),
                       "--out", str(tmp_path / "m")] + TRAIN_FLAGS)
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert "source-rgb" in err["message"]

    def test_target_without_transfer_needs_no_sources(self, pipeline, tmp_path):
        rc = cli.main(["train", "--role", "target", "--data", str(pipeline["data"]),
                       "--out", str(tmp_path / "m"),
                       "--transfer.enabled", "false"] + TRAIN_FLAGS)
        assert rc == 0
        assert (tmp_path / "m" / "target_rgb.ckpt").exists()

    def test_eval_rejects_non_array_detections(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"detections": []}))
        rc = cli.main(["eval", "--data", str(pipeline["data"]),
                       "--detections", str(bad), "--out", str(tmp_path / "r.json")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "InputError"

    def test_help_exits_zero(self):
        for argv in (["--help"], ["train", "--help"]):
            with pytest.raises(SystemExit) as exc:
                cli.main(argv)
            assert exc.value.code == 0


class TestGradcheckCommand:
    def test_passes_and_prints_terms(self, capsys):
        rc = cli.main(["gradcheck"])
        out = capsys.readouterr().out
        assert rc == 0
        for name in ("class", "smooth", "sparsity", "fc1", "fc2", "total"):
            assert f"{name}: max relative error" in out
        assert "worst:" in out and "ok" in out


class TestAblateCommand:
    def test_four_arms_reported(self, pipeline, tmp_path):
        out = tmp_path / "ablation.csv"
        rc = cli.main(["ablate", "--data", str(pipeline["data"]),
                       "--out", str(out),
                       "--train.iterations", "10", "--train.batch_size", "4",
                       "--train.attention_hidden", "4",
                       "--train.classifier_hidden", "6"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "arm,accuracy,mAP@0.5"
        assert [ln.split(",")[0] for ln in lines[1:]] == \
            ["baseline", "sa", "kt", "sa_kt"]
        for ln in lines[1:]:
            _, acc, m = ln.split(",")
            assert 0.0 <= float(acc) <= 1.0
            assert 0.0 <= float(m) <= 1.0
