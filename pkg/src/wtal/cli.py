"""Command-line entry point.

Subcommands: synth | train | gradcheck | detect | eval | ablate.

Configuration is a JSON document with sections synth / train / transfer /
kernel / detect; every key has a CLI override flag named --<section>.<key>
(the mapping is one-to-one), and unknown sections or keys are rejected.
Each run prints its fully-resolved configuration to stdout. Artifacts are
written atomically (temp file + rename) and removed if the command fails
partway, so a nonzero exit never leaves partial outputs behind.

Exit codes: 0 ok, 1 runtime error (JSON error object on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from .dataset import STREAMS, Stream, SyntheticSpec, generate_synthetic, load_dataset
from .detection import DetectConfig, detect_split, predict_split
from .errors import ConfigError, InputError, WtalError
from .evaluation import (accuracy_from_predictions, emit_report,
                         ground_truth_instances, instances_from_detections,
                         map_at_iou)
from .training import (TrainConfig, certify_gradients, load_checkpoint,
                       save_checkpoint, train_source, train_target)
from .transfer import KernelConfig, TransferConfig

GRADCHECK_TOLERANCE = 1e-5

_SECTION_CLASSES = {
    "synth": SyntheticSpec,
    "train": TrainConfig,
    "transfer": TransferConfig,
    "kernel": KernelConfig,
    "detect": DetectConfig,
}
# transfer/kernel live in their own sections, not under train
_TRAIN_NESTED = {"transfer", "kernel"}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    synth: SyntheticSpec
    train: TrainConfig
    detect: DetectConfig


def _section_fields(section: str) -> dict[str, dataclasses.Field]:
    cls = _SECTION_CLASSES[section]
    return {f.name: f for f in dataclasses.fields(cls)
            if not (section == "train" and f.name in _TRAIN_NESTED)}


def _default_value(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _coerce(section: str, key: str, value, from_cli: bool):
    """Bring a config value to the field's natural type.

    CLI values arrive as strings and are parsed as JSON when possible, so
    booleans/numbers/lists work; bare words fall back to strings.
    """
    if from_cli:
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    default = _default_value(_section_fields(section)[key])
    where = f"{section}.{key}"
    if isinstance(value, list):
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} expects an integer, got {value!r}")
        if float(value) != int(value):
            raise ConfigError(f"{where} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} expects a number, got {value!r}")
        return float(value)
    return value


def resolve_config(config_path: str | None,
                   overrides: dict[str, str]) -> tuple[RunConfig, dict]:
    """Defaults <- config file <- CLI flags; returns the built config and
    the fully-resolved document for logging."""
    doc = {section: {name: _default_value(f) for name, f in _section_fields(section).items()}
           for section in _SECTION_CLASSES}
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a JSON object of sections")
        for section, body in loaded.items():
            if section not in _SECTION_CLASSES:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                if key not in doc[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                doc[section][key] = _coerce(section, key, value, from_cli=False)
    for dotted, raw in overrides.items():
        section, key = dotted.split(".", 1)
        doc[section][key] = _coerce(section, key, raw, from_cli=True)

    synth = SyntheticSpec(**doc["synth"])
    train = TrainConfig(transfer=TransferConfig(**doc["transfer"]),
                        kernel=KernelConfig(**doc["kernel"]), **doc["train"])
    train.validate()
    detect = DetectConfig(**doc["detect"])
    return RunConfig(synth=synth, train=train, detect=detect), doc


def _log_resolved(command: str, doc: dict) -> None:
    print(json.dumps({"command": command, "config": doc}, sort_keys=True,
                     default=list))


# ---------------------------------------------------------------------------
# atomic artifact writing
# ---------------------------------------------------------------------------


class _Outputs:
    """Tracks files created by one command so failures can remove them."""

    def __init__(self):
        self.created: list[Path] = []

    def write_text(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / (path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
        self.created.append(path)

    def write_bytes(self, path: Path, data: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / (path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
        self.created.append(path)

    def discard_all(self) -> None:
        for path in self.created:
            path.unlink(missing_ok=True)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    run_cfg, doc = resolve_config(args.config, _overrides(args))
    _log_resolved("synth", doc)
    out = Path(args.out)
    partial = out.parent / (out.name + ".partial")
    if partial.exists():
        shutil.rmtree(partial)
    try:
        generate_synthetic(run_cfg.synth, partial)
        if out.exists():
            shutil.rmtree(out)
        partial.replace(out)
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    return 0


def _cmd_train(args) -> int:
    run_cfg, doc = resolve_config(args.config, _overrides(args))
    _log_resolved("train", doc)
    cfg = run_cfg.train
    data = load_dataset(args.data)
    outdir = Path(args.out)
    outputs = _Outputs()
    try:
        for stream in STREAMS:
            if args.role == "source":
                model, rows = train_source(data, stream, cfg)
            else:
                source_model = None
                if cfg.transfer.enabled:
                    src_path = args.source_rgb if stream == Stream.RGB else args.source_flow
                    if src_path is None:
                        raise ConfigError(
                            "transfer is enabled: pass --source-rgb and --source-flow")
                    source_model, _, _ = load_checkpoint(src_path)
                model, rows = train_target(data, stream, cfg, source_model)
            ckpt = outdir / f"{args.role}_{stream.value}.ckpt"
            tmp = ckpt.parent / (ckpt.name + ".tmp")
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, cfg, cfg.iterations, tmp)
            tmp.replace(ckpt)
            outputs.created.append(ckpt)
            outputs.write_text(outdir / f"{args.role}_{stream.value}_loss.csv",
                               "\n".join(rows) + "\n")
    except BaseException:
        outputs.discard_all()
        raise
    return 0


def _cmd_gradcheck(args) -> int:
    errors = certify_gradients(seed=args.seed)
    worst = max(errors.values())
    for name in sorted(errors):
        print(f"{name}: max relative error {errors[name]:.3e}")
    ok = worst < GRADCHECK_TOLERANCE
    print(f"worst: {worst:.3e} ({'ok' if ok else 'FAIL'} at {GRADCHECK_TOLERANCE:.0e})")
    return 0 if ok else 1


def _cmd_detect(args) -> int:
    run_cfg, doc = resolve_config(args.config, _overrides(args))
    _log_resolved("detect", doc)
    model_rgb, _, _ = load_checkpoint(args.ckpt_rgb)
    model_flow, _, _ = load_checkpoint(args.ckpt_flow)
    if model_rgb.stream != Stream.RGB or model_flow.stream != Stream.FLOW:
        raise ConfigError("checkpoints passed to the wrong stream flags")
    data = load_dataset(args.data)
    detections = detect_split(data, args.split, model_rgb, model_flow,
                              run_cfg.detect)
    predictions = predict_split(data, args.split, model_rgb, model_flow)
    out = Path(args.out)
    outputs = _Outputs()
    try:
        outputs.write_text(out, _json_text(detections))
        outputs.write_text(_predictions_path(out), _json_text(predictions))
    except BaseException:
        outputs.discard_all()
        raise
    return 0


def _predictions_path(detections_path: Path) -> Path:
    return detections_path.parent / (detections_path.stem + ".predictions.json")


def parse_thresholds(text: str) -> tuple[float, ...]:
    """"0.1:0.9:0.1" is an inclusive grid; "0.5,0.75,0.95" a literal list."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError("empty grid")
            count = int(round((stop - start) / step)) + 1
            vals = tuple(round(start + i * step, 10) for i in range(count))
        else:
            vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad threshold spec {text!r}: {exc}") from exc
    if not vals or any(not (0.0 < v <= 1.0) for v in vals):
        raise ConfigError(f"thresholds must lie in (0, 1]: {text!r}")
    return vals


def _cmd_eval(args) -> int:
    _, doc = resolve_config(args.config, _overrides(args))
    _log_resolved("eval", doc)
    data = load_dataset(args.data)
    try:
        detections = json.loads(Path(args.detections).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"detections file is not valid JSON: {exc}") from exc
    if not isinstance(detections, list):
        raise InputError("detections file must be a JSON array")
    instances = instances_from_detections(detections)
    gt = ground_truth_instances(data.manifest, args.split)
    thresholds = parse_thresholds(args.thresholds)
    acc = None
    if args.predictions is not None:
        try:
            predictions = json.loads(Path(args.predictions).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"predictions file is not valid JSON: {exc}") from exc
        acc = accuracy_from_predictions(predictions, data.manifest, args.split)
    report = map_at_iou(instances, gt, thresholds, acc)
    out = Path(args.out)
    outputs = _Outputs()
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        outputs.created.extend(emit_report(report, data.class_names, out))
    except BaseException:
        outputs.discard_all()
        raise
    return 0


ABLATION_ARMS = (
    # (name, attention enabled, transfer enabled)
    ("baseline", False, False),
    ("sa", True, False),
    ("kt", False, True),
    ("sa_kt", True, True),
)


def run_ablation(data, cfg: TrainConfig, dcfg: DetectConfig,
                 iou_thr: float = 0.5, split: str = "test") -> list[dict]:
    """Train and score the four arms (attention/transfer on/off) once."""
    rows = []
    for name, att_on, kt_on in ABLATION_ARMS:
        arm_cfg = dataclasses.replace(
            cfg, attention_enabled=att_on,
            transfer=dataclasses.replace(cfg.transfer, enabled=kt_on))
        models = {}
        for stream in STREAMS:
            source_model = None
            if kt_on:
                source_model, _ = train_source(data, stream, arm_cfg)
            models[stream], _ = train_target(data, stream, arm_cfg, source_model)
        detections = detect_split(data, split, models[Stream.RGB],
                                  models[Stream.FLOW], dcfg)
        predictions = predict_split(data, split, models[Stream.RGB],
                                    models[Stream.FLOW])
        acc = accuracy_from_predictions(predictions, data.manifest, split)
        report = map_at_iou(instances_from_detections(detections),
                            ground_truth_instances(data.manifest, split),
                            (iou_thr,), acc)
        rows.append({"arm": name, "accuracy": acc["fused"],
                     "map": report.map_per_threshold[0]})
    return rows


def _cmd_ablate(args) -> int:
    run_cfg, doc = resolve_config(args.config, _overrides(args))
    _log_resolved("ablate", doc)
    data = load_dataset(args.data)
    rows = run_ablation(data, run_cfg.train, run_cfg.detect, args.iou, args.split)
    lines = ["arm,accuracy,mAP@" + repr(args.iou)]
    lines += [f"{r['arm']},{r['accuracy']!r},{r['map']!r}" for r in rows]
    outputs = _Outputs()
    try:
        outputs.write_text(Path(args.out), "\n".join(lines) + "\n")
    except BaseException:
        outputs.discard_all()
        raise
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="JSON config file (sections: %s)"
                        % ", ".join(_SECTION_CLASSES))
    for section in _SECTION_CLASSES:
        for name, f in _section_fields(section).items():
            flag = f"--{section}.{name}"
            parser.add_argument(flag, dest=flag[2:], metavar="V", default=None,
                                help=f"override {section}.{name} "
                                     f"(default {_default_value(f)!r})")


def _overrides(args) -> dict[str, str]:
    return {k: v for k, v in vars(args).items() if "." in k and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wtal",
        description="Weakly-supervised temporal action localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train source or target models")
    p.add_argument("--role", required=True, choices=("source", "target"))
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="directory for <role>_<stream>.ckpt and loss CSVs")
    p.add_argument("--source-rgb", metavar="CKPT", default=None,
                   help="source checkpoint for transfer (target role)")
    p.add_argument("--source-flow", metavar="CKPT", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck",
                       help="certify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("detect", help="extract temporal proposals")
    p.add_argument("--ckpt-rgb", required=True, metavar="CKPT")
    p.add_argument("--ckpt-flow", required=True, metavar="CKPT")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, metavar="detections.json")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--detections", required=True, metavar="JSON")
    p.add_argument("--predictions", default=None, metavar="JSON",
                   help="classification records for accuracy (detect emits them)")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--split", default="test")
    p.add_argument("--thresholds", default="0.1:0.9:0.1",
                   help="start:stop:step grid or comma list")
    p.add_argument("--out", required=True, metavar="report.json")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate",
                       help="train and score the four attention/transfer arms")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--split", default="test")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True, metavar="CSV")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WtalError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except (OSError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
