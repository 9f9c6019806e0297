"""Two-stage training: source (trimmed) models, then target (untrimmed)
models with attention regularization and MMD knowledge transfer.

The overall target loss per step is

    L = mean_v [class_loss_v + alpha * R_smooth(a_v) + beta * R_sparsity(a_v)]
        + L_FC1 + L_FC2

with the regularizers averaged over attention heads, and the transfer terms
computed between this step's target activation batch and a freshly sampled
batch pushed through the frozen source model. Source training minimizes the
class loss alone.

Optimization is SGD with momentum: v <- mu v - lr g, p <- p + v, with the
learning rate divided by decay_factor every decay_every iterations.

Everything is bit-deterministic given (dataset, config, seed): batches,
dropout masks, and initialization all come from PCG64 generators seeded
from a fixed SeedSequence tree, and gradient accumulation order is fixed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import (MODES, AttentionOutput, AttentionParams, attend,
                        attention_grads, smooth_reg_direct, smooth_reg_grad,
                        sparsity_reg, sparsity_reg_grad, uniform_attention)
from .classifier import (ClassifierOutput, ClassifierParams, class_loss,
                         class_loss_grad_logits, classifier_grads, classify,
                         label_vector)
from .dataset import Dataset, FeatureMatrix, Stream
from .errors import ConfigError, DataFormatError, InputError
from .transfer import KernelConfig, TransferConfig, transfer_grads, transfer_loss

CKPT_MAGIC = b"TSRC"
CKPT_VERSION = 1
PARAM_KEYS = ("att_w1", "att_w2", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
LOSS_TERMS = ("class", "smooth", "sparsity", "fc1", "fc2")
CSV_HEADER = "iter,L,L_class,R_smooth,R_sparsity,L_FC1,L_FC2"

_STREAM_CODE = {Stream.RGB: 0, Stream.FLOW: 1}
_ROLE_CODE = {"source": 0, "target": 1}
_LABEL_SUBSET_CODE = 7


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.01
    batch_size: int = 16
    momentum: float = 0.9
    lr_rgb: float = 1e-4
    lr_flow: float = 5e-4
    decay_every: int = 5000
    decay_factor: float = 10.0
    dropout: float = 0.8
    iterations: int = 6000
    seed: int = 0
    attention_mode: str = "softmax"
    attention_enabled: bool = True
    attention_hidden: int = 64
    heads: int = 1
    classifier_hidden: int = 128
    init_scale: float = 1.0
    label_fraction: float = 1.0
    transfer: TransferConfig = field(default_factory=TransferConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("regularizer weights must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must lie in [0, 1)")
        if self.lr_rgb <= 0 or self.lr_flow <= 0:
            raise ConfigError("learning rates must be positive")
        if self.decay_every < 1 or self.decay_factor <= 0:
            raise ConfigError("invalid learning-rate schedule")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout rate must lie in [0, 1)")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.attention_mode not in MODES:
            raise ConfigError(f"unknown attention mode {self.attention_mode!r}")
        if min(self.attention_hidden, self.heads, self.classifier_hidden) < 1:
            raise ConfigError("layer sizes must be >= 1")
        if not (0.0 < self.label_fraction <= 1.0):
            raise ConfigError("label_fraction must lie in (0, 1]")

    def lr_for(self, stream: Stream) -> float:
        return self.lr_rgb if stream == Stream.RGB else self.lr_flow


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    transfer = TransferConfig(**doc.pop("transfer"))
    kernel = KernelConfig(**doc.pop("kernel"))
    return TrainConfig(transfer=transfer, kernel=kernel, **doc)


@dataclass
class Model:
    """One stream's trainable state plus the pooling mode it was built with."""

    attention: AttentionParams
    classifier: ClassifierParams
    stream: Stream
    role: str
    attention_enabled: bool = True
    attention_mode: str = "softmax"

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {
            "att_w1": self.attention.w1,
            "att_w2": self.attention.w2,
            "fc1_w": self.classifier.fc1_w,
            "fc1_b": self.classifier.fc1_b,
            "fc2_w": self.classifier.fc2_w,
            "fc2_b": self.classifier.fc2_b,
        }

    def set_param(self, key: str, value: np.ndarray) -> None:
        target = {"att_w1": (self.attention, "w1"), "att_w2": (self.attention, "w2"),
                  "fc1_w": (self.classifier, "fc1_w"), "fc1_b": (self.classifier, "fc1_b"),
                  "fc2_w": (self.classifier, "fc2_w"), "fc2_b": (self.classifier, "fc2_b")}[key]
        setattr(target[0], target[1], np.asarray(value, dtype=np.float64))


def init_model(d: int, n_classes: int, stream: Stream, role: str, cfg: TrainConfig,
               rng: np.random.Generator) -> Model:
    b, r, h = cfg.attention_hidden, cfg.heads, cfg.classifier_hidden
    s = cfg.init_scale
    att = AttentionParams(
        w1=rng.normal(0.0, s / np.sqrt(d), (b, d)),
        w2=rng.normal(0.0, s / np.sqrt(b), (r, b)),
    )
    cls = ClassifierParams(
        fc1_w=rng.normal(0.0, s * np.sqrt(2.0 / (r * d)), (h, r * d)),
        fc1_b=np.zeros(h),
        fc2_w=rng.normal(0.0, s / np.sqrt(h), (n_classes, h)),
        fc2_b=np.zeros(n_classes),
    )
    return Model(attention=att, classifier=cls, stream=stream, role=role,
                 attention_enabled=cfg.attention_enabled,
                 attention_mode=cfg.attention_mode)


def forward_video(model: Model, x: FeatureMatrix,
                  dropout_mask: np.ndarray | None = None
                  ) -> tuple[AttentionOutput, ClassifierOutput]:
    if model.attention_enabled:
        att = attend(x, model.attention, model.attention_mode)
    else:
        att = uniform_attention(x, model.attention.r)
    return att, classify(att.m, model.classifier, dropout_mask)


@dataclass(frozen=True)
class LossTerms:
    total: float
    class_term: float
    smooth: float
    sparsity: float
    fc1: float
    fc2: float

    def csv_row(self, iteration: int) -> str:
        vals = (self.total, self.class_term, self.smooth, self.sparsity,
                self.fc1, self.fc2)
        return f"{iteration}," + ",".join(repr(v) for v in vals)


def zero_grads(model: Model) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def total_loss(batch: Sequence[tuple[FeatureMatrix, np.ndarray]], model: Model,
               cfg: TrainConfig,
               masks: Sequence[np.ndarray | None] | None = None,
               source_acts: tuple[np.ndarray, np.ndarray] | None = None,
               terms: Sequence[str] = LOSS_TERMS
               ) -> tuple[float, LossTerms, dict[str, np.ndarray]]:
    """Loss over one batch plus analytic gradients for every parameter.

    ``terms`` selects which loss terms contribute (used by the gradient
    certifier to isolate single terms); the full set is the default.
    ``source_acts`` is the frozen source model's (pooled, hidden) batch;
    the transfer terms are dropped when it is absent or disabled.
    """
    if not batch:
        raise InputError("empty batch")
    unknown = set(terms) - set(LOSS_TERMS)
    if unknown:
        raise ConfigError(f"unknown loss terms {sorted(unknown)}")
    if masks is None:
        masks = [None] * len(batch)
    n_batch = len(batch)
    r = model.attention.r

    fwd = [forward_video(model, x, mask) for (x, _), mask in zip(batch, masks)]
    target_m = np.vstack([att.m for att, _ in fwd])
    target_hidden = np.vstack([cls.hidden_clean for _, cls in fwd])

    class_term = sum(class_loss(cls.probs, y) for (_, y), (_, cls)
                     in zip(batch, fwd)) / n_batch
    smooth_term = sum(smooth_reg_direct(att.a[k]) for att, _ in fwd
                      for k in range(r)) / (n_batch * r)
    sparsity_term = sum(sparsity_reg(att.scores[k]) for att, _ in fwd
                        for k in range(r)) / (n_batch * r)

    use_transfer = (source_acts is not None and cfg.transfer.enabled
                    and ("fc1" in terms or "fc2" in terms))
    if use_transfer:
        source_m, source_hidden = source_acts
        kt = transfer_loss(source_m, source_hidden, target_m, target_hidden,
                           cfg.kernel, cfg.transfer.fc2_enabled and "fc2" in terms)
        g_kt_m, g_kt_hidden = transfer_grads(
            source_m, source_hidden, target_m, target_hidden, kt,
            cfg.transfer.fc2_enabled and "fc2" in terms)
        fc1_term = kt.fc1 if "fc1" in terms else 0.0
        fc2_term = kt.fc2
        if "fc1" not in terms:
            g_kt_m = np.zeros_like(g_kt_m)
    else:
        fc1_term = fc2_term = 0.0
        g_kt_m = np.zeros_like(target_m)
        g_kt_hidden = np.zeros_like(target_hidden)

    total = ((class_term if "class" in terms else 0.0)
             + (cfg.alpha * smooth_term if "smooth" in terms else 0.0)
             + (cfg.beta * sparsity_term if "sparsity" in terms else 0.0)
             + fc1_term + fc2_term)

    grads = zero_grads(model)
    for v, ((x, y), (att, cls), mask) in enumerate(zip(batch, fwd, masks)):
        if "class" in terms:
            g_logits = class_loss_grad_logits(cls.probs, y) / n_batch
        else:
            g_logits = np.zeros_like(cls.logits)
        cg = classifier_grads(att.m, model.classifier, cls, g_logits, mask,
                              g_hidden_clean=g_kt_hidden[v])
        grads["fc1_w"] += cg.fc1_w
        grads["fc1_b"] += cg.fc1_b
        grads["fc2_w"] += cg.fc2_w
        grads["fc2_b"] += cg.fc2_b

        g_m = cg.m + g_kt_m[v]
        g_a = np.zeros_like(att.a)
        g_scores = None
        if "smooth" in terms and cfg.alpha != 0.0:
            for k in range(r):
                g_a[k] += cfg.alpha / (n_batch * r) * smooth_reg_grad(att.a[k])
        if "sparsity" in terms and cfg.beta != 0.0:
            if model.attention_mode == "sigmoid" and model.attention_enabled:
                g_scores = np.vstack([
                    cfg.beta / (n_batch * r) * sparsity_reg_grad(att.scores[k])
                    for k in range(r)])
            else:
                for k in range(r):
                    g_a[k] += cfg.beta / (n_batch * r) * sparsity_reg_grad(att.a[k])
        g_w1, g_w2 = attention_grads(x, model.attention, att, g_m=g_m,
                                     g_a=g_a, g_scores=g_scores)
        grads["att_w1"] += g_w1
        grads["att_w2"] += g_w2

    loss_terms = LossTerms(total=total, class_term=class_term,
                           smooth=smooth_term, sparsity=sparsity_term,
                           fc1=fc1_term, fc2=fc2_term)
    return total, loss_terms, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class SgdState:
    velocity: dict[str, np.ndarray]

    @classmethod
    def for_model(cls, model: Model) -> "SgdState":
        return cls(velocity={k: np.zeros_like(v) for k, v in model.params.items()})


def learning_rate(lr0: float, iteration: int, cfg: TrainConfig) -> float:
    return lr0 * cfg.decay_factor ** (-(iteration // cfg.decay_every))


def sgd_step(model: Model, grads: dict[str, np.ndarray], state: SgdState,
             iteration: int, lr0: float, cfg: TrainConfig) -> None:
    lr = learning_rate(lr0, iteration, cfg)
    for key, param in model.params.items():
        v = state.velocity[key]
        v *= cfg.momentum
        v -= lr * grads[key]
        param += v


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def _rng_tree(cfg: TrainConfig, stream: Stream, role: str) -> list[np.random.Generator]:
    ss = np.random.SeedSequence((cfg.seed, _ROLE_CODE[role], _STREAM_CODE[stream]))
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(3)]


def _draw_mask(rng: np.random.Generator, h: int, rate: float) -> np.ndarray | None:
    if rate == 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(h) < keep).astype(np.float64) / keep


def labeled_subset(n_videos: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic index subset carrying labels; shared across streams."""
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, _LABEL_SUBSET_CODE))))
    count = max(1, int(np.ceil(fraction * n_videos)))
    return np.sort(rng.permutation(n_videos)[:count])


def train_source(dataset: Dataset, stream: Stream, cfg: TrainConfig
                 ) -> tuple[Model, list[str]]:
    """Train one stream's source model on the trimmed split, class loss only."""
    cfg.validate()
    records = list(dataset.iter_split("source", stream))
    if not records:
        raise InputError("source split is empty")
    for rec, _ in records:
        if not rec.trimmed:
            raise InputError(f"{rec.video_id}: source training needs trimmed videos")
    src_cfg = replace(cfg, alpha=0.0, beta=0.0,
                      transfer=TransferConfig(enabled=False))
    init_rng, batch_rng, mask_rng = _rng_tree(cfg, stream, "source")
    model = init_model(dataset.feature_dim(stream), dataset.n_classes,
                       stream, "source", cfg, init_rng)
    state = SgdState.for_model(model)
    ys = [label_vector(rec.labels, dataset.n_classes) for rec, _ in records]
    rows = [CSV_HEADER]
    for it in range(cfg.iterations):
        idx = batch_rng.integers(0, len(records), size=cfg.batch_size)
        batch = [(records[i][1], ys[i]) for i in idx]
        masks = [_draw_mask(mask_rng, cfg.classifier_hidden, cfg.dropout)
                 for _ in idx]
        _, terms, grads = total_loss(batch, model, src_cfg, masks)
        sgd_step(model, grads, state, it, cfg.lr_for(stream), cfg)
        rows.append(terms.csv_row(it))
    return model, rows


def train_target(dataset: Dataset, stream: Stream, cfg: TrainConfig,
                 source_model: Model | None = None) -> tuple[Model, list[str]]:
    """Train one stream's target model on the untrimmed train split."""
    cfg.validate()
    records = list(dataset.iter_split("train", stream))
    if not records:
        raise InputError("train split is empty")
    if cfg.label_fraction < 1.0:
        keep = labeled_subset(len(records), cfg.label_fraction, cfg.seed)
        records = [records[i] for i in keep]

    transfer_on = cfg.transfer.enabled
    if transfer_on and source_model is None:
        raise ConfigError("knowledge transfer needs a source model")
    if transfer_on and source_model.stream != stream:
        raise ConfigError("source model belongs to the other stream")

    init_rng, batch_rng, mask_rng = _rng_tree(cfg, stream, "target")
    model = init_model(dataset.feature_dim(stream), dataset.n_classes,
                       stream, "target", cfg, init_rng)
    if transfer_on:
        for key in PARAM_KEYS:
            if source_model.params[key].shape != model.params[key].shape:
                raise ConfigError(
                    f"source/target shape mismatch at {key}: "
                    f"{source_model.params[key].shape} vs {model.params[key].shape}")
        source_records = list(dataset.iter_split("source", stream))
        if not source_records:
            raise InputError("knowledge transfer needs a source split")

    state = SgdState.for_model(model)
    ys = [label_vector(rec.labels, dataset.n_classes) for rec, _ in records]
    rows = [CSV_HEADER]
    for it in range(cfg.iterations):
        idx = batch_rng.integers(0, len(records), size=cfg.batch_size)
        batch = [(records[i][1], ys[i]) for i in idx]
        masks = [_draw_mask(mask_rng, cfg.classifier_hidden, cfg.dropout)
                 for _ in idx]
        source_acts = None
        if transfer_on:
            sidx = batch_rng.integers(0, len(source_records), size=cfg.batch_size)
            src_fwd = [forward_video(source_model, source_records[i][1])
                       for i in sidx]
            source_acts = (np.vstack([att.m for att, _ in src_fwd]),
                           np.vstack([cls.hidden_clean for _, cls in src_fwd]))
        _, terms, grads = total_loss(batch, model, cfg, masks, source_acts)
        sgd_step(model, grads, state, it, cfg.lr_for(stream), cfg)
        rows.append(terms.csv_row(it))
    return model, rows


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, cfg: TrainConfig, iteration: int,
                    path: Path | str) -> None:
    """Write magic + u32 version + u32 header length + JSON header + payload.

    The header is canonical JSON (sorted keys, no whitespace) and parameter
    payloads are raw little-endian float64 in header order, so the file is
    byte-reproducible from the same model state.
    """
    params = model.params
    header = {
        "role": model.role,
        "stream": model.stream.value,
        "iteration": iteration,
        "attention_enabled": model.attention_enabled,
        "attention_mode": model.attention_mode,
        "params": [{"name": k, "shape": list(params[k].shape)} for k in PARAM_KEYS],
        "config": config_to_dict(cfg),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<II", CKPT_VERSION, len(blob))
    out += blob
    for key in PARAM_KEYS:
        out += np.ascontiguousarray(params[key], dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: Path | str) -> tuple[Model, TrainConfig, int]:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CKPT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CKPT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"corrupt checkpoint header: {exc}") from exc
    offset = 12 + hlen
    arrays = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise DataFormatError("checkpoint payload truncated")
        arrays[spec["name"]] = np.frombuffer(
            data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise DataFormatError("checkpoint has trailing bytes")
    missing = set(PARAM_KEYS) - set(arrays)
    if missing:
        raise DataFormatError(f"checkpoint lacks parameters {sorted(missing)}")
    model = Model(
        attention=AttentionParams(w1=arrays["att_w1"], w2=arrays["att_w2"]),
        classifier=ClassifierParams(fc1_w=arrays["fc1_w"], fc1_b=arrays["fc1_b"],
                                    fc2_w=arrays["fc2_w"], fc2_b=arrays["fc2_b"]),
        stream=Stream(header["stream"]),
        role=header["role"],
        attention_enabled=bool(header["attention_enabled"]),
        attention_mode=header["attention_mode"],
    )
    return model, config_from_dict(header["config"]), int(header["iteration"])


# ---------------------------------------------------------------------------
# gradient certification
# ---------------------------------------------------------------------------


def _flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in PARAM_KEYS])


def _assign_flat(model: Model, vec: np.ndarray) -> None:
    offset = 0
    for key in PARAM_KEYS:
        shape = model.params[key].shape
        count = int(np.prod(shape)) if shape else 1
        model.set_param(key, vec[offset:offset + count].reshape(shape))
        offset += count


def certify_gradients(seed: int = 0, trials: int = 3) -> dict[str, float]:
    """Max relative error of each analytic loss-term gradient vs central
    finite differences, over random tiny instances."""
    from .numerics import finite_diff_grad, grad_rel_error

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    worst: dict[str, float] = {}
    for trial in range(trials):
        d = int(rng.integers(2, 9))
        b = int(rng.integers(1, 5))
        h = int(rng.integers(1, 5))
        r = int(rng.integers(1, 3))
        n_classes = int(rng.integers(2, 4))
        mode = ("softmax", "sigmoid")[trial % 2]
        cfg = TrainConfig(
            alpha=0.37, beta=0.53, batch_size=2, dropout=0.0, iterations=1,
            attention_mode=mode, attention_hidden=b, heads=r,
            classifier_hidden=h, seed=seed,
            transfer=TransferConfig(enabled=True, fc2_enabled=True),
            kernel=KernelConfig(sigma=1.3),
        )
        model = init_model(d, n_classes, Stream.RGB, "target", cfg, rng)
        batch = []
        for _ in range(2):
            n = int(rng.integers(2, 7))
            x = FeatureMatrix(rng.uniform(-1.0, 1.0, (d, n)))
            y = label_vector([int(rng.integers(n_classes))], n_classes)
            batch.append((x, y))
        masks = [(rng.random(h) < 0.5).astype(np.float64) / 0.5 for _ in batch]
        source_acts = (rng.uniform(-1.0, 1.0, (3, r * d)),
                       rng.uniform(-1.0, 1.0, (3, h)))

        cases = [("class",), ("smooth",), ("sparsity",), ("fc1",), ("fc2",),
                 LOSS_TERMS]
        for terms in cases:
            name = "total" if terms is LOSS_TERMS else terms[0]
            _, _, grads = total_loss(batch, model, cfg, masks, source_acts, terms)
            analytic = _flatten(grads)
            x0 = _flatten(model.params).copy()

            def f(vec: np.ndarray) -> float:
                _assign_flat(model, vec)
                loss, _, _ = total_loss(batch, model, cfg, masks, source_acts,
                                        terms)
                return loss

            numeric = finite_diff_grad(f, x0.copy())
            _assign_flat(model, x0)
            err = grad_rel_error(analytic, numeric)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
