"""Proxy pretraining of the trajectory encoders.

The encoders are supervised directly on the QA corpus attributes (average
speed, acceleration status, relative direction, future position) through
small linear heads; the loss is the unit-weighted sum of two MSE and two
cross-entropy terms. Optimization is decoupled-weight-decay Adam with linear
warmup followed by half-cycle cosine decay.

Also owns the checkpoint format used by the ``encode`` CLI path.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import annotate, autodiff as ad, layers, query_former, scenegen, track_context, traj_encoder
from .autodiff import Tensor
from .core import ACCEL_ANSWERS, DIRECTION_ANSWERS, EgoTrajectory, Pose, QAItem, Trajectory
from .geometry import world_to_ego
from .query_former import FusionConfig
from .scenegen import NoiseConfig, Scene, child_seed
from .track_context import SelectionConfig
from .traj_encoder import EncoderConfig


class CorpusEmpty(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


class ManifestMismatch(ValueError):
    pass


class IoFailure(OSError):
    pass


MODE_OBJECT = "pretrain_object"
MODE_EGO = "pretrain_ego"
MODE_BOTH = "pretrain_both"


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-4
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    total_epochs: int = 20  # desk-scale default; the full schedule is 145 + 5 warmup
    batch_size: int = 32
    seed: int = 0
    mix_prob: float = 0.25
    mode: str = MODE_BOTH
    separate_encoders: bool = True
    val_fraction: float = 0.1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ValueError("warmup_epochs must not exceed total_epochs")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.mode not in (MODE_OBJECT, MODE_EGO, MODE_BOTH):
            raise ValueError(f"unknown mode {self.mode!r}")


#: Paper-style schedule for the (out-of-scope) fine-tuning stage; exists so the
#: schedule math is exercised. The published rate "10e-4" is ambiguous, so
#: both readings are provided under explicit names.
FINETUNE_PRESET_LITERAL = TrainConfig(
    base_lr=1e-3, weight_decay=0.02, warmup_epochs=1, total_epochs=4
)
FINETUNE_PRESET_TYPO = TrainConfig(
    base_lr=1e-4, weight_decay=0.02, warmup_epochs=1, total_epochs=4
)
FULL_PRETRAIN_PRESET = TrainConfig(warmup_epochs=5, total_epochs=150)


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Linear warmup to base_lr, then half-cycle cosine decay to zero."""
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warmup:
        return cfg.base_lr * step / warmup
    span = max(total - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay is applied to every parameter on every step, independent of the
    gradient (including a zero gradient).
    """

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data -= lr * self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# Model container


def _init_heads(rng: np.random.Generator, d_in: int, with_direction: bool) -> dict:
    heads = {
        "speed": layers.init_linear(rng, d_in, 1),
        "accel": layers.init_linear(rng, d_in, 3),
        "future": layers.init_linear(rng, d_in, 2),
    }
    if with_direction:
        heads["direction"] = layers.init_linear(rng, d_in, 3)
    return heads


@dataclass
class FrontEndModel:
    """Everything the front end learns: the two encoder instances, the
    query-former fusion parameters, and the proxy heads."""

    encoder_cfg: EncoderConfig
    fusion_cfg: FusionConfig
    separate_encoders: bool
    object_encoder: dict
    ego_encoder: dict  # same dict object as object_encoder when shared
    fusion: dict
    object_heads: dict
    ego_heads: dict

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        out.update(layers.flatten_params(self.object_encoder, "object_encoder."))
        if self.separate_encoders:
            out.update(layers.flatten_params(self.ego_encoder, "ego_encoder."))
        out.update(layers.flatten_params(self.fusion, "fusion."))
        out.update(layers.flatten_params(self.object_heads, "object_heads."))
        out.update(layers.flatten_params(self.ego_heads, "ego_heads."))
        return out


def init_model(
    seed: int,
    encoder_cfg: EncoderConfig = EncoderConfig(),
    fusion_cfg: FusionConfig = FusionConfig(),
    separate_encoders: bool = True,
) -> FrontEndModel:
    def rng(tag: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(child_seed(seed, tag)))

    object_encoder = traj_encoder.init_encoder_params(rng(1), encoder_cfg)
    ego_encoder = (
        traj_encoder.init_encoder_params(rng(2), encoder_cfg)
        if separate_encoders
        else object_encoder
    )
    return FrontEndModel(
        encoder_cfg=encoder_cfg,
        fusion_cfg=fusion_cfg,
        separate_encoders=separate_encoders,
        object_encoder=object_encoder,
        ego_encoder=ego_encoder,
        fusion=query_former.init_fusion_params(rng(3), fusion_cfg),
        object_heads=_init_heads(rng(4), encoder_cfg.d_fusion, with_direction=True),
        ego_heads=_init_heads(rng(5), encoder_cfg.d_fusion, with_direction=False),
    )


# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"TFCK"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]


def checkpoint_from_model(model: FrontEndModel, step: int = 0, metrics: Optional[dict] = None,
                          config_echo: Optional[dict] = None) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in model.named_tensors().items()}
    manifest = {
        "encoder_cfg": asdict(model.encoder_cfg),
        "fusion_cfg": asdict(model.fusion_cfg),
        "separate_encoders": model.separate_encoders,
        "step": step,
        "metrics": metrics or {},
        "config": config_echo or {},
    }
    # canonicalize through JSON so a manifest compares equal to its own
    # round trip (tuples in the config dataclasses become lists)
    return Checkpoint(manifest=json.loads(json.dumps(manifest)), tensors=tensors)


def save(ckpt: Checkpoint, path) -> None:
    table = []
    offset = 0
    blobs = []
    for name, arr in ckpt.tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = dict(ckpt.manifest)
    manifest["tensors"] = table
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<IQ", CKPT_VERSION, len(payload)))
            fh.write(payload)
            for blob in blobs:
                fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(raw) < 16 or raw[:4] != CKPT_MAGIC:
        raise ManifestMismatch(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack("<IQ", raw[4:16])
    if version != CKPT_VERSION:
        raise ManifestMismatch(f"{path}: unsupported version {version}")
    if len(raw) < 16 + mlen:
        raise ManifestMismatch(f"{path}: truncated manifest")
    manifest = json.loads(raw[16 : 16 + mlen].decode("utf-8"))
    blob = raw[16 + mlen :]
    tensors = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise ManifestMismatch(f"{path}: truncated blob for tensor {entry['name']}")
        arr = np.frombuffer(blob[start : start + nbytes], dtype="<f8").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    manifest = {k: v for k, v in manifest.items() if k != "tensors"}
    return Checkpoint(manifest=manifest, tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint) -> FrontEndModel:
    """Rebuild a model with the checkpoint's configuration and load every
    tensor, verifying shapes tensor by tensor."""
    enc_cfg = EncoderConfig(**ckpt.manifest["encoder_cfg"])
    fus_cfg = FusionConfig(**ckpt.manifest["fusion_cfg"])
    model = init_model(0, enc_cfg, fus_cfg, bool(ckpt.manifest["separate_encoders"]))
    load_into_model(model, ckpt)
    return model


def load_into_model(model: FrontEndModel, ckpt: Checkpoint) -> None:
    named = model.named_tensors()
    for name, t in named.items():
        if name not in ckpt.tensors:
            raise ManifestMismatch(f"missing tensor {name}")
        arr = ckpt.tensors[name]
        if tuple(arr.shape) != t.data.shape:
            raise ManifestMismatch(
                f"tensor {name}: checkpoint shape {tuple(arr.shape)} != model shape {t.data.shape}"
            )
        t.data = arr.copy()


# ---------------------------------------------------------------------------
# Training data assembly

_ACCEL_INDEX = {name: i for i, name in enumerate(ACCEL_ANSWERS)}
_DIR_INDEX = {name: i for i, name in enumerate(DIRECTION_ANSWERS)}


@dataclass
class ObjectExample:
    slot: int
    flat_clean: np.ndarray
    world_track: Trajectory  # windowed, world frame; noise applied here
    speed: float
    accel: int
    direction: int
    future: np.ndarray  # (2,) ego-relative


@dataclass
class EgoExample:
    flat_clean: np.ndarray
    speed: float
    accel: int
    future: np.ndarray


@dataclass
class ContextGroup:
    scene_id: str
    frame: int
    ego_pose: Pose
    objects: list[ObjectExample]
    ego: EgoExample


def _future_rel(track, ego_pose: Pose, dt: float) -> np.ndarray:
    fx, fy = annotate.predict_future(track, dt)
    rel = world_to_ego(np.array([fx, fy, 0.0]), ego_pose)
    return rel[:2]


def build_context_groups(
    corpus: Sequence[QAItem],
    scenes: dict[str, Scene],
    cfg: TrainConfig,
    annotate_cfg: annotate.AnnotateConfig = annotate.AnnotateConfig(),
) -> list[ContextGroup]:
    """One training context per (scene, frame) referenced by the corpus,
    with attribute targets derived from the clean tracks."""
    frames = sorted({(item.scene_id, int(item.frame_id)) for item in corpus})
    groups = []
    for scene_id, frame in frames:
        scene = scenes[scene_id]
        tracks = scene.tracks_up_to(frame)
        ego = scene.ego_up_to(frame)
        ctx = track_context.build_context(tracks, ego, None, scene.cameras, cfg.selection)
        ego_pose = ego.current_pose
        window = cfg.selection.window_len
        objects = []
        for slot, rel in enumerate(ctx.key_objects):
            obj = scene.object_by_id(rel.track_id)
            world = Trajectory(
                rel.track_id,
                obj.trajectory.class_label,
                obj.trajectory.samples[: frame + 1][-window:],
                obj.trajectory.confidence,
            )
            objects.append(
                ObjectExample(
                    slot=slot,
                    flat_clean=traj_encoder.flatten_trajectory(rel, cfg.encoder),
                    world_track=world,
                    speed=annotate.avg_speed(world),
                    accel=_ACCEL_INDEX[annotate.accel_status(world, annotate_cfg.accel_eps)],
                    direction=_DIR_INDEX[
                        annotate.relative_direction(
                            world, ego, annotate_cfg.angle_thresh_deg, annotate_cfg.still_thresh
                        )
                    ],
                    future=_future_rel(world, ego_pose, annotate_cfg.predict_dt),
                )
            )
        ego_window = EgoTrajectory(ego.samples[-window:], ego.current_pose)
        ego_example = EgoExample(
            flat_clean=traj_encoder.flatten_trajectory(ctx.ego, cfg.encoder),
            speed=annotate.avg_speed(ego_window),
            accel=_ACCEL_INDEX[annotate.accel_status(ego_window, annotate_cfg.accel_eps)],
            future=_future_rel(ego_window, ego_pose, annotate_cfg.predict_dt),
        )
        groups.append(ContextGroup(scene_id, frame, ego_pose, objects, ego_example))
    return groups


def _noisy_flat(ex: ObjectExample, group: ContextGroup, noise: NoiseConfig,
                rng: np.random.Generator, enc_cfg: EncoderConfig) -> np.ndarray:
    noisy = scenegen.inject_tracker_noise(ex.world_track, noise, rng)
    rel = track_context.to_ego_frame_trajectory(noisy, group.ego_pose)
    return traj_encoder.flatten_trajectory(rel, enc_cfg)


def _epoch_arrays(groups: Sequence[ContextGroup], cfg: TrainConfig,
                  rng: np.random.Generator, mix_prob: float):
    """Materialize this epoch's example arrays, applying tracker noise to a
    mix_prob fraction of contexts."""
    obj_x, obj_slot, obj_speed, obj_accel, obj_dir, obj_fut = [], [], [], [], [], []
    ego_x, ego_speed, ego_accel, ego_fut = [], [], [], []
    for group in groups:
        noisy = mix_prob > 0 and rng.random() < mix_prob
        for ex in group.objects:
            flat = _noisy_flat(ex, group, cfg.noise, rng, cfg.encoder) if noisy else ex.flat_clean
            obj_x.append(flat)
            obj_slot.append(ex.slot)
            obj_speed.append(ex.speed)
            obj_accel.append(ex.accel)
            obj_dir.append(ex.direction)
            obj_fut.append(ex.future)
        ego_x.append(group.ego.flat_clean)
        ego_speed.append(group.ego.speed)
        ego_accel.append(group.ego.accel)
        ego_fut.append(group.ego.future)
    obj = {
        "x": np.asarray(obj_x) if obj_x else np.zeros((0, cfg.encoder.input_dim)),
        "slot": np.asarray(obj_slot, dtype=np.intp),
        "speed": np.asarray(obj_speed, dtype=float),
        "accel": np.asarray(obj_accel, dtype=np.intp),
        "direction": np.asarray(obj_dir, dtype=np.intp),
        "future": np.asarray(obj_fut, dtype=float) if obj_fut else np.zeros((0, 2)),
    }
    ego = {
        "x": np.asarray(ego_x),
        "slot": np.full(len(ego_x), cfg.encoder.ego_slot, dtype=np.intp),
        "speed": np.asarray(ego_speed, dtype=float),
        "accel": np.asarray(ego_accel, dtype=np.intp),
        "future": np.asarray(ego_fut, dtype=float),
    }
    return obj, ego


def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = ad.sub(pred, Tensor(target))
    return ad.mean(ad.mul(diff, diff))


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = ad.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = ad.sum_(ad.mul(logp, Tensor(onehot)), axis=-1)
    return ad.scalar_mul(ad.mean(picked), -1.0)


def _head_losses(out: Tensor, heads: dict, batch: dict, with_direction: bool) -> dict[str, Tensor]:
    losses = {
        "speed": _mse(layers.linear(out, heads["speed"]), batch["speed"][:, None]),
        "accel": _cross_entropy(layers.linear(out, heads["accel"]), batch["accel"]),
        "future": _mse(layers.linear(out, heads["future"]), batch["future"]),
    }
    if with_direction:
        losses["direction"] = _cross_entropy(layers.linear(out, heads["direction"]), batch["direction"])
    return losses


def _batch_slice(arrays: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in arrays.items()}


def trainable_tensors(model: FrontEndModel, mode: str) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    if mode in (MODE_OBJECT, MODE_BOTH):
        out.update(layers.flatten_params(model.object_encoder, "object_encoder."))
        out.update(layers.flatten_params(model.object_heads, "object_heads."))
    if mode in (MODE_EGO, MODE_BOTH):
        prefix = "ego_encoder." if model.separate_encoders else "object_encoder."
        out.update(layers.flatten_params(model.ego_encoder, prefix))
        out.update(layers.flatten_params(model.ego_heads, "ego_heads."))
    return out


def evaluate(model: FrontEndModel, groups: Sequence[ContextGroup], cfg: TrainConfig,
             noisy: bool = False, noise_seed: int = 0) -> dict[str, float]:
    """Attribute metrics on a set of contexts; optionally with tracker noise
    injected into every context (fixed seed, so runs are comparable)."""
    rng = np.random.Generator(np.random.PCG64(child_seed(noise_seed, 0xE7A1)))
    obj, ego = _epoch_arrays(groups, cfg, rng, mix_prob=1.0 if noisy else 0.0)
    metrics: dict[str, float] = {}
    total_loss = 0.0
    if len(obj["x"]):
        out = traj_encoder.encode_batch(obj["x"], obj["slot"], model.object_encoder, cfg.encoder)
        losses = _head_losses(out, model.object_heads, obj, with_direction=True)
        speed_pred = layers.linear(out, model.object_heads["speed"]).data[:, 0]
        accel_pred = layers.linear(out, model.object_heads["accel"]).data.argmax(axis=1)
        dir_pred = layers.linear(out, model.object_heads["direction"]).data.argmax(axis=1)
        fut_pred = layers.linear(out, model.object_heads["future"]).data
        metrics["accel_accuracy"] = float((accel_pred == obj["accel"]).mean())
        metrics["direction_accuracy"] = float((dir_pred == obj["direction"]).mean())
        metrics["speed_mae"] = float(np.abs(speed_pred - obj["speed"]).mean())
        metrics["future_mae"] = float(
            np.linalg.norm(fut_pred - obj["future"], axis=1).mean()
        )
        total_loss += sum(l.item() for l in losses.values())
    if len(ego["x"]):
        out = traj_encoder.encode_batch(ego["x"], ego["slot"], model.ego_encoder, cfg.encoder)
        losses = _head_losses(out, model.ego_heads, ego, with_direction=False)
        metrics["ego_speed_mae"] = float(
            np.abs(layers.linear(out, model.ego_heads["speed"]).data[:, 0] - ego["speed"]).mean()
        )
        total_loss += sum(l.item() for l in losses.values())
    metrics["val_loss"] = total_loss
    return metrics


def pretrain(
    corpus: Sequence[QAItem],
    scenes: dict[str, Scene],
    cfg: TrainConfig = TrainConfig(),
) -> tuple[Checkpoint, list[dict]]:
    """Train the encoders and proxy heads on a QA corpus; deterministic for a
    fixed seed on one thread. Returns the checkpoint and the training log."""
    if not corpus:
        raise CorpusEmpty("QA corpus is empty")
    groups = build_context_groups(corpus, scenes, cfg)
    if not groups:
        raise CorpusEmpty("corpus references no usable contexts")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(len(groups))
    n_val = max(1, int(round(len(groups) * cfg.val_fraction))) if len(groups) > 1 else 0
    val_groups = [groups[i] for i in order[:n_val]]
    train_groups = [groups[i] for i in order[n_val:]]

    model = init_model(cfg.seed, cfg.encoder, cfg.fusion, cfg.separate_encoders)
    params = trainable_tensors(model, cfg.mode)
    optimizer = AdamW(params, weight_decay=cfg.weight_decay)

    n_obj = sum(len(g.objects) for g in train_groups)
    n_ego = len(train_groups)
    per_epoch_examples = n_obj if cfg.mode != MODE_EGO else n_ego
    steps_per_epoch = max(1, math.ceil(per_epoch_examples / cfg.batch_size))

    log: list[dict] = []
    step = 0
    t0 = time.monotonic()
    for _epoch in range(cfg.total_epochs):
        obj, ego = _epoch_arrays(train_groups, cfg, rng, cfg.mix_prob)
        obj_order = rng.permutation(len(obj["x"]))
        ego_order = rng.permutation(len(ego["x"]))
        n_ego_batches = max(1, math.ceil(len(ego_order) / cfg.batch_size))
        for b in range(steps_per_epoch):
            optimizer.zero_grad()
            losses: dict[str, Tensor] = {}
            if cfg.mode in (MODE_OBJECT, MODE_BOTH) and len(obj_order):
                idx = obj_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                if len(idx):
                    batch = _batch_slice(obj, idx)
                    out = traj_encoder.encode_batch(batch["x"], batch["slot"], model.object_encoder, cfg.encoder)
                    for k, v in _head_losses(out, model.object_heads, batch, True).items():
                        losses[f"object_{k}"] = v
            if cfg.mode in (MODE_EGO, MODE_BOTH) and len(ego_order):
                eb = b % n_ego_batches
                idx = ego_order[eb * cfg.batch_size : (eb + 1) * cfg.batch_size]
                if len(idx):
                    batch = _batch_slice(ego, idx)
                    out = traj_encoder.encode_batch(batch["x"], batch["slot"], model.ego_encoder, cfg.encoder)
                    for k, v in _head_losses(out, model.ego_heads, batch, False).items():
                        losses[f"ego_{k}"] = v
            if not losses:
                continue
            total = None
            for v in losses.values():
                total = v if total is None else ad.add(total, v)
            loss_value = total.item()
            if not math.isfinite(loss_value):
                raise NonFiniteLoss(step)
            ad.backward(total)
            lr = lr_at(step, cfg, steps_per_epoch)
            optimizer.step(lr)
            entry = {"step": step, "lr": lr, "loss": loss_value}
            entry.update({f"loss_{k}": v.item() for k, v in losses.items()})
            entry["wall_time"] = time.monotonic() - t0
            log.append(entry)
            step += 1

    metrics = evaluate(model, val_groups or train_groups, cfg, noisy=False)
    ckpt = checkpoint_from_model(
        model, step=step, metrics=metrics, config_echo=_config_echo(cfg)
    )
    return ckpt, log


def _config_echo(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def write_log(path, log: Sequence[dict]) -> None:
    from .core import dumps_record

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in log:
            fh.write(dumps_record(entry) + "\n")
