"""Trajectory encoder: flattened track -> embedding via linear projection,
per-slot positional embedding, layer norm, a class token, and a small
transformer, finished by a shared head that maps into the fusion width.

Two independent parameter instances (object encoder, ego encoder) are the
default configuration; a single shared instance reproduces the ablation
variant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Parameter, Tensor
from .core import EgoTrajectory, TrackContext, Trajectory


class EmptyTrajectory(ValueError):
    pass


class TooManyObjects(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    window_len: int = 5
    sample_dim: int = 5  # (x, y, z, v_x, v_y)
    d_enc: int = 256
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_slots: int = 7  # 6 object slots + 1 ego slot
    d_fusion: int = 512
    # fixed per-channel input scale bringing meters (positions span tens of
    # meters) and meters/second (speeds reach ~15 m/s) to comparable ranges
    # before the projection; a diagonal reparameterization of proj
    sample_scale: tuple = (0.05, 0.05, 0.05, 0.2, 0.2)

    def __post_init__(self):
        if self.d_enc % self.n_heads != 0:
            raise ValueError(f"d_enc {self.d_enc} not divisible by n_heads {self.n_heads}")
        if len(self.sample_scale) != self.sample_dim:
            raise ValueError("sample_scale must have one entry per sample channel")
        object.__setattr__(self, "sample_scale", tuple(float(s) for s in self.sample_scale))

    @property
    def input_dim(self) -> int:
        return self.window_len * self.sample_dim

    @property
    def ego_slot(self) -> int:
        return self.max_slots - 1


def init_encoder_params(rng: np.random.Generator, cfg: EncoderConfig) -> dict:
    return {
        "proj": layers.init_linear(rng, cfg.input_dim, cfg.d_enc),
        "pos_embed": Parameter(rng.normal(0.0, 0.02, size=(cfg.max_slots, cfg.d_enc))),
        "class_token": Parameter(rng.normal(0.0, 0.02, size=(cfg.d_enc,))),
        "norm": layers.init_layernorm(cfg.d_enc),
        "layers": [layers.init_block(rng, cfg.d_enc, cfg.ffn_mult) for _ in range(cfg.n_layers)],
        "head": layers.init_linear(rng, cfg.d_enc, cfg.d_fusion),
    }


def _sample_velocity(samples, i) -> tuple[float, float]:
    s = samples[i]
    if s.velocity is not None:
        return s.velocity
    # reconstruct by finite differencing; a lone sample is treated as at rest
    if len(samples) == 1:
        return (0.0, 0.0)
    j = i - 1 if i > 0 else i + 1
    other = samples[j]
    dt = s.timestamp - other.timestamp
    return (
        (s.position[0] - other.position[0]) / dt,
        (s.position[1] - other.position[1]) / dt,
    )


def flatten_trajectory(
    t: Union[Trajectory, EgoTrajectory], cfg: EncoderConfig = EncoderConfig()
) -> np.ndarray:
    """Time-ordered [P, V, P, V, ...] vector of length window_len * sample_dim.

    Trajectories shorter than the window are front-padded with repeats of
    the earliest sample (a stand-in for "no earlier motion").
    """
    samples = t.samples
    if len(samples) == 0:
        raise EmptyTrajectory("trajectory has no samples")
    samples = samples[-cfg.window_len :]
    pad = cfg.window_len - len(samples)
    rows = []
    for i in range(len(samples)):
        vx, vy = _sample_velocity(samples, i)
        rows.append([*samples[i].position, vx, vy])
    out = [rows[0]] * pad + rows
    return np.asarray(out, dtype=np.float64).reshape(-1)


def encode_batch(
    flat_inputs: np.ndarray, slots: np.ndarray, params: dict, cfg: EncoderConfig
) -> Tensor:
    """Encode a batch of flattened trajectories occupying the given slots.

    Returns a (batch, d_fusion) tensor of class-token embeddings passed
    through the head.
    """
    b = flat_inputs.shape[0]
    if b == 0:
        return Tensor(np.zeros((0, cfg.d_fusion)))
    scale = np.tile(np.asarray(cfg.sample_scale, dtype=np.float64), cfg.window_len)
    x = Tensor(np.asarray(flat_inputs, dtype=np.float64) * scale)
    z = layers.linear(x, params["proj"])
    z = ad.add(z, ad.embedding_lookup(params["pos_embed"], np.asarray(slots)))
    z = layers.apply_layernorm(z, params["norm"])
    cls = ad.broadcast_to(ad.reshape(params["class_token"], (1, 1, cfg.d_enc)), (b, 1, cfg.d_enc))
    seq = ad.concat([cls, ad.reshape(z, (b, 1, cfg.d_enc))], axis=1)
    for blk in params["layers"]:
        seq = layers.block(seq, blk, cfg.n_heads)
    cls_out = seq[:, 0, :]
    return layers.linear(cls_out, params["head"])


def encode_objects(ctx: TrackContext, params: dict, cfg: EncoderConfig = EncoderConfig()) -> Tensor:
    """Encode every key object of a context; one output row per object."""
    k = len(ctx.key_objects)
    if k > cfg.max_slots - 1:
        raise TooManyObjects(f"{k} objects exceed the {cfg.max_slots - 1} object slots")
    if k == 0:
        return Tensor(np.zeros((0, cfg.d_fusion)))
    flat = np.stack([flatten_trajectory(t, cfg) for t in ctx.key_objects])
    return encode_batch(flat, np.arange(k), params, cfg)


def encode_ego(ego: EgoTrajectory, params: dict, cfg: EncoderConfig = EncoderConfig()) -> Tensor:
    """Encode the ego trajectory in its dedicated slot; shape (1, d_fusion)."""
    if len(ego.samples) == 0:
        raise EmptyTrajectory("ego trajectory has no samples")
    flat = flatten_trajectory(ego, cfg)[None, :]
    return encode_batch(flat, np.array([cfg.ego_slot]), params, cfg)


def encoder_tensors(params: dict, prefix: str = "") -> dict[str, Tensor]:
    return layers.flatten_params(params, prefix)
