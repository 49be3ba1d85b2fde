"""Multimodality fusion: weight and sum the trajectory, ego, and visual
streams, attend over the fused tokens with learnable visual queries, and
project the query outputs.

Also owns the visual-feature file format (magic "VFEA") and the seeded
synthetic generator that stands in for a real visual backbone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Parameter, Tensor
from .core import ModalityWeights, VisualFeatures, VisualSource


class WidthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    d_fusion: int = 512
    n_visual_queries: int = 10
    n_blocks: int = 2
    n_heads: int = 8

    def __post_init__(self):
        if self.d_fusion % self.n_heads != 0:
            raise ValueError(f"d_fusion {self.d_fusion} not divisible by n_heads {self.n_heads}")


def init_fusion_params(rng: np.random.Generator, cfg: FusionConfig) -> dict:
    d = cfg.d_fusion
    return {
        "traj_norm": layers.init_layernorm(d),
        "traj_proj": layers.init_linear(rng, d, d),
        "ego_norm": layers.init_layernorm(d),
        "ego_proj": layers.init_linear(rng, d, d),
        "visual_queries": Parameter(rng.normal(0.0, 0.02, size=(cfg.n_visual_queries, d))),
        "blocks": [layers.init_block(rng, d) for _ in range(cfg.n_blocks)],
        "out_proj": layers.init_linear(rng, d, d),
        "out_norm": layers.init_layernorm(d),
    }


def fuse(
    obj_tokens: Tensor,
    ego_token: Tensor,
    visual: Union[VisualFeatures, Tensor, np.ndarray],
    weights: ModalityWeights,
    params: dict,
    cfg: FusionConfig = FusionConfig(),
) -> Tensor:
    """Weighted sum of the three modality streams, one row per visual token.

    Object tokens are normalized, projected, and mean-pooled to a single
    vector (zero when there are no objects); the pooled trajectory and ego
    vectors broadcast across the visual tokens.
    """
    clip = visual.tokens if isinstance(visual, VisualFeatures) else visual
    clip = clip if isinstance(clip, Tensor) else Tensor(np.asarray(clip, dtype=np.float64))
    if clip.shape[-1] != cfg.d_fusion:
        raise WidthMismatch(f"visual width {clip.shape[-1]} != d_fusion {cfg.d_fusion}")
    if obj_tokens.shape[-1] != cfg.d_fusion or ego_token.shape[-1] != cfg.d_fusion:
        raise WidthMismatch(
            f"encoder widths {obj_tokens.shape[-1]}/{ego_token.shape[-1]} != d_fusion {cfg.d_fusion}"
        )

    if obj_tokens.shape[0] == 0:
        f_traj = Tensor(np.zeros((1, cfg.d_fusion)))
    else:
        projected = layers.linear(layers.apply_layernorm(obj_tokens, params["traj_norm"]), params["traj_proj"])
        f_traj = ad.mean(projected, axis=0, keepdims=True)
    f_ego = layers.linear(layers.apply_layernorm(ego_token, params["ego_norm"]), params["ego_proj"])

    fused = ad.add(ad.scalar_mul(f_traj, weights.w_traj), ad.scalar_mul(f_ego, weights.w_ego))
    return ad.add(fused, ad.scalar_mul(clip, weights.w_clip))


def former_forward(fused: Tensor, params: dict, cfg: FusionConfig = FusionConfig()) -> Tensor:
    """Learnable queries attend over the fused tokens; output is always
    (n_visual_queries, d_fusion)."""
    seq = ad.concat([params["visual_queries"], fused], axis=0)
    n_total = seq.shape[0]
    seq = ad.reshape(seq, (1, n_total, cfg.d_fusion))
    for blk in params["blocks"]:
        seq = layers.block(seq, blk, cfg.n_heads)
    queries = seq[0, : cfg.n_visual_queries, :]
    out = layers.linear(queries, params["out_proj"])
    return layers.apply_layernorm(out, params["out_norm"])


# ---------------------------------------------------------------------------
# Visual-feature ingestion

VFEA_MAGIC = b"VFEA"
VFEA_VERSION = 1


def write_vfea(path, tokens: np.ndarray) -> None:
    """Binary token matrix: "VFEA", version u32, n u32, d u32, then f32 data
    (all little-endian)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"expected a 2-D token matrix, got shape {tokens.shape}")
    n, d = tokens.shape
    with open(path, "wb") as fh:
        fh.write(VFEA_MAGIC)
        fh.write(struct.pack("<III", VFEA_VERSION, n, d))
        fh.write(tokens.astype("<f4").tobytes())


def read_vfea(path) -> VisualFeatures:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != VFEA_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    version, n, d = struct.unpack("<III", blob[4:16])
    if version != VFEA_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * n * d
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    tokens = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, d).astype(np.float64)
    return VisualFeatures(tokens=tokens, source=VisualSource.FILE)


def synthetic_visual_features(seed: int, n_tokens: int = 16, d: int = 512) -> VisualFeatures:
    """Deterministic stand-in for backbone features: seeded unit Gaussians."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tokens = rng.normal(0.0, 1.0, size=(n_tokens, d))
    return VisualFeatures(tokens=tokens, source=VisualSource.SYNTHETIC)


def fusion_tensors(params: dict, prefix: str = "") -> dict[str, Tensor]:
    return layers.flatten_params(params, prefix)
