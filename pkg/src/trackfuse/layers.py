"""Transformer building blocks shared by the trajectory encoders and the
query former: pre-norm multi-head self-attention plus a feed-forward
network, each wrapped in a residual connection.

Parameters live in nested plain dicts (name -> Tensor) so checkpointing can
flatten them with dotted paths.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def xavier(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (d_in + d_out))
    return rng.normal(0.0, scale, size=(d_in, d_out))


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> dict:
    return {"w": Parameter(xavier(rng, d_in, d_out)), "b": Parameter(np.zeros(d_out))}


def linear(x: Tensor, p: dict) -> Tensor:
    return ad.add(ad.matmul(x, p["w"]), p["b"])


def init_layernorm(d: int) -> dict:
    return {"scale": Parameter(np.ones(d)), "shift": Parameter(np.zeros(d))}


def apply_layernorm(x: Tensor, p: dict) -> Tensor:
    return ad.layernorm(x, p["scale"], p["shift"])


def init_attention(rng: np.random.Generator, d: int) -> dict:
    return {
        "q": init_linear(rng, d, d),
        "k": init_linear(rng, d, d),
        "v": init_linear(rng, d, d),
        "out": init_linear(rng, d, d),
    }


def attention(x: Tensor, p: dict, n_heads: int) -> Tensor:
    """Multi-head self-attention over (batch, tokens, d) input."""
    b, t, d = x.shape
    dh = d // n_heads

    def split(h: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(h, (b, t, n_heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, p["q"]))
    k = split(linear(x, p["k"]))
    v = split(linear(x, p["v"]))
    scores = ad.scalar_mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    att = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(att, v)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return linear(merged, p["out"])


def init_block(rng: np.random.Generator, d: int, ffn_mult: int = 4) -> dict:
    return {
        "ln1": init_layernorm(d),
        "attn": init_attention(rng, d),
        "ln2": init_layernorm(d),
        "ffn_in": init_linear(rng, d, d * ffn_mult),
        "ffn_out": init_linear(rng, d * ffn_mult, d),
    }


def block(x: Tensor, p: dict, n_heads: int) -> Tensor:
    """Pre-norm transformer block: h = x + MSA(LN(x)); out = h + FFN(LN(h))."""
    h = ad.add(x, attention(apply_layernorm(x, p["ln1"]), p["attn"], n_heads))
    f = linear(ad.gelu(linear(apply_layernorm(h, p["ln2"]), p["ffn_in"])), p["ffn_out"])
    return ad.add(h, f)


def flatten_params(params: dict, prefix: str = "") -> dict[str, Tensor]:
    """Nested param dict -> flat {dotted.name: Tensor} in insertion order."""
    flat: dict[str, Tensor] = {}
    for key, value in params.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_params(value, f"{name}."))
        elif isinstance(value, list):
            for i, item in enumerate(value):
                flat.update(flatten_params(item, f"{name}.{i}."))
        else:
            flat[name] = value
    return flat
