"""Slice embedding, visible/target transformer encoders and the cross-attention masked encoder.

All forward functions accept a leading batch axis: slices ``(B, S, sigma, m)``
map to embeddings ``(B, S, d)``. Parameters live in one flat dict of named
tensors (:class:`EncoderParams`) so the optimizer, momentum update and
checkpoint code can treat them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import Tensor, no_grad, ops
from .slicing import slice_series

VISIBLE = "visible"
TARGET = "target"
DECODER = "decoder"


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    depth_visible: int = 4
    depth_masked: int = 2
    heads: int = 4
    ffn_width: int = 128
    sigma: int = 12
    channels: int = 1
    max_slices: int = 512
    activation: str = "gelu"
    init_std: float = 0.02

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"embedding width {self.d} is not divisible by {self.heads} heads")
        if self.depth_visible < 1 or self.depth_masked < 1:
            raise ValueError("encoder depths must be >= 1")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("sigma", "channels", "max_slices", "ffn_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d, cfg.ffn_width
    return {
        "attn.wq": (d, d), "attn.bq": (d,),
        "attn.wk": (d, d), "attn.bk": (d,),
        "attn.wv": (d, d), "attn.bv": (d,),
        "attn.wo": (d, d), "attn.bo": (d,),
        "ln1.g": (d,), "ln1.b": (d,),
        "ffn.w1": (d, f), "ffn.b1": (f,),
        "ffn.w2": (f, d), "ffn.b2": (d,),
        "ln2.g": (d,), "ln2.b": (d,),
    }


def _init_value(name: str, shape, std: float, rng) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "g":
        return np.ones(shape)
    if leaf.startswith("b"):
        return np.zeros(shape)
    return rng.normal(0.0, std, size=shape)


class EncoderParams:
    """Named parameter arrays for the embedding, the three encoders and the mask token.

    Target-encoder arrays are plain (non-trainable) tensors that mirror the
    visible encoder's names under the ``target.`` prefix.
    """

    def __init__(self, config: EncoderConfig, arrays: dict[str, Tensor]):
        self.config = config
        self.arrays = arrays

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int = 0) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        std = config.init_std
        arrays: dict[str, Tensor] = {}

        def add(name, value, trainable=True):
            arrays[name] = Tensor(value, requires_grad=trainable, name=name)

        add("embed.kernel", rng.normal(0.0, std, size=(config.d, config.channels, config.sigma)))
        add("embed.bias", np.zeros(config.d))
        add("pos", rng.normal(0.0, std, size=(config.max_slices, config.d)))
        add("mask_token", rng.normal(0.0, std, size=config.d))
        shapes = _layer_shapes(config)
        for prefix, depth in ((VISIBLE, config.depth_visible), (DECODER, config.depth_masked)):
            for layer in range(depth):
                for key, shape in shapes.items():
                    name = f"{prefix}.{layer}.{key}"
                    add(name, _init_value(key, shape, std, rng))
        for name in [n for n in arrays if n.startswith(VISIBLE + ".")]:
            add(TARGET + name[len(VISIBLE):], arrays[name].data.copy(), trainable=False)
        return cls(config, arrays)

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[name]

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.arrays.items() if not k.startswith(TARGET + ".")}

    def target(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.arrays.items() if k.startswith(TARGET + ".")}

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.arrays.items()}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {
            k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.arrays.items()})


def embed_slices(slices, params: EncoderParams) -> Tensor:
    """Map every slice independently to a d-vector (kernel width = stride = sigma)."""
    x = slices.data if isinstance(slices, Tensor) else np.asarray(slices, dtype=np.float64)
    cfg = params.config
    if x.ndim < 3 or x.shape[-2:] != (cfg.sigma, cfg.channels):
        raise ValueError(f"slices of shape {x.shape} do not end in (sigma={cfg.sigma}, m={cfg.channels})")
    lead = x.shape[:-3]
    S = x.shape[-3]
    flat = x.reshape(lead + (S * cfg.sigma, cfg.channels))
    return ops.conv1d(flat, params["embed.kernel"], params["embed.bias"], stride=cfg.sigma)


def add_positional(Z: Tensor, positions, params: EncoderParams) -> Tensor:
    """Add the positional row of each slice's *original* index."""
    positions = np.asarray(positions, dtype=np.intp)
    max_s = params.config.max_slices
    if positions.size and (positions.max() >= max_s or positions.min() < 0):
        raise ValueError(
            f"slice position {int(positions.max())} exceeds the positional table (max_slices={max_s}); "
            "raise max_slices or sigma")
    return ops.add(Z, ops.take(params["pos"], positions))


def _attention(xq: Tensor, xkv: Tensor, p: dict, prefix: str, heads: int):
    *lead, n_q, d = xq.shape
    n_k = xkv.shape[-2]
    dh = d // heads
    lead = tuple(lead)

    def split_heads(t, n):
        return ops.transpose(ops.reshape(t, lead + (n, heads, dh)),
                             tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))

    q = split_heads(ops.affine(xq, p[prefix + "wq"], p[prefix + "bq"]), n_q)
    k = split_heads(ops.affine(xkv, p[prefix + "wk"], p[prefix + "bk"]), n_k)
    v = split_heads(ops.affine(xkv, p[prefix + "wv"], p[prefix + "bv"]), n_k)
    nl = len(lead)
    kt = ops.transpose(k, tuple(range(nl + 1)) + (nl + 2, nl + 1))
    scores = ops.mul(ops.matmul(q, kt), 1.0 / math.sqrt(dh))
    weights = ops.softmax(scores)
    ctx = ops.matmul(weights, v)
    ctx = ops.reshape(ops.transpose(ctx, tuple(range(nl)) + (nl + 1, nl, nl + 2)), lead + (n_q, d))
    return ops.affine(ctx, p[prefix + "wo"], p[prefix + "bo"]), weights


def _norm(x: Tensor, p: dict, prefix: str) -> Tensor:
    return ops.add(ops.mul(ops.layer_norm(x), p[prefix + "g"]), p[prefix + "b"])


def _layer(x: Tensor, kv: Tensor | None, p: dict, prefix: str, cfg: EncoderConfig):
    """Post-norm block: x = LN(x + attn(x, kv)); x = LN(x + FFN(x))."""
    attn, weights = _attention(x, x if kv is None else kv, p, prefix + "attn.", cfg.heads)
    x = _norm(ops.add(x, attn), p, prefix + "ln1.")
    act = ops.gelu if cfg.activation == "gelu" else ops.relu
    h = act(ops.affine(x, p[prefix + "ffn.w1"], p[prefix + "ffn.b1"]))
    x = _norm(ops.add(x, ops.affine(h, p[prefix + "ffn.w2"], p[prefix + "ffn.b2"])), p, prefix + "ln2.")
    return x, weights


def _stack(x: Tensor, kv: Tensor | None, params: EncoderParams, prefix: str, depth: int,
           return_attention: bool):
    weights = []
    for layer in range(depth):
        x, w = _layer(x, kv, params.arrays, f"{prefix}.{layer}.", params.config)
        weights.append(w.data)
    return (x, weights) if return_attention else x


def encode_visible(Z_v: Tensor, params: EncoderParams, return_attention: bool = False):
    """Self-attention encoder over visible (or all) embedded slices."""
    if Z_v.shape[-2] < 1:
        raise ValueError("encode_visible needs at least one slice")
    return _stack(Z_v, None, params, VISIBLE, params.config.depth_visible, return_attention)


def encode_target(Z_m: Tensor, params: EncoderParams, return_attention: bool = False):
    """The momentum twin of :func:`encode_visible`; the result is a constant (stop-gradient)."""
    with no_grad():
        out = _stack(Tensor(Z_m.data), None, params, TARGET, params.config.depth_visible, return_attention)
    return out


def mask_queries(masked_positions, params: EncoderParams) -> Tensor:
    """Mask token plus the positional row of each masked index."""
    positions = np.asarray(masked_positions, dtype=np.intp)
    return add_positional(params["mask_token"], positions, params)


def decode_masked(H: Tensor, masked_positions, params: EncoderParams, return_attention: bool = False):
    """Predict representations at the masked positions by cross-attending to ``H``.

    Queries are built only from the mask token and the positional rows, so
    masked slice content never enters this path.
    """
    positions = np.asarray(masked_positions, dtype=np.intp)
    if positions.size == 0 or positions.shape[-1] == 0:
        raise ValueError("decode_masked needs at least one masked position")
    if positions.ndim != H.ndim - 1 or positions.shape[:-1] != H.shape[:-2]:
        raise ValueError(f"masked positions {positions.shape} do not match visible batch {H.shape}")
    queries = mask_queries(positions, params)
    return _stack(queries, H, params, DECODER, params.config.depth_masked, return_attention)


def momentum_update(params: EncoderParams, m: float) -> None:
    """In place: target <- m * target + (1 - m) * visible, elementwise."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    for name, xi in params.target().items():
        theta = params[VISIBLE + name[len(TARGET):]]
        if theta.shape != xi.shape:
            raise ValueError(f"{name}: target shape {xi.shape} != online shape {theta.shape}")
        xi.data = m * xi.data + (1.0 - m) * theta.data


def slice_batch(series_list, sigma: int) -> np.ndarray:
    """Stack equal-length series into ``(B, S, sigma, m)`` slices."""
    return np.stack([slice_series(s, sigma).slices for s in series_list])


def extract_features(series, params: EncoderParams) -> np.ndarray:
    """Mean-pooled visible-encoder output over all slices of one series (no masking)."""
    return extract_features_batch([series], params)[0]


def extract_features_batch(series_list, params: EncoderParams, batch_size: int = 256) -> np.ndarray:
    """Features for many series; series are grouped by slice count so each group runs batched."""
    cfg = params.config
    sliced = [slice_series(s, cfg.sigma).slices for s in series_list]
    out = np.empty((len(sliced), cfg.d))
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(sliced):
        groups.setdefault(s.shape[0], []).append(i)
    with no_grad():
        for S, members in sorted(groups.items()):
            for start in range(0, len(members), batch_size):
                idx = members[start:start + batch_size]
                x = np.stack([sliced[i] for i in idx])
                Z = add_positional(embed_slices(x, params), np.arange(S), params)
                H = encode_visible(Z, params)
                out[idx] = H.data.mean(axis=-2)
    return out
