"""Checkpoint persistence for encoder (and optional head) parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrayio
from .arrayio import ContainerError, ShapeMismatch, TruncatedPayload, VersionMismatch
from .core import Tensor
from .encoders import EncoderConfig, EncoderParams
from .sra import SRAConfig, SRAParams

FORMAT_VERSION = 1

__all__ = [
    "Checkpoint",
    "ContainerError",
    "FORMAT_VERSION",
    "ShapeMismatch",
    "TruncatedPayload",
    "VersionMismatch",
    "adapt_channels",
    "load_checkpoint",
    "save_checkpoint",
]


@dataclass
class Checkpoint:
    encoder: EncoderParams
    history: list[float] = field(default_factory=list)
    seed: int = 0
    pretrain_config: dict = field(default_factory=dict)
    normalization: dict = field(default_factory=dict)
    head: SRAParams | None = None
    head_info: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"encoder/{k}": v for k, v in self.encoder.numpy().items()}
        if self.head is not None:
            out.update({f"head/{k}": v for k, v in self.head.numpy().items()})
        return out

    def meta(self) -> dict:
        meta = {
            "encoder_config": self.encoder.config.to_dict(),
            "history": [float(h) for h in self.history],
            "seed": int(self.seed),
            "pretrain_config": self.pretrain_config,
            "normalization": self.normalization,
            "tags": self.tags,
        }
        if self.head is not None:
            meta["head"] = {"p": self.head.p, "config": _sra_dict(self.head.config), **self.head_info}
        return meta


def _sra_dict(cfg: SRAConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    arrayio.save(path, ckpt.arrays(), ckpt.meta(), FORMAT_VERSION)
    return Path(path)


def _expect(arrays: dict, expected: dict[str, tuple], prefix: str) -> None:
    have = {k[len(prefix):] for k in arrays if k.startswith(prefix)}
    if have != set(expected):
        missing = sorted(set(expected) - have)[:3]
        extra = sorted(have - set(expected))[:3]
        raise ShapeMismatch(f"{prefix} arrays do not match config (missing {missing}, unexpected {extra})")
    for k, shape in expected.items():
        if arrays[prefix + k].shape != tuple(shape):
            raise ShapeMismatch(f"{prefix}{k}: stored shape {arrays[prefix + k].shape}, config implies {shape}")


def load_checkpoint(path) -> Checkpoint:
    """Load and validate; raises VersionMismatch, TruncatedPayload or ShapeMismatch."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    arrays, meta = arrayio.load(p, FORMAT_VERSION)
    enc_cfg = EncoderConfig(**meta["encoder_config"])
    template = EncoderParams.initialize(enc_cfg)
    _expect(arrays, {k: v.shape for k, v in template.arrays.items()}, "encoder/")
    enc = EncoderParams(enc_cfg, {
        k: Tensor(arrays["encoder/" + k], requires_grad=not k.startswith("target."), name=k)
        for k in template.arrays})
    head = None
    head_info = {}
    if "head" in meta:
        info = dict(meta["head"])
        p_feat = info.pop("p")
        cfg = SRAConfig(**info.pop("config"))
        head_template = SRAParams.initialize(p_feat, cfg)
        _expect(arrays, {k: v.shape for k, v in head_template.arrays.items()}, "head/")
        head = SRAParams(p_feat, cfg, {k: Tensor(arrays["head/" + k], requires_grad=True, name=k)
                                       for k in head_template.arrays})
        head_info = info
    return Checkpoint(enc, meta["history"], meta["seed"], meta["pretrain_config"], meta["normalization"],
                      head, head_info, meta.get("tags", {}))


def adapt_channels(params: EncoderParams, channels: int) -> EncoderParams:
    """Re-target the slice embedding to a different channel count.

    New input channel ``i`` stands in for every source channel ``j`` with
    ``j % channels == i``; the kernel slices of those source channels are
    summed, which is exactly the source embedding of the input replicated
    cyclically across the source channels.
    """
    src = params.config.channels
    if channels == src:
        return params
    if channels < 1:
        raise ValueError("channel count must be >= 1")
    from dataclasses import replace
    cfg = replace(params.config, channels=channels)
    out = params.copy()
    out.config = cfg
    K = params["embed.kernel"].data
    newK = np.zeros((K.shape[0], channels, K.shape[2]))
    for j in range(src):
        newK[:, j % channels, :] += K[:, j, :]
    out.arrays["embed.kernel"] = Tensor(newK, requires_grad=True, name="embed.kernel")
    return out
