"""Masked representation regression: align decoupled-encoder predictions with momentum-target views."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Adam, Tape, ops
from .encoders import (
    EncoderConfig,
    EncoderParams,
    add_positional,
    decode_masked,
    embed_slices,
    encode_target,
    encode_visible,
    momentum_update,
    slice_batch,
)
from .slicing import epoch_seed, sample_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 32
    mask_ratio: float = 0.6
    delta: float = 2.0
    momentum: float = 0.99
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    resample_masks: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"Huber threshold must be > 0, got {self.delta}")
        if not 0 <= self.mask_ratio < 1:
            raise ValueError(f"mask ratio must lie in [0, 1), got {self.mask_ratio}")
        if not 0 <= self.momentum <= 1:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch_size >= 1 required")


def huber_align_loss(pred, target, delta: float = 2.0):
    """Mean Huber penalty on ``target - pred``; only ``pred`` should carry gradient."""
    return ops.huber(pred, target, delta)


def masked_views(slices: np.ndarray, visible_idx: np.ndarray, masked_idx: np.ndarray, params: EncoderParams):
    """Predicted and target representations of the masked slices.

    ``slices`` is ``(B, S, sigma, m)``; index arrays are ``(B, S_v)`` and
    ``(B, S_m)`` of original slice positions. Returns ``(F, targets)``.
    """
    S = slices.shape[1]
    Z = add_positional(embed_slices(slices, params), np.arange(S), params)
    H = encode_visible(ops.gather_rows(Z, visible_idx), params)
    F = decode_masked(H, masked_idx, params)
    targets = encode_target(ops.gather_rows(Z, masked_idx), params)
    return F, targets


def draw_masks(n_subjects: int, S: int, ratio: float, seeds) -> tuple[np.ndarray, np.ndarray]:
    plans = [sample_mask(S, ratio, rng=np.random.default_rng(s)) for s in seeds]
    return (np.stack([p.visible_idx for p in plans]).reshape(n_subjects, -1),
            np.stack([p.masked_idx for p in plans]).reshape(n_subjects, -1))


def pretrain_step(slices: np.ndarray, visible_idx, masked_idx, params: EncoderParams, opt: Adam,
                  cfg: PretrainConfig) -> float:
    """One optimizer step on a batch of equal-length sliced series, then the momentum update."""
    trainable = params.trainable()
    with Tape() as tape:
        F, targets = masked_views(slices, visible_idx, masked_idx, params)
        loss = huber_align_loss(F, targets, cfg.delta)
    grads = tape.backward(loss, trainable)
    opt.step(trainable, grads)
    momentum_update(params, cfg.momentum)
    return loss.item()


def make_optimizer(cfg: PretrainConfig) -> Adam:
    return Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


@dataclass
class PretrainResult:
    params: EncoderParams
    history: list[float]
    skipped: int
    steps: int


def pretrain_run(series_list, enc_cfg: EncoderConfig, cfg: PretrainConfig,
                 params: EncoderParams | None = None,
                 on_step: Callable[[int, EncoderParams, float], None] | None = None) -> PretrainResult:
    """Run ``cfg.epochs`` passes of masked pretraining over standardized series.

    Subjects are bucketed by slice count so every batch is rectangular.
    Masks are redrawn per (epoch, subject) unless ``resample_masks`` is off.
    """
    if len(series_list) == 0:
        raise ValueError("pretraining needs at least one subject")
    if params is None:
        params = EncoderParams.initialize(enc_cfg, seed=cfg.seed)
    sliced = [slice_batch([x], enc_cfg.sigma)[0] for x in series_list]
    usable = [i for i, s in enumerate(sliced) if s.shape[0] >= 2]
    skipped = len(sliced) - len(usable)
    if skipped:
        log.warning("%d subject(s) yield fewer than 2 slices and are skipped", skipped)
    if not usable:
        raise ValueError("every subject is too short to mask (fewer than 2 slices)")
    for i in usable:
        if sliced[i].shape[0] > enc_cfg.max_slices:
            raise ValueError(f"subject {i} has {sliced[i].shape[0]} slices > max_slices={enc_cfg.max_slices}")
    buckets: dict[int, list[int]] = {}
    for i in usable:
        buckets.setdefault(sliced[i].shape[0], []).append(i)

    opt = make_optimizer(cfg)
    history: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng([cfg.seed, epoch, 7919])
        batches = []
        for S, members in sorted(buckets.items()):
            perm = [members[j] for j in order_rng.permutation(len(members))]
            batches += [(S, perm[k:k + cfg.batch_size]) for k in range(0, len(perm), cfg.batch_size)]
        batches = [batches[j] for j in order_rng.permutation(len(batches))]
        total, count = 0.0, 0
        for S, idx in batches:
            mask_epoch = epoch if cfg.resample_masks else 0
            vis, msk = draw_masks(len(idx), S, cfg.mask_ratio,
                                  [epoch_seed(cfg.seed, mask_epoch, i) for i in idx])
            loss = pretrain_step(np.stack([sliced[i] for i in idx]), vis, msk, params, opt, cfg)
            step += 1
            total += loss * len(idx)
            count += len(idx)
            if on_step is not None:
                on_step(step, params, loss)
        history.append(total / count)
        log.info("epoch %d mean loss %.6f", epoch + 1, history[-1])
    return PretrainResult(params, history, skipped, step)
