"""Cut series into fixed-length slices and draw visible/masked partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SlicedBatch:
    slices: np.ndarray  # (S, sigma, m)
    original_length: int
    sigma: int
    pad_count: int

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    def unslice(self) -> np.ndarray:
        flat = self.slices.reshape(-1, self.slices.shape[-1])
        out = flat[: self.original_length]
        return out[:, 0] if out.shape[1] == 1 else out


@dataclass(frozen=True)
class MaskPlan:
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    ratio: float
    seed: int | None

    @property
    def n_slices(self) -> int:
        return len(self.visible_idx) + len(self.masked_idx)


def mask_count(n_slices: int, ratio: float) -> int:
    """Round half up, then clamp to ``[1, S - 1]``."""
    return min(max(int(math.floor(ratio * n_slices + 0.5)), 1), n_slices - 1)


def slice_series(series, sigma: int) -> SlicedBatch:
    """Split a length-T series (``(T,)`` or ``(T, m)``) into ``ceil(T / sigma)`` slices.

    The tail is zero-padded up to a whole slice.
    """
    x = np.asarray(series, dtype=np.float64)
    if sigma < 1:
        raise ValueError(f"slice length must be >= 1, got {sigma}")
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty (T,) or (T, m) series, got shape {x.shape}")
    T, m = x.shape
    S = -(-T // sigma)
    pad = S * sigma - T
    if pad:
        x = np.concatenate([x, np.zeros((pad, m))], axis=0)
    return SlicedBatch(x.reshape(S, sigma, m), T, sigma, pad)


def sample_mask(n_slices: int, ratio: float = 0.6, seed: int | None = None, rng=None) -> MaskPlan:
    """Uniform random subset of slice indices to mask, drawn without replacement."""
    if n_slices < 2:
        raise ValueError(
            f"need at least 2 slices to mask (got {n_slices}); use a longer series or a shorter slice length")
    if not 0 <= ratio < 1:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    if rng is None:
        rng = np.random.default_rng(seed)
    k = mask_count(n_slices, ratio)
    masked = np.sort(rng.choice(n_slices, size=k, replace=False))
    visible = np.setdiff1d(np.arange(n_slices), masked)
    return MaskPlan(visible, masked, ratio, seed)


def split(batch: SlicedBatch, plan: MaskPlan) -> tuple[np.ndarray, np.ndarray]:
    """Route slices to the visible and masked sides, preserving original order."""
    S = batch.n_slices
    if plan.n_slices != S:
        raise ValueError(f"mask plan covers {plan.n_slices} slices, batch has {S}")
    idx = np.concatenate([plan.visible_idx, plan.masked_idx])
    if idx.size and (idx.min() < 0 or idx.max() >= S):
        raise IndexError(f"mask plan index out of range for {S} slices")
    return batch.slices[plan.visible_idx], batch.slices[plan.masked_idx]


def merge(visible: np.ndarray, masked: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Inverse of :func:`split`."""
    out = np.empty((plan.n_slices,) + visible.shape[1:], dtype=visible.dtype)
    out[plan.visible_idx] = visible
    out[plan.masked_idx] = masked
    return out


def epoch_seed(base_seed: int, epoch: int, subject_index: int) -> np.random.SeedSequence:
    """Independent mask stream per (epoch, subject)."""
    return np.random.SeedSequence([base_seed, epoch, subject_index])
