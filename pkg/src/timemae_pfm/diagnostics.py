"""Finite-difference gradient checks for each trainable component."""

from __future__ import annotations

import time

import numpy as np

from .core import Tensor, grad_check, ops
from .encoders import EncoderConfig, EncoderParams, add_positional, decode_masked, embed_slices, encode_visible
from .sra import SRAConfig, SRAParams, bce_loss

# components whose gradients are smooth enough to be held to the tight tolerance
TOLERANCES = {
    "conv_embedding": 1e-4,
    "visible_encoder": 1e-4,
    "cross_attention_decoder": 1e-4,
    "huber": 1e-6,
    "linear": 1e-6,
    "sra": 1e-4,
    "head": 1e-6,
}


def _small_encoder(seed: int) -> EncoderParams:
    cfg = EncoderConfig(d=8, depth_visible=2, depth_masked=1, heads=2, ffn_width=12, sigma=4, channels=2,
                        max_slices=16, init_std=0.3)
    params = EncoderParams.initialize(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.arrays.items():
        if name.endswith((".g", ".b", "bias", "bq", "bk", "bv", "bo", "b1", "b2")):
            t.data = t.data + rng.normal(0, 0.1, size=t.shape)
    return params


def _projected(out: Tensor, rng) -> Tensor:
    return ops.mean(ops.mul(out, rng.normal(size=out.shape)))


def gradcheck_suite(seed: int = 0, probes: int = 20) -> dict[str, dict]:
    """Max relative error per component, with the tolerance it is held to."""
    rng = np.random.default_rng(seed)
    enc = _small_encoder(seed)
    cfg = enc.config
    x = rng.normal(size=(2, 5, cfg.sigma, cfg.channels))
    checks = {}

    embed = {k: enc[k] for k in ("embed.kernel", "embed.bias")}
    r1 = np.random.default_rng(seed + 10)
    w1 = r1.normal(size=(2, 5, cfg.d))
    checks["conv_embedding"] = (lambda: ops.mean(ops.mul(embed_slices(x, enc), w1)), embed)

    Z = Tensor(rng.normal(size=(2, 5, cfg.d)), requires_grad=True, name="Z")
    vis = {k: v for k, v in enc.trainable().items() if k.startswith("visible.")}
    vis["pos"] = enc["pos"]
    w2 = rng.normal(size=(2, 5, cfg.d))
    checks["visible_encoder"] = (
        lambda: ops.mean(ops.mul(encode_visible(add_positional(Z, np.arange(5), enc), enc), w2)),
        {**vis, "Z": Z})

    H = Tensor(rng.normal(size=(2, 3, cfg.d)), requires_grad=True, name="H")
    masked = np.array([[0, 2], [4, 1]])
    dec = {k: v for k, v in enc.trainable().items() if k.startswith("decoder.")}
    dec["mask_token"] = enc["mask_token"]
    w3 = rng.normal(size=(2, 2, cfg.d))
    checks["cross_attention_decoder"] = (lambda: ops.mean(ops.mul(decode_masked(H, masked, enc), w3)),
                                         {**dec, "H": H})

    target = rng.normal(size=(4, 6)) * 3
    pred = Tensor(target + rng.choice([-1, 1], size=(4, 6)) * rng.uniform(0.1, 5, size=(4, 6)),
                  requires_grad=True, name="pred")
    checks["huber"] = (lambda: ops.huber(pred, target, 2.0), {"pred": pred})

    W = Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="W")
    b = Tensor(rng.normal(size=3), requires_grad=True, name="b")
    xin = rng.normal(size=(7, 5))
    w4 = rng.normal(size=(7, 3))
    checks["linear"] = (lambda: ops.mean(ops.mul(ops.affine(xin, W, b), w4)), {"W": W, "b": b})

    Xf = rng.normal(size=(12, 6))
    yf = (rng.random(12) < 0.5).astype(float)
    sra = SRAParams.initialize(6, SRAConfig(d_k=3, init_std=1.0), seed=seed)
    sra["head.w"].data = rng.normal(size=(6, 1))
    checks["sra"] = (lambda: bce_loss(Xf, yf, sra),
                     {k: v for k, v in sra.arrays.items() if not k.startswith("head.")})
    logistic = SRAParams.initialize(6, SRAConfig(use_sra=False), seed=seed)
    logistic["head.w"].data = rng.normal(size=(6, 1))
    checks["head"] = (lambda: bce_loss(Xf, yf, logistic), logistic.trainable())

    out = {}
    for name, (fn, params) in checks.items():
        t0 = time.perf_counter()
        res = grad_check(fn, params, probes=probes, seed=seed)
        out[name] = {"max_rel_error": res.max_rel_error, "tolerance": TOLERANCES[name],
                     "passed": res.max_rel_error <= TOLERANCES[name], "probes": res.n_probes,
                     "worst_param": res.worst_param, "seconds": time.perf_counter() - t0}
    return out
