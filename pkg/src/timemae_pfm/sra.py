"""Self-reinforcing attention over fused temporal + demographic features, and the linear head."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .core import Adam, Tape, Tensor, no_grad, ops
from .ingest import DEMOGRAPHIC_NAMES

log = logging.getLogger(__name__)


def feature_names(n_temporal: int = 64, demographic=DEMOGRAPHIC_NAMES) -> list[str]:
    return [f"t{i}" for i in range(n_temporal)] + list(demographic)


@dataclass
class FusedFeatures:
    x: np.ndarray  # (p,) or (N, p)
    names: list[str]

    def __post_init__(self):
        if self.x.shape[-1] != len(self.names) or len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique and match the feature width")

    @property
    def n_temporal(self) -> int:
        return sum(1 for n in self.names if n.startswith("t") and n[1:].isdigit())

    def temporal(self) -> np.ndarray:
        return self.x[..., : self.n_temporal]

    def demographic(self) -> np.ndarray:
        return self.x[..., self.n_temporal:]


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureStats":
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def fuse(temporal, demographics, temporal_stats: FeatureStats | None = None) -> FusedFeatures:
    """Concatenate (standardized) temporal features with normalized demographics, in fixed order."""
    t = np.asarray(temporal, dtype=np.float64)
    dm = np.asarray(demographics, dtype=np.float64)
    if t.ndim != dm.ndim or t.shape[:-1] != dm.shape[:-1]:
        raise ValueError(f"temporal {t.shape} and demographic {dm.shape} blocks do not align")
    if dm.shape[-1] != len(DEMOGRAPHIC_NAMES):
        raise ValueError(f"expected {len(DEMOGRAPHIC_NAMES)} demographic values, got {dm.shape[-1]}")
    if temporal_stats is not None:
        t = temporal_stats.transform(t)
    return FusedFeatures(np.concatenate([t, dm], axis=-1), feature_names(t.shape[-1]))


@dataclass(frozen=True)
class SRAConfig:
    d_k: int = 8
    hidden_mult: int = 4
    use_sra: bool = True
    init_std: float = 0.1
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 30
    seed: int = 0
    unfreeze: bool = False

    def __post_init__(self):
        if self.d_k < 1 or self.hidden_mult < 1:
            raise ValueError("d_k and hidden_mult must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and patience >= 1 required")


class SRAParams:
    """Key network, query network (independent weights) and the linear head."""

    NETS = ("key", "query")

    def __init__(self, p: int, cfg: SRAConfig, arrays: dict[str, Tensor]):
        self.p = p
        self.config = cfg
        self.arrays = arrays

    @classmethod
    def initialize(cls, p: int, cfg: SRAConfig = SRAConfig(), seed: int | None = None) -> "SRAParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        h = cfg.hidden_mult * p
        arrays = {}
        for net in cls.NETS:
            arrays[f"{net}.w1"] = rng.normal(0.0, np.sqrt(2.0 / p), size=(p, h))
            arrays[f"{net}.b1"] = np.zeros(h)
            arrays[f"{net}.w2"] = rng.normal(0.0, cfg.init_std / np.sqrt(h), size=(h, p * cfg.d_k))
            arrays[f"{net}.b2"] = np.zeros(p * cfg.d_k)
        arrays["head.w"] = np.zeros((p, 1))
        arrays["head.b"] = np.zeros(1)
        return cls(p, cfg, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})

    def __getitem__(self, name):
        return self.arrays[name]

    def trainable(self) -> dict[str, Tensor]:
        if self.config.use_sra:
            return dict(self.arrays)
        return {k: v for k, v in self.arrays.items() if k.startswith("head.")}

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.arrays.items()}

    def copy(self) -> "SRAParams":
        return SRAParams(self.p, self.config,
                         {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.arrays.items()})


def _embed(x: Tensor, params: SRAParams, net: str) -> Tensor:
    h = ops.relu(ops.affine(x, params[f"{net}.w1"], params[f"{net}.b1"]))
    out = ops.sigmoid(ops.affine(h, params[f"{net}.w2"], params[f"{net}.b2"]))
    return ops.reshape(out, x.shape[:-1] + (params.p, params.config.d_k))


def sra_attention(x, params: SRAParams) -> tuple[Tensor, Tensor]:
    """Per-feature weights ``a_i = (q_i . k_i) / d_k`` in [0, 1] and gated output ``o = a * x``.

    Keys and queries pass through a terminal sigmoid, so every coordinate
    product lies in (0, 1) and their d_k-average does too.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != params.p:
        raise ValueError(f"expected {params.p} features, got {x.shape[-1]}")
    if not params.config.use_sra:
        a = Tensor(np.ones(x.shape))
        return a, x
    K = _embed(x, params, "key")
    Q = _embed(x, params, "query")
    a = ops.mul(ops.sum(ops.mul(Q, K), axis=-1), 1.0 / params.config.d_k)
    return a, ops.mul(a, x)


def head_logits(o: Tensor, params: SRAParams) -> Tensor:
    lead = o.shape[:-1]
    if o.ndim == 1:
        o = ops.reshape(o, (1, -1))
    z = ops.affine(o, params["head.w"], params["head.b"])
    return ops.reshape(z, lead)


def classify(o, params: SRAParams) -> np.ndarray:
    """Probability of the positive ("good") class: ``sigmoid(w . o + b)``."""
    o = o if isinstance(o, Tensor) else Tensor(o)
    with no_grad():
        return expit(head_logits(o, params).data)


def predict_proba(X, params: SRAParams) -> np.ndarray:
    with no_grad():
        _, o = sra_attention(Tensor(X), params)
        return expit(head_logits(o, params).data)


def attention_weights(X, params: SRAParams) -> np.ndarray:
    with no_grad():
        a, _ = sra_attention(Tensor(X), params)
    return a.data


def bce_loss(X, y, params: SRAParams) -> Tensor:
    _, o = sra_attention(Tensor(X), params)
    return ops.bce_with_logits(head_logits(o, params), y)


@dataclass
class HeadResult:
    params: SRAParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def fit_sra(X_train, y_train, X_val, y_val, cfg: SRAConfig = SRAConfig()) -> HeadResult:
    """Minibatch Adam on binary cross-entropy; keeps the parameters with the lowest validation loss."""
    from .metrics import auroc

    y_train = np.asarray(y_train, dtype=np.float64)
    if len(np.unique(y_train)) < 2:
        raise ValueError("training split contains a single class; cannot fit the classifier")
    has_val = X_val is not None and len(X_val) > 0
    params = SRAParams.initialize(X_train.shape[1], cfg)
    trainable = params.trainable()
    opt = Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 104729])
    history = []
    best = (np.inf, params.copy(), 0)
    stale = 0
    n = len(X_train)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for k in range(0, n, cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            with Tape() as tape:
                loss = bce_loss(X_train[idx], y_train[idx], params)
            grads = tape.backward(loss, trainable)
            if cfg.weight_decay:
                for name, g in grads.items():
                    if name.endswith(("w1", "w2", ".w")):
                        g += cfg.weight_decay * trainable[name].data
            opt.step(trainable, grads)
            total += loss.item() * len(idx)
        entry = {"epoch": epoch + 1, "train_loss": total / n}
        if has_val:
            with no_grad():
                entry["val_loss"] = bce_loss(X_val, y_val, params).item()
            pv = predict_proba(X_val, params)
            if len(np.unique(y_val)) == 2:
                entry["val_auroc"] = auroc(pv, y_val)
            score = entry["val_loss"]
        else:
            score = entry["train_loss"]
        history.append(entry)
        if score < best[0]:
            best = (score, params.copy(), epoch + 1)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if cfg.epochs == 0:
        return HeadResult(params, history, 0)
    return HeadResult(best[1], history, best[2])


def attention_profile(X, params: SRAParams, names) -> dict:
    """Per-sample attention matrix, per-feature means and ranking.

    Temporal dimensions are additionally summed into one ``temporal (sum)``
    score alongside the individual demographic features.
    """
    A = attention_weights(X, params)
    means = A.mean(axis=0)
    order = np.argsort(-means, kind="stable")
    ranking = [names[i] for i in order]
    temporal = [i for i, n in enumerate(names) if n.startswith("t") and n[1:].isdigit()]
    grouped = {"temporal (sum)": float(means[temporal].sum())}
    grouped.update({n: float(means[i]) for i, n in enumerate(names) if i not in temporal})
    grouped_rank = sorted(grouped, key=lambda k: -grouped[k])
    return {
        "matrix": A,
        "names": list(names),
        "mean": {n: float(m) for n, m in zip(names, means)},
        "ranking": ranking,
        "grouped": grouped,
        "grouped_ranking": grouped_rank,
    }


def config_dict(cfg: SRAConfig) -> dict:
    return asdict(cfg)
