"""End-to-end workflows: pretrain, head training, evaluation, ablation and cross-domain transfer."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, adapt_channels
from .config import ConfigError
from .core import Adam, Tape, Tensor, no_grad, ops
from .encoders import EncoderConfig, EncoderParams, add_positional, embed_slices, encode_visible, \
    extract_features_batch, slice_batch
from .ingest import DEMOGRAPHIC_NAMES, Dataset
from .metrics import METRIC_NAMES, MetricsReport, auroc, ci_over_runs, evaluate
from .pretrain import PretrainConfig, pretrain_run
from .sra import FeatureStats, HeadResult, SRAConfig, SRAParams, attention_profile, bce_loss, \
    feature_names, fit_sra, head_logits, predict_proba, sra_attention

log = logging.getLogger(__name__)

MODES = ("temporal_only", "demographic_only", "fused")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; choose from {', '.join(MODES)}")


def mode_mask(mode: str, n_temporal: int, n_demo: int = len(DEMOGRAPHIC_NAMES)) -> np.ndarray:
    """1 for kept features, 0 for the excluded block."""
    _check_mode(mode)
    t = 0.0 if mode == "demographic_only" else 1.0
    d = 0.0 if mode == "temporal_only" else 1.0
    return np.r_[np.full(n_temporal, t), np.full(n_demo, d)]


# ---------------------------------------------------------------- pretraining

def pretrain_checkpoint(dataset: Dataset, enc_cfg: EncoderConfig, cfg: PretrainConfig,
                        split: str = "train", on_step=None) -> Checkpoint:
    """Self-supervised pretraining on one split's standardized series."""
    if enc_cfg.channels != dataset.channels:
        raise ConfigError(f"encoder expects {enc_cfg.channels} channel(s) but dataset has {dataset.channels}")
    records = dataset.split(split) or dataset.records
    result = pretrain_run(dataset.model_series(records), enc_cfg, cfg, on_step=on_step)
    norm = {"series": dataset.series_stats.to_dict(), "demographics": dataset.demo_stats.to_dict()}
    return Checkpoint(result.params, result.history, cfg.seed, asdict(cfg), norm,
                      tags={"pretrain_subjects": len(records) - result.skipped})


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------- features

def temporal_features(dataset: Dataset, records, params: EncoderParams) -> np.ndarray:
    """Frozen-encoder features; each dataset is standardized with its own training statistics."""
    series = dataset.model_series(records)
    if series and series[0].shape[1] != params.config.channels:
        raise ConfigError(f"encoder expects {params.config.channels} channel(s), "
                          f"dataset has {series[0].shape[1]}; enable channel projection")
    return extract_features_batch(series, params)


@dataclass
class HeadInputs:
    X: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    names: list[str]
    stats: FeatureStats
    mode: str


def head_inputs(dataset: Dataset, params: EncoderParams, mode: str = "fused",
                stats: FeatureStats | None = None, splits=("train", "val", "test")) -> HeadInputs:
    """Fused matrices per split with the excluded block zeroed after standardization."""
    _check_mode(mode)
    raw = {s: temporal_features(dataset, dataset.split(s), params) for s in splits if dataset.split(s)}
    if stats is None:
        if "train" not in raw:
            raise ValueError("dataset has no training split to fit feature statistics")
        stats = FeatureStats.fit(raw["train"])
    mask = mode_mask(mode, params.config.d)
    X, y = {}, {}
    for s, T in raw.items():
        recs = dataset.split(s)
        X[s] = np.concatenate([stats.transform(T), dataset.demographics(recs)], axis=1) * mask
        y[s] = dataset.labels(recs)
    return HeadInputs(X, y, feature_names(params.config.d), stats, mode)


# ---------------------------------------------------------------- head training

def train_head(dataset: Dataset, checkpoint: Checkpoint, cfg: SRAConfig = SRAConfig(),
               mode: str = "fused") -> tuple[Checkpoint, HeadResult]:
    """Fit SRA and the linear head; the checkpoint's encoder is left untouched.

    With ``cfg.unfreeze`` the returned checkpoint holds a fine-tuned copy of
    the encoder, still leaving the input checkpoint unchanged.
    """
    inputs = head_inputs(dataset, checkpoint.encoder, mode)
    if len(np.unique(inputs.y["train"])) < 2:
        raise ValueError("training split contains a single class; cannot fit the classifier")
    encoder = checkpoint.encoder
    if cfg.unfreeze:
        encoder, result = _fit_unfrozen(dataset, checkpoint.encoder, inputs, cfg)
    else:
        result = fit_sra(inputs.X["train"], inputs.y["train"], inputs.X.get("val"), inputs.y.get("val"), cfg)
    norm = dict(checkpoint.normalization)
    norm["features"] = inputs.stats.to_dict()
    info = {"mode": mode, "best_epoch": result.best_epoch, "history": result.history}
    out = Checkpoint(encoder, list(checkpoint.history), checkpoint.seed, dict(checkpoint.pretrain_config),
                     norm, result.params, info, dict(checkpoint.tags))
    return out, result


def _pooled(slices: np.ndarray, params: EncoderParams) -> Tensor:
    S = slices.shape[1]
    Z = add_positional(embed_slices(slices, params), np.arange(S), params)
    return ops.mean(encode_visible(Z, params), axis=-2)


def _fit_unfrozen(dataset: Dataset, encoder: EncoderParams, inputs: HeadInputs,
                  cfg: SRAConfig) -> tuple[EncoderParams, HeadResult]:
    enc = encoder.copy()
    head = SRAParams.initialize(len(inputs.names), cfg)
    enc_train = {f"encoder/{k}": v for k, v in enc.trainable().items()}
    params = {**enc_train, **head.trainable()}
    opt = Adam(lr=cfg.lr)
    mask = mode_mask(inputs.mode, enc.config.d)
    stats = inputs.stats
    recs = dataset.split("train")
    slices = slice_batch(dataset.model_series(recs), enc.config.sigma)
    demo = dataset.demographics(recs)
    y = inputs.y["train"]
    rng = np.random.default_rng([cfg.seed, 104729])
    n = len(recs)

    def forward(idx):
        t = ops.mul(ops.sub(_pooled(slices[idx], enc), stats.mean), 1.0 / stats.std)
        x = ops.mul(ops.concat([t, Tensor(demo[idx])], axis=-1), mask)
        _, o = sra_attention(x, head)
        return ops.bce_with_logits(head_logits(o, head), y[idx])

    def val_loss():
        if "val" not in inputs.X:
            return None
        Xv = head_inputs(dataset, enc, inputs.mode, stats, splits=("val",)).X["val"]
        with no_grad():
            return bce_loss(Xv, inputs.y["val"], head).item()

    history, best, stale = [], (np.inf, enc.copy(), head.copy(), 0), 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for k in range(0, n, cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            with Tape() as tape:
                loss = forward(idx)
            grads = tape.backward(loss, params)
            opt.step(params, grads)
            total += loss.item() * len(idx)
        entry = {"epoch": epoch + 1, "train_loss": total / n}
        v = val_loss()
        if v is not None:
            entry["val_loss"] = v
        history.append(entry)
        score = entry.get("val_loss", entry["train_loss"])
        if score < best[0]:
            best, stale = (score, enc.copy(), head.copy(), epoch + 1), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if cfg.epochs == 0:
        return enc, HeadResult(head, history, 0)
    return best[1], HeadResult(best[2], history, best[3])


# ---------------------------------------------------------------- evaluation

def _inputs_for(dataset: Dataset, checkpoint: Checkpoint, split: str) -> HeadInputs:
    if checkpoint.head is None:
        raise ValueError("checkpoint has no trained head; run train-head first")
    stats = FeatureStats.from_dict(checkpoint.normalization["features"])
    mode = checkpoint.head_info.get("mode", "fused")
    return head_inputs(dataset, checkpoint.encoder, mode, stats, splits=(split,))


def predict(dataset: Dataset, checkpoint: Checkpoint, split: str = "test") -> tuple[np.ndarray, np.ndarray]:
    inputs = _inputs_for(dataset, checkpoint, split)
    if split not in inputs.X:
        raise ValueError(f"dataset has no {split!r} split")
    return predict_proba(inputs.X[split], checkpoint.head), inputs.y[split]


def evaluate_checkpoint(dataset: Dataset, checkpoint: Checkpoint, split: str = "test",
                        threshold: float = 0.5) -> MetricsReport:
    scores, labels = predict(dataset, checkpoint, split)
    return evaluate(scores, labels, threshold)


def explain(dataset: Dataset, checkpoint: Checkpoint, split: str = "test") -> dict:
    inputs = _inputs_for(dataset, checkpoint, split)
    prof = attention_profile(inputs.X[split], checkpoint.head, inputs.names)
    prof["subject_ids"] = [r.subject_id for r in dataset.split(split)]
    prof["bmi_raw"] = [r.bmi for r in dataset.split(split)]
    return prof


def write_profile_csvs(profile: dict, directory) -> dict[str, Path]:
    """Ranking CSV, per-sample matrix CSV and a BMI-vs-attention scatter table."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"ranking": d / "attention_ranking.csv", "matrix": d / "attention_matrix.csv",
             "bmi_scatter": d / "bmi_attention.csv", "grouped": d / "attention_grouped.csv"}
    names = profile["names"]
    with open(paths["ranking"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_attention", "rank"])
        for rank, n in enumerate(profile["ranking"], 1):
            w.writerow([n, repr(profile["mean"][n]), rank])
    with open(paths["grouped"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_attention", "rank"])
        for rank, n in enumerate(profile["grouped_ranking"], 1):
            w.writerow([n, repr(profile["grouped"][n]), rank])
    A = profile["matrix"]
    with open(paths["matrix"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *names])
        for sid, row in zip(profile["subject_ids"], A):
            w.writerow([sid, *map(repr, row.tolist())])
    j = names.index("bmi")
    with open(paths["bmi_scatter"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "bmi", "bmi_attention"])
        for sid, b, a in zip(profile["subject_ids"], profile["bmi_raw"], A[:, j]):
            w.writerow([sid, repr(b), repr(float(a))])
    return paths


# ---------------------------------------------------------------- repeated-run protocols

@dataclass
class ProtocolResult:
    report: MetricsReport
    runs: list[MetricsReport]
    seeds: list[int]
    run_tag: str = ""
    checkpoints: list[Checkpoint] = field(default_factory=list, repr=False)

    def to_dict(self, config_echo: dict | None = None) -> dict:
        from .metrics import REPORT_SCHEMA_VERSION
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": self.run_tag,
                "metrics": self.report.to_dict(), "config_echo": config_echo or {},
                "seed_list": list(self.seeds), "per_run_auroc": [r.values["auroc"] for r in self.runs],
                "warnings": self.report.warnings}


def _summarize(runs: list[MetricsReport]) -> MetricsReport:
    return ci_over_runs(runs) if len(runs) > 1 else runs[0]


def run_protocol(dataset: Dataset, enc_cfg: EncoderConfig, pcfg: PretrainConfig, head_cfg: SRAConfig,
                 seeds=(0, 1, 2, 3, 4), mode: str = "fused", checkpoint: Checkpoint | None = None,
                 run_tag: str = "", keep: bool = False) -> ProtocolResult:
    """Independent trainings (pretraining unless ``checkpoint`` is given, then the head) per seed."""
    _check_mode(mode)
    runs, kept = [], []
    for s in seeds:
        ckpt = checkpoint if checkpoint is not None else \
            pretrain_checkpoint(dataset, enc_cfg, replace(pcfg, seed=s))
        trained, _ = train_head(dataset, ckpt, replace(head_cfg, seed=s), mode)
        runs.append(evaluate_checkpoint(dataset, trained))
        if keep:
            kept.append(trained)
        log.info("%s seed %d auroc %.4f", run_tag or mode, s, runs[-1].values["auroc"])
    return ProtocolResult(_summarize(runs), runs, list(seeds), run_tag or mode, kept)


def ablation_harness(dataset: Dataset, checkpoint: Checkpoint, mode: str, head_cfg: SRAConfig = SRAConfig(),
                     seeds=(0, 1, 2, 3, 4)) -> ProtocolResult:
    """One ablation mode under the multi-seed head protocol on a fixed pretrained encoder."""
    _check_mode(mode)
    return run_protocol(dataset, checkpoint.config, PretrainConfig(), head_cfg, seeds, mode, checkpoint,
                        run_tag=mode)


def ablation_table(results: dict[str, ProtocolResult], path=None) -> list[dict]:
    rows = []
    for mode, res in results.items():
        row = {"mode": mode}
        for k in METRIC_NAMES:
            row[k] = res.report.values[k]
            if k in res.report.ci:
                row[f"{k}_lo"], row[f"{k}_hi"] = res.report.ci[k]
        rows.append(row)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def check_compatible(checkpoint: Checkpoint, enc_cfg: EncoderConfig) -> None:
    ck = checkpoint.config
    for key in ("sigma", "d"):
        a, b = getattr(ck, key), getattr(enc_cfg, key)
        if a != b:
            raise ConfigError(f"checkpoint {key}={a} is incompatible with configured {key}={b}")


def cross_domain_run(source: Dataset, target: Dataset, enc_cfg: EncoderConfig, pcfg: PretrainConfig,
                     head_cfg: SRAConfig, seeds=(0, 1, 2, 3, 4), project_channels: bool = True,
                     checkpoint: Checkpoint | None = None, tags=("A", "B")) -> ProtocolResult:
    """Pretrain on ``source`` (or reuse ``checkpoint``), then train and evaluate the head on ``target``."""
    if checkpoint is not None:
        check_compatible(checkpoint, enc_cfg)
    runs = []
    for s in seeds:
        ckpt = checkpoint if checkpoint is not None else \
            pretrain_checkpoint(source, replace(enc_cfg, channels=source.channels), replace(pcfg, seed=s))
        if ckpt.config.channels != target.channels:
            if not project_channels:
                raise ConfigError(f"checkpoint has {ckpt.config.channels} channel(s), target dataset "
                                  f"{target.channels}; enable channel projection")
            ckpt = Checkpoint(adapt_channels(ckpt.encoder, target.channels), ckpt.history, ckpt.seed,
                              ckpt.pretrain_config, ckpt.normalization, tags=dict(ckpt.tags))
        trained, _ = train_head(target, ckpt, replace(head_cfg, seed=s))
        runs.append(evaluate_checkpoint(target, trained))
    return ProtocolResult(_summarize(runs), runs, list(seeds), f"{tags[0]}->{tags[1]}")


def seed_auroc(results: ProtocolResult) -> list[float]:
    return [r.values["auroc"] for r in results.runs]


__all__ = [
    "MODES", "HeadInputs", "ProtocolResult", "ablation_harness", "ablation_table", "auroc",
    "check_compatible", "cross_domain_run", "evaluate_checkpoint", "explain", "head_inputs", "mode_mask",
    "predict", "pretrain_checkpoint", "run_protocol", "seed_auroc", "temporal_features", "train_head",
    "write_history_csv", "write_profile_csvs",
]
