"""Command-line entry point.

Every subcommand reads an optional ``key = value`` file via ``--config``;
named flags and repeated ``--set key=value`` pairs override it, in that
order. Results are printed as JSON (or written to ``--out``). Failures
print a JSON object with an ``error`` category to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import experiments as ex
from .arrayio import ContainerError, dumps_json
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, build, coerce, pick, read_kv
from .core import NumericError
from .diagnostics import gradcheck_suite
from .encoders import EncoderConfig
from .ingest import SynthConfig, WearPolicy, ingest_csv, load_dataset, save_dataset, synth_generate
from .metrics import REPORT_SCHEMA_VERSION, bootstrap_ci
from .pretrain import PretrainConfig
from .sra import SRAConfig

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Each command: (path-like keys with types, dataclasses it configures).
_COMMANDS = {
    "synth": ({"out_dir": str, "seed": int}, (SynthConfig,)),
    "ingest": ({"actigraphy": str, "demographics": str, "out_dir": str, "seed": int, "sppb_threshold": int,
                "aggregate": str}, (WearPolicy,)),
    "pretrain": ({"dataset": str, "checkpoint": str, "history_csv": str, "split": str},
                 (EncoderConfig, PretrainConfig)),
    "train-head": ({"dataset": str, "checkpoint": str, "model": str, "mode": str}, (SRAConfig,)),
    "evaluate": ({"dataset": str, "model": str, "split": str, "threshold": float, "bootstrap": int,
                  "run_tag": str}, ()),
    "ablate": ({"dataset": str, "checkpoint": str, "seeds": str, "modes": str, "table_csv": str}, (SRAConfig,)),
    "cross-domain": ({"source": str, "target": str, "checkpoint": str, "seeds": str,
                      "project_channels": bool, "source_tag": str, "target_tag": str},
                     (EncoderConfig, PretrainConfig, SRAConfig)),
    "explain": ({"dataset": str, "model": str, "split": str, "csv_dir": str}, ()),
    "gradcheck": ({"seed": int, "probes": int}, ()),
}

_REQUIRED = {
    "synth": ("out_dir",), "ingest": ("actigraphy", "demographics", "out_dir"),
    "pretrain": ("dataset", "checkpoint"), "train-head": ("dataset", "checkpoint", "model"),
    "evaluate": ("dataset", "model"), "ablate": ("dataset", "checkpoint"),
    "cross-domain": ("source", "target"), "explain": ("dataset", "model"), "gradcheck": (),
}


def _parser() -> _Parser:
    p = _Parser(prog="timemae-pfm", description="Masked time-series pretraining and frailty classification.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, (keys, _) in _COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
        for key in keys:
            sp.add_argument("--" + key.replace("_", "-"), dest=key)
    return p


def _merge(args) -> dict:
    values: dict = {}
    if args.config:
        if not Path(args.config).exists():
            raise FileNotFoundError(f"config file not found: {args.config}")
        values.update(read_kv(args.config))
    keys, classes = _COMMANDS[args.command]
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    allowed = set(keys) | {f.name for c in classes for f in fields(c)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) for {args.command}: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED[args.command] if k not in values]
    if missing:
        raise UsageError(f"{args.command} requires: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return values


def _typed(values: dict, key: str, tp, default=None):
    if key not in values:
        return default
    return coerce(values[key], tp, key)


def _seeds(values) -> list[int]:
    raw = values.get("seeds", "0,1,2,3,4")
    try:
        return [int(s) for s in str(raw).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be a comma-separated list of integers, got {raw!r}") from None


def _need(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _echo(values: dict) -> dict:
    return {k: values[k] for k in sorted(values)}


def _metrics_report(result: ex.ProtocolResult, values) -> dict:
    return result.to_dict(_echo(values))


def run_command(command: str, values: dict) -> dict:
    keys, _ = _COMMANDS[command]
    get = lambda k, d=None: _typed(values, k, keys[k], d)  # noqa: E731

    if command == "synth":
        cfg = build(SynthConfig, pick(values, SynthConfig))
        seed = get("seed", 0)
        ds = synth_generate(cfg, seed)
        save_dataset(ds, get("out_dir"))
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "synth", "out_dir": get("out_dir"),
                "subjects": len(ds.records), "splits": {k: len(v) for k, v in ds.splits.items()},
                "config_echo": _echo(values), "seed_list": [seed]}

    if command == "ingest":
        policy = build(WearPolicy, pick(values, WearPolicy))
        ds, excluded = ingest_csv(_need(get("actigraphy")), _need(get("demographics")), policy,
                                  get("sppb_threshold", 9), get("aggregate", "mean"), seed=get("seed", 0))
        save_dataset(ds, get("out_dir"))
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "ingest", "out_dir": get("out_dir"),
                "subjects": len(ds.records), "excluded": excluded, "config_echo": _echo(values)}

    if command == "pretrain":
        ds = load_dataset(_need(get("dataset"), "dataset"))
        enc_values = pick(values, EncoderConfig)
        enc_values.setdefault("channels", ds.channels)
        enc = build(EncoderConfig, enc_values)
        pcfg = build(PretrainConfig, pick(values, PretrainConfig))
        ckpt = ex.pretrain_checkpoint(ds, enc, pcfg, get("split", "train"))
        save_checkpoint(ckpt, get("checkpoint"))
        if "history_csv" in values:
            ex.write_history_csv(ckpt.history, get("history_csv"))
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "pretrain", "checkpoint": get("checkpoint"),
                "history": ckpt.history, "config_echo": _echo(values), "seed_list": [pcfg.seed]}

    if command == "train-head":
        ds = load_dataset(_need(get("dataset"), "dataset"))
        ckpt = load_checkpoint(_need(get("checkpoint"), "checkpoint"))
        cfg = build(SRAConfig, pick(values, SRAConfig))
        trained, result = ex.train_head(ds, ckpt, cfg, get("mode", "fused"))
        save_checkpoint(trained, get("model"))
        val = ex.evaluate_checkpoint(ds, trained, "val").to_dict() if ds.split("val") else {}
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": f"train-head:{get('mode', 'fused')}",
                "model": get("model"), "best_epoch": result.best_epoch, "history": result.history,
                "metrics": val, "config_echo": _echo(values), "seed_list": [cfg.seed]}

    if command == "evaluate":
        ds = load_dataset(_need(get("dataset"), "dataset"))
        model = load_checkpoint(_need(get("model"), "model"))
        split, threshold = get("split", "test"), get("threshold", 0.5)
        n_boot = get("bootstrap", 0)
        if n_boot:
            scores, labels = ex.predict(ds, model, split)
            report = bootstrap_ci(scores, labels, n_boot, threshold=threshold, seed=model.seed)
        else:
            report = ex.evaluate_checkpoint(ds, model, split, threshold)
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": get("run_tag", f"evaluate:{split}"),
                "metrics": report.to_dict(), "config_echo": _echo(values), "seed_list": [model.seed],
                "warnings": report.warnings}

    if command == "ablate":
        ds = load_dataset(_need(get("dataset"), "dataset"))
        ckpt = load_checkpoint(_need(get("checkpoint"), "checkpoint"))
        cfg = build(SRAConfig, pick(values, SRAConfig))
        modes = [m.strip() for m in get("modes", ",".join(ex.MODES)).split(",") if m.strip()]
        for m in modes:
            if m not in ex.MODES:
                raise ConfigError(f"unknown ablation mode {m!r}; choose from {', '.join(ex.MODES)}")
        seeds = _seeds(values)
        results = {m: ex.ablation_harness(ds, ckpt, m, cfg, seeds) for m in modes}
        rows = ex.ablation_table(results, get("table_csv"))
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "ablation",
                "metrics": {m: r.report.to_dict() for m, r in results.items()}, "table": rows,
                "config_echo": _echo(values), "seed_list": seeds}

    if command == "cross-domain":
        src = load_dataset(_need(get("source"), "source dataset"))
        tgt = load_dataset(_need(get("target"), "target dataset"))
        enc = build(EncoderConfig, {**pick(values, EncoderConfig), "channels": values.get("channels", src.channels)})
        pcfg = build(PretrainConfig, pick(values, PretrainConfig))
        cfg = build(SRAConfig, pick(values, SRAConfig))
        ckpt = load_checkpoint(_need(get("checkpoint"), "checkpoint")) if "checkpoint" in values else None
        seeds = _seeds(values)
        res = ex.cross_domain_run(src, tgt, enc, pcfg, cfg, seeds, get("project_channels", True), ckpt,
                                  (get("source_tag", "A"), get("target_tag", "B")))
        return _metrics_report(res, values)

    if command == "explain":
        ds = load_dataset(_need(get("dataset"), "dataset"))
        model = load_checkpoint(_need(get("model"), "model"))
        prof = ex.explain(ds, model, get("split", "test"))
        files = {k: str(v) for k, v in ex.write_profile_csvs(prof, get("csv_dir")).items()} \
            if "csv_dir" in values else {}
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "explain", "mean_attention": prof["mean"],
                "ranking": prof["ranking"], "grouped": prof["grouped"], "grouped_ranking": prof["grouped_ranking"],
                "files": files, "config_echo": _echo(values)}

    if command == "gradcheck":
        res = gradcheck_suite(get("seed", 0), get("probes", 20))
        return {"schema_version": REPORT_SCHEMA_VERSION, "run_tag": "gradcheck", "modules": res,
                "passed": all(r["passed"] for r in res.values()), "config_echo": _echo(values)}

    raise UsageError(f"unknown command {command!r}")  # pragma: no cover


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(_COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = _merge(args)
        report = run_command(args.command, values)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc), EXIT_USAGE)
    except ContainerError as exc:
        return _fail(f"checkpoint_{exc.code}", str(exc), EXIT_FAILURE)
    except NumericError as exc:
        return _fail("numeric", str(exc), EXIT_FAILURE)
    except ValueError as exc:
        return _fail("invalid_input", str(exc), EXIT_FAILURE)
    text = dumps_json(report)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    if args.command == "gradcheck" and not report["passed"]:
        return EXIT_FAILURE
    return 0


__all__ = ["main", "run_command"]
