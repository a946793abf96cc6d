"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, inspect. Each takes
``--config <file>`` (key/value text; see README for the key tables)
plus optional ``--set key=value`` overrides. Exit codes: 0 success,
1 config error, 2 numeric failure (non-finite loss), 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import ConfigError, dataclass_from_kv, load_config_file
from .data import SyntheticSpec, generate_dataset
from .model import ModelConfig, model_forward
from .serialize import (
    FormatError,
    dump_csv,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from .tensor import Tensor
from .train import (
    NumericError,
    TrainConfig,
    ablate_percentiles,
    evaluate_model,
    format_ablation_table,
    train_model,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

# Scalar (non-prefixed) keys each command accepts.
_COMMAND_KEYS = {
    "gen-data": {"out"},
    "train": {"dataset", "checkpoint_out", "log_out", "metrics_out", "dump_out"},
    "eval": {"checkpoint", "dataset", "out"},
    "ablate": {"dataset", "percentiles", "out_json", "out_text"},
    "inspect": {"checkpoint", "dataset", "sample_index", "out_dir"},
}
_COMMAND_PREFIXES = {
    "gen-data": ("data.",),
    "train": ("model.", "train."),
    "eval": (),
    "ablate": ("model.", "train."),
    "inspect": (),
}
# grid/channels/identity count come from the dataset, not the config file
_DERIVED_MODEL_KEYS = ("model.grid_h", "model.grid_w", "model.channels", "model.n_identities")


def _check_keys(cfg: dict, command: str) -> None:
    allowed = _COMMAND_KEYS[command]
    prefixes = _COMMAND_PREFIXES[command]
    for key in cfg:
        if key in allowed:
            continue
        if key in _DERIVED_MODEL_KEYS:
            raise ConfigError(f"{key} is derived from the dataset; remove it")
        if any(key.startswith(p) for p in prefixes):
            continue
        raise ConfigError(f"unknown key {key!r} for command {command!r}")


def _require(cfg: dict, key: str) -> str:
    if key not in cfg:
        raise ConfigError(f"missing required key {key!r}")
    return cfg[key]


def _model_config(cfg: dict, dataset) -> ModelConfig:
    base = dict(cfg)
    base["model.grid_h"] = str(dataset.spec.grid_h)
    base["model.grid_w"] = str(dataset.spec.grid_w)
    base["model.channels"] = str(dataset.spec.channels)
    base["model.n_identities"] = str(len(np.unique(dataset.labels)))
    return dataclass_from_kv(ModelConfig, base, "model.")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_gen_data(cfg: dict) -> int:
    spec = dataclass_from_kv(SyntheticSpec, cfg, "data.")
    out = _require(cfg, "out")
    dataset = generate_dataset(spec)
    save_dataset(out, dataset)
    print(
        f"wrote {dataset.spec.n_samples} samples "
        f"({dataset.query_indices.size} queries) to {out}"
    )
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    dataset = load_dataset(_require(cfg, "dataset"))
    model_cfg = _model_config(cfg, dataset)
    train_cfg = dataclass_from_kv(TrainConfig, cfg, "train.")
    checkpoint_out = _require(cfg, "checkpoint_out")
    result = train_model(
        model_cfg, train_cfg, dataset, dump_path=cfg.get("dump_out")
    )
    save_checkpoint(checkpoint_out, result.params, model_cfg)
    if "log_out" in cfg:
        with open(cfg["log_out"], "w", encoding="utf-8") as fh:
            fh.write("\n".join(result.log_lines) + "\n")
    if "metrics_out" in cfg:
        _write_json(cfg["metrics_out"], result.final_metrics)
    m = result.final_metrics
    print(
        f"trained {train_cfg.epochs} epochs; mAP={m['mAP']:.4f} "
        f"rank1={m['rank1']:.4f} rank5={m['rank5']:.4f}; checkpoint: {checkpoint_out}"
    )
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    params, model_cfg = load_checkpoint(_require(cfg, "checkpoint"))
    dataset = load_dataset(_require(cfg, "dataset"))
    report = evaluate_model(params, model_cfg, dataset)
    out = _require(cfg, "out")
    _write_json(out, report)
    print(f"mAP={report['mAP']:.4f} rank1={report['rank1']:.4f} rank5={report['rank5']:.4f}")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    dataset = load_dataset(_require(cfg, "dataset"))
    model_cfg = _model_config(cfg, dataset)
    train_cfg = dataclass_from_kv(TrainConfig, cfg, "train.")
    raw = cfg.get("percentiles", "0,75,85,95,98")
    try:
        percentiles = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"percentiles must be a comma list of numbers, got {raw!r}") from None
    rows = ablate_percentiles(model_cfg, train_cfg, dataset, percentiles)
    table = format_ablation_table(rows)
    if "out_json" in cfg:
        _write_json(cfg["out_json"], rows)
    if "out_text" in cfg:
        with open(cfg["out_text"], "w", encoding="utf-8") as fh:
            fh.write(table)
    print(table, end="")
    return EXIT_OK


def cmd_inspect(cfg: dict) -> int:
    params, model_cfg = load_checkpoint(_require(cfg, "checkpoint"))
    dataset = load_dataset(_require(cfg, "dataset"))
    try:
        sample_index = int(cfg.get("sample_index", "0"))
    except ValueError:
        raise ConfigError(
            f"sample_index must be an integer, got {cfg['sample_index']!r}"
        ) from None
    if not 0 <= sample_index < dataset.features.shape[0]:
        raise ConfigError(
            f"sample_index {sample_index} out of range [0, {dataset.features.shape[0]})"
        )
    out_dir = _require(cfg, "out_dir")
    os.makedirs(out_dir, exist_ok=True)

    trace: list = []
    x = Tensor(dataset.features[sample_index : sample_index + 1])
    model_forward(x, params, model_cfg, training=False, trace=trace)

    summary_rows = []
    for bi, block in enumerate(trace):
        for label, branch in sorted(block["branches"].items()):
            stem = os.path.join(out_dir, f"block{bi}_{label}")
            dump_csv(stem + "_similarity.csv", branch["similarity"])
            dump_csv(stem + "_adjacency.csv", branch["adjacency"])
            dump_csv(stem + "_column_mass.csv", branch["adjacency"].sum(axis=0))
            summary_rows.append(
                f"{bi},{label},{branch['threshold']:.17g},{branch['nonzeros']}"
            )
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("block,branch,threshold,nonzeros\n")
        fh.write("\n".join(summary_rows) + "\n")
    print(f"wrote attention dumps for sample {sample_index} to {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def _load_cfg(args) -> dict:
    cfg = load_config_file(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="patchgraph",
        description="Percentile-erased attention graph network, synthetic re-ID harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key/value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config entry (repeatable)",
        )
    args = parser.parse_args(argv)

    try:
        cfg = _load_cfg(args)
        _check_keys(cfg, args.command)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as e:
        if isinstance(e, FormatError):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
