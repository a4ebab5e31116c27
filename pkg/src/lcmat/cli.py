"""Command-line entry point: ``lcmat {gen,select,condense,evaluate,verify}``.

Configuration comes from built-in defaults, then an optional JSON file
(``--config``), then explicit flags. Reports are JSON objects with a
``schema_version``; everything except the ``timing`` block is a pure
function of the resolved configuration.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical
failure (including a failed ``verify`` check).

``LCMAT_OUTPUT_DIR``, when set, is prepended to relative output paths.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import condensation as cond
from . import curvature, data, evaluation, model, oracle, selection

log = logging.getLogger("lcmat")

SCHEMA_VERSION = 1
OUTPUT_ENV = "LCMAT_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class VerificationFailed(ArithmeticError):
    pass


TRAIN_DEFAULTS = {
    "epochs": 30, "batch_size": 64, "lr": 0.05, "momentum": 0.9,
    "weight_decay": 5e-4, "arch": "linear", "hidden": 32,
}

DEFAULTS = {
    "gen": {
        "classes": 10, "per_class": 400, "dim": 32, "separation": 3.0, "seed": 0,
        "test_fraction": 0.5, "output": "train.lcd", "test_output": "test.lcd",
        "format": "lcd",
    },
    "select": {
        "train": None, "method": "lcmat_s", "fraction": 0.05, "rho": 0.1, "subdims": 100,
        "seed": 0, "pretrain_epochs": 10, "pretrain_lr": 0.001, "weighted": False,
        "standardize": True, "checkpoint": None, "save_checkpoint": None,
        "output": "select_report.json", "format": "json", "threads": None,
        **TRAIN_DEFAULTS,
    },
    "condense": {
        "train": None, "per_class": 5, "rho": 0.1, "outer": 20, "inner": 10,
        "data_lr": 0.1, "model_lr": 0.1, "distance": "squared_l2", "seed": 0,
        "init_scale": 1.0, "arch": "linear", "hidden": 32, "standardize": True,
        "synthetic_output": "synthetic.lcd", "output": "condense_report.json",
        "format": "json", "threads": None,
    },
    "evaluate": {
        "train": None, "test": None, "test_fraction": 0.5, "methods": ["uniform", "lcmat_s"],
        "fractions": [0.01, 0.05], "seeds": [0, 1, 2, 3, 4], "rho": 0.1, "subdims": 100,
        "pretrain_epochs": 10, "pretrain_lr": 0.001, "standardize": True,
        "output": "evaluate_report.json", "format": "json", "threads": None,
        **TRAIN_DEFAULTS,
    },
    "verify": {
        "trials": 100, "rho": 0.05, "n_dirs": 4096, "seed": 0, "instances": 100,
        "output": "verify_report.json", "format": "json", "threads": None,
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _flag(p, name, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)


def _bool_flag(p, name):
    p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const=True, default=None)
    p.add_argument("--no-" + name.replace("_", "-"), dest=name, action="store_const", const=False)


def _train_flags(p):
    _flag(p, "epochs", type=int)
    _flag(p, "batch_size", type=int)
    _flag(p, "lr", type=float)
    _flag(p, "momentum", type=float)
    _flag(p, "weight_decay", type=float)
    _flag(p, "arch", choices=["linear", "mlp"])
    _flag(p, "hidden", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcmat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        _flag(p, "config", type=Path, help="JSON file of option values")
        _flag(p, "output", help="report path")
        _flag(p, "format", choices=["json", "csv"] if name != "gen" else ["lcd", "csv"])
        if name != "gen":
            _flag(p, "threads", type=int, help="cap on BLAS worker threads")
        return p

    p = command("gen", "generate a Gaussian-mixture dataset")
    _flag(p, "classes", type=int)
    _flag(p, "per_class", type=int)
    _flag(p, "dim", type=int)
    _flag(p, "separation", type=float)
    _flag(p, "seed", type=int)
    _flag(p, "test_fraction", type=float)
    _flag(p, "test_output")

    p = command("select", "select a coreset")
    _flag(p, "train")
    _flag(p, "method", choices=list(selection.METHODS))
    _flag(p, "fraction", type=float)
    _flag(p, "rho", type=float)
    _flag(p, "subdims", type=int)
    _flag(p, "seed", type=int)
    _flag(p, "pretrain_epochs", type=int)
    _flag(p, "pretrain_lr", type=float)
    _flag(p, "checkpoint", help="LCM1 model to select with instead of pretraining")
    _flag(p, "save_checkpoint")
    _bool_flag(p, "weighted")
    _bool_flag(p, "standardize")
    _train_flags(p)

    p = command("condense", "synthesize a condensed dataset")
    _flag(p, "train")
    _flag(p, "per_class", type=int)
    _flag(p, "rho", type=float)
    _flag(p, "outer", type=int)
    _flag(p, "inner", type=int)
    _flag(p, "data_lr", type=float)
    _flag(p, "model_lr", type=float)
    _flag(p, "distance", choices=list(cond.DISTANCES))
    _flag(p, "seed", type=int)
    _flag(p, "init_scale", type=float)
    _flag(p, "arch", choices=["linear", "mlp"])
    _flag(p, "hidden", type=int)
    _flag(p, "synthetic_output")
    _bool_flag(p, "standardize")

    p = command("evaluate", "retrain on reduced sets and tabulate test accuracy")
    _flag(p, "train")
    _flag(p, "test")
    _flag(p, "test_fraction", type=float)
    _flag(p, "methods", type=_csv_list(str))
    _flag(p, "fractions", type=_csv_list(float))
    _flag(p, "seeds", type=_csv_list(int))
    _flag(p, "rho", type=float)
    _flag(p, "subdims", type=int)
    _flag(p, "pretrain_epochs", type=int)
    _flag(p, "pretrain_lr", type=float)
    _bool_flag(p, "standardize")
    _train_flags(p)

    p = command("verify", "run the oracle battery")
    _flag(p, "trials", type=int)
    _flag(p, "rho", type=float)
    _flag(p, "n_dirs", type=int)
    _flag(p, "seed", type=int)
    _flag(p, "instances", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    _validate(cmd, cfg)
    return cfg


def _validate(cmd, cfg):
    def need(cond_, msg):
        if not cond_:
            raise ConfigError(msg)

    if cmd in ("select", "condense", "evaluate"):
        need(cfg["train"], "--train is required")
    if cmd == "select":
        need(cfg["method"] in selection.METHODS, f"unknown method {cfg['method']!r}")
        need(0 < cfg["fraction"] <= 1, "fraction must lie in (0, 1]")
        need(cfg["rho"] >= 0, "rho must be non-negative")
        need(cfg["subdims"] >= 1, "subdims must be at least 1")
    if cmd == "evaluate":
        bad = [m for m in cfg["methods"] if m not in selection.METHODS]
        need(not bad, f"unknown methods: {bad}")
        need(cfg["methods"] and cfg["fractions"] and cfg["seeds"], "methods, fractions and seeds must be non-empty")
        need(all(0 < f <= 1 for f in cfg["fractions"]), "fractions must lie in (0, 1]")
    if cmd == "condense":
        need(cfg["per_class"] >= 1, "per_class must be at least 1")
        need(cfg["distance"] in cond.DISTANCES, f"unknown distance {cfg['distance']!r}")
    if cmd == "verify":
        need(cfg["trials"] >= 1 and cfg["rho"] > 0 and cfg["n_dirs"] >= 1, "trials, rho and n_dirs must be positive")
    if cmd in ("select", "evaluate"):
        need(cfg["epochs"] >= 0 and cfg["batch_size"] >= 1 and cfg["lr"] > 0, "invalid training hyperparameters")


def _out_path(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _train_config(cfg, seed=None, epochs=None, lr=None) -> model.TrainConfig:
    return model.TrainConfig(
        epochs=cfg["epochs"] if epochs is None else epochs,
        batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"] if lr is None else lr,
        momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
        seed=cfg.get("seed", 0) if seed is None else seed,
        arch=cfg["arch"], hidden=cfg["hidden"])


def _load(path) -> data.Dataset:
    if str(path).lower().endswith(".csv"):
        return data.load_csv(path)
    return data.load_binary(path)


def _report(cmd, cfg, body, seconds) -> dict:
    # the thread cap affects speed only, so it is reported with the timing
    config = {k: v for k, v in cfg.items() if k != "threads"}
    return {
        "schema_version": SCHEMA_VERSION,
        "command": cmd,
        "config": config,
        "versions": {"lcmat": __version__, "numpy": np.__version__},
        **body,
        "timing": {"seconds": seconds, "threads": cfg.get("threads")},
    }


def _write_json(path, rec):
    _out_path(path).write_text(json.dumps(_jsonable(rec), indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _out_path(path).write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# -- commands ----------------------------------------------------------------

def cmd_gen(cfg) -> dict:
    ds = data.synth_gaussian_mixture(cfg["seed"], cfg["classes"], cfg["per_class"],
                                     cfg["dim"], cfg["separation"])
    train, test = data.stratified_split(ds, data.SplitSpec(cfg["test_fraction"], cfg["seed"]))
    writer = data.save_csv if cfg["format"] == "csv" else data.save_binary
    writer(train, _out_path(cfg["output"]))
    writer(test, _out_path(cfg["test_output"]))
    return {"train_rows": train.n, "test_rows": test.n, "dim": ds.d, "classes": ds.class_count}


def cmd_select(cfg) -> dict:
    train = _load(cfg["train"])
    if cfg["standardize"]:
        train = data.standardize(train)
    if cfg["checkpoint"]:
        m = model.load_checkpoint(cfg["checkpoint"])
    else:
        m = model.fit(train, _train_config(cfg, epochs=cfg["pretrain_epochs"], lr=cfg["pretrain_lr"]))
    if cfg["save_checkpoint"]:
        model.save_checkpoint(m, _out_path(cfg["save_checkpoint"]))
    sel = selection.select(cfg["method"], m, train, cfg["fraction"], cfg["rho"],
                           cfg["subdims"], cfg["seed"], cfg["weighted"])

    profile = curvature.build_profile(m, train)
    bounds, gamma = {}, np.zeros(len(sel))
    for y in range(train.class_count):
        rows = train.class_indices(y)
        prof = profile.rows(rows)
        sub = curvature.select_subdims(prof, cfg["subdims"])
        local = np.flatnonzero(np.isin(rows, sel.indices))
        lhs, rhs = selection.eq10_bound_check(prof, sub, cfg["rho"], local)
        bounds[y] = {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1 + 1e-12) + 1e-12)}
        cm = selection.build_cost_matrix(prof, sub, cfg["rho"])
        gamma[np.searchsorted(sel.indices, rows[local])] = selection.nearest_counts(cm, local)
    return {
        "selection": {
            "method": sel.method,
            "indices": sel.indices,
            "labels": train.labels[sel.indices],
            "gamma": gamma,
            "weights_applied": sel.weights is not None,
            "objective_trace": {str(k): v for k, v in sel.objective_trace.items()},
            "size": len(sel),
        },
        "bound_check": bounds,
        "loss_gap": curvature.loss_gap(m, train, sel),
    }


def cmd_condense(cfg) -> dict:
    train = _load(cfg["train"])
    if cfg["standardize"]:
        train = data.standardize(train)
    ccfg = cond.CondenseConfig(
        per_class=cfg["per_class"], rho=cfg["rho"], outer_loops=cfg["outer"],
        inner_steps=cfg["inner"], data_lr=cfg["data_lr"], model_lr=cfg["model_lr"],
        distance_kind=cfg["distance"], seed=cfg["seed"], arch=cfg["arch"],
        hidden=cfg["hidden"], init_scale=cfg["init_scale"])
    S, trace = cond.lcmat_c_condense(train, ccfg)
    out = S.to_dataset("synthetic")
    data.save_binary(out, _out_path(cfg["synthetic_output"]))
    return {
        "synthetic": {"path": str(cfg["synthetic_output"]), "rows": S.n,
                      "per_class": S.per_class, "labels": S.labels},
        "loss_trace": trace,
        "condense_config": asdict(ccfg),
    }


def cmd_evaluate(cfg) -> dict:
    train = _load(cfg["train"])
    if cfg["test"]:
        test = _load(cfg["test"])
    else:
        train, test = data.stratified_split(train, data.SplitSpec(cfg["test_fraction"], 0))
    if cfg["standardize"]:
        train, test = data.standardize(train, test)
    tcfg = _train_config(cfg, seed=0)
    table = evaluation.compare_methods(
        cfg["methods"], cfg["fractions"], cfg["seeds"], {"data": (train, test)}, tcfg,
        pretrain_epochs=cfg["pretrain_epochs"], rho=cfg["rho"], K=cfg["subdims"],
        pretrain_lr=cfg["pretrain_lr"])
    reference = evaluation.evaluate_reduction(train, train, test, tcfg, cfg["seeds"], method="full")
    return {
        "cells": list(table.rows()),
        "reference": reference.to_record() | {"wall_seconds": None},
    }


def cmd_verify(cfg) -> dict:
    checks = oracle.run_battery(seed=cfg["seed"], trials=cfg["trials"], rho=cfg["rho"],
                         n_dirs=cfg["n_dirs"], instances=cfg["instances"])
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}


COMMANDS = {"gen": cmd_gen, "select": cmd_select, "condense": cmd_condense,
            "evaluate": cmd_evaluate, "verify": cmd_verify}


def _emit(cmd, cfg, body, seconds):
    rec = _report(cmd, cfg, body, seconds)
    if cmd == "gen":
        return rec
    out = cfg["output"]
    if cfg["format"] == "csv":
        if cmd == "select":
            s = body["selection"]
            _write_csv(out, ["index", "label", "gamma"],
                       zip(s["indices"].tolist(), s["labels"].tolist(), s["gamma"].tolist()))
        elif cmd == "condense":
            _write_csv(out, ["step", "objective"], enumerate(np.asarray(body["loss_trace"]).tolist()))
        elif cmd == "evaluate":
            rows = [(r["dataset"], r["method"], r["fraction"], seed, acc)
                    for r in body["cells"] for seed, acc in zip(cfg["seeds"], r["accuracies"])]
            _write_csv(out, ["dataset", "method", "fraction", "seed", "accuracy"], rows)
        else:
            _write_csv(out, ["check", "passed", "detail"],
                       [(c["name"], c["passed"], c["detail"]) for c in body["checks"]])
    else:
        _write_json(out, rec)
    return rec


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"lcmat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from threadpoolctl import threadpool_limits

    t0 = time.perf_counter()
    try:
        with threadpool_limits(limits=cfg.get("threads")):
            body = COMMANDS[args.command](cfg)
        rec = _emit(args.command, cfg, body, time.perf_counter() - t0)
    except (ConfigError, selection.BudgetError) as exc:
        print(f"lcmat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DataError, OSError) as exc:
        print(f"lcmat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"lcmat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"lcmat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command == "verify":
        for c in body["checks"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
        if not body["passed"]:
            return EXIT_NUMERIC
    log.info("wrote %s", cfg.get("output"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
