"""Command-line entry point: synth, oracle, train, eval, export.

Every option lives in one flat run configuration. Values come from the
defaults, then a JSON file given with ``--config``, then explicit flags.
Exit codes: 0 success, 2 configuration or input error, 3 training aborted,
4 codebook does not cover the evaluated classes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, field, fields, make_dataclass
from functools import partial
from pathlib import Path

from .datamodel import (
    SEMANTIC, SynthConfig, generate_synthetic, load_dataset, read_codebook, write_dataset, write_planted,
    write_tensor_file, write_visual_codebook,
)
from .errors import ConfigError, CoverageError, DatasetError, FormatError, TrainingAborted
from .evaluator import evaluate
from .numerics import Parallel
from .oracle import OracleConfig, build_oracle, dataset_pi, load_oracle, oracle_codebook, save_oracle
from .trainer import TrainConfig, embed, load_checkpoint, predict, save_checkpoint, train, write_log_csv

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN, EXIT_COVERAGE = 0, 2, 3, 4

_PATHS = [
    ("data", "dataset directory"),
    ("out", "output path (directory for synth, file otherwise)"),
    ("oracle", "visual oracle file"),
    ("model", "learner checkpoint to evaluate or export"),
    ("codebook", "codebook for evaluation (.csv semantic, .vsef visual)"),
    ("report", "CSV report path"),
    ("log", "training log CSV (default: <out>.log.csv)"),
    ("emit_codebook", "oracle: also write the class-averaged codebook here (VSEF)"),
    ("split", "alternative split.json"),
]
_EXTRA = [
    ("setting", str, "gzsl", "evaluation setting: zsl or gzsl"),
    ("threads", int, 1, "worker threads; results do not depend on it"),
    ("oracle_epochs", int, OracleConfig.epochs, "oracle training epochs"),
    ("oracle_lr", float, OracleConfig.lr, "oracle Adam learning rate"),
    ("oracle_kind", str, OracleConfig.kind, "oracle output: structured or flat"),
    ("oracle_permute", bool, OracleConfig.permute, "permute input channels for the oracle"),
]
_SYNTH = [f for f in fields(SynthConfig) if f.name != "seed"]

RunConfig = make_dataclass(
    "RunConfig",
    [(f.name, f.type, field(default=f.default)) for f in fields(TrainConfig)]
    + [(name, "str | None", field(default=None)) for name, _ in _PATHS]
    + [(name, typ, field(default=default)) for name, typ, default, _ in _EXTRA]
    + [("synth_" + f.name, f.type, field(default=f.default)) for f in _SYNTH],
)
RunConfig.__doc__ = "Flat run configuration: training options, oracle options, synth options, paths."

_HELP = {name: text for name, text in _PATHS}
_HELP.update({name: text for name, _, _, text in _EXTRA})
_HELP.update({
    "mode": "semantic | visual | visual-flat | baseline",
    "epochs": "training epochs (baseline: optimiser steps)",
    "lr_step1": "Adam rate for the grouping weights (step 1)",
    "lr_step2": "Adam rate for classifier, mapper and baseline (step 2)",
    "lam": "weight of the diversity term in the part loss",
    "zeta": "diversity margin",
    "eta": "structured hinge margin",
    "M": "number of parts",
    "K": "number of types per part",
    "hidden": "mapper hidden width",
    "eta_b": "baseline hinge margin",
    "weight_decay": "baseline L2 penalty",
    "em_period": "run EM every this many epochs",
    "em_max_steps": "EM step cap",
    "em_tol": "EM stopping tolerance on the mean NLL",
    "mapper_steps": "mapper updates per epoch (semantic mode)",
    "init_logit": "median peak logit of the initial grouping",
    "normalize_codebook": "L2-normalise semantic codebook rows",
    "margin_on_correct": "put the hinge margin on the true label, as literally printed",
    "theta_grad": "let the visual potential move the prototypes (experimental)",
    "flat_input": "visual-flat input: global (sum-pooled map) or parts (pooled part features)",
    "seed": "seed for every random stream",
})


def _field_type(f):
    t = f.type if isinstance(f.type, str) else f.type.__name__
    return {"int": int, "float": float, "bool": bool}.get(t.split(" ")[0], str)


def load_run_config(path=None, overrides=None):
    """Defaults, then the JSON file, then ``overrides``; unknown keys raise ConfigError."""
    values = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(data)
    values.update(overrides or {})
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    for k, v in values.items():
        typ = _field_type(known[k])
        if v is None or typ is str:
            continue
        if typ is bool and not isinstance(v, bool):
            raise ConfigError(f"{k} must be true or false")
        if typ in (int, float) and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"{k} must be a number")
        if typ is int and int(v) != v:
            raise ConfigError(f"{k} must be an integer")
        values[k] = typ(v)
    return RunConfig(**values)


def train_config(rc) -> TrainConfig:
    return TrainConfig(**{f.name: getattr(rc, f.name) for f in fields(TrainConfig)}).validate()


def oracle_config(rc) -> OracleConfig:
    cfg = OracleConfig(M=rc.M, K=rc.K, epochs=rc.oracle_epochs, lr=rc.oracle_lr, lam=rc.lam,
                       zeta=rc.zeta, em_max_steps=rc.em_max_steps, em_tol=rc.em_tol,
                       permute=rc.oracle_permute, init_logit=rc.init_logit, kind=rc.oracle_kind)
    cfg.validate()
    return cfg


def synth_config(rc) -> SynthConfig:
    cfg = SynthConfig(seed=rc.seed, **{f.name: getattr(rc, "synth_" + f.name) for f in _SYNTH})
    cfg.validate()
    return cfg


def _require(rc, *names):
    missing = [n for n in names if getattr(rc, n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-")
                                                                      for n in missing))


def _load(rc):
    _require(rc, "data")
    return load_dataset(rc.data, rc.split)


# --------------------------------------------------------------------------
# commands


def cmd_synth(rc):
    _require(rc, "out")
    cfg = synth_config(rc)
    ds, planted = generate_synthetic(cfg)
    write_dataset(ds, rc.out)
    write_planted(planted, ds, cfg, rc.out)
    print(f"wrote {len(ds)} instances ({cfg.n_seen} seen / {cfg.n_classes - cfg.n_seen} unseen "
          f"classes) to {rc.out}")
    return EXIT_OK


def cmd_oracle(rc):
    _require(rc, "out")
    ds = _load(rc)
    cfg = oracle_config(rc)
    parallel = Parallel(rc.threads)
    oracle = build_oracle(ds, cfg, rc.seed, parallel)
    save_oracle(oracle, rc.out, cfg)
    for m, trace in enumerate(oracle.nll):
        monotone = all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
        print(f"part {m}: NLL {trace[0]:.4f} -> {trace[-1]:.4f} in {len(trace) - 1} EM steps"
              f"{'' if monotone else ' (not monotone)'}")
    if rc.emit_codebook:
        write_visual_codebook(oracle_codebook(oracle, ds, parallel=parallel), rc.emit_codebook)
        print(f"codebook written to {rc.emit_codebook}")
    return EXIT_OK


def cmd_train(rc):
    _require(rc, "out")
    ds = _load(rc)
    cfg = train_config(rc)
    if cfg.mode == "semantic" or (cfg.mode == "baseline" and rc.oracle is None):
        if ds.codebook is None or ds.codebook.kind != SEMANTIC:
            raise ConfigError(f"{cfg.mode} mode needs codebook_semantic.csv in the dataset")
        supervision = ds.codebook
    else:
        _require(rc, "oracle")
        supervision = load_oracle(rc.oracle)
    try:
        ckpt = train(ds, cfg, supervision, Parallel(rc.threads))
    except CoverageError as e:
        raise ConfigError(str(e)) from e
    save_checkpoint(ckpt, rc.out)
    log_path = rc.log or rc.out + ".log.csv"
    write_log_csv(ckpt.log, log_path)
    print(f"checkpoint written to {rc.out}; log in {log_path}")
    return EXIT_OK


def _eval_codebook(rc, ds, ckpt):
    if rc.codebook is not None:
        return read_codebook(rc.codebook, ds.classes)
    if ckpt.mode == "semantic" or (ckpt.mode == "baseline" and ckpt.baseline.target_kind == SEMANTIC):
        if ds.codebook is None or ds.codebook.kind != SEMANTIC:
            raise ConfigError("no semantic codebook in the dataset; pass --codebook")
        return ds.codebook
    if rc.oracle is not None:
        oracle = load_oracle(rc.oracle)
        if ckpt.mode == "visual-flat":
            oracle.kind = "flat"
        return oracle_codebook(oracle, ds, parallel=Parallel(rc.threads))
    raise ConfigError(f"{ckpt.mode} models need --codebook or --oracle for evaluation")


def cmd_eval(rc):
    _require(rc, "model")
    ds = _load(rc)
    ckpt = load_checkpoint(rc.model)
    codebook = _eval_codebook(rc, ds, ckpt)
    report = evaluate(partial(predict, ckpt), ds, codebook, rc.setting, Parallel(rc.threads))
    print(report.table())
    if rc.report:
        report.write_csv(rc.report)
    return EXIT_OK


def cmd_export(rc):
    """Write embeddings of every instance as VSEF: the oracle's if --oracle, else the model's."""
    _require(rc, "out")
    ds = _load(rc)
    X = ds.features if ds.features is not None else ds.parts
    if rc.model is not None:
        values = embed(load_checkpoint(rc.model), X, Parallel(rc.threads))
    else:
        _require(rc, "oracle")
        values = dataset_pi(load_oracle(rc.oracle), ds, parallel=Parallel(rc.threads))
    write_tensor_file(values, rc.out)
    print(f"wrote {values.shape} embeddings to {rc.out}")
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate a planted synthetic dataset"),
    "oracle": (cmd_oracle, "build the visual oracle"),
    "train": (cmd_train, "train a learner"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "export": (cmd_export, "export oracle or learner embeddings as VSEF"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="vsezsl", description=__doc__.split("\n\n")[0],
                                     epilog="Options may also be set in the --config JSON file "
                                            "using their underscore names.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="JSON run configuration")
        for f in fields(RunConfig):
            typ = _field_type(f)
            default = None if f.default is MISSING else f.default
            flag = "--" + f.name.replace("_", "-")
            desc = _HELP.get(f.name) or f"synthetic generator: {f.name[len('synth_'):]}"
            desc = f"{desc} (default: {default})"
            if typ is bool:
                p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=desc)
            else:
                p.add_argument(flag, dest=f.name, type=typ, default=argparse.SUPPRESS, help=desc)
    return parser


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    path = args.pop("config", None)
    try:
        rc = load_run_config(path, args)
        return COMMANDS[command][0](rc)
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        if e.dump is not None:
            print(json.dumps(e.dump, sort_keys=True), file=sys.stderr)
        return EXIT_TRAIN
    except CoverageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    except (ConfigError, DatasetError, FormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
