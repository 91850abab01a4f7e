"""Command-line front end: simulate, impute, fit, evaluate, tune, experiment.

Every output file starts with ``#`` comment lines holding the subcommand and
the fully resolved configuration, so a file documents how it was produced.
Randomness derives from ``seed`` and ``replication`` through the same
per-replication seed tree the experiment runner uses, which lets the
file-based chain simulate -> impute -> fit -> evaluate reproduce one
replication of ``experiment``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from typing import Optional, Sequence

import numpy as np

from . import ramsvm
from .data import Dataset, Rule, Schema, Standardizer, load_dataset, save_dataset
from .evaluation import cross_validate_lambda, evaluate
from .gps import fit_multinomial
from .pipeline import METHODS, PipelineConfig, fit_rule
from .simulation import (
    RESULT_COLUMNS, SCENARIOS, ScenarioConfig, SurvivalSettings, impute_training,
    replication_data, replication_seeds, run_experiment,
)

SCENARIO_KEYS = ("boundary", "main_effect", "gps_model", "outcome", "n", "test_n",
                 "replications", "seed", "tau", "censor_rate")
PIPELINE_KEYS = tuple(f.name for f in fields(PipelineConfig) if f.name != "method")
SURVIVAL_KEYS = tuple(f.name for f in fields(SurvivalSettings))
RUN_KEYS = ("methods", "replication", "lambda", "n_jobs")
CONFIG_KEYS = SCENARIO_KEYS + PIPELINE_KEYS + SURVIVAL_KEYS + RUN_KEYS


class UsageError(Exception):
    pass


def default_config() -> dict:
    sc = ScenarioConfig()
    pc = PipelineConfig()
    sv = SurvivalSettings()
    cfg = {k: getattr(sc, k) for k in SCENARIO_KEYS}
    cfg.update({k: getattr(pc, k) for k in PIPELINE_KEYS})
    cfg["lambda_grid"] = list(pc.lambda_grid)
    cfg.update({k: getattr(sv, k) for k in SURVIVAL_KEYS})
    cfg.update(methods=["match-gw1"], replication=0, n_jobs=1)
    cfg["lambda"] = None
    return cfg


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    return data


def _flag_overrides(args) -> dict:
    out = {}
    if getattr(args, "scenario", None):
        out["boundary"], out["main_effect"] = SCENARIOS[args.scenario]
    simple = {"gps": "gps_model", "outcome": "outcome", "n": "n", "test_n": "test_n",
              "reps": "replications", "seed": "seed", "rep": "replication",
              "lam": "lambda", "n_jobs": "n_jobs", "tau": "tau", "n_trees": "n_trees"}
    for attr, key in simple.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    if getattr(args, "method", None):
        out["methods"] = list(args.method)
    return out


def resolve_config(args) -> dict:
    """defaults < config file < flags."""
    cfg = default_config()
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    cfg.update(_flag_overrides(args))
    for m in cfg["methods"]:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {list(METHODS)}")
    return cfg


def scenario_of(cfg: dict) -> ScenarioConfig:
    return ScenarioConfig(**{k: cfg[k] for k in SCENARIO_KEYS})


def pipeline_of(cfg: dict, method: str) -> PipelineConfig:
    return PipelineConfig(method=method, **{k: cfg[k] for k in PIPELINE_KEYS})


def survival_of(cfg: dict) -> SurvivalSettings:
    return SurvivalSettings(**{k: cfg[k] for k in SURVIVAL_KEYS})


def header(command: str, cfg: dict) -> str:
    return f"mmitr {command}\nconfig: {json.dumps(cfg, sort_keys=True)}"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, head: str, columns: Sequence[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        for line in head.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def infer_schema(path) -> Schema:
    """Roles from the column names ``save_dataset`` writes."""
    with open(path, newline="") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                names = next(csv.reader([line]))
                break
        else:
            raise UsageError(f"{path}: no header row")
    fixed = {"a": "treatment", "r": "outcome", "time": "time", "event": "event", "opt": "optimal"}
    roles = {}
    for name in names:
        if name in fixed:
            roles[name] = fixed[name]
        elif name.startswith("gps") and name[3:].isdigit():
            roles[name] = "gps"
        else:
            roles[name] = "covariate"
    return Schema(roles)


def read_data(args) -> Dataset:
    schema = Schema.from_json(args.schema) if args.schema else infer_schema(args.data)
    return load_dataset(args.data, schema)


# subcommands ----------------------------------------------------------------

def cmd_simulate(args, cfg) -> None:
    sc = scenario_of(cfg)
    train, test = replication_data(sc, cfg["replication"])
    d = train if args.split == "train" else test
    cfg = dict(cfg, split=args.split)
    if sc.outcome == "survival":
        cfg["censored_fraction"] = float(1.0 - d.event.mean())
    save_dataset(d, args.out, header("simulate", cfg))


def cmd_impute(args, cfg) -> None:
    d = read_data(args)
    if not d.has_survival:
        raise RuntimeError("impute needs time and event columns")
    sc = scenario_of(cfg)
    seeds = replication_seeds(cfg["seed"], cfg["replication"])
    out = impute_training(d, sc, seeds, survival_of(cfg))
    save_dataset(out, args.out, header("impute", cfg))


def _method(cfg) -> str:
    if len(cfg["methods"]) != 1:
        raise UsageError("this subcommand takes exactly one --method")
    return cfg["methods"][0]


def cmd_tune(args, cfg) -> None:
    d = read_data(args)
    pc = pipeline_of(cfg, _method(cfg))
    seeds = replication_seeds(cfg["seed"], cfg["replication"])
    best, means = cross_validate_lambda(d, pc, seed=seeds.cv)
    rows = [{"lambda": lam, "mean_value": means[lam], "selected": int(lam == best)}
            for lam in sorted(means)]
    write_table(args.out, header("tune", cfg), ("lambda", "mean_value", "selected"), rows)


def cmd_fit(args, cfg) -> None:
    d = read_data(args)
    method = _method(cfg)
    pc = pipeline_of(cfg, method)
    seeds = replication_seeds(cfg["seed"], cfg["replication"])
    lam = cfg["lambda"]
    if lam is None:
        lam, _ = cross_validate_lambda(d, pc, seed=seeds.cv)
    rule = fit_rule(d, pc, float(lam), seed=seeds.labeling)
    doc = {
        "config": dict(cfg, lambda_selected=float(lam)),
        "method": method,
        "k": rule.k,
        "arm_labels": list(d.arm_labels),
        "standardizer": None if rule.standardizer is None else rule.standardizer.to_dict(),
        "model": rule.model.to_dict(),
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_rule(path) -> Rule:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        model = ramsvm.RamsvmModel.from_dict(doc["model"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise RuntimeError(f"cannot read model {path}: {exc}") from None
    st = doc.get("standardizer")
    return Rule(model, int(doc["k"]), None if st is None else Standardizer.from_dict(st),
                name=doc.get("method", "rule"))


def cmd_evaluate(args, cfg) -> None:
    d = read_data(args)
    rule = load_rule(args.model)
    if d.gps is not None:
        gps, source = d.gps, "file"
    else:
        gps, source = fit_multinomial(d, cfg["ridge"], cfg["clip"]).predict(d.covariates), "fitted"
    rep = evaluate(rule, d, gps, source)
    cols = ("rule", "value", "misclassification", "n_eval", "gps_source")
    write_table(args.out, header("evaluate", cfg), cols, [rep.to_dict()])


def cmd_experiment(args, cfg) -> None:
    sc = scenario_of(cfg)
    pc = pipeline_of(cfg, cfg["methods"][0])
    rows = run_experiment(sc, cfg["methods"], pc, survival_of(cfg), n_jobs=int(cfg["n_jobs"]))
    write_table(args.out, header("experiment", cfg), RESULT_COLUMNS, rows)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"mmitr: {len(failed)} of {len(rows)} runs failed; see the status column",
              file=sys.stderr)


COMMANDS = {"simulate": cmd_simulate, "impute": cmd_impute, "fit": cmd_fit,
            "evaluate": cmd_evaluate, "tune": cmd_tune, "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmitr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with parameter overrides")
    common.add_argument("--out", required=True, help="output path")
    common.add_argument("--seed", type=int)
    common.add_argument("--rep", type=int, help="replication index for seed derivation")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", choices=sorted(SCENARIOS))
    scen.add_argument("--gps", choices=("correct", "misspecified"))
    scen.add_argument("--outcome", choices=("continuous", "survival"))
    scen.add_argument("--n", type=int)
    scen.add_argument("--test-n", dest="test_n", type=int)
    scen.add_argument("--tau", type=float)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="delimited input file")
    data.add_argument("--schema", help="JSON column-role map; inferred from names if omitted")

    meth = argparse.ArgumentParser(add_help=False)
    meth.add_argument("--method", action="append", choices=METHODS)

    p = sub.add_parser("simulate", parents=[common, scen], help="write a simulated data set")
    p.add_argument("--split", choices=("train", "test"), default="train")

    p = sub.add_parser("impute", parents=[common, data], help="impute censored outcomes")
    p.add_argument("--tau", type=float)
    p.add_argument("--n-trees", dest="n_trees", type=int)

    p = sub.add_parser("fit", parents=[common, data, meth], help="fit a treatment rule")
    p.add_argument("--lambda", dest="lam", type=float, help="skip tuning and use this lambda")

    sub.add_parser("evaluate", parents=[common, data], help="value and misclassification") \
        .add_argument("--model", required=True)

    sub.add_parser("tune", parents=[common, data, meth], help="cross-validate lambda")

    p = sub.add_parser("experiment", parents=[common, scen, meth], help="replicated simulation")
    p.add_argument("--reps", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        scenario_of(cfg)
        pipeline_of(cfg, cfg["methods"][0])
    except (UsageError, ValueError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"mmitr: error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mmitr: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"mmitr: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
