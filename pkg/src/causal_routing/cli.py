"""Command line front end.

Subcommands: datagen, dict-build, train, eval, inspect-routing, oracle-check.
Relative paths inside a train config are resolved against the --out
directory, so a recipe can ship with bare file names.
"""

import argparse
import itertools
import math
import os
import sys

import numpy as np

from .blocks import build_dictionary, load_dictionary, save_dictionary
from .config import load_config
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    EvidenceError,
    PositivityError,
    StateError,
)
from .metrics import format_report
from .model import BLOCK_NAMES, Variant, load_checkpoint
from .scm import (
    backdoor_adjust,
    frontdoor_adjust,
    intervene,
    load_scm,
    observational_joint,
    prob_sufficiency,
    random_backdoor_scm,
    random_chain_scm,
    random_frontdoor_scm,
    random_binary_scm,
)
from .taskgen import (
    generate_dataset,
    load_records,
    save_records,
    stack_records,
    task_spec_from_json,
)
from .train import run_training

USER_ERRORS = (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    EvidenceError,
    PositivityError,
    StateError,
    FileNotFoundError,
)


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_datagen(args):
    spec = task_spec_from_json(args.spec)
    out = _ensure_out(args.out)
    data = generate_dataset(spec)
    train_path = os.path.join(out, "train.jsonl")
    test_path = os.path.join(out, "test.jsonl")
    save_records(data.train, train_path)
    save_records(data.test, test_path)
    print(f"regime={spec.regime} rho={spec.rho!r} test_shift={spec.test_shift}")
    print(f"train={len(data.train)} test={len(data.test)} classes={spec.classes}")
    print(f"train_path={train_path}")
    print(f"test_path={test_path}")
    return 0


def cmd_dict_build(args):
    records = load_records(args.train)
    x, _, _ = stack_records(records)
    features = x.reshape(-1, x.shape[2])
    dictionary = build_dictionary(features, args.k, args.seed, args.max_iters)
    out = _ensure_out(args.out)
    path = os.path.join(out, "dictionary.json")
    save_dictionary(dictionary, path)
    print(f"k={dictionary.k} width={dictionary.width} points={features.shape[0]}")
    print(f"dictionary_path={path}")
    return 0


def _resolve_config_paths(config, out_dir):
    for key in ("train_path", "test_path", "dictionary_path", "checkpoint_path"):
        value = getattr(config, key)
        if not os.path.isabs(value):
            setattr(config, key, os.path.join(out_dir, value))


def cmd_train(args):
    config = load_config(args.config)
    for key in ("epochs", "seed", "variant", "batch_size", "learning_rate"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    config.__post_init__()
    out = _ensure_out(args.out)
    _resolve_config_paths(config, out)
    result = run_training(
        config, resume_from=args.resume, stop_after_epochs=args.stop_after_epochs
    )
    log_path = os.path.join(out, "train_log.txt")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.log_lines) + "\n")
    report = format_report(result.metrics)
    metrics_path = os.path.join(out, "metrics.txt")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(report)
    sys.stdout.write(report)
    print(f"checkpoint_path={result.checkpoint_path}")
    print(f"log_path={log_path}")
    return 0


def _load_model_for_data(checkpoint_path, dictionary_path):
    model, _, meta = load_checkpoint(checkpoint_path)
    dictionary = None
    if 2 in model.variant.blocks:
        if dictionary_path is None:
            stored = meta.get("config", {}).get("dictionary_path")
            if stored is None or not os.path.exists(stored):
                raise ConfigError(
                    "model uses the front-door block: pass --dictionary"
                )
            dictionary_path = stored
        dictionary = load_dictionary(dictionary_path)
    return model, dictionary


def cmd_eval(args):
    from .train import evaluate_model
    from .metrics import compute_metrics

    model, dictionary = _load_model_for_data(args.checkpoint, args.dictionary)
    records = load_records(args.data)
    labels, preds = evaluate_model(model, records, dictionary)
    report = format_report(
        compute_metrics(labels, preds, model.hyper.n_classes)
    )
    sys.stdout.write(report)
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "eval_metrics.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report)
        print(f"metrics_path={path}")
    return 0


def cmd_inspect_routing(args):
    model, dictionary = _load_model_for_data(args.checkpoint, args.dictionary)
    records = load_records(args.data)[: args.limit]
    x, z, labels = stack_records(records)
    result = model.forward(x, z, dictionary)
    preds = result.predictions()
    lines = []
    for i in range(len(records)):
        for l in range(result.block_weights.shape[0]):
            w = [float(v) for v in result.block_weights[l]]
            pick_name = BLOCK_NAMES[int(np.argmax(w))]
            lines.append(
                f"trace example={i} label={labels[i]} pred={preds[i]} layer={l} "
                f"ncf={w[0]!r} bd={w[1]!r} fd={w[2]!r} pick={pick_name}"
            )
    for l in range(result.block_weights.shape[0]):
        w = [float(v) for v in result.block_weights[l]]
        pick_name = BLOCK_NAMES[int(np.argmax(w))]
        lines.append(
            f"aggregate layer={l} ncf={w[0]!r} bd={w[1]!r} fd={w[2]!r} "
            f"examples={len(records)} pick={pick_name}"
        )
    lines.append(
        "layer_weights=" + ",".join(repr(float(v)) for v in result.layer_weights)
    )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "routing_report.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"report_path={path}")
    return 0


def _world(scm, exo_assign, interventions):
    """One exogenous configuration pushed through the mechanisms, scalar-wise.
    Deliberately independent of the vectorized enumeration it cross-checks."""
    vals = dict(exo_assign)
    for v in scm.endogenous:
        if v.name in interventions:
            vals[v.name] = int(interventions[v.name])
        elif v.parents:
            vals[v.name] = int(v.table[tuple(vals[p] for p in v.parents)])
        else:
            vals[v.name] = int(v.table)
    return vals


def _brute_force_ps(scm, regime_a, regime_b, y, outcome="Y"):
    num = den = 0.0
    for combo in itertools.product(*(range(e.domain) for e in scm.exogenous)):
        w = math.prod(e.probs[c] for e, c in zip(scm.exogenous, combo))
        exo = {e.name: c for e, c in zip(scm.exogenous, combo)}
        if _world(scm, exo, regime_a)[outcome] != y:
            den += w
            if _world(scm, exo, regime_b)[outcome] == y:
                num += w
    if den <= 0.0:
        raise EvidenceError("evidence has zero probability")
    return num / den


def _oracle_trials(family, trials, seed):
    worst = 0.0
    family_index = ORACLE_FAMILIES.index(family)
    for trial in range(trials):
        rng = np.random.default_rng([seed, family_index, trial])
        if family == "backdoor":
            scm = random_backdoor_scm(rng)
            joint = observational_joint(scm)
            adjusted = backdoor_adjust(joint)
            for x in range(scm.domain("X")):
                truth = intervene(scm, {"X": x}).marginal(("Y",)).probs
                worst = max(worst, float(np.max(np.abs(adjusted[x] - truth))))
        elif family == "frontdoor":
            scm = random_frontdoor_scm(rng)
            joint = observational_joint(scm)
            adjusted = frontdoor_adjust(joint)
            for x in range(scm.domain("X")):
                truth = intervene(scm, {"X": x}).marginal(("Y",)).probs
                worst = max(worst, float(np.max(np.abs(adjusted[x] - truth))))
        elif family == "no_confounder":
            scm = random_chain_scm(rng)
            joint = observational_joint(scm).marginal(("X", "Y")).probs
            px = joint.sum(axis=1)
            for x in range(scm.domain("X")):
                truth = intervene(scm, {"X": x}).marginal(("Y",)).probs
                conditional = joint[x] / px[x]
                worst = max(worst, float(np.max(np.abs(conditional - truth))))
        elif family == "sufficiency":
            scm = random_binary_scm(rng)
            try:
                value = prob_sufficiency(scm, {"X": 0}, {"X": 1}, 1)
                expected = _brute_force_ps(scm, {"X": 0}, {"X": 1}, 1)
            except EvidenceError:
                continue
            worst = max(worst, abs(value - expected))
        else:
            raise ContractError(f"unknown family {family!r}")
    return worst


ORACLE_FAMILIES = ("backdoor", "frontdoor", "no_confounder", "sufficiency")
_ORACLE_TOL = {
    "backdoor": 1e-10,
    "frontdoor": 1e-10,
    "no_confounder": 1e-12,
    "sufficiency": 1e-12,
}


def cmd_oracle_check(args):
    families = ORACLE_FAMILIES if args.family == "all" else (args.family,)
    lines = []
    ok = True
    for family in families:
        worst = _oracle_trials(family, args.trials, args.seed)
        passed = worst <= _ORACLE_TOL[family]
        ok = ok and passed
        lines.append(
            f"family={family} trials={args.trials} max_dev={worst:.3e} "
            f"status={'pass' if passed else 'FAIL'}"
        )
    if args.scm:
        scm = load_scm(args.scm)
        joint = observational_joint(scm)
        names = set(joint.names)
        if {"X", "Z", "Y"} <= names:
            adjusted = backdoor_adjust(joint)
            worst = 0.0
            for x in range(scm.domain("X")):
                truth = intervene(scm, {"X": x}).marginal(("Y",)).probs
                worst = max(worst, float(np.max(np.abs(adjusted[x] - truth))))
            passed = worst <= 1e-10
            ok = ok and passed
            lines.append(
                f"family=file:backdoor max_dev={worst:.3e} "
                f"status={'pass' if passed else 'FAIL'}"
            )
        elif {"X", "M", "Y"} <= names:
            adjusted = frontdoor_adjust(joint)
            worst = 0.0
            for x in range(scm.domain("X")):
                truth = intervene(scm, {"X": x}).marginal(("Y",)).probs
                worst = max(worst, float(np.max(np.abs(adjusted[x] - truth))))
            passed = worst <= 1e-10
            ok = ok and passed
            lines.append(
                f"family=file:frontdoor max_dev={worst:.3e} "
                f"status={'pass' if passed else 'FAIL'}"
            )
        else:
            raise ContractError(
                "model file needs variables X, Y and either Z or M for a check"
            )
    lines.append(f"overall={'pass' if ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _ensure_out(args.out)
        path = os.path.join(out, "oracle_report.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="causal-routing",
        description="Causal routing models, synthetic tasks, and exact causal checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic task dataset")
    p.add_argument("--spec", required=True, help="task spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("dict-build", help="build the global dictionary by k-means")
    p.add_argument("--train", required=True, help="training records (JSONL)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dict_build)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument(
        "--learning-rate", dest="learning_rate", type=float, default=None
    )
    p.add_argument(
        "--stop-after-epochs",
        dest="stop_after_epochs",
        type=int,
        default=None,
        help="pause after this many epochs (schedules keep full length)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dictionary", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-routing", help="report routing weights per layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dictionary", default=None)
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inspect_routing)

    p = sub.add_parser(
        "oracle-check", help="verify adjustment identities by exact enumeration"
    )
    p.add_argument("--family", choices=("all",) + ORACLE_FAMILIES, default="all")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scm", default=None, help="also check a model JSON file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
