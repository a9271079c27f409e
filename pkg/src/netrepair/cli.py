"""Command-line entry point.

Subcommands: gen-data, train, repair, evaluate, experiment, export-report.
A config file of `key = value` lines (keys match the long flag names with
dashes or underscores) can preload any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio, localize, metrics, pso, scenarios, training
from .nets import accuracy, predict


def _load_config_file(path: str) -> dict:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _parse_hidden(spec: str) -> list[int]:
    return [int(tok) for tok in spec.split(",") if tok.strip()]


def cmd_gen_data(args) -> int:
    spec = training.SyntheticSpec(
        class_count=args.classes, feature_dim=args.dim,
        per_class_count=args.per_class, cluster_spread=args.spread,
        overlap_factor=args.overlap, seed=args.seed)
    train_set, test_set = training.generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.adat").write_bytes(
        fileio.save_dataset(train_set, spec.class_count))
    (out / "test.adat").write_bytes(
        fileio.save_dataset(test_set, spec.class_count))
    print(f"wrote {len(train_set)} train / {len(test_set)} test rows to {out}")
    return 0


def cmd_train(args) -> int:
    train_set, class_count = fileio.load_dataset(
        Path(args.dataset).read_bytes())
    dims = [train_set.feature_dim] + _parse_hidden(args.hidden) + [class_count]
    model = training.init_model(dims, class_count, args.seed)
    mode = {"under": training.MODE_UNDER,
            "full": training.MODE_FULL}[args.mode]
    config = training.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size,
        max_epochs=args.epochs, mode=mode, accuracy_cap=args.cap,
        patience_decreases=args.patience, seed=args.seed)
    model, log = training.train(model, train_set, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(fileio.save_model(model))
    scenarios._write_text(
        out.with_suffix(".epochs.csv"),
        scenarios._csv_text(["epoch", "train_acc", "val_acc", "loss"],
                            [[e.epoch, e.train_acc, e.val_acc, e.loss]
                             for e in log]))
    print(f"trained {args.mode} model: train acc "
          f"{accuracy(model, train_set):.4f} -> {out}")
    return 0


def cmd_repair(args) -> int:
    model = fileio.load_model(Path(args.model).read_bytes())
    train_set, _ = fileio.load_dataset(Path(args.dataset).read_bytes())
    i_pos, i_neg, _, _ = scenarios.sample_input_sets(
        model, train_set, args.pos_count, args.neg_count, args.fault,
        args.seed)
    config = pso.SwarmConfig(pop_size=args.pop_size, max_iters=args.iters,
                             seed=args.seed)
    patch, trace = pso.repair(model, i_neg, i_pos, args.loc_method, config)
    patched = pso.apply_patch(model, patch)
    outcome = metrics.rates(model, patched, i_neg, i_pos, train_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "patch.apatch").write_bytes(fileio.save_patch(patch))
    (out / "patched_model.anet").write_bytes(fileio.save_model(patched))
    scenarios._write_trace(out / "trace.csv", trace)
    scenarios._write_text(out / "outcome.csv", scenarios._csv_text(
        scenarios.OUTCOME_HEADER,
        [scenarios._outcome_row(args.loc_method, 0, args.seed, outcome)]))
    print(f"repair rate {outcome.repair_rate:.3f}, break rate "
          f"{outcome.break_rate:.5f}, success {outcome.success}")
    return 0


def cmd_evaluate(args) -> int:
    model = fileio.load_model(Path(args.model).read_bytes())
    dataset, _ = fileio.load_dataset(Path(args.dataset).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cm = metrics.confusion(model, dataset)
    scenarios.write_confusion_csv(out / "confusion.csv", cm)
    preds = predict(model, dataset)
    scenarios._write_text(out / "predictions.csv", scenarios._csv_text(
        ["row", "label", "prediction"],
        [[i, int(dataset.labels[i]), int(preds[i])]
         for i in range(len(dataset))]))
    acc = accuracy(model, dataset)
    scenarios._write_text(out / "accuracy.txt", f"{acc!r}\n")
    print(f"accuracy {acc:.4f} over {len(dataset)} rows -> {out}")
    return 0


def cmd_experiment(args) -> int:
    config = scenarios.ScenarioConfig(
        scenario=args.rq, model_path=args.model, train_path=args.dataset,
        test_path=args.test_dataset, out_dir=args.out, repeats=args.repeats,
        pos_count=args.pos_count, neg_count=args.neg_count, fault=args.fault,
        master_seed=args.seed, loc_method=args.loc_method,
        pop_size=args.pop_size, max_iters=args.iters)
    out = scenarios.run_scenario(config)
    print(f"scenario {args.rq} complete -> {out}")
    return 0


def cmd_export_report(args) -> int:
    report = json.loads((Path(args.out) / "report.json").read_text())
    lines = [f"scenario: {report['scenario']}",
             f"master seed: {report['master_seed']}"]
    if report["scenario"] == "rq5":
        lines += [f"attempts: {report['attempts']}",
                  f"successes: {report['successes']}",
                  f"train acc: {report['initial_train_acc']:.4f} -> "
                  f"{report['final_train_acc']:.4f}",
                  f"val acc: {report['initial_val_acc']:.4f} -> "
                  f"{report['final_val_acc']:.4f}"]
    else:
        for method, table in sorted(report["methods"].items()):
            lines.append(
                f"{method}: RR {table['mean_repair_rate']:.3f} "
                f"BR {table['mean_break_rate']:.5f} "
                f"SR {table['success_rate']:.3f} over {table['runs']} runs")
    text = "\n".join(lines) + "\n"
    scenarios._write_text(Path(args.out) / "report.txt", text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netrepair",
        description="Localise and patch faulty final-layer weights of a "
                    "feed-forward classifier")
    parser.add_argument("--config", help="key = value file preloading flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--overlap", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a .adat dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["under", "full"], default="under")
    p.add_argument("--hidden", default="32,32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--cap", type=float, default=0.90)
    p.add_argument("--patience", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("repair", help="one repair run")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loc-method", choices=list(localize.METHODS),
                   default=localize.METHOD_PARETO)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pos-count", type=int, default=200)
    p.add_argument("--neg-count", type=int, default=1)
    p.add_argument("--fault", default="random")
    p.add_argument("--pop-size", type=int, default=100)
    p.add_argument("--iters", type=int, default=100)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("evaluate", help="accuracy/confusion/predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full scenario")
    p.add_argument("rq", choices=list(scenarios.SCENARIOS))
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--pos-count", type=int, default=200)
    p.add_argument("--neg-count", type=int, default=1)
    p.add_argument("--fault", default="random")
    p.add_argument("--loc-method", choices=list(localize.METHODS),
                   default=localize.METHOD_PARETO)
    p.add_argument("--pop-size", type=int, default=100)
    p.add_argument("--iters", type=int, default=100)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-report",
                       help="render report.txt from a scenario directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # first pass only to find --config; file values become new defaults
    probe, _ = parser.parse_known_args(argv)
    if getattr(probe, "config", None):
        try:
            overrides = _load_config_file(probe.config)
        except (ValueError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for subparser in parser._subparsers._group_actions[0].choices.values():
            typed = {}
            for action in subparser._actions:
                if action.dest in overrides:
                    raw = overrides[action.dest]
                    typed[action.dest] = action.type(raw) if action.type \
                        else raw
            subparser.set_defaults(**typed)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (fileio.FormatError, scenarios.ScenarioError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
