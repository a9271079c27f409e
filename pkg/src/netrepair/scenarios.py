"""Experiment orchestration: seeded input-set sampling, the corrective
scenarios (single fault, localisation comparison, fault-type focus,
retraining comparison) and the adaptive scenario, with deterministic
report directories.

Every run gets a seed derived from (master seed, scenario name, run
index), so individual runs can be reproduced without replaying the whole
batch, and a rerun of any scenario writes byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import fileio, localize, metrics, pso, training
from .nets import Dataset, NetworkModel, accuracy, predict

SCENARIOS = ("rq1", "rq2", "rq3", "rq4", "rq5")

REPORT_SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


def derive_seed(master_seed: int, scenario: str, run_index: int) -> int:
    digest = hashlib.blake2b(
        f"{master_seed}:{scenario}:{run_index}".encode(),
        digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class ScenarioConfig:
    scenario: str
    model_path: str
    train_path: str
    test_path: str
    out_dir: str
    repeats: int = 30
    pos_count: int = 200
    neg_count: int = 1
    fault: str = "random"      # random | freq:K | pair:T:P
    master_seed: int = 0
    loc_method: str = localize.METHOD_PARETO
    pop_size: int = 100
    max_iters: int = 100
    stagnation_limit: int = 10
    retrain_lr: float = 0.1
    retrain_epochs: int = 20
    adaptive_attempts: int = 20

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {self.scenario!r}")
        if self.pos_count < 1 or self.neg_count < 1:
            raise ScenarioError("pos_count and neg_count must be >= 1")

    def swarm_config(self, seed: int) -> pso.SwarmConfig:
        return pso.SwarmConfig(pop_size=self.pop_size,
                               max_iters=self.max_iters,
                               stagnation_limit=self.stagnation_limit,
                               seed=seed)


def _fault_pool(model: NetworkModel, train_set: Dataset, fault: str,
                wrong_idx: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """Indices of misclassified rows matching the fault selector."""
    if fault == "random":
        return wrong_idx
    kind, _, arg = fault.partition(":")
    if kind == "freq":
        k = int(arg)
        cm = metrics.confusion(model, train_set)
        tops = metrics.top_fault_types(cm, k)
        pairs = {(t.true_label, t.predicted_label) for t in tops}
        mask = np.array([(train_set.labels[i], preds[i]) in pairs
                         for i in wrong_idx])
        return wrong_idx[mask]
    if kind == "pair":
        t, p = (int(v) for v in arg.split(":"))
        mask = (train_set.labels[wrong_idx] == t) & (preds[wrong_idx] == p)
        return wrong_idx[mask]
    raise ScenarioError(f"unknown fault selector {fault!r}")


def sample_input_sets(model: NetworkModel, train_set: Dataset,
                      pos_count: int, neg_count: int, fault: str,
                      run_seed: int) -> tuple[Dataset, Dataset,
                                              np.ndarray, np.ndarray]:
    """Seeded sampling of (I_pos, I_neg) without replacement.

    I_pos comes from inputs the model classifies correctly, I_neg from
    misclassified ones restricted by the fault selector. Returns the
    datasets plus the chosen row indices.
    """
    preds = predict(model, train_set)
    correct_idx = np.nonzero(preds == train_set.labels)[0]
    wrong_idx = np.nonzero(preds != train_set.labels)[0]
    pool = _fault_pool(model, train_set, fault, wrong_idx, preds)

    if len(correct_idx) < pos_count:
        raise ScenarioError(
            f"need {pos_count} correct inputs, only {len(correct_idx)} "
            "available")
    if len(pool) < neg_count:
        raise ScenarioError(
            f"need {neg_count} faulty inputs for selector {fault!r}, only "
            f"{len(pool)} available")

    rng = np.random.default_rng([run_seed & 0xFFFFFFFFFFFFFFFF, 0x5E7])
    pos_idx = np.sort(rng.choice(correct_idx, pos_count, replace=False))
    neg_idx = np.sort(rng.choice(pool, neg_count, replace=False))
    return (train_set.subset(pos_idx), train_set.subset(neg_idx),
            pos_idx, neg_idx)


# --- deterministic writers ---

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("ascii"))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_confusion_csv(path: Path, cm: np.ndarray) -> None:
    _write_text(path, _csv_text(
        [f"pred_{j}" for j in range(cm.shape[1])],
        [list(map(int, row)) for row in cm]))


def _config_snapshot(config: ScenarioConfig) -> str:
    # out_dir excluded so reruns into different directories stay comparable
    lines = [f"{k} = {v}" for k, v in sorted(asdict(config).items())
             if k != "out_dir"]
    return "\n".join(lines) + "\n"


def _outcome_row(method: str, run: int, seed: int,
                 outcome: metrics.RepairOutcome) -> list:
    return [run, method, seed, outcome.repair_rate, outcome.break_rate,
            int(outcome.success), outcome.acc_train_before,
            outcome.acc_train_after, outcome.acc_test_before,
            outcome.acc_test_after]


OUTCOME_HEADER = ["run", "method", "seed", "repair_rate", "break_rate",
                  "success", "acc_train_before", "acc_train_after",
                  "acc_test_before", "acc_test_after"]


def _write_trace(path: Path, trace: pso.RepairTrace) -> None:
    _write_text(path, _csv_text(
        ["iteration", "best_fitness", "n_patched", "n_intact"],
        [[r.iteration, r.best_fitness, r.n_patched, r.n_intact]
         for r in trace.rows]))


def _write_labeldiff(path: Path, patched: np.ndarray,
                     broken: np.ndarray) -> None:
    _write_text(path, _csv_text(
        ["label", "patched", "broken"],
        [[l, int(patched[l]), int(broken[l])] for l in range(len(patched))]))


# --- corrective scenarios ---

@dataclass
class RunRecord:
    run: int
    seed: int
    method: str
    outcome: metrics.RepairOutcome
    target_cell_before: int = 0
    target_cell_after: int = 0
    offtarget_abs_change: int = 0


def _methods_for(config: ScenarioConfig) -> list[str]:
    if config.scenario == "rq2":
        return [localize.METHOD_PARETO, localize.METHOD_GRADIENT,
                localize.METHOD_RANDOM]
    if config.scenario in ("rq3", "rq4"):
        return [config.loc_method, "retrain"]
    return [config.loc_method]


def _confusion_focus(cm_before, cm_after, target):
    t, p = target
    off = ~np.eye(cm_before.shape[0], dtype=bool)
    off[t, p] = False
    offtarget = int(np.abs(cm_after - cm_before)[off].sum())
    return int(cm_before[t, p]), int(cm_after[t, p]), offtarget


def run_corrective(config: ScenarioConfig) -> Path:
    """RQ1-RQ4: `repeats` seeded runs, each repairing one sampled input
    set; rq2 compares localisation methods on identical sets, rq3/rq4
    additionally run the retraining baseline on the same inputs."""
    out = Path(config.out_dir)
    model = fileio.load_model(Path(config.model_path).read_bytes())
    train_set, _ = fileio.load_dataset(Path(config.train_path).read_bytes())
    test_set, _ = fileio.load_dataset(Path(config.test_path).read_bytes())
    methods = _methods_for(config)
    track_focus = config.scenario in ("rq3", "rq4")
    cm_before = metrics.confusion(model, train_set)
    if track_focus:
        top = metrics.top_fault_types(cm_before, 1)
        if not top:
            raise ScenarioError("model has no misclassifications to focus on")
        target = (top[0].true_label, top[0].predicted_label)
    else:
        target = None

    _write_text(out / "config.txt", _config_snapshot(config))
    records: list[RunRecord] = []
    failures: list[list] = []

    for run in range(config.repeats):
        seed = derive_seed(config.master_seed, config.scenario, run)
        run_dir = out / "runs" / f"run_{run:03d}"
        try:
            i_pos, i_neg, pos_idx, neg_idx = sample_input_sets(
                model, train_set, config.pos_count, config.neg_count,
                config.fault, seed)
        except ScenarioError as exc:
            failures.append([run, str(exc)])
            continue
        _write_text(run_dir / "inputs.csv", _csv_text(
            ["role", "row"],
            [["pos", int(i)] for i in pos_idx]
            + [["neg", int(i)] for i in neg_idx]))

        for method in methods:
            if method == "retrain":
                rconfig = training.TrainConfig(
                    learning_rate=config.retrain_lr,
                    max_epochs=config.retrain_epochs,
                    mode=training.MODE_RETRAIN, seed=seed)
                patched_model, rlog = training.retrain_baseline(
                    model, i_neg, i_pos, test_set, rconfig)
                _write_text(run_dir / "retrain_log.csv", _csv_text(
                    ["epoch", "fit_acc", "test_acc", "loss"],
                    [[e.epoch, e.train_acc, e.val_acc, e.loss]
                     for e in rlog]))
            else:
                patch, trace = pso.repair(model, i_neg, i_pos, method,
                                          config.swarm_config(seed))
                patched_model = pso.apply_patch(model, patch)
                (run_dir / f"patch_{method}.apatch").parent.mkdir(
                    parents=True, exist_ok=True)
                (run_dir / f"patch_{method}.apatch").write_bytes(
                    fileio.save_patch(patch))
                _write_trace(run_dir / f"trace_{method}.csv", trace)

            outcome = metrics.rates(model, patched_model, i_neg, i_pos,
                                    train_set, test_set)
            patched, broken = metrics.label_diff(model, patched_model,
                                                 train_set)
            _write_labeldiff(run_dir / f"labeldiff_{method}.csv",
                             patched, broken)
            rec = RunRecord(run, seed, method, outcome)
            if track_focus:
                cm_after = metrics.confusion(patched_model, train_set)
                before, after, off = _confusion_focus(cm_before, cm_after,
                                                      target)
                rec.target_cell_before = before
                rec.target_cell_after = after
                rec.offtarget_abs_change = off
            records.append(rec)

        _write_text(run_dir / "outcome.csv", _csv_text(
            OUTCOME_HEADER,
            [_outcome_row(r.method, r.run, r.seed, r.outcome)
             for r in records if r.run == run]))

    _finish_corrective(config, out, records, failures, target)
    return out


def _finish_corrective(config, out, records, failures, target):
    per_method = {}
    for rec in records:
        per_method.setdefault(rec.method, []).append(rec)

    agg_rows = []
    method_tables = {}
    for method in sorted(per_method):
        recs = per_method[method]
        summary = metrics.aggregate([r.outcome for r in recs])
        agg_rows.append([method, summary.runs, summary.mean_repair_rate,
                         summary.mean_break_rate, summary.success_rate,
                         summary.mean_acc_train_after,
                         summary.mean_acc_test_after])
        table = {
            "runs": summary.runs,
            "mean_repair_rate": summary.mean_repair_rate,
            "mean_break_rate": summary.mean_break_rate,
            "success_rate": summary.success_rate,
            "mean_acc_train_after": summary.mean_acc_train_after,
            "mean_acc_test_after": summary.mean_acc_test_after,
        }
        if target is not None:
            succ = [r for r in recs if r.outcome.success]
            reductions = [
                (r.target_cell_before - r.target_cell_after)
                / r.target_cell_before
                for r in succ if r.target_cell_before > 0]
            table["successful_runs"] = len(succ)
            table["mean_target_cell_reduction"] = (
                float(np.mean(reductions)) if reductions else 0.0)
            table["mean_offtarget_abs_change"] = (
                float(np.mean([r.offtarget_abs_change for r in recs]))
                if recs else 0.0)
        method_tables[method] = table

    _write_text(out / "aggregate.csv", _csv_text(
        ["method", "runs", "mean_repair_rate", "mean_break_rate",
         "success_rate", "mean_acc_train_after", "mean_acc_test_after"],
        agg_rows))
    if failures:
        _write_text(out / "failures.csv",
                    _csv_text(["run", "error"], failures))

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": config.scenario,
        "master_seed": config.master_seed,
        "repeats": config.repeats,
        "fault": config.fault,
        "pos_count": config.pos_count,
        "neg_count": config.neg_count,
        "run_seeds": [derive_seed(config.master_seed, config.scenario, r)
                      for r in range(config.repeats)],
        "target_fault_type": (
            {"true_label": target[0], "predicted_label": target[1]}
            if target is not None else None),
        "methods": method_tables,
        "failed_runs": len(failures),
    }
    _write_text(out / "report.json",
                json.dumps(report, indent=2, sort_keys=True) + "\n")


def _sample_positives(model: NetworkModel, train_set: Dataset,
                      pos_count: int, run_seed: int) -> Dataset:
    preds = predict(model, train_set)
    correct_idx = np.nonzero(preds == train_set.labels)[0]
    if len(correct_idx) < pos_count:
        raise ScenarioError(
            f"need {pos_count} correct inputs, only {len(correct_idx)} "
            "available")
    rng = np.random.default_rng([run_seed & 0xFFFFFFFFFFFFFFFF, 0x5E7])
    return train_set.subset(
        np.sort(rng.choice(correct_idx, pos_count, replace=False)))


# --- adaptive scenario ---

@dataclass
class AdaptiveAttempt:
    attempt: int
    input_row: int
    succeeded: bool
    repair_rate: float
    break_rate: float
    train_acc: float
    val_acc: float


def run_adaptive(config: ScenarioConfig) -> Path:
    """RQ5: split the test set in half, reveal faults from one half one
    by one, patch sequentially, validate on the other half. The model is
    replaced only when an attempt succeeds (RR > 0 and BR == 0)."""
    out = Path(config.out_dir)
    model = fileio.load_model(Path(config.model_path).read_bytes())
    train_set, class_count = fileio.load_dataset(
        Path(config.train_path).read_bytes())
    test_set, _ = fileio.load_dataset(Path(config.test_path).read_bytes())

    rng = np.random.default_rng(
        [config.master_seed & 0xFFFFFFFFFFFFFFFF, 0xADA])
    order = rng.permutation(len(test_set))
    half = len(test_set) // 2
    reveal = test_set.subset(order[:half])
    validation = test_set.subset(order[half:])

    wrong = np.nonzero(predict(model, reveal) != reveal.labels)[0]
    n_attempts = min(config.adaptive_attempts, len(wrong))
    chosen = rng.choice(wrong, n_attempts, replace=False)

    _write_text(out / "config.txt", _config_snapshot(config))
    current = model
    attempts: list[AdaptiveAttempt] = []
    for a, row in enumerate(chosen):
        seed = derive_seed(config.master_seed, "rq5", a)
        i_neg = reveal.subset(np.array([row]))
        # stale reveal: skip inputs an earlier patch already fixed
        if int(predict(current, i_neg)[0]) == int(i_neg.labels[0]):
            attempts.append(AdaptiveAttempt(
                a, int(row), False, 0.0, 0.0,
                accuracy(current, train_set), accuracy(current, validation)))
            continue
        i_pos = _sample_positives(current, train_set, config.pos_count, seed)
        patch, trace = pso.repair(current, i_neg, i_pos, config.loc_method,
                                  config.swarm_config(seed))
        candidate = pso.apply_patch(current, patch)
        outcome = metrics.rates(current, candidate, i_neg, i_pos)
        if outcome.success:
            current = candidate
            (out / "models").mkdir(parents=True, exist_ok=True)
            (out / "models" / f"attempt_{a:03d}.anet").write_bytes(
                fileio.save_model(current))
        (out / "runs" / f"attempt_{a:03d}").mkdir(parents=True,
                                                  exist_ok=True)
        (out / "runs" / f"attempt_{a:03d}" / "patch.apatch").write_bytes(
            fileio.save_patch(patch))
        _write_trace(out / "runs" / f"attempt_{a:03d}" / "trace.csv", trace)
        attempts.append(AdaptiveAttempt(
            a, int(row), outcome.success, outcome.repair_rate,
            outcome.break_rate, accuracy(current, train_set),
            accuracy(current, validation)))

    _write_text(out / "attempts.csv", _csv_text(
        ["attempt", "input_row", "succeeded", "repair_rate", "break_rate",
         "train_acc", "val_acc"],
        [[a.attempt, a.input_row, int(a.succeeded), a.repair_rate,
          a.break_rate, a.train_acc, a.val_acc] for a in attempts]))
    (out / "final_model.anet").write_bytes(fileio.save_model(current))

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": "rq5",
        "master_seed": config.master_seed,
        "attempts": len(attempts),
        "successes": sum(a.succeeded for a in attempts),
        "initial_train_acc": accuracy(model, train_set),
        "final_train_acc": accuracy(current, train_set),
        "initial_val_acc": accuracy(model, validation),
        "final_val_acc": accuracy(current, validation),
        "attempt_seeds": [derive_seed(config.master_seed, "rq5", a)
                          for a in range(len(attempts))],
    }
    _write_text(out / "report.json",
                json.dumps(report, indent=2, sort_keys=True) + "\n")
    return out


def run_scenario(config: ScenarioConfig) -> Path:
    if config.scenario == "rq5":
        return run_adaptive(config)
    return run_corrective(config)
