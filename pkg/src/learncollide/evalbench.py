"""Correctness metrics, inference timing, Pareto fronts and sweep experiments."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import platform
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .dataset import LabeledDataset, sample_dataset
from .geometry import Environment, generate_environment

log = logging.getLogger(__name__)

TIMING_LOCK = threading.Lock()
ROBOT_DOF = 7

RESULT_COLUMNS = [
    "axis", "value", "model", "hyperparameters", "accuracy", "tpr", "tnr", "train_s",
    "infer_s_mean", "infer_s_std", "seed", "termination_reason",
    "placement", "density", "infer_s_median", "n_train", "n_test",
]


# -- correctness ----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, predicted, actual) -> "ConfusionCounts":
        p = np.asarray(predicted) > 0
        a = np.asarray(actual) > 0
        if p.shape != a.shape:
            raise ValueError("predictions and labels differ in shape")
        return cls(int(np.sum(p & a)), int(np.sum(~p & ~a)), int(np.sum(p & ~a)), int(np.sum(~p & a)))

    def to_dict(self) -> dict:
        return {"TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn}


def compute_metrics(counts: ConfusionCounts) -> dict[str, float | None]:
    """Accuracy, TPR and TNR; a ratio with an empty denominator is ``None``."""
    def ratio(num, den):
        return num / den if den > 0 else None

    return {
        "accuracy": ratio(counts.tp + counts.tn, counts.total),
        "tpr": ratio(counts.tp, counts.tp + counts.fn),
        "tnr": ratio(counts.tn, counts.tn + counts.fp),
    }


def check_metric_identities(counts: ConfusionCounts, metrics: dict, tol: float = 1e-12) -> None:
    """Accuracy must be the prevalence-weighted mix of TPR and TNR."""
    total = counts.total
    if total == 0:
        return
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    tpr = metrics["tpr"] if metrics["tpr"] is not None else 0.0
    tnr = metrics["tnr"] if metrics["tnr"] is not None else 0.0
    mix = (pos * tpr + neg * tnr) / total
    if abs(mix - metrics["accuracy"]) > tol:
        raise ArithmeticError(f"accuracy {metrics['accuracy']} != prevalence mix {mix}")
    if metrics["tpr"] is not None and abs(metrics["tpr"] + counts.fn / pos - 1.0) > tol:
        raise ArithmeticError("tpr and miss rate do not sum to one")


def dummy_baselines(labels) -> dict[str, float]:
    """Majority-label accuracy and expected rates of prevalence-matched guessing."""
    y = np.asarray(labels)
    if y.size == 0:
        raise ValueError("labels must be nonempty")
    p = float(np.mean(y > 0))
    return {"collision_fraction": p, "majority_accuracy": max(p, 1.0 - p),
            "chance_tpr": p, "chance_tnr": 1.0 - p}


def evaluate_predictions(predicted, actual) -> tuple[ConfusionCounts, dict]:
    counts = ConfusionCounts.from_predictions(predicted, actual)
    metrics = compute_metrics(counts)
    check_metric_identities(counts, metrics)
    return counts, metrics


# -- timing ------------------------------------------------------------------------

@dataclass
class TimingReport:
    per_inference_mean: float
    per_inference_std: float
    per_inference_median: float
    batch_seconds: list[float]
    query_count: int
    warmup_count: int
    repeat_count: int
    thread_count: int
    train_seconds: float = 0.0
    clock: str = "perf_counter_ns"
    warnings: list[str] = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _pin_current_thread():
    """Pin to one CPU if the platform allows it; returns the previous mask."""
    try:
        previous = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(previous)})
        return previous
    except (AttributeError, OSError):
        return None


def time_inference(predict: Callable, queries: np.ndarray, warmup: int = 3, repeats: int = 5,
                   threads: int = 1) -> TimingReport:
    """Time full-batch predictions; per-inference time is batch time / query count.

    Warmup passes are not clocked. The harness lock serializes all timing in
    this process so concurrent sweep cells do not contend.
    """
    n = len(queries)
    if n == 0:
        raise ValueError("cannot time an empty query batch")
    if repeats < 3:
        raise ValueError("repeats must be at least 3")
    with TIMING_LOCK, threadpool_limits(limits=threads):
        previous = _pin_current_thread()
        try:
            for _ in range(warmup):
                predict(queries)
            batch_ns = []
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                predict(queries)
                batch_ns.append(time.perf_counter_ns() - t0)
        finally:
            if previous is not None:
                os.sched_setaffinity(0, previous)
    batch = np.array(batch_ns, dtype=float) / 1e9
    per = batch / n
    warnings = []
    resolution = time.get_clock_info("perf_counter").resolution
    if resolution > 0.01 * batch.min():
        warnings.append(f"clock resolution {resolution:g}s exceeds 1% of the measured span {batch.min():g}s")
    env = {"platform": platform.platform(), "python": platform.python_version(), "numpy": np.__version__,
           "cpu_count": os.cpu_count(), "pinned": previous is not None}
    return TimingReport(float(per.mean()), float(per.std(ddof=1)), float(np.median(per)),
                        [float(b) for b in batch], n, warmup, repeats, threads, warnings=warnings,
                        environment=env)


# -- Pareto --------------------------------------------------------------------------

def pareto_indices(points: Sequence[Sequence[float]]) -> list[int]:
    """Indices of points not strictly beaten in both coordinates (minimize both).

    A point is dropped only when some other point has strictly smaller time
    and strictly smaller error. Input order is preserved.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    keep = []
    best_before = math.inf
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and pts[order[j], 0] == pts[order[i], 0]:
            j += 1
        group = order[i:j]
        keep.extend(int(k) for k in group if not best_before < pts[k, 1])
        best_before = min(best_before, float(pts[group, 1].min()))
        i = j
    return sorted(keep)


def pareto_frontier(points: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    pts = [tuple(map(float, p)) for p in points]
    return [pts[i] for i in pareto_indices(pts)]


# -- presets ---------------------------------------------------------------------------

def _grid(**axes) -> list[dict]:
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


FASTRON_GRID = _grid(max_supports=[3000, 10000, 30000], max_updates=[5000, 30000],
                       gamma=[1.0, 5.0, 10.0], beta=[1.0, 500.0, 1000.0])
DEEPCOLLIDE_GRID = _grid(L=[4, 8, 12], beta=[1.0, 2.0, 5.0], sigma=[0.5, 1.0, 2.0])
FASTRON_DEFAULT = [{"max_supports": 30000, "max_updates": 5000, "gamma": 5.0, "beta": 500.0}]
DEEPCOLLIDE_RECOMMENDED = [{"L": 12, "beta": 1.0, "sigma": 1.0}]

PRESETS = {
    "fastron": {"grid": FASTRON_GRID, "default": FASTRON_DEFAULT, "none": []},
    "deepcollide": {"grid": DEEPCOLLIDE_GRID, "recommended": DEEPCOLLIDE_RECOMMENDED, "none": []},
}


# -- sweeps ----------------------------------------------------------------------------

AXES = ("dof", "density", "sample_size")


@dataclass
class Protocol:
    n_train: int = 30000
    n_test: int = 5000
    n_robots: int = 3
    n_obstacles: int = 25
    placements: tuple[str, ...] = ("far",)
    epochs: int = 50
    batch_size: int = 512
    hidden: int = 256
    patience: int | None = 10
    scale: float = 1.0
    warmup: int = 3
    repeats: int = 5
    sample_size_cap: int = 50000

    def scaled(self, n: int) -> int:
        return max(40, int(round(n * self.scale)))


@dataclass
class SweepResult:
    axis: str
    axis_value: float
    model_id: str
    hyperparameters: dict
    counts: ConfusionCounts
    metrics: dict
    timing: TimingReport
    seed: int
    termination_reason: str = ""
    placement: str = "far"
    density: float = float("nan")
    n_train: int = 0
    n_test: int = 0

    def row(self) -> dict:
        return {
            "axis": self.axis, "value": self.axis_value, "model": self.model_id,
            "hyperparameters": json.dumps(self.hyperparameters, sort_keys=True),
            "accuracy": self.metrics["accuracy"], "tpr": self.metrics["tpr"], "tnr": self.metrics["tnr"],
            "train_s": self.timing.train_seconds, "infer_s_mean": self.timing.per_inference_mean,
            "infer_s_std": self.timing.per_inference_std, "seed": self.seed,
            "termination_reason": self.termination_reason, "placement": self.placement,
            "density": self.density, "infer_s_median": self.timing.per_inference_median,
            "n_train": self.n_train, "n_test": self.n_test,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = self.counts.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        c = d["counts"]
        d = dict(d, counts=ConfusionCounts(c["TP"], c["TN"], c["FP"], c["FN"]),
                 timing=TimingReport(**d["timing"]))
        return cls(**d)


def _cell_env_spec(axis: str, value, protocol: Protocol) -> tuple[int, int, int]:
    """(n_robots, n_obstacles, n_train) for one axis value."""
    if axis == "dof":
        return int(value), protocol.n_obstacles, protocol.scaled(protocol.n_train)
    if axis == "density":
        return protocol.n_robots, int(value), protocol.scaled(protocol.n_train)
    if axis == "sample_size":
        return protocol.n_robots, protocol.n_obstacles, max(40, int(value))
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def axis_value(axis: str, value) -> float:
    return ROBOT_DOF * int(value) if axis == "dof" else float(value)


def _slug(hp: dict) -> str:
    return "_".join(f"{k}{hp[k]:g}" if isinstance(hp[k], float) else f"{k}{hp[k]}" for k in sorted(hp))


def train_and_evaluate(model_id: str, hp: dict, train_set: LabeledDataset, test_set: LabeledDataset,
                       env: Environment, seed: int, protocol: Protocol) -> tuple[ConfusionCounts, dict, TimingReport, str]:
    """Train one model on cached FK features and measure it on the test set."""
    from .deepcollide import PositionalEncodingSpec, TrainingConfig, train
    from .fastron import FastronConfig, fastron_train

    x_train = train_set.features(env)
    x_test = test_set.features(env)
    t0 = time.perf_counter()
    if model_id == "deepcollide":
        cfg = TrainingConfig(epochs=protocol.epochs, batch_size=protocol.batch_size, beta=hp["beta"],
                             early_stop_patience=protocol.patience, seed=seed)
        model, report = train(train_set, env, PositionalEncodingSpec(hp["L"], hp["sigma"]), cfg,
                              hidden=protocol.hidden, features=x_train)
        predict = model.predict
        reason = "early_stop" if report.stopped_early else "epochs"
    elif model_id == "fastron":
        cfg = FastronConfig(gamma=hp["gamma"], beta=hp["beta"], max_updates=hp["max_updates"],
                            max_supports=min(hp["max_supports"], len(train_set)))
        model = fastron_train(x_train, train_set.labels, cfg)
        predict = model.predict
        reason = model.termination
    else:
        raise ValueError(f"unknown model {model_id!r}")
    train_s = time.perf_counter() - t0
    labels, _ = predict(x_test)
    counts, metrics = evaluate_predictions(labels, test_set.labels)
    timing = time_inference(lambda q: predict(q), x_test, protocol.warmup, protocol.repeats)
    timing.train_seconds = train_s
    return counts, metrics, timing, reason


def enumerate_cells(axis: str, values: Iterable, fastron_grid: Sequence[dict], deepcollide_grid: Sequence[dict],
                    seeds: Sequence[int], protocol: Protocol) -> list[dict]:
    cells = []
    for value in values:
        placements = protocol.placements if axis == "density" else protocol.placements[:1]
        for placement in placements:
            for seed in seeds:
                for model_id, grid in (("deepcollide", deepcollide_grid), ("fastron", fastron_grid)):
                    seen = set()
                    for hp in grid:
                        hp = dict(hp)
                        if model_id == "fastron" and axis == "sample_size":
                            hp["max_updates"] = hp["max_supports"] = protocol.sample_size_cap
                        key = f"{axis}-{value}-{placement}-s{seed}-{model_id}-{_slug(hp)}"
                        if key in seen:
                            continue
                        seen.add(key)
                        cells.append({"key": key, "axis": axis, "value": value, "placement": placement,
                                      "seed": int(seed), "model": model_id, "hp": hp})
    return cells


class _DataCache:
    """Environment and datasets per (value, placement, seed), built once."""

    def __init__(self, axis: str, protocol: Protocol):
        self.axis = axis
        self.protocol = protocol
        self._lock = threading.Lock()
        self._items: dict = {}

    def get(self, value, placement: str, seed: int):
        key = (value, placement, seed)
        with self._lock:
            if key not in self._items:
                n_robots, n_obstacles, n_train = _cell_env_spec(self.axis, value, self.protocol)
                env = generate_environment(n_robots, n_obstacles, seed, placement)
                train_set = sample_dataset(env, n_train, seed, tag="sample-train")
                test_set = sample_dataset(env, self.protocol.scaled(self.protocol.n_test), seed, tag="sample-test")
                train_set.features(env)
                test_set.features(env)
                self._items[key] = (env, train_set, test_set)
            return self._items[key]


def run_sweep(axis: str, values: Iterable, fastron_grid: Sequence[dict], deepcollide_grid: Sequence[dict],
              seeds: Sequence[int], protocol: Protocol = Protocol(), out_dir=None, jobs: int = 1,
              progress: Callable[[str], None] | None = None, config_echo: dict | None = None) -> list[SweepResult]:
    """Run every (value x placement x seed x model x hyperparameters) cell.

    With ``out_dir`` each finished cell leaves ``cells/<key>.json``; cells
    with an ``ok`` marker are skipped on rerun. Failed cells are recorded and
    skipped. ``results.csv`` and ``index.json`` are rewritten at the end.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    values = list(values)
    cells = enumerate_cells(axis, values, fastron_grid, deepcollide_grid, seeds, protocol)
    cell_dir = None
    if out_dir is not None:
        cell_dir = Path(out_dir) / "cells"
        cell_dir.mkdir(parents=True, exist_ok=True)
    data = _DataCache(axis, protocol)
    say = progress or (lambda msg: log.info(msg))

    def marker(cell):
        return cell_dir / f"{cell['key']}.json" if cell_dir is not None else None

    def run_cell(i_cell):
        i, cell = i_cell
        path = marker(cell)
        if path is not None and path.exists():
            done = json.loads(path.read_text())
            if done.get("status") == "ok":
                say(f"[{i + 1}/{len(cells)}] {cell['key']}: already complete")
                return SweepResult.from_dict(done["result"])
        try:
            env, train_set, test_set = data.get(cell["value"], cell["placement"], cell["seed"])
            counts, metrics, timing, reason = train_and_evaluate(
                cell["model"], cell["hp"], train_set, test_set, env, cell["seed"], protocol)
            result = SweepResult(axis, axis_value(axis, cell["value"]), cell["model"], cell["hp"], counts, metrics,
                                 timing, cell["seed"], reason, cell["placement"], test_set.collision_fraction,
                                 len(train_set), len(test_set))
            if path is not None:
                path.write_text(json.dumps({"status": "ok", "cell": cell, "result": result.to_dict()},
                                           indent=2, default=float) + "\n")
            say(f"[{i + 1}/{len(cells)}] {cell['key']}: accuracy {metrics['accuracy']:.4f}")
            return result
        except Exception as err:  # one bad cell never aborts the sweep
            if path is not None:
                path.write_text(json.dumps({"status": "failed", "cell": cell, "error": repr(err),
                                            "traceback": traceback.format_exc()}, indent=2) + "\n")
            say(f"[{i + 1}/{len(cells)}] {cell['key']}: FAILED {err!r}")
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, enumerate(cells)))
    else:
        outcomes = [run_cell(c) for c in enumerate(cells)]
    results = [r for r in outcomes if r is not None]
    if out_dir is not None:
        write_results(results, Path(out_dir) / "results.csv")
        index = {"tool_version": __version__, "axis": axis, "values": values, "seeds": list(seeds),
                 "config": config_echo or {"protocol": asdict(protocol)},
                 "cells": [{"key": c["key"], "status": "ok" if o is not None else "failed",
                            "marker": f"cells/{c['key']}.json"} for c, o in zip(cells, outcomes)],
                 "results_csv": "results.csv"}
        (Path(out_dir) / "index.json").write_text(json.dumps(index, indent=2, default=str) + "\n")
    return results


def write_results(results: Sequence[SweepResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow({k: ("" if v is None else v) for k, v in r.row().items()})


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def seed_summary(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation across seeds."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
