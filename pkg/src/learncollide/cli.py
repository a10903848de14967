"""Command-line entry point: ``learncollide <subcommand> ...``.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override
values from the file, which override built-in defaults. Exit codes: 0 on
success, 2 for usage or configuration errors, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    LabeledDataset,
    dataset_metadata,
    read_dataset,
    sample_dataset,
    write_dataset,
    write_metadata,
)
from .geometry import Environment, GenerationError, generate_environment, measure_collision_density
from .seeding import derive_seed

log = logging.getLogger("learncollide")


class UsageError(Exception):
    """Bad flags, configs or input files; maps to exit code 2."""


DEFAULTS = {
    "gen-env": {"robots": 3, "obstacles": 25, "seed": 0, "placement": "far", "out": "env.json",
                "density_samples": 10000},
    "sample": {"env": None, "n_train": 30000, "n_test": 5000, "seed": 0, "out_dir": "data",
               "format": "csv", "fk_cache": False},
    "train": {"model": "deepcollide", "env": None, "data": None, "out": None, "report": None,
              "L": 12, "sigma": 1.0, "beta": None, "hidden": 256, "epochs": 50, "batch_size": 512,
              "patience": 10, "gamma": 5.0, "imax": 5000, "smax": 30000, "seed": 0,
              "precision": "f64-test"},
    "eval": {"model_file": None, "env": None, "data": None, "out": None, "warmup": 3, "repeats": 5,
             "timing": True},
    "predict": {"model_file": None, "env": None, "configs": None, "out": "predictions.csv"},
    "sweep": {"axis": None, "values": None, "robots": None, "seeds": "0,1,2", "fastron_preset": "grid",
              "deepcollide_preset": "grid", "out_dir": "sweep", "jobs": 1, "scale": 1.0, "epochs": 50,
              "n_train": 30000, "n_test": 5000, "obstacles": 25, "n_robots": 3, "placements": "far,close",
              "hidden": 256, "seed": 0},
    "pareto": {"results": None, "x": "infer_s_mean", "y": "error", "model": None, "out": None},
}


def _build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="learncollide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=S)
        sp.add_argument("--config", help="JSON file with default values for this command")
        return sp

    g = cmd("gen-env", "generate a random environment")
    g.add_argument("--robots", type=int)
    g.add_argument("--obstacles", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--placement", choices=["far", "close"])
    g.add_argument("--out")
    g.add_argument("--density-samples", type=int)

    s = cmd("sample", "sample labeled train/test configurations")
    s.add_argument("--env")
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--format", choices=["csv", "bin"])
    s.add_argument("--fk-cache", action="store_true")

    t = cmd("train", "train a DeepCollide or Fastron model")
    t.add_argument("--model", choices=["deepcollide", "fastron"])
    t.add_argument("--env")
    t.add_argument("--data", help="training dataset file")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--report", help="training report JSON path")
    t.add_argument("--L", type=int)
    t.add_argument("--sigma", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--imax", type=int)
    t.add_argument("--smax", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--precision", choices=["f64-test", "f32-bench"])

    e = cmd("eval", "evaluate a trained model on a test set")
    e.add_argument("--model-file")
    e.add_argument("--env")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--warmup", type=int)
    e.add_argument("--repeats", type=int)
    e.add_argument("--no-timing", dest="timing", action="store_false")

    pr = cmd("predict", "label configurations with a trained model")
    pr.add_argument("--model-file")
    pr.add_argument("--env")
    pr.add_argument("--configs")
    pr.add_argument("--out")

    w = cmd("sweep", "run a DoF / density / sample-size experiment")
    w.add_argument("--axis", choices=["dof", "density", "sample-size", "sample_size"])
    w.add_argument("--values", help="comma list, or a..b integer range")
    w.add_argument("--robots", help="robot counts for the dof axis, e.g. 1..6")
    w.add_argument("--seeds")
    w.add_argument("--fastron-preset", choices=["grid", "default", "none"])
    w.add_argument("--deepcollide-preset", choices=["grid", "recommended", "none"])
    w.add_argument("--out-dir")
    w.add_argument("--jobs", type=int)
    w.add_argument("--scale", type=float)
    w.add_argument("--epochs", type=int)
    w.add_argument("--n-train", type=int)
    w.add_argument("--n-test", type=int)
    w.add_argument("--obstacles", type=int)
    w.add_argument("--n-robots", type=int)
    w.add_argument("--placements")
    w.add_argument("--hidden", type=int)
    w.add_argument("--seed", type=int)

    pa = cmd("pareto", "extract the Pareto front from sweep results")
    pa.add_argument("--results")
    pa.add_argument("--x")
    pa.add_argument("--y")
    pa.add_argument("--model")
    pa.add_argument("--out")
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"--config: file not found: {path}")
        try:
            from_file = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise UsageError(f"--config: invalid JSON: {err}") from err
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update(from_file)
    for k, v in vars(args).items():
        if k in cfg:
            cfg[k] = v
    return cfg


def _need_file(cfg: dict, key: str) -> Path:
    flag = "--" + key.replace("_", "-")
    if not cfg.get(key):
        raise UsageError(f"{flag} is required")
    path = Path(cfg[key])
    if not path.exists():
        raise UsageError(f"{flag}: file not found: {path}")
    return path


def _positive(cfg: dict, key: str, flag: str | None = None, allow_zero=False) -> None:
    v = cfg[key]
    if v is None or (v < 0 if allow_zero else v <= 0):
        raise UsageError(f"{flag or '--' + key.replace('_', '-')} must be {'nonnegative' if allow_zero else 'positive'}, got {v}")


def _load_env(cfg: dict) -> Environment:
    path = _need_file(cfg, "env")
    try:
        return Environment.from_json(path.read_text())
    except (ValueError, KeyError, TypeError) as err:
        raise UsageError(f"--env: invalid environment file: {err}") from err


def _provenance(command: str, cfg: dict, seed, precision: str | None = "f64-test") -> dict:
    return {"tool": "learncollide", "tool_version": __version__, "command": command,
            "config": cfg, "seed": seed, "precision": precision}


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------

def cmd_gen_env(cfg: dict) -> int:
    if cfg["robots"] is None or cfg["robots"] < 1:
        raise UsageError(f"--robots must be at least 1, got {cfg['robots']}")
    _positive(cfg, "obstacles", allow_zero=True)
    _positive(cfg, "density_samples")
    try:
        env = generate_environment(cfg["robots"], cfg["obstacles"], cfg["seed"], cfg["placement"])
    except GenerationError as err:
        print(f"error: environment generation failed: {err}", file=sys.stderr)
        return 1
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(env.to_json())
    density = measure_collision_density(env, cfg["density_samples"], derive_seed(cfg["seed"], "gen-env-density"))
    meta = _provenance("gen-env", cfg, cfg["seed"])
    meta.update({"env_ref": env.fingerprint(), "dof": env.dof, "density_estimate": density,
                 "density_samples": cfg["density_samples"],
                 "obstacle_kinds": {k: sum(o.kind == k for o in env.obstacles) for k in ("box", "sphere")}})
    _write_json(meta, out.with_suffix(".meta.json"))
    print(f"wrote {out} ({env.dof} DoF, {len(env.obstacles)} obstacles, density ~{density:.3f})")
    return 0


def cmd_sample(cfg: dict) -> int:
    env = _load_env(cfg)
    _positive(cfg, "n_train")
    _positive(cfg, "n_test")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".csv" if cfg["format"] == "csv" else ".bin"
    for split_name, n in (("train", cfg["n_train"]), ("test", cfg["n_test"])):
        ds = sample_dataset(env, n, cfg["seed"], tag=f"sample-{split_name}")
        path = out_dir / f"{split_name}{ext}"
        write_dataset(ds, path)
        meta = {**_provenance("sample", cfg, cfg["seed"]),
                **dataset_metadata(ds, cfg["seed"], split=split_name, file=path.name)}
        if cfg["fk_cache"]:
            fk_path = out_dir / f"{split_name}.fk.npy"
            np.save(fk_path, ds.features(env))
            meta["fk_cache"] = fk_path.name
        write_metadata(meta, out_dir / f"{split_name}.meta.json")
        print(f"wrote {path}: {n} rows, collision fraction {ds.collision_fraction:.4f}")
    return 0


def _read_data(cfg: dict, key: str, env: Environment) -> LabeledDataset:
    path = _need_file(cfg, key)
    try:
        ds = read_dataset(path, env.fingerprint())
    except ValueError as err:
        raise UsageError(f"--{key}: {err}") from err
    if ds.dof != env.dof:
        raise UsageError(f"--{key}: dataset has {ds.dof} joint angles but the environment has {env.dof} DoF")
    fk = path.with_name(path.name.split(".")[0] + ".fk.npy")
    if fk.exists():
        cached = np.load(fk)
        if cached.shape == (len(ds), env.feature_dim):
            ds.fk_features = cached
    return ds


def cmd_train(cfg: dict) -> int:
    from .deepcollide import PositionalEncodingSpec, TrainingConfig, train, training_meta
    from .fastron import FastronConfig, fastron_train

    env = _load_env(cfg)
    data = _read_data(cfg, "data", env)
    if not cfg["out"]:
        raise UsageError("--out is required")
    precision = cfg["precision"]
    dtype = np.float64 if precision == "f64-test" else np.float32
    seed = cfg["seed"]
    features = data.features(env)
    if cfg["model"] == "deepcollide":
        beta = cfg["beta"] = 1.0 if cfg["beta"] is None else cfg["beta"]
        for key, flag in (("L", "--L"), ("sigma", "--sigma"), ("hidden", "--hidden"), ("epochs", "--epochs"),
                          ("patience", "--patience")):
            _positive(cfg, key, flag)
        if beta <= 0:
            raise UsageError(f"--beta must be positive, got {beta}")
        if cfg["batch_size"] is None or cfg["batch_size"] < 2:
            raise UsageError(f"--batch-size must be at least 2, got {cfg['batch_size']}")
        if len(data) < 40:
            raise UsageError(f"--data: DeepCollide training needs at least 40 rows, got {len(data)}")
        tcfg = TrainingConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], beta=beta,
                              early_stop_patience=cfg["patience"], seed=seed)
        enc = PositionalEncodingSpec(cfg["L"], cfg["sigma"])
        model, report = train(data, env, enc, tcfg, hidden=cfg["hidden"], dtype=dtype, features=features)
        meta = {**_provenance("train", cfg, seed, precision), **training_meta(tcfg, enc, cfg["hidden"], dtype),
                "env_ref": env.fingerprint(), "dataset_ref": _file_digest(cfg["data"])}
        digest = model.save(cfg["out"], meta)
        summary = {"report": report.to_dict()}
    else:
        beta = cfg["beta"] = 500.0 if cfg["beta"] is None else cfg["beta"]
        if beta < 1:
            raise UsageError(f"--beta must be at least 1 for Fastron, got {beta}")
        for key, flag in (("gamma", "--gamma"), ("imax", "--imax"), ("smax", "--smax")):
            _positive(cfg, key, flag)
        if cfg["smax"] > len(data):
            raise UsageError(f"--smax ({cfg['smax']}) exceeds the training size ({len(data)})")
        fcfg = FastronConfig(gamma=cfg["gamma"], beta=beta, max_updates=cfg["imax"], max_supports=cfg["smax"])
        t0 = time.perf_counter()
        model = fastron_train(features, data.labels, fcfg)
        wall = time.perf_counter() - t0
        meta = {**_provenance("train", cfg, seed, precision), "env_ref": env.fingerprint(),
                "dataset_ref": _file_digest(cfg["data"])}
        digest = model.save(cfg["out"], meta)
        summary = {"termination_reason": model.termination, "iterations": model.iterations,
                   "n_supports": model.n_supports, "removed": model.removed, "wall_seconds": wall}
    report_out = {**_provenance("train", cfg, seed, precision), "model": cfg["model"],
                  "checkpoint": str(cfg["out"]), "checkpoint_sha256": digest, **summary}
    _write_json(report_out, cfg["report"] or str(Path(cfg["out"]).with_suffix(".report.json")))
    print(f"wrote {cfg['out']} (sha256 {digest[:16]})")
    return 0


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_model(path):
    """Load either checkpoint type; returns (model, meta)."""
    from . import bundle
    from .deepcollide import DeepCollideModel
    from .fastron import FastronModel

    try:
        meta, arrays = bundle.read(path)
    except ValueError as err:
        raise UsageError(f"--model-file: {err}") from err
    if meta.get("model") == "deepcollide":
        return DeepCollideModel.from_bundle(meta, arrays), meta
    if meta.get("model") == "fastron":
        return FastronModel.from_bundle(meta, arrays), meta
    raise UsageError(f"--model-file: unknown model type {meta.get('model')!r}")


def _model_input_dim(model) -> int:
    return model.input_dim if hasattr(model, "input_dim") else model.features.shape[1]


def cmd_eval(cfg: dict) -> int:
    from .evalbench import dummy_baselines, evaluate_predictions, time_inference

    model, meta = load_model(_need_file(cfg, "model_file"))
    env = _load_env(cfg)
    data = _read_data(cfg, "data", env)
    if _model_input_dim(model) != env.feature_dim:
        raise UsageError(f"model expects {_model_input_dim(model)} features; environment gives {env.feature_dim}")
    x = data.features(env)
    labels, _ = model.predict(x)
    counts, metrics = evaluate_predictions(labels, data.labels)
    out = {**_provenance("eval", cfg, meta.get("seed"), meta.get("precision")), "model": meta.get("model"),
           "confusion": counts.to_dict(), "metrics": metrics, "dummy_baselines": dummy_baselines(data.labels)}
    if cfg["timing"]:
        if cfg["repeats"] < 3:
            raise UsageError(f"--repeats must be at least 3, got {cfg['repeats']}")
        out["timing"] = time_inference(model.predict, x, cfg["warmup"], cfg["repeats"]).to_dict()
    _write_json(out, cfg["out"])
    if cfg["out"]:
        print(f"accuracy {metrics['accuracy']:.4f}  tpr {metrics['tpr']}  tnr {metrics['tnr']}")
    return 0


def cmd_predict(cfg: dict) -> int:
    model, meta = load_model(_need_file(cfg, "model_file"))
    env = _load_env(cfg)
    path = _need_file(cfg, "configs")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    q_cols = [i for i, h in enumerate(header) if h.startswith("q")]
    q = np.loadtxt(path, delimiter=",", skiprows=1, usecols=q_cols, ndmin=2)
    if q.shape[1] != env.dof:
        raise UsageError(f"--configs: {q.shape[1]} joint angles per row, environment has {env.dof} DoF")
    from .kinematics import fk_features_batch

    x = fk_features_batch(env.robots, q)
    if _model_input_dim(model) != x.shape[1]:
        raise UsageError("model and environment feature dimensions differ")
    labels, scores = model.predict(x)
    with open(cfg["out"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "score"])
        for lab, sc in zip(labels, scores):
            w.writerow([int(lab), f"{sc:.17g}"])
    print(f"wrote {cfg['out']}: {len(labels)} predictions")
    return 0


def parse_values(text: str, integer: bool = False) -> list:
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    conv = int if integer else float
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            v = float(tok)
            out.append(int(v) if integer or v.is_integer() else conv(v))
    return out


def cmd_sweep(cfg: dict) -> int:
    from .evalbench import PRESETS, Protocol, run_sweep

    axis = cfg["axis"]
    if axis is None:
        raise UsageError("--axis is required")
    axis = axis.replace("-", "_")
    raw = cfg["robots"] if axis == "dof" and cfg["robots"] is not None else cfg["values"]
    if raw is None:
        raise UsageError("--values (or --robots for the dof axis) is required")
    try:
        values = parse_values(raw, integer=True)
        seeds = parse_values(cfg["seeds"], integer=True)
    except ValueError as err:
        raise UsageError(f"could not parse values: {err}") from err
    if not values or min(values) < (1 if axis != "density" else 0):
        raise UsageError(f"invalid axis values {values}")
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    protocol = Protocol(n_train=cfg["n_train"], n_test=cfg["n_test"], n_robots=cfg["n_robots"],
                        n_obstacles=cfg["obstacles"], placements=tuple(cfg["placements"].split(",")),
                        epochs=cfg["epochs"], hidden=cfg["hidden"], scale=cfg["scale"])
    for pl in protocol.placements:
        if pl not in ("far", "close"):
            raise UsageError(f"--placements: unknown placement {pl!r}")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = _provenance("sweep", cfg, seeds, "f64-test")
    echo["protocol"] = asdict(protocol)
    results = run_sweep(axis, values, PRESETS["fastron"][cfg["fastron_preset"]],
                        PRESETS["deepcollide"][cfg["deepcollide_preset"]], seeds, protocol, out_dir,
                        cfg["jobs"], progress=lambda m: print(m, flush=True), config_echo=echo)
    index = json.loads((out_dir / "index.json").read_text())
    n_cells = len(index["cells"])
    print(f"{len(results)}/{n_cells} cells complete; results in {out_dir / 'results.csv'}")
    return 0 if results or n_cells == 0 else 1


def cmd_pareto(cfg: dict) -> int:
    from .evalbench import pareto_indices, read_results

    rows = read_results(_need_file(cfg, "results"))
    if cfg["model"]:
        rows = [r for r in rows if r["model"] == cfg["model"]]

    def column(r, name):
        if name == "error":
            return 1.0 - float(r["accuracy"])
        if name == "tpr_error":
            return 1.0 - float(r["tpr"])
        if name == "tnr_error":
            return 1.0 - float(r["tnr"])
        if name not in r:
            raise UsageError(f"unknown column {name!r}")
        return float(r[name])

    pts = [(column(r, cfg["x"]), column(r, cfg["y"])) for r in rows]
    front = [rows[i] for i in pareto_indices(pts)] if pts else []
    out = {**_provenance("pareto", cfg, None), "x": cfg["x"], "y": cfg["y"], "n_points": len(pts),
           "frontier": [{"model": r["model"], "hyperparameters": r["hyperparameters"], "seed": r["seed"],
                         cfg["x"]: column(r, cfg["x"]), cfg["y"]: column(r, cfg["y"])} for r in front]}
    _write_json(out, cfg["out"])
    return 0


COMMANDS = {"gen-env": cmd_gen_env, "sample": cmd_sample, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "sweep": cmd_sweep, "pareto": cmd_pareto}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as err:
        print(f"{parser.prog} {args.command}: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"{parser.prog} {args.command}: failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
