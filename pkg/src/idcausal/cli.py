"""Command-line entry point: ``idcausal {gen,train,eval,deconfound,dirtest}``.

Every command resolves its parameters from built-in defaults, then an
optional ``--config`` file (JSON or TOML, flat or with a section named after
the command), then explicit flags. The resolved set is written to
``<out>/config.json`` before any work starts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import datasets_io, deconfound, dirtest, metrics, model
from .config import ConfigError, read_config
from .synthgen import BENCH_GRID, BenchConfig, generate_bench
from .tensor import PreconditionError, TensorFormatError, load_tensor, save_tensor

log = logging.getLogger("idcausal")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


# flag dest -> default, per command; None-valued flags fall back to these
DEFAULTS = {
    "gen": {
        "n": 20,
        "neighborhood": 5.0,
        "pervasiveness": 0.1,
        "confounders": 1,
        "samples": 5,
        "skeletons": 1,
        "noise_sigma": 1.0,
        "embed_dim": 1,
        "seed": 0,
        "out": None,
    },
    "train": {f.name: f.default for f in fields(model.TrainConfig)}
    | {"data": None, "out": None, "folds_file": None, "fold": None},
    "eval": {
        "data": None,
        "checkpoint": None,
        "predictions": None,
        "out": None,
        "threshold": 0.5,
        "gate_threshold": 0.5,
        "holdout_structures": None,
        "folds": 10,
        "corr_rule": "moral",
        "seed": 0,
    },
    "deconfound": {
        "data": None,
        "sweep": None,
        "out": None,
        "n": 20,
        "pervasiveness": 0.1,
        "confounders": 1,
        "samples": 5,
        "skeletons": 10,
        "neighborhood": 5.0,
        "noise_sigma": 1.0,
        "seeds": 10,
        "eval_per_skeleton": 5,
        "seed": 0,
    },
    "dirtest": {
        "a": None,
        "b": None,
        "alpha": 0.05,
        "permutations": 500,
        "seed": 0,
        "out": None,
    },
}


def _resolve(args: argparse.Namespace) -> dict:
    cmd = args.command
    defaults = DEFAULTS[cmd]
    from_file: dict = {}
    if args.config:
        raw = read_config(args.config)
        from_file = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        if isinstance(raw.get(cmd), dict):
            from_file.update(raw[cmd])
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys for {cmd}: {unknown}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        resolved[key] = flag if flag is not None else from_file.get(key, default)
    return resolved


def _out_dir(cfg: dict, required: bool = True) -> Path | None:
    if cfg.get("out") is None:
        if required:
            raise ConfigError("--out is required")
        return None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path | None, cmd: str, cfg: dict) -> None:
    if out is not None:
        (out / "config.json").write_text(json.dumps({"command": cmd, **cfg}, indent=2, sort_keys=True) + "\n")


def _need(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _bench_config(cfg: dict, **override) -> BenchConfig:
    c = dict(
        n_observed=cfg["n"],
        expected_neighborhood=cfg["neighborhood"],
        pervasiveness=cfg["pervasiveness"],
        n_confounders=cfg["confounders"],
        samples_per_skeleton=cfg["samples"],
        n_skeletons=cfg["skeletons"],
        noise_sigma=cfg["noise_sigma"],
        seed=cfg["seed"],
    )
    if "embed_dim" in cfg:
        c["embed_dim"] = cfg["embed_dim"]
    c.update(override)
    try:
        return BenchConfig(**c)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: dict) -> Path:
    out = _out_dir(cfg)
    _echo_config(out, "gen", cfg)
    bench = _bench_config(cfg)
    ds = generate_bench(bench)
    datasets_io.save_synthetic(ds, out)
    log.info("wrote %d samples to %s", len(ds), out)
    return out


def _train_config(cfg: dict) -> model.TrainConfig:
    try:
        return model.TrainConfig.from_dict({f.name: cfg[f.name] for f in fields(model.TrainConfig)})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _fold_part(cfg: dict, part: str) -> list[int] | None:
    if cfg.get("folds_file") is None:
        return None
    _need(cfg, "fold")
    folds = json.loads(Path(cfg["folds_file"]).read_text())["folds"]
    if not 0 <= cfg["fold"] < len(folds):
        raise ConfigError(f"--fold {cfg['fold']} out of range for {len(folds)} folds")
    return folds[cfg["fold"]][part]


def cmd_train(cfg: dict) -> Path:
    _need(cfg, "data")
    out = _out_dir(cfg)
    _echo_config(out, "train", cfg)
    tcfg = _train_config(cfg)
    ds = datasets_io.load_synthetic(cfg["data"])
    train_idx = _fold_part(cfg, "train")
    if train_idx is not None:
        ds = ds.subset(train_idx)
    params, history = model.train(ds, tcfg)
    model.save_checkpoint(out, params, tcfg, history)
    log.info("trained %d epochs, final loss %.6g", tcfg.epochs, history[-1]["total"])
    return out


def _load_predictions(path: Path, n: int) -> tuple[list[np.ndarray], list[np.ndarray] | None]:
    a_hats = []
    reps: list[np.ndarray] | None = []
    for i in range(n):
        f = path / f"a_hat_{i:05d}.idt"
        if not f.exists():
            raise datasets_io.DatasetFormatError(f"{f}: missing prediction")
        a_hats.append(load_tensor(f))
        r = path / f"repr_{i:05d}.idt"
        if reps is not None and r.exists():
            reps.append(load_tensor(r))
        else:
            reps = None
    return a_hats, reps


def _representation_scores(reps, adjs, corr_rule: str, seed: int) -> dict:
    scores = {"cas_auroc": None, "cas_mse": None, "cor_auroc": None, "cor_mse": None}
    if not reps:
        return scores
    try:
        scores["cas_auroc"], scores["cas_mse"] = metrics.cas_eval(reps, adjs, seed=seed)
    except (metrics.UndefinedMetricError, metrics.SplitError) as exc:
        log.warning("Cas skipped: %s", exc)
    try:
        labels = [metrics.correlation_labels(a, rule=corr_rule) for a in adjs]
        scores["cor_auroc"], scores["cor_mse"] = metrics.cor_eval(reps, labels)
    except metrics.UndefinedMetricError as exc:
        log.warning("Cor skipped: %s", exc)
    return scores


def cmd_eval(cfg: dict) -> metrics.EvalReport:
    _need(cfg, "data")
    if (cfg["checkpoint"] is None) == (cfg["predictions"] is None):
        raise ConfigError("give exactly one of --checkpoint or --predictions")
    out = _out_dir(cfg)
    _echo_config(out, "eval", cfg)
    ds = datasets_io.load_synthetic(cfg["data"])
    if any(s.ground_truth is None for s in ds):
        raise datasets_io.DatasetFormatError("evaluation needs ground-truth graphs for every sample")
    if cfg["checkpoint"] is not None:
        params, tcfg = model.load_checkpoint(cfg["checkpoint"])
        outs = model.predict(params, ds, tcfg.rank_tol if tcfg else 1e-6)
        a_hats = [o.a_hat for o in outs]
        reps = [model.representations(o, cfg["gate_threshold"]) for o in outs]
    else:
        a_hats, reps = _load_predictions(Path(cfg["predictions"]), len(ds))
    adjs = [s.ground_truth.adjacency for s in ds]

    if cfg["holdout_structures"]:
        folds = metrics.ood_split(
            [s.structure_id for s in ds], cfg["holdout_structures"], cfg["folds"], seed=cfg["seed"]
        )
        (out / "folds.json").write_text(
            json.dumps({"folds": [f.to_dict() for f in folds]}, indent=1, sort_keys=True) + "\n"
        )
        parts = [list(f.test) for f in folds]
    else:
        parts = [list(range(len(ds)))]

    per_fold = {"auroc": [], "mse": [], "hd": []}
    rep_scores = []
    for idx in parts:
        s = metrics.structure_scores([a_hats[i] for i in idx], [adjs[i] for i in idx], cfg["threshold"])
        for k in per_fold:
            per_fold[k].append(s[k])
        if reps:
            rep_scores.append(
                _representation_scores([reps[i] for i in idx], [adjs[i] for i in idx], cfg["corr_rule"], cfg["seed"])
            )
    rep = {}
    for key in ("cas_auroc", "cas_mse", "cor_auroc", "cor_mse"):
        vals = [r[key] for r in rep_scores if r[key] is not None]
        rep[key] = float(np.mean(vals)) if vals else None
    report = metrics.EvalReport(
        auroc=metrics.confidence_interval(per_fold["auroc"]),
        mse=metrics.confidence_interval(per_fold["mse"]),
        hd=metrics.confidence_interval(per_fold["hd"]),
        n_samples=len(ds),
        **rep,
    )
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    sys.stdout.write(report.to_table())
    return report


def _sweep_cells(cfg: dict) -> list[BenchConfig]:
    axis = {"n": "samples_per_skeleton", "N": "n_observed", "P": "pervasiveness", "K": "n_confounders"}
    sweep = cfg["sweep"]
    if sweep == "grid":
        combos = [
            dict(n_observed=N, pervasiveness=P, n_confounders=K, samples_per_skeleton=n)
            for N in BENCH_GRID["n_observed"]
            for P in BENCH_GRID["pervasiveness"]
            for K in BENCH_GRID["n_confounders"]
            for n in BENCH_GRID["samples_per_skeleton"]
        ]
    elif sweep in axis:
        combos = [{axis[sweep]: v} for v in BENCH_GRID[axis[sweep]]]
    else:
        raise ConfigError(f"--sweep must be one of n, N, P, K, grid; got {sweep!r}")
    cells = []
    for combo in combos:
        for s in range(cfg["seeds"]):
            cells.append(_bench_config(cfg, seed=cfg["seed"] + s, **combo))
    return cells


def _run_cell(args) -> dict:
    bench, eval_per_skeleton = args
    r = deconfound.c_mse_study(bench, eval_per_skeleton)
    return {
        "n_observed": bench.n_observed,
        "pervasiveness": bench.pervasiveness,
        "n_confounders": bench.n_confounders,
        "samples_per_skeleton": bench.samples_per_skeleton,
        "seed": bench.seed,
        "mse_est": r["mse_est"],
        "mse_zero": r["mse_zero"],
    }


def _workers() -> int:
    raw = os.environ.get("IDC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"IDC_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_deconfound(cfg: dict) -> Path:
    if (cfg["data"] is None) == (cfg["sweep"] is None):
        raise ConfigError("give exactly one of --data or --sweep")
    out = _out_dir(cfg)
    _echo_config(out, "deconfound", cfg)
    if cfg["sweep"] is not None:
        cells = _sweep_cells(cfg)
        jobs = [(c, cfg["eval_per_skeleton"]) for c in cells]
        workers = min(_workers(), len(jobs))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_run_cell, jobs))
        else:
            rows = [_run_cell(j) for j in jobs]
        (out / "sweep.csv").write_text(_csv(rows))
        keys = ("n_observed", "pervasiveness", "n_confounders", "samples_per_skeleton")
        groups: dict[tuple, list[dict]] = {}
        for r in rows:
            groups.setdefault(tuple(r[k] for k in keys), []).append(r)
        means = [
            dict(zip(keys, g), seeds=len(rs), mse_est=float(np.mean([r["mse_est"] for r in rs])),
                 mse_zero=float(np.mean([r["mse_zero"] for r in rs])))
            for g, rs in groups.items()
        ]
        (out / "sweep_mean.csv").write_text(_csv(means))
        sys.stdout.write(_csv(means))
        return out

    ds = datasets_io.load_synthetic(cfg["data"])
    k = cfg["confounders"]
    meta_k = ds.metadata.get("config", {}).get("n_confounders")
    if meta_k is not None:
        k = meta_k
    estimator = deconfound.pooled_estimator(ds, k)
    cdir = out / "c_est"
    cdir.mkdir(exist_ok=True)
    for i, s in enumerate(ds):
        save_tensor(cdir / f"c_est_{i:05d}.idt", estimator(s))
    summary = {"n_samples": len(ds), "n_confounders": k}
    if all(s.confounding is not None for s in ds):
        summary["mse_est"] = deconfound.eval_c_mse(ds, estimator)
        summary["mse_zero"] = deconfound.eval_c_mse(ds, deconfound.zero_estimator)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    (out / "summary.json").write_text(text)
    sys.stdout.write(text)
    return out


def cmd_dirtest(cfg: dict) -> dirtest.PairVerdict:
    _need(cfg, "a", "b")
    out = _out_dir(cfg, required=False)
    _echo_config(out, "dirtest", cfg)
    a = load_tensor(cfg["a"])
    b = load_tensor(cfg["b"])
    if a.shape != b.shape:
        raise datasets_io.DatasetFormatError(f"tensor shapes differ: {a.shape} vs {b.shape}")
    verdict = dirtest.classify_pair(a, b, cfg["alpha"], cfg["permutations"], cfg["seed"])
    text = json.dumps(verdict.to_dict(), indent=2, sort_keys=True) + "\n"
    if out is not None:
        (out / "verdict.json").write_text(text)
    sys.stdout.write(text)
    return verdict


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "deconfound": cmd_deconfound,
    "dirtest": cmd_dirtest,
}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML file with parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help="observed variables N")
    p.add_argument("--pervasiveness", type=float, help="confounder-to-node probability P")
    p.add_argument("--confounders", type=int, help="number of confounders K")
    p.add_argument("--samples", type=int, help="samples per skeleton n")
    p.add_argument("--skeletons", type=int)
    p.add_argument("--neighborhood", type=float, help="expected neighbourhood size")
    p.add_argument("--noise-sigma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idcausal", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic confounded benchmark")
    _common(p)
    _bench_flags(p)
    p.add_argument("--embed-dim", type=int)

    p = sub.add_parser("train", help="train the structure model on a dataset directory")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--rank-tol", type=float)
    p.add_argument("--sigma-q-init", type=float)
    p.add_argument("--gate-threshold", type=float)
    p.add_argument("--folds-file", help="folds.json from eval --holdout-structures")
    p.add_argument("--fold", type=int, help="train on this fold's train part")

    p = sub.add_parser("eval", help="score predicted structures and representations")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of a_hat_XXXXX.idt (and optional repr_XXXXX.idt)")
    p.add_argument("--threshold", type=float, help="edge threshold for HD")
    p.add_argument("--gate-threshold", type=float)
    p.add_argument("--holdout-structures", type=int, help="structures held out per fold")
    p.add_argument("--folds", type=int)
    p.add_argument("--corr-rule", choices=("moral", "trek"))

    p = sub.add_parser("deconfound", help="estimate C on a dataset or sweep the benchmark grid")
    _common(p)
    _bench_flags(p)
    p.add_argument("--data")
    p.add_argument("--sweep", help="n, N, P, K or grid")
    p.add_argument("--seeds", type=int, help="seeds per grid cell")
    p.add_argument("--eval-per-skeleton", type=int)

    p = sub.add_parser("dirtest", help="four-way direction test between two representation tensors")
    _common(p)
    p.add_argument("a", nargs="?")
    p.add_argument("b", nargs="?")
    p.add_argument("--alpha", type=float)
    p.add_argument("--permutations", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        datasets_io.SchemaError,
        datasets_io.BindingError,
        datasets_io.DatasetFormatError,
        TensorFormatError,
        deconfound.MissingGroundTruthError,
        metrics.UndefinedMetricError,
        metrics.SplitError,
        model.InputError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (
        model.TrainingError,
        model.NonFiniteLossError,
        deconfound.DegenerateWeightsError,
        dirtest.DegenerateInputError,
        PreconditionError,
        FloatingPointError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
