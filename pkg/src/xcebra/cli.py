"""Command-line interface: dataset generation, simulation, training,
attribution, evaluation, the benchmark grid runner, and report assembly.

Configuration is JSON with ``--set key=value`` overrides; unknown keys are
rejected. Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attribution as att
from . import encoder as enc_mod
from . import evaluation as ev
from . import navsim
from . import synthgen
from . import theoryguards
from .diffcore import NumericalError
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


# -- config plumbing ---------------------------------------------------------

SCHEMAS = {
    "generate": {
        "out": "dataset",
        "T": 20000,
        "partition": [2, 2],
        "observed_factors": [0],
        "sigma": 0.025,
        "seed": 0,
        "gamma": "identity",
        "linear": False,
        "block_out_dims": [25, 25],
        "force": False,
    },
    "simulate": {
        "out": "navdata",
        "T": 20000,
        "dt": 0.1,
        "n_per_type": 100,
        "noise_std": 0.05,
        "noise_sweep": False,
        "seed": 0,
        "si_bins": 10,
        "ratemap_bins": 30,
        "cell_metrics": True,
        "force": False,
    },
    "train": {
        "dataset": "dataset",
        "out": "run",
        "mode": "hybrid",
        "batch_size": 512,
        "negatives": 512,
        "steps": 4000,
        "lambda_max": 0.1,
        "ramp_start": 1000,
        "ramp_end": 2000,
        "learning_rate": 3e-4,
        "lr_decay": "none",
        "similarity": "neg_sq_euclidean",
        "temperature": 1.0,
        "seed": 0,
        "hidden_width": 128,
        "partition": [2, 2],
        "output_scale": 1.1,
        "geometry": "box",
        "reg_batch": 128,
        "log_every": 50,
        "shuffle_labels": False,
        "force": False,
    },
    "attribute": {
        "dataset": "dataset",
        "checkpoint": "run/checkpoint",
        "out": "run/attribution",
        "method": "inverted_neuron_gradient",
        "aggregation": "sum",
        "subsample": None,
        "rank_tol": 1e-6,
        "ig_steps": 64,
        "permutations": 20,
        "seed": 0,
        "force": False,
    },
    "evaluate": {
        "dataset": "dataset",
        "checkpoint": "run/checkpoint",
        "attribution": "run/attribution",
        "out": "run",
        "eval_samples": 4000,
        "bootstrap_n": 1000,
        "seed": 0,
    },
    "benchmark": {
        "dataset": "dataset",
        "out": "benchmark",
        "modes": ["time", "supervised", "hybrid"],
        "regularized": [False, True],
        "methods": list(att.ATTRIBUTION_METHODS),
        "seeds": [0, 1, 2],
        "steps": 4000,
        "batch_size": 512,
        "negatives": 512,
        "lambda_max": 0.1,
        "ramp_start": 1000,
        "ramp_end": 2000,
        "learning_rate": 3e-4,
        "temperature": 1.0,
        "partition": [2, 2],
        "hidden_width": 128,
        "aggregation": "sum",
        "subsample": None,  # timestep cap for the gradient-based maps
        "perturb_subsample": 512,  # cap for ablation / IG / Shapley maps
        "ig_steps": 64,
        "permutations": 20,
        "jobs": None,
        "force": False,
    },
    "report": {
        "runs": ["run"],
        "out": "report",
        "claims": False,
        "claims_seed": 0,
        "claims_fast": True,
    },
}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(command: str, config_path: str | None, overrides: list) -> dict:
    schema = SCHEMAS[command]
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in schema.items()}
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}")
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        for k, v in doc.items():
            if k not in schema:
                raise ConfigError(f"unknown config key {k!r} for {command!r}")
            cfg[k] = v
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, raw = item.split("=", 1)
        if k not in schema:
            raise ConfigError(f"unknown config key {k!r} for {command!r}")
        cfg[k] = _parse_value(raw)
    return cfg


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --set force=true)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------


def cmd_generate(cfg: dict) -> int:
    out = _prepare_out(cfg["out"], cfg["force"])
    ds = synthgen.make_dataset(
        T=cfg["T"],
        partition=cfg["partition"],
        observed_factors=cfg["observed_factors"],
        sigma=cfg["sigma"],
        seed=cfg["seed"],
        block_out_dims=cfg["block_out_dims"],
        gamma=cfg["gamma"],
        linear=cfg["linear"],
    )
    synthgen.save_dataset(ds, out)
    print(f"wrote dataset {ds.x.shape} to {out}")
    return EXIT_OK


def _simulate_one(cfg: dict, noise_std: float, out: Path) -> None:
    ds = navsim.make_nav_dataset(
        seed=cfg["seed"],
        noise_std=noise_std,
        T=cfg["T"],
        dt=cfg["dt"],
        n_per_type=cfg["n_per_type"],
    )
    if cfg["cell_metrics"]:
        si = navsim.spatial_information(ds.x, ds.c, bins=cfg["si_bins"])
        gs = [
            navsim.grid_score(navsim.ratemap(ds.x[:, j], ds.c, cfg["ratemap_bins"]))
            for j in range(ds.x.shape[1])
        ]
        ds.meta["spatial_information"] = [None if np.isnan(v) else float(v) for v in si]
        ds.meta["grid_score"] = [float(v) for v in gs]
    synthgen.save_dataset(ds, out)
    print(f"wrote navsim dataset {ds.x.shape} (noise {noise_std}) to {out}")


def cmd_simulate(cfg: dict) -> int:
    out = _prepare_out(cfg["out"], cfg["force"])
    if cfg["noise_sweep"]:
        for level in navsim.NOISE_SWEEP_LEVELS:
            _simulate_one(cfg, level, out / f"noise_{level:g}")
    else:
        _simulate_one(cfg, cfg["noise_std"], out)
    return EXIT_OK


def _train_config(cfg: dict) -> TrainConfig:
    keys = (
        "mode batch_size negatives steps lambda_max ramp_start ramp_end "
        "learning_rate lr_decay similarity temperature seed hidden_width partition "
        "output_scale geometry reg_batch log_every"
    ).split()
    return TrainConfig(**{k: cfg[k] for k in keys})


def cmd_train(cfg: dict) -> int:
    out = _prepare_out(cfg["out"], cfg["force"])
    ds = synthgen.load_dataset(cfg["dataset"])
    tc = _train_config(cfg)
    if tc.mode in ("supervised", "hybrid") and ds.c is None:
        raise ConfigError(f"mode {tc.mode!r} requires labels in the dataset")
    if cfg["shuffle_labels"]:
        rng = np.random.default_rng(tc.seed + 1)
        c = ds.c.copy()
        for j in range(c.shape[1]):
            c[:, j] = c[rng.permutation(len(c)), j]
        ds.c = c
    t0 = time.time()
    enc, trace = train(ds, tc)
    enc_mod.save_checkpoint(enc, out / "checkpoint")
    trace.write_csv(out / "trace.csv")
    (out / "train.json").write_text(
        json.dumps(
            {
                "config": asdict(tc),
                "seconds": time.time() - t0,
                "final_infonce": trace.infonce[-1],
                "final_gof": trace.gof[-1],
                "log_n": trace.log_n,
                "shuffled_labels": bool(cfg["shuffle_labels"]),
            },
            indent=2,
        )
    )
    print(f"trained {tc.mode} model; final gof {trace.gof[-1]:.3f}; wrote {out}")
    return EXIT_OK


def cmd_attribute(cfg: dict) -> int:
    out = _prepare_out(cfg["out"], cfg["force"])
    ds = synthgen.load_dataset(cfg["dataset"])
    enc = enc_mod.load_checkpoint(cfg["checkpoint"])
    if cfg["method"] not in att.ATTRIBUTION_METHODS:
        raise ConfigError(f"unknown attribution method {cfg['method']!r}")
    if enc.input_dim != ds.x.shape[1]:
        raise ConfigError(
            f"checkpoint input dim {enc.input_dim} != dataset dim {ds.x.shape[1]}"
        )
    gmap = att.compute_global_map(
        enc,
        ds.x,
        cfg["method"],
        subsample=cfg["subsample"],
        aggregation=cfg["aggregation"],
        seed=cfg["seed"],
        rank_tol=cfg["rank_tol"],
        ig_steps=cfg["ig_steps"],
        permutations=cfg["permutations"],
    )
    gmap = att.zscore_threshold(gmap)
    np.ascontiguousarray(gmap.scores, dtype="<f8").tofile(out / "scores.f64")
    np.ascontiguousarray(gmap.binary, dtype="u1").tofile(out / "binary.u8")
    (out / "attribution.json").write_text(
        json.dumps(
            {
                "method": gmap.method,
                "aggregation": gmap.aggregation,
                "shape": list(gmap.scores.shape),
                "threshold": gmap.threshold,
                "n_timesteps": gmap.n_timesteps,
            },
            indent=2,
        )
    )
    print(f"wrote {cfg['method']} map {gmap.scores.shape} to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    ds = synthgen.load_dataset(cfg["dataset"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    metrics: dict = {}
    if ds.gt_map is None:
        raise ConfigError("dataset has no ground-truth map to score against")
    att_dir = Path(cfg["attribution"])
    info = json.loads((att_dir / "attribution.json").read_text())
    scores = np.fromfile(att_dir / "scores.f64", dtype="<f8").reshape(info["shape"])
    roc = ev.auroc(scores, ds.gt_map)
    metrics["auroc"] = {info["method"]: roc.auroc}
    with (out / "roc.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for row in zip(roc.thresholds, roc.fpr, roc.tpr):
            w.writerow(row)
    rng = np.random.default_rng(cfg["seed"])
    flat_gt = ds.gt_map.ravel().astype(bool)
    flat_s = scores.ravel()
    boot = []
    n = flat_s.size
    for _ in range(min(cfg["bootstrap_n"], 1000)):
        idx = rng.integers(0, n, size=n)
        if flat_gt[idx].any() and not flat_gt[idx].all():
            boot.append(ev.auroc(flat_s[idx], flat_gt[idx]).auroc)
    lo, hi = np.quantile(boot, [0.025, 0.975])
    metrics["auroc_ci"] = [float(lo), float(hi)]

    enc = enc_mod.load_checkpoint(cfg["checkpoint"])
    T = ds.x.shape[0]
    sub = np.linspace(0, T - 1, min(cfg["eval_samples"], T)).astype(int)
    emb = enc_mod.embed(enc, ds.x[sub])
    metrics["collapse_score"] = ev.collapse_score(emb, enc.output_scale)
    if ds.c is not None:
        metrics["r2"] = ev.linear_decode_r2(emb, ds.c[sub])
    run_dir = Path(cfg["checkpoint"]).parent
    if (run_dir / "train.json").exists():
        tj = json.loads((run_dir / "train.json").read_text())
        metrics["gof"] = tj.get("final_gof")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    print(f"wrote metrics.json to {out}: auroc={roc.auroc:.4f}")
    return EXIT_OK


# -- benchmark grid ----------------------------------------------------------


def _auroc_ci(scores: np.ndarray, gt: np.ndarray, seed: int, n_boot: int = 200):
    """Percentile bootstrap of auROC over map entries."""
    rng = np.random.default_rng(seed)
    s, y = scores.ravel(), gt.ravel().astype(bool)
    vals = []
    for _ in range(n_boot):
        idx = rng.integers(0, s.size, size=s.size)
        if y[idx].any() and not y[idx].all():
            vals.append(ev.auroc(s[idx], y[idx]).auroc)
    lo, hi = np.quantile(vals, [0.025, 0.975])
    return float(lo), float(hi)


def _benchmark_cell(args):
    """Train one (mode, regularized, seed) cell and score every method."""
    cfg, mode, regularized, seed = args
    ds = synthgen.load_dataset(cfg["dataset"])
    tc = TrainConfig(
        mode=mode,
        batch_size=cfg["batch_size"],
        negatives=cfg["negatives"],
        steps=cfg["steps"],
        lambda_max=cfg["lambda_max"] if regularized else 0.0,
        ramp_start=cfg["ramp_start"],
        ramp_end=cfg["ramp_end"],
        learning_rate=cfg["learning_rate"],
        temperature=cfg["temperature"],
        seed=seed,
        hidden_width=cfg["hidden_width"],
        partition=cfg["partition"],
    )
    rows = []
    try:
        t0 = time.time()
        enc, trace = train(ds, tc)
        train_seconds = time.time() - t0
        T = ds.x.shape[0]
        sub = np.linspace(0, T - 1, min(4000, T)).astype(int)
        emb = enc_mod.embed(enc, ds.x[sub])
        r2 = ev.linear_decode_r2(emb, ds.c[sub]) if ds.c is not None else float("nan")
        gof = trace.gof[-1]
        gradient_methods = ("neuron_gradient", "inverted_neuron_gradient")
        for method in cfg["methods"]:
            t1 = time.time()
            try:
                gmap = att.compute_global_map(
                    enc,
                    ds.x,
                    method,
                    subsample=cfg["subsample"]
                    if method in gradient_methods
                    else cfg["perturb_subsample"],
                    aggregation=cfg["aggregation"],
                    seed=seed,
                    permutations=cfg["permutations"],
                    ig_steps=cfg["ig_steps"],
                )
                roc = ev.auroc(gmap.scores, ds.gt_map)
                lo, hi = _auroc_ci(gmap.scores, ds.gt_map, seed)
                rows.append(
                    {
                        "method": method,
                        "mode": mode,
                        "regularized": regularized,
                        "seed": seed,
                        "auroc": roc.auroc,
                        "ci_lo": lo,
                        "ci_hi": hi,
                        "gof": gof,
                        "r2": r2,
                        "seconds": train_seconds + (time.time() - t1),
                    }
                )
            except Exception as e:  # partial failure: record, keep going
                rows.append(
                    {
                        "method": method,
                        "mode": mode,
                        "regularized": regularized,
                        "seed": seed,
                        "auroc": float("nan"),
                        "ci_lo": float("nan"),
                        "ci_hi": float("nan"),
                        "gof": gof,
                        "r2": r2,
                        "seconds": time.time() - t1,
                        "error": str(e),
                    }
                )
    except Exception as e:
        for method in cfg["methods"]:
            rows.append(
                {
                    "method": method,
                    "mode": mode,
                    "regularized": regularized,
                    "seed": seed,
                    "auroc": float("nan"),
                    "ci_lo": float("nan"),
                    "ci_hi": float("nan"),
                    "gof": float("nan"),
                    "r2": float("nan"),
                    "seconds": 0.0,
                    "error": str(e),
                }
            )
    return rows


CSV_COLUMNS = [
    "method", "mode", "regularized", "seed",
    "auroc", "ci_lo", "ci_hi", "gof", "r2", "seconds",
]


def cmd_benchmark(cfg: dict) -> int:
    out = _prepare_out(cfg["out"], cfg["force"])
    jobs = cfg["jobs"]
    if jobs is None:
        jobs = int(os.environ.get("XCEBRA_JOBS", "1"))
    cells = [
        (cfg, mode, bool(reg), int(seed))
        for mode in cfg["modes"]
        for reg in cfg["regularized"]
        for seed in cfg["seeds"]
    ]
    all_rows = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(_benchmark_cell, cells):
                all_rows.extend(rows)
    else:
        for cell in cells:
            all_rows.extend(_benchmark_cell(cell))
    with (out / "benchmark.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(all_rows)
    # aggregate per (method, mode, regularized) over seeds
    summary = {}
    for row in all_rows:
        key = f"{row['method']}|{row['mode']}|{'reg' if row['regularized'] else 'noreg'}"
        summary.setdefault(key, []).append(row["auroc"])
    agg = {}
    for key, vals in summary.items():
        vals = [v for v in vals if np.isfinite(v)]
        if not vals:
            agg[key] = {"mean_auroc": None, "ci": None, "n": 0}
        else:
            ci = ev.bootstrap_ci(vals) if len(vals) > 1 else (vals[0], vals[0])
            agg[key] = {
                "mean_auroc": float(np.mean(vals)),
                "ci": [ci[0], ci[1]],
                "n": len(vals),
            }
    (out / "benchmark.json").write_text(
        json.dumps({"rows": all_rows, "summary": agg}, indent=2)
    )
    print(f"wrote benchmark grid ({len(all_rows)} rows) to {out}")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"runs": {}, "claims": None}
    if cfg["claims"]:
        verdicts = theoryguards.run_claim_suite(
            seed=cfg["claims_seed"], out_path=out / "claims.json", fast=cfg["claims_fast"]
        )
        report["claims"] = [asdict(v) for v in verdicts]
    elif (out / "claims.json").exists():
        report["claims"] = json.loads((out / "claims.json").read_text())
    for run in cfg["runs"]:
        run = Path(run)
        entry = {}
        for name in ("metrics.json", "train.json", "benchmark.json"):
            p = run / name
            if p.exists():
                entry[name.removesuffix(".json")] = json.loads(p.read_text())
        report["runs"][str(run)] = entry
    (out / "report.json").write_text(json.dumps(report, indent=2))
    lines = ["run report", "=========="]
    if report["claims"]:
        lines.append("claims:")
        for v in report["claims"]:
            lines.append(f"  {v['claim']}: {'PASS' if v['passed'] else 'FAIL'}")
    for run, entry in report["runs"].items():
        lines.append(f"run {run}:")
        m = entry.get("metrics", {})
        for k, v in m.items():
            lines.append(f"  {k}: {v}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote report to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xcebra",
        description="regularized contrastive learning with identifiable attribution maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key",
        )
        p.add_argument("--force", action="store_true", help="overwrite outputs")
        p.add_argument("--jobs", type=int, default=None, help="worker pool size")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.set)
        if args.force and "force" in SCHEMAS[args.command]:
            cfg["force"] = True
        if args.jobs is not None and "jobs" in SCHEMAS[args.command]:
            cfg["jobs"] = args.jobs
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, NumericalError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
