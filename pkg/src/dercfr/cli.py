"""Command-line entry point: ``dercfr {gen,train,eval,ablate,search,report}``.

Every run directory gets JSON files that echo the resolved configuration.
Apart from the ``seconds`` fields, outputs are byte-identical for identical
arguments.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import SplitSpec, SyntheticConfig, generate_synthetic, load_csv, load_npz_benchmark, save_csv, split
from .errors import ConfigurationError, DerCFRError
from .losses import KernelSpec, LossReport
from .metrics import identification_report
from .model import contribution_profile, load_model, save_model
from .trainer import (PRESETS, Hyperparams, TrainConfig, ablate, derive_seeds,
                      evaluate_model, hyper_search, run_parallel, train)

log = logging.getLogger("dercfr")

METRIC_KEYS = ("pehe", "ate_error", "policy_risk", "att_error")


# ----------------------------------------------------------------- helpers

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory is not writable: {out}")
    return out


def resolve_threads(flag: int | None) -> int:
    """``--threads`` wins over ``DERCFR_THREADS``; default 1."""
    if flag is not None:
        n = flag
    else:
        env = os.environ.get("DERCFR_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigurationError(f"DERCFR_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigurationError("thread count must be >= 1")
    return n


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("batch_norm", "rep_normalize"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if key == "layers":
        return "all" if raw.lower() == "all" else int(raw)
    if key in ("d_R", "d_y", "d_t", "h_R", "h_y", "h_t", "rep_dim"):
        return None if raw.lower() == "none" else int(raw)
    return float(raw)


def read_hp_file(path) -> Hyperparams:
    """Plain ``key=value`` lines over the Hyperparams fields; unset keys keep their defaults."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"hyperparameter file not found: {path}")
    known = set(Hyperparams().as_dict())
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}: line {lineno} is not key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"{path}: unknown hyperparameter {key!r} on line {lineno}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigurationError(f"{path}: bad value for {key} on line {lineno}") from None
    return Hyperparams.from_dict({**Hyperparams().as_dict(), **values})


def write_hp_file(path: Path, hp: Hyperparams) -> None:
    lines = [f"{k}={v}" for k, v in hp.as_dict().items()]
    path.write_text("\n".join(lines) + "\n")


def resolve_hp(args) -> tuple[Hyperparams, str]:
    if getattr(args, "hp_file", None):
        return read_hp_file(args.hp_file), f"file:{args.hp_file}"
    return PRESETS[args.preset], args.preset


def train_config(args, seed: int) -> TrainConfig:
    bw = args.bandwidth
    if bw != "median":
        bw = float(bw)
    return TrainConfig(lr=args.lr, iterations=args.iterations, kernel=KernelSpec(args.kernel, bw),
                       seed=seed, log_every=args.log_every)


def load_parts(args, rep: int, seed: int) -> tuple[dict, object]:
    """Dataset for one replication and its train/valid/test split."""
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if path.suffix == ".npz":
        ds = load_npz_benchmark(path, realization=args.realization + rep)
    else:
        ds = load_csv(path, outcome_type=args.outcome_type)
    return split(ds, SplitSpec(seed=seed)), ds


def rep_seeds(seed: int, reps: int) -> list[int]:
    if reps < 1:
        raise ConfigurationError("--reps must be >= 1")
    return [seed] if reps == 1 else derive_seeds(seed, reps)


def metrics_dict(reports: dict) -> dict:
    return {scope: rep.as_dict() for scope, rep in reports.items()}


def aggregate(metric_list: list[dict]) -> dict:
    """Mean and (population) std of every metric across replications."""
    out = {}
    for scope in metric_list[0]:
        out[scope] = {}
        for key in METRIC_KEYS:
            vals = [m[scope][key] for m in metric_list if m[scope].get(key) is not None]
            if vals:
                out[scope][key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
    return out


def write_losses(path: Path, trajectory: list[LossReport]) -> None:
    names = LossReport.field_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + names)
        for it, rep in enumerate(trajectory, start=1):
            w.writerow([it] + [repr(float(getattr(rep, k))) for k in names])


def write_contributions(path: Path, profile, roles) -> list[dict]:
    rows, summary = identification_report(profile, roles)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "role", "wI", "wC", "wA"])
        for r in rows:
            w.writerow([r["variable"], r["role"], repr(r["wI"]), repr(r["wC"]), repr(r["wA"])])
    return summary


def _summary_json(summary) -> dict:
    out = {}
    for f, s in summary.items():
        ratio = s.ratio
        out[f] = {"true_mean": s.true_mean, "other_mean": s.other_mean,
                  "ratio": "inf" if math.isinf(ratio) else (None if math.isnan(ratio) else ratio),
                  "n_true": s.n_true, "n_other": s.n_other}
    return out


# ----------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    cfg = SyntheticConfig(m_I=args.mi, m_C=args.mc, m_A=args.ma, m_D=args.md, n=args.n, seed=args.seed)
    out = _out_dir(args.out)
    ds = generate_synthetic(cfg)
    save_csv(ds, out / f"{args.name}.csv")
    print(f"wrote {out / (args.name + '.csv')} ({ds.n} rows, {ds.m} covariates)")
    return 0


def _train_one(args, hp, rep, seed, out: Path) -> dict:
    parts, ds = load_parts(args, rep, seed)
    cfg = train_config(args, seed)
    res = train(parts["train"], parts["valid"], hp, cfg)
    metrics = metrics_dict(evaluate_model(res.model, parts))
    extra = {"seed": seed, "replication": rep, "data": str(args.data), "roles": ds.roles,
             "hp": hp.as_dict(), "train_config": cfg.as_dict(),
             "split": {k: p.meta["indices"].tolist() for k, p in parts.items()}}
    out.mkdir(parents=True, exist_ok=True)
    save_model(res.model, out / "model.bin", extra)
    write_losses(out / "losses.csv", res.trajectory)
    summary = write_contributions(out / "contributions.csv", res.profile, ds.roles)
    result = {"command": "train", "version": __version__, "data": str(args.data), "replication": rep,
              "seed": seed, "hp": hp.as_dict(), "train_config": cfg.as_dict(),
              "coefficients": res.coefficients, "metrics": metrics,
              "valid_objective": res.valid_objective, "final_loss": res.trajectory[-1].as_dict(),
              "identification": _summary_json(summary), "seconds": res.seconds}
    _dump_json(out / "result.json", result)
    log.info("replication %d seed %d: %s", rep, seed,
             {s: m.get("pehe") for s, m in metrics.items()})
    return result


def cmd_train(args) -> int:
    hp, source = resolve_hp(args)
    threads = resolve_threads(args.threads)
    seeds = rep_seeds(args.seed, args.reps)
    out = _out_dir(args.out)
    if args.reps == 1:
        result = _train_one(args, hp, 0, seeds[0], out)
        print(json.dumps(result["metrics"], sort_keys=True))
        return 0
    results = run_parallel(lambda item: _train_one(args, hp, item[0], item[1], out / f"rep{item[0]:03d}"),
                           list(enumerate(seeds)), threads)
    summary = {"command": "train", "version": __version__, "data": str(args.data), "hp_source": source,
               "hp": hp.as_dict(), "train_config": train_config(args, args.seed).as_dict(),
               "reps": args.reps, "seed": args.seed, "seeds": seeds,
               "metrics": [r["metrics"] for r in results],
               "aggregate": aggregate([r["metrics"] for r in results]),
               "seconds": sum(r["seconds"] for r in results)}
    _dump_json(out / "result.json", summary)
    print(json.dumps(summary["aggregate"], sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"model not found: {model_path}")
    model, extra = load_model(model_path)
    data = Path(args.data)
    if not data.exists():
        raise FileNotFoundError(f"dataset not found: {data}")
    if data.suffix == ".npz":
        ds = load_npz_benchmark(data, realization=int(extra.get("replication", 0)) + args.realization)
    else:
        ds = load_csv(data, outcome_type=args.outcome_type)
    idx = extra.get("split")
    if idx and max(max(v) for v in idx.values()) < ds.n:
        parts = {k: ds.subset(np.asarray(v, dtype=np.int64)) for k, v in idx.items()}
    else:
        # No stored split: score every unit as held out.
        parts = {"test": ds}
    metrics = metrics_dict(evaluate_model(model, parts))
    out = _out_dir(args.out)
    _dump_json(out / "metrics.json", {"command": "eval", "model": str(model_path), "data": str(data),
                                      "metrics": metrics, "train_config": extra.get("train_config"),
                                      "hp": extra.get("hp")})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    hp, source = resolve_hp(args)
    threads = resolve_threads(args.threads)
    seeds = rep_seeds(args.seed, args.reps)
    out = _out_dir(args.out)
    per_rep = []
    for rep, seed in enumerate(seeds):
        parts, _ = load_parts(args, rep, seed)
        rows = ablate(parts, hp, train_config(args, seed), threads)
        per_rep.append({r["row"]: metrics_dict(r["metrics"]) for r in rows})
    names = list(per_rep[0])
    agg = {name: aggregate([p[name] for p in per_rep]) for name in names}
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["row"]
        for scope in ("within", "out"):
            for key in ("pehe", "ate_error"):
                header += [f"{scope}_{key}_mean", f"{scope}_{key}_std"]
        w.writerow(header)
        for name in names:
            line = [name]
            for scope in ("within", "out"):
                for key in ("pehe", "ate_error"):
                    cell = agg[name].get(scope, {}).get(key)
                    line += ["", ""] if cell is None else [repr(cell["mean"]), repr(cell["std"])]
            w.writerow(line)
    _dump_json(out / "ablation.json", {"command": "ablate", "data": str(args.data), "hp_source": source,
                                       "hp": hp.as_dict(), "train_config": train_config(args, args.seed).as_dict(),
                                       "seeds": seeds, "per_replication": per_rep, "aggregate": agg})
    print(f"wrote {out / 'ablation.csv'} ({len(names)} rows)")
    return 0


def cmd_search(args) -> int:
    threads = resolve_threads(args.threads)
    out = _out_dir(args.out)
    parts, _ = load_parts(args, 0, args.seed)
    cfg = train_config(args, args.seed)
    best, records = hyper_search(parts, args.trials, seed=args.seed, cfg=cfg,
                                 two_stage=args.two_stage, threads=threads)
    _dump_json(out / "trials.json", {"command": "search", "data": str(args.data), "trials": args.trials,
                                     "seed": args.seed, "two_stage": args.two_stage,
                                     "train_config": cfg.as_dict(), "records": records})
    keys = list(Hyperparams().as_dict())
    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "trial"] + keys + ["valid_objective", "error"])
        for r in records:
            vo = r.get("valid_objective")
            w.writerow([r["stage"], r["trial"]] + [r["hp"][k] for k in keys]
                       + ["" if vo is None else repr(vo), r.get("error", "")])
    write_hp_file(out / "best.hp", best)
    _dump_json(out / "best.json", {"hp": best.as_dict(), "train_config": cfg.as_dict()})
    print(f"best configuration written to {out / 'best.hp'}")
    return 0


def cmd_report(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"model not found: {model_path}")
    model, extra = load_model(model_path)
    layers = args.layers or (extra.get("hp") or {}).get("layers", "all")
    if layers != "all":
        layers = int(layers)
    profile = contribution_profile(model, layers)
    roles = extra.get("roles")
    out = _out_dir(args.out)
    summary = write_contributions(out / "identification.csv", profile, roles)
    radar = {"model": str(model_path), "layers": layers, "factors": _summary_json(summary)}
    _dump_json(out / "radar.json", radar)
    print(f"wrote {out / 'identification.csv'} and {out / 'radar.json'}")
    return 0


# ----------------------------------------------------------------- parser

def _add_training_flags(p, data_required=True):
    p.add_argument("--data", required=data_required, help="dataset CSV (or .npz benchmark file)")
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--preset", choices=sorted(PRESETS), default="syn")
    grp.add_argument("--hp-file", help="key=value hyperparameter file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--kernel", choices=("linear", "rbf"), default="linear")
    p.add_argument("--bandwidth", default="median", help="rbf bandwidth or 'median'")
    p.add_argument("--reps", type=int, default=1, help="replications with derived seeds")
    p.add_argument("--threads", type=int, default=None, help="worker threads (env DERCFR_THREADS)")
    p.add_argument("--outcome-type", choices=("binary", "continuous"), default=None)
    p.add_argument("--realization", type=int, default=0, help="first realization of an .npz benchmark")
    p.add_argument("--log-every", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dercfr", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--mi", type=int, default=8)
    p.add_argument("--mc", type=int, default=8)
    p.add_argument("--ma", type=int, default=8)
    p.add_argument("--md", type=int, default=2)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="syn", help="file stem inside --out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--outcome-type", choices=("binary", "continuous"), default=None)
    p.add_argument("--realization", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full model vs each single-term ablation")
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("search", help="random hyperparameter search")
    _add_training_flags(p)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--two-stage", action="store_true", help="search architecture first, then coefficients")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="per-variable contribution table and factor summary")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", default=None, help="2, 3, ... or 'all' (default: training value)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "reps", 1) < 1:
        parser.error("--reps must be >= 1")
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except (DerCFRError, OSError, ValueError) as exc:
        print(f"dercfr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
