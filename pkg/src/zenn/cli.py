"""Command-line front end: ``gen``, ``train``, ``analyze``, ``eosfit``, ``selftest``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("zenn")


class DataError(Exception):
    pass


def _override(cfg_user: dict, args) -> dict:
    """Apply command-line flags on top of a user config (flags win)."""
    train = cfg_user.setdefault("train", {})
    for flag in ("seed", "epochs", "learning_rate", "lam"):
        v = getattr(args, flag, None)
        if v is not None:
            train[flag] = v
    if getattr(args, "K", None) is not None:
        cfg_user.setdefault("model", {})["K"] = args.K if args.K == "auto" else int(args.K)
    if getattr(args, "data", None):
        cfg_user.setdefault("data", {})["path"] = args.data
    return cfg_user


def _user_config(args) -> dict:
    from zenn.train import ConfigError

    if args.preset:
        user = {"task": args.preset}
    elif args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise DataError(f"{args.config}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
    else:
        raise ConfigError("give a config file or --preset")
    return _override(user, args)


def cmd_gen(args) -> int:
    from zenn import benchdata as bd
    from zenn import experiments as ex

    user = {"task": args.task, "data": {}}
    if args.task == "classify":
        user["data"].update(seed=args.seed, samples_per_T=args.samples_per_T)
    elif args.grid:
        try:
            user["data"]["grid"] = [int(v) for v in args.grid.lower().split("x")]
        except ValueError:
            raise ex.ConfigError(f"--grid: expected NxM, got {args.grid!r}") from None
    cfg = ex.validate_config(user)
    table, meta = ex.generate_table(cfg)
    out = Path(args.out or f"{args.task}.csv")
    try:
        if args.task == "fe3pt":
            bd.save_fvt(out, table, meta)
        else:
            bd.write_table(out, table)
            bd.sidecar_path(out).write_text(ex.dumps(meta))
    except OSError as e:
        raise DataError(f"{out}: {e.strerror}") from None
    print(f"rows {len(table)}")
    print(f"sha256 {bd.file_checksum(out)}  {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from zenn import experiments as ex

    cfg = ex.validate_config(_user_config(args))
    out = Path(args.out or f"run_{cfg['task']}")
    out.mkdir(parents=True, exist_ok=True)
    progress = (lambda n, loss: log.info("epoch %d loss %.6g", n, loss)) if args.verbose else None
    try:
        data = ex.load_task_data(cfg)
    except (OSError, ValueError) as e:
        raise DataError(str(e)) from None
    res = ex.run_training(cfg, data, baseline=args.baseline == "dnn", progress=progress)
    (out / "model.json").write_text(ex.dumps(ex.model_document(cfg, res.model, args.baseline == "dnn")))
    (out / "loss.csv").write_text(res.report.loss_csv())
    (out / "metrics.json").write_text(ex.dumps(res.metrics))
    for name in ("model.json", "loss.csv", "metrics.json"):
        print(out / name)
    print(f"final_loss {res.report.final_loss:.17g}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from zenn import experiments as ex

    try:
        cfg, model = ex.load_model_document(args.model)
    except (OSError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{args.model}: cannot load model ({e})") from None
    if args.config:
        user = json.loads(Path(args.config).read_text())
        user.setdefault("task", cfg["task"])
        cfg = ex.validate_config(ex._merge(cfg, user))
    out = Path(args.out or Path(args.model).parent / "analysis")
    summary = ex.run_analysis(cfg, model, out)
    for name in summary["files"]:
        print(out / name)
    cp = summary.get("critical_point")
    if cp:
        if cp["status"] == "ok":
            print(f"critical_point x={cp['x_star']} T={cp['T_star']:.17g} residual={cp['residual']:.3e}")
        else:
            print(f"critical_point failed: {cp['error']}")
    return EXIT_OK


def cmd_eosfit(args) -> int:
    from zenn import benchdata as bd

    if args.table_s1:
        print("index,DF,V0,E0,B0,B_prime")
        for r in bd.table_s1():
            print(f"{r.index},{r.DF},{r.V0},{r.E0},{r.B0},{r.B_prime}")
        return EXIT_OK
    if not args.data:
        raise DataError("eosfit needs a V,E CSV file or --table-s1")
    try:
        t = bd.read_table(args.data, ("V", "E"))
    except OSError as e:
        raise DataError(f"{args.data}: {e.strerror}") from None
    try:
        p = bd.eos_fit(t["V"], t["E"])
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    doc = {"a": list(p.coeffs), "V0": p.V0, "E0": p.E0, "B0": p.B0, "B_prime": p.B_prime}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from zenn.selftest import run_selftest

    return EXIT_OK if run_selftest(print) else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zenn", description="Zentropy-enhanced neural network experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a benchmark dataset")
    g.add_argument("task", choices=("classify", "landscape1d", "landscape2d", "fe3pt"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--samples-per-T", type=int, default=10000)
    g.add_argument("--grid", help="grid size NxM for landscape tasks, e.g. 201x61")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model from a JSON config or a preset")
    t.add_argument("config", nargs="?")
    t.add_argument("--preset", choices=("classify", "landscape1d", "landscape2d", "fe3pt"))
    t.add_argument("--out")
    t.add_argument("--data", help="dataset file overriding data.path")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--K")
    t.add_argument("--baseline", choices=("dnn",))
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("analyze", help="derivatives, contours, isobars and critical points of a trained model")
    a.add_argument("model")
    a.add_argument("--config", help="JSON overriding the stored analysis section")
    a.add_argument("--out")
    a.set_defaults(fn=cmd_analyze)

    e = sub.add_parser("eosfit", help="Birch-Murnaghan fit of a V,E CSV file")
    e.add_argument("data", nargs="?")
    e.add_argument("--table-s1", action="store_true", help="print the embedded Fe3Pt configuration table")
    e.set_defaults(fn=cmd_eosfit)

    s = sub.add_parser("selftest", help="run the invariant suite and print a pass/fail table")
    s.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from zenn.analysis import NonConvergenceError
    from zenn.benchdata import DataFormatError
    from zenn.train import ConfigError, TrainingError

    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DataFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NonConvergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
