"""Command-line pipeline: gen-data, train, control, evaluate, report.

A run directory (``--out``) collects every artifact of one profile::

    profile.json
    data/{train,test}.jsonl, data/manifest.json
    model/model.gbx.json, model/curves.csv, model/summary.json
    control/<gate>_<optimizer>.json, control/fidelity.csv
    evaluation.json
    report/...            (``report`` also accepts a directory of run directories)

Exit codes: 0 success, 2 configuration, 3 data, 4 usage, 5 missing artifacts.
"""
import argparse
import csv
import json
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataset as dsmod
from . import lab
from .control import (
    GATE_NAMES,
    ControlResult,
    GateTarget,
    evaluate_on_lab,
    optimize_ga,
    optimize_gd,
    write_fidelity_csv,
)
from .model import (
    CompatibilityError,
    GrayboxModel,
    ShapeError,
    TrainingError,
    load_model,
    loss_mse,
    model_config_for,
    save_model,
    train,
    vo_identity_deviation,
)
from .profiles import load_profile
from .pulses import ConfigurationError, PulseSequence
from .quantum import InvalidInput

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE, EXIT_MISSING = 0, 2, 3, 4, 5
OPTIMIZERS = ("gd", "ga")
RUN_FILES = ("profile.json", "data/manifest.json", "model/summary.json", "control/fidelity.csv")

log = logging.getLogger("graybox")


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CLIError(EXIT_USAGE, message)


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(*paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise CLIError(EXIT_MISSING, "missing artifacts:\n  " + "\n  ".join(missing))


def _profile(args):
    """``--profile`` if given, else the profile recorded in the run directory."""
    if args.profile:
        return load_profile(args.profile)
    saved = Path(args.out) / "profile.json"
    if saved.exists():
        return load_profile(str(saved))
    raise CLIError(EXIT_USAGE, f"--profile is required ({saved} does not exist yet)")


def _record_profile(args, profile):
    _dump(Path(args.out) / "profile.json", profile.to_dict())


def _load_split(path):
    _require(path)
    return dsmod.load(path)


def _check_hash(ds, profile, what):
    want = dsmod.config_hash(profile.lab, profile.pulses)
    if ds.config_hash != want:
        raise CLIError(EXIT_DATA, f"{what} has config hash {ds.config_hash}, profile {profile.name} expects {want}")


# ------------------------------------------------------------------ commands
def cmd_gen_data(args):
    profile = _profile(args)
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    (out / "data").mkdir(parents=True, exist_ok=True)
    _record_profile(args, profile)
    splits = {}
    cfg = None
    for split, n in (("train", profile.n_train), ("test", profile.n_test)):
        t0 = time.perf_counter()
        ds = dsmod.generate(profile.lab, profile.pulses, n, profile.shots, seed=seed, split=split)
        dsmod.save(ds, out / "data" / f"{split}.jsonl")
        cfg = ds.config
        log.info("%s: %d examples in %.1fs", split, n, time.perf_counter() - t0)
        splits[split] = {"file": f"{split}.jsonl", "n_examples": n,
                         "max_trace_drift": ds.stats["max_trace_drift"],
                         "trace_drift": ds.stats["trace_drift"]}
    manifest = {"profile": profile.name, "config_hash": dsmod.config_hash(profile.lab, profile.pulses),
                "seed": seed, "shots": profile.shots, "substeps": cfg.substeps, "splits": splits,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    _dump(out / "data" / "manifest.json", manifest)
    print(f"wrote {profile.n_train}/{profile.n_test} examples to {out / 'data'}")
    return EXIT_OK


def cmd_train(args):
    profile = _profile(args)
    data = Path(args.data) if args.data else Path(args.out) / "data"
    _require(data / "train.jsonl", data / "test.jsonl")
    train_ds, test_ds = dsmod.load(data / "train.jsonl"), dsmod.load(data / "test.jsonl")
    _check_hash(train_ds, profile, data / "train.jsonl")
    _check_hash(test_ds, profile, data / "test.jsonl")
    opts = profile.train if args.seed is None else replace(profile.train, seed=args.seed)
    model = GrayboxModel(model_config_for(train_ds, profile.hidden), seed=opts.seed)
    res = train(model, train_ds, test_ds, opts, log=log.info)
    out = Path(args.out) / "model"
    out.mkdir(parents=True, exist_ok=True)
    _record_profile(args, profile)
    save_model(res.model, out / "model.gbx.json")
    res.write_curves(out / "curves.csv")
    summary = {"profile": profile.name, "config_hash": train_ds.config_hash, "seed": opts.seed,
               "iterations": opts.iterations, "final_train_mse": res.final_train_mse(),
               "best_test_mse": res.best_test_mse, "best_iteration": res.best_iteration,
               "train_mse": loss_mse(res.model, train_ds.examples)}
    _dump(out / "summary.json", summary)
    print(f"test MSE {res.best_test_mse:.3e} (iteration {res.best_iteration}); model in {out}")
    return EXIT_OK


def _gates(names_arg):
    names = GATE_NAMES if names_arg in (None, "all") else [g.strip() for g in names_arg.split(",") if g.strip()]
    try:
        return [GateTarget.named(g) for g in names]
    except KeyError as exc:
        raise CLIError(EXIT_USAGE, exc.args[0]) from exc


def _load_model_for(args, profile):
    path = Path(args.model) if args.model else Path(args.out) / "model" / "model.gbx.json"
    _require(path)
    try:
        model = load_model(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise CLIError(EXIT_DATA, f"{path}: cannot load model: {exc}") from exc
    want = dsmod.config_hash(profile.lab, profile.pulses)
    if model.config.config_hash not in (None, want):
        raise CLIError(EXIT_DATA, f"{path} was trained for config {model.config.config_hash}, "
                                  f"profile {profile.name} has {want}")
    return model


def _fidelity_rows(control_dir, shots):
    rows = []
    for gate in GATE_NAMES:
        for opt in OPTIMIZERS:
            p = control_dir / f"{gate}_{opt}.json"
            if p.exists():
                with open(p) as fh:
                    rows.append((gate, opt, shots, json.load(fh)["fidelity"]))
    return rows


def cmd_control(args):
    gates = _gates(args.gates)
    optimizers = OPTIMIZERS if args.optimizer == "both" else (args.optimizer,)
    profile = _profile(args)
    model = _load_model_for(args, profile)
    seed = 0 if args.seed is None else args.seed
    cfg = lab.resolve_substeps(profile.lab, profile.pulses.A_max)
    out = Path(args.out) / "control"
    out.mkdir(parents=True, exist_ok=True)
    _record_profile(args, profile)
    for G in gates:
        for opt in optimizers:
            t0 = time.perf_counter()
            if opt == "gd":
                res = optimize_gd(model, G, profile.pulses, replace(profile.gd, seed=seed), cfg)
            else:
                res = optimize_ga(model, G, profile.pulses, replace(profile.ga, seed=seed), cfg)
            res.save(out / f"{G.name}_{opt}.json")
            log.info("%s/%s: J=%.3e fidelity=%.6f (%.1fs)", G.name, opt, res.cost, res.fidelity,
                     time.perf_counter() - t0)
            print(f"{G.name:7s} {opt}  J={res.cost:.3e}  fidelity={res.fidelity:.6f}")
    write_fidelity_csv(out / "fidelity.csv", _fidelity_rows(out, profile.shots))
    return EXIT_OK


def cmd_evaluate(args):
    profile = _profile(args)
    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    result = {"profile": profile.name}
    if args.free_evolution:
        times, ex, pur = lab.free_evolution(lab.resolve_substeps(profile.lab, profile.pulses.A_max))
        lab.write_trajectory_csv(run / "free_evolution.csv", times, ex, pur)
        result["free_evolution"] = "free_evolution.csv"
    if args.pulse:
        _require(args.pulse)
        if not args.gate:
            raise CLIError(EXIT_USAGE, "--pulse needs --gate")
        G = _gates(args.gate)[0]
        with open(args.pulse) as fh:
            d = json.load(fh)
        try:
            pulse = ControlResult.from_dict(d).pulse if "pulse" in d else PulseSequence.from_dict(d)
        except (KeyError, TypeError) as exc:
            raise CLIError(EXIT_DATA, f"{args.pulse}: not a pulse or control result: {exc!r}") from exc
        pulse.check(profile.pulses)
        choi, fid = evaluate_on_lab(lab.resolve_substeps(profile.lab, profile.pulses.A_max), pulse, G)
        lab.write_choi_json(run / f"choi_{G.name}.json", choi)
        result["pulse"] = {"file": str(args.pulse), "gate": G.name, "fidelity": fid}
        print(f"{G.name}: simulator process fidelity {fid:.6f}")
    if not args.free_evolution and not args.pulse:
        model = _load_model_for(args, profile)
        data = Path(args.data) if args.data else run / "data"
        test_ds = _load_split(data / "test.jsonl")
        _check_hash(test_ds, profile, data / "test.jsonl")
        pred = model.predict(test_ds.samples())
        err = (pred - test_ds.records()) ** 2
        result["test"] = {"n_examples": len(test_ds), "mse": float(err.mean()),
                          "mse_per_output": [float(v) for v in err.mean(axis=0)],
                          "mean_vo_identity_deviation": vo_identity_deviation(model, test_ds.samples())}
        print(f"test MSE {result['test']['mse']:.3e}, "
              f"mean |V_O - I|_F {result['test']['mean_vo_identity_deviation']:.3e}")
    _dump(run / "evaluation.json", result)
    return EXIT_OK


# -------------------------------------------------------------------- report
def _run_dirs(root):
    if (root / "profile.json").exists():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "profile.json").exists()) if root.is_dir() else []


def _fmt(v):
    return "" if v is None else repr(float(v))


def cmd_report(args):
    root = Path(args.run_dir or args.out)
    runs = _run_dirs(root)
    if not runs:
        raise CLIError(EXIT_MISSING, "missing artifacts:\n  " + "\n  ".join(str(root / f) for f in RUN_FILES))
    missing = [str(r / f) for r in runs for f in RUN_FILES if not (r / f).exists()]
    if missing:
        raise CLIError(EXIT_MISSING, "missing artifacts:\n  " + "\n  ".join(missing))
    mse_rows, fid_rows = [], []
    for r in runs:
        profile = load_profile(str(r / "profile.json"))
        with open(r / "model" / "summary.json") as fh:
            summ = json.load(fh)
        key = (profile.name, profile.lab.bath_kind, "+".join(profile.pulses.axes),
               "inf" if profile.shots is None else profile.shots, float(abs(complex(profile.lab.V))))
        mse_rows.append(key + (summ["final_train_mse"], summ["best_test_mse"]))
        with open(r / "control" / "fidelity.csv") as fh:
            for row in csv.DictReader(fh):
                fid_rows.append(key + (row["gate"], row["optimizer"], float(row["fidelity"])))
    out = root / "report"
    out.mkdir(parents=True, exist_ok=True)
    head = ["profile", "bath", "axes", "shots", "V"]
    with open(out / "mse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head + ["final_train_mse", "best_test_mse"])
        for row in mse_rows:
            w.writerow(list(row[:5]) + [_fmt(row[5]), _fmt(row[6])])
    with open(out / "fidelity_by_gate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head + ["gate", "optimizer", "fidelity"])
        for row in fid_rows:
            w.writerow(list(row[:7]) + [_fmt(row[7])])
    sweep = {}
    for row in fid_rows:
        sweep.setdefault((row[1], row[2], row[3], row[6], row[4]), []).append(row[7])
    sweep_rows = sorted((k[:4] + (k[4], float(np.mean(v)), len(v)) for k, v in sweep.items()), key=str)
    with open(out / "v_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bath", "axes", "shots", "optimizer", "V", "mean_fidelity", "n_gates"])
        for row in sweep_rows:
            w.writerow(list(row[:5]) + [_fmt(row[5]), row[6]])
    lines = ["Learning (MSE)", f"{'profile':34s} {'shots':>6s} {'train':>10s} {'test':>10s}"]
    for row in mse_rows:
        lines.append(f"{row[0]:34s} {str(row[3]):>6s} {row[5]:10.3e} {row[6]:10.3e}")
    lines += ["", "Process fidelity", f"{'profile':34s} {'gate':7s} {'opt':3s} {'fidelity':>9s}"]
    for row in fid_rows:
        lines.append(f"{row[0]:34s} {row[5]:7s} {row[6]:3s} {row[7]:9.6f}")
    lines += ["", "Mean fidelity by coupling", f"{'bath':9s} {'axes':5s} {'shots':>6s} {'opt':3s} {'V':>6s} {'mean':>9s}"]
    for row in sweep_rows:
        lines.append(f"{row[0]:9s} {row[1]:5s} {str(row[2]):>6s} {row[3]:3s} {row[4]:6g} {row[5]:9.6f}")
    text = "\n".join(lines) + "\n"
    with open(out / "summary.txt", "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------- main
def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--profile", help="built-in profile name or JSON profile file")
    common.add_argument("--seed", type=int, help="seed for data, training or control")
    common.add_argument("--out", default="run", help="run directory (default: run)")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p = _Parser(prog="graybox", description="Graybox noise modelling and pulse control pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="simulate train/test datasets")
    t = sub.add_parser("train", parents=[common], help="fit the graybox model")
    t.add_argument("--data", help="dataset directory (default: OUT/data)")
    c = sub.add_parser("control", parents=[common], help="optimize gate pulses against a model")
    c.add_argument("--model", help="model file (default: OUT/model/model.gbx.json)")
    c.add_argument("--gates", default="all", help=f"comma list from {','.join(GATE_NAMES)} or 'all'")
    c.add_argument("--optimizer", choices=("gd", "ga", "both"), default="gd")
    e = sub.add_parser("evaluate", parents=[common], help="score a model on test data or a pulse on the simulator")
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--pulse", help="control result or pulse JSON to run on the simulator")
    e.add_argument("--gate", help="target gate for --pulse")
    e.add_argument("--free-evolution", action="store_true", help="write uncontrolled trajectories as CSV")
    r = sub.add_parser("report", parents=[common], help="consolidate run directories into tables")
    r.add_argument("run_dir", nargs="?", help="run directory or directory of runs (default: OUT)")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "control": cmd_control,
            "evaluate": cmd_evaluate, "report": cmd_report}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    return threadpool_limits(limits=max(1, n))


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, InvalidInput) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dsmod.DatasetError, CompatibilityError, ShapeError, TrainingError, lab.NumericalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
