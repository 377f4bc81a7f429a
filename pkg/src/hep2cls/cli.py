"""Command-line entry point.

Subcommands: phantom-gen, extract, train, evaluate, compare, selftest and
replay.  Every run that writes outputs also writes ``run.json``, a
manifest with the full configuration and version tags; ``replay`` re-runs
it.
"""

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import Hep2Error
from .features import LAYOUT_IDS

FRAMEWORKS = ("ovo", "ovr", "cascade", "common-hier", "rf", "ruf", "adaboost")
FEATURE_SETS = ("cs", "texture", "combined")
RESOLVER_FRAMEWORKS = {"ovr": ("score", "pairwise"), "cascade": ("score", "pairwise"), "common-hier": ("score",)}
MANIFEST = "run.json"


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers, got %r" % text)
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _seed_list(text):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integer seeds, got %r" % text)
    if not vals or len(set(vals)) != len(vals):
        raise argparse.ArgumentTypeError("seeds must be distinct and non-empty")
    return vals


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer, got %r" % text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--dataset", metavar="DIR", help="dataset root with gt.csv and <id>.png / <id>_mask.png")
    g.add_argument("--phantoms", metavar="N", type=_positive_int, help="generate N phantoms per class")
    p.add_argument("--phantom-seed", type=int, default=0, help="seed of the phantom generator (default 0)")
    p.add_argument("--phantom-noise", type=float, default=0.02, help="phantom noise level (default 0.02)")


def _add_model_opts(p, framework=True):
    p.add_argument("--features", choices=FEATURE_SETS, default="cs")
    if framework:
        p.add_argument("--framework", choices=FRAMEWORKS, default="ovo")
        p.add_argument("--resolver", choices=("score", "pairwise"), default=None)
    p.add_argument("--grid-c", type=_float_list, default=None, metavar="LIST")
    p.add_argument("--grid-gamma", type=_float_list, default=None, metavar="LIST")
    p.add_argument("--n-jobs", type=_positive_int, default=1, help="threads for the cascade subset search")


def build_parser():
    ap = argparse.ArgumentParser(prog="hep2cls", description="HEp-2 cell pattern classification experiments.")
    ap.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("phantom-gen", help="write a synthetic phantom dataset")
    p.add_argument("--phantoms", metavar="N", type=_positive_int, required=True)
    p.add_argument("--phantom-seed", type=int, default=0)
    p.add_argument("--phantom-noise", type=float, default=0.02)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("extract", help="write feature CSVs")
    _add_source(p)
    p.add_argument("--features", choices=FEATURE_SETS + ("all",), default="all")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("train", help="fit a framework on one split and save it")
    _add_source(p)
    _add_model_opts(p)
    p.add_argument("--seeds", type=_seed_list, default=(0,), help="the first seed chooses the split")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("evaluate", help="seeded 40/30/30 experiment with a metrics report")
    _add_source(p)
    _add_model_opts(p)
    p.add_argument("--seeds", type=_seed_list, default=(0, 1, 2, 3, 4))
    p.add_argument("--test-intermediates-only", action="store_true")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("compare", help="run every framework and tabulate OTP/OFP/F")
    _add_source(p)
    _add_model_opts(p, framework=False)
    p.add_argument("--frameworks", default=",".join(FRAMEWORKS), help="comma-separated subset")
    p.add_argument("--seeds", type=_seed_list, default=(0, 1, 2, 3, 4))
    p.add_argument("--test-intermediates-only", action="store_true")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--tests-dir", metavar="DIR", default=None,
                   help="directory holding test_acceptance.py (default: the source checkout's tests/)")

    p = sub.add_parser("replay", help="re-run a command from its run.json")
    p.add_argument("manifest", metavar="RUN_JSON")
    p.add_argument("--out", metavar="DIR", default=None, help="write to DIR instead of the recorded directory")
    return ap


# ---------------------------------------------------------------------------


def _validate(args):
    if getattr(args, "dataset", None) is not None and not Path(args.dataset).is_dir():
        raise UsageError("dataset directory %s does not exist" % args.dataset)
    fw = getattr(args, "framework", None)
    res = getattr(args, "resolver", None)
    if fw is not None and res is not None and res not in RESOLVER_FRAMEWORKS.get(fw, ()):
        raise UsageError("--resolver %s is not valid with --framework %s" % (res, fw))
    if getattr(args, "frameworks", None) is not None:
        names = [f.strip() for f in args.frameworks.split(",") if f.strip()]
        bad = [f for f in names if f not in FRAMEWORKS]
        if bad or not names:
            raise UsageError("unknown frameworks in --frameworks: %s" % ", ".join(bad or ["(none)"]))
        args.frameworks = tuple(names)
    if getattr(args, "grid_c", None) is not None or getattr(args, "grid_gamma", None) is not None:
        _grid(args)  # range errors surface before any work


def _grid(args):
    from .svm import TrainGrid

    kw = {}
    if args.grid_c is not None:
        kw["C"] = args.grid_c
    if args.grid_gamma is not None:
        kw["gamma"] = args.grid_gamma
    try:
        return TrainGrid(**kw)
    except Hep2Error as exc:
        raise UsageError(str(exc))


def _manifest(args, argv, extra=None):
    d = {
        "tool": "hep2cls",
        "version": __version__,
        "argv": list(argv),
        "command": args.command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
                   if k != "command"},
        "layouts": LAYOUT_IDS,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    if extra:
        d.update(extra)
    return d


def _write_manifest(out, args, argv, extra=None):
    with open(out / MANIFEST, "w") as fh:
        json.dump(_manifest(args, argv, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _records(args):
    from .data import generate_phantoms, load_dataset, phantom_specs

    if args.dataset is not None:
        man = load_dataset(args.dataset)
        for rid, reason in man.skipped:
            print("skipped %s: %s" % (rid, reason), file=sys.stderr)
        if len(man) == 0:
            raise Hep2Error("no usable records in %s" % args.dataset)
        return man
    return generate_phantoms(phantom_specs(args.phantoms, seed=args.phantom_seed, noise=args.phantom_noise))


def _table(args):
    from .data import extract_features

    return extract_features(_records(args))


def _spec(args, framework=None):
    from .frameworks import FrameworkSpec

    return FrameworkSpec(framework=framework or args.framework, features=args.features,
                         resolver=getattr(args, "resolver", None) if framework is None else None,
                         grid=_grid(args), n_jobs=args.n_jobs)


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_phantom_gen(args, argv):
    from .data import generate_phantoms, phantom_specs, write_dataset

    out = _out(args)
    man = generate_phantoms(phantom_specs(args.phantoms, seed=args.phantom_seed, noise=args.phantom_noise))
    write_dataset(man, out)
    _write_manifest(out, args, argv, {"records": len(man)})
    print("wrote %d phantoms to %s" % (len(man), out))


def cmd_extract(args, argv):
    from .data import export_features

    out = _out(args)
    table = _table(args)
    kinds = FEATURE_SETS if args.features == "all" else (args.features,)
    for k in kinds:
        path = export_features(table, k, out / ("features_%s.csv" % k))
        print("wrote %s (%d rows x %d features)" % (path, len(table), table.matrices[k].shape[1]))
    _write_manifest(out, args, argv, {"records": len(table)})


def cmd_train(args, argv):
    from .data import save_model
    from .evaluation import stratified_split
    from .frameworks import fit_framework

    out = _out(args)
    table = _table(args)
    spec = _spec(args)
    import dataclasses

    spec = dataclasses.replace(spec, seed=args.seeds[0])
    tr, va, _ = stratified_split(table.labels, table.tags, seed=args.seeds[0])
    M = table.matrices
    model = fit_framework(spec, {k: v[tr] for k, v in M.items()}, table.labels[tr],
                          {k: v[va] for k, v in M.items()}, table.labels[va])
    save_model(model, out / "model")
    _write_manifest(out, args, argv, {"train_ids": table.ids[tr].tolist(), "val_ids": table.ids[va].tolist()})
    print("saved %s model to %s" % (model.kind, out / "model"))


def _plan(args):
    from .evaluation import ExperimentPlan

    return ExperimentPlan(seeds=args.seeds, test_filter="intermediates" if args.test_intermediates_only else "all")


def cmd_evaluate(args, argv):
    from .evaluation import format_report, run_experiment, write_report_csv

    out = _out(args)
    report = run_experiment(_plan(args), _table(args), _spec(args))
    text = format_report(report)
    (out / "report.txt").write_text(text + "\n")
    write_report_csv(report, out / "report.csv")
    _write_manifest(out, args, argv)
    print(text)


def cmd_compare(args, argv):
    import csv

    from .evaluation import format_comparison, run_experiment

    out = _out(args)
    table = _table(args)
    plan = _plan(args)
    reports = []
    for fw in args.frameworks:
        reports.append(run_experiment(plan, table, _spec(args, fw), keep_outcomes=False))
        print("done %s" % fw, file=sys.stderr)
    text = format_comparison(reports)
    (out / "comparison.txt").write_text(text + "\n")
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["framework", "features", "resolver", "otp_mean", "otp_std", "ofp_mean", "ofp_std",
                    "f_mean", "f_std"])
        for r in reports:
            w.writerow([r.spec.framework, r.spec.features, r.spec.resolver or ""]
                       + ["%.6f" % f(m) for m in ("otp", "ofp", "f_score") for f in (r.mean, r.std)])
    _write_manifest(out, args, argv)
    print(text)


def _default_tests_dir():
    here = Path(__file__).resolve().parent
    for cand in (here.parent.parent / "tests", Path.cwd() / "tests"):
        if (cand / "test_acceptance.py").is_file():
            return cand
    return None


def cmd_selftest(args, argv):
    tests = Path(args.tests_dir) if args.tests_dir else _default_tests_dir()
    if tests is None or not (tests / "test_acceptance.py").is_file():
        raise UsageError("cannot find test_acceptance.py; pass --tests-dir")
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-rA", str(tests / "test_acceptance.py")])
    return 0 if proc.returncode == 0 else 1


def cmd_replay(args, argv):
    try:
        with open(args.manifest) as fh:
            rec = json.load(fh)
        old = list(rec["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError("cannot read run manifest %s: %s" % (args.manifest, exc))
    if args.out is not None:
        if "--out" not in old:
            raise UsageError("recorded command has no --out to redirect")
        old[old.index("--out") + 1] = args.out
    return dispatch(old)


COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "extract": cmd_extract,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "selftest": cmd_selftest,
    "replay": cmd_replay,
}


def dispatch(argv):
    """Run one command; returns the process exit code.

    0 on success, 2 on usage errors (bad flags, missing paths, invalid
    combinations), 1 on runtime failures.
    """
    ap = build_parser()
    argv = list(argv)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        _validate(args)
        rc = COMMANDS[args.command](args, argv)
        return 0 if rc is None else int(rc)
    except UsageError as exc:
        print("hep2cls %s: usage error: %s" % (args.command, exc), file=sys.stderr)
        return 2
    except Hep2Error as exc:
        print("hep2cls %s: %s: %s" % (args.command, type(exc).__name__, exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print("hep2cls %s: I/O error: %s" % (args.command, exc), file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))
