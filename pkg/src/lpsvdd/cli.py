"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from fractions import Fraction

import numpy as np

from . import analysis
from .data import DataError, load_csv, load_features
from .kernel import KernelSpec
from .model import PREPROCESS_MODES, ModelFormatError, atomic_write_text, fit, load_model, save_model
from .solver import InfeasibleProblem, SolverError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _p_value(text):
    v = float(Fraction(text))
    if not v >= 1:
        raise argparse.ArgumentTypeError(f"p >= 1 required, got {text}")
    return v


def _width(text):
    if text == "auto":
        return None
    return _positive_float(text)


def _value_list(parse):
    def inner(text):
        return tuple(parse(t) for t in text.split(",") if t.strip())
    return inner


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpsvdd", description="lp slack-norm support vector data description")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a description and write a model file")
    t.add_argument("--data", required=True)
    t.add_argument("--p", type=_p_value, default=2.0)
    t.add_argument("--c1", type=_positive_float, default=1.0)
    t.add_argument("--c2", type=_positive_float, default=1.0)
    t.add_argument("--kernel", choices=("gaussian", "linear"), default="gaussian")
    t.add_argument("--width", type=_width, default=None, help="'auto' or a positive sigma")
    t.add_argument("--use-negatives", action="store_true")
    t.add_argument("--preprocess", choices=PREPROCESS_MODES, default="unit")
    t.add_argument("--seed", type=int, default=0, help="accepted for uniformity; training is deterministic")
    t.add_argument("--label-column", default="label")
    t.add_argument("--out", required=True)

    s = sub.add_parser("score", help="score rows of a CSV with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--margin", type=float, default=0.0)
    s.add_argument("--label-column", default="label")
    s.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="ROC curve and AUC of a saved model on labelled data")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--label-column", default="label")
    e.add_argument("--out", required=True)

    g = sub.add_parser("grid", help="repeated split / validate / test protocol")
    g.add_argument("--data", required=True)
    g.add_argument("--trials", type=_positive_int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--use-negatives", action="store_true")
    g.add_argument("--p-values", type=_value_list(_p_value), default=analysis.DEFAULT_P_VALUES)
    g.add_argument("--c-values", type=_value_list(_positive_float), default=analysis.DEFAULT_C_VALUES)
    g.add_argument("--kernel", choices=("gaussian", "linear"), default="gaussian")
    g.add_argument("--preprocess", choices=PREPROCESS_MODES, default="unit")
    g.add_argument("--jobs", type=_positive_int, default=1)
    g.add_argument("--label-column", default="label")
    g.add_argument("--out", required=True)

    b = sub.add_parser("boundary", help="grid of score - R^2 over a 2-D window")
    b.add_argument("--model", required=True)
    for name in ("--xmin", "--xmax", "--ymin", "--ymax"):
        b.add_argument(name, type=float, required=True)
    b.add_argument("--resolution", type=_positive_int, default=100)
    b.add_argument("--out", required=True)

    y = sub.add_parser("synth", help="2-D Gaussian sample, all labelled +1")
    y.add_argument("--n", type=_positive_int, default=100)
    y.add_argument("--mean", type=float, default=2.0)
    y.add_argument("--std", type=_positive_float, default=3.0)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    return parser


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return repr(float(v))


def cmd_train(args) -> int:
    data = load_csv(args.data, args.label_column)
    if not args.use_negatives:
        data = data.positives()
    model, report = fit(
        data, args.p, args.c1, args.c2, KernelSpec(args.kernel, args.width), preprocess=args.preprocess
    )
    if args.kernel == "gaussian":
        print(f"width: {model.kernel.width!r}")
    print(f"squared_radius: {model.squared_radius!r}")
    print(f"support_vectors: {model.n_support}")
    print(f"duality_gap: {report.duality_gap!r}")
    print(f"iterations: {report.dual.iterations}")
    print(f"converged: {str(report.dual.converged).lower()}")
    if not report.dual.converged:
        print(f"error: solver did not converge (kkt residual {report.dual.kkt_residual:.3g})", file=sys.stderr)
        return EXIT_SOLVER
    save_model(model, args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    model = load_model(args.model)
    x, _ = load_features(args.data, args.label_column)
    if x.shape[1] != model.d:
        raise DataError(f"dimension mismatch: model expects d={model.d}, data has d={x.shape[1]}")
    f = model.distances(model.transform(x))
    r2 = model.squared_radius
    pred = np.where(f <= r2 + args.margin, 1, -1)
    rows = [[i, _num(fi), _num(fi - r2), int(pi)] for i, (fi, pi) in enumerate(zip(f, pred))]
    atomic_write_text(args.out, _csv_text(["index", "score", "score_minus_r2", "prediction"], rows))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, args.label_column)
    if data.d != model.d:
        raise DataError(f"dimension mismatch: model expects d={model.d}, data has d={data.d}")
    if data.n_positive == 0 or data.n_negative == 0:
        raise DataError("AUC needs both classes (+1 and -1) in the evaluation data")
    f = model.distances(model.transform(data.features)) - model.squared_radius
    roc = analysis.roc_auc(f, data.labels)
    rows = [[_num(t), _num(fp), _num(tp)] for t, fp, tp in zip(roc.thresholds, roc.fpr[1:], roc.tpr[1:])]
    atomic_write_text(args.out, _csv_text(["threshold", "fpr", "tpr"], rows))
    print(f"auc: {roc.auc!r}")
    return EXIT_OK


def cmd_grid(args) -> int:
    data = load_csv(args.data, args.label_column)
    if data.n_positive == 0 or data.n_negative == 0:
        raise DataError("grid protocol needs both classes: AUC is undefined without negatives")
    grid = analysis.GridSpec(tuple(args.p_values), tuple(args.c_values), tuple(args.c_values))
    report = analysis.run_trials(
        data,
        trials=args.trials,
        grid=grid,
        kernel_kind=args.kernel,
        base_seed=args.seed,
        use_negatives=args.use_negatives,
        jobs=args.jobs,
        preprocess=args.preprocess,
    )
    atomic_write_text(args.out, report.to_csv())
    print(f"mean±std: {report.summary()}")
    return EXIT_OK


def cmd_boundary(args) -> int:
    model = load_model(args.model)
    if model.d != 2:
        raise DataError(f"boundary export needs a 2-D model, this one has d={model.d}")
    xs = np.linspace(args.xmin, args.xmax, args.resolution)
    ys = np.linspace(args.ymin, args.ymax, args.resolution)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y outer, x inner
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    f = model.distances(model.transform(pts)) - model.squared_radius
    rows = [[_num(a), _num(b), _num(v)] for (a, b), v in zip(pts, f)]
    atomic_write_text(args.out, _csv_text(["x", "y", "score_minus_r2"], rows))
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    x = rng.normal(args.mean, args.std, size=(args.n, 2))
    rows = [[_num(a), _num(b), 1] for a, b in x]
    atomic_write_text(args.out, _csv_text(["x1", "x2", "label"], rows))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "grid": cmd_grid,
    "boundary": cmd_boundary,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except InfeasibleProblem as exc:
        print(f"error: infeasible problem: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
