"""Command-line entry point: ``chromunroll {gen,train,eval,report}``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 numeric failure, 5 checkpoint/dataset incompatibility.

Relative output paths are resolved against ``$CHROMUNROLL_OUTPUT_ROOT``
when it is set. Options may also come from a JSON file given with
``--config``; explicit flags win over the file, which wins over defaults.
The fully resolved options are written next to every train/eval output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetFormatError, generate_dataset
from .metrics import METRIC_COLUMNS, SCATTER_COLUMNS, evaluate_dataset
from .sigmodel import PRESETS, DatasetSpec, PlacementError, preset
from .solvers import (
    DivergenceError,
    HqConfig,
    IndefiniteSystemError,
    InfeasibleError,
    IstaConfig,
    PdConfig,
    hq_solve,
    ista_solve,
    primal_dual_solve,
)
from .unrolled import (
    VARIANTS,
    ForwardSetup,
    NonFiniteError,
    TrainConfig,
    TrainingAborted,
    UnrolledModel,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("chromunroll")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4, 5
OUTPUT_ROOT_ENV = "CHROMUNROLL_OUTPUT_ROOT"
CLASSICAL = ("ista", "pd", "hq")
BASELINES = ("oracle", "zero")
# columns where larger is better; every other *_mean column is minimized
MAXIMIZED = {"snr_mean", "tsnr_mean"}


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


NUMERIC_ERRORS = (
    TrainingAborted, NonFiniteError, DivergenceError, InfeasibleError, IndefiniteSystemError, FloatingPointError,
)


def output_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    _write_text(path, buf.getvalue())


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _echo_config(path: Path, resolved: dict):
    # thread count never changes results; leaving it out keeps reruns byte-identical
    resolved = {k: v for k, v in resolved.items() if k != "threads"}
    _write_text(path, json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_USAGE) from exc
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold a JSON object", EXIT_USAGE)
    return doc


def _resolve(args, defaults: dict) -> dict:
    """Merge defaults < config file < explicit command-line flags."""
    conf = _load_config(args.config)
    unknown = set(conf) - set(defaults)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_USAGE)
    out = dict(defaults)
    out.update(conf)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _open_dataset(path) -> Dataset:
    try:
        return Dataset(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    except (DatasetFormatError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"unreadable dataset {path}: {exc}", EXIT_IO) from exc


def _split(ds: Dataset, name):
    try:
        return ds.split(name)
    except (OSError, DatasetFormatError, KeyError) as exc:
        raise CliError(f"cannot read split {name!r} of {ds.root}: {exc}", EXIT_IO) from exc


# -- gen ---------------------------------------------------------------------

GEN_DEFAULTS = {
    "preset": None, "spec": None, "seed": 0, "out": None, "threads": 1,
    "n": None, "count_train": None, "count_val": None, "count_test": None, "sigma_g": None,
}


def cmd_gen(args) -> int:
    opts = _resolve(args, GEN_DEFAULTS)
    if opts["out"] is None:
        raise CliError("gen needs --out", EXIT_USAGE)
    overrides = {k: opts[k] for k in ("n", "count_train", "count_val", "count_test", "sigma_g") if opts[k] is not None}
    overrides["seed"] = int(opts["seed"])
    try:
        if opts["spec"] is not None:
            spec_doc = opts["spec"] if isinstance(opts["spec"], dict) else _load_config(opts["spec"])
            spec = DatasetSpec.from_dict({**spec_doc, **overrides})
        elif opts["preset"] is not None:
            spec = preset(opts["preset"], **overrides)
        else:
            raise CliError("gen needs --preset or --spec", EXIT_USAGE)
    except KeyError as exc:
        raise CliError(exc.args[0], EXIT_USAGE) from exc
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid dataset spec: {exc}", EXIT_USAGE) from exc
    out = output_path(opts["out"])
    t0 = time.perf_counter()
    try:
        manifest = generate_dataset(spec, out, threads=int(opts["threads"]))
    except OSError as exc:
        raise CliError(f"cannot write dataset to {out}: {exc}", EXIT_IO) from exc
    except PlacementError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    log.info("generated %s in %.2fs", spec.name, time.perf_counter() - t0)
    doc = json.loads(manifest.read_text())
    print(manifest)
    for split in sorted(doc["checksums"]):
        print(f"{split} sha256 {doc['checksums'][split]}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "method": None, "k": 4, "data": None, "out": None, "seed": 0, "epochs": 200, "batch_size": 16,
    "lr": 1e-3, "optimizer": "adam", "loss": "p", "patience": 20, "cg_iters": 20,
}


def cmd_train(args) -> int:
    opts = _resolve(args, TRAIN_DEFAULTS)
    if opts["method"] not in VARIANTS:
        raise CliError(f"--method must be one of {', '.join(VARIANTS)}", EXIT_USAGE)
    if int(opts["k"]) < 1:
        raise CliError("--k must be >= 1", EXIT_USAGE)
    if opts["data"] is None:
        raise CliError("train needs --data", EXIT_USAGE)
    try:
        cfg = TrainConfig(
            epochs=int(opts["epochs"]), batch_size=int(opts["batch_size"]), lr=float(opts["lr"]),
            optimizer=opts["optimizer"], loss=opts["loss"], seed=int(opts["seed"]),
            patience=None if opts["patience"] in (None, 0) else int(opts["patience"]),
        )
        if int(opts["cg_iters"]) < 1:
            raise ValueError("--cg-iters must be >= 1")
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    ds = _open_dataset(opts["data"])
    tr, va = _split(ds, "train"), _split(ds, "val")
    model = UnrolledModel.from_setup(
        opts["method"], int(opts["k"]), ForwardSetup.from_spec(ds.spec),
        cg_iters=int(opts["cg_iters"]), fingerprint=ds.fingerprint,
    )
    out = output_path(opts["out"] or f"{ds.spec.name}-{opts['method']}-k{opts['k']}.json")
    opts = {**opts, "data": str(opts["data"]), "out": str(out)}
    t0 = time.perf_counter()
    try:
        train(model, tr, va, cfg, log=log.debug)
    except NUMERIC_ERRORS as exc:
        raise CliError(f"training aborted: {exc}", EXIT_NUMERIC) from exc
    log.info("trained %s K=%d in %.1fs", opts["method"], model.K, time.perf_counter() - t0)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out, cfg)
    except OSError as exc:
        raise CliError(f"cannot write checkpoint {out}: {exc}", EXIT_IO) from exc
    write_csv(out.with_suffix(".history.csv"), ("epoch", "train_loss", "val_loss"), model.history)
    _echo_config(out.with_suffix(".config.json"), opts)
    best = min(model.history, key=lambda h: (h["val_loss"], h["epoch"]))
    print(out)
    print(f"best epoch {best['epoch']} val_loss {_fmt(best['val_loss'])}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

EVAL_DEFAULTS = {
    "checkpoint": None, "method": None, "data": None, "out": "results", "split": "test", "name": None,
    "svg": False, "format": "csv", "threads": 1, "seed": 0, "max_iter": None,
    "chi": 0.01, "rho": None, "batch_size": 64,
}


def _classical_restorer(method, op, ds, opts):
    n = ds.spec.n
    if method == "ista":
        cfg = IstaConfig(chi=float(opts["chi"]), max_iter=int(opts["max_iter"] or 1000))

        def solve(z):
            return ista_solve(op, z, cfg).x
    elif method == "pd":
        rho = float(opts["rho"]) if opts["rho"] is not None else ds.spec.sigma_e * math.sqrt(n)
        cfg = PdConfig(rho=rho, max_iter=int(opts["max_iter"] or 5000))

        def solve(z):
            return primal_dual_solve(op, z, cfg).x
    else:
        cfg = HqConfig(max_iter=int(opts["max_iter"] or 200))

        def solve(z):
            return hq_solve(op, z, cfg).x

    def restore(Z):
        t0 = time.perf_counter()
        X = np.stack([solve(z) for z in Z])
        P = op.peaks(X)
        return P, time.perf_counter() - t0

    return restore, cfg


def cmd_eval(args) -> int:
    opts = _resolve(args, EVAL_DEFAULTS)
    if opts["data"] is None:
        raise CliError("eval needs --data", EXIT_USAGE)
    if (opts["checkpoint"] is None) == (opts["method"] is None):
        raise CliError("eval needs exactly one of --checkpoint or --method", EXIT_USAGE)
    if opts["format"] != "csv":
        raise CliError("only --format csv is supported", EXIT_USAGE)
    ds = _open_dataset(opts["data"])
    records = _split(ds, opts["split"])
    setup = ForwardSetup.from_spec(ds.spec)
    op = setup.build()
    if opts["checkpoint"] is not None:
        try:
            model = load_checkpoint(opts["checkpoint"])
        except OSError as exc:
            raise CliError(f"cannot read checkpoint: {exc}", EXIT_IO) from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"malformed checkpoint: {exc}", EXIT_USAGE) from exc
        if model.fingerprint != ds.fingerprint:
            raise CliError(
                f"checkpoint fingerprint {model.fingerprint} does not match dataset {ds.fingerprint}", EXIT_COMPAT
            )
        method = model.variant

        def restore(Z):
            _, p, secs = infer(model, Z)
            return p, secs
    else:
        method = opts["method"]
        if method in CLASSICAL:
            restore, _ = _classical_restorer(method, op, ds, opts)
        elif method in BASELINES:
            truth = {r.z.tobytes(): r.p for r in records}

            def restore(Z):
                if method == "zero":
                    return np.zeros_like(Z), 0.0
                return np.stack([truth[z.tobytes()] for z in Z]), 0.0
        else:
            raise CliError(f"--method must be one of {', '.join(CLASSICAL + BASELINES)}", EXIT_USAGE)
    name = opts["name"] or method
    try:
        ev = evaluate_dataset(
            restore, records, op.kernel, dataset=ds.spec.name, method=name, batch_size=int(opts["batch_size"])
        )
    except NUMERIC_ERRORS as exc:
        raise CliError(f"restoration failed: {exc}", EXIT_NUMERIC) from exc
    except ValueError as exc:
        raise CliError(f"evaluation failed: {exc}", EXIT_NUMERIC) from exc
    out = output_path(opts["out"])
    stem = f"{ds.spec.name}__{name}"
    write_csv(out / f"{stem}.metrics.csv", METRIC_COLUMNS, [ev.row])
    scatter = ev.scatter_rows()
    write_csv(out / f"{stem}.scatter.csv", SCATTER_COLUMNS, scatter)
    if opts["svg"]:
        _write_text(out / f"{stem}.scatter.svg", scatter_svg(scatter, f"{ds.spec.name} {name}"))
    _echo_config(out / f"{stem}.config.json", {**opts, "data": str(opts["data"]), "out": str(out)})
    print(out / f"{stem}.metrics.csv")
    print(f"mean time per record {np.mean(ev.times):.3e} s")
    return EXIT_OK


def scatter_svg(rows, title="", size=420) -> str:
    """Truth-vs-estimate height scatter, coloured by overlap class."""
    pad = 40
    hi = max([1e-12] + [max(r["true_h"], r["est_h"]) for r in rows]) * 1.05
    lo = min([0.0] + [r["est_h"] for r in rows])
    span = hi - lo
    inner = size - 2 * pad

    def sx(v):
        return pad + (v - lo) / span * inner

    def sy(v):
        return size - pad - (v - lo) / span * inner

    colors = {"isolated": "#1f77b4", "overlapping": "#d62728"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" y2="{sy(hi):.2f}" stroke="#888" stroke-dasharray="4 3"/>',
        f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<text x="{size / 2:.0f}" y="{pad - 14}" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{size / 2:.0f}" y="{size - 10}" text-anchor="middle" font-size="12">true height</text>',
        f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2:.0f})">estimated height</text>',
    ]
    for r in rows:
        parts.append(
            f'<circle cx="{sx(r["true_h"]):.2f}" cy="{sy(r["est_h"]):.2f}" r="2.2" '
            f'fill="{colors[r["overlap_class"]]}" fill-opacity="0.7"/>'
        )
    for i, (cls, col) in enumerate(colors.items()):
        y = pad + 16 + 16 * i
        parts.append(f'<circle cx="{pad + 12}" cy="{y - 4}" r="4" fill="{col}"/>')
        parts.append(f'<text x="{pad + 22}" y="{y}" font-size="11">{cls}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- report ------------------------------------------------------------------

def _read_rows(results: Path):
    rows = []
    for path in sorted(results.rglob("*.metrics.csv")):
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                if list(r) != list(METRIC_COLUMNS):
                    raise CliError(f"{path}: unexpected columns", EXIT_IO)
                rows.append({k: (r[k] if k in ("dataset", "method") else float(r[k])) for k in METRIC_COLUMNS})
    return rows


def best_methods(rows) -> dict:
    """``{(dataset, column): method}``; ties go to the lexicographically smallest method."""
    best = {}
    for col in (c for c in METRIC_COLUMNS if c.endswith("_mean")):
        sign = -1.0 if col in MAXIMIZED else 1.0
        for ds in sorted({r["dataset"] for r in rows}):
            cands = [r for r in rows if r["dataset"] == ds and not math.isnan(r[col])]
            if cands:
                best[(ds, col)] = min(cands, key=lambda r: (sign * r[col], r["method"]))["method"]
    return best


def render_report(rows) -> str:
    rows = sorted(rows, key=lambda r: (r["dataset"], r["method"]))
    best = best_methods(rows)
    means = [c for c in METRIC_COLUMNS if c.endswith("_mean")]
    head = ["dataset", "method"] + [c[: -len("_mean")] for c in means]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r["dataset"], r["method"]]
        for c in means:
            sd = r[c.replace("_mean", "_std")]
            cell = f"{r[c]:.4g} ({sd:.2g})"
            if best.get((r["dataset"], c)) == r["method"]:
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Bold marks the best mean per dataset (highest SNR/TSNR, lowest otherwise).")
    return "\n".join(lines) + "\n"


REPORT_DEFAULTS = {"results": None, "out": None, "format": "csv"}


def cmd_report(args) -> int:
    opts = _resolve(args, REPORT_DEFAULTS)
    results = Path(opts["results"])
    if not results.is_dir():
        raise CliError(f"no results directory {results}", EXIT_IO)
    rows = _read_rows(results)
    if not rows:
        raise CliError(f"no *.metrics.csv files under {results}", EXIT_IO)
    text = render_report(rows)
    out = output_path(opts["out"]) if opts["out"] else results / "summary.md"
    _write_text(out, text)
    write_csv(out.with_suffix(".csv"), METRIC_COLUMNS, sorted(rows, key=lambda r: (r["dataset"], r["method"])))
    sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chromunroll", description="Sparse chromatographic signal restoration experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--format", choices=["csv"])

    g = sub.add_parser("gen", help="generate a dataset")
    common(g)
    g.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    g.add_argument("--spec", help="JSON file with DatasetSpec fields")
    g.add_argument("--out")
    g.add_argument("--n", type=int)
    g.add_argument("--count-train", dest="count_train", type=int)
    g.add_argument("--count-val", dest="count_val", type=int)
    g.add_argument("--count-test", dest="count_test", type=int)
    g.add_argument("--sigma-g", dest="sigma_g", type=float)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an unrolled network")
    common(t)
    t.add_argument("--method")
    t.add_argument("--k", type=int)
    t.add_argument("--data")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=["adam", "sgd"])
    t.add_argument("--loss", choices=["p", "x"])
    t.add_argument("--patience", type=int, help="0 disables early stopping")
    t.add_argument("--cg-iters", dest="cg_iters", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint or a classical solver")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--method", help=f"one of {', '.join(CLASSICAL + BASELINES)}")
    e.add_argument("--data")
    e.add_argument("--out", help="results directory")
    e.add_argument("--split", choices=["train", "val", "test"])
    e.add_argument("--name", help="method label in the output")
    e.add_argument("--svg", action="store_true", default=None)
    e.add_argument("--max-iter", dest="max_iter", type=int)
    e.add_argument("--chi", type=float)
    e.add_argument("--rho", type=float)
    e.add_argument("--batch-size", dest="batch_size", type=int)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="merge metric CSVs into a summary table")
    r.add_argument("results")
    r.add_argument("--out")
    r.add_argument("--config")
    r.add_argument("--format", choices=["csv"])
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
