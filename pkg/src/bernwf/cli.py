"""Command-line entry point: run / plot / validate batch experiments.

    bernwf run <config> [--outdir DIR]
    bernwf plot <csv> --kind <kind> [-o OUT.svg]
    bernwf validate <config>

Errors print a machine-readable JSON record to stderr and exit nonzero
(2 for config problems, 1 for runtime failures).  The default output
directory comes from $BERNWF_OUTDIR, falling back to the working directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .experiments import (ConfigError, ExperimentConfig, resolve_outdir,
                          run_experiment, validate)


def _fail(code: int, kind: str, message: str, field: str | None = None) -> int:
    record = {"error": kind, "message": message}
    if field:
        record["field"] = field
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(args.config)
        path = run_experiment(cfg, resolve_outdir(args.outdir))
    except ConfigError as exc:
        return _fail(2, "config", exc.message, exc.field_name)
    except FileNotFoundError as exc:
        return _fail(2, "config", str(exc))
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine record
        return _fail(1, "runtime", f"{type(exc).__name__}: {exc}")
    print(path)
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(args.config)
        validate(cfg)
    except ConfigError as exc:
        return _fail(2, "config", exc.message, exc.field_name)
    except FileNotFoundError as exc:
        return _fail(2, "config", str(exc))
    print("ok")
    return 0


_PLOT_COLUMNS = {
    "voronovskaya": ("n", "residual"),
    "fv-voronovskaya": ("n", "residual"),
    "semigroup-rate": ("n", "error"),
    "fv-semigroup": ("n", "error"),
    "longrun": ("n", "deviation"),
    "holder": ("n", "q99"),
    "moments": ("n", "ratio"),
}


def plot_csv(csv_path: Path, kind: str, out_path: Path) -> None:
    """Render a log-log decay plot from a study CSV (pure file transform)."""
    if kind not in _PLOT_COLUMNS:
        raise ValueError(f"no plot recipe for kind {kind!r}")
    xcol, ycol = _PLOT_COLUMNS[kind]
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("CSV has no data rows")
    if xcol not in rows[0] or ycol not in rows[0]:
        raise ValueError(f"CSV lacks the {xcol!r}/{ycol!r} columns of {kind!r}")
    xs = [float(r[xcol]) for r in rows]
    ys = [float(r[ycol]) for r in rows]

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(xs, ys, "o-", label=ycol)
    positive = [(x, y) for x, y in zip(xs, ys) if y > 0]
    if positive:
        x0, y0 = positive[0]
        ref = [y0 * (x0 / x) ** 0.5 for x in xs]
        ax.loglog(xs, ref, "--", color="gray", label="slope -1/2")
    if kind == "fv-voronovskaya" and "d_n" in rows[0]:
        for r in rows:
            ax.annotate(f"d={r['d_n']}", (float(r[xcol]), float(r[ycol])),
                        textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("n")
    ax.set_ylabel(ycol)
    ax.set_title(kind)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _cmd_plot(args) -> int:
    csv_path = Path(args.csv)
    out_path = Path(args.output) if args.output else csv_path.with_suffix(".svg")
    try:
        plot_csv(csv_path, args.kind, out_path)
    except FileNotFoundError as exc:
        return _fail(2, "plot", str(exc))
    except ValueError as exc:
        return _fail(2, "plot", str(exc))
    print(out_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bernwf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--outdir", default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_plot = sub.add_parser("plot", help="plot a study CSV as SVG")
    p_plot.add_argument("csv")
    p_plot.add_argument("--kind", required=True, choices=sorted(_PLOT_COLUMNS))
    p_plot.add_argument("-o", "--output", default=None)
    p_plot.set_defaults(fn=_cmd_plot)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
