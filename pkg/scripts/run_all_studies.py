#!/usr/bin/env python3
"""Run every study config in scripts/configs and plot the decaying ones.

Usage: python scripts/run_all_studies.py [outdir]   (default: ./out)
"""

import sys
from pathlib import Path

from bernwf.cli import main as cli

PLOTTABLE = {
    "voronovskaya": "voronovskaya",
    "semigroup_rate": "semigroup-rate",
    "fv_voronovskaya": "fv-voronovskaya",
    "fv_semigroup": "fv-semigroup",
    "longrun": "longrun",
    "holder": "holder",
}


def kind_for(stem: str) -> str | None:
    for prefix, kind in PLOTTABLE.items():
        if stem.startswith(prefix):
            return kind
    return None


def run(outdir: Path) -> int:
    configs = sorted((Path(__file__).parent / "configs").glob("*.cfg"))
    failures = 0
    for cfg in configs:
        print(f"== {cfg.name}")
        rc = cli(["run", str(cfg), "--outdir", str(outdir)])
        if rc != 0:
            failures += 1
            continue
        stem = cfg.stem
        kind = kind_for(stem)
        csv = outdir / f"{stem}.csv"
        if kind and csv.exists():
            cli(["plot", str(csv), "--kind", kind])
    return failures


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")
    sys.exit(run(out))
