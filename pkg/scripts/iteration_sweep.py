"""Iteration-count sweep: methods x Reynolds numbers x coarse types, with the
coarse basis recycled and the local pressure projections switched on.

    python scripts/iteration_sweep.py --n 32 --subdomains 4 --overlap 2 --re 500,1000,1500
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from nlschwarz.cli import EXIT_CODES, parse_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="32")
    ap.add_argument("--subdomains", default="4")
    ap.add_argument("--overlap", default="2")
    ap.add_argument("--re", default="500,1000,1500,2000,2500")
    ap.add_argument("--method", default="nl-hybrid,nks")
    ap.add_argument("--coarse", default="rgdsw-a,rgdsw-b")
    ap.add_argument("--out", default="results/sweep")
    ap.add_argument("--workers", default="1")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    summary = out / "summary.csv"
    if summary.exists():
        summary.unlink()
    cfg, _ = parse_config(["--n", args.n, "--subdomains", args.subdomains, "--overlap", args.overlap,
                           "--re", args.re, "--method", args.method, "--coarse", args.coarse,
                           "--recycle", "on", "--projection", "on", "--workers", args.workers,
                           "--out", str(out)])
    code = run_experiment(cfg)

    cols = ("method", "coarse", "Re", "status", "outer_it", "inner_min", "inner_max", "inner_avg",
            "coarse_it", "gmres_avg")
    with open(summary) as fh:
        rows = list(csv.DictReader(fh))
    print(" ".join(f"{c:>16s}" for c in cols))
    for r in rows:
        print(" ".join(f"{r[c]:>16s}" for c in cols))
    return 0 if code in (EXIT_CODES["converged"], EXIT_CODES["max-outer"],
                         EXIT_CODES["inner-divergence"]) else code


if __name__ == "__main__":
    sys.exit(main())
