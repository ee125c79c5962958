"""Outer residual histories of nl-hybrid and Newton-Krylov-Schwarz for one
Reynolds number at reduced scale, plus VTK snapshots of every outer iterate.

    python scripts/convergence_history.py --re 1000 --out results/history
"""

import argparse
from pathlib import Path

from nlschwarz.decomposition import decompose
from nlschwarz.fem import build_problem, write_vtk
from nlschwarz.solvers import SolverConfig, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--re", type=float, default=1000.0)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--subdomains", type=int, default=4)
    ap.add_argument("--overlap", type=int, default=2)
    ap.add_argument("--coarse", default="rgdsw-a")
    ap.add_argument("--out", default="results/history")
    args = ap.parse_args()

    pb = build_problem(args.n, args.re)
    dec = decompose(pb.mesh, args.subdomains, args.overlap)
    for method in ("nl-hybrid", "nks"):
        out = Path(args.out) / method
        out.mkdir(parents=True, exist_ok=True)

        def dump(k, u, _cs, out=out):
            write_vtk(out / f"iter_{k}.vtk", pb, u, f"{method} outer iterate {k}")

        res = solve(pb, dec, SolverConfig(method=method, coarse_type=args.coarse), callback=dump)
        res.log.write_csv(out / "run.csv")
        print(f"{method}: {res.status}")
        for r in res.log.records:
            print(f"  {r.outer_iter:3d}  {r.rel_residual:.3e}")


if __name__ == "__main__":
    main()
