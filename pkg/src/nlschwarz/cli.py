"""Command line driver: single runs and sweeps of the cavity experiments.

Configuration comes from an optional flat ``key = value`` file, overridden
by command line flags.  Comma separated values for ``re``, ``method``,
``coarse``, ``recycle`` and ``projection`` expand into a sweep over the
cartesian product.

Exit codes: 0 all runs converged, 1 configuration or I/O error,
3 outer iteration limit reached, 4 inner divergence, 5 non-finite state.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .coarse import COARSE_TYPES
from .decomposition import decompose, overlap_swallows_domain
from .fem import build_problem, write_vtk
from .solvers import METHODS, SolverConfig, solve

log = logging.getLogger("nlschwarz")

EXIT_CODES = {"converged": 0, "config-error": 1, "max-outer": 3, "inner-divergence": 4,
              "diverged": 5}
SUMMARY_COLUMNS = ("method", "Re", "recycle", "projection", "coarse", "converged", "status",
                   "outer_it", "inner_min", "inner_max", "inner_avg", "coarse_it", "gmres_avg",
                   "final_rel_residual")
SWEEP_KEYS = ("re", "method", "coarse", "recycle", "projection")
DUMP_MODES = ("none", "each", "final")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    re: list[float] = field(default_factory=lambda: [500.0])
    method: list[str] = field(default_factory=lambda: ["nl-hybrid"])
    coarse: list[str] = field(default_factory=lambda: ["rgdsw-b"])
    recycle: list[bool] = field(default_factory=lambda: [True])
    projection: list[bool] = field(default_factory=lambda: [True])
    restricted: bool = True
    n: int = 128
    subdomains: int = 16
    overlap: int = 3
    outer_tol: float = 1e-6
    inner_reduction: float = 1e-3
    gmres_tol: float = 1e-8
    max_outer: int = 20
    max_inner: int = 20
    min_step: float = 0.01
    workers: int = 1
    out: str = "results"
    dump_fields: str = "none"

    def validate(self) -> None:
        """Checks everything that can be checked without building the mesh."""
        n, S, m = self.n, self.subdomains, self.overlap
        if n < 1 or S < 1:
            raise ConfigError("n and subdomains must be positive")
        if n % S:
            raise ConfigError(f"n={n} is not divisible by subdomains={S}")
        if S > 1:
            H = n // S
            if H < 2:
                raise ConfigError(f"subdomain width H/h={H} must be at least 2")
            if m < 1:
                raise ConfigError("overlap must be at least 1 for more than one subdomain")
            if overlap_swallows_domain(n, S, m):
                raise ConfigError(f"overlap={m} is too large for n={n}, subdomains={S}")
        for Re in self.re:
            if not Re > 0:
                raise ConfigError(f"re must be positive, got {Re}")
        for meth in self.method:
            if meth not in METHODS:
                raise ConfigError(f"method must be one of {METHODS}, got {meth!r}")
        for c in self.coarse:
            if c not in COARSE_TYPES + ("none",):
                raise ConfigError(f"coarse must be one of {COARSE_TYPES + ('none',)}, got {c!r}")
        if self.dump_fields not in DUMP_MODES:
            raise ConfigError(f"dump_fields must be one of {DUMP_MODES}")
        try:
            list(self.runs())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def runs(self):
        """(Re, SolverConfig) for every point of the sweep, in a fixed order."""
        for Re, meth, c, rec, proj in itertools.product(self.re, self.method, self.coarse,
                                                        self.recycle, self.projection):
            yield Re, SolverConfig(
                method=meth, restricted=self.restricted, pressure_projection=proj,
                coarse_type=c, recycle_basis=rec, outer_tol=self.outer_tol,
                inner_reduction=self.inner_reduction, gmres_tol=self.gmres_tol,
                max_outer=self.max_outer, max_inner=self.max_inner, min_step=self.min_step,
                workers=self.workers)


# ---------------------------------------------------------------------------
# parsing

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_SCALAR_PARSERS = {"int": int, "float": float, "str": str, "bool": _bool}
_LIST_PARSERS = {"re": float, "method": str, "coarse": str, "recycle": _bool, "projection": _bool}
_ALIASES = {"sqrt_n": "subdomains", "overlap_m": "overlap", "coarse_type": "coarse",
            "dump-fields": "dump_fields"}


def _convert(key: str, raw: str):
    if key in _LIST_PARSERS:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            raise ConfigError(f"empty value for {key!r}")
        try:
            return [_LIST_PARSERS[key](s) for s in items]
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    try:
        return _SCALAR_PARSERS[_FIELD_TYPES[key]](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def _canonical(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    k = _ALIASES.get(k, k)
    if k not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key.strip()!r}")
    return k


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[_canonical(key)] = value.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="nlschwarz",
        description="Nonlinear two-level Schwarz solvers for the lid-driven cavity.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--re", help="Reynolds number(s), comma separated")
    p.add_argument("--method", help="nl-hybrid, nl-additive or nks (comma separated)")
    p.add_argument("--coarse", help="gdsw, rgdsw-a, rgdsw-b or none (comma separated)")
    p.add_argument("--recycle", help="on/off: reuse the coarse basis of the first iterate")
    p.add_argument("--projection", help="on/off: local pressure projection")
    p.add_argument("--restricted", help="on/off: restricted prolongation")
    p.add_argument("--n", help="elements per side")
    p.add_argument("--subdomains", help="subdomains per side")
    p.add_argument("--overlap", help="overlap in element layers")
    p.add_argument("--max-outer", dest="max_outer")
    p.add_argument("--max-inner", dest="max_inner")
    p.add_argument("--workers", help="threads for the local corrections")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dump-fields", dest="dump_fields", choices=DUMP_MODES)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(argv=None) -> tuple[ExperimentConfig, argparse.Namespace]:
    args = build_parser().parse_args(argv)
    raw = read_config_file(args.config) if args.config else {}
    for k, v in vars(args).items():
        if k in ("config", "verbose") or v is None:
            continue
        raw[_canonical(k)] = v
    cfg = ExperimentConfig(**{k: _convert(k, v) for k, v in raw.items()})
    cfg.validate()
    return cfg, args


# ---------------------------------------------------------------------------
# running

def _tag(Re: float, sc: SolverConfig) -> str:
    return (f"re{Re:g}_{sc.method}_{sc.coarse_type}_rec-{'on' if sc.recycle_basis else 'off'}"
            f"_proj-{'on' if sc.pressure_projection else 'off'}")


def summary_row(Re: float, sc: SolverConfig, result) -> dict:
    lg = result.log
    inner = lg.inner_totals()
    coarse = lg.coarse_total()
    gm = lg.gmres_average()
    return {
        "method": sc.method,
        "Re": f"{Re:g}",
        "recycle": "on" if sc.recycle_basis else "off",
        "projection": "on" if sc.pressure_projection else "off",
        "coarse": sc.coarse_type,
        "converged": int(result.converged),
        "status": result.status,
        "outer_it": lg.outer_iterations,
        "inner_min": "" if inner is None else int(inner.min()),
        "inner_max": "" if inner is None else int(inner.max()),
        "inner_avg": "" if inner is None else f"{inner.mean():.2f}",
        "coarse_it": "" if coarse is None else coarse,
        "gmres_avg": "" if gm is None else f"{gm:.2f}",
        "final_rel_residual": f"{lg.final_rel_residual:.6e}",
    }


def append_summary(path: Path, row: dict) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        if new:
            wr.writeheader()
        wr.writerow(row)


def run_single(cfg: ExperimentConfig, Re: float, sc: SolverConfig, run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg.n, Re)
    dec = decompose(problem.mesh, cfg.subdomains, cfg.overlap)

    callback = None
    if cfg.dump_fields == "each":
        def callback(k, u, _cs):
            write_vtk(run_dir / f"iter_{k}.vtk", problem, u, f"outer iterate {k}")

    result = solve(problem, dec, sc, callback=callback)
    result.log.write_csv(run_dir / "run.csv")
    if cfg.dump_fields == "final":
        k = result.log.outer_iterations
        write_vtk(run_dir / f"iter_{k}.vtk", problem, result.u, f"outer iterate {k}")
    return result


def run_experiment(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = list(cfg.runs())
    code = 0
    for Re, sc in runs:
        run_dir = out if len(runs) == 1 else out / _tag(Re, sc)
        log.info("running %s", _tag(Re, sc))
        result = run_single(cfg, Re, sc, run_dir)
        row = summary_row(Re, sc, result)
        append_summary(out / "summary.csv", row)
        log.info("%s: %s after %d outer iterations (rel. residual %s)", _tag(Re, sc),
                 result.status, row["outer_it"], row["final_rel_residual"])
        code = max(code, EXIT_CODES[result.status])
    return code


def main(argv=None) -> int:
    try:
        cfg, args = parse_config(argv)
    except (ConfigError, OSError) as exc:
        print(f"nlschwarz: error: {exc}", file=sys.stderr)
        return EXIT_CODES["config-error"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_experiment(cfg)
    except OSError as exc:
        print(f"nlschwarz: I/O error: {exc}", file=sys.stderr)
        return EXIT_CODES["config-error"]


if __name__ == "__main__":
    sys.exit(main())
