"""Nonlinear two-level Schwarz methods and the Newton-Krylov-Schwarz baseline.

The nonlinear methods apply Newton's method to the preconditioned residual

    additive:  F_a(u) = sum_i Pi_i T_i(u) + P0 T0(u)
    hybrid:    F_h(u) = sum_i Pi_i T_i(u - P0 T0(u)) + P0 T0(u)

where the corrections solve R_i F(base - P_i T_i) = 0 and
R0 F(u - P0 T0) = 0, and Pi_i is P_i, the restricted prolongation, or the
restricted prolongation after the local pressure projection.  Its Jacobian
is applied matrix-free through the implicit-function derivatives
DT_i = (R_i DF(w_i) P_i)^{-1} R_i DF(w_i) at the converged inner points w_i.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .coarse import CoarseBasis, CoarseSpace
from .decomposition import Decomposition, Subdomain, build_interface
from .fem import CavityProblem, NonFiniteStateError
from .sparse_core import GmresReport, LUFactorization, SingularMatrixError, gmres, lu_factorize

log = logging.getLogger(__name__)

METHODS = ("nl-hybrid", "nl-additive", "nks")
SUFFICIENT_DECREASE = 1e-4


class InnerDivergence(RuntimeError):
    """An inner (local or coarse) Newton loop failed to reach its reduction."""

    def __init__(self, where: str, iterations: int, ratio: float):
        super().__init__(f"{where} inner loop did not converge in {iterations} "
                         f"iterations (residual ratio {ratio:.3e})")
        self.where = where
        self.iterations = iterations
        self.ratio = ratio


@dataclass
class SolverConfig:
    method: str = "nl-hybrid"
    restricted: bool = True
    pressure_projection: bool = True
    coarse_type: str = "rgdsw-b"  # "gdsw", "rgdsw-a", "rgdsw-b" or "none"
    recycle_basis: bool = True
    outer_tol: float = 1e-6
    inner_reduction: float = 1e-3
    gmres_tol: float = 1e-8
    max_outer: int = 20
    max_inner: int = 20
    min_step: float = 0.01
    inner_abs_floor: float = 1e-14  # relative to ||F(u0)||
    gmres_max_iter: int = 500
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("outer_tol", "inner_reduction", "gmres_tol", "inner_abs_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.min_step <= 1:
            raise ValueError("min_step must lie in (0, 1]")
        if self.max_outer < 0 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")


# ---------------------------------------------------------------------------
# small building blocks

def backtracking_line_search(merit: Callable[[np.ndarray], float], u: np.ndarray,
                             direction: np.ndarray, min_step: float = 0.01,
                             f0: float | None = None):
    """Step-halving search along u - alpha*direction.

    Accepts the first alpha in 1, 1/2, 1/4, ... with
    merit(u - alpha d) <= (1 - 1e-4 alpha) merit(u).  Falls back to
    ``min_step`` when no such alpha >= min_step exists.

    Returns ``(alpha, new_point, merit_at_new_point)``.
    """
    if f0 is None:
        f0 = merit(u)
    if not np.any(direction):
        return 1.0, u.copy(), f0
    alpha = 1.0
    while alpha >= min_step:
        trial = u - alpha * direction
        try:
            f = merit(trial)
        except NonFiniteStateError:
            f = np.inf
        if f <= (1.0 - SUFFICIENT_DECREASE * alpha) * f0:
            return alpha, trial, f
        alpha *= 0.5
    trial = u - min_step * direction
    return min_step, trial, merit(trial)


def apply_pressure_projection(x: np.ndarray, pressure_idx: np.ndarray) -> np.ndarray:
    """Remove the mean of ``x[pressure_idx]``; other entries are untouched."""
    y = np.array(x, dtype=float, copy=True)
    if pressure_idx.size:
        y[pressure_idx] -= y[pressure_idx].mean()
    return y


class LocalProblem:
    """Restriction of the global problem to one overlapping subdomain.

    Subdomains without a constrained pressure dof have a constant local
    pressure kernel; their first local pressure dof is pinned inside the
    local solves (its residual row is dropped and its correction is zero).
    """

    def __init__(self, problem: CavityProblem, sub: Subdomain):
        self.problem = problem
        self.sub = sub
        self.index = sub.index
        dofs = sub.dofs
        p_local = sub.pressure_local
        has_pin = problem.constrained[dofs[p_local]].any()
        self.pin = None if has_pin else int(p_local[0])
        self.projection_idx = p_local[~problem.constrained[dofs[p_local]]]

    @property
    def size(self) -> int:
        return self.sub.size

    def residual(self, w: np.ndarray) -> np.ndarray:
        r = self.problem.residual(w, self.sub.assembly_elements)[self.sub.dofs]
        if self.pin is not None:
            r[self.pin] = 0.0
        return r

    def jacobian_rows(self, w: np.ndarray) -> sp.csr_matrix:
        """R_i DF(w) as an (n_i x n_touched) matrix (pinned row zeroed)."""
        sub = self.sub
        rows, cols, vals = self.problem.jacobian_triplets(w, sub.assembly_elements)
        lr = np.searchsorted(sub.dofs, rows)
        lr = np.minimum(lr, sub.size - 1)
        keep = sub.dofs[lr] == rows
        if self.pin is not None:
            keep &= lr != self.pin
        lc = np.searchsorted(sub.touched, cols[keep])
        M = sp.csr_matrix((vals[keep], (lr[keep], lc)), shape=(sub.size, sub.touched.size))
        M.sum_duplicates()
        return M

    def local_matrix(self, M: sp.csr_matrix) -> sp.csr_matrix:
        J = M[:, self.sub.local_in_touched].tocsr()
        if self.pin is not None:
            J = J.tolil()
            J[:, self.pin] = 0.0
            J[self.pin, self.pin] = 1.0
            J = J.tocsr()
        return J

    def restrict_global(self, K: sp.csr_matrix) -> sp.csr_matrix:
        """Local block R_i K P_i of an assembled global matrix, pin applied."""
        d = self.sub.dofs
        J = K[d][:, d].tocsr()
        if self.pin is not None:
            J = J.tolil()
            J[self.pin, :] = 0.0
            J[:, self.pin] = 0.0
            J[self.pin, self.pin] = 1.0
            J = J.tocsr()
        return J

    def factorize(self, J: sp.spmatrix) -> LUFactorization:
        try:
            return lu_factorize(J)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"local Jacobian of subdomain {self.index} is singular: {exc}",
                                      row=exc.row) from exc


@dataclass(eq=False)
class LocalCorrection:
    t: np.ndarray
    iterations: int
    w: np.ndarray
    M: sp.csr_matrix  # R_i DF(w) on the touched dofs
    lu: LUFactorization  # of R_i DF(w) P_i
    history: list[np.ndarray] | None = None


def local_correction(lp: LocalProblem, base: np.ndarray, cfg: SolverConfig,
                     floor: float = 0.0, record: bool = False) -> LocalCorrection:
    """Solve R_i F(base - P_i t) = 0 for t by damped Newton from t = 0."""
    dofs = lp.sub.dofs

    def point(t):
        w = base.copy()
        w[dofs] -= t
        return w

    t = np.zeros(lp.size)
    g = lp.residual(base)
    g0 = np.linalg.norm(g)
    gn = g0
    history = [base.copy()] if record else None
    its = 0
    if g0 > floor:
        while gn > cfg.inner_reduction * g0:
            if its == cfg.max_inner:
                raise InnerDivergence(f"subdomain {lp.index}", its, gn / g0)
            J = lp.local_matrix(lp.jacobian_rows(point(t)))
            d = -lp.factorize(J).solve(g)

            def merit(tt):
                return np.linalg.norm(lp.residual(point(tt)))

            _, t, gn = backtracking_line_search(merit, t, d, cfg.min_step, f0=gn)
            if not np.isfinite(gn):
                raise InnerDivergence(f"subdomain {lp.index}", its + 1, np.inf)
            g = lp.residual(point(t))
            its += 1
            if record:
                history.append(point(t))
    w = point(t)
    M = lp.jacobian_rows(w)
    lu = lp.factorize(lp.local_matrix(M))
    return LocalCorrection(t, its, w, M, lu, history)


@dataclass(eq=False)
class CoarseCorrection:
    t: np.ndarray
    iterations: int
    w: np.ndarray
    K: sp.csr_matrix  # DF(w)
    lu: tuple  # dense LU of R0 DF(w) P0


def coarse_correction(problem: CavityProblem, basis: CoarseBasis, u: np.ndarray,
                      cfg: SolverConfig, floor: float = 0.0) -> CoarseCorrection:
    """Solve R0 F(u - P0 t) = 0 by damped Newton; the coarse Jacobian is dense."""
    P = basis.phi_tilde
    R = P.T.tocsr()

    def g_of(t):
        return R @ problem.residual(u - P @ t)

    t = np.zeros(P.shape[1])
    g = g_of(t)
    g0 = np.linalg.norm(g)
    gn = g0
    its = 0
    if g0 > floor:
        while gn > cfg.inner_reduction * g0:
            if its == cfg.max_inner:
                raise InnerDivergence("coarse", its, gn / g0)
            K = problem.jacobian(u - P @ t)
            A0 = (R @ (K @ P)).toarray()
            d = -scipy.linalg.lu_solve(_dense_lu(A0), g)

            def merit(tt):
                return np.linalg.norm(g_of(tt))

            _, t, gn = backtracking_line_search(merit, t, d, cfg.min_step, f0=gn)
            if not np.isfinite(gn):
                raise InnerDivergence("coarse", its + 1, np.inf)
            g = g_of(t)
            its += 1
    w = u - P @ t
    K = problem.jacobian(w)
    return CoarseCorrection(t, its, w, K, _dense_lu((R @ (K @ P)).toarray()))


def _dense_lu(A: np.ndarray):
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    if np.any(np.diag(lu) == 0.0):
        raise SingularMatrixError("coarse Jacobian is singular",
                                  row=int(np.flatnonzero(np.diag(lu) == 0.0)[0]))
    return lu, piv


# ---------------------------------------------------------------------------
# nonlinear Schwarz

@dataclass(eq=False)
class CorrectionSet:
    u: np.ndarray
    base: np.ndarray  # u, or u - P0 T0 for the hybrid coupling
    locals: list[LocalCorrection]
    coarse: CoarseCorrection | None
    basis: CoarseBasis | None

    @property
    def inner_iterations(self) -> list[int]:
        return [lc.iterations for lc in self.locals]

    @property
    def coarse_iterations(self) -> int:
        return 0 if self.coarse is None else self.coarse.iterations


class NonlinearSchwarz:
    """Additive or hybrid two-level nonlinear Schwarz operator."""

    def __init__(self, problem: CavityProblem, dec: Decomposition, cfg: SolverConfig):
        if cfg.method not in ("nl-hybrid", "nl-additive"):
            raise ValueError(f"{cfg.method} is not a nonlinear Schwarz method")
        self.problem = problem
        self.dec = dec
        self.cfg = cfg
        self.locals = [LocalProblem(problem, s) for s in dec]
        self.coarse_space = make_coarse_space(problem, dec, cfg)
        self.scale: float | None = None
        self.record_history = False

    @property
    def hybrid(self) -> bool:
        return self.cfg.method == "nl-hybrid"

    def _map(self, fn, items):
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _prolong(self, lp: LocalProblem, x: np.ndarray, out: np.ndarray) -> None:
        if self.cfg.pressure_projection:
            x = apply_pressure_projection(x, lp.projection_idx)
        sub = lp.sub
        if self.cfg.restricted:
            out[sub.dofs[sub.owned]] += x[sub.owned]
        else:
            out[sub.dofs] += x

    def evaluate(self, u: np.ndarray, basis: CoarseBasis | None = None,
                 floor: float | None = None) -> tuple[np.ndarray, CorrectionSet]:
        """Preconditioned residual F_X(u) together with its corrections."""
        u = np.asarray(u, dtype=float)
        if floor is None:
            if self.scale is None:
                self.scale = float(np.linalg.norm(self.problem.residual(u)))
            floor = self.cfg.inner_abs_floor * self.scale
        if self.coarse_space is not None and basis is None:
            basis = self.coarse_space.basis(u)
        cc = None
        base = u
        out = np.zeros_like(u)
        if basis is not None:
            cc = coarse_correction(self.problem, basis, u, self.cfg, floor)
            out += basis.phi_tilde @ cc.t
            if self.hybrid:
                base = cc.w
        corrections = self._map(
            lambda lp: local_correction(lp, base, self.cfg, floor, self.record_history),
            self.locals)
        for lp, lc in zip(self.locals, corrections):
            self._prolong(lp, lc.t, out)
        return out, CorrectionSet(u, base, corrections, cc, basis)

    def apply_jacobian(self, cs: CorrectionSet, v: np.ndarray) -> np.ndarray:
        """Exact action of DF_X(u) on v."""
        out = np.zeros_like(v)
        z = v
        if cs.coarse is not None:
            P = cs.basis.phi_tilde
            c = scipy.linalg.lu_solve(cs.coarse.lu, P.T @ (cs.coarse.K @ v))
            Pc = P @ c
            out += Pc
            if self.hybrid:
                z = v - Pc
        parts = self._map(
            lambda pair: pair[1].lu.solve(pair[1].M @ z[pair[0].sub.touched]),
            list(zip(self.locals, cs.locals)))
        for lp, x in zip(self.locals, parts):
            self._prolong(lp, x, out)
        return out


def make_coarse_space(problem, dec, cfg) -> CoarseSpace | None:
    if cfg.coarse_type == "none" or dec.sqrt_N == 1:
        return None
    return CoarseSpace(problem, build_interface(dec, problem), cfg.coarse_type, cfg.recycle_basis)


def evaluate_preconditioned_residual(schwarz: NonlinearSchwarz, u: np.ndarray, basis=None):
    return schwarz.evaluate(u, basis)


def apply_preconditioned_jacobian(schwarz: NonlinearSchwarz, cs: CorrectionSet, v: np.ndarray):
    return schwarz.apply_jacobian(cs, v)


# ---------------------------------------------------------------------------
# iteration log

LOG_COLUMNS = ("outer_iter", "abs_residual", "rel_residual", "inner_min", "inner_max",
               "inner_avg", "coarse_iters", "gmres_iters", "step_length")


@dataclass
class IterationRecord:
    outer_iter: int
    abs_residual: float
    rel_residual: float
    inner: list[int] | None = None
    coarse_iters: int | None = None
    gmres_iters: int | None = None
    step_length: float | None = None

    def row(self) -> dict:
        inner = self.inner
        return {
            "outer_iter": self.outer_iter,
            "abs_residual": f"{self.abs_residual:.12e}",
            "rel_residual": f"{self.rel_residual:.12e}",
            "inner_min": "" if not inner else min(inner),
            "inner_max": "" if not inner else max(inner),
            "inner_avg": "" if not inner else f"{np.mean(inner):.4f}",
            "coarse_iters": "" if self.coarse_iters is None else self.coarse_iters,
            "gmres_iters": "" if self.gmres_iters is None else self.gmres_iters,
            "step_length": "" if self.step_length is None else f"{self.step_length:.6g}",
        }


@dataclass
class IterationLog:
    records: list[IterationRecord] = field(default_factory=list)

    def append(self, rec: IterationRecord) -> None:
        self.records.append(rec)

    @property
    def outer_iterations(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def final_rel_residual(self) -> float:
        return self.records[-1].rel_residual

    def inner_totals(self) -> np.ndarray | None:
        """Inner iterations per subdomain, summed over the outer iterations."""
        rows = [r.inner for r in self.records if r.inner]
        return np.sum(rows, axis=0) if rows else None

    def coarse_total(self) -> int | None:
        vals = [r.coarse_iters for r in self.records if r.coarse_iters is not None]
        return int(sum(vals)) if vals else None

    def gmres_average(self) -> float | None:
        vals = [r.gmres_iters for r in self.records if r.gmres_iters is not None]
        return float(np.mean(vals)) if vals else None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
            wr.writeheader()
            for r in self.records:
                wr.writerow(r.row())


@dataclass
class SolveResult:
    u: np.ndarray
    log: IterationLog
    status: str  # converged | max-outer | inner-divergence | diverged
    message: str = ""
    iterates: list[np.ndarray] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# ---------------------------------------------------------------------------
# outer solvers

def outer_newton(problem: CavityProblem, dec: Decomposition, cfg: SolverConfig,
                 u0: np.ndarray | None = None, callback=None,
                 schwarz: NonlinearSchwarz | None = None) -> SolveResult:
    """Newton's method on the nonlinearly preconditioned residual.

    Convergence is measured on the original residual F.  No line search is
    applied to the outer update.
    """
    schwarz = schwarz or NonlinearSchwarz(problem, dec, cfg)
    u = problem.initial_guess() if u0 is None else np.array(u0, dtype=float)
    r0 = float(np.linalg.norm(problem.residual(u)))
    schwarz.scale = r0
    floor = cfg.inner_abs_floor * r0
    log_ = IterationLog([IterationRecord(0, r0, 1.0 if r0 > 0 else 0.0)])
    iterates = [u.copy()]
    if callback:
        callback(0, u, None)
    rel = log_.records[0].rel_residual
    for k in range(1, cfg.max_outer + 1):
        if rel <= cfg.outer_tol:
            break
        try:
            Fx, cs = schwarz.evaluate(u, floor=floor)
        except (InnerDivergence, NonFiniteStateError) as exc:
            log.info("outer iteration %d aborted: %s", k, exc)
            return SolveResult(u, log_, "inner-divergence", str(exc), iterates)
        delta, rep = gmres(lambda v: schwarz.apply_jacobian(cs, v), Fx,
                           cfg.gmres_tol, cfg.gmres_max_iter)
        if not rep.converged:
            log.warning("GMRES stopped at relative residual %.2e after %d iterations",
                        rep.rel_residual, rep.iterations)
        u = u - delta
        try:
            rn = float(np.linalg.norm(problem.residual(u)))
        except NonFiniteStateError as exc:
            return SolveResult(u, log_, "diverged", str(exc), iterates)
        rel = rn / r0
        log_.append(IterationRecord(k, rn, rel, cs.inner_iterations,
                                    cs.coarse_iterations if cs.coarse else None,
                                    rep.iterations, 1.0))
        iterates.append(u.copy())
        log.info("outer %d: rel. residual %.3e, GMRES %d", k, rel, rep.iterations)
        if callback:
            callback(k, u, cs)
    status = "converged" if rel <= cfg.outer_tol else "max-outer"
    return SolveResult(u, log_, status, "", iterates)


class TwoLevelSchwarzPreconditioner:
    """Linear hybrid two-level Schwarz preconditioner

        M^{-1} r = P0 A0^{-1} R0 r + sum_i Pi_i A_i^{-1} R_i (r - K P0 A0^{-1} R0 r)

    with A_i = R_i K P_i and A0 = R0 K P0.
    """

    def __init__(self, K: sp.csr_matrix, locals_: list[LocalProblem], basis: CoarseBasis | None,
                 cfg: SolverConfig):
        self.K = K
        self.cfg = cfg
        self.locals = locals_
        self.factors = [lp.factorize(lp.restrict_global(K)) for lp in locals_]
        self.basis = basis
        if basis is not None:
            P = basis.phi_tilde
            self.A0 = _dense_lu((P.T @ (K @ P)).toarray())

    def __call__(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        rr = r
        if self.basis is not None:
            P = self.basis.phi_tilde
            c = P @ scipy.linalg.lu_solve(self.A0, P.T @ r)
            out += c
            rr = r - self.K @ c
        for lp, lu in zip(self.locals, self.factors):
            x = lu.solve(rr[lp.sub.dofs])
            if self.cfg.pressure_projection:
                x = apply_pressure_projection(x, lp.projection_idx)
            sub = lp.sub
            if self.cfg.restricted:
                out[sub.dofs[sub.owned]] += x[sub.owned]
            else:
                out[sub.dofs] += x
        return out


def newton_krylov_schwarz(problem: CavityProblem, dec: Decomposition, cfg: SolverConfig,
                          u0: np.ndarray | None = None, callback=None) -> SolveResult:
    """Backtracking Newton on F with right-preconditioned GMRES."""
    locals_ = [LocalProblem(problem, s) for s in dec]
    space = make_coarse_space(problem, dec, cfg)
    u = problem.initial_guess() if u0 is None else np.array(u0, dtype=float)
    Fu = problem.residual(u)
    r0 = float(np.linalg.norm(Fu))
    rn = r0
    log_ = IterationLog([IterationRecord(0, r0, 1.0 if r0 > 0 else 0.0)])
    iterates = [u.copy()]
    if callback:
        callback(0, u, None)

    def merit(x):
        return float(np.linalg.norm(problem.residual(x)))

    for k in range(1, cfg.max_outer + 1):
        if rn <= cfg.outer_tol * r0:
            break
        K = problem.jacobian(u)
        basis = space.basis(u, K) if space is not None else None
        M = TwoLevelSchwarzPreconditioner(K, locals_, basis, cfg)
        y, rep = gmres(lambda v: K @ M(v), Fu, cfg.gmres_tol, cfg.gmres_max_iter)
        d = M(y)
        alpha, u, rn = backtracking_line_search(merit, u, d, cfg.min_step, f0=rn)
        if not np.isfinite(rn):
            return SolveResult(u, log_, "diverged", "non-finite residual", iterates)
        Fu = problem.residual(u)
        log_.append(IterationRecord(k, rn, rn / r0, None, None, rep.iterations, alpha))
        iterates.append(u.copy())
        log.info("NKS %d: rel. residual %.3e, GMRES %d, step %.3g", k, rn / r0, rep.iterations, alpha)
        if callback:
            callback(k, u, None)
    status = "converged" if rn <= cfg.outer_tol * r0 else "max-outer"
    return SolveResult(u, log_, status, "", iterates)


def plain_newton(problem: CavityProblem, u0: np.ndarray | None = None, tol: float = 1e-6,
                 max_iter: int = 50, min_step: float = 0.01) -> SolveResult:
    """Backtracking Newton with direct solves of the global Jacobian."""
    u = problem.initial_guess() if u0 is None else np.array(u0, dtype=float)
    Fu = problem.residual(u)
    r0 = float(np.linalg.norm(Fu))
    rn = r0
    log_ = IterationLog([IterationRecord(0, r0, 1.0)])
    iterates = [u.copy()]

    def merit(x):
        return float(np.linalg.norm(problem.residual(x)))

    for k in range(1, max_iter + 1):
        if rn <= tol * r0:
            break
        d = lu_factorize(problem.jacobian(u)).solve(Fu)
        alpha, u, rn = backtracking_line_search(merit, u, d, min_step, f0=rn)
        Fu = problem.residual(u)
        log_.append(IterationRecord(k, rn, rn / r0, step_length=alpha))
        iterates.append(u.copy())
    status = "converged" if rn <= tol * r0 else "max-outer"
    return SolveResult(u, log_, status, "", iterates)


def solve(problem: CavityProblem, dec: Decomposition, cfg: SolverConfig, **kwargs) -> SolveResult:
    if cfg.method == "nks":
        return newton_krylov_schwarz(problem, dec, cfg, **kwargs)
    return outer_newton(problem, dec, cfg, **kwargs)


def config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
