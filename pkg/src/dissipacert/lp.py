"""Boxed linear programs solved by an active-set (inequality-form) simplex.

Problem::

    minimize    c @ x
    subject to  A @ x <= b,   lower <= x <= upper   (all bounds finite)

All constraints are gathered as rows ``G x <= h``. A vertex is described by a
working set of ``n`` linearly independent active rows. Each iteration
computes multipliers ``G_W^T lam = -c``; if all are non-negative the vertex is
optimal, otherwise the most negative one is released and the step along the
resulting edge is limited by the first blocking row. This is the simplex
method applied to the dual standard form, which suits scenario programs with
many more rows than variables.

Phase 1 appends an artificial ``t >= 0`` to every row and minimizes ``t`` from
a box vertex.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

__all__ = ["LpStandard", "LpResult", "solve_lp", "dump_lp"]

DEGENERATE_SWITCH = 50
REFACTOR_COND = 1e13
PIVOT_REL = 1e-3


@dataclass(frozen=True, eq=False)
class LpStandard:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.asarray(self.b, dtype=float).ravel()
        lo = np.asarray(self.lower, dtype=float).ravel()
        up = np.asarray(self.upper, dtype=float).ravel()
        if n == 0:
            raise ValueError("LP needs at least one variable")
        if b.size != A.shape[0] or lo.size != n or up.size != n:
            raise ValueError("LP data are not dimension-consistent")
        for name, arr in (("c", c), ("A", A), ("b", b), ("lower", lo), ("upper", up)):
            if not np.isfinite(arr).all():
                raise ValueError(f"LP {name} must be finite (every variable needs a finite box)")
        if np.any(lo > up):
            raise ValueError("LP lower bound exceeds upper bound")
        for name, arr in (("c", c), ("A", A), ("b", b), ("lower", lo), ("upper", up)):
            object.__setattr__(self, name, arr)

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of rows or bounds at ``x`` (0 when feasible)."""
        parts = [self.lower - x, x - self.upper]
        if self.num_rows:
            parts.append(self.A @ x - self.b)
        return float(max(0.0, max(np.max(p) for p in parts)))


@dataclass(frozen=True)
class LpResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit | numerical
    x: np.ndarray | None
    objective: float
    iterations: int
    residual: float
    active_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    message: str = ""
    # final working set: row i as i, upper bound j as m + j, lower bound j as m + n + j
    basis: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


class _ActiveSet:
    """Active-set simplex on ``G x <= h`` with a full-rank starting working set."""

    def __init__(self, G, h, c, x, work, tol, max_iter):
        self.G, self.h, self.c = G, h, c
        self.x = x
        self.work = np.array(work, dtype=int)
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        self.stall, self.bland = 0, False

    def run(self):
        G, h, c, tol = self.G, self.h, self.c, self.tol
        n = c.size
        in_work = np.zeros(G.shape[0], dtype=bool)
        in_work[self.work] = True
        stall, bland = self.stall, self.bland
        cscale = max(1.0, float(np.max(np.abs(c))))
        while self.iterations < self.max_iter:
            B = G[self.work]
            try:
                lu = sla.lu_factor(B, check_finite=False)
            except (sla.LinAlgError, ValueError):
                return "numerical"
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-14:
                return "numerical"
            lam = sla.lu_solve(lu, -c, trans=1, check_finite=False)
            neg = lam < -tol * cscale
            if not np.any(neg):
                return "optimal"
            if bland:
                cand = np.flatnonzero(neg)
                k = int(cand[np.argmin(self.work[cand])])
            else:
                k = int(np.argmin(lam))
            e = np.zeros(n)
            e[k] = -1.0
            d = sla.lu_solve(lu, e, check_finite=False)
            gd = G @ d
            gd[in_work] = 0.0
            inc = gd > tol
            if not np.any(inc):
                return "unbounded"
            rows = np.flatnonzero(inc)
            slack = np.maximum(h[rows] - G[rows] @ self.x, 0.0)
            steps = slack / gd[rows]
            tmin = float(np.min(steps))
            ties = rows[steps <= tmin + tol * max(1.0, tmin)]
            # drop tiny pivots among the ties: they give near-singular bases
            ties = ties[gd[ties] >= PIVOT_REL * np.max(gd[ties])]
            if bland:
                enter = int(np.min(ties))
            else:
                enter = int(ties[np.argmax(gd[ties])])
            self.x = self.x + tmin * d
            in_work[self.work[k]] = False
            in_work[enter] = True
            self.work[k] = enter
            self.iterations += 1
            if tmin <= tol:
                stall += 1
                if stall >= DEGENERATE_SWITCH:
                    bland = True
            else:
                # leave Bland's rule once the stall is broken
                stall, bland = 0, False
            self.stall, self.bland = stall, bland
        return "iteration_limit"


def _row_scaled(lp: LpStandard):
    n = lp.num_vars
    A, b = lp.A, lp.b
    norms = np.linalg.norm(A, axis=1) if A.size else np.zeros(0)
    keep = norms > 0
    if np.any(~keep) and np.any(b[~keep] < 0):
        return None  # 0 <= negative: infeasible
    A, b, norms = A[keep], b[keep], norms[keep]
    A = A / norms[:, None]
    b = b / norms
    eye = np.eye(n)
    G = np.vstack([A, eye, -eye])
    h = np.concatenate([b, lp.upper, -lp.lower])
    return G, h, np.flatnonzero(keep)


def _warm_start(lp: LpStandard, G, h, kept, basis, tol):
    """Map a working set from another LP onto this one; None if unusable."""
    n, m = lp.num_vars, lp.num_rows
    mr = kept.size
    where = np.full(m, -1)
    where[kept] = np.arange(mr)
    basis = np.asarray(basis, dtype=int)
    if basis.size != n:
        return None
    work = np.where(basis < m, where[np.minimum(basis, m - 1)], mr + basis - m)
    if np.any(basis < 0) or np.any(basis >= m + 2 * n) or np.any(work < 0):
        return None
    try:
        x = np.linalg.solve(G[work], h[work])
    except np.linalg.LinAlgError:
        return None
    if not np.isfinite(x).all() or np.max(G @ x - h) > tol:
        return None
    return x, work


def _crash(G, h, c, x, tol):
    """Move from a feasible point to a vertex without increasing ``c'x``.

    Each step goes along the projection of ``-c`` onto the null space of the
    active rows (any null-space direction once that projection vanishes)
    until a new row blocks; the blocking row is independent of the active
    ones, so after at most ``n`` steps the working set has full rank.
    """
    n = c.size
    slack = h - G @ x
    work = []
    basis = np.zeros((n, 0))  # orthonormal span of the chosen rows
    for i in np.argsort(slack):
        if slack[i] > tol or len(work) == n:
            break
        g = G[i] - basis @ (basis.T @ G[i])
        g = g - basis @ (basis.T @ g)  # second pass for stability
        size = np.linalg.norm(g)
        if size > 1e-8 * np.linalg.norm(G[i]):
            work.append(int(i))
            basis = np.column_stack([basis, g / size])
    while len(work) < n:
        if work:
            Q, _ = np.linalg.qr(G[work].T, mode="complete")
            Z = Q[:, len(work):]
        else:
            Z = np.eye(n)
        d = -Z @ (Z.T @ c)
        if np.linalg.norm(d) <= 1e-12 * max(1.0, np.linalg.norm(c)):
            d = Z[:, 0] if c @ Z[:, 0] <= 0 else -Z[:, 0]
        gd = G @ d
        gd[work] = 0.0
        rows = np.flatnonzero(gd > 1e-12)
        if rows.size == 0:
            return None
        steps = np.maximum(h[rows] - G[rows] @ x, 0.0) / gd[rows]
        j = int(np.argmin(steps))
        x = x + steps[j] * d
        work.append(int(rows[j]))
    return x, np.array(work, dtype=int)


def solve_lp(
    lp: LpStandard, tol: float = 1e-9, max_iter: int | None = None, start=None, x0=None
) -> LpResult:
    """Solve a boxed LP. Unboundedness cannot occur with finite boxes.

    ``start`` is an optional working set (the ``basis`` of an earlier result,
    in this LP's row numbering). When it names a feasible vertex, phase 1 is
    skipped. ``x0`` is an optional feasible point; phase 1 is then replaced
    by a crash from ``x0`` to a vertex that is no worse.
    """
    n, m = lp.num_vars, lp.num_rows
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000
    scaled = _row_scaled(lp)
    if scaled is None:
        return LpResult("infeasible", None, np.inf, 0, np.inf, message="zero row with negative rhs")
    G, h, kept = scaled
    mr = G.shape[0] - 2 * n
    upper_rows = mr + np.arange(n)
    lower_rows = mr + n + np.arange(n)

    # box vertex minimizing the objective over the box
    at_upper = lp.c < 0
    x = np.where(at_upper, lp.upper, lp.lower)
    work = np.where(at_upper, upper_rows, lower_rows)
    iters = 0
    warm = _warm_start(lp, G, h, kept, start, tol) if start is not None else None
    if warm is None and x0 is not None:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size == n and np.isfinite(x0).all() and np.max(G @ x0 - h) <= tol:
            # the crash point sits within tol of its vertex; that offset
            # breaks ties at heavily degenerate starts, and the residual
            # check below catches any drift
            warm = _crash(G, h, lp.c, x0, tol)
    if warm is not None:
        x, work = warm

    viol = G[:mr] @ x - h[:mr] if mr else np.zeros(0)
    if warm is None and mr and np.max(viol) > tol:
        # phase 1 in (x, t): rows G_i x - t <= h_i, bounds t in [0, t0 + 1]
        t0 = float(np.max(viol))
        worst = int(np.argmax(viol))
        G1 = np.zeros((G.shape[0] + 2, n + 1))
        G1[:, :n][: G.shape[0]] = G
        G1[:mr, n] = -1.0
        G1[-2, n] = 1.0  # t <= t0 + 1
        G1[-1, n] = -1.0  # -t <= 0
        h1 = np.concatenate([h, [t0 + 1.0, 0.0]])
        c1 = np.zeros(n + 1)
        c1[n] = 1.0
        solver = _ActiveSet(
            G1, h1, c1, np.append(x, t0), np.append(work, worst), tol, max_iter
        )
        status = solver.run()
        iters += solver.iterations
        if status != "optimal":
            return LpResult(status, None, np.nan, iters, np.inf, message="phase 1 did not finish")
        t = solver.x[n]
        if t > tol * 10:
            return LpResult("infeasible", None, np.inf, iters, float(t), message=f"phase 1 optimum t={t:.3e}")
        work1 = solver.work.copy()
        t_row = G1.shape[0] - 1
        if t_row not in work1:
            # degenerate exit with t = 0: swap the t >= 0 bound into the working set
            B = G1[work1]
            g = G1[t_row]
            coef = np.linalg.solve(B.T, g)
            k = int(np.argmax(np.abs(coef)))
            work1[k] = t_row
        work = np.array([w for w in work1 if w != t_row], dtype=int)
        if work.size != n or np.any(work >= G.shape[0]):
            return LpResult("numerical", None, np.nan, iters, np.inf, message="phase 1 basis handoff failed")
        x = solver.x[:n]
        x = np.linalg.solve(G[work], h[work])

    solver = _ActiveSet(G, h, lp.c, x, work, tol, max_iter)
    status = solver.run()
    iters += solver.iterations
    if status != "optimal":
        return LpResult(status, None, np.nan, iters, np.inf, message="phase 2 did not finish")
    x = np.linalg.solve(G[solver.work], h[solver.work])
    x = np.clip(x, lp.lower, lp.upper)
    res = lp.residual(x)
    if warm is not None and res > 1e3 * tol:
        # the warm path drifted off its working set: redo the solve cold
        cold = solve_lp(lp, tol=tol, max_iter=max_iter)
        return replace(cold, iterations=cold.iterations + iters)
    active = solver.work[solver.work < mr]
    basis = np.where(solver.work < mr, kept[np.minimum(solver.work, mr - 1)] if mr else 0, solver.work - mr + m)
    return LpResult(
        "optimal", x, float(lp.c @ x), iters, res, active_rows=np.sort(kept[active]),
        basis=basis.astype(int),
    )


def dump_lp(lp: LpStandard, path) -> Path:
    """Write a plain-text listing of the LP.

    Format: ``vars <n>`` / ``rows <m>`` header lines, one ``c`` line with the
    objective, ``m`` lines ``row <i> a_1 .. a_n <= b_i`` and ``n`` lines
    ``bound <j> <lower> <upper> [name]``. Numbers use round-trip precision.
    """
    fmt = lambda vals: " ".join(repr(float(v)) for v in vals)
    lines = [f"vars {lp.num_vars}", f"rows {lp.num_rows}", "c " + fmt(lp.c)]
    for i, (row, rhs) in enumerate(zip(lp.A, lp.b)):
        lines.append(f"row {i} {fmt(row)} <= {float(rhs)!r}")
    names = lp.names or tuple(f"x{j}" for j in range(lp.num_vars))
    for j in range(lp.num_vars):
        lines.append(f"bound {j} {float(lp.lower[j])!r} {float(lp.upper[j])!r} {names[j]}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
