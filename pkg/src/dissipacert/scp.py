"""Storage templates, supply rates and the scenario linear programs.

Per sample ``z`` with normalized data ``(x, w, f)`` the full program has rows

    (a)  -S(q, x) - mu <= -eta
    (b)  S(q, f) - S(q, x) - s(z) - mu <= 0
    (c)  s(z) - delta <= 0

where ``s(z) = w'X11 w + 2 w'X12 x + x'X22 x`` is the supply rate. The full
variant minimizes ``mu + delta``; the relaxed variant drops (c) and
``delta`` and minimizes ``mu``. Both are linear in
``(q, X11, X12, X22, mu[, delta])`` because the data are fixed numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SampleSet
from .lp import LpStandard, solve_lp
from .numlin import as_mat, as_symmat, as_vec

__all__ = [
    "StorageTemplate",
    "StorageFn",
    "SupplyRate",
    "ScpProblem",
    "ScpSolution",
    "ScpError",
    "eval_storage",
    "assemble_scp",
    "solve_scp",
    "supply_layout",
]

# tie-break weight on mu, and how far the exact objective of the tie-break
# point may exceed the optimum
TIE_WEIGHT = 1e-4
FACE_SLACK = 1e-6


class ScpError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# storage functions


@dataclass(frozen=True)
class StorageTemplate:
    """Degree-2 monomial basis ``x_j x_k`` (``j <= k``, 0-based)."""

    state_dim: int
    basis: tuple

    def __post_init__(self):
        basis = tuple((int(j), int(k)) for j, k in self.basis)
        if not basis:
            raise ValueError("storage basis must be nonempty")
        for j, k in basis:
            if not 0 <= j <= k < self.state_dim:
                raise ValueError(f"monomial {(j, k)} is not x_j x_k with j <= k < n")
        if len(set(basis)) != len(basis):
            raise ValueError("storage basis has duplicate monomials")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def full(cls, n: int) -> "StorageTemplate":
        return cls(n, tuple((j, k) for j in range(n) for k in range(j, n)))

    @classmethod
    def diagonal(cls, n: int) -> "StorageTemplate":
        return cls(n, tuple((j, j) for j in range(n)))

    @classmethod
    def from_spec(cls, n: int, spec) -> "StorageTemplate":
        if spec in (None, "full"):
            return cls.full(n)
        if spec == "diagonal":
            return cls.diagonal(n)
        if isinstance(spec, str):
            raise ValueError(f"unknown basis spec {spec!r}")
        return cls(n, tuple(tuple(m) for m in spec))

    @property
    def size(self) -> int:
        return len(self.basis)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Monomial values, shape ``(k, r)`` for rows ``x`` of shape ``(k, n)``."""
        x = np.atleast_2d(x)
        if x.shape[1] != self.state_dim:
            raise ValueError(f"expected states of dimension {self.state_dim}")
        j = np.array([m[0] for m in self.basis])
        k = np.array([m[1] for m in self.basis])
        return x[:, j] * x[:, k]

    def labels(self) -> list[str]:
        return [f"x{j + 1}^2" if j == k else f"x{j + 1}*x{k + 1}" for j, k in self.basis]


@dataclass(frozen=True, eq=False)
class StorageFn:
    template: StorageTemplate
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_vec(self.q, self.template.size))

    def __call__(self, x) -> np.ndarray | float:
        return eval_storage(self, x)

    def matrix(self) -> np.ndarray:
        """Symmetric ``P`` with ``S(x) = x' P x``."""
        n = self.template.state_dim
        P = np.zeros((n, n))
        for (j, k), qj in zip(self.template.basis, self.q):
            if j == k:
                P[j, j] += qj
            else:
                P[j, k] += qj / 2.0
                P[k, j] += qj / 2.0
        return P

    def describe(self, digits: int = 4) -> str:
        terms = [f"{v:+.{digits}g}*{lab}" for v, lab in zip(self.q, self.template.labels())]
        return " ".join(terms)


def eval_storage(s: StorageFn, x):
    """``sum_j q_j p_j(x)`` for one state or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != s.template.state_dim:
            raise ValueError(f"expected a state of dimension {s.template.state_dim}")
        return float(s.template.features(x)[0] @ s.q)
    return s.template.features(x) @ s.q


# --------------------------------------------------------------------------
# supply rates


@dataclass(frozen=True, eq=False)
class SupplyRate:
    """Blocks of the supply matrix acting on ``[w; x]``; ``X21 = X12'``."""

    x11: np.ndarray
    x12: np.ndarray
    x22: np.ndarray

    def __post_init__(self):
        x11 = as_symmat(self.x11, tol=1e-12)
        x22 = as_symmat(self.x22, tol=1e-12)
        x12 = as_mat(self.x12, (x11.shape[0], x22.shape[0]))
        object.__setattr__(self, "x11", x11)
        object.__setattr__(self, "x12", x12)
        object.__setattr__(self, "x22", x22)

    @property
    def input_dim(self) -> int:
        return self.x11.shape[0]

    @property
    def state_dim(self) -> int:
        return self.x22.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.x11, self.x12], [self.x12.T, self.x22]])

    @classmethod
    def from_matrix(cls, X, input_dim: int) -> "SupplyRate":
        X = as_symmat(X, tol=1e-9)
        p = input_dim
        return cls(X[:p, :p], X[:p, p:], X[p:, p:])

    def evaluate(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Quadratic form for rows of ``w`` and ``x``."""
        w, x = np.atleast_2d(w), np.atleast_2d(x)
        return (
            np.einsum("ki,ij,kj->k", w, self.x11, w)
            + 2.0 * np.einsum("ki,ij,kj->k", w, self.x12, x)
            + np.einsum("ki,ij,kj->k", x, self.x22, x)
        )


def _sym_index(dim: int, structure: str):
    if structure == "full":
        return [(a, b) for a in range(dim) for b in range(a, dim)]
    if structure == "diagonal":
        return [(a, a) for a in range(dim)]
    raise ValueError(f"unknown supply structure {structure!r}")


def supply_layout(n: int, p: int, structure: str = "full"):
    """Index lists of the independent supply entries (X11, X12, X22)."""
    return (
        _sym_index(p, structure),
        [(a, b) for a in range(p) for b in range(n)],
        _sym_index(n, structure),
    )


def _supply_features(w, x, layout) -> np.ndarray:
    """Coefficients of each independent supply entry in ``s(z)``."""
    l11, l12, l22 = layout
    cols = []
    for a, b in l11:
        cols.append(w[:, a] * w[:, b] * (1.0 if a == b else 2.0))
    for a, b in l12:
        cols.append(2.0 * w[:, a] * x[:, b])
    for a, b in l22:
        cols.append(x[:, a] * x[:, b] * (1.0 if a == b else 2.0))
    return np.column_stack(cols)


def _supply_from_vector(v, n, p, layout) -> SupplyRate:
    l11, l12, l22 = layout
    x11, x12, x22 = np.zeros((p, p)), np.zeros((p, n)), np.zeros((n, n))
    it = iter(v)
    for a, b in l11:
        x11[a, b] = x11[b, a] = next(it)
    for a, b in l12:
        x12[a, b] = next(it)
    for a, b in l22:
        x22[a, b] = x22[b, a] = next(it)
    return SupplyRate(x11, x12, x22)


# --------------------------------------------------------------------------
# programs


@dataclass(frozen=True, eq=False)
class ScpProblem:
    samples: SampleSet
    template: StorageTemplate
    variant: str = "full"  # full | relaxed
    q_max: float = 10.0
    x_max: float = 10.0
    eta: float = 1e-9
    supply_structure: str = "full"  # full | diagonal
    fixed_supply: SupplyRate | None = None
    tie_break: str = "min_mu"  # min_mu | none

    def __post_init__(self):
        if self.tie_break not in ("min_mu", "none"):
            raise ValueError(f"unknown tie-break rule {self.tie_break!r}")
        if self.variant not in ("full", "relaxed"):
            raise ValueError(f"unknown SCP variant {self.variant!r}")
        if not (np.isfinite(self.q_max) and self.q_max > 0 and np.isfinite(self.x_max) and self.x_max > 0):
            raise ValueError("box limits must be finite and positive")
        if self.eta < 0:
            raise ValueError("strict margin eta must be non-negative")
        if self.template.state_dim != self.samples.state_dim:
            raise ValueError("storage template and samples disagree on the state dimension")
        if self.fixed_supply is not None and (
            self.fixed_supply.state_dim != self.samples.state_dim
            or self.fixed_supply.input_dim != self.samples.input_dim
        ):
            raise ValueError("fixed supply rate has the wrong dimensions")


@dataclass(frozen=True, eq=False)
class ScpSolution:
    storage: StorageFn
    supply: SupplyRate
    mu: float
    delta: float | None
    objective: float
    solver_status: str
    active_constraint_count: int
    lp_iterations: int = 0
    max_violation: float = 0.0
    variant: str = "full"


@dataclass(frozen=True)
class _Layout:
    r: int
    supply: tuple
    n_supply: int
    fixed: bool
    full: bool

    @property
    def mu(self) -> int:
        return self.r + (0 if self.fixed else self.n_supply)

    @property
    def delta(self) -> int:
        return self.mu + 1

    @property
    def size(self) -> int:
        return self.mu + (2 if self.full else 1)


def _layout(p: ScpProblem) -> _Layout:
    n, m = p.samples.state_dim, p.samples.input_dim
    sl = supply_layout(n, m, p.supply_structure)
    ns = sum(len(part) for part in sl)
    return _Layout(p.template.size, sl, ns, p.fixed_supply is not None, p.variant == "full")


def _row_blocks(p: ScpProblem, lay: _Layout):
    s = p.samples
    phi_x = p.template.features(s.x_hat)
    phi_f = p.template.features(s.f_hat)
    if lay.fixed:
        quad = p.fixed_supply.evaluate(s.w_hat, s.x_hat)
        return phi_x, phi_f, None, quad
    return phi_x, phi_f, _supply_features(s.w_hat, s.x_hat, lay.supply), None


def assemble_scp(p: ScpProblem) -> LpStandard:
    """Build the LP. Variable order: ``q``, supply entries, ``mu``[, ``delta``].

    ``mu`` and ``delta`` get boxes wide enough never to bind.
    """
    lay = _layout(p)
    N = len(p.samples)
    phi_x, phi_f, sup, quad = _row_blocks(p, lay)
    nv = lay.size
    rows_a = np.zeros((N, nv))
    rows_b = np.zeros((N, nv))
    rows_a[:, : lay.r] = -phi_x
    rows_a[:, lay.mu] = -1.0
    rows_b[:, : lay.r] = phi_f - phi_x
    rows_b[:, lay.mu] = -1.0
    rhs_a = np.full(N, -p.eta)
    rhs_b = np.zeros(N)
    if lay.fixed:
        rhs_b = quad.copy()
    else:
        rows_b[:, lay.r : lay.mu] = -sup
    blocks, rhs = [rows_a, rows_b], [rhs_a, rhs_b]
    if lay.full:
        rows_c = np.zeros((N, nv))
        if lay.fixed:
            rhs_c = -quad
        else:
            rows_c[:, lay.r : lay.mu] = sup
            rhs_c = np.zeros(N)
        rows_c[:, lay.delta] = -1.0
        blocks.append(rows_c)
        rhs.append(rhs_c)
    A = np.vstack(blocks)
    b = np.concatenate(rhs)

    lower = np.empty(nv)
    upper = np.empty(nv)
    lower[: lay.r], upper[: lay.r] = -p.q_max, p.q_max
    if not lay.fixed:
        lower[lay.r : lay.mu], upper[lay.r : lay.mu] = -p.x_max, p.x_max
    boxes = np.abs(upper[: lay.mu])
    reach = float(np.max(np.abs(A[:, : lay.mu]) @ boxes)) if lay.mu else 0.0
    reach += float(np.max(np.abs(b))) + 1.0
    for j in range(lay.mu, nv):
        lower[j], upper[j] = -2.0 * reach, 2.0 * reach
    names = [f"q[{lab}]" for lab in p.template.labels()]
    if not lay.fixed:
        l11, l12, l22 = lay.supply
        names += [f"X11[{a},{b}]" for a, b in l11]
        names += [f"X12[{a},{b}]" for a, b in l12]
        names += [f"X22[{a},{b}]" for a, b in l22]
    names.append("mu")
    if lay.full:
        names.append("delta")
    return LpStandard(np.eye(nv)[lay.mu] + (np.eye(nv)[lay.delta] if lay.full else 0.0), A, b, lower, upper, tuple(names))


def _trivial_point(lp: LpStandard, lay: _Layout) -> np.ndarray:
    """Feasible point with ``q = 0``, supply entries 0 and the smallest ``mu``, ``delta``."""
    x = np.zeros(lp.num_vars)
    need = -lp.b
    x[lay.mu] = np.max(need[lp.A[:, lay.mu] < 0])
    if lay.full:
        x[lay.delta] = np.max(need[lp.A[:, lay.delta] < 0])
    return x


def _exact_rows(p: ScpProblem, lay: _Layout, x: np.ndarray):
    """Storage, supply and the exact row maxima ``mu``, ``delta`` at ``x``."""
    n, m = p.samples.state_dim, p.samples.input_dim
    supply = p.fixed_supply if lay.fixed else _supply_from_vector(x[lay.r : lay.mu], n, m, lay.supply)
    storage = StorageFn(p.template, x[: lay.r])
    s = p.samples
    sx = eval_storage(storage, s.x_hat)
    sf = eval_storage(storage, s.f_hat)
    quad = supply.evaluate(s.w_hat, s.x_hat)
    lhs_a = -sx + p.eta
    lhs_b = sf - sx - quad
    mu = float(max(np.max(lhs_a), np.max(lhs_b)))
    delta = float(np.max(quad)) if lay.full else None
    return storage, supply, mu, delta, sx, lhs_a, lhs_b, quad


def solve_scp(p: ScpProblem, tol: float = 1e-9) -> ScpSolution:
    """Solve and unpack an SCP, then re-verify every scenario row.

    ``mu`` and ``delta`` are recomputed as the exact maxima of their rows at
    the returned ``(q, X)``, so every constraint holds by construction; the
    recomputed values can only be smaller than the LP's.

    The full objective ``mu + delta`` is typically degenerate (``mu`` and
    ``delta`` trade off along an optimal face). With ``tie_break="min_mu"`` a
    second LP (warm-started from the first) adds the weight ``TIE_WEIGHT``
    to ``mu``; its point is kept
    only if its exact objective is within ``FACE_SLACK`` of the optimum and
    its ``mu`` is smaller.
    """
    if len(p.samples) == 0:
        raise ScpError("empty sample set")
    lay = _layout(p)
    lp = assemble_scp(p)
    res = solve_lp(lp, tol=tol, x0=_trivial_point(lp, lay))
    if res.status != "optimal":
        raise ScpError(f"scenario LP ended with status {res.status}: {res.message}")
    iterations = res.iterations
    exact = _exact_rows(p, lay, res.x)
    mu, delta = exact[2], exact[3]
    if mu > res.x[lay.mu] + 1e3 * tol * max(1.0, abs(res.x[lay.mu])):
        raise ScpError(f"re-verification failed: scenario rows need mu={mu} > LP mu={res.x[lay.mu]}")
    if lay.full and delta > res.x[lay.delta] + 1e3 * tol * max(1.0, abs(res.x[lay.delta])):
        raise ScpError("re-verification failed on the delta rows")
    if lay.full and p.tie_break == "min_mu":
        # a small extra weight on mu selects the smallest-mu point of the
        # optimal face (for small enough weight the LP optimum stays on it)
        c2 = lp.c.copy()
        c2[lay.mu] += TIE_WEIGHT
        res2 = solve_lp(LpStandard(c2, lp.A, lp.b, lp.lower, lp.upper, lp.names), tol=tol, start=res.basis)
        iterations += res2.iterations
        if res2.status == "optimal":
            # judge the candidate by its exact rows, not by the LP's claim
            cand = _exact_rows(p, lay, res2.x)
            obj1, obj2 = mu + delta, cand[2] + cand[3]
            if obj2 <= obj1 + FACE_SLACK * max(1.0, abs(obj1)) and cand[2] < mu:
                res, exact = res2, cand
                mu, delta = cand[2], cand[3]
    storage, supply, _, _, sx, lhs_a, lhs_b, quad = exact
    viol = max(
        float(np.max(-sx - mu + p.eta)),
        float(np.max(lhs_b - mu)),
        float(np.max(quad - delta)) if lay.full else -np.inf,
    )
    objective = mu + (delta if lay.full else 0.0)
    scale = max(1.0, abs(mu))
    active = int(np.sum(lhs_a >= mu - 1e-7 * scale) + np.sum(lhs_b >= mu - 1e-7 * scale))
    if lay.full:
        active += int(np.sum(quad >= delta - 1e-7 * max(1.0, abs(delta))))
    return ScpSolution(
        storage, supply, mu, delta, float(objective), res.status, active,
        iterations, max(0.0, viol), p.variant,
    )
