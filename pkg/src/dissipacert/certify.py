"""Network-level stability verdicts from per-subsystem evidence.

Unknown topology: every ``mu + L1 eps`` and the sum of
``mu + delta + L2 eps`` must be negative. Known topology: every
``mu + max(L1, L2) eps`` must be negative and the composed supply form
``[M; I]' X_cmp [M; I]`` negative semidefinite. In both cases the sum of the
storage functions is the network Lyapunov function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .data import CoveringEstimate
from .model import DivergenceError, NetworkSpec, sphere_points
from .numlin import as_mat, as_symmat, congruence, max_eig, stack_with_identity, symmetrize
from .data import spacing_constant
from .scp import ScpSolution, StorageFn, SupplyRate, eval_storage

__all__ = [
    "SubsystemEvidence",
    "Certificate",
    "LmiReport",
    "AuditReport",
    "check_unknown_topology",
    "check_known_topology",
    "composed_form",
    "assemble_x_cmp",
    "composed_max_eig",
    "derive_lmi_blocks",
    "check_lmi",
    "lyapunov_decrease_audit",
    "sample_complexity_table",
    "DENSE_EIG_LIMIT",
]

CERTIFIED = "certified_GAS"
INCONCLUSIVE = "inconclusive"
DENSE_EIG_LIMIT = 200
INCONCLUSIVE_NOTE = "an inconclusive verdict does not imply that the network is unstable"


@dataclass(frozen=True, eq=False)
class SubsystemEvidence:
    """Per-subsystem ingredients; margins are always recomputed from parts."""

    index: int
    scp: ScpSolution
    epsilon: CoveringEstimate
    L1: float
    L2: float

    def __post_init__(self):
        vals = [self.scp.mu, self.epsilon.epsilon, self.L1, self.L2]
        if self.scp.delta is not None:
            vals.append(self.scp.delta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"subsystem {self.index} evidence has non-finite parts")
        if self.L1 < 0 or self.L2 < 0:
            raise ValueError("Lipschitz constants must be non-negative")

    @property
    def eps(self) -> float:
        return self.epsilon.epsilon

    @property
    def margin1(self) -> float:
        return self.scp.mu + self.L1 * self.eps

    @property
    def margin2(self) -> float:
        if self.scp.delta is None:
            raise ValueError("margin2 needs the full SCP variant (delta present)")
        return self.scp.mu + self.scp.delta + self.L2 * self.eps

    @property
    def L(self) -> float:
        return max(self.L1, self.L2)

    @property
    def margin_known(self) -> float:
        return self.scp.mu + self.L * self.eps


@dataclass(frozen=True, eq=False)
class Certificate:
    verdict: str
    path: str  # unknown_topology | known_topology
    lyapunov: tuple
    per_subsystem: tuple
    sum_margin2: float | None
    violations: tuple
    hints: tuple
    eta_cert: float
    lmi_max_eig: float | None = None
    lmi_tol: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED


def _hints(violations) -> tuple:
    if not violations:
        return ()
    return (
        "collect additional data to shrink the covering radius epsilon",
        "try a richer storage basis or wider coefficient boxes",
        INCONCLUSIVE_NOTE,
    )


def check_unknown_topology(evidence, eta_cert: float = 0.0, provenance=None) -> Certificate:
    """Certify iff every ``margin1 < -eta_cert`` and ``sum(margin2) < -eta_cert``."""
    evidence = tuple(evidence)
    if not evidence:
        raise ValueError("evidence for at least one subsystem is required")
    if eta_cert < 0:
        raise ValueError("eta_cert must be non-negative")
    violations = [f"margin1[{e.index}]={e.margin1:.6g}" for e in evidence if not e.margin1 < -eta_cert]
    total = float(sum(e.margin2 for e in evidence))
    if not total < -eta_cert:
        violations.append(f"sum_margin2={total:.6g}")
    return Certificate(
        CERTIFIED if not violations else INCONCLUSIVE,
        "unknown_topology",
        tuple(e.scp.storage for e in evidence),
        evidence,
        total,
        tuple(violations),
        _hints(violations),
        eta_cert,
        provenance=dict(provenance or {}),
    )


# --------------------------------------------------------------------------
# composition with a known coupling


def assemble_x_cmp(supplies) -> np.ndarray:
    """Dense ``X_cmp`` on ``[w_1..w_M; x_1..x_M]`` (small networks only)."""
    supplies = list(supplies)
    p = sum(s.input_dim for s in supplies)
    n = sum(s.state_dim for s in supplies)
    X = np.zeros((p + n, p + n))
    po = no = 0
    for s in supplies:
        pi, ni = s.input_dim, s.state_dim
        X[po : po + pi, po : po + pi] = s.x11
        X[po : po + pi, p + no : p + no + ni] = s.x12
        X[p + no : p + no + ni, po : po + pi] = s.x12.T
        X[p + no : p + no + ni, p + no : p + no + ni] = s.x22
        po += pi
        no += ni
    return X


def composed_form(supplies, topology) -> sp.csr_matrix:
    """``M' D11 M + M' D12 + D21 M + D22`` from block-diagonal parts.

    This equals ``[M; I]' X_cmp [M; I]`` without ever forming ``X_cmp``.
    """
    supplies = list(supplies)
    M = topology if sp.issparse(topology) else sp.csr_matrix(as_mat(topology))
    p = sum(s.input_dim for s in supplies)
    n = sum(s.state_dim for s in supplies)
    if M.shape != (p, n):
        raise ValueError(f"coupling must be {p}x{n} for these supply rates, got {M.shape}")
    D11 = sp.block_diag([s.x11 for s in supplies], format="csr")
    D12 = sp.block_diag([s.x12 for s in supplies], format="csr")
    D22 = sp.block_diag([s.x22 for s in supplies], format="csr")
    Q = M.T @ D11 @ M + M.T @ D12 + D12.T @ M + D22
    Q = (Q + Q.T) * 0.5
    return sp.csr_matrix(Q)


def composed_max_eig(Q, tol: float = 1e-10) -> float:
    """Largest eigenvalue of the composed form (Jacobi when small, Lanczos otherwise)."""
    n = Q.shape[0]
    if n <= DENSE_EIG_LIMIT:
        dense = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        return max_eig(symmetrize(dense))
    val = spla.eigsh(sp.csr_matrix(Q), k=1, which="LA", tol=tol, return_eigenvectors=False)
    return float(val[0])


def check_known_topology(
    evidence, topology, tol: float = 1e-8, eta_cert: float = 0.0, provenance=None
) -> Certificate:
    """Certify iff every ``mu + max(L1, L2) eps < -eta_cert`` and the composed form is NSD."""
    evidence = tuple(evidence)
    if not evidence:
        raise ValueError("evidence for at least one subsystem is required")
    if tol < 0 or eta_cert < 0:
        raise ValueError("tolerances must be non-negative")
    Q = composed_form([e.scp.supply for e in evidence], topology)
    lam = composed_max_eig(Q)
    violations = [
        f"margin[{e.index}]={e.margin_known:.6g}" for e in evidence if not e.margin_known < -eta_cert
    ]
    if not lam <= tol:
        violations.append(f"composition max eigenvalue {lam:.6g} > {tol:g}")
    return Certificate(
        CERTIFIED if not violations else INCONCLUSIVE,
        "known_topology",
        tuple(e.scp.storage for e in evidence),
        evidence,
        None,
        tuple(violations),
        _hints(violations),
        eta_cert,
        lmi_max_eig=float(lam),
        lmi_tol=tol,
        provenance=dict(provenance or {}),
    )


# --------------------------------------------------------------------------
# model-based dissipativity LMI


@dataclass(frozen=True)
class LmiReport:
    holds: bool
    max_eig: float
    tol: float
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)


def derive_lmi_blocks(A, B, P, supply: SupplyRate):
    """Both sides of ``[A'PA, A'PB; B'PA, B'PB] <= [P + X22, X21; X12, X11]``."""
    A = as_mat(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    B = as_mat(B)
    if B.shape[0] != n:
        raise ValueError("B must have as many rows as A")
    P = as_symmat(P, tol=0.0)
    if P.shape != (n, n):
        raise ValueError("P must match the state dimension")
    if supply.state_dim != n or supply.input_dim != B.shape[1]:
        raise ValueError("supply rate dimensions do not match (A, B)")
    left = np.block([[A.T @ P @ A, A.T @ P @ B], [B.T @ P @ A, B.T @ P @ B]])
    right = np.block([[P + supply.x22, supply.x12.T], [supply.x12, supply.x11]])
    return symmetrize(left), symmetrize(right)


def check_lmi(A, B, P, supply: SupplyRate, tol: float = 1e-6) -> LmiReport:
    left, right = derive_lmi_blocks(A, B, P, supply)
    lam = max_eig(left - right)
    return LmiReport(bool(lam <= tol), float(lam), tol, left, right)


# --------------------------------------------------------------------------
# empirical decrease audit


@dataclass(frozen=True)
class AuditReport:
    rollouts: int
    steps_checked: int
    decreasing_steps: int
    worst_increase: float
    diverged: int
    degenerate: bool
    floor: float

    @property
    def decrease_fraction(self) -> float:
        return self.decreasing_steps / self.steps_checked if self.steps_checked else 0.0

    @property
    def passed(self) -> bool:
        return (
            not self.degenerate
            and self.diverged == 0
            and self.steps_checked > 0
            and self.decreasing_steps == self.steps_checked
        )


def lyapunov_decrease_audit(
    net: NetworkSpec, lyapunov, rollouts: int = 100, steps: int = 200, seed=0, floor: float = 1e-8,
    cap: float = 1e12,
) -> AuditReport:
    """Fraction of simulated steps with ``V(x(k+1)) < V(x(k))`` while ``||x(k)|| > floor``."""
    lyapunov = list(lyapunov)
    if len(lyapunov) != net.size:
        raise ValueError("one storage function per subsystem is required")
    slices = net.state_slices()

    def V(x):
        return sum(eval_storage(s, x[:, sl]) for s, sl in zip(lyapunov, slices))

    degenerate = all(np.all(s.q == 0) for s in lyapunov)
    rng = np.random.default_rng(seed)
    x = sphere_points(rng, rollouts, net.state_dim)
    alive = np.ones(rollouts, dtype=bool)
    diverged = np.zeros(rollouts, dtype=bool)
    checked = dec = 0
    worst = -np.inf
    vx = V(x)
    for _ in range(steps):
        norms = np.linalg.norm(x, axis=1)
        alive &= norms > floor
        if not np.any(alive):
            break
        nxt = net.step(x[alive])
        bad = ~np.isfinite(nxt).all(axis=1) | (np.linalg.norm(nxt, axis=1) > cap)
        vn = V(np.where(bad[:, None], 0.0, nxt))
        idx = np.flatnonzero(alive)
        ok = ~bad
        diff = vn[ok] - vx[idx][ok]
        checked += int(ok.sum()) + int(bad.sum())
        dec += int(np.sum(diff < 0))
        if diff.size:
            worst = max(worst, float(diff.max()))
        diverged[idx[bad]] = True
        alive[idx[bad]] = False
        x[idx[ok]] = nxt[ok]
        vx[idx[ok]] = vn[ok]
    if dec == 0:
        degenerate = True
    return AuditReport(rollouts, checked, dec, float(worst), int(diverged.sum()), bool(degenerate), floor)


# --------------------------------------------------------------------------
# data requirements


def sample_complexity_table(M_list, per_subsystem_N: int, state_dim: int = 2, input_dim: int = 2):
    """Compositional versus monolithic sample counts for growing networks.

    A per-subsystem set of ``N`` points on ``S^{d-1}`` (``d = n + p``) reaches
    covering radius ``eps = c_d * N**(-1/(d-1))`` (``c_d`` from
    :func:`dissipacert.data.spacing_constant`). Covering the joint sphere of
    dimension ``D = M d`` at the same ``eps`` needs about
    ``(c_D / eps)**(D-1)`` points. Rows carry ``log10`` of that count because
    it overflows quickly.
    """
    if per_subsystem_N < 1:
        raise ValueError("per-subsystem sample count must be positive")
    d = state_dim + input_dim
    eps = spacing_constant(d) * per_subsystem_N ** (-1.0 / (d - 1))
    rows = []
    for M in M_list:
        M = int(M)
        if M < 1:
            raise ValueError("network sizes must be positive")
        D = M * d
        log10_mono = (D - 1) * math.log10(spacing_constant(D) / eps)
        mono = 10.0**log10_mono if log10_mono < 300 else math.inf
        rows.append(
            {
                "M": M,
                "compositional": M * per_subsystem_N,
                "monolithic": mono,
                "log10_monolithic": log10_mono,
                "epsilon": eps,
            }
        )
    return rows
