"""Dense linear-algebra kernel.

Vectors and matrices are plain ``numpy`` arrays. The helpers here validate
shape/finiteness, provide an own cyclic Jacobi eigensolver for symmetric
matrices, and implement the congruence ``[M; I]^T X [M; I]`` used by the
compositional stability checks. No function hardcodes a tolerance that a
caller might want to choose; defaults are exposed as keyword arguments.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "EigenError",
    "as_vec",
    "as_mat",
    "as_symmat",
    "symmetrize",
    "sym_eig",
    "sym_eigvals",
    "max_eig",
    "is_nsd",
    "congruence",
    "stack_with_identity",
    "frobenius",
]


class EigenError(RuntimeError):
    """Raised when the Jacobi iteration fails to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (off-diagonal residual {residual:.3e})")
        self.residual = residual


def as_vec(v, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError("vector must have positive dimension")
    if dim is not None and arr.size != dim:
        raise ValueError(f"expected vector of dimension {dim}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def as_mat(m, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("matrix must be two-dimensional and non-empty")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected matrix of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def as_symmat(m, tol: float = 0.0) -> np.ndarray:
    """Validate a square symmetric matrix.

    Entries must agree with their transpose to within ``tol`` (exactly, by
    default). The returned array is exactly symmetric.
    """
    arr = as_mat(m)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"symmetric matrix must be square, got {arr.shape}")
    asym = np.max(np.abs(arr - arr.T))
    if asym > tol:
        raise ValueError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return symmetrize(arr)


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def frobenius(m) -> float:
    return float(np.sqrt(np.sum(np.square(m))))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of a round-robin tournament on ``n`` players.

    Each round is a set of disjoint index pairs, so all rotations of a round
    commute and can be applied at once. Every pair (p, q) appears once.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(m, *, max_sweeps: int = 100, rtol: float = 1e-15) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are ordered as in a round-robin tournament so that each round
    consists of disjoint pairs applied simultaneously.

    Returns
    -------
    w : ndarray
        Eigenvalues in ascending order.
    v : ndarray
        Orthonormal eigenvectors as columns, ``m = v @ diag(w) @ v.T``.
    """
    a = as_symmat(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    rounds = _round_robin(n)
    off = _off_norm(a)
    for _ in range(max_sweeps):
        if off <= rtol * scale:
            break
        for ps, qs in rounds:
            apq = a[ps, qs]
            active = np.abs(apq) > rtol * scale * 1e-3
            if not np.any(active):
                continue
            ps_a, qs_a, apq = ps[active], qs[active], apq[active]
            app, aqq = a[ps_a, ps_a], a[qs_a, qs_a]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # columns
            cp, cq = a[:, ps_a].copy(), a[:, qs_a].copy()
            a[:, ps_a] = c * cp - s * cq
            a[:, qs_a] = s * cp + c * cq
            # rows
            rp, rq = a[ps_a, :].copy(), a[qs_a, :].copy()
            a[ps_a, :] = c[:, None] * rp - s[:, None] * rq
            a[qs_a, :] = s[:, None] * rp + c[:, None] * rq
            a[ps_a, qs_a] = 0.0
            a[qs_a, ps_a] = 0.0
            vp, vq = v[:, ps_a].copy(), v[:, qs_a].copy()
            v[:, ps_a] = c * vp - s * vq
            v[:, qs_a] = s * vp + c * vq
        off = _off_norm(a)
    else:
        if off > rtol * scale * 10:
            raise EigenError(f"Jacobi did not converge in {max_sweeps} sweeps", off)
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eigvals(m, **kwargs) -> np.ndarray:
    return sym_eig(m, **kwargs)[0]


def max_eig(m, **kwargs) -> float:
    return float(sym_eigvals(m, **kwargs)[-1])


def is_nsd(m, tol: float) -> bool:
    """True iff the largest eigenvalue of ``m`` is at most ``tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return max_eig(m) <= tol


def stack_with_identity(coupling) -> np.ndarray:
    """Return the stacked matrix ``[M; I]`` with ``I`` sized to M's columns."""
    coupling = as_mat(coupling)
    return np.vstack([coupling, np.eye(coupling.shape[1])])


def congruence(x_cmp, m_stack) -> np.ndarray:
    """Compute ``S^T X S`` for a stacked ``S = [M; I]``, symmetrized."""
    x_cmp = as_symmat(x_cmp, tol=np.inf)
    m_stack = as_mat(m_stack)
    if x_cmp.shape[0] != m_stack.shape[0]:
        raise ValueError(
            f"dimension mismatch: X is {x_cmp.shape}, stack has {m_stack.shape[0]} rows"
        )
    return symmetrize(m_stack.T @ x_cmp @ m_stack)
