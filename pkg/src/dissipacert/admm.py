"""Scaled-form ADMM that searches supply rates satisfying the composition LMI.

Local sets are symmetric matrices (``local_step`` symmetrizes); the global set
``G`` requires ``[M; I]' X_cmp [M; I] <= 0``. With indicator functions the
scaled updates are

    X_i <- proj_sym(Z_i - Lam_i)
    Z   <- proj_G(X + Lam)
    Lam_i <- Lam_i + X_i - Z_i

and the penalty only scales the dual residual. ``proj_G`` is approximated by
alternating projection: clip the composed form to the NSD cone and map the
correction back to the blocks through a least-norm preimage. Success is always
re-checked independently with the Jacobi eigensolver.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .certify import composed_form, composed_max_eig
from .numlin import as_symmat, frobenius, symmetrize
from .scp import SupplyRate

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "AdmmResult",
    "GlobalStepResult",
    "local_step",
    "global_step",
    "dual_step",
    "run_admm",
    "BlockMap",
    "write_residuals",
]

DENSE_CLIP_LIMIT = 4000
PINV_LIMIT = 3000


def _fast_max_eig(Q) -> float:
    # projection heuristic only; membership is decided by composed_max_eig
    if Q.shape[0] <= DENSE_CLIP_LIMIT:
        return float(np.linalg.eigvalsh(Q.toarray())[-1])
    return float(spla.eigsh(Q, k=1, which="LA", return_eigenvectors=False)[0])


@dataclass(frozen=True)
class AdmmConfig:
    max_iter: int = 500
    eps_primal: float = 1e-6
    eps_dual: float = 1e-6
    rho: float = 1.0
    psd_tol: float = 1e-8
    inner_iter: int = 200
    clip_margin: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1 or self.inner_iter < 1:
            raise ValueError("iteration caps must be positive")
        for name in ("eps_primal", "eps_dual", "rho", "psd_tol", "clip_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class AdmmState:
    X: list
    Z: list
    Lambda: list
    k: int = 0
    primal_residual: float = math.inf
    dual_residual: float = math.inf

    @classmethod
    def start(cls, X0) -> "AdmmState":
        X = [as_symmat(x, tol=1e-9) for x in X0]
        return cls(X, [x.copy() for x in X], [np.zeros_like(x) for x in X])


def local_step(state: AdmmState | None, i: int, target) -> np.ndarray:
    """Frobenius-nearest symmetric matrix to ``target``."""
    return symmetrize(np.asarray(target, dtype=float))


def dual_step(state: AdmmState) -> list:
    return [L + X - Z for L, X, Z in zip(state.Lambda, state.X, state.Z)]


class BlockMap:
    """Linear map from per-subsystem supply matrices to the composed form.

    Coordinates are Frobenius-orthonormal on both sides (off-diagonal entries
    weighted by sqrt 2), so least squares in these coordinates is least squares
    in the Frobenius norm.
    """

    def __init__(self, dims, topology):
        self.dims = [(int(n), int(p)) for n, p in dims]
        M = topology if sp.issparse(topology) else sp.csr_matrix(np.asarray(topology, float))
        M = sp.csr_matrix(M)
        self.n = sum(n for n, _ in self.dims)
        p_tot = sum(p for _, p in self.dims)
        if M.shape != (p_tot, self.n):
            raise ValueError(f"coupling must be {p_tot}x{self.n}, got {M.shape}")
        self.M = M
        eye = sp.identity(self.n, format="csr")
        self.block_index = []
        cols_rows, cols_vals, col_ptr = [], [], []
        out_pos = {}
        po = no = 0
        j = 0
        r2 = math.sqrt(2.0)
        for n_i, p_i in self.dims:
            S = sp.vstack([M[po : po + p_i], eye[no : no + n_i]], format="csr")  # (p_i+n_i, n)
            d = p_i + n_i
            idx = []
            rows = [S.getrow(a) for a in range(d)]
            for a in range(d):
                for b in range(a, d):
                    outer = rows[a].T @ rows[b]
                    outer = outer + outer.T if a != b else outer
                    outer = sp.coo_matrix(outer)
                    scale = 1.0 / r2 if a != b else 1.0
                    entries = {}
                    for u, v, val in zip(outer.row, outer.col, outer.data):
                        if u > v:
                            continue
                        key = (int(u), int(v))
                        w = val * scale * (r2 if u != v else 1.0)
                        entries[key] = entries.get(key, 0.0) + w
                    for key, w in entries.items():
                        if w == 0.0:
                            continue
                        if key not in out_pos:
                            out_pos[key] = len(out_pos)
                        cols_rows.append(out_pos[key])
                        cols_vals.append(w)
                        col_ptr.append(j)
                    idx.append((a, b))
                    j += 1
            self.block_index.append(idx)
            po += p_i
            no += n_i
        self.num_vars = j
        self.positions = np.array(sorted(out_pos, key=out_pos.get), dtype=int).reshape(-1, 2)
        self.A = sp.csr_matrix(
            (cols_vals, (cols_rows, col_ptr)), shape=(len(out_pos), self.num_vars)
        )
        self._pinv = None
        if self.num_vars <= PINV_LIMIT:
            self._pinv = np.linalg.pinv(self.A.toarray(), rcond=1e-12)

    def to_vector(self, blocks) -> np.ndarray:
        r2 = math.sqrt(2.0)
        out = np.empty(self.num_vars)
        j = 0
        for X, idx in zip(blocks, self.block_index):
            for a, b in idx:
                out[j] = X[a, b] * (r2 if a != b else 1.0)
                j += 1
        return out

    def to_blocks(self, vec) -> list:
        r2 = math.sqrt(2.0)
        blocks, j = [], 0
        for (n_i, p_i), idx in zip(self.dims, self.block_index):
            X = np.zeros((p_i + n_i, p_i + n_i))
            for a, b in idx:
                val = vec[j] / (r2 if a != b else 1.0)
                X[a, b] = X[b, a] = val
                j += 1
            blocks.append(X)
        return blocks

    def svec_of(self, Q) -> np.ndarray:
        u, v = self.positions[:, 0], self.positions[:, 1]
        dense = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        return dense[u, v] * np.where(u != v, math.sqrt(2.0), 1.0)

    def preimage(self, dQ) -> np.ndarray:
        """Least-norm block correction whose image best fits ``dQ``."""
        y = self.svec_of(dQ)
        if self._pinv is not None:
            return self._pinv @ y
        return spla.lsqr(self.A, y, atol=1e-14, btol=1e-14, iter_lim=10 * self.num_vars)[0]


def _supplies(blocks, dims):
    return [SupplyRate.from_matrix(X, p) for X, (_, p) in zip(blocks, dims)]


def _composed(blocks, dims, topology):
    return composed_form(_supplies(blocks, dims), topology)


@dataclass(frozen=True)
class GlobalStepResult:
    Z: list
    max_eig: float
    feasible: bool
    inner_iterations: int


def global_step(targets, dims, topology, cfg: AdmmConfig, block_map: BlockMap | None = None) -> GlobalStepResult:
    """Approximately project ``targets`` (``X + Lam``) onto ``G``.

    Feasible inputs are returned unchanged.
    """
    Z = [symmetrize(np.asarray(t, float)) for t in targets]
    Q = _composed(Z, dims, topology)
    lam = _fast_max_eig(Q)
    if lam <= cfg.psd_tol:
        return GlobalStepResult(Z, lam, True, 0)
    if Q.shape[0] > DENSE_CLIP_LIMIT:
        raise ValueError(f"composed form of size {Q.shape[0]} exceeds the dense clipping limit")
    bm = block_map or BlockMap(dims, topology)
    vec = bm.to_vector(Z)
    best = (lam, Z)
    for it in range(1, cfg.inner_iter + 1):
        dense = Q.toarray()
        w, V = np.linalg.eigh(dense)
        clipped = np.minimum(w, -cfg.clip_margin)
        dQ = (V * (clipped - w)) @ V.T
        vec = vec + bm.preimage(dQ)
        Z = bm.to_blocks(vec)
        Q = _composed(Z, dims, topology)
        lam = _fast_max_eig(Q)
        if lam < best[0]:
            best = (lam, Z)
        if lam <= cfg.psd_tol:
            return GlobalStepResult(Z, lam, True, it)
    return GlobalStepResult(best[1], best[0], False, cfg.inner_iter)


@dataclass
class AdmmResult:
    converged: bool
    X: list
    iterations: int
    max_eig: float
    verified: bool
    history: list = field(default_factory=list)
    message: str = ""

    def supplies(self, dims) -> list:
        return _supplies(self.X, dims)


def run_admm(X0, dims, topology, cfg: AdmmConfig = AdmmConfig()) -> AdmmResult:
    """Run ADMM from initial supply matrices ``X0`` (one per subsystem).

    ``dims`` lists ``(n_i, p_i)``. Terminates as soon as the local iterates
    lie in ``G`` (checked with the Jacobi eigensolver at ``psd_tol``).
    """
    dims = [(int(n), int(p)) for n, p in dims]
    state = AdmmState.start(X0)
    for X, (n, p) in zip(state.X, dims):
        if X.shape != (n + p, n + p):
            raise ValueError("initial supply matrix has the wrong size")
    history = []
    lam = composed_max_eig(_composed(state.X, dims, topology))
    history.append({"iteration": 0, "primal": 0.0, "dual": 0.0, "max_eig": lam})
    if lam <= cfg.psd_tol:
        return AdmmResult(True, state.X, 0, lam, True, history, "initial point already feasible")
    bm = BlockMap(dims, topology)
    inner_fail = 0
    for k in range(1, cfg.max_iter + 1):
        state.X = [local_step(state, i, Z - L) for i, (Z, L) in enumerate(zip(state.Z, state.Lambda))]
        Z_old = state.Z
        g = global_step([X + L for X, L in zip(state.X, state.Lambda)], dims, topology, cfg, bm)
        inner_fail += not g.feasible
        state.Z = g.Z
        state.Lambda = dual_step(state)
        state.k = k
        state.primal_residual = math.sqrt(sum(frobenius(X - Z) ** 2 for X, Z in zip(state.X, state.Z)))
        state.dual_residual = cfg.rho * math.sqrt(sum(frobenius(Z - Zo) ** 2 for Z, Zo in zip(state.Z, Z_old)))
        lam = composed_max_eig(_composed(state.X, dims, topology))
        history.append(
            {"iteration": k, "primal": state.primal_residual, "dual": state.dual_residual, "max_eig": lam}
        )
        if lam <= cfg.psd_tol:
            return AdmmResult(True, state.X, k, lam, True, history, "local iterates entered G")
        if (
            state.primal_residual <= cfg.eps_primal
            and state.dual_residual <= cfg.eps_dual
            and g.feasible
        ):
            # X and Z agree and Z is feasible: Z is the certificate candidate
            lamz = composed_max_eig(_composed(state.Z, dims, topology))
            if lamz <= cfg.psd_tol:
                return AdmmResult(True, state.Z, k, lamz, True, history, "residuals converged")
    msg = f"no feasible iterate after {cfg.max_iter} iterations"
    if inner_fail:
        msg += f" ({inner_fail} global steps hit the inner cap)"
    return AdmmResult(False, state.X, cfg.max_iter, lam, False, history, msg)


def write_residuals(result: AdmmResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "primal", "dual", "max_eig"])
        for row in result.history:
            w.writerow([row["iteration"], repr(row["primal"]), repr(row["dual"]), repr(row["max_eig"])])
    return path
