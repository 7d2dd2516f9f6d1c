"""Networks of degree-one homogeneous subsystems.

A subsystem maps ``(x_i, w_i) -> x_i(k+1)``. Dynamics evaluators are batch
callables: they take arrays of shape ``(k, n_i)`` and ``(k, p_i)`` and return
``(k, n_i)``. The network couples subsystems through ``w = M x``.

Two input conventions exist for the view a certifier gets of subsystem ``i``:

``"topology"``
    ``w_i`` is the internal input defined by the coupling matrix (needs the
    topology to be known to the certifier).
``"concatenation"``
    ``w_i = [x_0; ...; x_{i-1}; x_{i+1}; ...]``; the coupling stays hidden
    inside the evaluator, so ``||(x_i, w_i)|| = ||x||``.
"""
from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .numlin import as_mat, as_vec

__all__ = [
    "DivergenceError",
    "LinearDynamics",
    "RingDynamics",
    "ExternalOracle",
    "SubsystemSpec",
    "NetworkSpec",
    "Trajectory",
    "HomogeneityReport",
    "builtin_system",
    "two_subsystem",
    "room_network",
    "nonlinear_ring",
    "sample_pairs",
    "homogeneity_probe",
    "simulate_interconnection",
    "sphere_points",
]

DIVERGENCE_CAP = 1e12
ZERO_NORM_RETRIES = 100


class DivergenceError(RuntimeError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded cap at step {step}")
        self.step = step
        self.norm = norm


# --------------------------------------------------------------------------
# dynamics evaluators (module-level classes so they pickle for worker pools)


class LinearDynamics:
    """``f(x, w) = A x + B w``."""

    def __init__(self, A, B):
        self.A = as_mat(A)
        self.B = as_mat(B)
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("A must be square and B must have as many rows as A")

    def __call__(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return x @ self.A.T + w @ self.B.T

    def __repr__(self):
        return f"LinearDynamics(A={self.A.tolist()}, B={self.B.tolist()})"


class RingDynamics:
    """``f(x, w) = H F(x) + b w`` with the homogeneous nonlinearity
    ``F(x) = [sqrt(|x1 x2| + gamma (x1^2 + x2^2)); x2]``."""

    def __init__(self, H, gamma: float, input_gain: float = 0.1):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.H = as_mat(H, (2, 2))
        self.gamma = float(gamma)
        self.input_gain = float(input_gain)

    def __call__(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        x1, x2 = x[:, 0], x[:, 1]
        root = np.sqrt(np.abs(x1 * x2) + self.gamma * (x1 * x1 + x2 * x2))
        F = np.column_stack([root, x2])
        return F @ self.H.T + self.input_gain * w

    def __repr__(self):
        return f"RingDynamics(H={self.H.tolist()}, gamma={self.gamma}, input_gain={self.input_gain})"


class ExternalOracle:
    """Black-box dynamics served by an external command.

    Protocol: one query per line. The tool writes ``x_1 .. x_n w_1 .. w_p``
    (whitespace-separated decimals) and reads back one line ``f_1 .. f_n``.
    The process is started lazily and kept open across queries.
    """

    def __init__(self, command: str, state_dim: int, input_dim: int):
        self.command = command
        self.state_dim = state_dim
        self.input_dim = input_dim
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def query(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        proc = self._ensure()
        line = " ".join(repr(float(v)) for v in np.concatenate([x, w]))
        proc.stdin.write(line + "\n")
        proc.stdin.flush()
        reply = proc.stdout.readline()
        if not reply:
            raise RuntimeError(f"oracle {self.command!r} closed its output")
        out = np.array([float(tok) for tok in reply.split()])
        if out.size != self.state_dim:
            raise ValueError(
                f"oracle returned {out.size} values, expected {self.state_dim}"
            )
        return out

    def __call__(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.vstack([self.query(xr, wr) for xr, wr in zip(x, w)])

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_proc"] = None
        return state

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class _ConcatenatedView:
    """Subsystem ``i`` seen through the concatenation convention.

    Takes ``(x_i, x_{-i})`` and routes the full state through the hidden
    coupling row block to obtain the true internal input.
    """

    def __init__(self, net: "NetworkSpec", i: int):
        self.net = net
        self.i = i

    def __call__(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        full = self.net.insert(self.i, x, w)
        wi = self.net.internal_inputs(full)[self.i]
        return self.net.subsystems[self.i].dynamics(x, wi)


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class SubsystemSpec:
    index: int
    state_dim: int
    input_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state and input dimensions must be positive")

    def evaluate(self, x, w) -> np.ndarray:
        """Evaluate on one point or a batch, checking the output dimension."""
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        wb = np.atleast_2d(w)
        if xb.shape[1] != self.state_dim or wb.shape[1] != self.input_dim:
            raise ValueError(
                f"subsystem {self.index} expects x in R^{self.state_dim}, w in R^{self.input_dim}"
            )
        out = np.asarray(self.dynamics(xb, wb), dtype=float)
        if out.shape != xb.shape:
            raise ValueError(
                f"subsystem {self.index} dynamics returned shape {out.shape}, expected {xb.shape}"
            )
        return out[0] if single else out


def _as_coupling(m) -> sp.csr_matrix:
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=float)
    return sp.csr_matrix(as_mat(m))


@dataclass(frozen=True)
class NetworkSpec:
    """Interconnection of subsystems under ``[w_0; ...] = M [x_0; ...]``.

    ``topology`` is the ground-truth coupling used for simulation; if it is
    omitted, subsystems take the concatenation of all other states as input.
    ``topology_known`` states whether a certifier may use the coupling.
    """

    subsystems: tuple
    topology: sp.csr_matrix | None = None
    topology_known: bool = False
    name: str = "custom"

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if not subs:
            raise ValueError("a network needs at least one subsystem")
        object.__setattr__(self, "subsystems", subs)
        n = sum(s.state_dim for s in subs)
        if self.topology is None:
            for s in subs:
                if s.input_dim != n - s.state_dim:
                    raise ValueError(
                        "without a topology every subsystem must take the "
                        "concatenation of all other states as input"
                    )
            m = _concatenation_matrix([s.state_dim for s in subs])
            object.__setattr__(self, "topology", m)
            object.__setattr__(self, "topology_known", False)
        else:
            m = _as_coupling(self.topology)
            p = sum(s.input_dim for s in subs)
            if m.shape != (p, n):
                raise ValueError(f"coupling matrix must be {p}x{n}, got {m.shape}")
            object.__setattr__(self, "topology", m)

    @property
    def size(self) -> int:
        return len(self.subsystems)

    @property
    def state_dim(self) -> int:
        return sum(s.state_dim for s in self.subsystems)

    def state_slices(self) -> list[slice]:
        return _slices([s.state_dim for s in self.subsystems])

    def input_slices(self) -> list[slice]:
        return _slices([s.input_dim for s in self.subsystems])

    def internal_inputs(self, x: np.ndarray) -> list[np.ndarray]:
        """Split ``M x`` into per-subsystem internal inputs (batch rows)."""
        xb = np.atleast_2d(x)
        w = (self.topology @ xb.T).T
        return [w[:, s] for s in self.input_slices()]

    def others(self, i: int, x: np.ndarray) -> np.ndarray:
        """Concatenation ``[x_0; ...; x_{i-1}; x_{i+1}; ...]`` of batch rows."""
        xb = np.atleast_2d(x)
        sl = self.state_slices()[i]
        return np.hstack([xb[:, : sl.start], xb[:, sl.stop :]])

    def insert(self, i: int, xi: np.ndarray, rest: np.ndarray) -> np.ndarray:
        sl = self.state_slices()[i]
        xi = np.atleast_2d(xi)
        rest = np.atleast_2d(rest)
        return np.hstack([rest[:, : sl.start], xi, rest[:, sl.start :]])

    def step(self, x: np.ndarray) -> np.ndarray:
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        ws = self.internal_inputs(xb)
        out = np.empty_like(xb)
        for s, sl, w in zip(self.subsystems, self.state_slices(), ws):
            out[:, sl] = s.dynamics(xb[:, sl], w)
        return out[0] if np.ndim(x) == 1 else out

    def view(self, i: int, convention: str) -> SubsystemSpec:
        """The subsystem a certifier sees under an input convention."""
        sub = self.subsystems[i]
        if convention == "topology":
            return sub
        if convention == "concatenation":
            return SubsystemSpec(
                i, sub.state_dim, self.state_dim - sub.state_dim, _ConcatenatedView(self, i)
            )
        raise ValueError(f"unknown input convention {convention!r}")

    def local_inputs(self, i: int, x: np.ndarray, convention: str) -> np.ndarray:
        if convention == "topology":
            return self.internal_inputs(x)[i]
        return self.others(i, x)

    def coupling_dense(self) -> np.ndarray:
        return self.topology.toarray()


def _slices(dims) -> list[slice]:
    out, start = [], 0
    for d in dims:
        out.append(slice(start, start + d))
        start += d
    return out


def _concatenation_matrix(dims) -> sp.csr_matrix:
    n = sum(dims)
    rows = []
    for sl in _slices(dims):
        keep = [j for j in range(n) if not (sl.start <= j < sl.stop)]
        block = sp.lil_matrix((len(keep), n))
        for r, j in enumerate(keep):
            block[r, j] = 1.0
        rows.append(block.tocsr())
    return sp.vstack(rows, format="csr")


# --------------------------------------------------------------------------
# built-in case studies

TWO_SUBSYSTEM_MATRICES = {
    "A1": [[-0.1, -0.2], [-0.2, -0.1]],
    "B1": [[0.2, 0.0], [0.0, 0.2]],
    "A2": [[-0.5, 1.8], [-0.2, 1.01]],
    "B2": [[0.1, 0.0], [0.0, 0.1]],
}

RING_H = [[-0.1, 0.2], [0.15, 0.12]]


def two_subsystem() -> NetworkSpec:
    """Two linear subsystems in negative feedback, ``w_0 = -x_1``, ``w_1 = x_0``."""
    m = TWO_SUBSYSTEM_MATRICES
    subs = (
        SubsystemSpec(0, 2, 2, LinearDynamics(m["A1"], m["B1"])),
        SubsystemSpec(1, 2, 2, LinearDynamics(m["A2"], m["B2"])),
    )
    Z, I = np.zeros((2, 2)), np.eye(2)
    coupling = np.block([[Z, -I], [I, Z]])
    return NetworkSpec(subs, coupling, topology_known=True, name="two_subsystem")


def room_network(
    rooms: int = 20, phi: float = 0.1, theta: float = 0.2, adjacency="ring"
) -> NetworkSpec:
    """Room temperature network ``T_i+ = (1 - 2 phi - theta) T_i + phi w_i``.

    ``w_i`` is the sum of neighbouring temperatures; ``adjacency`` is
    ``"ring"``, ``"complete"`` or a 0/1 ``rooms x rooms`` matrix.
    """
    if rooms < 2:
        raise ValueError("room network needs at least two rooms")
    if phi <= 0 or theta <= 0:
        raise ValueError("phi and theta must be positive")
    a = 1.0 - 2.0 * phi - theta
    if not -1.0 < a < 1.0:
        raise ValueError(f"1 - 2 phi - theta = {a} must lie in (-1, 1)")
    if isinstance(adjacency, str):
        if adjacency == "ring":
            adj = sp.lil_matrix((rooms, rooms))
            for i in range(rooms):
                adj[i, (i - 1) % rooms] = 1.0
                adj[i, (i + 1) % rooms] = 1.0
            adj = adj.tocsr()
        elif adjacency == "complete":
            adj = sp.csr_matrix(np.ones((rooms, rooms)) - np.eye(rooms))
        else:
            raise ValueError(f"unknown adjacency {adjacency!r}")
    else:
        adj = _as_coupling(adjacency)
        if adj.shape != (rooms, rooms) or adj.diagonal().any():
            raise ValueError("custom adjacency must be rooms x rooms with zero diagonal")
    subs = tuple(SubsystemSpec(i, 1, 1, LinearDynamics([[a]], [[phi]])) for i in range(rooms))
    return NetworkSpec(subs, adj, topology_known=False, name="room_network")


def nonlinear_ring(size: int = 50, gamma: float = 0.1) -> NetworkSpec:
    """Unidirectional ring ``w_i = x_{i-1}`` (``w_0 = x_{M-1}``) of
    ``x_i+ = H F(x_i) + 0.1 w_i``."""
    if size < 2:
        raise ValueError("ring needs at least two subsystems")
    dyn = RingDynamics(RING_H, gamma, 0.1)
    subs = tuple(SubsystemSpec(i, 2, 2, dyn) for i in range(size))
    eye = sp.identity(2, format="csr")
    shift = sp.lil_matrix((size, size))
    for i in range(size):
        shift[i, (i - 1) % size] = 1.0
    coupling = sp.kron(shift.tocsr(), eye, format="csr")
    return NetworkSpec(subs, coupling, topology_known=True, name="nonlinear_ring")


def builtin_system(name: str, **params) -> NetworkSpec:
    builders = {
        "two_subsystem": two_subsystem,
        "room_network": room_network,
        "nonlinear_ring": nonlinear_ring,
    }
    if name not in builders:
        raise ValueError(f"unknown built-in system {name!r}; choose from {sorted(builders)}")
    return builders[name](**params)


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Trajectory:
    """Raw ``(x, w, f(x, w))`` triples for one subsystem, stored row-wise."""

    index: int
    states: np.ndarray
    inputs: np.ndarray
    next_states: np.ndarray
    seed: int | None = None
    source: str = ""

    def __post_init__(self):
        k = self.states.shape[0]
        if self.inputs.shape[0] != k or self.next_states.shape != self.states.shape:
            raise ValueError("trajectory arrays are not dimension-consistent")

    def __len__(self):
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def sphere_points(rng: np.random.Generator, count: int, dim: int, radius: float = 1.0):
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1)
    bad = norms == 0.0
    tries = 0
    while np.any(bad):
        if tries >= ZERO_NORM_RETRIES:
            raise RuntimeError("could not draw non-zero sphere points")
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(g, axis=1)
        bad = norms == 0.0
        tries += 1
    return radius * g / norms[:, None]


def sample_pairs(
    net: NetworkSpec,
    i: int,
    count: int,
    seed,
    sampling: str = "trajectory",
    convention: str | None = None,
    radius: float = 1.0,
    horizon: int = 1,
) -> Trajectory:
    """Collect ``count`` raw data triples for subsystem ``i``.

    ``"trajectory"`` rolls out the full interconnection from an initial
    state drawn uniformly on the sphere of ``radius`` and records one pair per
    rollout, at a step drawn uniformly from ``{0, ..., horizon - 1}``.
    ``"state_space"`` draws ``(x_i, w_i)`` uniformly on the sphere of the
    subsystem view and evaluates its dynamics directly.

    ``convention`` defaults to ``"topology"`` when the network's coupling is
    known and ``"concatenation"`` otherwise.
    """
    if convention is None:
        convention = "topology" if net.topology_known else "concatenation"
    if count < 1:
        raise ValueError("count must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    view = net.view(i, convention)
    sl = net.state_slices()[i]
    if sampling == "state_space":
        pts = sphere_points(rng, count, view.state_dim + view.input_dim, radius)
        x, w = pts[:, : view.state_dim], pts[:, view.state_dim :]
        f = view.evaluate(x, w)
    elif sampling == "trajectory":
        x = np.empty((count, view.state_dim))
        w = np.empty((count, view.input_dim))
        f = np.empty((count, view.state_dim))
        todo = np.arange(count)
        for _ in range(ZERO_NORM_RETRIES + 1):
            if todo.size == 0:
                break
            state = sphere_points(rng, todo.size, net.state_dim, radius)
            stops = rng.integers(0, horizon, size=todo.size)
            for k in range(int(stops.max()) + 1):
                hit = stops == k
                if np.any(hit):
                    x[todo[hit]] = state[hit, sl]
                    w[todo[hit]] = net.local_inputs(i, state[hit], convention)
                    f[todo[hit]] = net.step(state[hit])[:, sl]
                if k < stops.max():
                    state = net.step(state)
            norms = np.sqrt(np.sum(x[todo] ** 2, axis=1) + np.sum(w[todo] ** 2, axis=1))
            todo = todo[norms == 0.0]
        else:
            raise RuntimeError("zero-norm samples persisted after 100 retries")
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    return Trajectory(
        i, x, w, f, seed=seed if isinstance(seed, (int, np.integer)) else None,
        source=f"{net.name}:{sampling}:{convention}",
    )


# --------------------------------------------------------------------------
# checks and simulation


@dataclass(frozen=True)
class HomogeneityReport:
    passed: bool
    max_violation: float
    trials: int
    worst_lambda: float


def homogeneity_probe(
    spec: SubsystemSpec,
    trials: int = 200,
    lam_range: tuple[float, float] = (0.1, 10.0),
    tol: float = 1e-9,
    seed=0,
) -> HomogeneityReport:
    """Check ``f(lam x, lam w) = lam f(x, w)`` on random points.

    The violation is ``||f(lam x, lam w) - lam f(x, w)|| / max(1, ||lam f(x, w)||)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    lo, hi = lam_range
    if not 0 < lo <= hi:
        raise ValueError("lambda range must lie in (0, inf)")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((trials, spec.state_dim))
    w = rng.standard_normal((trials, spec.input_dim))
    lam = np.exp(rng.uniform(np.log(lo), np.log(hi), size=trials))
    base = lam[:, None] * spec.evaluate(x, w)
    scaled = spec.evaluate(lam[:, None] * x, lam[:, None] * w)
    viol = np.linalg.norm(scaled - base, axis=1) / np.maximum(1.0, np.linalg.norm(base, axis=1))
    k = int(np.argmax(viol))
    return HomogeneityReport(bool(viol[k] <= tol), float(viol[k]), trials, float(lam[k]))


def simulate_interconnection(net: NetworkSpec, x0, steps: int, cap: float = DIVERGENCE_CAP):
    """States ``x(0), ..., x(steps)`` of the interconnection."""
    x = as_vec(x0, net.state_dim)
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for k in range(steps):
        x = net.step(x)
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > cap:
            raise DivergenceError(k + 1, norm)
        out[k + 1] = x
    return out
