"""Normalized sample sets, covering-radius estimation and sample files."""
from __future__ import annotations

import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln
from scipy.stats import norm, qmc

from .model import Trajectory

__all__ = [
    "Sample",
    "SampleSet",
    "CoveringEstimate",
    "SampleFileError",
    "normalize",
    "covering_radius",
    "sphere_probes",
    "spacing_constant",
    "write_samples",
    "read_samples",
    "read_raw",
]

UNIT_TOL = 1e-12
HEADER_TAG = "# dissipacert-samples v1"


@dataclass(frozen=True)
class Sample:
    x_hat: np.ndarray
    w_hat: np.ndarray
    f_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Normalized data for one subsystem, stored as row arrays."""

    index: int
    x_hat: np.ndarray
    w_hat: np.ndarray
    f_hat: np.ndarray
    seed: int | None = None
    source: str = ""

    def __post_init__(self):
        for name in ("x_hat", "w_hat", "f_hat"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-D array of rows")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = self.x_hat.shape[0]
        if k == 0:
            raise ValueError("a sample set must be nonempty")
        if self.w_hat.shape[0] != k or self.f_hat.shape != self.x_hat.shape:
            raise ValueError("sample arrays are not dimension-consistent")
        if not all(np.isfinite(a).all() for a in (self.x_hat, self.w_hat, self.f_hat)):
            raise ValueError("sample entries must be finite")
        dev = np.abs(np.linalg.norm(self.points, axis=1) - 1.0)
        if dev.max() > UNIT_TOL:
            bad = int(np.argmax(dev))
            raise ValueError(f"sample {bad} is not on the unit sphere (deviation {dev[bad]:.2e})")

    def __len__(self):
        return self.x_hat.shape[0]

    def __getitem__(self, z) -> Sample:
        return Sample(self.x_hat[z], self.w_hat[z], self.f_hat[z])

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (
            self.index == other.index
            and np.array_equal(self.x_hat, other.x_hat)
            and np.array_equal(self.w_hat, other.w_hat)
            and np.array_equal(self.f_hat, other.f_hat)
        )

    @property
    def count(self) -> int:
        return len(self)

    @property
    def state_dim(self) -> int:
        return self.x_hat.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_hat.shape[1]

    @property
    def points(self) -> np.ndarray:
        """Concatenated ``(x_hat, w_hat)`` rows."""
        return np.hstack([self.x_hat, self.w_hat])

    def subset(self, rows) -> "SampleSet":
        rows = np.asarray(rows)
        return SampleSet(
            self.index, self.x_hat[rows], self.w_hat[rows], self.f_hat[rows], self.seed, self.source
        )


def normalize(raw) -> SampleSet:
    """Project triples onto the unit sphere, scaling ``f`` by the same factor.

    Accepts a :class:`Trajectory` or an existing :class:`SampleSet`. Rows that
    are already unit length (within ``1e-12``) are left bit-for-bit unchanged,
    which makes the operation idempotent.
    """
    if isinstance(raw, SampleSet):
        x, w, f = raw.x_hat, raw.w_hat, raw.f_hat
    elif isinstance(raw, Trajectory):
        x, w, f = raw.states, raw.inputs, raw.next_states
    else:
        raise TypeError("normalize expects a Trajectory or SampleSet")
    scale = np.sqrt(np.sum(x * x, axis=1) + np.sum(w * w, axis=1))
    zero = np.flatnonzero(~(scale > 0))
    if zero.size:
        raise ValueError(f"raw triple {int(zero[0])} has zero norm and cannot be normalized")
    scale = np.where(np.abs(scale - 1.0) <= UNIT_TOL, 1.0, scale)[:, None]
    return SampleSet(raw.index, x / scale, w / scale, f / scale, raw.seed, raw.source)


# --------------------------------------------------------------------------
# covering radius


@dataclass(frozen=True)
class CoveringEstimate:
    """``epsilon = raw + probe_spacing_bound``, clipped to the sphere diameter."""

    epsilon: float
    raw: float
    probe_count: int
    probe_spacing_bound: float
    method: str
    worst_probe: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 2.0:
            raise ValueError("epsilon must lie in [0, 2]")


SOBOL_MAX_DIM = 64
KDTREE_MAX_DIM = 8


def spacing_constant(dim: int) -> float:
    """Constant ``c`` in the probe-spacing bound ``c * probes**(-1/(dim-1))``.

    Covering ``S^{dim-1}`` (area ``A``) with ``P`` caps of radius ``h`` (area
    about ``V h^{dim-1}``, ``V`` the unit ``(dim-1)``-ball volume) needs
    ``h ~ (A / (V P))^{1/(dim-1)}``. On the circle this is exactly the
    worst-case chord bound ``pi / P`` of equispaced probes; above that a safety
    factor of 2 absorbs the irregularity of low-discrepancy point sets.
    """
    if dim < 2:
        raise ValueError("sphere dimension must be at least 2")
    k = dim - 1
    log_area = math.log(2.0) + (dim / 2) * math.log(math.pi) - gammaln(dim / 2)
    log_ball = (k / 2) * math.log(math.pi) - gammaln(k / 2 + 1)
    safety = 1.0 if dim == 2 else 2.0
    return safety * math.exp((log_area - log_ball) / k)


def sphere_probes(count: int, dim: int, seed=None) -> tuple[np.ndarray, str]:
    """Deterministic low-discrepancy points on ``S^{dim-1}``."""
    if count < 1:
        raise ValueError("probe count must be at least 1")
    rng = np.random.default_rng(seed)
    if dim == 2:
        ang = 2.0 * np.pi * (np.arange(count) + rng.uniform()) / count
        return np.column_stack([np.cos(ang), np.sin(ang)]), "equispaced-circle"
    if dim == 3:
        golden = math.pi * (3.0 - math.sqrt(5.0))
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(1.0 - z * z)
        phi = golden * np.arange(count) + 2.0 * np.pi * rng.uniform()
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z]), "fibonacci-sphere"
    if dim <= SOBOL_MAX_DIM:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = qmc.Sobol(dim, scramble=True, seed=rng).random(count)
        g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        method = "sobol-gaussian"
    else:
        g = rng.standard_normal((count, dim))
        method = "random-gaussian"
    return g / np.linalg.norm(g, axis=1, keepdims=True), method


def _nearest_distances(probes: np.ndarray, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    if points.shape[1] <= KDTREE_MAX_DIM:
        dist, _ = cKDTree(points).query(probes, k=1)
        return dist
    out = np.empty(probes.shape[0])
    pts_sq = np.sum(points * points, axis=1)
    for start in range(0, probes.shape[0], chunk):
        u = probes[start : start + chunk]
        d2 = np.sum(u * u, axis=1)[:, None] + pts_sq[None, :] - 2.0 * (u @ points.T)
        out[start : start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def covering_radius(s: SampleSet, probes: int = 65536, seed=0) -> CoveringEstimate:
    """Over-approximate the max-min distance from the sphere to the data."""
    pts = s.points
    dim = pts.shape[1]
    if dim == 1:
        # S^0 = {-1, +1}: exact.
        has = {float(np.sign(v)) for v in pts[:, 0]}
        eps = 0.0 if has == {1.0, -1.0} else 2.0
        return CoveringEstimate(eps, eps, 2, 0.0, "exact-S0")
    u, method = sphere_probes(probes, dim, seed)
    dist = _nearest_distances(u, pts)
    k = int(np.argmax(dist))
    raw = float(dist[k])
    bound = spacing_constant(dim) * probes ** (-1.0 / (dim - 1))
    return CoveringEstimate(
        min(2.0, raw + bound), raw, probes, bound, method, tuple(float(v) for v in u[k])
    )


# --------------------------------------------------------------------------
# files


class SampleFileError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def _columns(n: int, p: int) -> list[str]:
    return (
        [f"x_{j + 1}" for j in range(n)]
        + [f"w_{j + 1}" for j in range(p)]
        + [f"fx_{j + 1}" for j in range(n)]
    )


def write_samples(s, path) -> Path:
    """Write a :class:`SampleSet` (normalized) or :class:`Trajectory` (raw).

    The file is written to a temporary sibling and renamed into place.
    """
    if isinstance(s, SampleSet):
        x, w, f, normalized = s.x_hat, s.w_hat, s.f_hat, 1
    elif isinstance(s, Trajectory):
        x, w, f, normalized = s.states, s.inputs, s.next_states, 0
    else:
        raise TypeError("write_samples expects a SampleSet or Trajectory")
    n, p = x.shape[1], w.shape[1]
    header = f"{HEADER_TAG} subsystem={s.index} n={n} p={p} normalized={normalized}"
    if s.seed is not None:
        header += f" seed={s.seed}"
    if s.source:
        header += " source=" + "_".join(str(s.source).split())
    lines = [header, ",".join(_columns(n, p))]
    rows = np.hstack([x, w, f])
    lines.extend(",".join(repr(float(v)) for v in row) for row in rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def _parse(path):
    path = Path(path)
    try:
        text = path.read_text().splitlines()
    except OSError as exc:
        raise SampleFileError(path, 0, f"cannot read sample file: {exc}") from exc
    if not text or not text[0].startswith(HEADER_TAG):
        raise SampleFileError(path, 1, "missing dissipacert-samples v1 header")
    meta = {}
    for tok in text[0][len(HEADER_TAG) :].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise SampleFileError(path, 1, f"malformed header token {tok!r}")
        meta[key] = val
    try:
        index, n, p = int(meta["subsystem"]), int(meta["n"]), int(meta["p"])
        normalized = meta.get("normalized", "0") == "1"
        seed = int(meta["seed"]) if "seed" in meta else None
    except (KeyError, ValueError) as exc:
        raise SampleFileError(path, 1, f"bad header field: {exc}") from exc
    if n < 1 or p < 1:
        raise SampleFileError(path, 1, "dimensions must be positive")
    if len(text) < 2 or [c.strip() for c in text[1].split(",")] != _columns(n, p):
        raise SampleFileError(path, 2, "column header does not match n and p")
    width = 2 * n + p
    rows = []
    for lineno, line in enumerate(text[2:], start=3):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise SampleFileError(
                path, lineno, f"dimension mismatch: expected {width} values, found {len(cells)}"
            )
        try:
            vals = [float(c) for c in cells]
        except ValueError as exc:
            raise SampleFileError(path, lineno, f"malformed value: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise SampleFileError(path, lineno, "non-finite value")
        xw = math.sqrt(sum(v * v for v in vals[: n + p]))
        if xw == 0.0:
            raise SampleFileError(path, lineno, "zero-norm (x, w)")
        if normalized and abs(xw - 1.0) > 1e-9:
            raise SampleFileError(path, lineno, f"normalized row has norm {xw!r}")
        rows.append(vals)
    if not rows:
        raise SampleFileError(path, len(text), "no data rows")
    arr = np.array(rows)
    return index, n, p, normalized, seed, meta.get("source", ""), arr


def read_raw(path) -> Trajectory:
    index, n, p, normalized, seed, source, arr = _parse(path)
    return Trajectory(index, arr[:, :n], arr[:, n : n + p], arr[:, n + p :], seed, source)


def read_samples(path) -> SampleSet:
    """Read a sample file; raw files are normalized on load."""
    index, n, p, normalized, seed, source, arr = _parse(path)
    x, w, f = arr[:, :n], arr[:, n : n + p], arr[:, n + p :]
    if normalized:
        try:
            return SampleSet(index, x, w, f, seed, source)
        except ValueError:
            pass  # tolerate rounding from third-party writers
    return normalize(Trajectory(index, x, w, f, seed, source))
