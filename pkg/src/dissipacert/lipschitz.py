"""Lipschitz constants of scalar functions of the data by extreme-value fitting.

For ``sigma`` blocks, ``rho`` recorded sample pairs at distance at most
``alpha`` are drawn, their slopes ``|h(a) - h(b)| / ||a - b||`` computed, and
the block maximum kept. A reverse Weibull distribution is fitted to the block
maxima by maximum likelihood; its location (right endpoint of the support) is
the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .data import SampleSet
from .scp import StorageFn

__all__ = [
    "SlopeConfig",
    "WeibullFit",
    "LipschitzError",
    "LipschitzEstimate",
    "admissible_pairs",
    "widen_alpha",
    "slope_blocks",
    "box_slope_blocks",
    "fit_reverse_weibull",
    "estimate_lipschitz",
    "estimate_L1",
    "estimate_L2",
    "h_L1",
    "h_L2",
]


class LipschitzError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeConfig:
    rho: int = 500
    sigma: int = 50
    alpha: float = 0.05
    seed: int = 0
    fallback_margin: float = 0.05
    max_iter: int = 4000

    def __post_init__(self):
        if self.rho < 2:
            raise ValueError("rho must be at least 2")
        if self.sigma < 3:
            raise ValueError("sigma must be at least 3 (the fit needs three maxima)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.fallback_margin < 0:
            raise ValueError("fallback margin must be non-negative")


@dataclass(frozen=True)
class WeibullFit:
    location: float
    scale: float
    shape: float
    log_likelihood: float
    converged: bool
    degenerate: bool = False


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    fit: WeibullFit
    max_slope: float
    alpha: float
    pair_count: int


def admissible_pairs(points: np.ndarray, alpha: float) -> np.ndarray:
    """Index pairs ``(a, b)``, ``a < b``, with ``0 < ||p_a - p_b|| <= alpha``."""
    pairs = cKDTree(points).query_pairs(alpha, output_type="ndarray")
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    dist = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    return pairs[dist > 0]


def widen_alpha(points: np.ndarray, alpha: float, min_pairs: int, limit: float = 2.0):
    """Double ``alpha`` until at least ``min_pairs`` admissible pairs exist."""
    while True:
        pairs = admissible_pairs(points, alpha)
        if len(pairs) >= min_pairs or alpha >= limit:
            return alpha, pairs
        alpha = min(limit, 2.0 * alpha)


def _block_maxima(slope_of, pairs: np.ndarray, cfg: SlopeConfig) -> np.ndarray:
    if len(pairs) < cfg.rho:
        raise LipschitzError(
            f"only {len(pairs)} sample pairs within alpha={cfg.alpha:g}; "
            f"need rho={cfg.rho}: increase alpha or collect more data"
        )
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.sigma)
    out = np.empty(cfg.sigma)
    for j, child in enumerate(children):
        rng = np.random.default_rng(child)
        pick = pairs[rng.choice(len(pairs), size=cfg.rho, replace=False)]
        out[j] = float(np.max(slope_of(pick[:, 0], pick[:, 1])))
    return out


def slope_blocks(h, s: SampleSet, cfg: SlopeConfig, pairs: np.ndarray | None = None) -> np.ndarray:
    """Block maxima of pair slopes for ``h`` (values per sample or a callable on ``s``).

    Block ``j`` uses its own child seed of ``cfg.seed``, so raising ``sigma``
    keeps the earlier blocks unchanged.
    """
    vals = np.asarray(h(s) if callable(h) else h, dtype=float).ravel()
    if vals.size != len(s):
        raise ValueError("h must give one value per sample")
    pts = s.points
    if pairs is None:
        pairs = admissible_pairs(pts, cfg.alpha)

    def slope(a, b):
        return np.abs(vals[a] - vals[b]) / np.linalg.norm(pts[a] - pts[b], axis=1)

    return _block_maxima(slope, pairs, cfg)


def box_slope_blocks(
    features: np.ndarray, s: SampleSet, cfg: SlopeConfig, q_max: float, pairs=None
) -> np.ndarray:
    """Worst-case slopes over ``|q_j| <= q_max`` for ``h = features @ q``.

    ``h`` is linear in ``q``, so the worst vertex gives ``q_max * ||dphi||_1``.
    """
    phi = np.asarray(features, dtype=float)
    pts = s.points
    if pairs is None:
        pairs = admissible_pairs(pts, cfg.alpha)

    def slope(a, b):
        return q_max * np.sum(np.abs(phi[a] - phi[b]), axis=1) / np.linalg.norm(pts[a] - pts[b], axis=1)

    return _block_maxima(slope, pairs, cfg)


def _neg_profile(theta, t, top, spread):
    """Negative log-likelihood with the scale maximized out.

    For fixed location and shape the scale MLE is ``mean(d**k)**(1/k)`` with
    ``d = loc - t``, which leaves a 2-D search over ``(a, log_k)``.
    """
    a, log_k = theta
    loc = top + np.exp(a) * spread
    k = 1.0 + np.exp(log_k)
    d = loc - t
    if not np.all(d > 0) or not np.isfinite(d).all():
        return np.inf
    n = d.size
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        log_s = np.log(np.mean(d**k)) / k
        val = -(n * np.log(k) - n * k * log_s + (k - 1.0) * float(np.sum(np.log(d))) - n)
    return float(val) if np.isfinite(val) else np.inf


def _profile_scale(theta, t, top, spread) -> float:
    a, log_k = theta
    k = 1.0 + np.exp(log_k)
    return float(np.mean((top + np.exp(a) * spread - t) ** k) ** (1.0 / k))


def fit_reverse_weibull(maxima, fallback_margin: float = 0.05, max_iter: int = 4000) -> WeibullFit:
    """Maximum-likelihood three-parameter reverse Weibull fit.

    CDF ``exp(-((loc - t) / scale)**shape)`` for ``t <= loc``. The location is
    parametrized as ``max(maxima) + exp(a) * spread`` so it always lies above
    every observation, and the shape is kept at least 1 (below 1 the
    likelihood is unbounded as the location approaches the largest maximum).
    If the optimizer does not converge the location falls back to
    ``max * (1 + fallback_margin)``.
    """
    t = np.asarray(maxima, dtype=float).ravel()
    if t.size < 3:
        raise LipschitzError("a reverse Weibull fit needs at least three maxima")
    if not np.isfinite(t).all():
        raise LipschitzError("block maxima must be finite")
    top, bottom = float(t.max()), float(t.min())
    spread = top - bottom
    if spread <= 1e-14 * max(1.0, abs(top)):
        return WeibullFit(top, 0.0, 1.0, np.inf, True, degenerate=True)
    fallback = top + fallback_margin * abs(top) if top != 0 else fallback_margin * spread
    if np.unique(t).size < 3:
        return WeibullFit(fallback, spread, 1.0, -np.inf, False)
    bounds = [(-25.0, 5.0), (-12.0, 6.0)]
    # coarse pass from several starts, then one tight polish from the best
    best = None
    for a0 in (np.log(0.05), np.log(0.5), np.log(2.0)):
        for k0 in (np.log(0.5), np.log(2.0)):
            res = minimize(
                _neg_profile, np.array([a0, k0]), args=(t, top, spread), method="Nelder-Mead",
                bounds=bounds, options={"maxiter": max_iter // 10, "xatol": 1e-4, "fatol": 1e-6},
            )
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
    if best is not None:
        best = minimize(
            _neg_profile, best.x, args=(t, top, spread), method="Nelder-Mead", bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-9, "fatol": 1e-10},
        )
    if best is None or not np.isfinite(best.fun):
        return WeibullFit(fallback, spread, 1.0, -np.inf, False)
    a, log_k = best.x
    loc = top + np.exp(a) * spread
    scale = _profile_scale(best.x, t, top, spread)
    shape = 1.0 + float(np.exp(log_k))
    if not best.success or not np.isfinite(loc):
        return WeibullFit(max(fallback, top), scale, shape, -best.fun, False)
    return WeibullFit(float(loc), scale, shape, -float(best.fun), True)


def h_L1(storage: StorageFn):
    """``h = S(q, x_hat)``."""
    return lambda s: storage.template.features(s.x_hat) @ storage.q


def h_L2(storage: StorageFn):
    """``h = S(q, f_hat) - S(q, x_hat)``."""
    tpl = storage.template
    return lambda s: (tpl.features(s.f_hat) - tpl.features(s.x_hat)) @ storage.q


def estimate_lipschitz(h, s: SampleSet, cfg: SlopeConfig, pairs=None) -> LipschitzEstimate:
    pts = s.points
    if pairs is None:
        pairs = admissible_pairs(pts, cfg.alpha)
    maxima = slope_blocks(h, s, cfg, pairs)
    fit = fit_reverse_weibull(maxima, cfg.fallback_margin, cfg.max_iter)
    value = max(fit.location, float(maxima.max()))
    return LipschitzEstimate(value, fit, float(maxima.max()), cfg.alpha, len(pairs))


def _features(storage: StorageFn, s: SampleSet, which: int):
    tpl = storage.template
    return tpl.features(s.x_hat) if which == 1 else tpl.features(s.f_hat) - tpl.features(s.x_hat)


def _estimate(storage, s, cfg, which, box_q_max, pairs):
    if box_q_max is None:
        h = h_L1(storage) if which == 1 else h_L2(storage)
        return estimate_lipschitz(h, s, cfg, pairs)
    if pairs is None:
        pairs = admissible_pairs(s.points, cfg.alpha)
    maxima = box_slope_blocks(_features(storage, s, which), s, cfg, box_q_max, pairs)
    fit = fit_reverse_weibull(maxima, cfg.fallback_margin, cfg.max_iter)
    return LipschitzEstimate(max(fit.location, float(maxima.max())), fit, float(maxima.max()), cfg.alpha, len(pairs))


def estimate_L1(s: SampleSet, storage: StorageFn, cfg: SlopeConfig, box_q_max=None, pairs=None):
    """Lipschitz estimate of ``S(q, x)`` over the joint ``(x, w)`` metric.

    With ``box_q_max`` the slopes are worst case over the coefficient box, so
    the estimate is valid before ``q`` is known.
    """
    return _estimate(storage, s, cfg, 1, box_q_max, pairs)


def estimate_L2(s: SampleSet, storage: StorageFn, cfg: SlopeConfig, box_q_max=None, pairs=None):
    """Lipschitz estimate of ``S(q, f(x, w)) - S(q, x)``."""
    return _estimate(storage, s, cfg, 2, box_q_max, pairs)
