"""Probability simplex helpers: validation, Euclidean projection, weighted inner products.

All routines act on the last axis, so a stack of distributions (one per
state, one per sample, ...) is projected or validated in a single call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError

SIMPLEX_ATOL = 1e-12
RENORMALIZE_ATOL = 1e-9


def as_simplex(probs, atol: float = RENORMALIZE_ATOL) -> np.ndarray:
    """Validate ``probs`` as probability vectors along the last axis.

    Sums off by at most ``atol`` (and negative entries no smaller than
    ``-atol``) are absorbed by clipping and renormalizing; anything worse is
    an error. The returned array sums to one within 1e-12.
    """
    p = np.array(probs, dtype=float)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise InvalidInputError("a simplex vector needs at least one entry")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("simplex vector has non-finite entries")
    if np.any(p < -atol):
        raise InvalidInputError(f"negative probability {p.min():.3e}")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > atol):
        raise InvalidInputError(
            f"probabilities sum to {np.ravel(total)[np.argmax(np.abs(np.ravel(total) - 1))]:.12g}, not 1"
        )
    if np.any(p < 0) or np.any(np.abs(total - 1.0) > SIMPLEX_ATOL):
        p = np.clip(p, 0.0, None)
        p = p / p.sum(axis=-1, keepdims=True)
    return p


def uniform(n: int, batch_shape=()) -> np.ndarray:
    return np.full(tuple(batch_shape) + (n,), 1.0 / n)


def _project_standard(y: np.ndarray) -> np.ndarray:
    # sort-based exact projection, vectorized over leading axes
    n = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, n + 1, dtype=float)
    cond = u - css / ind > 0
    rho = cond.sum(axis=-1, keepdims=True)
    theta = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(y - theta, 0.0)


def project_simplex(x, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection onto ``{v : sum(v) = 1, v >= floor}``.

    Parameters
    ----------
    x : array_like
        Points to project; the last axis is the simplex dimension.
    floor : float
        Lower bound on every coordinate. ``floor * n`` must be below one.

    Returns
    -------
    ndarray
        The nearest feasible point for each row of ``x``.
    """
    y = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("cannot project non-finite input")
    n = y.shape[-1]
    if floor < 0 or floor * n >= 1.0:
        raise ConfigurationError(f"floor {floor} infeasible for {n} actions")
    if floor == 0.0:
        return _project_standard(y)
    scale = 1.0 - floor * n
    w = _project_standard((y - floor) / scale)
    return floor + scale * w


def project_simplex_scaled(x, d, floor: float = 0.0) -> np.ndarray:
    """Projection onto the floored simplex in the norm ``sum_k (v_k)^2 / d_k``.

    With ``d`` constant this is :func:`project_simplex`. The minimizer has
    the form ``max(floor, x - d * theta)``; ``theta`` is found exactly by
    scanning the sorted breakpoints.
    """
    x = np.asarray(x, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise InvalidInputError("cannot project non-finite input")
    if np.any(d <= 0):
        raise InvalidInputError("scaling weights must be positive")
    n = x.shape[-1]
    if floor < 0 or floor * n >= 1.0:
        raise ConfigurationError(f"floor {floor} infeasible for {n} actions")
    t = (x - floor) / d  # coordinate k sits above the floor iff theta < t_k
    order = np.argsort(-t, axis=-1)
    ts = np.take_along_axis(t, order, axis=-1)
    xs = np.take_along_axis(x, order, axis=-1)
    ds = np.take_along_axis(d, order, axis=-1)
    k = np.arange(1, n + 1)
    theta = (np.cumsum(xs, axis=-1) - 1.0 + floor * (n - k)) / np.cumsum(ds, axis=-1)
    nxt = np.concatenate([ts[..., 1:], np.full(ts.shape[:-1] + (1,), -np.inf)], axis=-1)
    ok = (theta < ts) & (theta >= nxt)
    # the first consistent segment; fall back to the last one for round-off
    j = np.where(ok.any(axis=-1), np.argmax(ok, axis=-1), n - 1)
    th = np.take_along_axis(theta, j[..., None], axis=-1)
    return np.maximum(floor, x - d * th)


@dataclass(frozen=True)
class WeightVector:
    """Per-player weights; expanded to the four blocks as (l1, l2, l1, l2)."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ConfigurationError(
                f"weights must be strictly positive, got ({self.lambda1}, {self.lambda2})"
            )

    def __iter__(self):
        return iter((self.lambda1, self.lambda2))

    @property
    def inf_norm(self) -> float:
        return max(self.lambda1, self.lambda2)

    @property
    def ratio(self) -> float:
        return self.lambda2 / self.lambda1

    def block_weights(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda1, self.lambda2)

    def scaled(self, c: float) -> "WeightVector":
        return WeightVector(c * self.lambda1, c * self.lambda2)


@dataclass(frozen=True)
class BlockLayout:
    """Sizes of the four stacked blocks (pi1, pi2, p1, p2)."""

    sizes: tuple[int, int, int, int]

    @classmethod
    def from_actions(cls, n1: int, n2: int) -> "BlockLayout":
        # p1 models player 2 (lives on A2); p2 models player 1 (lives on A1)
        return cls((n1, n2, n2, n1))

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def expand(self, lam: WeightVector) -> np.ndarray:
        """Per-coordinate weight vector."""
        return np.concatenate(
            [np.full(k, w) for k, w in zip(self.sizes, lam.block_weights())]
        )


def weighted_inner(u, v, lam: WeightVector, layout: BlockLayout) -> np.ndarray:
    """``sum_k lam_block(k) * u_k * v_k`` along the last axis."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != v.shape[-1] or u.shape[-1] != layout.total:
        raise InvalidInputError(
            f"length mismatch: {u.shape[-1]}, {v.shape[-1]} vs layout {layout.total}"
        )
    w = layout.expand(lam)
    return np.sum(w * u * v, axis=-1)


def weighted_norm(u, lam: WeightVector, layout: BlockLayout) -> np.ndarray:
    return np.sqrt(weighted_inner(u, u, lam, layout))
