"""Bimatrix games viewed as a four-player game.

Player ``i`` picks ``pi_i`` and its imaginary adversary picks ``p_i`` on the
opponent's action set. Payoff matrices follow the bimatrix convention: both
``R1`` and ``R2`` are indexed ``[a1, a2]``. Player 2 therefore sees its own
payoffs as ``R2.T``; :func:`own_payoff` does that bookkeeping.

Player indices are 0 and 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidInputError
from .regularizers import (
    DKind,
    RiskProfile,
    d_grad_p,
    d_value,
    nu_grad,
    nu_value,
    operating_floor,
)
from .simplex import BlockLayout, as_simplex, project_simplex, uniform


@dataclass(frozen=True)
class PayoffPair:
    """Payoff matrices ``R1[a1, a2]`` and ``R2[a1, a2]``; leading axes batch games."""

    R1: np.ndarray
    R2: np.ndarray

    def __post_init__(self):
        R1 = np.asarray(self.R1, dtype=float)
        R2 = np.asarray(self.R2, dtype=float)
        if R1.shape != R2.shape or R1.ndim < 2:
            raise InvalidInputError(f"payoff shapes {R1.shape} and {R2.shape} differ")
        if not (np.all(np.isfinite(R1)) and np.all(np.isfinite(R2))):
            raise InvalidInputError("payoffs must be finite")
        object.__setattr__(self, "R1", R1)
        object.__setattr__(self, "R2", R2)

    @property
    def n_actions(self) -> tuple[int, int]:
        return self.R1.shape[-2], self.R1.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.R1.shape[:-2]

    @property
    def span(self) -> float:
        """Largest span (max minus min entry) over both matrices and all batched games."""
        return float(max(np.ptp(self.R1), np.ptp(self.R2)))

    def max_diff(self, other: "PayoffPair") -> float:
        return float(max(np.max(np.abs(self.R1 - other.R1)), np.max(np.abs(self.R2 - other.R2))))

    def shifted(self, c1: float, c2: float = None) -> "PayoffPair":
        return PayoffPair(self.R1 + c1, self.R2 + (c1 if c2 is None else c2))

    def __getitem__(self, idx) -> "PayoffPair":
        return PayoffPair(self.R1[idx], self.R2[idx])


def own_payoff(R: PayoffPair, i: int) -> np.ndarray:
    """Player ``i``'s payoffs indexed ``[a_i, a_-i]``."""
    return R.R1 if i == 0 else np.swapaxes(R.R2, -1, -2)


@dataclass
class JointProfile:
    """Joint strategy ``(pi1, pi2, p1, p2)`` of the four-player game.

    ``p1`` lives on player 2's actions and ``p2`` on player 1's. Arrays may
    carry leading batch axes (one profile per state, for instance). The same
    container also holds gradient blocks, so no simplex check happens on
    construction; call :meth:`validate` when that matters.
    """

    pi1: np.ndarray
    pi2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    @classmethod
    def uniform(cls, n1: int, n2: int, batch_shape=()) -> "JointProfile":
        return cls(uniform(n1, batch_shape), uniform(n2, batch_shape),
                   uniform(n2, batch_shape), uniform(n1, batch_shape))

    @classmethod
    def from_flat(cls, x, n1: int, n2: int) -> "JointProfile":
        x = np.asarray(x, dtype=float)
        a, b, c = n1, n1 + n2, n1 + 2 * n2
        return cls(x[..., :a].copy(), x[..., a:b].copy(), x[..., b:c].copy(), x[..., c:].copy())

    @property
    def n_actions(self) -> tuple[int, int]:
        return self.pi1.shape[-1], self.pi2.shape[-1]

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout.from_actions(*self.n_actions)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.pi1.shape[:-1]

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.pi1, self.pi2, self.p1, self.p2

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks(), axis=-1)

    def copy(self) -> "JointProfile":
        return JointProfile(*(b.copy() for b in self.blocks()))

    def player(self, i: int):
        """``(pi_i, pi_-i, p_i)`` for player ``i``."""
        if i == 0:
            return self.pi1, self.pi2, self.p1
        return self.pi2, self.pi1, self.p2

    def distance(self, other: "JointProfile") -> np.ndarray:
        """Euclidean distance over all four blocks, per batch element."""
        return np.linalg.norm(self.flat() - other.flat(), axis=-1)

    def max_abs_diff(self, other: "JointProfile") -> float:
        return float(np.max(np.abs(self.flat() - other.flat())))

    def __getitem__(self, idx) -> "JointProfile":
        return JointProfile(*(b[idx] for b in self.blocks()))

    def validate(self, floor: float = 0.0) -> "JointProfile":
        blocks = [as_simplex(b) for b in self.blocks()]
        if floor > 0 and any(np.any(b < floor * (1 - 1e-9)) for b in blocks):
            raise InvalidInputError(f"profile has entries below the floor {floor}")
        return JointProfile(*blocks)


def project_profile(z: JointProfile, floor: float = 0.0) -> JointProfile:
    return JointProfile(*(project_simplex(b, floor) for b in z.blocks()))


def default_floor(R: PayoffPair, profile: RiskProfile) -> float:
    return operating_floor(profile, R.span, R.n_actions)


def objective_J(i: int, z: JointProfile, R: PayoffPair, profile: RiskProfile) -> np.ndarray:
    """Cost of player ``i`` in the four-player game.

    ``-pi_i^T R_i p_i - D_i(p_i, pi_-i) / tau_i + eps_i nu_i(pi_i)``. The
    adversary's cost is exactly the negative of this.
    """
    pi_i, pi_o, p_i = z.player(i)
    Ri = own_payoff(R, i)
    bilinear = np.einsum("...a,...ab,...b->...", pi_i, Ri, p_i)
    kind = profile.kind
    return (-bilinear - d_value(kind, p_i, pi_o) / profile.tau[i]
            + profile.eps[i] * nu_value(kind, pi_i))


def gradient_operator(z: JointProfile, R: PayoffPair, profile: RiskProfile) -> JointProfile:
    """Stacked gradients: each player of its cost, each adversary of minus that cost."""
    kind, eps, tau = profile.kind, profile.eps, profile.tau
    R1, R2own = own_payoff(R, 0), own_payoff(R, 1)
    g_pi1 = -np.einsum("...ab,...b->...a", R1, z.p1) + eps[0] * nu_grad(kind, z.pi1)
    g_pi2 = -np.einsum("...ab,...b->...a", R2own, z.p2) + eps[1] * nu_grad(kind, z.pi2)
    g_p1 = np.einsum("...ab,...a->...b", R1, z.pi1) + d_grad_p(kind, z.p1, z.pi2) / tau[0]
    g_p2 = np.einsum("...ab,...a->...b", R2own, z.pi2) + d_grad_p(kind, z.p2, z.pi1) / tau[1]
    return JointProfile(g_pi1, g_pi2, g_p1, g_p2)


# -- inner adversary problem -------------------------------------------------
#
# For fixed pi_i the adversary maximizes  h(p) = -c.p - D(p, q) / tau  with
# c = R_i^T pi_i and q = pi_-i, over the floored simplex.


def _adversary_objective(kind, c, q, tau, p):
    return -np.sum(c * p, axis=-1) - d_value(kind, p, q) / tau


def adversary_ascent(kind, c, q, tau: float, floor: float, tol: float = 1e-10,
                     max_iter: int = 100_000, p0=None):
    """Projected gradient ascent with backtracking for the adversary.

    Works on any batch of problems at once (rows of ``c`` and ``q``). Stops
    when every row's accepted step moves less than ``tol``.

    Returns
    -------
    p : ndarray
        Maximizers, same shape as ``c``.
    value : ndarray
        ``h(p)`` per row.
    """
    c = np.asarray(c, dtype=float)
    q = np.asarray(q, dtype=float)
    c, q = np.broadcast_arrays(c, q)
    p = project_simplex(q if p0 is None else p0, floor)
    step = np.full(c.shape[:-1] + (1,), float(tau))
    hp = _adversary_objective(kind, c, q, tau, p)
    active = np.ones(c.shape[:-1], dtype=bool)
    residual = np.inf
    for _ in range(max_iter):
        g = -c - d_grad_p(kind, p, q) / tau
        while True:
            cand = project_simplex(p + step * g, floor)
            d = cand - p
            hc = _adversary_objective(kind, c, q, tau, cand)
            model = hp + np.sum(g * d, axis=-1) - np.sum(d * d, axis=-1) / (2 * step[..., 0])
            ok = hc >= model - 1e-14 * (1 + np.abs(hp))
            bad = active & ~ok
            if not np.any(bad):
                break
            step[bad] *= 0.5
        move = np.linalg.norm(d, axis=-1)
        p = np.where(active[..., None], cand, p)
        hp = np.where(active, hc, hp)
        active = active & (move > tol)
        residual = float(np.max(move))
        if not np.any(active):
            return p, hp
        step[active] *= 1.5
    raise ConvergenceError("adversary ascent did not converge", residual)


def adversary_exact(kind, c, q, tau: float, floor: float, iters: int = 200):
    """Adversary maximizer from the KKT conditions, by bisection on the multiplier.

    Independent of :func:`adversary_ascent`; used as a cross-check and by
    the brute-force oracle.
    """
    c = np.asarray(c, dtype=float)
    q = np.asarray(q, dtype=float)
    c, q = np.broadcast_arrays(c, q)
    logq = np.log(q)
    dk = kind.d if hasattr(kind, "d") else DKind(kind)
    if dk is DKind.KL:
        def p_of(nu):
            return np.maximum(floor, np.exp(logq - tau * (c + nu[..., None]) - 1.0))
        lo = np.max((logq - 1.0) / tau - c, axis=-1)
        hi = lo + np.log(c.shape[-1]) / tau
    else:
        def p_of(nu):
            return np.maximum(floor, q / (tau * (c + nu[..., None])))
        lo = np.max(q / tau - c, axis=-1)
        hi = np.max(c.shape[-1] * q / tau - c, axis=-1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = p_of(mid).sum(axis=-1) > 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
            break
    p = p_of(0.5 * (lo + hi))
    p = p / p.sum(axis=-1, keepdims=True)
    return p, _adversary_objective(kind, c, q, tau, p)


def risk_adjusted_cost(i: int, pi_i, pi_other, R: PayoffPair, profile: RiskProfile,
                       floor: float, tol: float = 1e-10, exact: bool = False) -> np.ndarray:
    """``f_i(pi_i, pi_-i)``: player ``i``'s cost after the adversary's best reply.

    ``pi_i`` may carry extra leading axes beyond those of ``R`` (e.g. a set of
    candidate deviations); they broadcast against the payoff batch.
    """
    Ri = own_payoff(R, i)
    pi_i = np.asarray(pi_i, dtype=float)
    c = np.einsum("...ab,...a->...b", Ri, pi_i)
    q = np.broadcast_to(pi_other, c.shape)
    solver = adversary_exact if exact else adversary_ascent
    if exact:
        _, h = solver(profile.kind, c, q, profile.tau[i], floor)
    else:
        _, h = solver(profile.kind, c, q, profile.tau[i], floor, tol=tol)
    return h + profile.eps[i] * nu_value(profile.kind, pi_i)


def rqe_gap(z: JointProfile, R: PayoffPair, profile: RiskProfile, n_probe: int = 200,
            seed: int = 0, floor: float = None, tol: float = 1e-10, inner: str = "exact") -> np.ndarray:
    """Largest unilateral improvement found among random deviations.

    For each player, ``n_probe`` deviations are drawn from a flat Dirichlet
    and pushed onto the floored simplex. The inner adversary problem is
    solved from its KKT conditions (``inner="exact"``) or by projected
    gradient ascent (``inner="ascent"``); the latter can be slow on stage
    games whose adversary sits close to the floor. A value at or below zero (up to the
    inner tolerance) means no profitable deviation was found. Batched games
    give one gap per game.
    """
    if floor is None:
        floor = default_floor(R, profile)
    if inner not in ("exact", "ascent"):
        raise ValueError("inner must be 'exact' or 'ascent'")
    exact = inner == "exact"
    rng = np.random.default_rng(seed)
    batch = R.batch_shape
    gaps = []
    for i in (0, 1):
        pi_i, pi_o, _ = z.player(i)
        n_i = pi_i.shape[-1]
        base = risk_adjusted_cost(i, pi_i, pi_o, R, profile, floor, tol, exact)
        dev = project_simplex(rng.dirichlet(np.ones(n_i), size=(n_probe,) + batch), floor)
        dev = np.moveaxis(dev, 0, -2)  # batch..., probe, n_i
        cost = _deviation_costs(i, dev, pi_o, R, profile, floor, tol, exact)
        gaps.append(base - cost.min(axis=-1))
    gap = np.maximum(gaps[0], gaps[1])
    return gap if batch else float(gap)


def _deviation_costs(i, dev, pi_o, R, profile, floor, tol, exact=False):
    # insert a probe axis into the payoffs and the opponent policy
    Rp = PayoffPair(R.R1[..., None, :, :], R.R2[..., None, :, :])
    return risk_adjusted_cost(i, dev, np.asarray(pi_o)[..., None, :], Rp, profile, floor, tol, exact)
