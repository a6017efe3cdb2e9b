"""Monotonicity certificates for the four-player game.

The symmetrized, lambda-weighted Jacobian of the gradient operator splits
into one block per player ``i``: the player's own regularizer curvature on
``pi_i`` coupled with the curvature of the opponent adversary's penalty
``D_-i(p_-i, pi_i)``, which lives on the same action set. The bilinear payoff
terms cancel, so none of this depends on the payoffs. Every block is
diagonal, which reduces positive semidefiniteness to a family of 2x2
problems, one per action.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .normal_form import JointProfile, PayoffPair, gradient_operator
from .regularizers import DKind, RiskProfile, d_hess_blocks, nu_hess_diag
from .simplex import WeightVector, project_simplex, weighted_inner


class Evidence(enum.Enum):
    CLOSED_FORM = "ClosedForm"
    BLOCK_PSD = "BlockPSD"
    SAMPLED = "Sampled"


@dataclass(frozen=True)
class MonotonicityCertificate:
    """Outcome of :func:`certify`.

    ``mu`` is the strong-monotonicity modulus in the lambda-weighted
    inner product (zero when only strict monotonicity is claimed). With
    sampled evidence it is an estimate, not a proof. ``witness`` holds a
    profile where some block has a negative eigenvalue, if one was found.
    """

    is_strict: bool
    is_strong: bool
    mu: float
    lam: WeightVector
    evidence: Evidence
    min_eig: float = float("nan")
    witness: Optional[JointProfile] = None

    def __post_init__(self):
        if self.is_strong and not (self.is_strict and self.mu > 0):
            raise ValueError("a strong certificate needs is_strict and mu > 0")


def closed_form_test(profile: RiskProfile) -> bool:
    """``16 eps1 eps2 tau1 tau2 > 1``."""
    return 16.0 * profile.product > 1.0


def lambda_interval(profile: RiskProfile) -> tuple[float, float]:
    """Admissible range of ``lambda2 / lambda1`` for the closed-form argument.

    Player blocks are semidefinite on the whole simplex when
    ``4 eps_i tau_-i >= lambda_-i / lambda_i`` for both players.
    """
    (e1, e2), (t1, t2) = profile.eps, profile.tau
    return 1.0 / (4.0 * e2 * t1), 4.0 * e1 * t2


def default_lambda(profile: RiskProfile) -> WeightVector:
    """Geometric midpoint of :func:`lambda_interval`, scaled to unit max-norm."""
    lo, hi = lambda_interval(profile)
    r = float(np.sqrt(lo * hi))
    return WeightVector(1.0, r) if r <= 1 else WeightVector(1.0 / r, 1.0)


def _block_entries(i, lam: WeightVector, pi_i, p_other, profile: RiskProfile):
    """Diagonals ``(a, b, c)`` of ``M_i = [[diag a, diag b], [diag b, diag c]]``."""
    lam_i, lam_o = (lam.lambda1, lam.lambda2) if i == 0 else (lam.lambda2, lam.lambda1)
    eps_i, tau_o = profile.eps[i], profile.tau[1 - i]
    kind = profile.kind
    hb = d_hess_blocks(kind, p_other, pi_i)
    a = 2.0 * lam_i * eps_i * nu_hess_diag(kind, pi_i)
    b = (lam_o / tau_o) * hb.ppi
    c = 2.0 * (lam_o / tau_o) * hb.pp
    return a, b, c


def block_matrix_M(i: int, lam: WeightVector, z: JointProfile, profile: RiskProfile) -> np.ndarray:
    """Dense symmetric ``M_i`` for a single (unbatched) profile.

    Rows and columns are ordered ``(pi_i, p_-i)``; both live on player
    ``i``'s action set.
    """
    pi_i = z.pi1 if i == 0 else z.pi2
    p_other = z.p2 if i == 0 else z.p1
    a, b, c = _block_entries(i, lam, pi_i, p_other, profile)
    return np.block([[np.diag(a), np.diag(b)], [np.diag(b), np.diag(c)]])


def _min_eig_2x2(a, b, c):
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def block_min_eig(lam: WeightVector, z: JointProfile, profile: RiskProfile) -> np.ndarray:
    """Smallest eigenvalue over both ``M_i``, per batch element of ``z``."""
    out = []
    for i in (0, 1):
        pi_i = z.pi1 if i == 0 else z.pi2
        p_other = z.p2 if i == 0 else z.p1
        out.append(_min_eig_2x2(*_block_entries(i, lam, pi_i, p_other, profile)).min(axis=-1))
    return np.minimum(out[0], out[1])


def _kl_box_min_eig(lam: WeightVector, profile: RiskProfile, n_actions, floor: float) -> float:
    # KL/log-barrier: the smallest eigenvalue of each 2x2 block is
    # non-decreasing in c = 2 (lam_o/tau_o) / p, so the worst p is the largest
    # feasible coordinate. What remains is a 1-d search over pi.
    worst = np.inf
    for i in (0, 1):
        n = n_actions[i]
        top = 1.0 - (n - 1) * floor
        lo = max(floor, 1e-300)

        def f(log_pi, i=i, top=top):
            pi = np.exp(log_pi)
            a, b, c = _block_entries(i, lam, np.atleast_1d(pi), np.atleast_1d(top), profile)
            return float(_min_eig_2x2(a, b, c)[0])

        grid = np.linspace(np.log(lo), np.log(top), 4001)
        vals = np.array([f(g) for g in grid])
        k = int(np.argmin(vals))
        best = vals[k]
        a_, b_ = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        if b_ > a_:
            res = minimize_scalar(f, bounds=(a_, b_), method="bounded", options={"xatol": 1e-12})
            best = min(best, float(res.fun))
        worst = min(worst, best)
    return float(worst)


def sample_profiles(n_actions, floor: float, n_samples: int, rng) -> JointProfile:
    """Stratified interior profiles: flat Dirichlet, sparse Dirichlet, near-vertex."""
    n1, n2 = n_actions
    thirds = [n_samples - 2 * (n_samples // 3), n_samples // 3, n_samples // 3]

    def draw(n):
        parts = [rng.dirichlet(np.ones(n), size=thirds[0]),
                 rng.dirichlet(np.full(n, 0.1), size=thirds[1])]
        v = np.full((thirds[2], n), 0.0)
        v[np.arange(thirds[2]), rng.integers(n, size=thirds[2])] = 1.0
        v += 10.0 ** rng.uniform(-6, -1, size=(thirds[2], 1)) * rng.dirichlet(np.ones(n), size=thirds[2])
        parts.append(v / v.sum(axis=-1, keepdims=True))
        return project_simplex(np.concatenate(parts), floor)

    return JointProfile(draw(n1), draw(n2), draw(n2), draw(n1))


def certify(profile: RiskProfile, n_actions=(2, 2), floor: float = 1e-6, n_samples: int = 500,
            seed: int = 0, lam: WeightVector = None, sampled: bool = False) -> MonotonicityCertificate:
    """Certify lambda-strict or (mu, lambda)-strong monotonicity.

    When the closed-form product test passes, lambda is the geometric
    midpoint of the admissible ratio interval. Under the KL/log-barrier
    pairing ``mu`` is then half the exact minimum block eigenvalue over the
    floored simplex; under reverse KL only strictness is claimed. Otherwise
    ``n_samples`` profiles are drawn and ``mu`` is estimated from the
    smallest eigenvalue seen. ``sampled=True`` skips the closed-form path.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    n_actions = tuple(int(k) for k in n_actions)
    if lam is None:
        lam = default_lambda(profile)
    if not sampled and closed_form_test(profile) and lam == default_lambda(profile):
        if profile.kind.d is DKind.KL:
            m = _kl_box_min_eig(lam, profile, n_actions, floor)
            mu = max(m / 2.0, 0.0)
            return MonotonicityCertificate(True, mu > 0, mu, lam, Evidence.CLOSED_FORM, m)
        return MonotonicityCertificate(True, False, 0.0, lam, Evidence.CLOSED_FORM)

    rng = np.random.default_rng(seed)
    z = sample_profiles(n_actions, floor, n_samples, rng)
    eig = block_min_eig(lam, z, profile)
    k = int(np.argmin(eig))
    m = float(eig[k])
    witness = z[k] if m < 0 else None
    mu = max(m / 2.0, 0.0)
    return MonotonicityCertificate(m >= 0, m > 0, mu, lam, Evidence.SAMPLED, m, witness)


def empirical_monotonicity(R: PayoffPair, profile: RiskProfile, lam: WeightVector = None,
                           n_pairs: int = 1000, floor: float = 1e-6, seed: int = 0) -> float:
    """Smallest ``<z - z', F(z) - F(z')>_lam / ||z - z'||^2`` over random pairs.

    Pairs closer than 1e-9 are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    lam = profile.lam if lam is None else lam
    rng = np.random.default_rng(seed)
    n = R.n_actions
    z = sample_profiles(n, floor, n_pairs, rng)
    zp = sample_profiles(n, floor, n_pairs, rng)
    zp = zp[rng.permutation(n_pairs)]
    Rb = PayoffPair(np.broadcast_to(R.R1, (n_pairs,) + n), np.broadcast_to(R.R2, (n_pairs,) + n))
    dz = z.flat() - zp.flat()
    dF = gradient_operator(z, Rb, profile).flat() - gradient_operator(zp, Rb, profile).flat()
    sq = np.sum(dz * dz, axis=-1)
    keep = np.sqrt(sq) >= 1e-9
    if not np.any(keep):
        return float("nan")
    ratio = weighted_inner(dz[keep], dF[keep], lam, z.layout) / sq[keep]
    return float(ratio.min())
