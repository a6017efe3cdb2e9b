"""Agent regularizers and adversary penalties.

Each player ``i`` smooths its own policy with ``nu_i`` (negative entropy or
log-barrier) and penalizes its imaginary adversary ``p_i`` for drifting from
the opponent's true policy with ``D_i(p_i, pi_-i)`` (KL or reverse KL).
Only the two pairings with a monotonicity guarantee are accepted:
log-barrier with KL, and negative entropy with reverse KL.

Every function works on the last axis and broadcasts over leading axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .simplex import WeightVector


class NuKind(enum.Enum):
    NEGATIVE_ENTROPY = "negative_entropy"
    LOG_BARRIER = "log_barrier"


class DKind(enum.Enum):
    REVERSE_KL = "reverse_kl"
    KL = "kl"


_LEGAL = {(NuKind.LOG_BARRIER, DKind.KL), (NuKind.NEGATIVE_ENTROPY, DKind.REVERSE_KL)}


@dataclass(frozen=True)
class RegularizerKind:
    nu: NuKind
    d: DKind

    def __post_init__(self):
        if (self.nu, self.d) not in _LEGAL:
            raise ConfigurationError(
                f"illegal regularizer pairing ({self.nu.value}, {self.d.value}); "
                "use log_barrier/kl or negative_entropy/reverse_kl"
            )

    @classmethod
    def parse(cls, name: str) -> "RegularizerKind":
        key = name.lower().replace("-", "_").replace("/", "_")
        if key in ("kl_log_barrier", "log_barrier_kl", "kl_logbarrier"):
            return KL_LOG_BARRIER
        if key in ("reverse_kl_negative_entropy", "negative_entropy_reverse_kl", "rkl_negentropy"):
            return REVERSE_KL_NEG_ENTROPY
        raise ConfigurationError(f"unknown regularizer pairing {name!r}")

    @property
    def name(self) -> str:
        return f"{self.d.value}_{self.nu.value}"


KL_LOG_BARRIER = RegularizerKind(NuKind.LOG_BARRIER, DKind.KL)
REVERSE_KL_NEG_ENTROPY = RegularizerKind(NuKind.NEGATIVE_ENTROPY, DKind.REVERSE_KL)


@dataclass(frozen=True)
class RiskProfile:
    """Behavioral parameters of both players.

    ``tau`` is the risk-aversion level (larger means a less constrained,
    more pessimistic adversary) and ``eps`` the bounded-rationality
    temperature.
    """

    tau: tuple[float, float]
    eps: tuple[float, float]
    kind: RegularizerKind = KL_LOG_BARRIER
    lam: WeightVector = field(default_factory=WeightVector)

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if len(self.tau) != 2 or len(self.eps) != 2:
            raise ConfigurationError("tau and eps need one entry per player")
        if not all(np.isfinite(v) and v > 0 for v in self.tau + self.eps):
            raise ConfigurationError(f"tau={self.tau}, eps={self.eps} must be positive")

    @classmethod
    def symmetric(cls, tau: float, eps: float, kind=KL_LOG_BARRIER, lam=None) -> "RiskProfile":
        return cls((tau, tau), (eps, eps), kind, lam if lam is not None else WeightVector())

    def with_lambda(self, lam: WeightVector) -> "RiskProfile":
        return replace(self, lam=lam)

    @property
    def product(self) -> float:
        """``eps1 * eps2 * tau1 * tau2``."""
        return self.eps[0] * self.eps[1] * self.tau[0] * self.tau[1]


def _nu_kind(kind) -> NuKind:
    return kind.nu if isinstance(kind, RegularizerKind) else NuKind(kind)


def _d_kind(kind) -> DKind:
    return kind.d if isinstance(kind, RegularizerKind) else DKind(kind)


def _interior(*arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0):
            raise DomainError("regularizer evaluated at a point with a zero entry")
        out.append(a)
    return out


def nu_value(kind, pi) -> np.ndarray:
    (pi,) = _interior(pi)
    if _nu_kind(kind) is NuKind.NEGATIVE_ENTROPY:
        return np.sum(pi * np.log(pi), axis=-1)
    return -np.sum(np.log(pi), axis=-1)


def nu_grad(kind, pi) -> np.ndarray:
    (pi,) = _interior(pi)
    if _nu_kind(kind) is NuKind.NEGATIVE_ENTROPY:
        return np.log(pi) + 1.0
    return -1.0 / pi


def nu_hess_diag(kind, pi) -> np.ndarray:
    (pi,) = _interior(pi)
    if _nu_kind(kind) is NuKind.NEGATIVE_ENTROPY:
        return 1.0 / pi
    return 1.0 / pi**2


def d_value(kind, p, pi) -> np.ndarray:
    """KL: ``sum p log(p/pi)``; reverse KL: ``sum pi log(pi/p)``."""
    p, pi = _interior(p, pi)
    if _d_kind(kind) is DKind.KL:
        return np.sum(p * (np.log(p) - np.log(pi)), axis=-1)
    return np.sum(pi * (np.log(pi) - np.log(p)), axis=-1)


def d_grad_p(kind, p, pi) -> np.ndarray:
    p, pi = _interior(p, pi)
    if _d_kind(kind) is DKind.KL:
        return np.log(p) - np.log(pi) + 1.0
    return -pi / p


def d_grad_pi(kind, p, pi) -> np.ndarray:
    p, pi = _interior(p, pi)
    if _d_kind(kind) is DKind.KL:
        return -p / pi
    return np.log(pi) - np.log(p) + 1.0


class HessianBlocks(NamedTuple):
    """Diagonals of the three Hessian blocks of ``D(p, pi)``."""

    pp: np.ndarray
    ppi: np.ndarray
    pipi: np.ndarray


def d_hess_blocks(kind, p, pi) -> HessianBlocks:
    p, pi = _interior(p, pi)
    if _d_kind(kind) is DKind.KL:
        return HessianBlocks(1.0 / p, -1.0 / pi, p / pi**2)
    return HessianBlocks(pi / p**2, -1.0 / p, 1.0 / pi)


def policy_floor(profile: RiskProfile, payoff_span: float, n_actions) -> tuple[tuple[float, float], tuple[float, float]]:
    """Theoretical lower bounds on equilibrium policies.

    Returns ``((floor_pi1, floor_pi2), (floor_p1, floor_p2))``. Player ``i``'s
    adversary lives on the opponent's action set. For the reverse-KL pairing
    the exponent is ``-span`` without dividing by ``eps``, matching the
    published bound. For the KL pairing the adversary bound reuses the
    player formula with the action count of the adversary's own simplex.
    """
    if payoff_span < 0:
        raise ConfigurationError("payoff span must be non-negative")
    n = tuple(int(k) for k in n_actions)
    sp = float(payoff_span)
    floor_pi, floor_p = [], []
    for i in (0, 1):
        eps, tau = profile.eps[i], profile.tau[i]
        mine, other = n[i], n[1 - i]
        if profile.kind.d is DKind.KL:
            floor_pi.append(eps / (eps * mine + sp))
            floor_p.append(eps / (eps * other + sp))
        else:
            floor_pi.append(np.exp(-sp) / mine)
            floor_p.append(np.exp(-sp) / (mine * (other + tau * sp)))
    return tuple(floor_pi), tuple(floor_p)


def operating_floor(profile: RiskProfile, payoff_span: float, n_actions) -> float:
    """Shrunken-simplex floor used by the solvers: ``min(1e-6, bound / 2)``."""
    fpi, fp = policy_floor(profile, payoff_span, n_actions)
    return float(min(1e-6, 0.5 * min(fpi + fp)))
