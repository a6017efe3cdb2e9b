"""Deterministic two-timescale iteration: a fast actor step and a slow critic step.

Each iteration moves every state's joint profile one projected gradient step
on its current stage game, then relaxes Q toward the evaluation backup of the
new profile::

    z_{t+1}(s) = Proj(z_t(s) - beta_t * Lambda F(z_t; -Q_t)(s))
    Q_{t+1}    = (1 - alpha_t) Q_t + alpha_t T_{z_{t+1}} Q_t
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .markov import MarkovGame, QPair, bellman_evaluate, stage_game
from .normal_form import JointProfile, gradient_operator
from .regularizers import RiskProfile
from .solver import projected_step


MAX_ROWS = 100_000
DECIMATION = 10


class ScheduleKind(enum.Enum):
    CONSTANT = "Constant"
    DIMINISHING = "Diminishing"


@dataclass(frozen=True)
class StepSchedule:
    """Critic step ``alpha_t`` and actor step ``beta_t``.

    Constant schedules use ``alpha`` and ``beta`` as given; diminishing
    schedules use ``alpha / (t + h)`` and ``beta / (t + h)``. The critic must
    be the slower of the two, so ``alpha < beta`` is required.
    """

    kind: ScheduleKind = ScheduleKind.CONSTANT
    alpha: float = 0.02
    beta: float = 0.2
    h: int = 1

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, ScheduleKind) else ScheduleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigurationError("alpha and beta must be positive")
        if not self.alpha < self.beta:
            raise ConfigurationError(f"need alpha < beta, got alpha={self.alpha}, beta={self.beta}")
        if kind is ScheduleKind.DIMINISHING and self.h < 1:
            raise ConfigurationError("h must be a positive integer")

    @classmethod
    def constant(cls, alpha: float, beta: float) -> "StepSchedule":
        return cls(ScheduleKind.CONSTANT, alpha, beta)

    @classmethod
    def diminishing(cls, alpha: float, beta: float, h: int) -> "StepSchedule":
        return cls(ScheduleKind.DIMINISHING, alpha, beta, int(h))

    def at(self, t: int) -> tuple[float, float]:
        """``(alpha_t, beta_t)`` for iteration ``t = 0, 1, ...``."""
        if self.kind is ScheduleKind.CONSTANT:
            return self.alpha, self.beta
        return self.alpha / (t + self.h), self.beta / (t + self.h)


def actor_step(z: JointProfile, Q: QPair, beta_t: float, profile: RiskProfile, floor: float) -> JointProfile:
    """One projected, lambda-preconditioned gradient step at every state.

    The stage operator is the normal-form gradient operator on payoffs
    ``-Q(s, ., .)``. Shared by the deterministic iteration and the
    sample-based learner.
    """
    if beta_t == 0:
        return z.copy()
    F = gradient_operator(z, stage_game(Q), profile)
    return projected_step(z, F, beta_t, profile.lam, floor)


def policy_distance(z: JointProfile, z_ref: JointProfile) -> float:
    """``max_s ||z(s) - z_ref(s)||_2``."""
    return float(np.max(z.distance(z_ref)))


@dataclass
class TwoTimescaleResult:
    """Final iterates and the recorded trajectory.

    ``trajectory`` rows are ``(iter, alpha_t, beta_t, q_residual,
    z_distance)`` with ``z_distance`` NaN when no oracle was given.
    ``q_residual`` is ``||Q_{t+1} - Q_t||_max``.
    """

    Q: QPair
    policy: JointProfile
    trajectory: list
    stride: int = 1

    def column(self, name: str) -> np.ndarray:
        k = ("iter", "alpha_t", "beta_t", "q_residual", "z_distance").index(name)
        return np.array([row[k] for row in self.trajectory])


def run(mg: MarkovGame, profile: RiskProfile, sched: StepSchedule, n_iter: int,
        oracle: Optional[tuple] = None, floor: float = 1e-6, Q0: QPair = None,
        z0: JointProfile = None) -> TwoTimescaleResult:
    """Run ``n_iter`` iterations from ``Q = 0`` and uniform policies.

    Parameters
    ----------
    oracle : (QPair, JointProfile), optional
        Fixed point from :func:`~rqe.markov.value_iteration`; enables the
        ``z_distance`` column.
    floor : float
        Lower bound of the shrunken simplex onto which the actor projects.

    Notes
    -----
    Every iteration is recorded until the trajectory reaches 100000 rows.
    From then on only every tenth iteration is kept, and earlier rows are
    thinned to match, so the output stays bounded.
    """
    if n_iter < 0:
        raise ConfigurationError("n_iter must be non-negative")
    n1, n2 = mg.n_actions
    Q = QPair.zeros(mg) if Q0 is None else Q0
    z = JointProfile.uniform(n1, n2, (mg.n_states,)) if z0 is None else z0.copy()
    z_star = oracle[1] if oracle is not None else None
    rows = []
    stride = 1
    for t in range(n_iter):
        a_t, b_t = sched.at(t)
        z = actor_step(z, Q, b_t, profile, floor)
        if min(float(np.min(b)) for b in z.blocks()) < floor - 1e-12:
            raise DomainError(f"iterate left the floored simplex at iteration {t}")
        Q_new = Q.mix(bellman_evaluate(Q, z, mg, profile), a_t)
        res = Q_new.max_diff(Q)
        Q = Q_new
        if (t + 1) % stride == 0:
            dist = policy_distance(z, z_star) if z_star is not None else float("nan")
            rows.append((t + 1, a_t, b_t, res, dist))
            if len(rows) >= MAX_ROWS:
                stride *= DECIMATION
                rows = [r for r in rows if r[0] % stride == 0]
    return TwoTimescaleResult(Q, z, rows, stride)


def write_trajectory_csv(path, result: TwoTimescaleResult) -> None:
    """CSV with columns ``iter, alpha_t, beta_t, q_residual, z_distance``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "alpha_t", "beta_t", "q_residual", "z_distance"])
        for it, a, b, r, d in result.trajectory:
            w.writerow([it, f"{a:.17g}", f"{b:.17g}", f"{r:.17g}", "" if np.isnan(d) else f"{d:.17g}"])
