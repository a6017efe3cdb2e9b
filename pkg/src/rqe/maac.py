"""Sample-based multi-agent risk-averse actor-critic on tabular Markov games.

One episode is: an actor step at every state on the current Q, ``K``
environment steps under the pre-update policies (or a fixed reference
policy), one empirical target per transition, and an averaged sparse critic
update. Episode ``t + 1`` starts where episode ``t`` stopped unless resets
are requested.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .markov import MarkovGame, QPair, stage_values
from .normal_form import JointProfile
from .regularizers import RiskProfile
from .simplex import WeightVector
from .solver import projected_step
from .two_timescale import StepSchedule, actor_step, policy_distance


class Mode(enum.Enum):
    ON_POLICY = "OnPolicy"
    OFF_POLICY = "OffPolicy"


@dataclass(frozen=True)
class MaacConfig:
    """Learner settings.

    Attributes
    ----------
    sched : StepSchedule
        Critic step ``alpha_t`` and actor step ``beta_t`` per episode.
    K : int
        Transitions per episode.
    n_episodes : int
    mode : Mode
        On-policy samples actions from the current policies, off-policy from
        ``reference``.
    reference : JointProfile, optional
        Off-policy behavior policies, interior at every state; uniform when
        omitted. Only the ``pi`` blocks are used.
    seed : int
    floor : float
        Shrunken-simplex floor for the actor.
    risk_neutral : bool
        Drop both regularizers and pin each adversary to the true opponent,
        giving plain projected policy-gradient play on Q.
    reset : bool
        Draw every episode's start state from ``rho0`` instead of continuing
        from the previous episode's last state.
    """

    sched: StepSchedule = field(default_factory=lambda: StepSchedule.constant(0.05, 0.5))
    K: int = 64
    n_episodes: int = 1000
    mode: Mode = Mode.ON_POLICY
    reference: Optional[JointProfile] = None
    seed: int = 0
    floor: float = 1e-6
    risk_neutral: bool = False
    reset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode if isinstance(self.mode, Mode) else Mode(self.mode))
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if self.n_episodes < 0:
            raise ConfigurationError("n_episodes must be non-negative")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.reference is not None and (np.min(self.reference.pi1) <= 0 or np.min(self.reference.pi2) <= 0):
            raise ConfigurationError("reference policies must be interior")


@dataclass(frozen=True)
class TransitionBatch:
    """``K`` consecutive transitions ``(s_k, a1_k, a2_k, r_k, s_{k+1})``.

    ``reward`` has shape (K, 2).
    """

    state: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray

    def __len__(self) -> int:
        return len(self.state)

    def validate(self, mg: MarkovGame, contiguous: bool = True) -> "TransitionBatch":
        n1, n2 = mg.n_actions
        S = mg.n_states
        for name, arr, hi in (("state", self.state, S), ("a1", self.a1, n1), ("a2", self.a2, n2),
                              ("next_state", self.next_state, S)):
            if np.any(arr < 0) or np.any(arr >= hi):
                raise InvalidInputError(f"{name} out of range")
        if contiguous and np.any(self.next_state[:-1] != self.state[1:]):
            raise InvalidInputError("transitions are not contiguous")
        return self


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Independent substream for one episode of one seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, episode]))


def _sample_index(probs: np.ndarray, u: float) -> int:
    k = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(k, len(probs) - 1)


def collect(mg: MarkovGame, behavior: JointProfile, s0: int, K: int, rng) -> TransitionBatch:
    """Play ``K`` steps from ``s0`` with ``a_i ~ behavior.pi_i(. | s)``."""
    u = rng.random((K, 3))
    S = np.empty(K, dtype=int)
    A1 = np.empty(K, dtype=int)
    A2 = np.empty(K, dtype=int)
    S2 = np.empty(K, dtype=int)
    s = int(s0)
    for k in range(K):
        a1 = _sample_index(behavior.pi1[s], u[k, 0])
        a2 = _sample_index(behavior.pi2[s], u[k, 1])
        s_next = _sample_index(mg.transition[s, a1, a2], u[k, 2])
        S[k], A1[k], A2[k], S2[k] = s, a1, a2, s_next
        s = s_next
    return TransitionBatch(S, A1, A2, mg.reward[S, A1, A2], S2)


def _neutral_values(Q: QPair, z: JointProfile) -> np.ndarray:
    v1 = np.einsum("sa,sab,sb->s", z.pi1, Q.q1, z.pi2)
    v2 = np.einsum("sa,sab,sb->s", z.pi1, Q.q2, z.pi2)
    return np.stack([v1, v2])


def build_targets(batch: TransitionBatch, z_next: JointProfile, Q: QPair, profile: RiskProfile,
                  gamma: float, risk_neutral: bool = False) -> np.ndarray:
    """``q_hat_{i,k} = -r_{i,k} + gamma * V_i(s_{k+1})`` with ``V_i`` from ``z_next`` and ``Q``.

    ``V_i(s) = pi_i^T Q_i(s) p_i - D_i(p_i, pi_-i) / tau_i + eps_i nu_i(pi_i)``.

    Returns
    -------
    ndarray, shape (K, 2)
    """
    V = _neutral_values(Q, z_next) if risk_neutral else stage_values(Q, z_next, profile)
    return -np.asarray(batch.reward) + gamma * V[:, batch.next_state].T


def critic_step(Q: QPair, batch: TransitionBatch, targets: np.ndarray, alpha_t: float) -> QPair:
    """``Q <- Q + alpha_t * delta`` with ``delta`` the batch-averaged residual per visited cell.

    Every residual uses the pre-update ``Q``; cells not visited are unchanged.
    """
    K = len(batch)
    out = []
    for i, q in enumerate((Q.q1, Q.q2)):
        resid = targets[:, i] - q[batch.state, batch.a1, batch.a2]
        delta = np.zeros_like(q)
        np.add.at(delta, (batch.state, batch.a1, batch.a2), resid / K)
        out.append(q + alpha_t * delta)
    return QPair(*out)


def neutral_actor_step(z: JointProfile, Q: QPair, beta_t: float, floor: float) -> JointProfile:
    """Projected policy-gradient step on ``pi_i^T Q_i pi_-i``; adversaries copy the opponent."""
    g1 = np.einsum("sab,sb->sa", Q.q1, z.pi2)
    g2 = np.einsum("sab,sa->sb", Q.q2, z.pi1)
    zero1, zero2 = np.zeros_like(z.pi2), np.zeros_like(z.pi1)
    F = JointProfile(g1, g2, zero1, zero2)
    out = projected_step(z, F, beta_t, WeightVector(), floor)
    out.p1, out.p2 = out.pi2.copy(), out.pi1.copy()
    return out


@dataclass
class MaacResult:
    """Final iterates and one trajectory row per episode.

    Rows are ``(episode, z_distance, q_distance, mean_reward)``; the
    distances are NaN without an oracle, and ``mean_reward`` is the average
    reward of player 1 over the episode's transitions.
    """

    Q: QPair
    policy: JointProfile
    trajectory: list
    mode: str
    seed: int

    def column(self, name: str) -> np.ndarray:
        k = ("episode", "z_distance", "q_distance", "mean_reward").index(name)
        return np.array([row[k] for row in self.trajectory])


def train(mg: MarkovGame, profile: RiskProfile, cfg: MaacConfig, oracle: Optional[tuple] = None,
          Q0: QPair = None, z0: JointProfile = None) -> MaacResult:
    """Run ``cfg.n_episodes`` episodes from ``Q = 0`` and uniform policies.

    Episode ``t`` draws all of its randomness from the substream
    ``(cfg.seed, t)``; the start state of the first episode (and of every
    episode when ``cfg.reset``) is drawn from ``rho0``.
    """
    n1, n2 = mg.n_actions
    Q = QPair.zeros(mg) if Q0 is None else Q0
    z = JointProfile.uniform(n1, n2, (mg.n_states,)) if z0 is None else z0.copy()
    if cfg.risk_neutral:
        z.p1, z.p2 = z.pi2.copy(), z.pi1.copy()
    ref = cfg.reference if cfg.reference is not None else JointProfile.uniform(n1, n2, (mg.n_states,))
    rho_cdf = np.cumsum(mg.rho0)
    s = None
    rows = []
    for t in range(cfg.n_episodes):
        rng = episode_rng(cfg.seed, t)
        if s is None or cfg.reset:
            s = min(int(np.searchsorted(rho_cdf, rng.random() * rho_cdf[-1], side="right")), mg.n_states - 1)
        a_t, b_t = cfg.sched.at(t)
        if cfg.risk_neutral:
            z_next = neutral_actor_step(z, Q, b_t, cfg.floor)
        else:
            z_next = actor_step(z, Q, b_t, profile, cfg.floor)
        behavior = z if cfg.mode is Mode.ON_POLICY else ref
        batch = collect(mg, behavior, s, cfg.K, rng)
        targets = build_targets(batch, z_next, Q, profile, mg.gamma, cfg.risk_neutral)
        Q_next = critic_step(Q, batch, targets, a_t)
        z, Q = z_next, Q_next
        s = int(batch.next_state[-1])
        if oracle is not None:
            zd = policy_distance(z, oracle[1])
            qd = Q.max_diff(oracle[0])
        else:
            zd = qd = float("nan")
        rows.append((t + 1, zd, qd, float(np.mean(batch.reward[:, 0]))))
    return MaacResult(Q, z, rows, cfg.mode.value, cfg.seed)


def write_trajectory_csv(path, result: MaacResult) -> None:
    """CSV with columns ``episode, z_distance, q_distance, mean_reward, mode, seed``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "z_distance", "q_distance", "mean_reward", "mode", "seed"])
        for ep, zd, qd, mr in result.trajectory:
            w.writerow([ep, "" if np.isnan(zd) else f"{zd:.17g}", "" if np.isnan(qd) else f"{qd:.17g}",
                        f"{mr:.17g}", result.mode, result.seed])
