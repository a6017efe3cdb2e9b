"""Tabular two-player Markov games, Q tables and Bellman operators.

Conventions
-----------
Rewards, transitions and both Q tables are indexed ``[s, a1, a2]``, the same
bimatrix convention as :class:`~rqe.normal_form.PayoffPair`. Q values are
costs (``Q = -r + gamma * ...``), so the stage game at ``s`` has payoffs
``-Q(s, ., .)``. A policy table is a :class:`~rqe.normal_form.JointProfile`
whose blocks carry a leading state axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConvergenceError, InvalidInputError
from .normal_form import JointProfile, PayoffPair, adversary_exact, objective_J, own_payoff
from .regularizers import (
    NuKind,
    RiskProfile,
    d_grad_p,
    d_grad_pi,
    d_value,
    nu_grad,
    nu_value,
    operating_floor,
)
from .simplex import as_simplex, project_simplex
from .solver import solve


FORMAT_NAME = "rqe-markov-game"
FORMAT_VERSION = 1
STAGE_ETA = 0.2


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """Finite discounted two-player Markov game.

    Attributes
    ----------
    reward : ndarray, shape (S, n1, n2, 2)
        ``reward[s, a1, a2, i]`` is player ``i``'s reward, in ``[0, 1]``.
    transition : ndarray, shape (S, n1, n2, S)
        Next-state distributions.
    gamma : float
        Discount factor in ``[0, 1)``.
    rho0 : ndarray, shape (S,)
        Initial-state distribution.
    """

    reward: np.ndarray
    transition: np.ndarray
    gamma: float
    rho0: np.ndarray

    def __post_init__(self):
        r = np.array(self.reward, dtype=float)
        P = np.array(self.transition, dtype=float)
        if r.ndim != 4 or r.shape[-1] != 2:
            raise InvalidInputError(f"reward must have shape (S, n1, n2, 2), got {r.shape}")
        S, n1, n2, _ = r.shape
        if P.shape != (S, n1, n2, S):
            raise InvalidInputError(f"transition must have shape {(S, n1, n2, S)}, got {P.shape}")
        if not np.all(np.isfinite(r)) or r.min() < 0 or r.max() > 1:
            raise InvalidInputError("rewards must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma={self.gamma} must lie in [0, 1)")
        P = as_simplex(P)
        rho0 = as_simplex(np.array(self.rho0, dtype=float))
        if rho0.shape != (S,):
            raise InvalidInputError("rho0 must have one entry per state")
        for a in (r, P, rho0):
            a.setflags(write=False)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> tuple[int, int]:
        return self.reward.shape[1], self.reward.shape[2]

    def r(self, i: int) -> np.ndarray:
        return self.reward[..., i]

    def with_gamma(self, gamma: float) -> "MarkovGame":
        return MarkovGame(self.reward, self.transition, gamma, self.rho0)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "n_states": self.n_states,
            "n_actions": list(self.n_actions),
            "gamma": self.gamma,
            "rho0": self.rho0.tolist(),
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovGame":
        if d.get("format") != FORMAT_NAME:
            raise InvalidInputError(f"not a {FORMAT_NAME} document")
        if d.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported format version {d.get('version')}")
        mg = cls(np.array(d["reward"], dtype=float), np.array(d["transition"], dtype=float),
                 float(d["gamma"]), np.array(d["rho0"], dtype=float))
        if mg.n_states != d["n_states"] or list(mg.n_actions) != list(d["n_actions"]):
            raise InvalidInputError("declared sizes do not match the tables")
        return mg

    def dumps(self) -> str:
        # json writes floats with repr, which round-trips binary64 exactly
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "MarkovGame":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "MarkovGame":
        with open(path) as fh:
            return cls.loads(fh.read())

    def same_as(self, other: "MarkovGame") -> bool:
        return (self.gamma == other.gamma and np.array_equal(self.reward, other.reward)
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.rho0, other.rho0))


@dataclass(frozen=True)
class QPair:
    """Cost tables ``q1[s, a1, a2]`` and ``q2[s, a1, a2]``."""

    q1: np.ndarray
    q2: np.ndarray

    def __post_init__(self):
        q1 = np.asarray(self.q1, dtype=float)
        q2 = np.asarray(self.q2, dtype=float)
        if q1.shape != q2.shape or q1.ndim != 3:
            raise InvalidInputError("Q tables must share a shape (S, n1, n2)")
        if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(q2))):
            raise InvalidInputError("Q tables must be finite")
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)

    @classmethod
    def zeros(cls, mg: MarkovGame) -> "QPair":
        shape = (mg.n_states,) + mg.n_actions
        return cls(np.zeros(shape), np.zeros(shape))

    def __getitem__(self, i: int) -> np.ndarray:
        return (self.q1, self.q2)[i]

    def stacked(self) -> np.ndarray:
        return np.stack([self.q1, self.q2])

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.stacked())))

    def span(self) -> float:
        """Largest ``max_{s,a} Q_i - min_{s,a} Q_i`` over the two players."""
        return float(max(np.ptp(self.q1), np.ptp(self.q2)))

    def max_diff(self, other: "QPair") -> float:
        return float(np.max(np.abs(self.stacked() - other.stacked())))

    def mix(self, other: "QPair", alpha: float) -> "QPair":
        """``(1 - alpha) * self + alpha * other``."""
        return QPair((1 - alpha) * self.q1 + alpha * other.q1, (1 - alpha) * self.q2 + alpha * other.q2)


def stage_game(Q: QPair, s=None) -> PayoffPair:
    """Payoffs ``-Q(s, ., .)``; all states at once when ``s`` is None."""
    if s is None:
        return PayoffPair(-Q.q1, -Q.q2)
    if not 0 <= s < Q.q1.shape[0]:
        raise InvalidInputError(f"state {s} out of range")
    return PayoffPair(-Q.q1[s], -Q.q2[s])


def stage_values(Q: QPair, z: JointProfile, profile: RiskProfile) -> np.ndarray:
    """Per-state risk-adjusted values ``(V_1(s), V_2(s))``, shape (2, S).

    ``V_i(s) = pi_i^T Q_i(s) p_i - D_i(p_i, pi_-i) / tau_i + eps_i nu_i(pi_i)``,
    i.e. player ``i``'s four-player cost in the stage game.
    """
    R = stage_game(Q)
    return np.stack([objective_J(0, z, R, profile), objective_J(1, z, R, profile)])


def _backup(mg: MarkovGame, values: np.ndarray) -> QPair:
    EV = np.einsum("sabt,it->isab", mg.transition, values)
    return QPair(-mg.r(0) + mg.gamma * EV[0], -mg.r(1) + mg.gamma * EV[1])


def bellman_evaluate(Q: QPair, z: JointProfile, mg: MarkovGame, profile: RiskProfile) -> QPair:
    """One synchronous sweep of the evaluation operator ``T_z``."""
    return _backup(mg, stage_values(Q, z, profile))


def stage_floor(Q: QPair, profile: RiskProfile) -> float:
    """Shrunken-simplex floor valid for every stage game of ``Q``."""
    R = stage_game(Q)
    span = float(max(np.max(np.ptp(R.R1, axis=(-2, -1))), np.max(np.ptp(R.R2, axis=(-2, -1)))))
    return operating_floor(profile, span, R.n_actions)


def solve_stages(Q: QPair, profile: RiskProfile, tol: float, floor: float, z0: JointProfile = None,
                 eta: float = STAGE_ETA, max_iter: int = 200_000, metric: str = "scaled") -> JointProfile:
    """Stage RQE of every state, solved as one batch.

    Stage games built from Q tables routinely push some adversary
    coordinates to within a few orders of magnitude of the floor, where the
    Euclidean iteration needs tiny steps. The coordinate-scaled metric has
    the same fixed points and no such stiffness, so it is the default here.
    """
    rep = solve(stage_game(Q), profile, eta=eta, tol=tol, max_iter=max_iter, z0=z0, floor=floor,
                metric=metric)
    if not rep.all_converged:
        bad = np.flatnonzero(~np.asarray(rep.converged))
        raise ConvergenceError(f"stage solve did not converge at state(s) {bad[:10].tolist()}",
                               float(np.max(rep.final_step_norm)))
    return rep.z_star


def bellman_optimality(Q: QPair, mg: MarkovGame, profile: RiskProfile, stage_tol: float = 1e-10,
                       z0: JointProfile = None, floor: float = None):
    """Apply ``T``: back up each next state's stage-RQE value.

    Returns
    -------
    (QPair, JointProfile)
        ``TQ`` and the per-state stage equilibria of ``Q``.
    """
    if floor is None:
        floor = stage_floor(Q, profile)
    z = solve_stages(Q, profile, stage_tol, floor, z0)
    return _backup(mg, stage_values(Q, z, profile)), z


@dataclass
class ValueIterationResult:
    Q: QPair
    policy: JointProfile
    sweeps: int
    residual: float
    history: list  # (sweep, residual, max_norm, span)


def value_iteration(mg: MarkovGame, profile: RiskProfile, alpha=1.0, tol: float = 1e-6,
                    max_sweeps: int = 10_000, stage_tol: float = None, Q0: QPair = None,
                    floor: float = None) -> ValueIterationResult:
    """``Q <- (1 - alpha_t) Q + alpha_t T Q`` from ``Q = 0`` until the update is below ``tol``.

    ``alpha`` is a constant or a callable ``t -> alpha_t``. Stage solves are
    warm-started from the previous sweep's equilibria, with the floor taken
    from the current stage payoff span unless ``floor`` is given. The
    returned policy is the stage RQE of the final ``Q``.
    """
    if stage_tol is None:
        stage_tol = tol / 10.0
    step = alpha if callable(alpha) else (lambda t: alpha)
    Q = QPair.zeros(mg) if Q0 is None else Q0
    z = None
    history = []
    residual = np.inf
    for t in range(max_sweeps):
        f = stage_floor(Q, profile) if floor is None else floor
        TQ, z = bellman_optimality(Q, mg, profile, stage_tol, z0=z, floor=f)
        Q_new = Q.mix(TQ, step(t))
        residual = Q_new.max_diff(Q)
        Q = Q_new
        history.append((t + 1, residual, Q.max_norm(), Q.span()))
        if residual <= tol:
            f = stage_floor(Q, profile) if floor is None else floor
            z = solve_stages(Q, profile, stage_tol, f, z)
            return ValueIterationResult(Q, z, t + 1, residual, history)
    raise ConvergenceError(f"value iteration did not converge in {max_sweeps} sweeps", residual)


def _vertex_points(n: int, floor: float) -> np.ndarray:
    pts = np.full((n, n), floor)
    pts[np.arange(n), np.arange(n)] = 1.0 - (n - 1) * floor
    return np.concatenate([pts, np.full((1, n), 1.0 / n)])


def lipschitz_constants(profile: RiskProfile, n_actions, floor: float) -> tuple[float, float]:
    """``(L_D, L_nu)``: largest gradient norms over floored-simplex vertices and the center."""
    kind = profile.kind
    L_nu, L_D = 0.0, 0.0
    for n_own, n_other in ((n_actions[0], n_actions[1]), (n_actions[1], n_actions[0])):
        V = _vertex_points(n_own, floor)
        L_nu = max(L_nu, float(np.max(np.linalg.norm(nu_grad(kind, V), axis=-1))))
        # D_i(p_i, pi_-i) lives on the opponent's action set
        W = _vertex_points(n_other, floor)
        P, Pi = W[:, None, :], W[None, :, :]
        P, Pi = np.broadcast_arrays(P, Pi)
        g = np.concatenate([d_grad_p(kind, P, Pi), d_grad_pi(kind, P, Pi)], axis=-1)
        L_D = max(L_D, float(np.max(np.linalg.norm(g, axis=-1))))
    return L_D, L_nu


def _nu_min(profile: RiskProfile, n: int) -> float:
    # both regularizers are minimized at the uniform distribution
    if profile.kind.nu is NuKind.NEGATIVE_ENTROPY:
        return -np.log(n)
    return n * np.log(n)


def q_bounds(mg: MarkovGame, profile: RiskProfile, floor: float = 1e-6) -> tuple[float, float]:
    """``(Q_max, Q_span)`` for iterates started from zero.

    Lipschitz constants are taken on the floored simplex; ``D_min`` is zero
    and ``|nu_min|`` enters the max-norm bound.
    """
    g = mg.gamma
    L_D, L_nu = lipschitz_constants(profile, mg.n_actions, floor)
    tau_min, eps_max = min(profile.tau), max(profile.eps)
    nu_min = max(abs(_nu_min(profile, n)) for n in mg.n_actions)
    d_min = 0.0
    q_span = (1.0 + g * (2 * np.sqrt(2) * L_D / tau_min + np.sqrt(2) * eps_max * L_nu)) / (1 - g)
    q_max = 1.0 / (1 - g) + g / (1 - g) * ((d_min + 2 * np.sqrt(2) * L_D) / tau_min
                                           + eps_max * (nu_min + np.sqrt(2) * L_nu))
    return float(q_max), float(q_span)


# -- min-max versus max-min at a stage ---------------------------------------


def _argmin_pi(kind, g, eps: float, floor: float, iters: int = 200) -> np.ndarray:
    """``argmin_pi g.pi + eps nu(pi)`` on the floored simplex, by bisection on the multiplier."""
    g = np.asarray(g, dtype=float)
    n = g.shape[-1]
    if kind.nu is NuKind.LOG_BARRIER:
        # g_a - eps / pi_a + m = 0, so pi_a = eps / (g_a + m) with m > -min g
        def pi_of(m):
            return np.maximum(floor, eps / np.maximum(g + m, 1e-300))
        lo = -np.min(g)
        hi = lo + n * eps
    else:
        # g_a + eps (log pi_a + 1) + m = 0
        def pi_of(m):
            return np.maximum(floor, np.exp(-(g + m) / eps - 1.0))
        lo = -np.min(g) - eps
        hi = lo + eps * np.log(n)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if pi_of(mid).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    pi = pi_of(0.5 * (lo + hi))
    return pi / pi.sum()


STALL_WINDOW = 50


def _projected_descent(fun, x, floor: float, tol: float, max_iter: int) -> float:
    """Minimize a smooth convex ``fun(x) -> (value, gradient)`` on the floored simplex."""
    fx, g = fun(x)
    step = 1.0
    d = np.zeros_like(x)
    best, stalled = fx, 0
    for _ in range(max_iter):
        while True:
            cand = project_simplex(x - step * g, floor)
            d = cand - x
            fc, gc = fun(cand)
            if fc <= fx + g @ d + (d @ d) / (2 * step) + 1e-15 * (1 + abs(fx)):
                break
            step *= 0.5
        x, fx, g = cand, fc, gc
        if np.linalg.norm(d) <= tol:
            return fx
        # near a flat optimum the displacement can hover above tol on rounding noise alone
        if fx < best - 8 * np.finfo(float).eps * (1 + abs(best)):
            best, stalled = fx, 0
        else:
            stalled += 1
            if stalled >= STALL_WINDOW:
                return min(fx, best)
        step *= 2.0
    raise ConvergenceError("min-max outer loop did not converge", float(np.linalg.norm(d)))


def minimax_check(Q: QPair, s: int, pi_other, profile: RiskProfile, i: int = 0, floor: float = 1e-6,
                  tol: float = 1e-10, max_iter: int = 100_000) -> tuple[float, float]:
    """Min-max and max-min of player ``i``'s stage objective with ``pi_-i`` fixed.

    The objective ``g(pi_i, p_i) = pi_i^T Q_i(s) p_i - D_i(p_i, pi_-i)/tau_i
    + eps_i nu_i(pi_i)`` is convex in ``pi_i`` and concave in ``p_i``. Each
    side is an outer projected-gradient loop around an exact inner solve;
    outer gradients follow from Danskin's theorem.

    Returns
    -------
    (minimax, maximin)
    """
    kind = profile.kind
    tau, eps = profile.tau[i], profile.eps[i]
    Qi = own_payoff(PayoffPair(Q.q1[s], Q.q2[s]), i)  # rows: own actions
    q = as_simplex(pi_other)
    n_own = Qi.shape[0]

    def phi(pi):
        # max_p pi^T Qi p - D(p, q)/tau, via the exact adversary routine (it maximizes -c.p - D/tau)
        p, h = adversary_exact(kind, -(Qi.T @ pi), q, tau, floor)
        return h + eps * nu_value(kind, pi), Qi @ p + eps * nu_grad(kind, pi)

    def neg_psi(p):
        pi = _argmin_pi(kind, Qi @ p, eps, floor)
        val = pi @ Qi @ p - d_value(kind, p, q) / tau + eps * nu_value(kind, pi)
        return -val, -(Qi.T @ pi - d_grad_p(kind, p, q) / tau)

    minimax = _projected_descent(phi, np.full(n_own, 1.0 / n_own), floor, tol, max_iter)
    maximin = -_projected_descent(neg_psi, project_simplex(q, floor), floor, tol, max_iter)
    return float(minimax), float(maximin)


# -- policy evaluation and a Monte Carlo cross-check -------------------------


def evaluate_policy(mg: MarkovGame, z: JointProfile, profile: RiskProfile, tol: float = 1e-12,
                    max_sweeps: int = 100_000) -> QPair:
    """Fixed point of ``T_z`` by repeated application from zero."""
    Q = QPair.zeros(mg)
    for _ in range(max_sweeps):
        Q_new = bellman_evaluate(Q, z, mg, profile)
        diff = Q_new.max_diff(Q)
        Q = Q_new
        if diff <= tol:
            return Q
    raise ConvergenceError("policy evaluation did not converge", diff)


def _sample(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] > cdf).sum(-1), cdf.shape[-1] - 1)


def monte_carlo_values(mg: MarkovGame, z: JointProfile, profile: RiskProfile, start: int,
                       n_rollouts: int, horizon: int, seed: int = 0):
    """Rollout estimates of ``V_1(start)`` and ``V_2(start)``.

    Player ``i``'s value is the discounted sum of
    ``-r_i - D_i/tau_i + eps_i nu_i`` with its own action drawn from
    ``pi_i`` and the opponent's from the adversary ``p_i``.

    Returns
    -------
    (mean, stderr), each of shape (2,)
    """
    rng = np.random.default_rng(seed)
    kind = profile.kind
    cdfP = np.cumsum(mg.transition, axis=-1)
    means, errs = [], []
    for i in (0, 1):
        pi_i, pi_o, p_i = z.player(i)
        reg = -d_value(kind, p_i, pi_o) / profile.tau[i] + profile.eps[i] * nu_value(kind, pi_i)
        cdf_own, cdf_adv = np.cumsum(pi_i, axis=-1), np.cumsum(p_i, axis=-1)
        s = np.full(n_rollouts, start)
        total = np.zeros(n_rollouts)
        disc = 1.0
        for _ in range(horizon):
            a_own = _sample(cdf_own[s], rng.random(n_rollouts))
            a_adv = _sample(cdf_adv[s], rng.random(n_rollouts))
            a1, a2 = (a_own, a_adv) if i == 0 else (a_adv, a_own)
            total += disc * (-mg.reward[s, a1, a2, i] + reg[s])
            s = _sample(cdfP[s, a1, a2], rng.random(n_rollouts))
            disc *= mg.gamma
        means.append(total.mean())
        errs.append(total.std(ddof=1) / np.sqrt(n_rollouts))
    return np.array(means), np.array(errs)
