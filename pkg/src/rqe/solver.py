"""Normal-form RQE by projected preconditioned gradient descent.

The iteration ``z <- Proj(z - eta * Lambda * F(z))`` runs on the product of
floored simplices. Leading axes of the payoffs are treated as independent
games solved in lock-step, each with its own step size, which is how the
Markov-game code solves all stage games of a sweep at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import certify
from .errors import ConfigurationError, ConvergenceError, InvalidInputError, UnsupportedOracleError
from .normal_form import (
    JointProfile,
    PayoffPair,
    adversary_exact,
    default_floor,
    gradient_operator,
    own_payoff,
    project_profile,
)
from .regularizers import RiskProfile, nu_value, operating_floor
from .simplex import WeightVector, project_simplex, project_simplex_scaled

DEFAULT_ETA = 0.05
GROWTH_WINDOW = 100
GROWTH_FACTOR = 10.0
MIN_ETA_FRACTION = 2.0 ** -30  # halving never takes a step below eta times this


@dataclass
class SolveReport:
    """Result of :func:`solve`.

    For batched input ``iterations``, ``final_step_norm``, ``converged`` and
    ``eta`` are arrays over the batch.
    """

    z_star: JointProfile
    iterations: object
    final_step_norm: object
    converged: object
    eta: object = None
    trajectory: Optional[list] = field(default=None, repr=False)

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def risk_neutral_operator(z: JointProfile, R: PayoffPair) -> JointProfile:
    """Bilinear part only, with each adversary pinned to the true opponent."""
    R1, R2own = own_payoff(R, 0), own_payoff(R, 1)
    g1 = -np.einsum("...ab,...b->...a", R1, z.pi2)
    g2 = -np.einsum("...ab,...b->...a", R2own, z.pi1)
    return JointProfile(g1, g2, np.zeros_like(z.p1), np.zeros_like(z.p2))


def projected_step(z: JointProfile, F: JointProfile, eta, lam: WeightVector, floor: float,
                   metric: str = "euclidean") -> JointProfile:
    """One preconditioned projected step; ``eta`` broadcasts over the batch.

    With ``metric="scaled"`` each coordinate's step is multiplied by its
    current value and the projection uses the matching weighted norm, which
    leaves the fixed points unchanged.
    """
    eta = np.asarray(eta, dtype=float)[..., None]
    out = []
    for b, g, w in zip(z.blocks(), F.blocks(), lam.block_weights()):
        if metric == "euclidean":
            out.append(project_simplex(b - eta * w * g, floor))
        elif metric == "scaled":
            out.append(project_simplex_scaled(b - eta * w * b * g, b, floor))
        else:
            raise ConfigurationError(f"unknown metric {metric!r}")
    return JointProfile(*out)


def _flatten(z: JointProfile, batch) -> JointProfile:
    B = int(np.prod(batch)) if batch else 1
    return JointProfile(*(b.reshape(B, b.shape[-1]) for b in z.blocks()))


def solve(R: PayoffPair, profile: RiskProfile, eta: float = DEFAULT_ETA, tol: float = 1e-8,
          max_iter: int = 100_000, z0: JointProfile = None, floor: float = None,
          risk_neutral: bool = False, record: bool = False, oracle: JointProfile = None,
          record_every: int = 1, metric: str = "euclidean", eta_init=None) -> SolveReport:
    """Find the Nash equilibrium of the four-player game.

    Parameters
    ----------
    R : PayoffPair
        Payoffs, possibly batched over leading axes.
    profile : RiskProfile
        Risk parameters; ``profile.lam`` preconditions the step.
    eta : float
        Nominal step size. A game's step is halved whenever its step norm
        grows tenfold across a 100-iteration window, or fails to shrink at
        all across one.
    tol : float
        Converged once the displacement of an iterate, rescaled to the
        nominal step (``||z_{t+1} - z_t|| * eta / eta_t``), is at most
        ``tol``. Without halving this is the plain displacement.
    risk_neutral : bool
        Drop the regularizers and pin ``p_i = pi_-i``: plain projected
        gradient play on the bilinear game, with no step-size adaptation.
    record : bool
        Keep ``(iteration, step_norm, distance_to_oracle)`` rows; batched
        solves record the largest value over the batch.
    metric : {"euclidean", "scaled"}
        See :func:`projected_step`.
    eta_init : array_like, optional
        Per-game starting step sizes (e.g. from a previous solve).

    Returns
    -------
    SolveReport
        Never raises on non-convergence; check ``converged``.
    """
    if not eta > 0:
        raise ConfigurationError("eta must be positive")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    n1, n2 = R.n_actions
    batch = R.batch_shape
    B = int(np.prod(batch)) if batch else 1
    if floor is None:
        floor = 0.0 if risk_neutral else default_floor(R, profile)
    if z0 is None:
        z = JointProfile.uniform(n1, n2, (B,))
    else:
        z = JointProfile(*(np.broadcast_to(b, batch + b.shape[-1:]).astype(float) for b in z0.blocks()))
        z = project_profile(_flatten(z, batch), floor)
    Rf = PayoffPair(R.R1.reshape((B,) + R.n_actions), R.R2.reshape((B,) + R.n_actions))
    lam = profile.lam
    eta_b = np.full(B, float(eta)) if eta_init is None else \
        np.broadcast_to(np.asarray(eta_init, dtype=float), batch).reshape(B).copy()
    iters = np.zeros(B, dtype=int)
    step_norm = np.full(B, np.inf)
    ref_norm = np.full(B, np.nan)
    win_min = np.full(B, np.inf)
    prev_min = np.full(B, np.nan)
    done = np.zeros(B, dtype=bool)
    traj = [] if record else None
    oracle_flat = _flatten(oracle, oracle.batch_shape).flat() if (record and oracle is not None) else None

    # work on the still-active games only; scatter back when some finish
    idx = np.arange(B)
    zs, Rs = z, Rf
    for t in range(1, max_iter + 1):
        if risk_neutral:
            zs.p1, zs.p2 = zs.pi2.copy(), zs.pi1.copy()
            F = risk_neutral_operator(zs, Rs)
        else:
            F = gradient_operator(zs, Rs, profile)
        z_new = projected_step(zs, F, eta_b[idx], lam, floor, metric)
        if risk_neutral:
            z_new.p1, z_new.p2 = z_new.pi2.copy(), z_new.pi1.copy()
        d = z_new.distance(zs)
        zs = z_new
        step_norm[idx] = d
        iters[idx] = t
        if record and (t % record_every == 0 or t == 1):
            for full, part in zip(z.blocks(), zs.blocks()):
                full[idx] = part
            dist = float(np.max(np.linalg.norm(z.flat() - oracle_flat, axis=-1))) if oracle_flat is not None else np.nan
            traj.append((t, float(np.max(d)), dist))
        finished = d * (eta / eta_b[idx]) <= tol
        win_min[idx] = np.minimum(win_min[idx], d)
        if not risk_neutral and t % GROWTH_WINDOW == 0:
            # halve on blow-up, and also when a whole window fails to reach a
            # new smallest step (a stiff coordinate near the floor makes the
            # iterates cycle); slow but steady progress is left alone
            ref = ref_norm[idx]
            grew = np.isfinite(ref) & (d > GROWTH_FACTOR * ref)
            stuck = np.isfinite(prev_min[idx]) & (win_min[idx] >= prev_min[idx])
            bad = ~finished & (grew | stuck)
            prev_min[idx] = win_min[idx]
            win_min[idx] = np.inf
            eta_b[idx[bad]] = np.maximum(0.5 * eta_b[idx[bad]], eta * MIN_ETA_FRACTION)
            ref_norm[idx] = d
        if np.any(finished):
            for full, part in zip(z.blocks(), zs.blocks()):
                full[idx] = part
            done[idx[finished]] = True
            keep = ~finished
            idx, zs, Rs = idx[keep], zs[keep], Rs[keep]
            if idx.size == 0:
                break
    for full, part in zip(z.blocks(), zs.blocks()):
        full[idx] = part

    if not batch:
        return SolveReport(z[0], int(iters[0]), float(step_norm[0]), bool(done[0]), float(eta_b[0]), traj)
    z = JointProfile(*(b.reshape(batch + b.shape[-1:]) for b in z.blocks()))
    return SolveReport(z, iters.reshape(batch), step_norm.reshape(batch), done.reshape(batch),
                       eta_b.reshape(batch), traj)


def write_trajectory_csv(path, report: SolveReport) -> None:
    """Trajectory rows as CSV: ``iteration, step_norm, distance_to_oracle``."""
    if report.trajectory is None:
        raise InvalidInputError("solve was run without record=True")
    with_oracle = any(np.isfinite(r[2]) for r in report.trajectory)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "step_norm"] + (["distance_to_oracle"] if with_oracle else []))
        for it, s, dist in report.trajectory:
            w.writerow([it, "%.17g" % s] + (["%.17g" % dist] if with_oracle else []))


# -- brute-force oracle for 2x2 games ----------------------------------------


def _f_two_by_two(i, x, y, R: PayoffPair, profile: RiskProfile, floor: float):
    """Player ``i``'s risk-adjusted cost on probability grids.

    ``x`` is the probability of player ``i``'s first action and ``y`` that of
    the opponent's first action; they broadcast against each other.
    """
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    pi_i = np.stack([x, 1.0 - x], axis=-1)
    q = np.stack([y, 1.0 - y], axis=-1)
    Ri = own_payoff(R, i)
    c = np.einsum("ab,...a->...b", Ri, pi_i)
    _, h = adversary_exact(profile.kind, c, q, profile.tau[i], floor)
    return h + profile.eps[i] * nu_value(profile.kind, pi_i)


def _best_response_value(i, y, R, profile, floor, lo, hi, iters=80):
    # f_i is convex in the player's own strategy: golden-section search,
    # vectorized over all opponent values y
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a = np.full(np.shape(y), lo)
    b = np.full(np.shape(y), hi)
    for _ in range(iters):
        c = b - gr * (b - a)
        d = a + gr * (b - a)
        left = _f_two_by_two(i, c, y, R, profile, floor) < _f_two_by_two(i, d, y, R, profile, floor)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    vals = [_f_two_by_two(i, v, y, R, profile, floor) for v in (0.5 * (a + b), lo, hi)]
    return np.minimum.reduce(vals)


def _exploitability_grid(xs, ys, R, profile, floor, lo, hi):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    f1 = _f_two_by_two(0, X, Y, R, profile, floor)
    f2 = _f_two_by_two(1, Y, X, R, profile, floor)
    br1 = _best_response_value(0, ys, R, profile, floor, lo, hi)
    br2 = _best_response_value(1, xs, R, profile, floor, lo, hi)
    return np.maximum(f1 - br1[None, :], f2 - br2[:, None])


def brute_force_rqe(R: PayoffPair, profile: RiskProfile, grid_step: float = 1e-3,
                    floor: float = None, zoom_levels: int = 2) -> JointProfile:
    """Exhaustive grid search for the RQE of a 2x2 game.

    Every grid pair ``(pi1, pi2)`` is scored by the larger of the two
    players' unilateral improvements, with adversaries solved exactly from
    their optimality conditions and best responses found by a convex
    line search. The best cell is then searched again on successively
    finer local grids (20x finer per level) so that the adversary
    components, which move faster than the policies, are also pinned down.
    """
    if R.batch_shape or R.n_actions != (2, 2):
        raise UnsupportedOracleError("the brute-force oracle only handles single 2x2 games")
    if not 0 < grid_step <= 1e-2:
        raise ConfigurationError("grid_step must lie in (0, 1e-2]")
    if floor is None:
        floor = default_floor(R, profile)
    lo, hi = floor, 1.0 - floor
    xs = np.arange(lo, hi + 0.5 * grid_step, grid_step)
    xs[-1] = min(xs[-1], hi)
    ys = xs
    step = grid_step
    for level in range(zoom_levels + 1):
        G = _exploitability_grid(xs, ys, R, profile, floor, lo, hi)
        k1, k2 = np.unravel_index(np.argmin(G), G.shape)
        x, y = xs[k1], ys[k2]
        if level == zoom_levels:
            break
        fine = step / 20.0
        xs = np.clip(np.arange(x - 2 * step, x + 2 * step + 0.5 * fine, fine), lo, hi)
        ys = np.clip(np.arange(y - 2 * step, y + 2 * step + 0.5 * fine, fine), lo, hi)
        step = fine
    pi1 = np.array([x, 1.0 - x])
    pi2 = np.array([y, 1.0 - y])
    p1, _ = adversary_exact(profile.kind, own_payoff(R, 0).T @ pi1, pi2, profile.tau[0], floor)
    p2, _ = adversary_exact(profile.kind, own_payoff(R, 1).T @ pi2, pi1, profile.tau[1], floor)
    return JointProfile(pi1, pi2, p1, p2)


# -- Lipschitz continuity of the equilibrium in the payoffs ------------------


def lipschitz_bound(lam: WeightVector, n_actions, mu: float) -> float:
    """``2 ||lambda||_inf (sqrt|A1| + sqrt|A2|) / mu``."""
    if not mu > 0:
        raise ConfigurationError("the Lipschitz bound needs mu > 0")
    n1, n2 = n_actions
    return 2.0 * lam.inf_norm * (np.sqrt(n1) + np.sqrt(n2)) / mu


def lipschitz_probe(R: PayoffPair, delta: float, n_trials: int, profile: RiskProfile,
                    mu: float = None, seed: int = 0, tol: float = 1e-10,
                    max_iter: int = 1_000_000) -> tuple[float, float]:
    """Largest observed ``||z* - z'||_2 / ||R - R'||_max`` under random perturbations.

    Each trial adds independent uniform noise in ``[-delta, delta]`` to every
    payoff entry and solves both games from the same start. ``mu`` defaults
    to the certificate's modulus for ``profile.lam``.

    Returns
    -------
    (max_ratio, bound)
    """
    if delta < 1e-6:
        raise ConfigurationError("delta must be at least 1e-6")
    n = R.n_actions
    floor = operating_floor_with_margin(R, profile, delta)
    if mu is None:
        cert = certify(profile, n, floor=floor, lam=profile.lam)
        mu = cert.mu
    bound = lipschitz_bound(profile.lam, n, mu)
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-delta, delta, size=(n_trials, 2) + n)
    Rp = PayoffPair(R.R1 + noise[:, 0], R.R2 + noise[:, 1])
    base = solve(R, profile, tol=tol, max_iter=max_iter, floor=floor)
    pert = solve(Rp, profile, tol=tol, max_iter=max_iter, floor=floor)
    if not (base.all_converged and pert.all_converged):
        raise ConvergenceError("a perturbed solve did not converge",
                               float(np.max(pert.final_step_norm)))
    num = np.linalg.norm(pert.z_star.flat() - base.z_star.flat()[None, :], axis=-1)
    den = np.max(np.abs(noise.reshape(n_trials, -1)), axis=-1)
    return float(np.max(num / den)), float(bound)


def operating_floor_with_margin(R: PayoffPair, profile: RiskProfile, delta: float) -> float:
    """Floor valid for every game within ``delta`` of ``R`` entrywise."""
    return operating_floor(profile, R.span + 2.0 * delta, R.n_actions)


def fixed_point_residual(z: JointProfile, R: PayoffPair, profile: RiskProfile,
                         eta: float = DEFAULT_ETA, floor: float = None) -> float:
    """``max |Proj(z - eta Lambda F(z)) - z|``."""
    if floor is None:
        floor = default_floor(R, profile)
    z1 = projected_step(z, gradient_operator(z, R, profile), eta, profile.lam, floor)
    return z1.max_abs_diff(z)
