"""Concrete games: the inspection game, the cooperation gridworld, random Markov games."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .markov import MarkovGame
from .normal_form import PayoffPair


def inspection_game() -> PayoffPair:
    """Inspector (rows: inspect, don't) against inspectee (columns: comply, defect)."""
    return PayoffPair(np.array([[0.0, 5.0], [3.0, 3.0]]), np.array([[-3.0, -5.0], [0.0, 3.0]]))


def _unit_rescale(M: np.ndarray) -> np.ndarray:
    sp = np.ptp(M)
    return np.zeros_like(M) if sp == 0 else (M - M.min()) / sp


def inspection_mg(gamma: float) -> MarkovGame:
    """The inspection game as a single self-looping state.

    Each player's payoffs are mapped affinely onto [0, 1] separately.
    """
    R = inspection_game()
    reward = np.stack([_unit_rescale(R.R1), _unit_rescale(R.R2)], axis=-1)[None]
    return MarkovGame(reward, np.ones((1, 2, 2, 1)), gamma, np.ones(1))


# -- gridworld ----------------------------------------------------------------

# action order: up, down, left, right, stay
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)])
ACTION_NAMES = ("up", "down", "left", "right", "stay")


@dataclass(frozen=True)
class GridworldSpec:
    """Layout of the cooperation gridworld; cells are ``(row, col)`` with row 0 on top."""

    size: int = 5
    coop_stay_prob: float = 0.7
    defect_zones: tuple = ((0, 4), (4, 0))  # agent 0 top-right, agent 1 bottom-left
    coop_zone: tuple = (4, 4)
    start: tuple = (0, 0)
    reward_scale: float = 3.0

    def __post_init__(self):
        cells = [tuple(self.defect_zones[0]), tuple(self.defect_zones[1]), tuple(self.coop_zone)]
        if len(set(cells)) != 3:
            raise ConfigurationError("zone cells must be distinct")
        if not 0 <= self.coop_stay_prob <= 1:
            raise ConfigurationError("coop_stay_prob must lie in [0, 1]")
        for c in cells + [tuple(self.start)]:
            if not all(0 <= x < self.size for x in c):
                raise ConfigurationError(f"cell {c} outside the grid")

    @property
    def n_cells(self) -> int:
        return self.size * self.size

    def cell(self, rc) -> int:
        return rc[0] * self.size + rc[1]

    def coords(self, k: int) -> tuple[int, int]:
        return divmod(k, self.size)

    def joint_state(self, k0: int, k1: int) -> int:
        return k0 * self.n_cells + k1


def _agent_kernel(spec: GridworldSpec, agent: int) -> np.ndarray:
    """Single-agent position kernel ``K[cell, action, next_cell]``."""
    n = spec.size
    C = spec.n_cells
    K = np.zeros((C, len(MOVES), C))
    own_defect = spec.cell(spec.defect_zones[agent])
    coop = spec.cell(spec.coop_zone)
    for k in range(C):
        if k == own_defect:
            K[k, :, k] = 1.0  # absorbing
            continue
        r, c = spec.coords(k)
        feasible = [spec.cell((r + dr, c + dc)) for dr, dc in MOVES
                    if 0 <= r + dr < n and 0 <= c + dc < n]
        for a, (dr, dc) in enumerate(MOVES):
            row = np.zeros(C)
            if 0 <= r + dr < n and 0 <= c + dc < n:
                row[spec.cell((r + dr, c + dc))] = 1.0
            else:
                # blocked: a uniform draw over the in-grid moves, staying included
                for t in feasible:
                    row[t] += 1.0 / len(feasible)
            if k == coop:
                row = spec.coop_stay_prob * np.eye(C)[k] + (1 - spec.coop_stay_prob) * row
            K[k, a] = row
    return K


def _zone_reward(spec: GridworldSpec, agent: int, own: int, other: int) -> float:
    coop = spec.cell(spec.coop_zone)
    defects = {spec.cell(z) for z in spec.defect_zones}
    if own == coop:
        if other == coop:
            return 2.0
        return 0.5 if other in defects else 1.0
    if own == spec.cell(spec.defect_zones[agent]):
        return 3.0 if other == coop else 0.0
    return 0.0


def gridworld_mg(gamma: float, spec: GridworldSpec = None) -> MarkovGame:
    """Two agents on the cooperation gridworld as a joint-state Markov game.

    Joint state ``s = cell0 * n_cells + cell1``. Rewards depend only on the
    current positions and are divided by ``spec.reward_scale``. Agents move
    independently, so the joint kernel is the product of the two
    single-agent kernels. Episodes start with both agents in ``spec.start``.
    """
    spec = spec or GridworldSpec()
    C = spec.n_cells
    A = len(MOVES)
    K0, K1 = _agent_kernel(spec, 0), _agent_kernel(spec, 1)
    P = np.einsum("iau,jbv->ijabuv", K0, K1).reshape(C * C, A, A, C * C)
    reward = np.zeros((C, C, 2))
    for k0 in range(C):
        for k1 in range(C):
            reward[k0, k1, 0] = _zone_reward(spec, 0, k0, k1)
            reward[k0, k1, 1] = _zone_reward(spec, 1, k1, k0)
    reward = np.broadcast_to((reward / spec.reward_scale).reshape(C * C, 1, 1, 2), (C * C, A, A, 2))
    rho0 = np.zeros(C * C)
    rho0[spec.joint_state(spec.cell(spec.start), spec.cell(spec.start))] = 1.0
    return MarkovGame(reward.copy(), P, gamma, rho0)


# -- random games -------------------------------------------------------------


def random_mg(n_states: int, n_actions=(2, 2), gamma: float = 0.9, seed: int = 0) -> MarkovGame:
    """Uniform rewards and Dirichlet(1) transitions floored at ``0.01 / n_states``."""
    if n_states < 1:
        raise ConfigurationError("n_states must be at least 1")
    n1, n2 = n_actions
    rng = np.random.default_rng(seed)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n1, n2, 2))
    floor = 0.01 / n_states
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n1, n2))
    P = floor + (1.0 - n_states * floor) * P
    P /= P.sum(axis=-1, keepdims=True)
    return MarkovGame(reward, P, gamma, np.full(n_states, 1.0 / n_states))
