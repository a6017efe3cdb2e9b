import numpy as np
import pytest

from rqe.environments import (
    ACTION_NAMES,
    GridworldSpec,
    gridworld_mg,
    inspection_game,
    inspection_mg,
    random_mg,
)
from rqe.errors import ConfigurationError

SPEC = GridworldSpec()
C = SPEC.n_cells


@pytest.fixture(scope="module")
def grid():
    return gridworld_mg(0.9)


def joint(p0, p1):
    return SPEC.joint_state(SPEC.cell(p0), SPEC.cell(p1))


def test_inspection_game_matrices():
    R = inspection_game()
    assert R.R1[0, 1] == 5 and R.R2[0, 0] == -3
    assert np.ptp(R.R1) == 5 and np.ptp(R.R2) == 8
    assert max(np.ptp(R.R1), np.ptp(R.R2)) == 8


def test_inspection_mg():
    mg = inspection_mg(0.5)
    assert mg.n_states == 1
    np.testing.assert_array_equal(mg.transition, 1.0)
    np.testing.assert_allclose(mg.reward[0, :, :, 0], [[0, 1], [0.6, 0.6]])
    np.testing.assert_allclose(mg.reward[0, :, :, 1], [[0.25, 0], [0.625, 1]])


def test_gridworld_shapes_and_rows(grid):
    assert grid.transition.shape == (625, 5, 5, 625)
    assert np.max(np.abs(grid.transition.sum(-1) - 1)) <= 1e-12
    assert grid.rho0[joint(SPEC.start, SPEC.start)] == 1.0


def test_gridworld_reward_examples(grid):
    coop, d0, d1 = SPEC.coop_zone, SPEC.defect_zones[0], SPEC.defect_zones[1]
    np.testing.assert_allclose(grid.reward[joint(coop, coop)], 2 / 3)
    r = grid.reward[joint(d0, coop)]
    np.testing.assert_allclose(r[..., 0], 1.0)
    np.testing.assert_allclose(r[..., 1], 0.5 / 3)
    r = grid.reward[joint(coop, d1)]
    np.testing.assert_allclose(r[..., 0], 0.5 / 3)
    np.testing.assert_allclose(r[..., 1], 1.0)
    np.testing.assert_allclose(grid.reward[joint((2, 2), (1, 1))], 0.0)


def _marginal(grid, s, agent, a):
    """Next-position distribution of one agent when both choose action ``a``."""
    P = grid.transition[s, a, a].reshape(C, C)
    return P.sum(axis=1 - agent)


def test_corner_up_is_uniform_over_feasible(grid):
    s = joint((0, 0), (2, 2))
    m = _marginal(grid, s, 0, ACTION_NAMES.index("up"))
    expect = np.zeros(C)
    expect[[SPEC.cell((0, 1)), SPEC.cell((1, 0)), SPEC.cell((0, 0))]] = 1 / 3
    np.testing.assert_allclose(m, expect, atol=1e-15)


def test_cooperation_zone_is_sticky(grid):
    coop = SPEC.coop_zone
    s = joint(coop, (2, 2))
    m = _marginal(grid, s, 0, ACTION_NAMES.index("up"))
    assert m[SPEC.cell(coop)] == pytest.approx(0.7)
    assert m[SPEC.cell((coop[0] - 1, coop[1]))] == pytest.approx(0.3)


def test_defection_zones_absorb(grid):
    for agent in (0, 1):
        d = SPEC.cell(SPEC.defect_zones[agent])
        for other in range(C):
            s = SPEC.joint_state(d, other) if agent == 0 else SPEC.joint_state(other, d)
            P = grid.transition[s].reshape(5, 5, C, C).sum(axis=3 - agent)
            assert np.all(P[..., d] == 1.0)


def _rule_reward(p_self, p_other, own_defect):
    # second interpreter, written against coordinates rather than cell ids
    in_coop = lambda p: p == (4, 4)
    in_any_defect = lambda p: p in ((0, 4), (4, 0))
    if in_coop(p_self):
        return 2.0 if in_coop(p_other) else (0.5 if in_any_defect(p_other) else 1.0)
    if p_self == own_defect:
        return 3.0 if in_coop(p_other) else 0.0
    return 0.0


def test_reward_table_matches_second_interpreter(grid):
    cells = [(r, c) for r in range(5) for c in range(5)]
    for i, p0 in enumerate(cells):
        for j, p1 in enumerate(cells):
            s = i * C + j
            want = (_rule_reward(p0, p1, (0, 4)) / 3, _rule_reward(p1, p0, (4, 0)) / 3)
            assert np.all(grid.reward[s, ..., 0] == want[0])
            assert np.all(grid.reward[s, ..., 1] == want[1])


def test_gridworld_spec_validation():
    with pytest.raises(ConfigurationError):
        GridworldSpec(coop_zone=(0, 4))
    with pytest.raises(ConfigurationError):
        GridworldSpec(start=(9, 9))


def test_random_mg_properties():
    a, b = random_mg(4, (2, 3), 0.7, seed=11), random_mg(4, (2, 3), 0.7, seed=11)
    np.testing.assert_array_equal(a.reward, b.reward)
    np.testing.assert_array_equal(a.transition, b.transition)
    assert np.min(a.transition) >= 0.01 / 4 - 1e-15
    assert 0 <= a.reward.min() and a.reward.max() <= 1
    one = random_mg(1, (2, 2), 0.5, seed=3)
    np.testing.assert_array_equal(one.transition, 1.0)
    with pytest.raises(ConfigurationError):
        random_mg(0)
