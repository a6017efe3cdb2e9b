import csv

import numpy as np
import pytest

from rqe.environments import random_mg
from rqe.errors import ConfigurationError
from rqe.markov import MarkovGame, q_bounds, value_iteration
from rqe.regularizers import REVERSE_KL_NEG_ENTROPY, RiskProfile
from rqe.two_timescale import StepSchedule, run, write_trajectory_csv

PROF = RiskProfile.symmetric(5, 0.2)


@pytest.fixture(scope="module")
def game_and_oracle():
    mg = random_mg(3, gamma=0.3, seed=0)
    vi = value_iteration(mg, PROF, tol=1e-12, floor=1e-6)
    return mg, (vi.Q, vi.policy)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        StepSchedule.constant(0.2, 0.2)
    with pytest.raises(ConfigurationError):
        StepSchedule.constant(0.3, 0.2)
    with pytest.raises(ConfigurationError):
        StepSchedule.diminishing(0.1, 1.0, 0)
    with pytest.raises(ConfigurationError):
        StepSchedule.constant(-0.1, 0.2)
    s = StepSchedule.diminishing(0.5, 5.0, 10)
    assert s.at(0) == (0.05, 0.5)
    assert s.at(90) == (0.005, 0.05)
    assert StepSchedule.constant(0.02, 0.2).at(1234) == (0.02, 0.2)


def test_zero_reward_stays_uniform():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(3), size=(3, 2, 2))
    mg = MarkovGame(np.zeros((3, 2, 2, 2)), P, 0.9, np.full(3, 1 / 3))
    prof = RiskProfile.symmetric(1, 0.2, REVERSE_KL_NEG_ENTROPY)
    res = run(mg, prof, StepSchedule.constant(0.2, 0.5), 2000)
    np.testing.assert_allclose(res.policy.flat(), 0.5, atol=1e-10)
    c_star = -0.9 * 0.2 * np.log(2) / 0.1
    np.testing.assert_allclose(res.Q.q1, c_star, atol=1e-10)
    np.testing.assert_allclose(res.Q.q2, c_star, atol=1e-10)


def test_constant_steps_linear_rate(game_and_oracle):
    mg, oracle = game_and_oracle
    res = run(mg, PROF, StepSchedule.constant(0.02, 0.2), 1000, oracle=oracle)
    d, it = res.column("z_distance"), res.column("iter")
    assert d[-1] <= 1e-4
    m = len(d) // 5
    y = np.log(d[m:])
    coef = np.polyfit(it[m:], y, 1)
    r2 = 1 - np.sum((y - np.polyval(coef, it[m:])) ** 2) / np.sum((y - y.mean()) ** 2)
    assert coef[0] < 0 and r2 >= 0.9
    # smoothed distance is non-increasing after the first 10%
    sm = np.convolve(d, np.ones(50) / 50, mode="valid")
    tail = sm[len(d) // 10:]
    assert np.all(np.diff(tail) <= 1e-9)


def test_diminishing_steps_power_law(game_and_oracle):
    mg, oracle = game_and_oracle
    res = run(mg, PROF, StepSchedule.diminishing(0.5, 5.0, 10), 10_000, oracle=oracle)
    d, it = res.column("z_distance"), res.column("iter")
    m = len(d) // 5
    slope = np.polyfit(np.log(it[m:]), np.log(d[m:]), 1)[0]
    assert -2 <= slope <= -0.05
    assert d[999] >= 2 * d[9999]


def test_iterates_within_q_bounds():
    mg = random_mg(3, gamma=0.9, seed=4)
    q_max, q_span = q_bounds(mg, PROF, floor=1e-6)
    for n in (50, 100, 200):
        res = run(mg, PROF, StepSchedule.constant(0.1, 0.3), n)
        assert res.Q.max_norm() <= q_max and res.Q.span() <= q_span


def test_trajectory_decimation(monkeypatch):
    import rqe.two_timescale as tt

    monkeypatch.setattr(tt, "MAX_ROWS", 20)
    mg = random_mg(2, gamma=0.3, seed=1)
    res = tt.run(mg, PROF, StepSchedule.constant(0.02, 0.2), 300)
    assert res.stride == 100
    assert [r[0] for r in res.trajectory] == [100, 200, 300]


def test_trajectory_csv(tmp_path, game_and_oracle):
    mg, oracle = game_and_oracle
    for orc in (oracle, None):
        res = run(mg, PROF, StepSchedule.constant(0.02, 0.2), 5, oracle=orc)
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, res)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["iter", "alpha_t", "beta_t", "q_residual", "z_distance"]
        assert len(rows) == 6
        assert (rows[1][4] == "") == (orc is None)
        assert float(rows[-1][3]) == res.trajectory[-1][3]


def test_negative_iterations_rejected(game_and_oracle):
    with pytest.raises(ConfigurationError):
        run(game_and_oracle[0], PROF, StepSchedule(), -1)
