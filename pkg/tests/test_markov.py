import numpy as np
import pytest

from rqe.environments import inspection_mg, random_mg
from rqe.errors import ConfigurationError, ConvergenceError, InvalidInputError
from rqe.markov import (
    MarkovGame,
    QPair,
    bellman_evaluate,
    bellman_optimality,
    evaluate_policy,
    minimax_check,
    monte_carlo_values,
    q_bounds,
    stage_game,
    stage_values,
    value_iteration,
)
from rqe.normal_form import JointProfile, PayoffPair, rqe_gap
from rqe.regularizers import KL_LOG_BARRIER, REVERSE_KL_NEG_ENTROPY, RiskProfile
from rqe.solver import solve

NE = RiskProfile.symmetric(5, 0.2, REVERSE_KL_NEG_ENTROPY)
LB = RiskProfile.symmetric(5, 0.2, KL_LOG_BARRIER)


def zero_reward_mg(n_states=3, gamma=0.9, seed=0):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, 2, 2))
    return MarkovGame(np.zeros((n_states, 2, 2, 2)), P, gamma, np.full(n_states, 1 / n_states))


def random_q(mg, rng, scale=1.0):
    shape = (mg.n_states,) + mg.n_actions
    return QPair(rng.uniform(-scale, scale, shape), rng.uniform(-scale, scale, shape))


# -- data model --------------------------------------------------------------


def test_markov_game_validation():
    r = np.zeros((1, 2, 2, 2))
    P = np.ones((1, 2, 2, 1))
    with pytest.raises(InvalidInputError):
        MarkovGame(r + 2, P, 0.5, np.ones(1))
    with pytest.raises(InvalidInputError):
        MarkovGame(r, P * 0.5, 0.5, np.ones(1))
    with pytest.raises((InvalidInputError, ConfigurationError)):
        MarkovGame(r, P, 1.0, np.ones(1))
    mg = MarkovGame(r, P, 0.5, np.ones(1))
    with pytest.raises(ValueError):
        mg.reward[0, 0, 0, 0] = 1.0


def test_serialization_round_trip(tmp_path):
    mg = random_mg(4, (2, 3), 0.7, seed=5)
    back = MarkovGame.loads(mg.dumps())
    assert back.same_as(mg)
    np.testing.assert_array_equal(back.transition, mg.transition)
    path = tmp_path / "g.json"
    mg.save(path)
    assert MarkovGame.load(path).same_as(mg)
    d = mg.to_dict()
    assert {"n_states", "n_actions", "gamma", "rho0", "reward", "transition"} <= set(d)
    d["version"] = 99
    with pytest.raises(InvalidInputError):
        MarkovGame.from_dict(d)


def test_stage_game_examples():
    mg = random_mg(2, (2, 2), 0.5, seed=1)
    Q = QPair.zeros(mg)
    R = stage_game(Q, 0)
    assert np.all(R.R1 == 0) and np.all(R.R2 == 0)
    Q = QPair(np.full((2, 2, 2), 3.0), np.zeros((2, 2, 2)))
    np.testing.assert_array_equal(stage_game(Q, 1).R1, -3.0)
    z = JointProfile.uniform(2, 2, (2,))
    TQ = bellman_evaluate(QPair.zeros(mg), z, mg, LB)
    for s in range(2):
        np.testing.assert_array_equal(stage_game(TQ, s).R1, -TQ.q1[s])
        np.testing.assert_array_equal(stage_game(TQ, s).R2, -TQ.q2[s])
    with pytest.raises(InvalidInputError):
        stage_game(TQ, 5)


# -- evaluation operator -----------------------------------------------------


def test_bellman_evaluate_zero_reward():
    mg = zero_reward_mg()
    z = JointProfile.uniform(2, 2, (3,))
    c = 0.8
    Q = QPair(np.full((3, 2, 2), c), np.full((3, 2, 2), c))
    TQ = bellman_evaluate(Q, z, mg, RiskProfile.symmetric(1, 0.2, REVERSE_KL_NEG_ENTROPY))
    np.testing.assert_allclose(TQ.q1, 0.9 * (c - 0.2 * np.log(2)), atol=1e-14)
    c_star = -0.9 * 0.2 * np.log(2) / 0.1
    assert c_star == pytest.approx(-1.24766, abs=1e-5)
    Q = QPair.zeros(mg)
    for _ in range(200):
        Q = bellman_evaluate(Q, z, mg, RiskProfile.symmetric(1, 0.2, REVERSE_KL_NEG_ENTROPY))
    np.testing.assert_allclose(Q.q1, c_star, atol=1e-8)
    np.testing.assert_allclose(Q.q2, c_star, atol=1e-8)


def test_bellman_evaluate_gamma_zero_and_affine(rng):
    mg = random_mg(3, (2, 3), 0.0, seed=2)
    z = JointProfile(*(rng.dirichlet(np.ones(n), size=3) for n in (2, 3, 3, 2)))
    Q = random_q(mg, rng)
    TQ = bellman_evaluate(Q, z, mg, LB)
    np.testing.assert_allclose(TQ.q1, -mg.r(0))
    np.testing.assert_allclose(TQ.q2, -mg.r(1))
    mg = mg.with_gamma(0.8)
    c = 1.7
    lhs = bellman_evaluate(QPair(Q.q1 + c, Q.q2 + c), z, mg, LB)
    rhs = bellman_evaluate(Q, z, mg, LB)
    np.testing.assert_allclose(lhs.q1, rhs.q1 + 0.8 * c, atol=1e-12)
    np.testing.assert_allclose(lhs.q2, rhs.q2 + 0.8 * c, atol=1e-12)


def test_policy_values_match_monte_carlo():
    mg = random_mg(2, (2, 2), 0.8, seed=3)
    rng = np.random.default_rng(4)
    z = JointProfile(*(0.1 + 0.8 * rng.dirichlet(np.ones(2), size=2) for _ in range(4)))
    Q = evaluate_policy(mg, z, LB)
    V = stage_values(Q, z, LB)
    for s in range(2):
        mean, err = monte_carlo_values(mg, z, LB, s, 100_000, 200, seed=s)
        assert np.all(np.abs(mean - V[:, s]) <= 3 * err)


# -- optimality operator and value iteration ----------------------------------


def test_bellman_optimality_zero_reward():
    mg = zero_reward_mg()
    TQ, z = bellman_optimality(QPair.zeros(mg), mg, NE)
    np.testing.assert_allclose(TQ.q1, 0.9 * -0.2 * np.log(2), atol=1e-9)
    np.testing.assert_allclose(z.pi1, 0.5, atol=1e-9)


def test_bellman_optimality_gamma_zero(rng):
    mg = random_mg(3, (2, 2), 0.0, seed=7)
    Q = random_q(mg, rng)
    TQ, z = bellman_optimality(Q, mg, LB, stage_tol=1e-12)
    np.testing.assert_allclose(TQ.q1, -mg.r(0))
    for s in range(3):
        ref = solve(stage_game(Q, s), LB, tol=1e-12, floor=1e-6).z_star
        assert ref.max_abs_diff(z[s]) <= 1e-7


def test_bellman_optimality_contracts(rng):
    mg = random_mg(3, (2, 2), 0.3, seed=0)
    ratios = []
    for _ in range(5):
        Q, Qp = random_q(mg, rng, 2.0), random_q(mg, rng, 2.0)
        TQ, _ = bellman_optimality(Q, mg, LB, floor=1e-6)
        TQp, _ = bellman_optimality(Qp, mg, LB, floor=1e-6)
        ratios.append(TQ.max_diff(TQp) / Q.max_diff(Qp))
    assert max(ratios) < 1


def test_value_iteration_zero_reward():
    mg = zero_reward_mg()
    res = value_iteration(mg, NE, tol=1e-10)
    np.testing.assert_allclose(res.Q.q1, -0.9 * 0.2 * np.log(2) / 0.1, atol=1e-8)
    np.testing.assert_allclose(res.policy.flat(), 0.5, atol=1e-9)


def test_value_iteration_inspection_gamma_zero():
    mg = inspection_mg(0.0)
    res = value_iteration(mg, LB, tol=1e-10)
    R = PayoffPair(mg.reward[0, :, :, 0], mg.reward[0, :, :, 1])
    ref = solve(R, LB, tol=1e-12).z_star
    assert res.policy[0].max_abs_diff(ref) <= 1e-6


def test_value_iteration_fixed_point_and_bounds():
    mg = random_mg(4, (2, 3), 0.6, seed=9)
    res = value_iteration(mg, LB, tol=1e-8)
    TQ, _ = bellman_optimality(res.Q, mg, LB, stage_tol=1e-11, z0=res.policy)
    assert TQ.max_diff(res.Q) <= 10 * 1e-8
    assert np.max(rqe_gap(res.policy, stage_game(res.Q), LB)) <= 1e-5
    q_max, q_span = q_bounds(mg, LB)
    assert all(h[2] <= q_max and h[3] <= q_span for h in res.history)


def test_value_iteration_step_schedule_and_failure():
    mg = random_mg(2, (2, 2), 0.5, seed=1)
    res = value_iteration(mg, LB, alpha=lambda t: 1.0 / (1 + 0.1 * t), tol=1e-8)
    ref = value_iteration(mg, LB, tol=1e-10)
    assert res.Q.max_diff(ref.Q) <= 1e-6
    with pytest.raises(ConvergenceError):
        value_iteration(mg, LB, tol=1e-12, max_sweeps=2)


# -- Q bounds ----------------------------------------------------------------


def test_q_bounds_examples():
    mg = random_mg(3, (2, 2), 0.0, seed=0)
    assert q_bounds(mg, LB) == pytest.approx((1.0, 1.0))
    mg = mg.with_gamma(0.9)
    lo = q_bounds(mg, LB, floor=1e-3)
    hi = q_bounds(mg, LB, floor=1e-4)
    assert np.all(np.isfinite(lo)) and lo[0] < hi[0] and lo[1] < hi[1]


@pytest.mark.parametrize("seed", range(10))
def test_value_iteration_iterates_within_q_bounds(seed):
    mg = random_mg(3, (2, 2), 0.9, seed=seed)
    q_max, q_span = q_bounds(mg, LB, floor=1e-3)
    res = value_iteration(mg, LB, tol=1e-4, floor=1e-3)
    assert all(h[2] <= q_max and h[3] <= q_span for h in res.history)


# -- minimax equality -------------------------------------------------------------


def test_minimax_zero_q():
    mg = random_mg(1, (3, 2), 0.5)
    mm, xm = minimax_check(QPair.zeros(mg), 0, [0.5, 0.5], NE, i=0)
    assert mm == pytest.approx(-0.2 * np.log(3), abs=1e-8)
    assert xm == pytest.approx(-0.2 * np.log(3), abs=1e-8)


@pytest.mark.parametrize("kind", [KL_LOG_BARRIER, REVERSE_KL_NEG_ENTROPY])
def test_minimax_equals_maximin(kind):
    rng = np.random.default_rng(21)
    prof = RiskProfile.symmetric(5, 0.2, kind)
    mg = random_mg(1, (2, 2), 0.5)
    for _ in range(5):
        Q = random_q(mg, rng)
        pi_other = rng.dirichlet(np.ones(2)) * 0.9 + 0.05
        for sign in (1, -1):
            Qs = QPair(sign * Q.q1, sign * Q.q2)
            for i in (0, 1):
                mm, xm = minimax_check(Qs, 0, pi_other, prof, i=i)
                assert abs(mm - xm) <= 1e-6
