"""From value iteration to sampled learning on the one-state inspection game.

Value iteration gives the reference equilibrium; the two-timescale
actor-critic and the sampled learner are then tracked against it.
Run with ``python3 demos/markov_learning.py`` (about a minute).
"""

import numpy as np

from rqe import (
    KL_LOG_BARRIER,
    MaacConfig,
    RiskProfile,
    WeightVector,
    inspection_mg,
    q_bounds,
    run,
    train,
    value_iteration,
)
from rqe.two_timescale import StepSchedule

mg = inspection_mg(gamma=0.3)
profile = RiskProfile((5.0, 5.0), (0.2, 0.2), KL_LOG_BARRIER, WeightVector(1.0, 1.0))

vi = value_iteration(mg, profile, tol=1e-10)
q_max, q_span = q_bounds(mg, profile)
# the a-priori bounds are loose: the log-barrier Lipschitz constant on the floored simplex is huge
print(f"value iteration: {vi.sweeps} sweeps, max |Q| {np.abs(vi.Q.q1).max():.3f} "
      f"(a-priori bound {q_max:.3g}, span bound {q_span:.3g})")
oracle = (vi.Q, vi.policy)

tt = run(mg, profile, StepSchedule.constant(0.05, 0.5), n_iter=1000, oracle=oracle)
d = tt.column("z_distance")
print(f"two-timescale: distance {d[0]:.2e} -> {d[-1]:.2e} after 1000 iterations")

for mode in ("OnPolicy", "OffPolicy"):
    res = train(mg, profile, MaacConfig(n_episodes=300, K=64, mode=mode, seed=0), oracle=oracle)
    d = res.column("z_distance")
    print(f"sampled learner ({mode}): median distance over the last 50 episodes {np.median(d[-50:]):.2e}")
