"""Risk aversion in the inspection game.

Certifies a KL/log-barrier profile, solves for its equilibrium at a few
risk-aversion levels and checks each answer with the deviation probe.
Run with ``python3 demos/inspection_game.py``.
"""

import numpy as np

from rqe import KL_LOG_BARRIER, RiskProfile, WeightVector, certify, inspection_game, rqe_gap, solve

R = inspection_game()

for tau in (1.0, 2.0, 5.0):
    base = RiskProfile((tau, tau), (0.5, 0.5), KL_LOG_BARRIER, WeightVector(1.0, 1.0))
    cert = certify(base)
    # monotonicity is only claimed in the certificate's own weighting
    profile = RiskProfile(base.tau, base.eps, base.kind, cert.lam)
    rep = solve(R, profile, tol=1e-10, metric="scaled", eta=0.2)
    gap = rqe_gap(rep.z_star, R, profile)
    z = rep.z_star
    print(f"tau={tau:3.1f}  strong={cert.is_strong!s:5}  mu={cert.mu:.3g}  "
          f"iters={int(rep.iterations):5d}  best deviation gain={np.max(gap):.1e}")
    print(f"    inspector {np.round(z.pi1, 3)}  worker {np.round(z.pi2, 3)}")

rn = solve(R, RiskProfile((1.0, 1.0), (0.5, 0.5), KL_LOG_BARRIER, WeightVector(1.0, 1.0)),
           risk_neutral=True, max_iter=5000)
print(f"risk-neutral gradient play converged: {bool(rn.converged)} "
      f"(final step norm {float(rn.final_step_norm):.2e})")
