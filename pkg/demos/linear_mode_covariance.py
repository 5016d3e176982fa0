"""
Stationary fluctuations below threshold
=======================================

Below threshold and with the nonlinearity frozen, the equations are linear.
Their stationary covariance then solves a Lyapunov equation, which gives an
exact target for the stochastic simulation.
"""

import numpy as np

from cimsim.ising import pairwise_afm
from cimsim.model import DOPOParams, threshold_pump
from cimsim.oracles import build_linear_model, lyapunov_residual, stationary_covariance
from cimsim.validation import covariance_agreement, relaxation_time, simulate_linear_covariance

params = DOPOParams()
J = pairwise_afm()
eps_p = 0.25 * threshold_pump(params)

spec = build_linear_model(J, params, eps_p)
C = stationary_covariance(spec)
print("exact covariance of (Re alpha_1, Re alpha_2, Re beta_1, Re beta_2):")
print(np.round(C, 4))
print("relative residual:", lyapunov_residual(spec, C))

# ten slowest relaxation times is plenty to forget the vacuum start
t_end = 10 * relaxation_time(J, params, eps_p)
C_sim, C_err, dead = simulate_linear_covariance(J, params, eps_p, t_end, 0.005, 20, 100, seed=3)
z, ok = covariance_agreement(C_sim, C_err, C)
print(f"simulated with 2000 trajectories: worst entry {z:.2f} standard errors away, dead lanes {dead}")

# feedback lowers the effective threshold; at half threshold with zeta=0.3
# one mode already grows, so no stationary state exists
half = build_linear_model(J, params, 0.5 * threshold_pump(params))
print("half threshold is stable:", half.is_hurwitz(),
      "| largest growth rate:", np.max(np.linalg.eigvals(half.A).real))
