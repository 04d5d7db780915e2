"""Walk through the belief machinery on a single stochastic path.

Crowd reports update the hazard belief by Bayes' rule, the posterior sets the
expected carryover coefficient, and the carryover drives next-slot latency.
"""

import numpy as np

from routelab.belief import Observation, expected_alpha, hazard_prob, latency_update, posterior_update
from routelab.model import HazardModel, ObservationModel, PriorDistribution

hz = HazardModel(
    alpha_high=1.5, alpha_low=0.05, xbar_true=0.45,
    xbar_prior=PriorDistribution.uniform(0.2, 0.7),
)
obs = ObservationModel.gaussian_cdf(mean=0.3, variance=1.0)

x, ell = 0.66, 110.0
print(f"start: belief {x:.3f}, latency {ell:.1f}")
print(f"chance the next fused report says 'hazard' with 7 travelers: "
      f"{hazard_prob(x, 7, obs):.3f}")

rng = np.random.default_rng(4)
for t in range(8):
    n = 7
    y = Observation.HAZARD if rng.random() < hazard_prob(x, n, obs) else Observation.CLEAR
    x_post = posterior_update(x, n, y, obs)
    ell = latency_update(ell, n, x_post, hz)
    x = x_post
    print(f"t={t}: report={y.name:6s} belief -> {x:.3f}  "
          f"E[carryover]={expected_alpha(x, hz):.3f}  latency -> {ell:.2f}")
