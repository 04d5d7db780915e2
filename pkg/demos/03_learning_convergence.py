"""Belief learning under selfish versus planned routing.

The selfish crowd never touches the stochastic path (its quoted cost stays
above the safe path), so its belief stays frozen at the wrong initial value.
The planner keeps scouts flowing and the average belief settles at the true
long-run hazard rate.
"""

from routelab import policies, sim
from routelab.analysis import convergence_diagnostics
from routelab.experiments import fig5_config

cfg = fig5_config()
mdp = policies.MdpConfig(rho=cfg.rho, belief_points=51, max_iterations=800, tolerance=1e-2)
vf = policies.solve_social_mdp(cfg, mdp)

runs, horizon = 200, 30
myopic = sim.monte_carlo(policies.MyopicPolicy(cfg), cfg, runs, horizon, cfg.rho, base_seed=1)
social = sim.monte_carlo(policies.SocialValuePolicy(cfg, vf), cfg, runs, horizon, cfg.rho, base_seed=1)

print(f"true long-run hazard rate: {cfg.hazard.xbar_true}")
print(" slot   crowd belief   planner belief")
for t in range(0, horizon, 3):
    print(f"  {t:3d}     {myopic.mean_belief_trace[t,0]:.3f}          "
          f"{social.mean_belief_trace[t,0]:.3f}")

rep = convergence_diagnostics(social, cfg.hazard.xbar_true, tolerance=0.05)
print(f"\nplanner converged: {rep.converged} (final {rep.final_mean_belief:.3f})")
print(f"crowd stuck at {myopic.mean_belief_trace[-1,0]:.3f}")
