"""Reproduce the exploration-versus-belief picture on the two-path network.

Below the threshold the selfish crowd over-explores the stochastic path;
above it the planner keeps sending scouts the crowd would not.
"""

from routelab import analysis, policies
from routelab.experiments import fig3_config

cfg = fig3_config()
mdp = policies.MdpConfig(rho=cfg.rho, belief_points=51, max_iterations=800, tolerance=1e-2)
vf = policies.solve_social_mdp(cfg, mdp)

report = analysis.find_threshold_xth(cfg, vf, grid_step=0.05)
print(f"belief threshold x_th = {report.x_th:.3f}\n")
print(" belief   crowd n   planner n")
for x, n_m, n_s in report.grid:
    marker = "<- threshold" if abs(x - report.x_th) < 0.026 else ""
    print(f"  {x:4.2f}    {n_m:6.2f}    {n_s:6.2f}   {marker}")
