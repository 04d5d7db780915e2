"""Four policies on the bundled nine-segment hybrid road network.

Routes share segments, hazards follow per-segment two-state chains, and the
four policies differ in what they do with the crowd's reports.
"""

import numpy as np

import routelab.lineargraph as LG

cfg = LG.beijing_hybrid_config()
print("segments:", ", ".join(s.name for s in cfg.segments))
print("routes:", cfg.routes)
print("long-run hazard rates:",
      {cfg.segments[i].name: round(cfg.segments[i].transition.steady_state, 3)
       for i in cfg.stochastic_indices})

policies = LG.hybrid_policy_set(cfg)
results = {}
for name, policy in policies.items():
    summary = LG.hybrid_monte_carlo(policy, cfg, runs=20, horizon=30, rho=0.98, base_seed=2024)
    results[name] = summary.mean_discounted_cost
    print(f"{name:7s} mean discounted cost {summary.mean_discounted_cost:12.0f}")

social = results["social"]
print("\nexcess over the planner:")
for name in ("char", "myopic", "hiding"):
    print(f"  {name:7s} +{100 * (results[name] / social - 1):.1f}%")
