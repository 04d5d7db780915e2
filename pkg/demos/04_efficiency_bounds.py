"""Closed-form efficiency bounds and their empirical counterparts.

The zero-exploration worst case drives the selfish crowd's cost ratio toward
2; the combined hiding/recommendation mechanism keeps its ratio below 5/4 no
matter the parameters.
"""

from routelab import analysis, policies
from routelab.model import VarianceCostModel

print("== selfish-crowd lower bound ==")
scenario = analysis.build_scenario("theorem1_worst", alpha_high=1.5, ell_0=100.0, n_users=5)
print(f"recovery exponent {scenario.psi:.2f}, closed-form bound {scenario.bound:.4f}")
policy, reference = analysis.scenario_policies(scenario)
rep = analysis.empirical_poa(policy, reference, scenario, runs=3, horizon=300, rho=0.99)
print(f"empirical discounted-cost ratio: {rep.empirical_ratio:.2f}\n")

print("== mechanism bound ==")
for m in (1, 2, 5):
    print(f"M={m}: closed form {analysis.poa_char(m, 10.0, VarianceCostModel.zero()):.4f}")

scenario = analysis.build_scenario("char_worst", m_paths=1, n_mean=10.0)
policy, reference = analysis.scenario_policies(scenario)
rep = analysis.empirical_poa(policy, reference, scenario, runs=1, horizon=400, rho=0.99)
print(f"M=1 worst case, empirical ratio: {rep.empirical_ratio:.4f} (target 1.25)")

print("\n== steady-state algebra ==")
split = analysis.steady_state_exploration(1, 10.0, 10.0, VarianceCostModel.zero())
print(f"mechanism steady exploration {split.n_char}, planner split "
      f"({split.n_star_safe}, {split.n_star_path}), cost ratio {split.ratio:.4f}")
