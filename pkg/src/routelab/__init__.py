"""routelab: dynamic congestion games where travelers both learn and alter
stochastic path conditions.

Library layout:

- model: domain types, costs, configuration
- belief: Bayesian report fusion and latency carryover
- policies: myopic / socially optimal / hiding / CHAR routing
- sim: seeded world simulation and Monte-Carlo accounting
- analysis: efficiency bounds, thresholds, worst-case scenarios
- lineargraph: chained subnetworks and shared-segment hybrid networks
- cli: experiment runner emitting CSV reports
"""

__version__ = "0.1.0"
