import numpy as np
import pytest

from routelab import policies
from routelab.experiments import fig3_config, fig5_config


@pytest.fixture(scope="session")
def fig3_vf():
    cfg = fig3_config()
    mdp = policies.MdpConfig(
        rho=cfg.rho, belief_points=51, max_iterations=1200, tolerance=1e-3
    )
    return cfg, policies.solve_social_mdp(cfg, mdp)


@pytest.fixture(scope="session")
def fig5_vf():
    cfg = fig5_config()
    mdp = policies.MdpConfig(
        rho=cfg.rho, belief_points=51, max_iterations=1200, tolerance=1e-3
    )
    return cfg, policies.solve_social_mdp(cfg, mdp)
