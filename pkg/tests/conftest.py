import numpy as np
import pytest

from coopsync.config import NoiseModel, ScenarioConfig, reference_random_scenario
from coopsync.gaussian import Belief, Gaussian1D
from coopsync.world import AGENT, ANCHOR, NodeState, measure_slot, simulate

C = 299792458.0


def trilateration_slot(agent_xy=(20.0, 15.0), clock_m=30.0, sigma_d=0.0, seed=0):
    """One agent and three anchors, all links in range."""
    cfg = ScenarioConfig(bounds=(50, 50), anchors=((0, 0), (50, 0), (0, 50)), n_agents=1, d_max=100.0,
                         noise=NoiseModel(sigma_d=sigma_d))
    states = [NodeState(0, ANCHOR, (0.0, 0.0)), NodeState(1, ANCHOR, (50.0, 0.0)),
              NodeState(2, ANCHOR, (0.0, 50.0)), NodeState(3, AGENT, agent_xy, (0.0, 0.0), clock_m / C)]
    return measure_slot(1, states, cfg, np.random.default_rng(seed))


def exact_prior(slot, var_xy=100.0, std_clock_m=50.0):
    out = {}
    for i in slot.agents:
        s = slot.states[i]
        out[i] = Belief(Gaussian1D(s.position[0], var_xy), Gaussian1D(s.position[1], var_xy),
                        Gaussian1D(s.clock_offset, (std_clock_m / C) ** 2))
    return out


def random_slot(n_agents=8, seed=0, **overrides):
    cfg = reference_random_scenario(n_agents=n_agents, n_time=1, **overrides)
    sim = simulate(cfg, np.random.default_rng(seed))
    return cfg, sim.slots[0], sim.priors


@pytest.fixture
def small_network():
    return random_slot(n_agents=8, seed=3)


ACCEPTANCE_LINES: list = []


def report(criterion, ok: bool, detail: str) -> None:
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
