import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qmpisim.machine import Machine, MachineConfig, RankProgram

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def run_all(machine, body, ranks=None):
    """Run the same rank body on every rank (or the listed ones)."""
    ranks = range(machine.num_nodes) if ranks is None else ranks
    return machine.run_programs([RankProgram(r, body) for r in ranks])


def one_qubit_per_rank(N, Q=1, S=2, seed=0, **kw):
    m = Machine(MachineConfig(N, Q, S, seed=seed, **kw))
    return m, [m.alloc_local(r)[0] for r in range(N)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
