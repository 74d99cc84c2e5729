import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_sim():
    from pollwait.synth import ScenarioConfig, simulate

    return simulate(ScenarioConfig(seed=11, n_places=60, voters_per_place=40), threads=1)


@pytest.fixture(scope="session")
def small_run(small_sim):
    from pollwait import pipeline as pp
    from pollwait.filters import FilterConfig

    inputs = pp.from_simulation(small_sim)
    return inputs, pp.run_core(inputs, 60.0, FilterConfig())
