import os
from pathlib import Path

import numpy as np
import pytest

from hj_ks.quantum.wave import Evolution, RotorParams, WaveState

# Configure pytest-asyncio
pytest_plugins = ["pytest_asyncio"]

# Add project root to Python path
project_root = Path(__file__).parent.parent
os.environ["PYTHONPATH"] = str(project_root)


@pytest.fixture
def rng():
    """Seeded generator so property checks are reproducible"""
    return np.random.default_rng(20240517)


@pytest.fixture
def random_symmetric(rng):
    """Factory for random symmetric matrices of a given order"""
    def make(order, scale=1.0):
        a = rng.normal(scale=scale, size=(order, order))
        return 0.5 * (a + a.T)
    return make


@pytest.fixture(scope="session")
def small_rotor():
    return RotorParams(kick_strength=5.0, period=1.0, hbar=1.0)


@pytest.fixture(scope="session")
def small_evolution(small_rotor):
    """Coarse rotor record shared by the quantum tests (M = 256, 20 periods)"""
    psi0 = WaveState.uniform(256, small_rotor.hbar)
    return Evolution.run(psi0, small_rotor, 20, substeps=16)


@pytest.fixture
def run_dir(tmp_path):
    """Output directory for a run; created by the artifact writer"""
    return tmp_path / "run"
