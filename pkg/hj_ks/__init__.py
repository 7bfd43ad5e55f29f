__version__ = "0.1.0"

from .config.config import config
from .engines.riccati import TrajectoryState, evolve_ks
from .engines.kicked import run_kicked
from .engines.benettin import spectrum
from .systems.catalog import get_model

__all__ = [
    '__version__',
    'config',
    'TrajectoryState',
    'evolve_ks',
    'run_kicked',
    'spectrum',
    'get_model',
]
