"""Self-activating neural ensembles for continual reinforcement learning.

The public surface is small: build a :class:`~sane.config.RunConfig`, call
:func:`~sane.runner.run`, and read the artifacts.  Lower-level pieces
(networks, replay, losses, modules, ensembles, environments) are importable
from their own submodules.
"""
from .config import RunConfig, load_config
from .errors import ConfigError, NumericError, SaneError
from .runner import run, sweep

__version__ = "0.1.0"

__all__ = ["RunConfig", "load_config", "run", "sweep", "ConfigError", "NumericError",
           "SaneError", "__version__"]
