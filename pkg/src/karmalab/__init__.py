"""karmalab: a laboratory for the karma resource-allocation mechanism.

Subpackages cover the deterministic game engine (``core``), the mean-field
equilibrium solver (``equilibrium``), strategy archetypes (``agents``),
batch simulation and baselines (``simulator``), statistics (``stats``),
the live experiment service (``server``), and the command line (``cli``).
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ConfigError,
    EngineError,
    FeeParams,
    GameConfig,
    GameState,
    InvalidBidError,
    RoundRecord,
    Scheme,
    allowed_bids,
    new_game,
    preset,
)
