"""Twin-beam photocount statistics, photon-number reconstruction, and
nonclassicality-depth classification."""

__version__ = "0.1.0"

from . import ann, defaults, io, nonclassicality, photostats, reconstruct  # noqa: F401
from .errors import (DegenerateConditionError, DivergenceError,  # noqa: F401
                     EmptyClassError, InstabilityError, NonclsError,
                     TruncationError, ValidationError)
