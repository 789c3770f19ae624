from ._flowvi import *  # noqa: F401,F403
from ._flowvi import (
    Model,
    FlowSpec,
    MifFlags,
    NumericDomainError,
    ModelError,
    EstimationError,
)

__version__ = "0.1.0"
