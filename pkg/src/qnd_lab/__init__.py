"""Noise, disturbance and uncertainty relations for nondemolition
measurements of position X and wave number K = P/hbar, with correlated
probes."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CalibrationError,
    ConfigError,
    DimensionMismatchError,
    GridResolutionError,
    InvalidArgumentError,
    NotUnitaryError,
    QndError,
    SingularPreparationError,
    UndefinedConditionalError,
)
from .moments import (  # noqa: F401
    Couplings,
    CrossCovariances,
    Ordering,
    ProbeMoments,
    Scenario,
    SystemMoments,
    canonicalize,
    check_relations,
    mirror,
    noise_disturbance,
    validate_scenario,
    variances,
)
from .gaussian_prep import ProbePairPreparation, to_scenario, violation_scan  # noqa: F401
