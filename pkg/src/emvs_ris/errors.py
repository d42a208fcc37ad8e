"""Exception and warning types shared across the package."""


class EmvsRisError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateField(EmvsRisError):
    """Electric or magnetic field block too small to define a propagation direction."""


class DegeneratePolarization(EmvsRisError):
    """A receive-factor column cannot be normalized by its reference entry."""


class IdentifiabilityViolation(EmvsRisError):
    """More targets than receive elements (K > N)."""


class RankDeficiency(EmvsRisError):
    """A matrix that must be inverted is (numerically) rank deficient."""


class IllConditioned(EmvsRisError):
    """A least-squares system in the ALS sweep is too badly conditioned to trust."""


class SingularFim(EmvsRisError):
    """Fisher information matrix is numerically singular."""


class ConfigError(EmvsRisError):
    """Malformed scene or experiment configuration."""


class RankDeficiencyWarning(UserWarning):
    """A factor matrix is numerically rank deficient; PARAFAC may not be unique."""


class ConvergenceFailure(UserWarning):
    """ALS hit its iteration cap before the fit stopped changing."""


class KruskalWarning(UserWarning):
    """The Kruskal uniqueness condition does not hold for the estimated factors."""


class DomainClamp(UserWarning):
    """An arcsin argument fell outside [0, 1] and was clamped."""


class RoundingInstability(UserWarning):
    """Phase-wrap integers were rounded from values close to a half-integer."""


class SolverStall(UserWarning):
    """The SDP interior-point iteration stopped reducing the duality gap."""


class SingularFimWarning(UserWarning):
    """The FIM is numerically singular; pseudo-inverse bounds are reported."""
