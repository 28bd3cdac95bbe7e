"""Exception types shared across the package."""


class MemsimError(Exception):
    """Base class for all package errors."""


class AdmissibilityViolation(MemsimError):
    """A plate profile dips below the dielectric top (u < -H)."""


class BoundaryConditionViolation(MemsimError):
    """Profile samples are inconsistent with the declared end conditions."""


class GridMismatch(MemsimError):
    """Profile grid and reference grids do not describe the same device."""


class DegenerateGap(MemsimError):
    """Gap floor is non-positive; the vertical map would degenerate."""


class NoConvergence(MemsimError):
    """Iterative linear solve stopped before reaching the target residual."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"linear solve stalled after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )


class NotSolved(MemsimError):
    """A potential field was used before (or without) being solved."""


class TraceMismatch(MemsimError):
    """Boundary traces do not belong to the supplied profile, or the two
    force-density routes disagree where they are required to coincide."""


class FamilyNotMEMS(MemsimError):
    """Boundary family lacks the grounded-bottom / constant-plate structure."""


class MissingGrowthConstants(MemsimError):
    """Boundary family carries no growth constants m1..m3."""


class BCMismatch(MemsimError):
    """A perturbation direction violates the profile's end conditions."""


class InadmissibleTestDirection(MemsimError):
    """A variational-inequality test profile is outside the admissible set."""


class ConfigError(MemsimError):
    """Run configuration is malformed, incomplete, or carries unknown keys."""
