"""Exception types shared across the package."""


class MorphwingError(Exception):
    """Base class for all package-specific errors."""


class ModelConfigError(MorphwingError):
    """A parameter set violates a model invariant (bad inertia, unstable
    structure matrix, inconsistent dimensions at construction time)."""


class GimbalLockError(MorphwingError):
    """Euler-angle extraction requested too close to the |pitch| = 90 deg
    singularity."""


class IntegrationBlowupError(MorphwingError):
    """A non-finite value appeared during time integration.

    Carries the time and RK4 stage at which the blowup was detected.
    """

    def __init__(self, t: float, stage: int, message: str = ""):
        self.t = t
        self.stage = stage
        super().__init__(
            message or f"non-finite state derivative at t={t:.6g} s (RK4 stage {stage})"
        )


class SingularInfluenceError(MorphwingError):
    """The lifting-line influence matrix is numerically singular.

    ``pair`` names the two (near-)colliding control points by element index.
    """

    def __init__(self, pair: tuple, message: str = ""):
        self.pair = pair
        super().__init__(
            message
            or f"singular lifting-line influence matrix: control points {pair[0]} and {pair[1]} coincide"
        )


class SolverAbortError(MorphwingError):
    """The NLP solver hit a non-finite callback value.

    Carries the offending iterate so callers can inspect it.
    """

    def __init__(self, x, message: str = ""):
        self.x = x
        super().__init__(message or "non-finite value returned by an NLP callback")
