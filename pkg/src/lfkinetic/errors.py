"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """A configuration or precondition check failed."""


class NoStabilizingSolution(RuntimeError):
    """The quadratic-cost gain recursion diverged or failed to converge."""


class NonConvergenceWarning(UserWarning):
    """An iterative solver hit its iteration cap before reaching tolerance.

    The partially converged result is still returned; callers should check
    the ``converged`` flag and achieved residual on the result object.
    """


class InfeasibleCounts(RuntimeError):
    """Requested collision counts exceed the available sample pool.

    Signals a time step / scaling combination that violates the collision
    frequency bound by more than the stochastic rounding slack.
    """


class EmptyFollowerSet(ValueError):
    """A follower sample set was empty where samples are required."""


class EmptySampleSet(ValueError):
    """A sample array was empty where statistics are requested."""


class PersistFailure(RuntimeError):
    """Writing an output artifact (grid file, CSV, metadata) failed."""
