"""Exception types shared across the toolkit."""


class ConfigError(Exception):
    """Run configuration is malformed or violates a module precondition."""


class InfeasibleBounds(Exception):
    """Start or goal state lies outside the transcription box bounds."""


class NumericalBlowup(Exception):
    """Riccati backward pass diverged (unstabilizable linearization or coarse grid)."""


class CholeskyFailure(Exception):
    """A cost-to-go matrix is not positive definite where the sampler needs it."""


class DegenerateSchedule(Exception):
    """Funnel estimation hit a gain schedule it cannot sample from."""


class GoalUnstabilizable(Exception):
    """Goal-region estimation collapsed; the final gain cannot hold the goal."""


class AllCandidatesFailed(Exception):
    """Every candidate in a CMA-ES generation evaluated to +inf fitness."""
