"""Exception hierarchy shared by the solver, the simulator and the CLI."""


class BailoutError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BailoutError, ValueError):
    """An argument lies outside the domain of the requested function."""


class AssumptionViolation(BailoutError):
    """A model fails one of the standing assumptions of the control problem.

    ``assumption`` names the failing check so that callers (the CLI in
    particular) can report it without parsing the message.
    """

    def __init__(self, assumption, message):
        super().__init__(f"{assumption}: {message}")
        self.assumption = assumption


class NumericalError(BailoutError):
    """A numerical procedure failed; ``diagnostics`` carries whatever trace was collected."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ClassDViolation(NumericalError):
    """A lifted payoff left the admissible class by more than the tolerance."""

    def __init__(self, state, violation, diagnostics=None):
        super().__init__(
            f"lifted payoff of state {state!r} violates concavity/slope bounds by {violation:.3e}",
            diagnostics,
        )
        self.state = state
        self.violation = violation


class SimulationFault(NumericalError):
    """Non-finite accumulator in a simulated path."""

    def __init__(self, path_index, diagnostics=None):
        super().__init__(f"non-finite accumulator on path {path_index}", diagnostics)
        self.path_index = path_index


class UnsupportedModel(BailoutError, NotImplementedError):
    """The requested operation is only implemented for the closed-form families."""
