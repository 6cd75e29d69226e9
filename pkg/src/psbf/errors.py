"""Exceptions raised by the filtering engine."""


class ModelError(ValueError):
    """A process model or its file representation is malformed."""


class ZeroMassError(ArithmeticError):
    """An update produced a distribution with zero total mass.

    Raised when an observation is impossible under the propagated belief,
    which indicates an inconsistent model/observation pair.
    """


class InfeasibleError(RuntimeError):
    """A requested computation exceeds a configured enumeration cap."""
