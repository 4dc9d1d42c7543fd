"""Exception hierarchy shared across the package."""


class SbamcError(Exception):
    """Base class for all package-specific errors."""


class ConstructionError(SbamcError):
    """A protocol table is missing an entry, or an action assignment is ambiguous."""


class IntegrityError(SbamcError):
    """Observed faults contradict the adversary's designated faulty set."""


class SchemaError(SbamcError):
    """A scenario file or formula violates the documented schema."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class FormulaError(SchemaError):
    """A formula references agents or values outside the scenario."""
