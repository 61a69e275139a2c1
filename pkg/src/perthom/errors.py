"""Exception types shared across the package."""


class FamilyValidityError(ValueError):
    """A coefficient family is invalid, or eta lies outside its validity range."""


class CoercivityError(ValueError):
    """An assembled coefficient field is not uniformly elliptic on the mesh."""


class SolverError(RuntimeError):
    """The linear solver failed to reach the requested tolerance."""


class ConfigError(ValueError):
    """A run configuration failed validation; the message names the field."""
