"""Exception hierarchy. Exit codes follow the CLI contract:
2 usage, 3 data/schema, 4 numerical."""


class PsbartError(Exception):
    exit_code = 1


class SchemaError(PsbartError):
    """Input file structure does not match the declared column roles."""

    exit_code = 3


class ParseError(PsbartError):
    """A cell could not be parsed; message carries the row index."""

    exit_code = 3


class MeshError(PsbartError):
    """A target-covariate value cannot be reconciled to the mesh."""

    exit_code = 3


class DegenerateScaleError(PsbartError):
    """Constant response vector or zero-variance quantity where a scale is needed."""

    exit_code = 3


class LayoutError(PsbartError):
    """Posterior-draw grid does not have the required layout."""

    exit_code = 3


class IntegrityError(PsbartError):
    """Draw files and manifest disagree."""

    exit_code = 3


class IllConditionedError(PsbartError):
    """A linear system could not be factorized even after jitter escalation."""

    exit_code = 4


class IterationError(PsbartError):
    """Numerical failure inside the MCMC loop; message carries the iteration index."""

    exit_code = 4
