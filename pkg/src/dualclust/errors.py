"""Exception types shared across the package."""


class DualclustError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DualclustError, ValueError):
    """Matrix dimensions do not compose for the requested operation."""


class DegenerateInputError(DualclustError, ValueError):
    """Mathematically valid shapes but degenerate content (zero rows,
    zero-mass clusters, batches that cannot be contrasted)."""


class ContractError(DualclustError, ValueError):
    """A caller violated an operation's contract (non-scalar root,
    length mismatch, rows not stochastic, ...)."""


class ConfigError(DualclustError, ValueError):
    """Invalid or unknown configuration value. The message names the
    offending key path."""


class FormatError(DualclustError, ValueError):
    """Malformed input file. The message locates the problem (byte
    offset for binary formats, line number for CSV)."""


class GenerationError(DualclustError, RuntimeError):
    """A synthetic-data generator could not satisfy its constraints."""
