"""Exception hierarchy shared across omniforge modules."""


class OmniforgeError(Exception):
    """Base class for all library errors."""


class DimensionError(OmniforgeError, ValueError):
    """Raster, latent or tensor dimensions violate a contract."""


class DegenerateInputError(OmniforgeError, ValueError):
    """Zero vectors, empty masks and similar inputs with no defined answer."""


class ParameterError(OmniforgeError, ValueError):
    """A configuration value is out of range or infeasible."""


class CoverageError(OmniforgeError, RuntimeError):
    """A stitched pixel received zero total blend weight."""

    def __init__(self, row: int, col: int):
        super().__init__(f"coverage hole at ERP pixel (row={row}, col={col})")
        self.row = row
        self.col = col


class TemplateError(OmniforgeError, KeyError):
    """Instruction template rendering or parsing failed."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ContractError(OmniforgeError, ValueError):
    """A precondition on a record or argument was violated."""


class ClientError(OmniforgeError, RuntimeError):
    """An external service client failed to produce a result."""


class ProtocolError(OmniforgeError, RuntimeError):
    """Malformed frame on the client wire protocol."""


class TrainingError(OmniforgeError, RuntimeError):
    """Training diverged."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
