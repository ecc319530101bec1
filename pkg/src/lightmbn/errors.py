"""Exception types shared across the package.

Each error carries a short machine-readable ``code`` used by the CLI to pick
an exit status and to emit a parsable one-line error record.
"""


class LightMBNError(Exception):
    code = "error"
    exit_status = 1


class DimensionError(LightMBNError, ValueError):
    """Raised when tensor extents are incompatible.

    ``axes`` names the offending axes so the message can point at them.
    """

    code = "dimension"

    def __init__(self, message, axes=()):
        super().__init__(message)
        self.axes = tuple(axes)


class ContractError(LightMBNError, ValueError):
    code = "contract"


class DegenerateBatchError(LightMBNError, ValueError):
    code = "degenerate_batch"


class BatchStructureError(LightMBNError, ValueError):
    code = "batch_structure"


class ConfigError(LightMBNError, ValueError):
    code = "config"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParseError(LightMBNError, ValueError):
    code = "parse"
    exit_status = 2

    def __init__(self, message, text=None):
        super().__init__(message)
        self.text = text


class DataError(LightMBNError, OSError):
    code = "data"
    exit_status = 2


class ValidationError(DataError):
    code = "validation"


class DegenerateEmbeddingError(LightMBNError, ValueError):
    code = "degenerate_embedding"
    exit_status = 3

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NumericError(LightMBNError, FloatingPointError):
    code = "numeric"
    exit_status = 3
